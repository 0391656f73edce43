use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("anchor coverage unsatisfiable: {0}")]
    CoverageUnsatisfiable(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("non-finite activation in layer {layer} ({site})")]
    NonFiniteActivation { layer: usize, site: &'static str },

    #[error("non-finite update in tensor `{0}`")]
    NonFiniteUpdate(String),

    #[error("step {t} outside schedule horizon [0, {total})")]
    StepOutOfRange { t: usize, total: usize },

    #[error("degenerate Gram matrix: {0}")]
    DegenerateGram(String),

    #[error("dimension guard exceeded: {0}")]
    DimensionGuard(String),

    #[error("rate fit failed: {0}")]
    FitFailed(String),

    #[error("budget {budget} not representable over width {width}")]
    NonRepresentableBudget { budget: f64, width: usize },

    #[error("schema mismatch in {path}: expected `{expected}`, found `{found}`")]
    Schema {
        path: PathBuf,
        expected: String,
        found: String,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("unknown tensor `{0}`")]
    UnknownTensor(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
