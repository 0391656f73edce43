//! Critical-window laboratory.
//!
//! An anchor-function composition task, a small pre-norm transformer trained
//! with time-localized weight decay, weight-space order parameters, and a
//! stylized linear-attention model whose gradient flow predicts when
//! regularization matters.

// `!(x > 0.0)` style checks deliberately reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diagnostics;
pub mod error;
pub mod experiments;
pub mod gradcheck;
pub mod linalg;
pub mod rng;
pub mod task;
pub mod theory;
pub mod training;
pub mod transformer;

pub use error::{Error, Result};
