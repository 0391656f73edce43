//! Declarative training settings read from a TOML file.
//!
//! Every field is optional; omitted fields take the reference defaults
//! (two layers, d = 64, two heads, AdamW at η = 3e-3, 20000 steps, γ = 0.8).
//!
//! ```toml
//! init_scale = 0.8
//! total_steps = 20000
//! optimizer = "adamw"
//! decay_mode = "coupled_l2"
//! ```

use serde::{Deserialize, Serialize};

use crate::diagnostics::DEFAULT_BRIDGE_K;
use crate::error::{Error, Result};
use crate::transformer::Arch;

use super::optim::{DecayMode, OptConfig, OptimizerKind};
use super::run::{TrainConfig, DEFAULT_CHECKPOINT_EVERY};
use super::schedule::WdSchedule;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub init_scale: f64,
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub mlp_mult: usize,
    pub optimizer: OptimizerKind,
    /// Defaults to the optimizer's reference learning rate.
    pub lr: Option<f64>,
    pub batch_size: usize,
    pub total_steps: usize,
    pub decay_mode: DecayMode,
    pub checkpoint_every: usize,
    pub bridge_k: usize,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            init_scale: 0.8,
            n_layers: 2,
            d_model: 64,
            n_heads: 2,
            mlp_mult: 4,
            optimizer: OptimizerKind::AdamW,
            lr: None,
            batch_size: 128,
            total_steps: 20_000,
            decay_mode: DecayMode::CoupledL2,
            checkpoint_every: DEFAULT_CHECKPOINT_EVERY,
            bridge_k: DEFAULT_BRIDGE_K,
        }
    }
}

impl TrainSettings {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    /// Full run configuration for a task with `vocab` tokens.
    pub fn config(&self, vocab: usize, schedule: WdSchedule, seed: u64) -> Result<TrainConfig> {
        let arch = Arch {
            n_layers: self.n_layers,
            d_model: self.d_model,
            n_heads: self.n_heads,
            mlp_mult: self.mlp_mult,
            ..Arch::reference(vocab, self.init_scale)
        };
        let mut opt = match self.optimizer {
            OptimizerKind::AdamW => OptConfig::adamw(self.total_steps),
            OptimizerKind::Sgd => OptConfig::sgd(self.total_steps),
        };
        if let Some(lr) = self.lr {
            opt.lr = lr;
        }
        opt.batch_size = self.batch_size;
        opt.decay_mode = self.decay_mode;
        let mut cfg = TrainConfig::new(arch, opt, schedule, seed);
        cfg.checkpoint_every = self.checkpoint_every;
        cfg.bridge_k = self.bridge_k;
        cfg.validate()?;
        Ok(cfg)
    }
}
