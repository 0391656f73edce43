use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::transformer::{DecayMask, ModelParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    AdamW,
    Sgd,
}

/// How λ_t enters the update.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayMode {
    /// `θ ← θ − η·ĝ − η·λ_t·θ` on masked tensors, outside the moment
    /// accumulators.
    Decoupled,
    /// `λ_t·θ` added to the raw gradient of masked tensors before the
    /// optimizer sees it (the gradient of `½λ_t‖θ‖²`).
    CoupledL2,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptConfig {
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub total_steps: usize,
    pub decay_mode: DecayMode,
}

impl OptConfig {
    /// AdamW, η = 3e-3, β = (0.9, 0.98), batch 128.
    pub fn adamw(total_steps: usize) -> Self {
        OptConfig {
            optimizer: OptimizerKind::AdamW,
            lr: 3e-3,
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-8,
            momentum: 0.0,
            batch_size: 128,
            total_steps,
            decay_mode: DecayMode::CoupledL2,
        }
    }

    /// SGD with momentum, η = 0.1, μ = 0.9, batch 128.
    pub fn sgd(total_steps: usize) -> Self {
        OptConfig {
            optimizer: OptimizerKind::Sgd,
            lr: 0.1,
            momentum: 0.9,
            ..OptConfig::adamw(total_steps)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate {} must be > 0", self.lr));
        }
        for (name, b) in [
            ("beta1", self.beta1),
            ("beta2", self.beta2),
            ("momentum", self.momentum),
        ] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} = {b} outside [0, 1)"));
            }
        }
        if !(self.eps > 0.0) {
            return bad(format!("eps = {} must be > 0", self.eps));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be ≥ 1".into());
        }
        Ok(())
    }
}

/// Moment buffers mirror the parameter layout; SGD uses `first` as velocity.
#[derive(Clone, Debug, PartialEq)]
pub struct OptState {
    pub t: usize,
    pub first: ModelParams,
    pub second: ModelParams,
}

impl OptState {
    pub fn new(params: &ModelParams) -> Self {
        OptState {
            t: 0,
            first: params.zeros_like(),
            second: params.zeros_like(),
        }
    }
}

/// One optimizer update in place.
pub fn step(
    params: &mut ModelParams,
    state: &mut OptState,
    grads: &ModelParams,
    lambda_t: f64,
    mask: &DecayMask,
    cfg: &OptConfig,
) -> Result<()> {
    state.t += 1;
    let t = state.t as f64;
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let bc1 = 1.0 - b1.powf(t);
    let bc2 = 1.0 - b2.powf(t);
    let lr = cfg.lr;

    let grads = grads.tensors();
    let mut firsts = state.first.tensors_mut();
    let mut seconds = state.second.tensors_mut();
    for (i, (name, theta)) in params.tensors_mut().into_iter().enumerate() {
        let g = &grads[i].1.data;
        let decayed = lambda_t != 0.0 && mask.is_decayed(&name);
        let coupled = if decayed && cfg.decay_mode == DecayMode::CoupledL2 {
            lambda_t
        } else {
            0.0
        };
        let decoupled = if decayed && cfg.decay_mode == DecayMode::Decoupled {
            lr * lambda_t
        } else {
            0.0
        };
        let m = &mut firsts[i].1.data;
        match cfg.optimizer {
            OptimizerKind::AdamW => {
                let v = &mut seconds[i].1.data;
                for j in 0..theta.data.len() {
                    let th = theta.data[j];
                    let gj = g[j] + coupled * th;
                    m[j] = b1 * m[j] + (1.0 - b1) * gj;
                    v[j] = b2 * v[j] + (1.0 - b2) * gj * gj;
                    let update = (m[j] / bc1) / ((v[j] / bc2).sqrt() + cfg.eps);
                    theta.data[j] = th - lr * update - decoupled * th;
                }
            }
            OptimizerKind::Sgd => {
                for j in 0..theta.data.len() {
                    let th = theta.data[j];
                    let gj = g[j] + coupled * th;
                    m[j] = cfg.momentum * m[j] + gj;
                    theta.data[j] = th - lr * m[j] - decoupled * th;
                }
            }
        }
        if !theta.is_finite() {
            return Err(Error::NonFiniteUpdate(name));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transformer::{init_params, Arch};

    fn arch() -> Arch {
        Arch {
            n_layers: 2,
            d_model: 4,
            n_heads: 2,
            mlp_mult: 2,
            vocab: 5,
            seq_len: 3,
            init_scale: 1.0,
        }
    }

    #[test]
    fn geometric_decay_under_zero_gradient() {
        for kind in [OptimizerKind::AdamW, OptimizerKind::Sgd] {
            let mut cfg = OptConfig::adamw(100);
            cfg.optimizer = kind;
            cfg.decay_mode = DecayMode::Decoupled;
            let mut p = init_params(&arch(), 1).unwrap();
            let p0 = p.clone();
            let zero = p.zeros_like();
            let mask = DecayMask::standard(&p);
            let mut st = OptState::new(&p);
            let (lam, n) = (0.5, 40);
            for _ in 0..n {
                step(&mut p, &mut st, &zero, lam, &mask, &cfg).unwrap();
            }
            let factor = (1.0 - cfg.lr * lam).powi(n);
            let w0 = p0.get("layers.0.attn.wq").unwrap().data[3];
            let w = p.get("layers.0.attn.wq").unwrap().data[3];
            assert!((w - w0 * factor).abs() < 1e-14 * w0.abs().max(1.0), "{kind:?}");
            assert_eq!(p.get("tok_emb").unwrap(), p0.get("tok_emb").unwrap());
            assert_eq!(
                p.get("layers.1.ln2.gain").unwrap(),
                p0.get("layers.1.ln2.gain").unwrap()
            );
            // Outside a window (λ = 0) nothing moves.
            let frozen = p.clone();
            step(&mut p, &mut st, &zero, 0.0, &mask, &cfg).unwrap();
            assert_eq!(p, frozen);
        }
    }

    #[test]
    fn coupled_l2_is_gradient_of_penalty() {
        // With decay folded into the gradient, SGD without momentum gives
        // θ ← θ(1 − ηλ) on masked tensors for zero data gradient.
        let mut cfg = OptConfig::sgd(10);
        cfg.momentum = 0.0;
        let mut p = init_params(&arch(), 2).unwrap();
        let p0 = p.clone();
        let zero = p.zeros_like();
        let mask = DecayMask::standard(&p);
        let mut st = OptState::new(&p);
        step(&mut p, &mut st, &zero, 0.3, &mask, &cfg).unwrap();
        let a = p0.get("head.w").unwrap().data[0];
        let b = p.get("head.w").unwrap().data[0];
        assert!((b - a * (1.0 - 0.1 * 0.3)).abs() < 1e-15);
        assert_eq!(p.get("pos_emb").unwrap(), p0.get("pos_emb").unwrap());
    }

    #[test]
    fn adam_first_step_is_signed_lr() {
        let cfg = OptConfig::adamw(10);
        let mut p = init_params(&arch(), 3).unwrap();
        let p0 = p.clone();
        let mut g = p.zeros_like();
        g.head.data[0] = 2.0;
        g.head.data[1] = -0.5;
        let mask = DecayMask::standard(&p);
        let mut st = OptState::new(&p);
        step(&mut p, &mut st, &g, 0.0, &mask, &cfg).unwrap();
        let d0 = p.head.data[0] - p0.head.data[0];
        let d1 = p.head.data[1] - p0.head.data[1];
        assert!((d0 + 3e-3).abs() < 1e-9 && (d1 - 3e-3).abs() < 1e-9);
    }

    #[test]
    fn non_finite_update_names_tensor() {
        let cfg = OptConfig::sgd(10);
        let mut p = init_params(&arch(), 3).unwrap();
        let mut g = p.zeros_like();
        g.layers[1].w_in.data[0] = f64::INFINITY;
        let mask = DecayMask::standard(&p);
        let mut st = OptState::new(&p);
        match step(&mut p, &mut st, &g, 0.0, &mask, &cfg) {
            Err(Error::NonFiniteUpdate(name)) => assert_eq!(name, "layers.1.mlp.w_in"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn config_validation() {
        let mut c = OptConfig::adamw(1);
        assert!(c.validate().is_ok());
        c.beta2 = 1.0;
        assert!(c.validate().is_err());
        let mut s = OptConfig::sgd(1);
        s.lr = 0.0;
        assert!(s.validate().is_err());
    }
}
