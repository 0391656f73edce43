use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::rng::{stream, Stream};

pub const CHECKPOINT_SCHEMA: &str = "critwin-checkpoint/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Arch {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub mlp_mult: usize,
    pub vocab: usize,
    pub seq_len: usize,
    pub init_scale: f64,
}

impl Arch {
    /// Two pre-norm layers, d = 64, two heads, 4d MLP, three-token inputs.
    pub fn reference(vocab: usize, init_scale: f64) -> Self {
        Arch {
            n_layers: 2,
            d_model: 64,
            n_heads: 2,
            mlp_mult: 4,
            vocab,
            seq_len: 3,
            init_scale,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn hidden(&self) -> usize {
        self.mlp_mult * self.d_model
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.n_layers == 0 {
            return bad("n_layers must be ≥ 1".into());
        }
        if self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return bad(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.seq_len == 0 || self.vocab == 0 || self.mlp_mult == 0 {
            return bad("seq_len, vocab and mlp_mult must be ≥ 1".into());
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return bad(format!("init_scale {} must be finite and ≥ 0", self.init_scale));
        }
        Ok(())
    }
}

/// Weights are stored input-major: a linear map is `y = x·W + b` with
/// `W` of shape `d_in × d_out`. Biases are `1 × d_out`.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    pub ln1_gain: Mat,
    pub ln1_bias: Mat,
    pub wq: Mat,
    pub bq: Mat,
    pub wk: Mat,
    pub bk: Mat,
    pub wv: Mat,
    pub bv: Mat,
    pub wo: Mat,
    pub bo: Mat,
    pub ln2_gain: Mat,
    pub ln2_bias: Mat,
    pub w_in: Mat,
    pub b_in: Mat,
    pub w_out: Mat,
    pub b_out: Mat,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub arch: Arch,
    pub tok_emb: Mat,
    pub pos_emb: Mat,
    pub layers: Vec<LayerParams>,
    pub lnf_gain: Mat,
    pub lnf_bias: Mat,
    pub head: Mat,
    pub head_bias: Mat,
}

const LAYER_TENSORS: [&str; 16] = [
    "ln1.gain",
    "ln1.bias",
    "attn.wq",
    "attn.bq",
    "attn.wk",
    "attn.bk",
    "attn.wv",
    "attn.bv",
    "attn.wo",
    "attn.bo",
    "ln2.gain",
    "ln2.bias",
    "mlp.w_in",
    "mlp.b_in",
    "mlp.w_out",
    "mlp.b_out",
];

/// Names of the tensors that weight decay acts on by default.
fn default_decayed(name: &str) -> bool {
    const SUFFIXES: [&str; 6] = ["attn.wq", "attn.wk", "attn.wv", "attn.wo", "mlp.w_in", "mlp.w_out"];
    name == "head.w" || SUFFIXES.iter().any(|s| name.ends_with(s))
}

impl LayerParams {
    fn zeros(d: usize, f: usize) -> Self {
        LayerParams {
            ln1_gain: Mat::filled(1, d, 1.0),
            ln1_bias: Mat::zeros(1, d),
            wq: Mat::zeros(d, d),
            bq: Mat::zeros(1, d),
            wk: Mat::zeros(d, d),
            bk: Mat::zeros(1, d),
            wv: Mat::zeros(d, d),
            bv: Mat::zeros(1, d),
            wo: Mat::zeros(d, d),
            bo: Mat::zeros(1, d),
            ln2_gain: Mat::filled(1, d, 1.0),
            ln2_bias: Mat::zeros(1, d),
            w_in: Mat::zeros(d, f),
            b_in: Mat::zeros(1, f),
            w_out: Mat::zeros(f, d),
            b_out: Mat::zeros(1, d),
        }
    }

    fn tensors(&self) -> [&Mat; 16] {
        [
            &self.ln1_gain,
            &self.ln1_bias,
            &self.wq,
            &self.bq,
            &self.wk,
            &self.bk,
            &self.wv,
            &self.bv,
            &self.wo,
            &self.bo,
            &self.ln2_gain,
            &self.ln2_bias,
            &self.w_in,
            &self.b_in,
            &self.w_out,
            &self.b_out,
        ]
    }

    fn tensors_mut(&mut self) -> [&mut Mat; 16] {
        [
            &mut self.ln1_gain,
            &mut self.ln1_bias,
            &mut self.wq,
            &mut self.bq,
            &mut self.wk,
            &mut self.bk,
            &mut self.wv,
            &mut self.bv,
            &mut self.wo,
            &mut self.bo,
            &mut self.ln2_gain,
            &mut self.ln2_bias,
            &mut self.w_in,
            &mut self.b_in,
            &mut self.w_out,
            &mut self.b_out,
        ]
    }
}

impl ModelParams {
    /// Layer-norm gains one, everything else zero.
    pub fn zeros(arch: &Arch) -> Self {
        let (d, v, s, f) = (arch.d_model, arch.vocab, arch.seq_len, arch.hidden());
        ModelParams {
            arch: arch.clone(),
            tok_emb: Mat::zeros(v, d),
            pos_emb: Mat::zeros(s, d),
            layers: (0..arch.n_layers).map(|_| LayerParams::zeros(d, f)).collect(),
            lnf_gain: Mat::filled(1, d, 1.0),
            lnf_bias: Mat::zeros(1, d),
            head: Mat::zeros(d, v),
            head_bias: Mat::zeros(1, v),
        }
    }

    /// Same shapes, every entry zero (gradient / optimizer-state layout).
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, t) in z.tensors_mut() {
            t.data.iter_mut().for_each(|x| *x = 0.0);
        }
        z
    }

    /// Stable tensor names in canonical order.
    pub fn names(&self) -> Vec<String> {
        let mut out = vec!["tok_emb".to_string(), "pos_emb".to_string()];
        for l in 0..self.layers.len() {
            out.extend(LAYER_TENSORS.iter().map(|t| format!("layers.{l}.{t}")));
        }
        out.extend(["ln_f.gain", "ln_f.bias", "head.w", "head.b"].map(String::from));
        out
    }

    pub fn tensors(&self) -> Vec<(String, &Mat)> {
        let mut refs: Vec<&Mat> = vec![&self.tok_emb, &self.pos_emb];
        for layer in &self.layers {
            refs.extend(layer.tensors());
        }
        refs.extend([&self.lnf_gain, &self.lnf_bias, &self.head, &self.head_bias]);
        self.names().into_iter().zip(refs).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Mat)> {
        let names = self.names();
        let mut refs: Vec<&mut Mat> = vec![&mut self.tok_emb, &mut self.pos_emb];
        for layer in &mut self.layers {
            refs.extend(layer.tensors_mut());
        }
        refs.extend([
            &mut self.lnf_gain,
            &mut self.lnf_bias,
            &mut self.head,
            &mut self.head_bias,
        ]);
        names.into_iter().zip(refs).collect()
    }

    pub fn get(&self, name: &str) -> Result<&Mat> {
        self.tensors()
            .into_iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::UnknownTensor(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Mat> {
        self.tensors_mut()
            .into_iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::UnknownTensor(name.to_string()))
    }

    pub fn n_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.data.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.is_finite())
    }

    pub fn scale(&mut self, s: f64) {
        for (_, t) in self.tensors_mut() {
            t.data.iter_mut().for_each(|x| *x *= s);
        }
    }

    pub fn save(&self, path: &Path, step: usize) -> Result<()> {
        let file = CheckpointFile {
            schema: CHECKPOINT_SCHEMA.to_string(),
            step,
            arch: self.arch.clone(),
            tensors: self
                .tensors()
                .into_iter()
                .map(|(name, t)| NamedTensor {
                    name,
                    shape: [t.rows, t.cols],
                    data: t.data.clone(),
                })
                .collect(),
        };
        std::fs::write(path, serde_json::to_string(&file)?)?;
        Ok(())
    }

    /// Returns the parameters and the step recorded in the checkpoint.
    pub fn load(path: &Path) -> Result<(ModelParams, usize)> {
        let file: CheckpointFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if file.schema != CHECKPOINT_SCHEMA {
            return Err(Error::Schema {
                path: path.to_path_buf(),
                expected: CHECKPOINT_SCHEMA.into(),
                found: file.schema,
            });
        }
        file.arch.validate()?;
        let mut params = ModelParams::zeros(&file.arch);
        let mut seen = BTreeSet::new();
        for t in file.tensors {
            let dst = params.get_mut(&t.name)?;
            if [dst.rows, dst.cols] != t.shape || t.data.len() != dst.data.len() {
                return Err(Error::Parse(format!(
                    "tensor `{}` has shape {:?}, expected {:?}",
                    t.name,
                    t.shape,
                    [dst.rows, dst.cols]
                )));
            }
            dst.data = t.data;
            seen.insert(t.name);
        }
        if let Some(missing) = params.names().into_iter().find(|n| !seen.contains(n)) {
            return Err(Error::Parse(format!("checkpoint lacks tensor `{missing}`")));
        }
        Ok((params, file.step))
    }
}

#[derive(Serialize, Deserialize)]
struct NamedTensor {
    name: String,
    shape: [usize; 2],
    data: Vec<f64>,
}

/// On-disk checkpoint: JSON object with `schema`, `step`, `arch` and a list
/// of `{name, shape, data}` tensors (row-major).
#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    schema: String,
    step: usize,
    arch: Arch,
    tensors: Vec<NamedTensor>,
}

/// Which tensors receive weight decay.
#[derive(Clone, Debug, PartialEq)]
pub struct DecayMask {
    decayed: BTreeSet<String>,
}

impl DecayMask {
    /// Attention, MLP and readout weight matrices. Embeddings, layer-norm
    /// parameters and biases are excluded.
    pub fn standard(params: &ModelParams) -> Self {
        DecayMask {
            decayed: params.names().into_iter().filter(|n| default_decayed(n)).collect(),
        }
    }

    pub fn from_names<I: IntoIterator<Item = String>>(names: I) -> Self {
        DecayMask {
            decayed: names.into_iter().collect(),
        }
    }

    pub fn is_decayed(&self, name: &str) -> bool {
        self.decayed.contains(name)
    }

    pub fn decayed(&self) -> impl Iterator<Item = &str> {
        self.decayed.iter().map(String::as_str)
    }
}

/// Weight matrices ~ N(0, γ²/d_in), embeddings ~ N(0, γ²/d), biases zero,
/// layer-norm gains one.
pub fn init_params(arch: &Arch, seed: u64) -> Result<ModelParams> {
    arch.validate()?;
    let mut rng = stream(seed, Stream::Init);
    let g = arch.init_scale;
    let d = arch.d_model as f64;
    let f = arch.hidden() as f64;
    let mut p = ModelParams::zeros(arch);
    let mut fill = |m: &mut Mat, fan_in: f64| {
        *m = Mat::randn(m.rows, m.cols, g / fan_in.sqrt(), &mut rng);
    };
    fill(&mut p.tok_emb, d);
    fill(&mut p.pos_emb, d);
    for layer in &mut p.layers {
        fill(&mut layer.wq, d);
        fill(&mut layer.wk, d);
        fill(&mut layer.wv, d);
        fill(&mut layer.wo, d);
        fill(&mut layer.w_in, d);
        fill(&mut layer.w_out, f);
    }
    fill(&mut p.head, d);
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Arch {
        Arch {
            n_layers: 2,
            d_model: 8,
            n_heads: 2,
            mlp_mult: 4,
            vocab: 10,
            seq_len: 3,
            init_scale: 0.8,
        }
    }

    #[test]
    fn names_are_unique_and_total() {
        let p = init_params(&small(), 0).unwrap();
        let names = p.names();
        let set: BTreeSet<_> = names.iter().collect();
        assert_eq!(set.len(), names.len());
        assert_eq!(names.len(), 2 + 16 * 2 + 4);
        assert_eq!(p.tensors().len(), names.len());
    }

    #[test]
    fn mask_excludes_embeddings_norms_biases() {
        let p = init_params(&small(), 0).unwrap();
        let mask = DecayMask::standard(&p);
        assert!(!mask.is_decayed("tok_emb"));
        assert!(!mask.is_decayed("pos_emb"));
        assert!(!mask.is_decayed("layers.0.ln1.gain"));
        assert!(!mask.is_decayed("layers.1.attn.bq"));
        assert!(mask.is_decayed("layers.1.attn.wv"));
        assert!(mask.is_decayed("layers.0.mlp.w_out"));
        assert!(mask.is_decayed("head.w"));
        assert_eq!(mask.decayed().count(), 2 * 6 + 1);
    }

    #[test]
    fn zero_scale_gives_zero_weights() {
        let mut a = small();
        a.init_scale = 0.0;
        let p = init_params(&a, 3).unwrap();
        for (name, t) in p.tensors() {
            let want = if name.ends_with("gain") { 1.0 } else { 0.0 };
            assert!(t.data.iter().all(|&x| x == want), "{name}");
        }
    }

    #[test]
    fn init_variance_matches_fan_in() {
        let arch = Arch {
            n_layers: 13,
            ..Arch::reference(24, 0.8)
        };
        let p = init_params(&arch, 1).unwrap();
        let xs: Vec<f64> = p.layers.iter().flat_map(|l| l.wq.data.iter().copied()).collect();
        assert!(xs.len() >= 50_000);
        let var = xs.iter().map(|x| x * x).sum::<f64>() / xs.len() as f64;
        assert!((var / 0.01 - 1.0).abs() < 0.05, "var {var}");
        let ys: Vec<f64> = p.layers.iter().flat_map(|l| l.w_out.data.iter().copied()).collect();
        let var_out = ys.iter().map(|x| x * x).sum::<f64>() / ys.len() as f64;
        assert!((var_out / (0.64 / 256.0) - 1.0).abs() < 0.05, "var {var_out}");
    }

    #[test]
    fn init_is_deterministic() {
        assert_eq!(init_params(&small(), 9).unwrap(), init_params(&small(), 9).unwrap());
        assert_ne!(init_params(&small(), 9).unwrap(), init_params(&small(), 10).unwrap());
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let p = init_params(&small(), 4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        p.save(&path, 17).unwrap();
        let (q, step) = ModelParams::load(&path).unwrap();
        assert_eq!(step, 17);
        assert_eq!(p, q);
    }

    #[test]
    fn invalid_arch_rejected() {
        let mut a = small();
        a.n_heads = 3;
        assert!(init_params(&a, 0).is_err());
    }
}
