//! Weight-space order parameters: condensation index, bridge alignment,
//! weight norm.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{left_singular, singular_values, Mat};
use crate::transformer::ModelParams;

pub const DEFAULT_BRIDGE_K: usize = 8;

/// `(Σσ)² / Σσ²`, and whether `w` was all zeros (then defined as 1).
pub fn participation_ratio_flagged(w: &Mat) -> (f64, bool) {
    let s = singular_values(w);
    let sum: f64 = s.iter().sum();
    let sum_sq: f64 = s.iter().map(|x| x * x).sum();
    if sum_sq == 0.0 || !sum_sq.is_finite() {
        return (1.0, true);
    }
    (sum * sum / sum_sq, false)
}

pub fn participation_ratio(w: &Mat) -> f64 {
    participation_ratio_flagged(w).0
}

/// Value matrix of layer `l` as a map on column vectors (`d_out × d_in`).
pub fn value_matrix(params: &ModelParams, l: usize) -> Mat {
    params.layers[l].wv.transpose()
}

/// Per-layer PR of the value matrices and their mean.
pub fn condensation_index(params: &ModelParams) -> (f64, Vec<f64>, bool) {
    let mut degenerate = false;
    let prs: Vec<f64> = (0..params.layers.len())
        .map(|l| {
            let (pr, flag) = participation_ratio_flagged(&params.layers[l].wv);
            degenerate |= flag;
            pr
        })
        .collect();
    let c = prs.iter().sum::<f64>() / prs.len().max(1) as f64;
    (c, prs, degenerate)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bridge {
    pub value: f64,
    pub k_requested: usize,
    pub k_used: usize,
    /// True when `k` exceeded the numerical rank of either circuit.
    pub reduced: bool,
}

fn numerical_rank(s: &[f64], rows: usize, cols: usize) -> usize {
    let top = s.first().copied().unwrap_or(0.0);
    if top == 0.0 {
        return 0;
    }
    let tol = top * rows.max(cols) as f64 * f64::EPSILON;
    s.iter().filter(|&&x| x > tol).count()
}

/// `trace(P₁P₂)/k` for projectors onto the leading-k left singular
/// subspaces of two matrices.
pub fn subspace_overlap(a: &Mat, b: &Mat, k: usize) -> Result<Bridge> {
    if a.rows != b.rows {
        return Err(Error::InvalidConfig("circuits act on different spaces".into()));
    }
    if k == 0 || k > a.rows {
        return Err(Error::InvalidConfig(format!("k = {k} outside [1, {}]", a.rows)));
    }
    let (ua, sa) = left_singular(a);
    let (ub, sb) = left_singular(b);
    let rank = numerical_rank(&sa, a.rows, a.cols).min(numerical_rank(&sb, b.rows, b.cols));
    let k_used = k.min(rank);
    if k_used == 0 {
        return Ok(Bridge {
            value: 0.0,
            k_requested: k,
            k_used,
            reduced: true,
        });
    }
    // trace(P₁P₂) = ‖U₁ᵀU₂‖_F² over the leading k columns.
    let mut acc = 0.0;
    for i in 0..k_used {
        for j in 0..k_used {
            let dot: f64 = (0..a.rows).map(|r| ua[(r, i)] * ub[(r, j)]).sum();
            acc += dot * dot;
        }
    }
    Ok(Bridge {
        value: (acc / k_used as f64).clamp(0.0, 1.0),
        k_requested: k,
        k_used,
        reduced: k_used < k,
    })
}

/// Overlap between layer 1's OV circuit `W_O W_V` and layer 2's QK circuit
/// `W_Qᵀ W_K`, both written as maps on column vectors.
pub fn bridge_alignment(params: &ModelParams, k: usize) -> Result<Bridge> {
    if params.layers.len() < 2 {
        return Err(Error::InvalidConfig("bridge alignment needs ≥ 2 layers".into()));
    }
    let l1 = &params.layers[0];
    let l2 = &params.layers[1];
    // Storage is input-major (y = x·W), so the column-vector maps are Wᵀ.
    let ov = l1.wv.matmul(&l1.wo).transpose();
    let qk = l2.wq.matmul(&l2.wk.transpose());
    subspace_overlap(&ov, &qk, k)
}

pub fn weight_norm(params: &ModelParams) -> f64 {
    params.tensors().iter().map(|(_, t)| t.frobenius_sq()).sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsRecord {
    pub condensation: f64,
    pub layer_pr: Vec<f64>,
    pub pr_degenerate: bool,
    pub bridge: Option<Bridge>,
    pub weight_norm: f64,
}

pub fn diagnose(params: &ModelParams, k: usize) -> Result<DiagnosticsRecord> {
    let (condensation, layer_pr, pr_degenerate) = condensation_index(params);
    let bridge = if params.layers.len() >= 2 {
        Some(bridge_alignment(params, k)?)
    } else {
        None
    };
    Ok(DiagnosticsRecord {
        condensation,
        layer_pr,
        pr_degenerate,
        bridge,
        weight_norm: weight_norm(params),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CondensationBand {
    pub lower: f64,
    pub upper: f64,
}

impl Default for CondensationBand {
    fn default() -> Self {
        CondensationBand {
            lower: 28.0,
            upper: 36.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BandVerdict {
    Below,
    Inside,
    Above,
}

/// Categorical reading of C at 20% of training. Not monotone: both sides of
/// the band predict failure (over-regularized below, memorizing above).
pub fn classify_band(c: f64, band: CondensationBand) -> BandVerdict {
    if c < band.lower {
        BandVerdict::Below
    } else if c > band.upper {
        BandVerdict::Above
    } else {
        BandVerdict::Inside
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};
    use crate::transformer::{init_params, Arch};
    use proptest::prelude::*;

    fn diag(s: &[f64]) -> Mat {
        let mut m = Mat::zeros(s.len(), s.len());
        for (i, &v) in s.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    fn orthogonal(n: usize, seed: u64) -> Mat {
        let g = Mat::randn(n, n, 1.0, &mut stream(seed, Stream::Init));
        let qr = g.to_nalgebra().qr();
        Mat::from_nalgebra(&qr.q())
    }

    #[test]
    fn pr_reference_values() {
        assert!((participation_ratio(&Mat::identity(64)) - 64.0).abs() < 1e-10);
        let u = Mat::randn(10, 1, 1.0, &mut stream(1, Stream::Init));
        let v = Mat::randn(1, 7, 1.0, &mut stream(2, Stream::Init));
        assert!((participation_ratio(&u.matmul(&v)) - 1.0).abs() < 1e-10);
        assert!((participation_ratio(&diag(&[2.0, 1.0, 1.0])) - 16.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn pr_of_zero_is_flagged_one() {
        assert_eq!(participation_ratio_flagged(&Mat::zeros(4, 4)), (1.0, true));
    }

    #[test]
    fn condensation_is_mean_over_layers() {
        let mut p = init_params(&Arch::reference(24, 0.8), 0).unwrap();
        p.layers[0].wv = Mat::identity(64);
        p.layers[1].wv = Mat::identity(64);
        assert!((condensation_index(&p).0 - 64.0).abs() < 1e-10);
        let mut a = vec![1.0; 30];
        a.extend(vec![0.0; 34]);
        p.layers[0].wv = diag(&a);
        let mut b = vec![1.0; 34];
        b.extend(vec![0.0; 30]);
        p.layers[1].wv = diag(&b);
        let (c, prs, _) = condensation_index(&p);
        assert!((prs[0] - 30.0).abs() < 1e-9 && (prs[1] - 34.0).abs() < 1e-9);
        assert!((c - 32.0).abs() < 1e-9);
    }

    #[test]
    fn overlap_identical_and_orthogonal() {
        let q = orthogonal(16, 5);
        let mut first = Mat::zeros(16, 16);
        let mut second = Mat::zeros(16, 16);
        for c in 0..4 {
            for r in 0..16 {
                first[(r, c)] = q[(r, c)] * (4 - c) as f64;
                second[(r, c)] = q[(r, c + 4)] * (4 - c) as f64;
            }
        }
        let same = subspace_overlap(&first, &first, 4).unwrap();
        assert!((same.value - 1.0).abs() < 1e-10 && !same.reduced);
        let orth = subspace_overlap(&first, &second, 4).unwrap();
        assert!(orth.value.abs() < 1e-10);
        let reduced = subspace_overlap(&first, &first, 8).unwrap();
        assert!(reduced.reduced && reduced.k_used == 4);
        assert!((reduced.value - 1.0).abs() < 1e-10);
    }

    #[test]
    fn random_circuits_overlap_near_k_over_d() {
        let mut rng = stream(11, Stream::Init);
        let n = 120;
        let mean: f64 = (0..n)
            .map(|_| {
                let a = Mat::randn(64, 64, 1.0, &mut rng);
                let b = Mat::randn(64, 64, 1.0, &mut rng);
                subspace_overlap(&a, &b, 8).unwrap().value
            })
            .sum::<f64>()
            / n as f64;
        assert!((mean - 0.125).abs() < 0.015, "mean {mean}");
    }

    #[test]
    fn bridge_needs_two_layers() {
        let arch = Arch {
            n_layers: 1,
            ..Arch::reference(24, 0.8)
        };
        let p = init_params(&arch, 0).unwrap();
        assert!(bridge_alignment(&p, 8).is_err());
        let p2 = init_params(&Arch::reference(24, 0.8), 0).unwrap();
        assert!(bridge_alignment(&p2, 0).is_err());
        assert!(bridge_alignment(&p2, 65).is_err());
    }

    #[test]
    fn weight_norm_cases() {
        let p = init_params(&Arch::reference(24, 0.8), 0).unwrap();
        assert_eq!(weight_norm(&p.zeros_like()), 0.0);
        let mut q = p.clone();
        q.scale(2.0);
        assert!((weight_norm(&q) - 4.0 * weight_norm(&p)).abs() < 1e-9 * weight_norm(&q));
        let mut z = p.zeros_like();
        z.head_bias = Mat::filled(2, 3, 1.0);
        assert_eq!(weight_norm(&z), 6.0);
    }

    #[test]
    fn band_verdicts() {
        let band = CondensationBand::default();
        assert_eq!(classify_band(32.5, band), BandVerdict::Inside);
        assert_eq!(classify_band(42.4, band), BandVerdict::Above);
        assert_eq!(classify_band(21.6, band), BandVerdict::Below);
    }

    #[test]
    fn diagnostics_are_pure() {
        let p = init_params(&Arch::reference(24, 0.8), 3).unwrap();
        let before = p.clone();
        let a = diagnose(&p, 8).unwrap();
        let b = diagnose(&p, 8).unwrap();
        assert_eq!(a, b);
        assert_eq!(p, before);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn pr_scale_and_rotation_invariant(seed in 0u64..10_000, c in prop_oneof![-50.0f64..-0.01, 0.01f64..50.0]) {
            let w = Mat::randn(12, 12, 1.0, &mut stream(seed, Stream::Init));
            let pr = participation_ratio(&w);
            prop_assert!((1.0 - 1e-12..=12.0 + 1e-9).contains(&pr));
            prop_assert!((participation_ratio(&w.scale(c)) - pr).abs() < 1e-10);
            let u = orthogonal(12, seed + 1);
            let v = orthogonal(12, seed + 2);
            prop_assert!((participation_ratio(&u.matmul(&w).matmul(&v)) - pr).abs() < 1e-10);
        }

        #[test]
        fn overlap_bounded(seed in 0u64..10_000, k in 1usize..10) {
            let mut rng = stream(seed, Stream::Init);
            let a = Mat::randn(10, 10, 1.0, &mut rng);
            let b = Mat::randn(10, 10, 1.0, &mut rng);
            let o = subspace_overlap(&a, &b, k).unwrap();
            prop_assert!((0.0..=1.0).contains(&o.value));
            let s = subspace_overlap(&a, &a, k).unwrap();
            prop_assert!((s.value - 1.0).abs() < 1e-9);
        }
    }
}
