//! Central finite-difference checks for analytic gradients.

use rand::seq::index::sample;
use rand::Rng;

/// Denominator floor so coordinates with vanishing gradient are judged on
/// absolute error instead of dividing by ~0.
pub const REL_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// `(f(x + h) − f(x − h)) / 2h` along coordinate `i` of `x`; `x` is restored.
pub fn central_difference<F>(x: &mut [f64], i: usize, h: f64, mut f: F) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    let orig = x[i];
    x[i] = orig + h;
    let plus = f(x);
    x[i] = orig - h;
    let minus = f(x);
    x[i] = orig;
    (plus - minus) / (2.0 * h)
}

/// Distinct coordinates to probe: all of them when `len ≤ n`, otherwise a
/// uniform sample of `n`.
pub fn sample_coordinates<R: Rng + ?Sized>(len: usize, n: usize, rng: &mut R) -> Vec<usize> {
    if len <= n {
        (0..len).collect()
    } else {
        let mut idx = sample(rng, len, n).into_vec();
        idx.sort_unstable();
        idx
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    /// Tensor (or block) name and coordinate with the worst error.
    pub worst: Option<(String, usize)>,
}

impl CheckReport {
    pub fn record(&mut self, name: &str, coord: usize, err: f64) {
        self.checked += 1;
        if err > self.max_rel_err || self.worst.is_none() {
            self.max_rel_err = self.max_rel_err.max(err);
            self.worst = Some((name.to_string(), coord));
        }
    }

    pub fn merge(&mut self, other: CheckReport) {
        self.checked += other.checked;
        if other.max_rel_err > self.max_rel_err {
            self.max_rel_err = other.max_rel_err;
            self.worst = other.worst;
        }
    }
}
