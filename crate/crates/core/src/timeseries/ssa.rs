//! Basic singular spectrum analysis with recurrent forecasting.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};

/// Share of squared singular mass the automatic rank must reach.
pub const AUTO_RANK_MASS: f64 = 0.95;
/// Root moduli above `1 + UNSTABLE_ROOT_MARGIN` flag a diverging recurrence.
pub const UNSTABLE_ROOT_MARGIN: f64 = 1e-6;

#[derive(Debug, Clone, Serialize)]
pub struct SsaModel {
    pub window_length: usize,
    pub rank: usize,
    /// All `L` singular values, descending.
    pub singular_values: Vec<f64>,
    /// `a_1..a_{L-1}` with `y_t = Σ_j a_j y_{t-L+j}`, i.e. `a_{L-1}` weights the latest value.
    pub recurrence: Vec<f64>,
    pub reconstruction: Vec<f64>,
    /// Largest modulus among the characteristic roots of the recurrence.
    pub max_root_modulus: f64,
}

impl SsaModel {
    pub fn is_stable(&self) -> bool {
        self.max_root_modulus <= 1.0 + UNSTABLE_ROOT_MARGIN
    }

    /// Share of squared singular mass held by the kept components.
    pub fn explained(&self) -> f64 {
        let total: f64 = self.singular_values.iter().map(|s| s * s).sum();
        let kept: f64 = self.singular_values[..self.rank].iter().map(|s| s * s).sum();
        if total == 0.0 {
            1.0
        } else {
            kept / total
        }
    }
}

/// `168` once the series covers two weeks, otherwise half its length.
pub fn default_window_length(n: usize) -> usize {
    if n >= 336 {
        168
    } else {
        n / 2
    }
}

/// Fits SSA with window length `window` and `rank` leading components
/// (`None` picks the smallest rank reaching [`AUTO_RANK_MASS`]).
pub fn ssa_fit(series: &[f64], window: usize, rank: Option<usize>) -> Result<SsaModel> {
    let n = series.len();
    if window < 2 || n < 2 * window {
        return Err(Error::TooShort { len: n, window });
    }
    if let Some(&bad) = series.iter().find(|v| !v.is_finite()) {
        return Err(Error::Domain(format!("series value {bad} is not finite")));
    }
    let l = window;
    let k = n - l + 1;
    let trajectory = DMatrix::from_fn(l, k, |i, j| series[i + j]);
    let svd = trajectory.clone().svd(true, false);
    let u = svd.u.as_ref().expect("left singular vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let singular_values: Vec<f64> = order.iter().map(|&i| svd.singular_values[i].max(0.0)).collect();

    let top = singular_values[0];
    let numerical_rank = singular_values.iter().filter(|&&s| s > top * l.max(k) as f64 * f64::EPSILON).count().max(1);
    let mut r = match rank {
        Some(0) => return Err(Error::Domain("rank must be at least 1".into())),
        Some(r) if r >= l => return Err(Error::Domain(format!("rank {r} must be below the window length {l}"))),
        Some(r) => r,
        None => {
            let total: f64 = singular_values.iter().map(|s| s * s).sum();
            let mut acc = 0.0;
            let mut r = singular_values.len();
            for (i, s) in singular_values.iter().enumerate() {
                acc += s * s;
                if acc >= AUTO_RANK_MASS * total {
                    r = i + 1;
                    break;
                }
            }
            r.min(l - 1)
        }
    };
    if r > numerical_rank {
        log::warn!("rank {r} exceeds numerical rank {numerical_rank}; reducing");
        r = numerical_rank;
    }

    let components: Vec<usize> = order[..r].to_vec();
    let ur = DMatrix::from_fn(l, r, |i, c| u[(i, components[c])]);
    // X_r = U_r U_rᵀ X, then average over antidiagonals
    let projected = &ur * (ur.transpose() * &trajectory);
    let mut sums = vec![0.0; n];
    for j in 0..k {
        for i in 0..l {
            sums[i + j] += projected[(i, j)];
        }
    }
    let reconstruction: Vec<f64> =
        sums.iter().enumerate().map(|(t, s)| s / (t + 1).min(l).min(k).min(n - t) as f64).collect();

    let pi: Vec<f64> = (0..r).map(|c| ur[(l - 1, c)]).collect();
    let nu2: f64 = pi.iter().map(|p| p * p).sum();
    if nu2 >= 1.0 - 1e-12 {
        return Err(Error::Domain("verticality coefficient is 1; no recurrence exists".into()));
    }
    let recurrence: Vec<f64> =
        (0..l - 1).map(|i| (0..r).map(|c| pi[c] * ur[(i, c)]).sum::<f64>() / (1.0 - nu2)).collect();
    let max_root_modulus = max_root_modulus(&recurrence);
    if max_root_modulus > 1.0 + UNSTABLE_ROOT_MARGIN {
        log::warn!("recurrence has a root of modulus {max_root_modulus:.9}; forecasts may diverge");
    }
    Ok(SsaModel { window_length: l, rank: r, singular_values, recurrence, reconstruction, max_root_modulus })
}

/// Largest root modulus of `z^d - Σ_j a_j z^{j-1}` via companion-matrix eigenvalues.
fn max_root_modulus(a: &[f64]) -> f64 {
    let d = a.len();
    if d == 0 {
        return 0.0;
    }
    let companion = DMatrix::from_fn(d, d, |i, j| {
        if i == 0 {
            a[d - 1 - j]
        } else if i == j + 1 {
            1.0
        } else {
            0.0
        }
    });
    companion.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Continues the reconstructed series by the recurrence for `horizon` steps.
pub fn ssa_forecast(model: &SsaModel, horizon: usize) -> Vec<f64> {
    let d = model.recurrence.len();
    let mut history: Vec<f64> = model.reconstruction[model.reconstruction.len() - d..].to_vec();
    let mut out = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let tail = &history[history.len() - d..];
        let next: f64 = model.recurrence.iter().zip(tail).map(|(a, y)| a * y).sum();
        history.push(next);
        out.push(next);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn sine(n: usize) -> Vec<f64> {
        (0..n).map(|t| (2.0 * PI * t as f64 / 24.0).sin()).collect()
    }

    #[test]
    fn constant_series() {
        let s = vec![3.5; 60];
        let m = ssa_fit(&s, 12, Some(1)).unwrap();
        assert!(m.reconstruction.iter().all(|v| (v - 3.5).abs() < 1e-10));
        assert!(ssa_forecast(&m, 30).iter().all(|v| (v - 3.5).abs() < 1e-9));
        assert!(m.is_stable());
    }

    #[test]
    fn sinusoid_reconstruction_and_forecast() {
        let s = sine(240);
        let m = ssa_fit(&s, 48, Some(2)).unwrap();
        let err = m.reconstruction.iter().zip(&s).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-8, "{err}");
        let truth: Vec<f64> = sine(264)[240..].to_vec();
        let f = ssa_forecast(&m, 24);
        for (a, b) in f.iter().zip(&truth) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn full_rank_reproduces_series_and_mean() {
        // trend plus three harmonics has rank 8
        let s: Vec<f64> = (0..120)
            .map(|t| {
                let t = t as f64;
                1.0 + 0.05 * t + (t / 3.0).sin() + 0.5 * (t / 7.0 + 1.0).cos() + 0.2 * (t / 11.0).sin()
            })
            .collect();
        let m = ssa_fit(&s, 24, Some(8)).unwrap();
        let err = m.reconstruction.iter().zip(&s).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-10, "{err}");
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!((mean(&m.reconstruction) - mean(&s)).abs() < 1e-10);
    }

    #[test]
    fn rank_is_reduced_to_numerical_rank() {
        let m = ssa_fit(&sine(100), 20, Some(6)).unwrap();
        assert_eq!(m.rank, 2);
        assert!(m.singular_values.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn auto_rank_and_preconditions() {
        let m = ssa_fit(&sine(100), 20, None).unwrap();
        assert_eq!(m.rank, 2);
        assert!(matches!(ssa_fit(&sine(30), 16, None), Err(Error::TooShort { .. })));
        assert!(ssa_fit(&sine(100), 20, Some(20)).is_err());
        assert_eq!(default_window_length(400), 168);
        assert_eq!(default_window_length(101), 50);
    }

    #[test]
    fn growing_exponential_is_flagged() {
        let s: Vec<f64> = (0..80).map(|t| 1.05f64.powi(t)).collect();
        let m = ssa_fit(&s, 20, Some(1)).unwrap();
        assert!(!m.is_stable());
        let f = ssa_forecast(&m, 1);
        assert!((f[0] / 1.05f64.powi(80) - 1.0).abs() < 1e-8);
    }
}
