//! Gamma–Poisson (negative binomial) visit-count model in the repeat-buying
//! parameterization: shape `k` and mean `m` events per window.
//!
//! `P(n) = Γ(k+n) / (Γ(k) n!) · (k/(k+m))^k · (m/(k+m))^n`, with variance
//! `m (1 + m/k)`.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use super::FrequencyTable;
use crate::error::{Error, Result};
use crate::optim::NelderMead;
use crate::stats::{chi_square_sf, pooled_chi_square};

/// Shape above which the fit is treated as the Poisson limit.
pub const POISSON_LIMIT_SHAPE: f64 = 1e6;
/// Likelihood-ratio threshold (NBD vs Poisson, zero-truncated) below which
/// extra-Poisson variation is not established. 1% critical value of the
/// boundary mixture ½χ²₀ + ½χ²₁.
pub const OVERDISPERSION_LR_CRITICAL: f64 = 5.411894431054;

const MIN_EXPECTED_PER_BIN: f64 = 5.0;

fn check_params(k: f64, m: f64) -> Result<()> {
    if !(k > 0.0 && k.is_finite() && m > 0.0 && m.is_finite()) {
        return Err(Error::Domain(format!("NBD parameters must be finite and positive (k={k}, m={m})")));
    }
    Ok(())
}

/// `ln P(0) = -k ln(1 + m/k)`.
fn ln_p0(k: f64, m: f64) -> f64 {
    -k * (m / k).ln_1p()
}

pub fn nbd_ln_pmf(k: f64, m: f64, n: u64) -> Result<f64> {
    check_params(k, m)?;
    let nf = n as f64;
    let rising = if n < 64 { (0..n).map(|j| (k + j as f64).ln()).sum::<f64>() } else { ln_gamma(k + nf) - ln_gamma(k) };
    let log_odds = m.ln() - (k + m).ln();
    let tail = if n == 0 { 0.0 } else { nf * log_odds };
    Ok(rising - ln_gamma(nf + 1.0) + ln_p0(k, m) + tail)
}

pub fn nbd_pmf(k: f64, m: f64, n: u64) -> Result<f64> {
    Ok(nbd_ln_pmf(k, m, n)?.exp())
}

/// `P(0..=n_max)` by the ratio recurrence `P(n)/P(n-1) = (k+n-1)/n · m/(k+m)`.
pub fn nbd_pmf_table(k: f64, m: f64, n_max: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n_max + 1);
    let ratio = m / (k + m);
    let mut p = ln_p0(k, m).exp();
    out.push(p);
    for n in 1..=n_max {
        p *= (k + (n - 1) as f64) / n as f64 * ratio;
        out.push(p);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMethod {
    Moments,
    TruncatedMle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoodnessOfFit {
    pub chi_square: f64,
    pub degrees_of_freedom: usize,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NbdModel {
    pub k: f64,
    pub m: f64,
    pub fit_method: FitMethod,
    pub gof: GoodnessOfFit,
    /// Zero-truncated log-likelihood at the estimate.
    pub log_likelihood: f64,
    pub evaluations: usize,
}

impl NbdModel {
    pub fn variance(&self) -> f64 {
        self.m * (1.0 + self.m / self.k)
    }
}

/// Untruncated method-of-moments `(k, m)` from the observed counts, or
/// `None` when the sample is not overdispersed.
pub fn moments_estimate(freq: &FrequencyTable) -> Option<(f64, f64)> {
    let (mean, var) = (freq.mean(), freq.variance());
    (var > mean).then(|| (mean * mean / (var - mean), mean))
}

/// Zero-truncated log-likelihood `Σ f(n) [ln P(n) - ln(1 - P(0))]`.
pub fn truncated_log_likelihood(freq: &FrequencyTable, k: f64, m: f64) -> f64 {
    let n_max = freq.max_n() as usize;
    let pmf = nbd_pmf_table(k, m, n_max);
    let ln_pos = (-ln_p0(k, m).exp_m1()).ln();
    freq.iter()
        .map(|(n, c)| {
            let p = pmf[n as usize];
            // deep tails underflow the recurrence
            let lp = if p > 1e-300 { p.ln() } else { nbd_ln_pmf(k, m, n).unwrap_or(f64::NEG_INFINITY) };
            c as f64 * (lp - ln_pos)
        })
        .sum()
}

/// Rate of the zero-truncated Poisson matching the observed mean,
/// `mean = λ / (1 - e^{-λ})`, and its log-likelihood.
pub fn truncated_poisson_fit(freq: &FrequencyTable) -> (f64, f64) {
    let mean = freq.mean();
    let g = |l: f64| l / -(-l).exp_m1() - mean;
    let (mut lo, mut hi) = (1e-12, mean.max(1.0));
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let lambda = 0.5 * (lo + hi);
    let ln_pos = (-(-lambda).exp_m1()).ln();
    let ll = freq
        .iter()
        .map(|(n, c)| c as f64 * (n as f64 * lambda.ln() - lambda - ln_gamma(n as f64 + 1.0) - ln_pos))
        .sum();
    (lambda, ll)
}

/// Maximum-likelihood fit of the zero-truncated NBD.
///
/// The search runs over `(ln k, ln m)` from the moment estimate. Data whose
/// likelihood is not significantly better than a zero-truncated Poisson are
/// reported as [`Error::DegenerateData`] with the Poisson rate.
pub fn fit_nbd_truncated(freq: &FrequencyTable) -> Result<NbdModel> {
    fit_nbd_truncated_with(freq, &NelderMead::default())
}

pub fn fit_nbd_truncated_with(freq: &FrequencyTable, optimizer: &NelderMead) -> Result<NbdModel> {
    if freq.distinct() < 3 || freq.total() < 100 {
        return Err(Error::InsufficientData(format!(
            "need >= 3 distinct counts and >= 100 cookies, got {} and {}",
            freq.distinct(),
            freq.total()
        )));
    }
    let total = freq.total() as f64;
    let (poisson_rate, poisson_ll) = truncated_poisson_fit(freq);
    let (k0, m0) = moments_estimate(freq).unwrap_or((10.0, freq.mean()));
    let max_ln_k = POISSON_LIMIT_SHAPE.ln() + 2.0;

    let objective = |x: &[f64]| {
        if x[0] > max_ln_k || x[0] < -20.0 || x[1].abs() > 30.0 {
            return f64::INFINITY;
        }
        -truncated_log_likelihood(freq, x[0].exp(), x[1].exp()) / total
    };
    let min = optimizer.minimize(objective, &[k0.ln(), m0.ln()]);
    if !min.converged {
        return Err(Error::NoConvergence { evaluations: min.evaluations });
    }
    let (k, m) = (min.point[0].exp(), min.point[1].exp());
    let log_likelihood = -min.value * total;
    if k > POISSON_LIMIT_SHAPE || 2.0 * (log_likelihood - poisson_ll) < OVERDISPERSION_LR_CRITICAL {
        return Err(Error::DegenerateData { poisson_rate });
    }
    let mut model = NbdModel {
        k,
        m,
        fit_method: FitMethod::TruncatedMle,
        gof: GoodnessOfFit { chi_square: f64::NAN, degrees_of_freedom: 0, p_value: f64::NAN },
        log_likelihood,
        evaluations: min.evaluations,
    };
    model.gof = compare_frequencies(freq, &model).gof;
    Ok(model)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrequencyRow {
    pub n: u64,
    pub observed: u64,
    pub expected: f64,
    /// Pearson residual `(O - E) / √E`.
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrequencyComparison {
    pub rows: Vec<FrequencyRow>,
    pub gof: GoodnessOfFit,
    /// `observed(1) - expected(1)`.
    pub singleton_excess: f64,
}

/// Observed counts against the zero-truncated expectation of `model`,
/// with a chi-square on cells pooled to an expectation of at least 5.
/// The last cell absorbs the expected mass beyond the largest observed count.
pub fn compare_frequencies(observed: &FrequencyTable, model: &NbdModel) -> FrequencyComparison {
    let n_max = observed.max_n().max(1) as usize;
    let total = observed.total() as f64;
    let pmf = nbd_pmf_table(model.k, model.m, n_max);
    let positive = -ln_p0(model.k, model.m).exp_m1();
    let expected: Vec<f64> = (1..=n_max).map(|n| total * pmf[n] / positive).collect();
    let obs: Vec<f64> = (1..=n_max).map(|n| observed.count(n as u64) as f64).collect();

    let rows = (1..=n_max)
        .map(|n| {
            let (o, e) = (obs[n - 1], expected[n - 1]);
            FrequencyRow { n: n as u64, observed: o as u64, expected: e, residual: (o - e) / e.sqrt() }
        })
        .collect();

    let mut cells = expected.clone();
    let tail = (total - expected.iter().sum::<f64>()).max(0.0);
    *cells.last_mut().unwrap() += tail;
    let pooled = pooled_chi_square(&obs, &cells, MIN_EXPECTED_PER_BIN);
    let df = pooled.bins.len().saturating_sub(3);
    let p_value = if df > 0 { chi_square_sf(pooled.statistic, df) } else { f64::NAN };
    FrequencyComparison {
        rows,
        gof: GoodnessOfFit { chi_square: pooled.statistic, degrees_of_freedom: df, p_value },
        singleton_excess: obs[0] - expected[0],
    }
}
