//! Correction of observed visit frequencies for cookie churn.
//!
//! Churn model: every user visits as a Poisson process with a Gamma
//! distributed rate, so their total count over the window is NBD(k, m). The
//! user's cookie dies after an exponential lifetime with the browser's mean
//! τ_b and a fresh cookie continues the same visit stream; each cookie's
//! events are counted separately. A cookie alive for a fraction `f` of the
//! window then has an NBD(k, m·f) count, so the expected frequency table of
//! cookies is a mixture over cookie-segment fractions.
//!
//! The segment fractions are drawn once by seeded Monte Carlo (user `u` uses
//! stream `u` of the generator, so results do not depend on thread count) and
//! reused for every `(k, m)` the optimizer visits. `(k, m)` minimize the
//! likelihood-ratio chi-square `G² = 2 Σ O ln(O/E)` between observed counts
//! and the churned expectation scaled to the observed cookie total.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;
use serde::Serialize;

use super::nbd::{fit_nbd_truncated, moments_estimate, nbd_pmf_table, NbdModel};
use super::survival::SurvivalTable;
use super::FrequencyTable;
use crate::error::{Error, Result};
use crate::optim::NelderMead;

#[derive(Debug, Clone)]
pub struct ChurnConfig {
    /// Simulated users for the segment Monte Carlo.
    pub users: usize,
    pub seed: u64,
    pub optimizer: NelderMead,
}

impl Default for ChurnConfig {
    fn default() -> Self {
        ChurnConfig { users: 100_000, seed: 42, optimizer: NelderMead::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChurnAdjustment {
    pub k: f64,
    pub m: f64,
    /// Estimated number of true users, including those with no visit.
    pub true_users: f64,
    /// Expected users with at least `loyalty_threshold` visits missing from the observed table.
    pub missing_loyal: f64,
    pub loyalty_threshold: u64,
    /// Expected cookies per user under the fitted churn model.
    pub cookies_per_user: f64,
    /// Zero-truncated NBD fit that ignores churn, when identifiable.
    pub naive: Option<NbdModel>,
    pub g_squared: f64,
    pub evaluations: usize,
}

/// Cookie-segment fractions of the window, with multiplicities, pooled over
/// simulated users.
#[derive(Debug, Clone)]
pub struct SegmentSample {
    segments: Vec<(f64, u32)>,
    users: usize,
}

impl SegmentSample {
    /// `taus_hours[b]` and `mix[b]` per browser; an infinite τ never churns.
    pub fn simulate(window_hours: f64, browsers: &[(f64, f64)], users: usize, seed: u64) -> Self {
        let cumulative: Vec<f64> = browsers
            .iter()
            .scan(0.0, |acc, &(_, w)| {
                *acc += w;
                Some(*acc)
            })
            .collect();
        let total_weight = cumulative.last().copied().unwrap_or(1.0);
        const CHUNK: usize = 4096;
        let chunks: Vec<Vec<f64>> = (0..users.div_ceil(CHUNK))
            .into_par_iter()
            .map(|c| {
                let mut out = Vec::new();
                for u in c * CHUNK..((c + 1) * CHUNK).min(users) {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    rng.set_stream(u as u64);
                    let pick = rng.random::<f64>() * total_weight;
                    let b = cumulative.iter().position(|&c| pick < c).unwrap_or(browsers.len() - 1);
                    let tau = browsers[b].0;
                    if !tau.is_finite() {
                        out.push(1.0);
                        continue;
                    }
                    let life = Exp::new(1.0 / tau).expect("positive lifetime");
                    let mut t = 0.0;
                    loop {
                        let next = t + life.sample(&mut rng);
                        if next >= window_hours {
                            out.push((window_hours - t) / window_hours);
                            break;
                        }
                        out.push((next - t) / window_hours);
                        t = next;
                    }
                }
                out
            })
            .collect();
        let mut all: Vec<f64> = chunks.into_iter().flatten().collect();
        all.sort_by(f64::total_cmp);
        let mut segments: Vec<(f64, u32)> = Vec::new();
        for f in all {
            match segments.last_mut() {
                Some(last) if last.0 == f => last.1 += 1,
                _ => segments.push((f, 1)),
            }
        }
        SegmentSample { segments, users }
    }

    pub fn users(&self) -> usize {
        self.users
    }

    pub fn segment_count(&self) -> u64 {
        self.segments.iter().map(|s| s.1 as u64).sum()
    }

    pub fn segments(&self) -> &[(f64, u32)] {
        &self.segments
    }
}

/// Expected cookies per user with exactly `n` events, `n = 0..=n_max`.
pub fn expected_churned_frequencies(sample: &SegmentSample, k: f64, m: f64, n_max: usize) -> Vec<f64> {
    const CHUNK: usize = 2048;
    let partials: Vec<Vec<f64>> = sample
        .segments
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut acc = vec![0.0; n_max + 1];
            for &(f, mult) in chunk {
                let pmf = nbd_pmf_table(k, m * f, n_max);
                for (a, p) in acc.iter_mut().zip(pmf) {
                    *a += mult as f64 * p;
                }
            }
            acc
        })
        .collect();
    let mut total = vec![0.0; n_max + 1];
    for p in partials {
        for (t, v) in total.iter_mut().zip(p) {
            *t += v;
        }
    }
    let u = sample.users as f64;
    total.iter_mut().for_each(|t| *t /= u);
    total
}

/// Expected cookies per user with at least one event.
fn expected_observed_cookies(sample: &SegmentSample, k: f64, m: f64) -> f64 {
    let s: f64 = sample.segments.iter().map(|&(f, mult)| mult as f64 * -(-k * (m * f / k).ln_1p()).exp_m1()).sum();
    s / sample.users as f64
}

/// Fits `(k, m)` of the un-churned visit process to an observed cookie
/// frequency table, given per-browser cookie lifetimes and the browser mix
/// of users, and estimates the loyal users hidden by churn.
pub fn adjust_for_churn(
    freq: &FrequencyTable,
    survival: &SurvivalTable,
    browser_mix: &BTreeMap<String, f64>,
    loyalty_threshold: u64,
    config: &ChurnConfig,
) -> Result<ChurnAdjustment> {
    if loyalty_threshold < 2 {
        return Err(Error::InconsistentInputs(format!("loyalty threshold {loyalty_threshold} < 2")));
    }
    if !(freq.window_hours > 0.0) {
        return Err(Error::InconsistentInputs("window length must be positive".into()));
    }
    if freq.total() == 0 {
        return Err(Error::InsufficientData("empty frequency table".into()));
    }
    let mut browsers = Vec::new();
    for (name, &weight) in browser_mix {
        if !(weight >= 0.0) {
            return Err(Error::InconsistentInputs(format!("browser {name} has weight {weight}")));
        }
        let s = survival
            .get(name)
            .ok_or_else(|| Error::InconsistentInputs(format!("browser {name} has no survival estimate")))?;
        if !(s.tau_days > 0.0) {
            return Err(Error::InconsistentInputs(format!("browser {name} has non-positive lifetime {}", s.tau_days)));
        }
        browsers.push((s.tau_days * 24.0, weight));
    }
    if browsers.iter().map(|b| b.1).sum::<f64>() <= 0.0 {
        return Err(Error::InconsistentInputs("browser mix has no mass".into()));
    }

    let sample = SegmentSample::simulate(freq.window_hours, &browsers, config.users, config.seed);
    let n_max = freq.max_n() as usize;
    let observed: Vec<(usize, f64)> = freq.iter().map(|(n, c)| (n as usize, c as f64)).collect();
    let total = freq.total() as f64;

    let naive = match fit_nbd_truncated(freq) {
        Ok(fit) => Some(fit),
        Err(e @ Error::NoConvergence { .. }) => return Err(e),
        Err(e) => {
            log::warn!("naive NBD fit unavailable: {e}");
            None
        }
    };
    let (k0, m0) = naive.as_ref().map(|f| (f.k, f.m)).or_else(|| moments_estimate(freq)).unwrap_or((1.0, freq.mean()));

    // G² up to the constant 2 Σ O ln(O / total)
    let objective = |x: &[f64]| {
        if x[0].abs() > 25.0 || x[1].abs() > 25.0 {
            return f64::INFINITY;
        }
        let (k, m) = (x[0].exp(), x[1].exp());
        let per_user = expected_churned_frequencies(&sample, k, m, n_max);
        let visible = expected_observed_cookies(&sample, k, m);
        -observed.iter().map(|&(n, o)| o * (per_user[n] / visible).ln()).sum::<f64>() / total
    };
    let min = config.optimizer.minimize(objective, &[k0.ln(), m0.ln()]);
    if !min.converged {
        return Err(Error::NoConvergence { evaluations: min.evaluations });
    }
    let (k, m) = (min.point[0].exp(), min.point[1].exp());
    let g_squared = 2.0 * observed.iter().map(|&(_, o)| o * (o / total).ln()).sum::<f64>() + 2.0 * total * min.value;

    let visible = expected_observed_cookies(&sample, k, m);
    let true_users = total / visible;
    let missing_loyal = missing_loyal_users(freq, k, m, true_users, loyalty_threshold);
    Ok(ChurnAdjustment {
        k,
        m,
        true_users,
        missing_loyal,
        loyalty_threshold,
        cookies_per_user: sample.segment_count() as f64 / sample.users as f64,
        naive,
        g_squared,
        evaluations: min.evaluations,
    })
}

/// `Σ_{n ≥ n0} (U·P(n | k, m) - observed(n))₊`.
fn missing_loyal_users(freq: &FrequencyTable, k: f64, m: f64, users: f64, threshold: u64) -> f64 {
    let mut n_max = (freq.max_n() as usize).max(threshold as usize);
    let mut pmf = nbd_pmf_table(k, m, n_max);
    // extend until the remaining tail is negligible
    while 1.0 - pmf.iter().sum::<f64>() > 1e-12 && n_max < 1_000_000 {
        n_max *= 2;
        pmf = nbd_pmf_table(k, m, n_max);
    }
    (threshold as usize..=n_max).map(|n| (users * pmf[n] - freq.count(n as u64) as f64).max(0.0)).sum()
}
