//! Seeded generators for synthetic requests, visit streams, cookie churn and
//! inhomogeneous event times.
//!
//! All randomness comes from ChaCha8 (`rand_chacha::ChaCha8Rng`) seeded with
//! a 64-bit seed. Per-user generators use stream number `user` of the seeded
//! generator, so output is independent of thread count.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Gamma, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{CookieEvent, FactorDictionary, RequestRecord};

/// Salt mixed into the seed for the churn generator.
const CHURN_SALT: u64 = 0x9e37_79b9_7f4a_7c15;
/// Lifetimes below this many days are raised to it.
pub const MIN_TAU_DAYS: f64 = 1e-6;
const PROB_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub requests: Option<RequestSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub population: Option<PopulationSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub churn: Option<ChurnSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intensity: Option<IntensitySpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSpec {
    pub label: String,
    pub prob: f64,
    /// Additive log-odds effect on the outcome.
    #[serde(default)]
    pub effect: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorSpec {
    pub name: String,
    pub levels: Vec<LevelSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestSpec {
    pub count: usize,
    /// Outcome probability when every effect is zero.
    pub base_rate: f64,
    pub factors: Vec<FactorSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationSpec {
    /// Gamma shape of the per-user rate.
    pub k: f64,
    /// Mean events per user over the window.
    pub m: f64,
    pub users: u64,
    pub window_hours: f64,
    /// Window start, epoch seconds.
    #[serde(default)]
    pub start: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChurnSpec {
    /// Mean cookie lifetime per browser in days; `null` never churns.
    pub tau_days: BTreeMap<String, Option<f64>>,
    /// Share of users per browser.
    pub mix: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Harmonic {
    pub period_hours: f64,
    pub amplitude: f64,
    #[serde(default)]
    pub phase: f64,
}

/// Events per hour `max(0, base + trend·t + Σ a cos(2πt/P + φ))`, `t` in hours.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntensitySpec {
    pub base: f64,
    #[serde(default)]
    pub trend: f64,
    #[serde(default)]
    pub harmonics: Vec<Harmonic>,
    pub hours: usize,
    /// Epoch seconds of hour 0; must be hour aligned.
    #[serde(default)]
    pub start: i64,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::BadSpec(msg.into())
}

impl SynthSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: SynthSpec = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(r) = &self.requests {
            r.validate()?;
        }
        if let Some(p) = &self.population {
            p.validate()?;
        }
        if let Some(c) = &self.churn {
            c.validate()?;
        }
        if let Some(i) = &self.intensity {
            i.validate()?;
        }
        Ok(())
    }
}

impl RequestSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.base_rate > 0.0 && self.base_rate < 1.0) {
            return Err(bad(format!("base rate {} outside (0, 1)", self.base_rate)));
        }
        if self.factors.is_empty() {
            return Err(bad("no factors"));
        }
        for f in &self.factors {
            if f.levels.is_empty() {
                return Err(bad(format!("factor {} has no levels", f.name)));
            }
            if f.levels.iter().any(|l| !(l.prob >= 0.0) || !l.effect.is_finite()) {
                return Err(bad(format!("factor {} has a negative probability or bad effect", f.name)));
            }
            let total: f64 = f.levels.iter().map(|l| l.prob).sum();
            if (total - 1.0).abs() > PROB_TOLERANCE {
                return Err(bad(format!("level probabilities of {} sum to {total}", f.name)));
            }
        }
        Ok(())
    }

    pub fn dictionary(&self) -> Result<FactorDictionary> {
        FactorDictionary::from_levels(
            self.factors.iter().map(|f| (f.name.clone(), f.levels.iter().map(|l| l.label.clone()).collect())).collect(),
        )
        .map_err(|e| bad(e.to_string()))
    }

    /// Outcome probability for the given level ids.
    pub fn probability(&self, levels: &[u32]) -> f64 {
        let logit = (self.base_rate / (1.0 - self.base_rate)).ln()
            + self.factors.iter().zip(levels).map(|(f, &l)| f.levels[l as usize].effect).sum::<f64>();
        1.0 / (1.0 + (-logit).exp())
    }
}

impl PopulationSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("k", self.k), ("m", self.m), ("window_hours", self.window_hours)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(bad(format!("{name} must be positive, got {v}")));
            }
        }
        if self.users == 0 {
            return Err(bad("users must be positive"));
        }
        Ok(())
    }
}

impl ChurnSpec {
    pub fn validate(&self) -> Result<()> {
        if self.mix.is_empty() {
            return Err(bad("empty browser mix"));
        }
        let total: f64 = self.mix.values().sum();
        if self.mix.values().any(|w| !(*w >= 0.0)) || (total - 1.0).abs() > PROB_TOLERANCE {
            return Err(bad(format!("browser mix must be non-negative and sum to 1, sums to {total}")));
        }
        for browser in self.mix.keys() {
            match self.tau_days.get(browser) {
                None => return Err(bad(format!("browser {browser} has no lifetime"))),
                Some(Some(t)) if !(*t > 0.0) => return Err(bad(format!("browser {browser} lifetime {t}"))),
                _ => {}
            }
        }
        Ok(())
    }
}

impl IntensitySpec {
    pub fn validate(&self) -> Result<()> {
        if !self.base.is_finite() || !self.trend.is_finite() || self.hours == 0 {
            return Err(bad("intensity needs finite base and trend and at least one hour"));
        }
        if self.start.rem_euclid(3600) != 0 {
            return Err(bad("intensity start must be hour aligned"));
        }
        if self.harmonics.iter().any(|h| !(h.period_hours > 0.0) || !h.amplitude.is_finite()) {
            return Err(bad("harmonic periods must be positive"));
        }
        Ok(())
    }

    pub fn rate(&self, t: f64) -> f64 {
        let seasonal: f64 =
            self.harmonics.iter().map(|h| h.amplitude * (2.0 * PI * t / h.period_hours + h.phase).cos()).sum();
        (self.base + self.trend * t + seasonal).max(0.0)
    }

    /// Upper bound of `rate` over `[0, hours]`.
    fn envelope(&self) -> f64 {
        let span = self.hours as f64;
        let linear = self.base + (self.trend * span).max(0.0);
        (linear + self.harmonics.iter().map(|h| h.amplitude.abs()).sum::<f64>()).max(0.0)
    }
}

/// Draws `count` requests; outcome probabilities follow a logistic link.
pub fn gen_requests(spec: &RequestSpec, seed: u64) -> Result<(FactorDictionary, Vec<RequestRecord>)> {
    spec.validate()?;
    let dictionary = spec.dictionary()?;
    let samplers = spec
        .factors
        .iter()
        .map(|f| WeightedIndex::new(f.levels.iter().map(|l| l.prob)).map_err(|e| bad(e.to_string())))
        .collect::<Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let records = (0..spec.count)
        .map(|_| {
            let factors: Vec<u32> = samplers.iter().map(|s| s.sample(&mut rng) as u32).collect();
            let label = rng.random::<f64>() < spec.probability(&factors);
            RequestRecord::new(factors, label)
        })
        .collect();
    Ok((dictionary, records))
}

/// Per-user sorted event times in hours from the window start. User rates are
/// Gamma with shape `k` and mean `m / T`; counts are therefore NBD(k, m).
pub fn gen_gamma_poisson(spec: &PopulationSpec, seed: u64) -> Result<Vec<Vec<f64>>> {
    spec.validate()?;
    let gamma = Gamma::new(spec.k, spec.m / spec.k).map_err(|e| bad(e.to_string()))?;
    let t = spec.window_hours;
    Ok((0..spec.users)
        .into_par_iter()
        .map(|user| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(user);
            let mean = gamma.sample(&mut rng);
            let n = if mean > 0.0 { Poisson::new(mean).map(|p| p.sample(&mut rng) as usize).unwrap_or(0) } else { 0 };
            let mut times: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * t).collect();
            times.sort_by(f64::total_cmp);
            times
        })
        .collect())
}

/// Splits each user's events into cookies: a browser is drawn from the mix
/// and exponential lifetimes partition the window. Cookie ids are
/// `u{user}-c{j}`; the output is ordered by timestamp.
pub fn apply_churn(users: &[Vec<f64>], churn: &ChurnSpec, seed: u64, start: i64) -> Result<Vec<CookieEvent>> {
    churn.validate()?;
    let browsers: Vec<(&String, Option<f64>)> =
        churn.mix.keys().map(|b| (b, churn.tau_days[b].map(|t| t.max(MIN_TAU_DAYS) * 24.0))).collect();
    let picker = WeightedIndex::new(churn.mix.values()).map_err(|e| bad(e.to_string()))?;
    let mut events: Vec<CookieEvent> = users
        .par_iter()
        .enumerate()
        .flat_map_iter(|(user, times)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ CHURN_SALT);
            rng.set_stream(user as u64);
            let (browser, tau) = browsers[picker.sample(&mut rng)];
            let life = tau.map(|t| Exp::new(1.0 / t).expect("positive lifetime"));
            let mut cookie = 0;
            let mut death = life.map_or(f64::INFINITY, |l| l.sample(&mut rng));
            let mut out = Vec::with_capacity(times.len());
            for &t in times {
                while t >= death {
                    cookie += 1;
                    death += life.expect("finite death implies a lifetime").sample(&mut rng);
                }
                out.push(CookieEvent {
                    cookie_id: format!("u{user}-c{cookie}"),
                    browser: browser.clone(),
                    timestamp: start + (t * 3600.0).floor() as i64,
                });
            }
            out
        })
        .collect();
    events.sort_by_key(|e| e.timestamp);
    Ok(events)
}

/// Event times in hours on `[0, hours)` by thinning against a constant envelope.
pub fn gen_inhomogeneous_poisson(spec: &IntensitySpec, seed: u64) -> Result<Vec<f64>> {
    spec.validate()?;
    let envelope = spec.envelope();
    if envelope <= 0.0 {
        return Ok(Vec::new());
    }
    let gap = Exp::new(envelope).map_err(|e| bad(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let span = spec.hours as f64;
    let mut times = Vec::new();
    let mut t = 0.0;
    loop {
        t += gap.sample(&mut rng);
        if t >= span {
            break;
        }
        if rng.random::<f64>() * envelope < spec.rate(t) {
            times.push(t);
        }
    }
    Ok(times)
}

/// Hourly counts of event times (hours) over `hours` bins.
pub fn hourly_counts(times: &[f64], hours: usize) -> Vec<u64> {
    let mut counts = vec![0; hours];
    for &t in times {
        if let Some(c) = counts.get_mut(t.floor() as usize) {
            *c += 1;
        }
    }
    counts
}
