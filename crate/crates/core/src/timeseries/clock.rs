//! Virtual time: a monotone rescaling under which expected event counts per
//! unit time are constant.

use crate::error::{Error, Result};

/// Piecewise-linear cumulative intensity through hourly breakpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct VirtualClock {
    /// `Λ(h)` for `h = 0..=H`; `Λ(0) = 0`.
    breakpoints: Vec<f64>,
}

impl VirtualClock {
    pub fn hours(&self) -> usize {
        self.breakpoints.len() - 1
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn total_mass(&self) -> f64 {
        self.breakpoints[self.hours()]
    }

    /// `Λ(t)` for `t` in hours from the clock origin.
    pub fn cumulative(&self, t: f64) -> Result<f64> {
        let h = self.hours();
        if !(0.0..=h as f64).contains(&t) {
            return Err(Error::OutOfDomain(t));
        }
        let i = (t.floor() as usize).min(h - 1);
        let frac = t - i as f64;
        Ok(self.breakpoints[i] + frac * (self.breakpoints[i + 1] - self.breakpoints[i]))
    }

    /// Virtual time `T · Λ(t) / Λ(T)`, in virtual hours.
    pub fn virtual_time(&self, t: f64) -> Result<f64> {
        Ok(self.hours() as f64 * self.cumulative(t)? / self.total_mass())
    }

    pub fn virtualize(&self, times: &[f64]) -> Result<Vec<f64>> {
        times.iter().map(|&t| self.virtual_time(t)).collect()
    }
}

/// Builds the clock from hourly intensities (counts or forecasts).
pub fn build_virtual_clock(intensity: &[f64]) -> Result<VirtualClock> {
    if intensity.is_empty() {
        return Err(Error::ZeroTotal);
    }
    if let Some(&bad) = intensity.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
        return Err(Error::Domain(format!("intensity {bad} is negative or not finite")));
    }
    let mut breakpoints = Vec::with_capacity(intensity.len() + 1);
    breakpoints.push(0.0);
    let mut acc = 0.0;
    for v in intensity {
        acc += v;
        breakpoints.push(acc);
    }
    if acc <= 0.0 {
        return Err(Error::ZeroTotal);
    }
    Ok(VirtualClock { breakpoints })
}
