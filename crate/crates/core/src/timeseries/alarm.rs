//! Alarms on runs of large deviations between actual and forecast values.

use std::collections::VecDeque;

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlarmConfig {
    pub sigma_multiplier: f64,
    pub consecutive_hours: usize,
    /// Residuals used for σ; the first `residual_window` hours only calibrate.
    pub residual_window: usize,
}

impl Default for AlarmConfig {
    fn default() -> Self {
        AlarmConfig { sigma_multiplier: 3.0, consecutive_hours: 2, residual_window: 168 }
    }
}

impl AlarmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_multiplier > 0.0) || self.consecutive_hours < 1 || self.residual_window < 10 {
            return Err(Error::Domain(format!(
                "alarm config needs c > 0, h >= 1, R >= 10 (got c={}, h={}, R={})",
                self.sigma_multiplier, self.consecutive_hours, self.residual_window
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlarmReport {
    pub first_alarm: Option<usize>,
    /// Every hour completing a run of `h` exceedances; runs restart after an alarm.
    pub alarms: Vec<usize>,
    /// σ in force at each monitored hour (`None` during calibration).
    pub sigma: Vec<Option<f64>>,
}

/// Residual σ is the RMS of the trailing `R` in-control residuals; hours
/// exceeding `c·σ` are kept out of the window.
pub fn check_alarm(actual: &[f64], forecast: &[f64], config: &AlarmConfig) -> Result<AlarmReport> {
    config.validate()?;
    if actual.len() != forecast.len() {
        return Err(Error::DimensionMismatch { expected: actual.len(), found: forecast.len() });
    }
    let mut window: VecDeque<f64> = VecDeque::with_capacity(config.residual_window);
    let mut sum_sq = 0.0;
    let mut run = 0;
    let mut alarms = Vec::new();
    let mut sigma = Vec::with_capacity(actual.len());
    for (hour, (a, f)) in actual.iter().zip(forecast).enumerate() {
        let residual = a - f;
        let calibrated = hour >= config.residual_window;
        let mut exceeded = false;
        if calibrated {
            let s = (sum_sq / window.len() as f64).max(0.0).sqrt();
            sigma.push(Some(s));
            exceeded = residual.abs() > config.sigma_multiplier * s;
            if exceeded {
                run += 1;
                if run == config.consecutive_hours {
                    alarms.push(hour);
                    run = 0;
                }
            } else {
                run = 0;
            }
        } else {
            sigma.push(None);
        }
        if !exceeded {
            if window.len() == config.residual_window {
                let old = window.pop_front().expect("non-empty window");
                sum_sq -= old * old;
            }
            window.push_back(residual);
            sum_sq += residual * residual;
        }
    }
    Ok(AlarmReport { first_alarm: alarms.first().copied(), alarms, sigma })
}
