//! Repeat-visit modelling: zero-truncated NBD fitting, cookie survival, and
//! correction of visit frequencies for cookie churn.

mod churn;
mod nbd;
mod survival;

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};

pub use churn::{adjust_for_churn, expected_churned_frequencies, ChurnAdjustment, ChurnConfig, SegmentSample};
pub use nbd::{
    compare_frequencies, fit_nbd_truncated, fit_nbd_truncated_with, moments_estimate, nbd_ln_pmf, nbd_pmf,
    nbd_pmf_table, truncated_log_likelihood, truncated_poisson_fit, FitMethod, FrequencyComparison, FrequencyRow,
    GoodnessOfFit, NbdModel, OVERDISPERSION_LR_CRITICAL, POISSON_LIMIT_SHAPE,
};
pub use survival::{estimate_survival, BrowserSurvival, SurvivalStatus, SurvivalTable, DEFAULT_GUARD_GAP_SECS};

use crate::error::{Error, Result};
use crate::ingest::CookieEvent;

/// Number of cookies observed with exactly `n ≥ 1` events in a window.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyTable {
    counts: BTreeMap<u64, u64>,
    /// Window length in hours (actual or virtual).
    pub window_hours: f64,
}

impl FrequencyTable {
    /// Zero-event entries and zero counts are dropped.
    pub fn from_counts(counts: impl IntoIterator<Item = (u64, u64)>, window_hours: f64) -> Self {
        let mut table = FrequencyTable { counts: BTreeMap::new(), window_hours };
        for (n, c) in counts {
            table.add(n, c);
        }
        table
    }

    /// Tallies events per cookie id.
    pub fn from_events(events: &[CookieEvent], window_hours: f64) -> Self {
        let mut per_cookie: HashMap<&str, u64> = HashMap::new();
        for e in events {
            *per_cookie.entry(e.cookie_id.as_str()).or_default() += 1;
        }
        Self::from_counts(per_cookie.into_values().map(|n| (n, 1)), window_hours)
    }

    pub fn add(&mut self, n: u64, count: u64) {
        if n > 0 && count > 0 {
            *self.counts.entry(n).or_default() += count;
        }
    }

    pub fn count(&self, n: u64) -> u64 {
        self.counts.get(&n).copied().unwrap_or(0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, u64)> + '_ {
        self.counts.iter().map(|(&n, &c)| (n, c))
    }

    /// Cookies observed.
    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    pub fn total_events(&self) -> u64 {
        self.iter().map(|(n, c)| n * c).sum()
    }

    pub fn distinct(&self) -> usize {
        self.counts.len()
    }

    pub fn max_n(&self) -> u64 {
        self.counts.keys().next_back().copied().unwrap_or(0)
    }

    pub fn mean(&self) -> f64 {
        self.total_events() as f64 / self.total() as f64
    }

    /// Unbiased variance of the observed (truncated) counts.
    pub fn variance(&self) -> f64 {
        let mean = self.mean();
        let ss: f64 = self.iter().map(|(n, c)| c as f64 * (n as f64 - mean).powi(2)).sum();
        ss / (self.total() as f64 - 1.0)
    }

    pub fn scaled(&self, factor: u64) -> Self {
        Self::from_counts(self.iter().map(|(n, c)| (n, c * factor)), self.window_hours)
    }

    /// Reads `n,count` rows.
    pub fn read_csv<R: Read>(input: R, window_hours: f64) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(input);
        let headers = reader.headers()?.clone();
        if headers.iter().map(str::trim).ne(["n", "count"]) {
            return Err(Error::MissingColumn("n,count".into()));
        }
        let mut table = FrequencyTable { counts: BTreeMap::new(), window_hours };
        for (row, record) in reader.records().enumerate() {
            let record = record?;
            let parse = |i: usize| {
                record[i].trim().parse::<u64>().map_err(|_| Error::BadField {
                    line: row as u64 + 2,
                    value: record[i].to_string(),
                    reason: "expected a non-negative integer".into(),
                })
            };
            let (n, c) = (parse(0)?, parse(1)?);
            if n == 0 {
                return Err(Error::BadField {
                    line: row as u64 + 2,
                    value: "0".into(),
                    reason: "n = 0 is unobservable and must not appear".into(),
                });
            }
            table.add(n, c);
        }
        Ok(table)
    }

    pub fn write_csv<W: Write>(&self, output: W) -> Result<()> {
        let mut writer = csv::Writer::from_writer(output);
        writer.write_record(["n", "count"])?;
        for (n, c) in self.iter() {
            writer.write_record([n.to_string(), c.to_string()])?;
        }
        writer.flush()?;
        Ok(())
    }
}
