//! Cookie lifetime estimation per browser.
//!
//! A cookie lives from its first to its last observed event. A cookie still
//! seen within the guard gap `g` of the window end is right-censored: its
//! death cannot yet be confirmed, so follow-up ends at `t1 - g`. Lifetimes
//! are taken as exponential and the mean is estimated by the censored MLE
//! `τ = Σ exposure / deaths`.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::ingest::{CookieEvent, Window};

pub const DEFAULT_GUARD_GAP_SECS: i64 = 7 * 86_400;
const SECONDS_PER_DAY: f64 = 86_400.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SurvivalStatus {
    Estimated,
    /// No deaths observed: `tau_days` is only a lower bound (total exposure).
    NoDeaths,
    /// All observed lifetimes are zero.
    Degenerate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BrowserSurvival {
    pub tau_days: f64,
    pub deaths: u64,
    pub censored: u64,
    pub status: SurvivalStatus,
}

impl BrowserSurvival {
    pub fn cookies(&self) -> u64 {
        self.deaths + self.censored
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SurvivalTable {
    pub browsers: BTreeMap<String, BrowserSurvival>,
}

impl SurvivalTable {
    pub fn get(&self, browser: &str) -> Option<&BrowserSurvival> {
        self.browsers.get(browser)
    }

    /// Table with given mean lifetimes (days) and no observation counts.
    pub fn from_taus<'a>(taus: impl IntoIterator<Item = (&'a str, f64)>) -> Self {
        SurvivalTable {
            browsers: taus
                .into_iter()
                .map(|(b, tau)| {
                    let s =
                        BrowserSurvival { tau_days: tau, deaths: 0, censored: 0, status: SurvivalStatus::Estimated };
                    (b.to_string(), s)
                })
                .collect(),
        }
    }

    /// Reads `browser,tau_days,deaths,censored`.
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(input);
        let headers = reader.headers()?.clone();
        if headers.iter().map(str::trim).ne(["browser", "tau_days", "deaths", "censored"]) {
            return Err(Error::MissingColumn("browser,tau_days,deaths,censored".into()));
        }
        let mut table = SurvivalTable::default();
        for (row, record) in reader.records().enumerate() {
            let record = record?;
            let bad = |i: usize| Error::BadField {
                line: row as u64 + 2,
                value: record[i].to_string(),
                reason: "not a number".into(),
            };
            let tau_days: f64 = record[1].trim().parse().map_err(|_| bad(1))?;
            let deaths: u64 = record[2].trim().parse().map_err(|_| bad(2))?;
            let censored: u64 = record[3].trim().parse().map_err(|_| bad(3))?;
            let status = if deaths == 0 {
                SurvivalStatus::NoDeaths
            } else if tau_days == 0.0 {
                SurvivalStatus::Degenerate
            } else {
                SurvivalStatus::Estimated
            };
            table.browsers.insert(record[0].trim().to_string(), BrowserSurvival { tau_days, deaths, censored, status });
        }
        Ok(table)
    }

    pub fn write_csv<W: Write>(&self, output: W) -> Result<()> {
        let mut writer = csv::Writer::from_writer(output);
        writer.write_record(["browser", "tau_days", "deaths", "censored"])?;
        for (browser, s) in &self.browsers {
            writer.write_record([
                browser.clone(),
                crate::report::format_number(s.tau_days),
                s.deaths.to_string(),
                s.censored.to_string(),
            ])?;
        }
        writer.flush()?;
        Ok(())
    }
}

/// Estimates mean cookie lifetime per browser from events inside `window`.
pub fn estimate_survival(events: &[CookieEvent], window: Window, guard_gap_secs: i64) -> Result<SurvivalTable> {
    if window.start >= window.end {
        return Err(Error::UnalignedWindow { start: window.start, end: window.end });
    }
    // cookie -> (browser, first, last); ordered so float sums are reproducible
    let mut spans: BTreeMap<&str, (&str, i64, i64)> = BTreeMap::new();
    for e in events.iter().filter(|e| window.contains(e.timestamp)) {
        spans
            .entry(e.cookie_id.as_str())
            .and_modify(|s| {
                s.1 = s.1.min(e.timestamp);
                s.2 = s.2.max(e.timestamp);
            })
            .or_insert((e.browser.as_str(), e.timestamp, e.timestamp));
    }
    let follow_up_end = window.end - guard_gap_secs;
    // browser -> (exposure seconds, deaths, censored)
    let mut acc: BTreeMap<&str, (f64, u64, u64)> = BTreeMap::new();
    for &(browser, first, last) in spans.values() {
        let entry = acc.entry(browser).or_default();
        if last >= follow_up_end {
            entry.0 += (follow_up_end - first).max(0) as f64;
            entry.2 += 1;
        } else {
            entry.0 += (last - first) as f64;
            entry.1 += 1;
        }
    }
    let browsers = acc
        .into_iter()
        .map(|(browser, (exposure, deaths, censored))| {
            let exposure_days = exposure / SECONDS_PER_DAY;
            let (tau_days, status) = if deaths == 0 {
                log::warn!("browser {browser}: no deaths observed, lifetime is a lower bound");
                (exposure_days, SurvivalStatus::NoDeaths)
            } else if exposure == 0.0 {
                log::warn!("browser {browser}: every observed lifetime is zero");
                (0.0, SurvivalStatus::Degenerate)
            } else {
                (exposure_days / deaths as f64, SurvivalStatus::Estimated)
            };
            (browser.to_string(), BrowserSurvival { tau_days, deaths, censored, status })
        })
        .collect();
    Ok(SurvivalTable { browsers })
}
