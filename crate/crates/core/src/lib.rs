//! Conversion-rate scoring for real-time bidding and repeat-visit analytics.
//!
//! Modules follow the pipeline: [`ingest`] turns request logs into factor
//! tables, [`features`] ranks factors by mutual information, [`predictor`]
//! trains and serves a sparse rate model whose output [`pacing`] turns into
//! show/skip decisions. [`repeatbuy`] fits Gamma-Poisson models to visit
//! frequencies and corrects them for cookie churn; [`timeseries`] forecasts
//! hourly traffic and rescales time. [`synth`] generates seeded test data.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod features;
pub mod ingest;
pub mod optim;
pub mod pacing;
pub mod predictor;
pub mod repeatbuy;
pub mod report;
pub mod stats;
pub mod synth;
pub mod timeseries;

pub use error::{Error, ErrorCategory, Result};
