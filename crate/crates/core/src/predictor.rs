//! Sparse conversion-rate estimator.
//!
//! The predicted rate of a request is the importance-weighted mean of the
//! smoothed per-level positive rates of its factors:
//!
//! ```text
//! p(x) = Σ_i I_i q_{i,k_i} / Σ_i I_i
//! ```
//!
//! Factors with `I_i <= epsilon` are dropped from the model. At scoring time a
//! factor whose level never occurred in training is skipped and the weights
//! are renormalized; if nothing is left the model's global rate is returned.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::features::{ImportanceVector, MiMethod};
use crate::ingest::{hex, FactorDictionary, FactorTable, LevelId, RequestRecord};

pub const DEFAULT_EPSILON: f64 = 0.01;
pub const DEFAULT_BETA: f64 = 0.5;

const MODEL_VERSION: u32 = 1;
const CHECKSUM_PREFIX: &str = "checksum sha256:";

#[derive(Debug, Clone, PartialEq)]
pub struct FactorModel {
    /// Importance after thresholding; 0 when pruned.
    pub importance: f64,
    /// Smoothed positive rate per level, `None` for levels absent from training.
    pub rates: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseRateModel {
    pub method: MiMethod,
    pub epsilon: f64,
    pub beta: f64,
    pub global_rate: f64,
    /// Set when every factor was pruned and the model always predicts `global_rate`.
    pub degenerate: bool,
    pub factors: Vec<FactorModel>,
    dictionary: FactorDictionary,
    fingerprint: String,
}

/// Fits per-level smoothed rates `q = (n_1 + β) / (n_0 + n_1 + 2β)` and
/// prunes factors with importance at or below `epsilon`.
pub fn train(
    table: &FactorTable,
    dictionary: &FactorDictionary,
    importance: &ImportanceVector,
    epsilon: f64,
    beta: f64,
) -> Result<SparseRateModel> {
    let m = table.num_factors();
    if importance.len() != m {
        return Err(Error::DimensionMismatch { expected: m, found: importance.len() });
    }
    if dictionary.num_factors() != m {
        return Err(Error::DimensionMismatch { expected: m, found: dictionary.num_factors() });
    }
    if !(epsilon >= 0.0) {
        return Err(Error::Domain(format!("epsilon {epsilon} must be non-negative")));
    }
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(Error::Domain(format!("smoothing beta {beta} must be positive")));
    }
    let factors: Vec<FactorModel> = (0..m)
        .map(|i| {
            let rates = table
                .levels(i)
                .iter()
                .map(|c| {
                    let n = c[0] + c[1];
                    (n > 0).then(|| (c[1] as f64 + beta) / (n as f64 + 2.0 * beta))
                })
                .collect();
            let raw = importance.values[i];
            FactorModel { importance: if raw > epsilon { raw } else { 0.0 }, rates }
        })
        .collect();
    let global_rate = (table.positives() as f64 + beta) / (table.total() as f64 + 2.0 * beta);
    let degenerate = factors.iter().all(|f| f.importance == 0.0);
    if degenerate {
        log::warn!("every factor importance is <= epsilon {epsilon}; model predicts the global rate");
    }
    Ok(SparseRateModel {
        method: importance.method,
        epsilon,
        beta,
        global_rate,
        degenerate,
        factors,
        fingerprint: dictionary.fingerprint(),
        dictionary: dictionary.clone(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredRequest {
    pub record: RequestRecord,
    pub score: f64,
    pub used_factors: usize,
}

impl SparseRateModel {
    pub fn dictionary(&self) -> &FactorDictionary {
        &self.dictionary
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn num_factors(&self) -> usize {
        self.factors.len()
    }

    pub fn active_factors(&self) -> usize {
        self.factors.iter().filter(|f| f.importance > 0.0).count()
    }

    /// Fails unless `dictionary` is the one the model was trained with.
    pub fn check_dictionary(&self, dictionary: &FactorDictionary) -> Result<()> {
        let found = dictionary.fingerprint();
        if found != self.fingerprint {
            return Err(Error::FingerprintMismatch { expected: self.fingerprint.clone(), found });
        }
        Ok(())
    }

    /// Returns `(score, contributing factor count)` for level ids in the
    /// model's dictionary; ids outside it count as unseen.
    #[inline]
    pub fn predict(&self, levels: &[LevelId]) -> Result<(f64, usize)> {
        if levels.len() != self.factors.len() {
            return Err(Error::DimensionMismatch { expected: self.factors.len(), found: levels.len() });
        }
        let mut num = 0.0;
        let mut den = 0.0;
        let mut used = 0;
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for (factor, &level) in self.factors.iter().zip(levels) {
            if factor.importance <= 0.0 {
                continue;
            }
            if let Some(Some(q)) = factor.rates.get(level as usize) {
                num += factor.importance * q;
                den += factor.importance;
                lo = lo.min(*q);
                hi = hi.max(*q);
                used += 1;
            }
        }
        if used == 0 {
            return Ok((self.global_rate, 0));
        }
        // clamp absorbs rounding so the result stays a convex combination
        Ok(((num / den).clamp(lo, hi), used))
    }

    pub fn score(&self, record: &RequestRecord) -> Result<ScoredRequest> {
        let (score, used_factors) = self.predict(&record.factors)?;
        Ok(ScoredRequest { record: record.clone(), score, used_factors })
    }

    /// Scores a record encoded with `dictionary`, which must match the model's.
    pub fn score_checked(&self, dictionary: &FactorDictionary, record: &RequestRecord) -> Result<ScoredRequest> {
        self.check_dictionary(dictionary)?;
        self.score(record)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        file.write_all(self.to_file_string().as_bytes())?;
        file.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_file_str(&text)
    }

    /// Versioned JSON document followed by a `checksum sha256:<hex>` line.
    pub fn to_file_string(&self) -> String {
        let doc = ModelDocument {
            version: MODEL_VERSION,
            method: self.method,
            epsilon: self.epsilon,
            beta: self.beta,
            global_rate: self.global_rate,
            degenerate: self.degenerate,
            fingerprint: self.fingerprint.clone(),
            factors: self
                .dictionary
                .factors()
                .iter()
                .zip(&self.factors)
                .map(|(levels, f)| FactorDocument {
                    name: levels.name().to_string(),
                    importance: f.importance,
                    levels: levels.labels().iter().cloned().zip(f.rates.iter().copied()).collect(),
                })
                .collect(),
        };
        let mut body = serde_json::to_string_pretty(&doc).expect("model serializes");
        body.push('\n');
        let digest = hex(&Sha256::digest(body.as_bytes()));
        format!("{body}{CHECKSUM_PREFIX}{digest}\n")
    }

    pub fn from_file_str(text: &str) -> Result<Self> {
        let trimmed = text.strip_suffix('\n').unwrap_or(text);
        let (body, last) =
            trimmed.rsplit_once('\n').ok_or_else(|| Error::CorruptFile("missing checksum line".into()))?;
        let body = &text[..body.len() + 1];
        let digest =
            last.strip_prefix(CHECKSUM_PREFIX).ok_or_else(|| Error::CorruptFile("missing checksum line".into()))?;
        if digest != hex(&Sha256::digest(body.as_bytes())) {
            return Err(Error::CorruptFile("checksum mismatch".into()));
        }
        let raw: serde_json::Value = serde_json::from_str(body)?;
        let version = raw.get("version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
        if version != MODEL_VERSION {
            return Err(Error::VersionMismatch { expected: MODEL_VERSION, found: version });
        }
        // parse from text again: `Value` maps do not keep level order
        let doc: ModelDocument = serde_json::from_str(body)?;
        let dictionary = FactorDictionary::from_levels(
            doc.factors.iter().map(|f| (f.name.clone(), f.levels.keys().cloned().collect())).collect(),
        )
        .map_err(|e| Error::CorruptFile(e.to_string()))?;
        if dictionary.fingerprint() != doc.fingerprint {
            return Err(Error::CorruptFile("level lists do not match the recorded fingerprint".into()));
        }
        Ok(SparseRateModel {
            method: doc.method,
            epsilon: doc.epsilon,
            beta: doc.beta,
            global_rate: doc.global_rate,
            degenerate: doc.degenerate,
            factors: doc
                .factors
                .into_iter()
                .map(|f| FactorModel { importance: f.importance, rates: f.levels.into_values().collect() })
                .collect(),
            fingerprint: doc.fingerprint,
            dictionary,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct ModelDocument {
    version: u32,
    #[serde(flatten)]
    method: MiMethod,
    epsilon: f64,
    beta: f64,
    global_rate: f64,
    degenerate: bool,
    fingerprint: String,
    factors: Vec<FactorDocument>,
}

#[derive(Serialize, Deserialize)]
struct FactorDocument {
    name: String,
    importance: f64,
    levels: IndexMap<String, Option<f64>>,
}

#[derive(Debug)]
pub struct BatchScores {
    pub scored: Vec<ScoredRequest>,
    /// Input positions that could not be scored.
    pub errors: Vec<(usize, Error)>,
    pub elapsed: std::time::Duration,
}

impl BatchScores {
    pub fn throughput(&self) -> f64 {
        let n = (self.scored.len() + self.errors.len()) as f64;
        n / self.elapsed.as_secs_f64().max(f64::MIN_POSITIVE)
    }
}

/// Scores records in order on the calling thread; bad records are collected.
pub fn score_batch<'a>(model: &SparseRateModel, records: impl IntoIterator<Item = &'a RequestRecord>) -> BatchScores {
    let start = Instant::now();
    let mut scored = Vec::new();
    let mut errors = Vec::new();
    for (i, record) in records.into_iter().enumerate() {
        match model.score(record) {
            Ok(s) => scored.push(s),
            Err(e) => errors.push((i, e)),
        }
    }
    BatchScores { scored, errors, elapsed: start.elapsed() }
}

/// Parallel variant of [`score_batch`]; output order and values are identical.
pub fn score_batch_parallel(model: &SparseRateModel, records: &[RequestRecord]) -> BatchScores {
    use rayon::prelude::*;
    let start = Instant::now();
    let results: Vec<Result<ScoredRequest>> = records.par_iter().map(|r| model.score(r)).collect();
    let mut scored = Vec::with_capacity(results.len());
    let mut errors = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(s) => scored.push(s),
            Err(e) => errors.push((i, e)),
        }
    }
    BatchScores { scored, errors, elapsed: start.elapsed() }
}
