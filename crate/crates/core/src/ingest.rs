//! Request and cookie-event logs: parsing, the factor dictionary, contingency
//! tables and hourly aggregation.
//!
//! Request logs are delimited text with a mandatory header. Factor values are
//! nominal; level ids are assigned in first-seen order, and an empty value is
//! mapped to the reserved level [`MISSING_LEVEL`].

use std::collections::HashMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Level label substituted for empty factor values.
pub const MISSING_LEVEL: &str = "__missing__";

pub type LevelId = u32;

const SECONDS_PER_HOUR: i64 = 3600;

/// Column layout of a request log.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schema {
    pub factor_columns: Vec<String>,
    pub label_column: String,
    pub timestamp_column: Option<String>,
    pub user_column: Option<String>,
    pub browser_column: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct SchemaDocument {
    version: u32,
    factors: Vec<String>,
    label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    timestamp: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    user: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    browser: Option<String>,
}

const SCHEMA_VERSION: u32 = 1;

impl Schema {
    pub fn new(factor_columns: Vec<String>, label_column: impl Into<String>) -> Result<Self> {
        let schema = Schema {
            factor_columns,
            label_column: label_column.into(),
            timestamp_column: None,
            user_column: None,
            browser_column: None,
        };
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        if self.factor_columns.is_empty() {
            return Err(Error::InvalidSchema("no factor columns".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for name in &self.factor_columns {
            if !seen.insert(name.as_str()) {
                return Err(Error::InvalidSchema(format!("duplicate factor column `{name}`")));
            }
        }
        let reserved = [Some(&self.label_column), self.timestamp_column.as_ref(), self.user_column.as_ref()];
        for name in reserved.into_iter().flatten() {
            if seen.contains(name.as_str()) {
                return Err(Error::InvalidSchema(format!(
                    "column `{name}` is both a factor and a label/timestamp/user column"
                )));
            }
        }
        Ok(())
    }

    /// Parses the versioned JSON schema document.
    pub fn from_json(text: &str) -> Result<Self> {
        let doc: SchemaDocument = serde_json::from_str(text)?;
        if doc.version != SCHEMA_VERSION {
            return Err(Error::VersionMismatch { expected: SCHEMA_VERSION, found: doc.version });
        }
        let schema = Schema {
            factor_columns: doc.factors,
            label_column: doc.label,
            timestamp_column: doc.timestamp,
            user_column: doc.user,
            browser_column: doc.browser,
        };
        schema.validate()?;
        Ok(schema)
    }

    pub fn to_json(&self) -> String {
        let doc = SchemaDocument {
            version: SCHEMA_VERSION,
            factors: self.factor_columns.clone(),
            label: self.label_column.clone(),
            timestamp: self.timestamp_column.clone(),
            user: self.user_column.clone(),
            browser: self.browser_column.clone(),
        };
        serde_json::to_string_pretty(&doc).expect("schema serializes")
    }
}

/// One bid request: a level id per factor and the binary outcome.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RequestRecord {
    pub factors: Vec<LevelId>,
    pub label: bool,
}

impl RequestRecord {
    pub fn new(factors: Vec<LevelId>, label: bool) -> Self {
        RequestRecord { factors, label }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FactorLevels {
    name: String,
    labels: Vec<String>,
    index: HashMap<String, LevelId>,
}

impl FactorLevels {
    fn new(name: impl Into<String>) -> Self {
        FactorLevels { name: name.into(), ..Default::default() }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn id(&self, label: &str) -> Option<LevelId> {
        self.index.get(label).copied()
    }

    fn intern(&mut self, label: &str) -> LevelId {
        if let Some(&id) = self.index.get(label) {
            return id;
        }
        let id = self.labels.len() as LevelId;
        self.labels.push(label.to_string());
        self.index.insert(label.to_string(), id);
        id
    }
}

/// Bijection between level labels and level ids, per factor.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FactorDictionary {
    factors: Vec<FactorLevels>,
}

impl FactorDictionary {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Self {
        FactorDictionary { factors: names.into_iter().map(FactorLevels::new).collect() }
    }

    /// Builds a dictionary from explicit level lists. Duplicate labels are rejected.
    pub fn from_levels(levels: Vec<(String, Vec<String>)>) -> Result<Self> {
        let mut dict = FactorDictionary::default();
        for (name, labels) in levels {
            let mut factor = FactorLevels::new(name);
            for label in labels {
                if factor.id(&label).is_some() {
                    return Err(Error::InvalidSchema(format!("duplicate level `{label}` in factor `{}`", factor.name)));
                }
                factor.intern(&label);
            }
            dict.factors.push(factor);
        }
        Ok(dict)
    }

    pub fn num_factors(&self) -> usize {
        self.factors.len()
    }

    pub fn factor(&self, index: usize) -> &FactorLevels {
        &self.factors[index]
    }

    pub fn factors(&self) -> &[FactorLevels] {
        &self.factors
    }

    pub fn level_count(&self, factor: usize) -> usize {
        self.factors[factor].len()
    }

    pub fn total_levels(&self) -> usize {
        self.factors.iter().map(FactorLevels::len).sum()
    }

    pub fn label(&self, factor: usize, id: LevelId) -> Option<&str> {
        self.factors[factor].labels.get(id as usize).map(String::as_str)
    }

    pub fn id(&self, factor: usize, label: &str) -> Option<LevelId> {
        self.factors[factor].id(label)
    }

    /// Returns the id of `label`, adding it as a new level if unseen.
    pub fn intern(&mut self, factor: usize, label: &str) -> LevelId {
        let label = if label.is_empty() { MISSING_LEVEL } else { label };
        self.factors[factor].intern(label)
    }

    /// Content hash of factor names and ordered level labels.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        for factor in &self.factors {
            hasher.update((factor.name.len() as u64).to_le_bytes());
            hasher.update(factor.name.as_bytes());
            hasher.update((factor.labels.len() as u64).to_le_bytes());
            for label in &factor.labels {
                hasher.update((label.len() as u64).to_le_bytes());
                hasher.update(label.as_bytes());
            }
        }
        hex(&hasher.finalize()[..16])
    }

    /// True when every record references valid level ids for this dictionary.
    pub fn accepts(&self, record: &RequestRecord) -> bool {
        record.factors.len() == self.factors.len()
            && record.factors.iter().zip(&self.factors).all(|(&id, factor)| (id as usize) < factor.len())
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    use std::fmt::Write as _;
    bytes.iter().fold(String::with_capacity(bytes.len() * 2), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

#[derive(Debug, Clone)]
pub struct ParsedRequests {
    pub dictionary: FactorDictionary,
    pub records: Vec<RequestRecord>,
}

fn reader_builder(delimiter: u8) -> csv::ReaderBuilder {
    let mut builder = csv::ReaderBuilder::new();
    builder.delimiter(delimiter).has_headers(true).flexible(true);
    builder
}

fn column_index(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers.iter().position(|h| h.trim() == name).ok_or_else(|| Error::MissingColumn(name.to_string()))
}

fn line_of(record: &csv::StringRecord) -> u64 {
    record.position().map(|p| p.line()).unwrap_or(0)
}

fn check_width(record: &csv::StringRecord, expected: usize) -> Result<()> {
    if record.len() != expected {
        return Err(Error::RaggedRow { line: line_of(record), expected, found: record.len() });
    }
    Ok(())
}

fn parse_label(record: &csv::StringRecord, column: usize) -> Result<bool> {
    match record[column].trim() {
        "0" => Ok(false),
        "1" => Ok(true),
        other => Err(Error::BadLabel { line: line_of(record), value: other.to_string() }),
    }
}

/// Parses a request log, building a fresh dictionary from the levels seen.
pub fn parse_requests<R: Read>(input: R, schema: &Schema, delimiter: u8) -> Result<ParsedRequests> {
    let mut dictionary = FactorDictionary::new(schema.factor_columns.iter().cloned());
    let records = parse_into(input, schema, delimiter, |factor, value| Some(dictionary.intern(factor, value)))?;
    Ok(ParsedRequests { dictionary, records })
}

/// Level id used for values absent from a fixed dictionary.
pub const UNSEEN_LEVEL: LevelId = LevelId::MAX;

/// Parses a request log against a fixed dictionary; unknown levels map to
/// [`UNSEEN_LEVEL`].
pub fn parse_requests_with<R: Read>(
    input: R,
    schema: &Schema,
    dictionary: &FactorDictionary,
    delimiter: u8,
) -> Result<Vec<RequestRecord>> {
    if dictionary.num_factors() != schema.factor_columns.len() {
        return Err(Error::DimensionMismatch {
            expected: dictionary.num_factors(),
            found: schema.factor_columns.len(),
        });
    }
    parse_into(input, schema, delimiter, |factor, value| {
        let value = if value.is_empty() { MISSING_LEVEL } else { value };
        Some(dictionary.id(factor, value).unwrap_or(UNSEEN_LEVEL))
    })
}

fn parse_into<R: Read>(
    input: R,
    schema: &Schema,
    delimiter: u8,
    mut level_of: impl FnMut(usize, &str) -> Option<LevelId>,
) -> Result<Vec<RequestRecord>> {
    schema.validate()?;
    let mut reader = reader_builder(delimiter).from_reader(input);
    let headers = reader.headers()?.clone();
    let factor_cols = schema.factor_columns.iter().map(|c| column_index(&headers, c)).collect::<Result<Vec<_>>>()?;
    let label_col = column_index(&headers, &schema.label_column)?;

    let mut records = Vec::new();
    let mut row = csv::StringRecord::new();
    while reader.read_record(&mut row)? {
        check_width(&row, headers.len())?;
        let label = parse_label(&row, label_col)?;
        let factors = factor_cols
            .iter()
            .enumerate()
            .map(|(i, &col)| level_of(i, row[col].trim()).unwrap_or(UNSEEN_LEVEL))
            .collect();
        records.push(RequestRecord { factors, label });
    }
    Ok(records)
}

/// Writes records back out as a request log with header `f1,...,fm,label`.
pub fn write_requests<W: Write>(
    output: W,
    dictionary: &FactorDictionary,
    records: &[RequestRecord],
    label_column: &str,
    delimiter: u8,
) -> Result<()> {
    let mut writer = csv::WriterBuilder::new().delimiter(delimiter).from_writer(output);
    let mut header: Vec<&str> = dictionary.factors.iter().map(|f| f.name.as_str()).collect();
    header.push(label_column);
    writer.write_record(&header)?;
    let mut row: Vec<&str> = Vec::with_capacity(header.len());
    for record in records {
        if !dictionary.accepts(record) {
            return Err(Error::DimensionMismatch { expected: dictionary.num_factors(), found: record.factors.len() });
        }
        row.clear();
        for (i, &id) in record.factors.iter().enumerate() {
            row.push(dictionary.label(i, id).unwrap_or(MISSING_LEVEL));
        }
        row.push(if record.label { "1" } else { "0" });
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(())
}

/// Per-factor contingency counts over levels × outcome.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FactorTable {
    // counts[i][k] = [n_{i,k,0}, n_{i,k,1}]
    counts: Vec<Vec<[u64; 2]>>,
    total: u64,
}

impl FactorTable {
    /// Builds a table from explicit per-factor `[negatives, positives]` rows.
    /// Every factor must account for the same number of records.
    pub fn from_counts(counts: Vec<Vec<[u64; 2]>>) -> Result<Self> {
        let mut total = None;
        for (i, factor) in counts.iter().enumerate() {
            let sum: u64 = factor.iter().map(|c| c[0] + c[1]).sum();
            match total {
                None => total = Some(sum),
                Some(t) if t != sum => {
                    return Err(Error::InvalidSchema(format!("factor {i} accounts for {sum} records, expected {t}")))
                }
                _ => {}
            }
        }
        Ok(FactorTable { counts, total: total.unwrap_or(0) })
    }

    pub fn num_factors(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn levels(&self, factor: usize) -> &[[u64; 2]] {
        &self.counts[factor]
    }

    pub fn count(&self, factor: usize, level: usize, label: bool) -> u64 {
        self.counts[factor][level][label as usize]
    }

    /// Total positives, read off factor 0 (identical for every factor).
    pub fn positives(&self) -> u64 {
        self.counts.first().map(|f| f.iter().map(|c| c[1]).sum()).unwrap_or(0)
    }

    /// Multiplies every count by `factor`.
    pub fn scaled(&self, factor: u64) -> FactorTable {
        FactorTable {
            counts: self.counts.iter().map(|f| f.iter().map(|c| [c[0] * factor, c[1] * factor]).collect()).collect(),
            total: self.total * factor,
        }
    }
}

/// Tallies `n_{i,k,s}`; records must be valid for `dictionary`.
pub fn build_factor_table(records: &[RequestRecord], dictionary: &FactorDictionary) -> FactorTable {
    let mut counts: Vec<Vec<[u64; 2]>> = dictionary.factors.iter().map(|f| vec![[0, 0]; f.len()]).collect();
    for record in records {
        debug_assert!(dictionary.accepts(record));
        let s = record.label as usize;
        for (factor, &id) in counts.iter_mut().zip(&record.factors) {
            factor[id as usize][s] += 1;
        }
    }
    FactorTable { counts, total: records.len() as u64 }
}

/// A factor dictionary and its contingency table, as persisted by `build-tables`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TableBundle {
    pub dictionary: FactorDictionary,
    pub label_column: String,
    pub table: FactorTable,
}

const TABLES_MAGIC: &[u8; 4] = b"ADLT";
const TABLES_VERSION: u32 = 1;

impl TableBundle {
    /// Binary layout: magic, version, then length-prefixed UTF-8 strings and
    /// little-endian u64 counts, followed by a SHA-256 of everything before it.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(TABLES_MAGIC);
        out.extend_from_slice(&TABLES_VERSION.to_le_bytes());
        put_str(&mut out, &self.label_column);
        out.extend_from_slice(&self.table.total.to_le_bytes());
        out.extend_from_slice(&(self.dictionary.num_factors() as u64).to_le_bytes());
        for (factor, counts) in self.dictionary.factors.iter().zip(&self.table.counts) {
            put_str(&mut out, &factor.name);
            out.extend_from_slice(&(factor.len() as u64).to_le_bytes());
            for (label, c) in factor.labels.iter().zip(counts) {
                put_str(&mut out, label);
                out.extend_from_slice(&c[0].to_le_bytes());
                out.extend_from_slice(&c[1].to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 + 32 || &bytes[..4] != TABLES_MAGIC {
            return Err(Error::CorruptFile("not a factor-table file".into()));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(Error::CorruptFile("checksum mismatch".into()));
        }
        let mut cur = Cursor { bytes: body, pos: 4 };
        let version = cur.u32()?;
        if version != TABLES_VERSION {
            return Err(Error::VersionMismatch { expected: TABLES_VERSION, found: version });
        }
        let label_column = cur.string()?;
        let total = cur.u64()?;
        let m = cur.u64()? as usize;
        let mut levels = Vec::with_capacity(m);
        let mut counts = Vec::with_capacity(m);
        for _ in 0..m {
            let name = cur.string()?;
            let l = cur.u64()? as usize;
            let mut labels = Vec::with_capacity(l);
            let mut rows = Vec::with_capacity(l);
            for _ in 0..l {
                labels.push(cur.string()?);
                rows.push([cur.u64()?, cur.u64()?]);
            }
            levels.push((name, labels));
            counts.push(rows);
        }
        if cur.pos != body.len() {
            return Err(Error::CorruptFile("trailing bytes".into()));
        }
        let table = FactorTable::from_counts(counts).map_err(|e| Error::CorruptFile(e.to_string()))?;
        if m > 0 && table.total != total {
            return Err(Error::CorruptFile("record total disagrees with counts".into()));
        }
        let dictionary = FactorDictionary::from_levels(levels).map_err(|e| Error::CorruptFile(e.to_string()))?;
        Ok(TableBundle { dictionary, label_column, table: FactorTable { total, ..table } })
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u64).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::CorruptFile("unexpected end of file".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u64()? as usize;
        let raw = self.take(n)?.to_vec();
        String::from_utf8(raw).map_err(|_| Error::CorruptFile("invalid UTF-8".into()))
    }
}

/// One observed event of a cookie (visit, click or conversion).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CookieEvent {
    pub cookie_id: String,
    pub browser: String,
    /// Epoch seconds, UTC.
    pub timestamp: i64,
}

/// Half-open time range `[start, end)` in epoch seconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub start: i64,
    pub end: i64,
}

impl Window {
    pub fn new(start: i64, end: i64) -> Self {
        Window { start, end }
    }

    /// Parses `t0:t1`.
    pub fn parse(text: &str) -> Result<Self> {
        let bad =
            || Error::BadField { line: 0, value: text.to_string(), reason: "expected `t0:t1` in epoch seconds".into() };
        let (a, b) = text.split_once(':').ok_or_else(bad)?;
        let start = a.trim().parse().map_err(|_| bad())?;
        let end = b.trim().parse().map_err(|_| bad())?;
        Ok(Window { start, end })
    }

    pub fn contains(&self, t: i64) -> bool {
        self.start <= t && t < self.end
    }

    pub fn is_hour_aligned(&self) -> bool {
        self.start < self.end
            && self.start.rem_euclid(SECONDS_PER_HOUR) == 0
            && self.end.rem_euclid(SECONDS_PER_HOUR) == 0
    }

    pub fn hours(&self) -> usize {
        ((self.end - self.start) / SECONDS_PER_HOUR) as usize
    }

    pub fn duration_secs(&self) -> i64 {
        self.end - self.start
    }
}

pub fn parse_events<R: Read>(input: R, delimiter: u8) -> Result<Vec<CookieEvent>> {
    let mut reader = reader_builder(delimiter).from_reader(input);
    let headers = reader.headers()?.clone();
    let cookie = column_index(&headers, "cookie_id")?;
    let browser = column_index(&headers, "browser")?;
    let ts = column_index(&headers, "timestamp")?;
    let mut events = Vec::new();
    let mut row = csv::StringRecord::new();
    while reader.read_record(&mut row)? {
        check_width(&row, headers.len())?;
        let raw = row[ts].trim();
        let timestamp = raw.parse::<i64>().map_err(|_| Error::BadField {
            line: line_of(&row),
            value: raw.to_string(),
            reason: "timestamp must be integer epoch seconds".into(),
        })?;
        events.push(CookieEvent {
            cookie_id: row[cookie].trim().to_string(),
            browser: row[browser].trim().to_string(),
            timestamp,
        });
    }
    Ok(events)
}

pub fn write_events<W: Write>(output: W, events: &[CookieEvent]) -> Result<()> {
    let mut writer = csv::Writer::from_writer(output);
    writer.write_record(["cookie_id", "browser", "timestamp"])?;
    for e in events {
        writer.write_record([e.cookie_id.as_str(), e.browser.as_str(), &e.timestamp.to_string()])?;
    }
    writer.flush()?;
    Ok(())
}

/// Event counts for consecutive hours starting at epoch hour `start_hour`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HourlySeries {
    pub start_hour: i64,
    pub counts: Vec<u64>,
}

impl HourlySeries {
    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn values(&self) -> Vec<f64> {
        self.counts.iter().map(|&c| c as f64).collect()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Reads `hour,count` rows; hours must be consecutive.
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut reader = reader_builder(b',').from_reader(input);
        let headers = reader.headers()?.clone();
        let hour_col = column_index(&headers, "hour")?;
        let count_col = column_index(&headers, "count")?;
        let mut start_hour = None;
        let mut counts = Vec::new();
        let mut row = csv::StringRecord::new();
        while reader.read_record(&mut row)? {
            check_width(&row, headers.len())?;
            let field = |col: usize| -> Result<i64> {
                row[col].trim().parse::<i64>().map_err(|_| Error::BadField {
                    line: line_of(&row),
                    value: row[col].to_string(),
                    reason: "expected an integer".into(),
                })
            };
            let hour = field(hour_col)?;
            let count = field(count_col)?;
            let start = *start_hour.get_or_insert(hour);
            if hour != start + counts.len() as i64 || count < 0 {
                return Err(Error::BadField {
                    line: line_of(&row),
                    value: format!("{hour},{count}"),
                    reason: "hours must be consecutive with non-negative counts".into(),
                });
            }
            counts.push(count as u64);
        }
        Ok(HourlySeries { start_hour: start_hour.unwrap_or(0), counts })
    }

    pub fn write_csv<W: Write>(&self, output: W) -> Result<()> {
        let mut writer = csv::Writer::from_writer(output);
        writer.write_record(["hour", "count"])?;
        for (h, c) in self.counts.iter().enumerate() {
            writer.write_record([(self.start_hour + h as i64).to_string(), c.to_string()])?;
        }
        writer.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HourlyAggregation {
    pub series: HourlySeries,
    /// Events outside the window.
    pub dropped: usize,
}

/// Buckets events by `floor(timestamp / 3600)` over an hour-aligned window.
pub fn aggregate_hourly(events: &[CookieEvent], window: Window) -> Result<HourlyAggregation> {
    if !window.is_hour_aligned() {
        return Err(Error::UnalignedWindow { start: window.start, end: window.end });
    }
    let start_hour = window.start.div_euclid(SECONDS_PER_HOUR);
    let mut counts = vec![0u64; window.hours()];
    let mut dropped = 0;
    for e in events {
        if window.contains(e.timestamp) {
            let h = e.timestamp.div_euclid(SECONDS_PER_HOUR) - start_hour;
            counts[h as usize] += 1;
        } else {
            dropped += 1;
        }
    }
    Ok(HourlyAggregation { series: HourlySeries { start_hour, counts }, dropped })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema(factors: &[&str]) -> Schema {
        Schema::new(factors.iter().map(|s| s.to_string()).collect(), "label").unwrap()
    }

    #[test]
    fn two_line_file() {
        let csv = "browser,label\nchrome,1\nsafari,0\n";
        let parsed = parse_requests(csv.as_bytes(), &schema(&["browser"]), b',').unwrap();
        assert_eq!(parsed.dictionary.level_count(0), 2);
        assert_eq!(parsed.records.len(), 2);
        assert_eq!(parsed.records[0], RequestRecord::new(vec![0], true));
        assert_eq!(parsed.records[1], RequestRecord::new(vec![1], false));
    }

    #[test]
    fn header_only_gives_empty_output() {
        let parsed = parse_requests("browser,label\n".as_bytes(), &schema(&["browser"]), b',').unwrap();
        assert!(parsed.records.is_empty());
        assert_eq!(parsed.dictionary.total_levels(), 0);
    }

    #[test]
    fn tab_delimited_and_extra_columns() {
        let tsv = "ts\tos\tlabel\tbrowser\n1\tios\t0\tsafari\n2\tandroid\t1\tchrome\n";
        let parsed = parse_requests(tsv.as_bytes(), &schema(&["browser", "os"]), b'\t').unwrap();
        assert_eq!(parsed.dictionary.label(0, 0), Some("safari"));
        assert_eq!(parsed.dictionary.label(1, 1), Some("android"));
        assert_eq!(parsed.records[1], RequestRecord::new(vec![1, 1], true));
    }

    #[test]
    fn parse_errors() {
        let s = schema(&["browser"]);
        assert!(matches!(
            parse_requests("os,label\nx,1\n".as_bytes(), &s, b','),
            Err(Error::MissingColumn(c)) if c == "browser"
        ));
        assert!(matches!(
            parse_requests("browser,label\nx,1\ny,2\n".as_bytes(), &s, b','),
            Err(Error::BadLabel { line: 3, .. })
        ));
        assert!(matches!(
            parse_requests("browser,label\nx,1,9\n".as_bytes(), &s, b','),
            Err(Error::RaggedRow { line: 2, expected: 2, found: 3 })
        ));
    }

    #[test]
    fn empty_value_is_missing_level() {
        let parsed = parse_requests("browser,label\n,1\nfoo,0\n,0\n".as_bytes(), &schema(&["browser"]), b',').unwrap();
        assert_eq!(parsed.dictionary.label(0, 0), Some(MISSING_LEVEL));
        assert_eq!(parsed.records[2].factors, vec![0]);
    }

    #[test]
    fn fixed_dictionary_marks_unseen_levels() {
        let s = schema(&["browser"]);
        let parsed = parse_requests("browser,label\nchrome,1\n".as_bytes(), &s, b',').unwrap();
        let recs =
            parse_requests_with("browser,label\nedge,0\nchrome,1\n".as_bytes(), &s, &parsed.dictionary, b',').unwrap();
        assert_eq!(recs[0].factors, vec![UNSEEN_LEVEL]);
        assert_eq!(recs[1].factors, vec![0]);
    }

    #[test]
    fn schema_validation() {
        assert!(Schema::new(vec![], "label").is_err());
        assert!(Schema::new(vec!["a".into(), "a".into()], "label").is_err());
        assert!(Schema::new(vec!["label".into()], "label").is_err());
        let doc = r#"{"version":1,"factors":["browser","os"],"label":"click","timestamp":"ts"}"#;
        let s = Schema::from_json(doc).unwrap();
        assert_eq!(s.factor_columns, vec!["browser", "os"]);
        assert_eq!(s.timestamp_column.as_deref(), Some("ts"));
        assert_eq!(Schema::from_json(&s.to_json()).unwrap(), s);
        let v2 = r#"{"version":2,"factors":["a"],"label":"l"}"#;
        assert!(matches!(Schema::from_json(v2), Err(Error::VersionMismatch { found: 2, .. })));
    }

    #[test]
    fn factor_table_hand_count() {
        let mut dict = FactorDictionary::new(["f"]);
        let a = dict.intern(0, "A");
        let b = dict.intern(0, "B");
        let records = vec![
            RequestRecord::new(vec![a], true),
            RequestRecord::new(vec![a], false),
            RequestRecord::new(vec![b], false),
            RequestRecord::new(vec![b], false),
        ];
        let table = build_factor_table(&records, &dict);
        assert_eq!(table.levels(0), &[[1, 1], [2, 0]]);
        assert_eq!(table.total(), 4);
        assert_eq!(table.positives(), 1);
    }

    #[test]
    fn empty_factor_table() {
        let mut dict = FactorDictionary::new(["f", "g"]);
        dict.intern(0, "A");
        let table = build_factor_table(&[], &dict);
        assert_eq!(table.total(), 0);
        assert_eq!(table.levels(0), &[[0, 0]]);
    }

    #[test]
    fn table_bundle_round_trip_and_corruption() {
        let mut dict = FactorDictionary::new(["browser", "os"]);
        let recs: Vec<_> = [("a", "x", true), ("b", "x", false), ("a", "y", false)]
            .iter()
            .map(|&(b, o, l)| RequestRecord::new(vec![dict.intern(0, b), dict.intern(1, o)], l))
            .collect();
        let bundle =
            TableBundle { table: build_factor_table(&recs, &dict), dictionary: dict, label_column: "label".into() };
        let bytes = bundle.to_bytes();
        assert_eq!(TableBundle::from_bytes(&bytes).unwrap(), bundle);
        assert!(matches!(TableBundle::from_bytes(&bytes[..bytes.len() - 5]), Err(Error::CorruptFile(_))));
        let mut flipped = bytes.clone();
        flipped[20] ^= 1;
        assert!(matches!(TableBundle::from_bytes(&flipped), Err(Error::CorruptFile(_))));
    }

    #[test]
    fn fingerprint_depends_on_levels() {
        let mut a = FactorDictionary::new(["f"]);
        a.intern(0, "x");
        let mut b = a.clone();
        assert_eq!(a.fingerprint(), b.fingerprint());
        b.intern(0, "y");
        assert_ne!(a.fingerprint(), b.fingerprint());
    }

    fn ev(ts: i64) -> CookieEvent {
        CookieEvent { cookie_id: "c".into(), browser: "b".into(), timestamp: ts }
    }

    #[test]
    fn hourly_aggregation() {
        let w = Window::new(7200, 7200 + 2 * 3600);
        let agg = aggregate_hourly(&[ev(7200), ev(7300), ev(10799)], w).unwrap();
        assert_eq!(agg.series.counts, vec![3, 0]);
        assert_eq!(agg.series.start_hour, 2);
        assert_eq!(agg.dropped, 0);

        let agg = aggregate_hourly(&[], w).unwrap();
        assert_eq!(agg.series.counts, vec![0, 0]);

        let agg = aggregate_hourly(&[ev(0), ev(7200), ev(14400)], w).unwrap();
        assert_eq!(agg.series.total(), 1);
        assert_eq!(agg.dropped, 2);

        assert!(matches!(aggregate_hourly(&[], Window::new(10, 3610)), Err(Error::UnalignedWindow { .. })));
        assert!(aggregate_hourly(&[], Window::new(3600, 3600)).is_err());
    }

    #[test]
    fn hourly_csv_round_trip() {
        let s = HourlySeries { start_hour: 100, counts: vec![1, 0, 7] };
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        assert_eq!(HourlySeries::read_csv(buf.as_slice()).unwrap(), s);
        assert!(HourlySeries::read_csv("hour,count\n1,2\n3,4\n".as_bytes()).is_err());
    }

    #[test]
    fn events_round_trip() {
        let events = vec![
            CookieEvent { cookie_id: "u1".into(), browser: "chrome".into(), timestamp: 5 },
            CookieEvent { cookie_id: "u2".into(), browser: "safari".into(), timestamp: -3 },
        ];
        let mut buf = Vec::new();
        write_events(&mut buf, &events).unwrap();
        assert_eq!(parse_events(buf.as_slice(), b',').unwrap(), events);
    }
}
