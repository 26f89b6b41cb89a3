//! Per-query evaluation records and the dataset they form.
//!
//! A dataset is the empirical joint distribution the chain estimators average
//! over: one [`QueryRecord`] per query, each holding every model's raw token
//! probability, correctness label and token/latency accounting.
//!
//! The interchange format is one JSON object per `(query, model)` pair:
//!
//! ```text
//! {"query_id": "q1", "model_id": "8B", "raw_prob": 0.91, "correct": true,
//!  "tokens_in": 412, "tokens_out": 1, "latency_ms": null}
//! ```
//!
//! CSV files use the same column names.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::calibration::Calibrator;
use crate::error::{Error, Result};
use crate::math::sigmoid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataFormat {
    Jsonl,
    Csv,
}

impl DataFormat {
    /// Guesses the format from a file extension; anything but `.csv` is JSONL.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => DataFormat::Csv,
            _ => DataFormat::Jsonl,
        }
    }
}

/// One model's observation on one query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEntry {
    /// Max-softmax probability (multiple choice) or P("Y") (free-form verification).
    pub raw_prob: f64,
    pub correct: bool,
    pub tokens_in: u64,
    pub tokens_out: u64,
    pub latency_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryRecord {
    pub query_id: String,
    pub entries: IndexMap<String, ModelEntry>,
}

impl QueryRecord {
    pub fn entry(&self, model_id: &str) -> Result<&ModelEntry> {
        self.entries
            .get(model_id)
            .ok_or_else(|| Error::MissingModel {
                query_id: self.query_id.clone(),
                model_id: model_id.to_string(),
            })
    }
}

/// Immutable collection of query records, in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    records: Vec<QueryRecord>,
    model_ids: Vec<String>,
}

impl Dataset {
    /// Validates and wraps a set of records. Model ids are listed in order of
    /// first appearance.
    pub fn new(records: Vec<QueryRecord>) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut seen = HashSet::with_capacity(records.len());
        let mut model_ids: Vec<String> = Vec::new();
        for record in &records {
            if !seen.insert(record.query_id.as_str()) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate query_id `{}`",
                    record.query_id
                )));
            }
            for (model_id, entry) in &record.entries {
                if !(0.0..=1.0).contains(&entry.raw_prob) {
                    return Err(Error::Domain(entry.raw_prob));
                }
                if !model_ids.iter().any(|m| m == model_id) {
                    model_ids.push(model_id.clone());
                }
            }
        }
        Ok(Self { records, model_ids })
    }

    pub fn records(&self) -> &[QueryRecord] {
        &self.records
    }

    pub fn model_ids(&self) -> &[String] {
        &self.model_ids
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// `(raw_prob, correct)` pairs for one model, in record order.
    pub fn pairs(&self, model_id: &str) -> Result<Vec<(f64, bool)>> {
        self.records
            .iter()
            .map(|r| r.entry(model_id).map(|e| (e.raw_prob, e.correct)))
            .collect()
    }

    /// Keeps only the records at the given indices, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        Self::new(indices.iter().map(|&i| self.records[i].clone()).collect())
    }
}

/// A chain member: identity, price and (once fitted) its calibrator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelProfile {
    pub model_id: String,
    /// Dollars per million tokens.
    pub cost_per_mtok: f64,
    #[serde(default)]
    pub latency_ms: Option<f64>,
    #[serde(default)]
    pub calibrator: Option<Calibrator>,
}

impl ModelProfile {
    pub fn new(model_id: impl Into<String>, cost_per_mtok: f64) -> Result<Self> {
        if !(cost_per_mtok >= 0.0 && cost_per_mtok.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "cost_per_mtok must be a nonnegative number, got {cost_per_mtok}"
            )));
        }
        Ok(Self {
            model_id: model_id.into(),
            cost_per_mtok,
            latency_ms: None,
            calibrator: None,
        })
    }

    pub fn with_latency(mut self, latency_ms: f64) -> Self {
        self.latency_ms = Some(latency_ms);
        self
    }

    pub fn with_calibrator(mut self, calibrator: Calibrator) -> Self {
        self.calibrator = Some(calibrator);
        self
    }

    pub fn calibrator(&self) -> Result<&Calibrator> {
        self.calibrator
            .as_ref()
            .ok_or_else(|| Error::Unfitted(self.model_id.clone()))
    }
}

#[derive(Debug, Serialize)]
struct Row<'a> {
    query_id: &'a str,
    model_id: &'a str,
    raw_prob: f64,
    correct: bool,
    tokens_in: u64,
    tokens_out: u64,
    latency_ms: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default)]
struct RawRow {
    query_id: Option<String>,
    model_id: Option<String>,
    raw_prob: Option<f64>,
    correct: Option<bool>,
    tokens_in: Option<u64>,
    tokens_out: Option<u64>,
    latency_ms: Option<f64>,
}

struct Grouper {
    path: PathBuf,
    records: IndexMap<String, QueryRecord>,
}

impl Grouper {
    fn new(path: &Path) -> Self {
        Self {
            path: path.to_path_buf(),
            records: IndexMap::new(),
        }
    }

    fn invalid(&self, line: usize, message: impl Into<String>) -> Error {
        Error::Validation {
            path: self.path.clone(),
            line,
            message: message.into(),
        }
    }

    fn push(&mut self, line: usize, row: RawRow) -> Result<()> {
        macro_rules! required {
            ($field:ident) => {
                row.$field.ok_or_else(|| {
                    self.invalid(
                        line,
                        concat!("missing required field `", stringify!($field), "`"),
                    )
                })?
            };
        }
        let query_id = required!(query_id);
        let model_id = required!(model_id);
        let raw_prob = required!(raw_prob);
        let correct = required!(correct);
        let tokens_in = required!(tokens_in);
        let tokens_out = required!(tokens_out);
        if !(0.0..=1.0).contains(&raw_prob) {
            return Err(self.invalid(line, format!("raw_prob {raw_prob} outside [0, 1]")));
        }
        if let Some(latency) = row.latency_ms {
            if !(latency >= 0.0 && latency.is_finite()) {
                return Err(self.invalid(line, format!("latency_ms {latency} must be nonnegative")));
            }
        }
        let entry = ModelEntry {
            raw_prob,
            correct,
            tokens_in,
            tokens_out,
            latency_ms: row.latency_ms,
        };
        let record = self
            .records
            .entry(query_id.clone())
            .or_insert_with(|| QueryRecord {
                query_id: query_id.clone(),
                entries: IndexMap::new(),
            });
        if record.entries.contains_key(&model_id) {
            return Err(self.invalid(
                line,
                format!("duplicate entry for query `{query_id}` and model `{model_id}`"),
            ));
        }
        record.entries.insert(model_id, entry);
        Ok(())
    }

    fn finish(self) -> Result<Dataset> {
        Dataset::new(self.records.into_values().collect())
    }
}

pub fn load_dataset(path: impl AsRef<Path>, format: DataFormat) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path)?;
    match format {
        DataFormat::Jsonl => read_jsonl(BufReader::new(file), path),
        DataFormat::Csv => read_csv(file, path),
    }
}

/// Reads JSONL rows; `origin` is only used in error messages.
pub fn read_jsonl<R: BufRead>(reader: R, origin: &Path) -> Result<Dataset> {
    let mut grouper = Grouper::new(origin);
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let row: RawRow = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: origin.to_path_buf(),
            line: lineno,
            message: e.to_string(),
        })?;
        grouper.push(lineno, row)?;
    }
    grouper.finish()
}

pub fn read_csv<R: Read>(reader: R, origin: &Path) -> Result<Dataset> {
    let mut grouper = Grouper::new(origin);
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    for result in rdr.records() {
        let record = result.map_err(|e| Error::Parse {
            path: origin.to_path_buf(),
            line: e.position().map(|p| p.line() as usize).unwrap_or(0),
            message: e.to_string(),
        })?;
        let lineno = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let row: RawRow = record
            .deserialize(Some(&headers))
            .map_err(|e| Error::Parse {
                path: origin.to_path_buf(),
                line: lineno,
                message: e.to_string(),
            })?;
        grouper.push(lineno, row)?;
    }
    grouper.finish()
}

pub fn save_dataset(dataset: &Dataset, path: impl AsRef<Path>, format: DataFormat) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write_dataset(dataset, &mut out, format)?;
    out.flush()?;
    Ok(())
}

fn rows(dataset: &Dataset) -> impl Iterator<Item = Row<'_>> {
    dataset.records.iter().flat_map(|record| {
        record.entries.iter().map(move |(model_id, e)| Row {
            query_id: &record.query_id,
            model_id,
            raw_prob: e.raw_prob,
            correct: e.correct,
            tokens_in: e.tokens_in,
            tokens_out: e.tokens_out,
            latency_ms: e.latency_ms,
        })
    })
}

pub fn write_dataset<W: Write>(dataset: &Dataset, writer: W, format: DataFormat) -> Result<()> {
    match format {
        DataFormat::Jsonl => {
            let mut writer = writer;
            for row in rows(dataset) {
                serde_json::to_writer(&mut writer, &row)?;
                writer.write_all(b"\n")?;
            }
        }
        DataFormat::Csv => {
            let mut wtr = csv::Writer::from_writer(writer);
            for row in rows(dataset) {
                wtr.serialize(row)?;
            }
            wtr.flush()?;
        }
    }
    Ok(())
}

/// One simulated model: correctness follows `sigmoid(skill - difficulty)`
/// while the reported probability is `sigmoid(sharpness * (skill - difficulty) + noise)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticModel {
    pub model_id: String,
    pub skill: f64,
    /// Values above 1 push raw probabilities toward 0 and 1 (overconfidence).
    pub sharpness: f64,
    #[serde(default)]
    pub latency_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n: usize,
    pub models: Vec<SyntheticModel>,
    pub noise_sd: f64,
    pub seed: u64,
}

pub const DEFAULT_SKILLS: [f64; 3] = [0.5, 1.5, 2.5];
pub const DEFAULT_SHARPNESS: f64 = 3.0;
pub const DEFAULT_NOISE_SD: f64 = 0.5;

impl SyntheticSpec {
    /// Three models `small`, `medium`, `large` with the default skills.
    pub fn three_tier(n: usize, seed: u64) -> Self {
        let names = ["small", "medium", "large"];
        let latencies = [150.0, 400.0, 1200.0];
        Self {
            n,
            models: names
                .iter()
                .zip(DEFAULT_SKILLS)
                .zip(latencies)
                .map(|((name, skill), latency)| SyntheticModel {
                    model_id: name.to_string(),
                    skill,
                    sharpness: DEFAULT_SHARPNESS,
                    latency_ms: Some(latency),
                })
                .collect(),
            noise_sd: DEFAULT_NOISE_SD,
            seed,
        }
    }
}

/// Draws a dataset in which all models share a per-query latent difficulty.
///
/// Token counts are left at zero, so dollar costs fall back to flat per-query
/// rates. Latency is copied from the model spec when given.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    if spec.n == 0 {
        return Err(Error::InvalidArgument("n must be at least 1".into()));
    }
    if spec.models.is_empty() {
        return Err(Error::InvalidArgument(
            "at least one model is required".into(),
        ));
    }
    for m in &spec.models {
        if !(m.sharpness > 0.0 && m.sharpness.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "sharpness must be positive, got {} for `{}`",
                m.sharpness, m.model_id
            )));
        }
    }
    let noise = Normal::new(0.0, spec.noise_sd)
        .map_err(|e| Error::InvalidArgument(format!("noise_sd: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let width = spec.n.to_string().len().max(6);
    let records = (0..spec.n)
        .map(|i| {
            let difficulty: f64 = StandardNormal.sample(&mut rng);
            let entries = spec
                .models
                .iter()
                .map(|m| {
                    let margin = m.skill - difficulty;
                    let eps = noise.sample(&mut rng);
                    let u: f64 = rng.random();
                    let entry = ModelEntry {
                        raw_prob: sigmoid(m.sharpness * margin + eps),
                        correct: u < sigmoid(margin),
                        tokens_in: 0,
                        tokens_out: 0,
                        latency_ms: m.latency_ms,
                    };
                    (m.model_id.clone(), entry)
                })
                .collect();
            QueryRecord {
                query_id: format!("q{:0width$}", i, width = width),
                entries,
            }
        })
        .collect();
    Dataset::new(records)
}
