//! CSV ingestion, synthetic streams and train/test splitting.

use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};

use crate::mondrian::RngStream;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("cannot read {path}: {reason}")]
    Io { path: String, reason: String },
    #[error("malformed CSV at row {row}: {reason}")]
    Malformed { row: usize, reason: String },
    #[error("label column `{0}` not found")]
    MissingLabelColumn(String),
    #[error("non-numeric value `{value}` at row {row}, column {column}")]
    NonNumeric { row: usize, column: usize, value: String },
    #[error("invalid class label `{value}` at row {row}")]
    BadClassLabel { row: usize, value: String },
    #[error("unknown synthetic dataset `{0}`")]
    UnknownSynthetic(String),
    #[error("dataset is empty")]
    Empty,
}

/// Feature rows and labels read in stream order.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub xs: Vec<Vec<f64>>,
    pub ys: Vec<f64>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.ys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ys.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.xs.first().map_or(0, Vec::len)
    }

    /// Largest label plus one, at least 2.
    pub fn inferred_classes(&self) -> usize {
        (self.ys.iter().fold(0.0f64, |m, &y| m.max(y)) as usize + 1).max(2)
    }

    pub fn max_abs_label(&self) -> f64 {
        self.ys.iter().fold(0.0f64, |m, y| m.max(y.abs()))
    }

    /// Deterministic `train_fraction` / rest split after a seeded shuffle.
    pub fn split(&self, train_fraction: f64, seed: u64) -> (Dataset, Dataset) {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        let mut rng = RngStream::new(seed, 0x5eed);
        idx.shuffle(rng.inner());
        let n_train = (self.len() as f64 * train_fraction).round() as usize;
        let take = |ids: &[usize]| Dataset {
            xs: ids.iter().map(|&i| self.xs[i].clone()).collect(),
            ys: ids.iter().map(|&i| self.ys[i]).collect(),
        };
        (take(&idx[..n_train]), take(&idx[n_train..]))
    }
}

/// Which column holds the label.
#[derive(Debug, Clone, PartialEq)]
pub enum LabelColumn {
    /// Column index; negative values count from the end.
    Index(i64),
    /// Header name.
    Name(String),
}

impl LabelColumn {
    pub fn parse(s: &str) -> Self {
        match s.parse::<i64>() {
            Ok(i) => LabelColumn::Index(i),
            Err(_) => LabelColumn::Name(s.to_string()),
        }
    }
}

fn is_number(s: &str) -> bool {
    s.trim().parse::<f64>().is_ok()
}

/// Reads a comma-separated file. A header is assumed when a feature column of
/// the first row is not numeric, or when the label column is given by name.
pub fn load_csv(path: &Path, label: &LabelColumn, classification: bool) -> Result<Dataset, DataError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| DataError::Io { path: path.display().to_string(), reason: e.to_string() })?;
    parse_csv(&text, label, classification)
}

pub fn parse_csv(text: &str, label: &LabelColumn, classification: bool) -> Result<Dataset, DataError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(text.as_bytes());
    let mut rows: Vec<csv::StringRecord> = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| DataError::Malformed { row: i + 1, reason: e.to_string() })?;
        rows.push(rec);
    }
    let first = rows.first().ok_or(DataError::Empty)?;
    let width = first.len();
    if width < 2 {
        return Err(DataError::Malformed { row: 1, reason: "need at least one feature and one label column".into() });
    }
    let (label_idx, has_header) = match label {
        LabelColumn::Index(i) => {
            let idx = if *i < 0 { width as i64 + i } else { *i };
            if idx < 0 || idx >= width as i64 {
                return Err(DataError::MissingLabelColumn(i.to_string()));
            }
            let idx = idx as usize;
            let header = first.iter().enumerate().any(|(c, v)| c != idx && !is_number(v));
            (idx, header)
        }
        LabelColumn::Name(name) => {
            let idx = first
                .iter()
                .position(|v| v.trim() == name)
                .ok_or_else(|| DataError::MissingLabelColumn(name.clone()))?;
            (idx, true)
        }
    };
    let body = if has_header { &rows[1..] } else { &rows[..] };
    if body.is_empty() {
        return Err(DataError::Empty);
    }
    let offset = usize::from(has_header) + 1;
    let mut xs = Vec::with_capacity(body.len());
    let mut ys = Vec::with_capacity(body.len());
    for (r, rec) in body.iter().enumerate() {
        let row = r + offset;
        if rec.len() != width {
            return Err(DataError::Malformed { row, reason: format!("{} fields, expected {width}", rec.len()) });
        }
        let mut x = Vec::with_capacity(width - 1);
        for (c, v) in rec.iter().enumerate() {
            let parsed = v.trim().parse::<f64>().ok().filter(|f| f.is_finite());
            let value = parsed.ok_or_else(|| DataError::NonNumeric { row, column: c + 1, value: v.to_string() })?;
            if c == label_idx {
                if classification && (value < 0.0 || value.fract() != 0.0) {
                    return Err(DataError::BadClassLabel { row, value: v.to_string() });
                }
                ys.push(value);
            } else {
                x.push(value);
            }
        }
        xs.push(x);
    }
    Ok(Dataset { xs, ys })
}

/// Synthetic streams: `gauss2` (two separable Gaussian classes in 2-d),
/// `noise` (uniform features, random binary labels), `sine` (1-d regression).
pub fn synthetic(name: &str, n: usize, seed: u64) -> Result<Dataset, DataError> {
    let mut rng = RngStream::new(seed, 0xda7a);
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    match name {
        "gauss2" => {
            let noise = Normal::new(0.0, 0.5).expect("valid sigma");
            for _ in 0..n {
                let class = usize::from(rng.uniform() < 0.5);
                let center = if class == 1 { 1.0 } else { -1.0 };
                xs.push(vec![center + noise.sample(rng.inner()), center + noise.sample(rng.inner())]);
                ys.push(class as f64);
            }
        }
        "noise" => {
            for _ in 0..n {
                xs.push(vec![rng.uniform(), rng.uniform()]);
                ys.push(f64::from(u8::from(rng.uniform() < 0.5)));
            }
        }
        "sine" => {
            for _ in 0..n {
                let x = rng.uniform();
                let y = 0.9 * (2.0 * std::f64::consts::PI * x).sin() + rng.uniform_between(-0.1, 0.1);
                xs.push(vec![x]);
                ys.push(y);
            }
        }
        other => return Err(DataError::UnknownSynthetic(other.to_string())),
    }
    Ok(Dataset { xs, ys })
}
