//! Tabular regression data: CSV ingestion, categorical encoding, filtering,
//! downsampling, and standardization.

use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};

/// Feature matrix (row-major) and responses, after preprocessing.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub feature_names: Vec<String>,
    /// `rows[j]` is the feature vector of data point `j`.
    pub rows: Vec<Vec<f64>>,
    pub responses: Vec<f64>,
    /// Per-feature (mean, std) removed during standardization.
    pub feature_scaling: Vec<(f64, f64)>,
    /// Response (mean, std), when the response was standardized.
    pub response_scaling: Option<(f64, f64)>,
}

/// Describes which CSV columns to read and how to clean them.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub response: String,
    pub features: Vec<String>,
    /// Binary responses are kept as 0/1; others are standardized.
    pub binary_response: bool,
    /// Keep only the first `max_rows` rows after filtering.
    pub max_rows: Option<usize>,
}

impl DatasetSpec {
    /// Boston housing: 13 features, median value response.
    pub fn boston() -> Self {
        Self {
            response: "medv".into(),
            features: [
                "crim", "zn", "indus", "chas", "nox", "rm", "age", "dis", "rad", "tax", "ptratio", "b", "lstat",
            ]
            .map(String::from)
            .to_vec(),
            binary_response: false,
            max_rows: None,
        }
    }

    /// Bank marketing: 8 client features, subscription label, first 400 rows.
    pub fn bank() -> Self {
        Self {
            response: "y".into(),
            features: [
                "age", "marital", "balance", "housing", "duration", "campaign", "pdays", "previous",
            ]
            .map(String::from)
            .to_vec(),
            binary_response: true,
            max_rows: Some(400),
        }
    }
}

impl Dataset {
    /// Standardize `rows` column-wise (and the response unless binary).
    pub fn standardized(
        feature_names: Vec<String>,
        rows: Vec<Vec<f64>>,
        responses: Vec<f64>,
        binary_response: bool,
    ) -> Result<Self> {
        let p = feature_names.len();
        if rows.len() != responses.len() {
            return Err(Error::Dataset(format!(
                "{} feature rows but {} responses",
                rows.len(),
                responses.len()
            )));
        }
        if rows.iter().any(|r| r.len() != p) {
            return Err(Error::Dataset("ragged feature rows".into()));
        }
        let mut rows = rows;
        let mut feature_scaling = Vec::with_capacity(p);
        for (c, name) in feature_names.iter().enumerate() {
            let col: Vec<f64> = rows.iter().map(|r| r[c]).collect();
            let (m, s) = mean_std(&col, name)?;
            for r in rows.iter_mut() {
                r[c] = (r[c] - m) / s;
            }
            feature_scaling.push((m, s));
        }
        let mut responses = responses;
        let response_scaling = if binary_response {
            if responses.iter().any(|&y| y != 0.0 && y != 1.0) {
                return Err(Error::Dataset("binary response outside {0, 1}".into()));
            }
            None
        } else {
            let (m, s) = mean_std(&responses, "response")?;
            for y in responses.iter_mut() {
                *y = (*y - m) / s;
            }
            Some((m, s))
        };
        Ok(Self {
            feature_names,
            rows,
            responses,
            feature_scaling,
            response_scaling,
        })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn num_features(&self) -> usize {
        self.feature_names.len()
    }

    /// An empty dataset with `p` feature columns.
    pub fn empty(p: usize) -> Self {
        Self {
            feature_names: (0..p).map(|i| format!("x{i}")).collect(),
            rows: Vec::new(),
            responses: Vec::new(),
            feature_scaling: vec![(0.0, 1.0); p],
            response_scaling: None,
        }
    }
}

fn mean_std(col: &[f64], name: &str) -> Result<(f64, f64)> {
    if col.is_empty() {
        return Ok((0.0, 1.0));
    }
    let n = col.len() as f64;
    let m = col.iter().sum::<f64>() / n;
    let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
    let s = var.sqrt();
    if !(s > 0.0) || !s.is_finite() {
        return Err(Error::Dataset(format!("column {name} has zero variance")));
    }
    Ok((m, s))
}

/// Numeric value of a cell; yes/no and marital categories map to 1/0.
fn encode(cell: &str) -> Option<f64> {
    let c = cell.trim().trim_matches('"');
    match c.to_ascii_lowercase().as_str() {
        "yes" | "married" => Some(1.0),
        "no" | "single" | "divorced" => Some(0.0),
        _ => c.parse().ok(),
    }
}

/// Parse CSV text (comma or semicolon separated, header required).
pub fn parse_regression_dataset<R: Read>(mut reader: R, spec: &DatasetSpec) -> Result<Dataset> {
    let mut text = String::new();
    reader
        .read_to_string(&mut text)
        .map_err(|e| Error::Dataset(e.to_string()))?;
    let header_line = text.lines().next().unwrap_or("");
    let delimiter = if !header_line.contains(',') && header_line.contains(';') {
        b';'
    } else {
        b','
    };
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(true)
        .from_reader(text.as_bytes());
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::Dataset(e.to_string()))?
        .iter()
        .map(|h| h.trim().trim_matches('"').to_ascii_lowercase())
        .collect();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h == &name.to_ascii_lowercase())
            .ok_or_else(|| Error::Dataset(format!("missing column {name}")))
    };
    let feature_idx = spec.features.iter().map(|f| column(f)).collect::<Result<Vec<_>>>()?;
    let response_idx = column(&spec.response)?;

    let mut rows = Vec::new();
    let mut responses = Vec::new();
    for (line, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| Error::Dataset(e.to_string()))?;
        let cell = |i: usize| record.get(i).unwrap_or("").trim().trim_matches('"');
        let used = feature_idx.iter().chain(std::iter::once(&response_idx));
        if used.clone().any(|&i| cell(i).eq_ignore_ascii_case("unknown")) {
            continue;
        }
        let mut row = Vec::with_capacity(feature_idx.len());
        for &i in &feature_idx {
            row.push(
                encode(cell(i))
                    .ok_or_else(|| Error::Dataset(format!("row {}: non-numeric cell {:?}", line + 2, cell(i))))?,
            );
        }
        let y = encode(cell(response_idx)).ok_or_else(|| {
            Error::Dataset(format!(
                "row {}: non-numeric response {:?}",
                line + 2,
                cell(response_idx)
            ))
        })?;
        rows.push(row);
        responses.push(y);
        if spec.max_rows.is_some_and(|m| rows.len() >= m) {
            break;
        }
    }
    if let Some(m) = spec.max_rows {
        if rows.len() < m {
            return Err(Error::Dataset(format!("only {} usable rows, expected {m}", rows.len())));
        }
    }
    Dataset::standardized(spec.features.clone(), rows, responses, spec.binary_response)
}

pub fn load_regression_dataset(path: impl AsRef<Path>, spec: &DatasetSpec) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))?;
    parse_regression_dataset(std::io::BufReader::new(file), spec)
}
