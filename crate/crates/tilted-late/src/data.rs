//! Typed observational dataset, CSV ingestion, and cross-fitting folds.
//!
//! A row is `O = (X, Z, A, Y)`: covariates, a continuous instrument, a
//! binary treatment, and a real outcome. Datasets and fold assignments are
//! immutable after construction and safe to share across workers.

use std::path::Path;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::stream_rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub x: Vec<f64>,
    pub z: f64,
    /// Treatment indicator, validated to be exactly 0.0 or 1.0.
    pub a: f64,
    pub y: f64,
}

impl Observation {
    pub fn new(x: Vec<f64>, z: f64, a: f64, y: f64) -> Result<Self> {
        let obs = Observation { x, z, a, y };
        obs.validate(0)?;
        Ok(obs)
    }

    fn validate(&self, row: usize) -> Result<()> {
        if self.a != 0.0 && self.a != 1.0 {
            return Err(Error::NonBinaryTreatment { row, value: self.a });
        }
        if !self.z.is_finite() {
            return Err(Error::NonFiniteValue { row, column: "z".into() });
        }
        if !self.y.is_finite() {
            return Err(Error::NonFiniteValue { row, column: "y".into() });
        }
        for (j, v) in self.x.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFiniteValue { row, column: format!("x{}", j + 1) });
            }
        }
        Ok(())
    }
}

/// Column names used when loading from or writing to CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvSchema {
    pub x: Vec<String>,
    pub z: String,
    pub a: String,
    pub y: String,
}

impl CsvSchema {
    /// Default schema `x1..xd, z, a, y` used by the simulation writer.
    pub fn default_for_dim(d: usize) -> Self {
        CsvSchema {
            x: (1..=d).map(|j| format!("x{j}")).collect(),
            z: "z".into(),
            a: "a".into(),
            y: "y".into(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    observations: Vec<Observation>,
    d: usize,
    pub column_names: Option<CsvSchema>,
}

impl Dataset {
    /// Validates row dimensions, treatment codes, finiteness, and instrument
    /// non-degeneracy. Row order is preserved.
    pub fn new(observations: Vec<Observation>, column_names: Option<CsvSchema>) -> Result<Self> {
        if observations.len() < 2 {
            return Err(Error::TooFewRows(observations.len()));
        }
        let d = observations[0].x.len();
        if d < 1 {
            return Err(Error::InvalidInput("at least one covariate is required".into()));
        }
        for (i, obs) in observations.iter().enumerate() {
            if obs.x.len() != d {
                return Err(Error::DimensionMismatch { row: i, expected: d, got: obs.x.len() });
            }
            obs.validate(i)?;
        }
        let first = observations[0].z;
        if observations.iter().all(|o| o.z == first) {
            return Err(Error::DegenerateInstrument);
        }
        Ok(Dataset { observations, d, column_names })
    }

    pub fn n(&self) -> usize {
        self.observations.len()
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn rows(&self) -> &[Observation] {
        &self.observations
    }

    pub fn row(&self, i: usize) -> &Observation {
        &self.observations[i]
    }

    pub fn z_values(&self) -> Vec<f64> {
        self.observations.iter().map(|o| o.z).collect()
    }

    pub fn a_values(&self) -> Vec<f64> {
        self.observations.iter().map(|o| o.a).collect()
    }

    pub fn y_values(&self) -> Vec<f64> {
        self.observations.iter().map(|o| o.y).collect()
    }

    /// Index of a covariate column by name, if the dataset carries names.
    pub fn covariate_index(&self, name: &str) -> Option<usize> {
        self.column_names
            .as_ref()
            .and_then(|s| s.x.iter().position(|c| c == name))
    }

    /// Load a CSV file with a header row. Columns are selected by name;
    /// rows with missing or malformed fields are rejected.
    pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<Dataset> {
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
        let headers = reader.headers()?.clone();
        let col = |name: &str| -> Result<usize> {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::MissingColumn(name.to_string()))
        };
        let z_idx = col(&schema.z)?;
        let a_idx = col(&schema.a)?;
        let y_idx = col(&schema.y)?;
        if schema.x.is_empty() {
            return Err(Error::InvalidInput("schema must name at least one covariate".into()));
        }
        let x_idx: Vec<usize> = schema.x.iter().map(|c| col(c)).collect::<Result<_>>()?;

        let parse = |field: &str, row: usize, column: &str| -> Result<f64> {
            let trimmed = field.trim();
            if trimmed.is_empty() {
                return Err(Error::NonFiniteValue { row, column: column.to_string() });
            }
            trimmed
                .parse::<f64>()
                .map_err(|_| Error::NonFiniteValue { row, column: column.to_string() })
        };

        let mut observations = Vec::new();
        for (row, record) in reader.records().enumerate() {
            let record = record?;
            let field = |idx: usize, name: &str| -> Result<f64> {
                let raw = record
                    .get(idx)
                    .ok_or_else(|| Error::NonFiniteValue { row, column: name.to_string() })?;
                parse(raw, row, name)
            };
            let x = schema
                .x
                .iter()
                .zip(&x_idx)
                .map(|(name, &idx)| field(idx, name))
                .collect::<Result<Vec<f64>>>()?;
            let z = field(z_idx, &schema.z)?;
            let a = field(a_idx, &schema.a)?;
            let y = field(y_idx, &schema.y)?;
            if a != 0.0 && a != 1.0 {
                return Err(Error::NonBinaryTreatment { row, value: a });
            }
            observations.push(Observation { x, z, a, y });
        }
        Dataset::new(observations, Some(schema.clone()))
    }

    /// Write the dataset as CSV. Floats use the shortest round-trippable
    /// representation, so a write/load cycle reproduces the dataset exactly.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let schema = self
            .column_names
            .clone()
            .unwrap_or_else(|| CsvSchema::default_for_dim(self.d));
        let mut writer = csv::Writer::from_path(path)?;
        let mut header: Vec<String> = schema.x.clone();
        header.push(schema.z.clone());
        header.push(schema.a.clone());
        header.push(schema.y.clone());
        writer.write_record(&header)?;
        for obs in &self.observations {
            let mut record: Vec<String> = obs.x.iter().map(|v| format!("{v}")).collect();
            record.push(format!("{}", obs.z));
            record.push(format!("{}", obs.a));
            record.push(format!("{}", obs.y));
            writer.write_record(&record)?;
        }
        writer.flush()?;
        Ok(())
    }
}

/// Deterministic partition of `0..n` into `k` folds of near-equal size.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldAssignment {
    pub n: usize,
    pub k: usize,
    fold_of: Vec<usize>,
    pub seed: u64,
}

impl FoldAssignment {
    pub fn fold_of(&self, row: usize) -> usize {
        self.fold_of[row]
    }

    pub fn test_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.n).filter(|&i| self.fold_of[i] == fold).collect()
    }

    pub fn train_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.n).filter(|&i| self.fold_of[i] != fold).collect()
    }
}

/// Shuffle row indices with a seed-derived stream and deal them round-robin,
/// so fold sizes differ by at most one and the partition is a pure function
/// of `(n, k, seed)`.
pub fn make_folds(n: usize, k: usize, seed: u64) -> Result<FoldAssignment> {
    if k < 2 || k > n {
        return Err(Error::BadFoldCount { k, n });
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = stream_rng(seed, &[0xF01D]);
    order.shuffle(&mut rng);
    let mut fold_of = vec![0usize; n];
    for (pos, &row) in order.iter().enumerate() {
        fold_of[row] = pos % k;
    }
    Ok(FoldAssignment { n, k, fold_of, seed })
}
