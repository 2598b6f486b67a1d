//! Randomized-trial datasets: schema, container, CSV ingestion, stratified
//! splitting and a synthetic generator with known treatment effects.

mod csv_io;
mod split;
mod synthetic;

pub use csv_io::{load_csv, read_csv, write_csv};
pub use split::{split_dataset, subsample_per_arm, SplitIndices, SplitOutcome, SplitRatios};
pub use synthetic::{gen_synthetic, EffectFunction, SyntheticConfig};

use sha2::{Digest, Sha256};
use std::collections::HashSet;
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid schema: {0}")]
    Schema(String),
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("data row {row}, column `{column}`: cannot parse {value:?}")]
    Parse {
        row: usize,
        column: String,
        value: String,
    },
    #[error("data row {row}, column `{column}`: value {value:?} outside the allowed domain ({expected})")]
    Domain {
        row: usize,
        column: String,
        value: String,
        expected: String,
    },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("need at least {min} rows, got {n}")]
    TooFewRows { n: usize, min: usize },
    #[error("construction error: {0}")]
    Construction(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureKind {
    Numeric,
    Categorical { cardinality: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Column {
    pub name: String,
    pub kind: FeatureKind,
}

impl Column {
    pub fn numeric(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            kind: FeatureKind::Numeric,
        }
    }

    pub fn categorical(name: impl Into<String>, cardinality: usize) -> Self {
        Self {
            name: name.into(),
            kind: FeatureKind::Categorical { cardinality },
        }
    }
}

/// Ordered covariate columns. Names are unique and every categorical column
/// has at least two levels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureSchema {
    columns: Vec<Column>,
}

impl FeatureSchema {
    pub fn new(columns: Vec<Column>) -> Result<Self, DataError> {
        let mut seen = HashSet::new();
        for c in &columns {
            if c.name.is_empty() || c.name.contains(',') || c.name.contains(char::is_whitespace) {
                return Err(DataError::Schema(format!("bad column name {:?}", c.name)));
            }
            if !seen.insert(c.name.as_str()) {
                return Err(DataError::Schema(format!("duplicate column `{}`", c.name)));
            }
            if let FeatureKind::Categorical { cardinality } = c.kind {
                if cardinality < 2 {
                    return Err(DataError::Schema(format!(
                        "categorical column `{}` needs cardinality >= 2, got {cardinality}",
                        c.name
                    )));
                }
            }
        }
        Ok(Self { columns })
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn kind(&self, feature: usize) -> FeatureKind {
        self.columns[feature].kind
    }

    pub fn numeric_indices(&self) -> Vec<usize> {
        (0..self.len())
            .filter(|&j| self.columns[j].kind == FeatureKind::Numeric)
            .collect()
    }

    /// `(column index, cardinality)` for every categorical column.
    pub fn categorical_indices(&self) -> Vec<(usize, usize)> {
        self.columns
            .iter()
            .enumerate()
            .filter_map(|(j, c)| match c.kind {
                FeatureKind::Categorical { cardinality } => Some((j, cardinality)),
                FeatureKind::Numeric => None,
            })
            .collect()
    }

    /// Line-oriented text form: `name,numeric` or `name,categorical,<cardinality>`.
    pub fn to_text(&self) -> String {
        let mut out = String::from("# kdsm schema v1\n");
        for c in &self.columns {
            match c.kind {
                FeatureKind::Numeric => out.push_str(&format!("{},numeric\n", c.name)),
                FeatureKind::Categorical { cardinality } => {
                    out.push_str(&format!("{},categorical,{cardinality}\n", c.name))
                }
            }
        }
        out
    }

    pub fn parse_text(text: &str) -> Result<Self, DataError> {
        let mut columns = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parts: Vec<&str> = line.split(',').map(str::trim).collect();
            let bad = || DataError::Schema(format!("line {}: cannot parse {line:?}", lineno + 1));
            let column = match parts.as_slice() {
                [name, "numeric"] => Column::numeric(*name),
                [name, "categorical", card] => {
                    Column::categorical(*name, card.parse().map_err(|_| bad())?)
                }
                _ => return Err(bad()),
            };
            columns.push(column);
        }
        Self::new(columns)
    }

    /// Short hex digest of the canonical text form; serialized models and
    /// trees carry it so that mismatched data is rejected on load.
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

impl fmt::Display for FeatureSchema {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.columns.iter().map(|c| c.name.as_str()).collect();
        write!(f, "[{}]", names.join(", "))
    }
}

/// An immutable randomized-trial sample.
///
/// Features are stored row-major; categorical cells hold their integer code
/// as an `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    schema: FeatureSchema,
    features: Vec<f64>,
    treatment: Vec<u8>,
    outcome: Vec<u8>,
}

impl Dataset {
    pub fn new(
        schema: FeatureSchema,
        features: Vec<f64>,
        treatment: Vec<u8>,
        outcome: Vec<u8>,
    ) -> Result<Self, DataError> {
        let ds = Self {
            schema,
            features,
            treatment,
            outcome,
        };
        ds.validate()?;
        Ok(ds)
    }

    /// Checks every container invariant.
    pub fn validate(&self) -> Result<(), DataError> {
        let n = self.treatment.len();
        let d = self.schema.len();
        if self.outcome.len() != n {
            return Err(DataError::Shape(format!(
                "treatment has {n} rows but outcome has {}",
                self.outcome.len()
            )));
        }
        if self.features.len() != n * d {
            return Err(DataError::Shape(format!(
                "feature buffer has {} cells, expected {n} x {d}",
                self.features.len()
            )));
        }
        for i in 0..n {
            for (name, v) in [("treatment", self.treatment[i]), ("outcome", self.outcome[i])] {
                if v > 1 {
                    return Err(DataError::Domain {
                        row: i,
                        column: name.into(),
                        value: v.to_string(),
                        expected: "0 or 1".into(),
                    });
                }
            }
            let row = &self.features[i * d..(i + 1) * d];
            for (j, &x) in row.iter().enumerate() {
                let col = &self.schema.columns[j];
                let ok = match col.kind {
                    FeatureKind::Numeric => x.is_finite(),
                    FeatureKind::Categorical { cardinality } => {
                        x >= 0.0 && x.fract() == 0.0 && (x as usize) < cardinality
                    }
                };
                if !ok {
                    return Err(DataError::Domain {
                        row: i,
                        column: col.name.clone(),
                        value: x.to_string(),
                        expected: match col.kind {
                            FeatureKind::Numeric => "finite real".into(),
                            FeatureKind::Categorical { cardinality } => {
                                format!("integer code in [0, {cardinality})")
                            }
                        },
                    });
                }
            }
        }
        Ok(())
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn n_rows(&self) -> usize {
        self.treatment.len()
    }

    pub fn n_features(&self) -> usize {
        self.schema.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.schema.len();
        &self.features[i * d..(i + 1) * d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        (0..self.n_rows()).map(move |i| self.row(i))
    }

    pub fn value(&self, i: usize, feature: usize) -> f64 {
        self.features[i * self.schema.len() + feature]
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn treatment(&self) -> &[u8] {
        &self.treatment
    }

    pub fn outcome(&self) -> &[u8] {
        &self.outcome
    }

    pub fn n_treated(&self) -> usize {
        self.treatment.iter().filter(|&&t| t == 1).count()
    }

    pub fn positive_rate(&self) -> f64 {
        self.outcome.iter().map(|&y| y as f64).sum::<f64>() / self.n_rows().max(1) as f64
    }

    /// Rows in the given order. Indices must be in range.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let d = self.schema.len();
        let mut features = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            features.extend_from_slice(self.row(i));
        }
        Dataset {
            schema: self.schema.clone(),
            features,
            treatment: indices.iter().map(|&i| self.treatment[i]).collect(),
            outcome: indices.iter().map(|&i| self.outcome[i]).collect(),
        }
    }
}
