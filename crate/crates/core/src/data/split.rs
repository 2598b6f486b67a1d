use super::{DataError, Dataset};
use crate::seed::{self, stream};
use rand::seq::SliceRandom;
use std::fmt::Write as _;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
}

impl SplitRatios {
    pub fn new(train: f64, valid: f64, test: f64) -> Result<Self, DataError> {
        let r = Self { train, valid, test };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let parts = [self.train, self.valid, self.test];
        if parts.iter().any(|p| !(p.is_finite() && *p > 0.0)) {
            return Err(DataError::Config(format!("split ratios must be positive, got {parts:?}")));
        }
        if (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(DataError::Config(format!("split ratios must sum to 1, got {parts:?}")));
        }
        Ok(())
    }
}

impl Default for SplitRatios {
    /// 3:1:1.
    fn default() -> Self {
        Self {
            train: 0.6,
            valid: 0.2,
            test: 0.2,
        }
    }
}

/// Row indices (into the source dataset, ascending) for each part.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitIndices {
    /// Sidecar text: a header comment then one line per part,
    /// `train <i> <i> ...`.
    pub fn to_text(&self, n: usize, seed: u64, ratios: &SplitRatios) -> String {
        let mut out = format!(
            "# kdsm split v1 n={n} seed={seed} ratios={},{},{}\n",
            ratios.train, ratios.valid, ratios.test
        );
        for (name, idx) in [("train", &self.train), ("valid", &self.valid), ("test", &self.test)] {
            out.push_str(name);
            for i in idx {
                write!(out, " {i}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn parse_text(text: &str) -> Result<Self, DataError> {
        let (mut train, mut valid, mut test) = (None, None, None);
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_whitespace();
            let name = parts.next().unwrap_or_default();
            let idx: Vec<usize> = parts
                .map(|p| {
                    p.parse()
                        .map_err(|_| DataError::Config(format!("bad row index {p:?} in split file")))
                })
                .collect::<Result<_, _>>()?;
            match name {
                "train" => train = Some(idx),
                "valid" => valid = Some(idx),
                "test" => test = Some(idx),
                other => return Err(DataError::Config(format!("unknown split part {other:?}"))),
            }
        }
        let missing = |p: &str| DataError::Config(format!("split file has no `{p}` line"));
        Ok(Self {
            train: train.ok_or_else(|| missing("train"))?,
            valid: valid.ok_or_else(|| missing("valid"))?,
            test: test.ok_or_else(|| missing("test"))?,
        })
    }

    /// Checks that the three parts partition `0..n`.
    pub fn check_partition(&self, n: usize) -> Result<(), DataError> {
        let mut seen = vec![false; n];
        for &i in self.train.iter().chain(&self.valid).chain(&self.test) {
            if i >= n || seen[i] {
                return Err(DataError::Config(format!(
                    "split does not partition {n} rows (index {i})"
                )));
            }
            seen[i] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(DataError::Config(format!("split does not cover all {n} rows")));
        }
        Ok(())
    }

    pub fn apply(&self, ds: &Dataset) -> Result<(Dataset, Dataset, Dataset), DataError> {
        self.check_partition(ds.n_rows())?;
        Ok((ds.subset(&self.train), ds.subset(&self.valid), ds.subset(&self.test)))
    }
}

#[derive(Debug, Clone)]
pub struct SplitOutcome {
    pub train: Dataset,
    pub valid: Dataset,
    pub test: Dataset,
    pub indices: SplitIndices,
    pub warnings: Vec<String>,
}

/// Stratified split on the `(treatment, outcome)` pair.
///
/// Each stratum is shuffled with its own seeded stream and cut at
/// `round(m * train)` and `round(m * valid)`; the remainder goes to test.
/// Indices within each part are returned in ascending order.
pub fn split_dataset(ds: &Dataset, ratios: SplitRatios, seed: u64) -> Result<SplitOutcome, DataError> {
    ratios.validate()?;
    let n = ds.n_rows();
    if n < 10 {
        return Err(DataError::TooFewRows { n, min: 10 });
    }
    let mut strata: [Vec<usize>; 4] = Default::default();
    for i in 0..n {
        strata[(ds.treatment()[i] * 2 + ds.outcome()[i]) as usize].push(i);
    }
    let mut warnings = Vec::new();
    let mut indices = SplitIndices {
        train: Vec::new(),
        valid: Vec::new(),
        test: Vec::new(),
    };
    for (s, rows) in strata.iter_mut().enumerate() {
        if rows.is_empty() {
            warnings.push(format!(
                "stratum (T={}, Y={}) is empty",
                s / 2,
                s % 2
            ));
            continue;
        }
        let mut rng = seed::derived_rng(seed, stream::STRATUM, s as u64);
        rows.shuffle(&mut rng);
        let m = rows.len();
        let n_train = ((m as f64 * ratios.train).round() as usize).min(m);
        let n_valid = ((m as f64 * ratios.valid).round() as usize).min(m - n_train);
        indices.train.extend_from_slice(&rows[..n_train]);
        indices.valid.extend_from_slice(&rows[n_train..n_train + n_valid]);
        indices.test.extend_from_slice(&rows[n_train + n_valid..]);
    }
    indices.train.sort_unstable();
    indices.valid.sort_unstable();
    indices.test.sort_unstable();
    let (train, valid, test) = (ds.subset(&indices.train), ds.subset(&indices.valid), ds.subset(&indices.test));
    Ok(SplitOutcome {
        train,
        valid,
        test,
        indices,
        warnings,
    })
}

/// Uniform subsample of `n_per_arm` rows from each treatment arm (all rows of
/// an arm if it is smaller). Returned rows keep their original order.
pub fn subsample_per_arm(ds: &Dataset, n_per_arm: usize, seed: u64) -> Dataset {
    let mut keep = Vec::new();
    for arm in [0u8, 1] {
        let mut rows: Vec<usize> = (0..ds.n_rows()).filter(|&i| ds.treatment()[i] == arm).collect();
        let mut rng = seed::derived_rng(seed, stream::SUBSAMPLE, arm as u64);
        rows.shuffle(&mut rng);
        rows.truncate(n_per_arm);
        keep.extend(rows);
    }
    keep.sort_unstable();
    ds.subset(&keep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Column, FeatureSchema};

    fn balanced(n: usize) -> Dataset {
        let schema = FeatureSchema::new(vec![Column::numeric("x")]).unwrap();
        let features = (0..n).map(|i| i as f64).collect();
        let treatment = (0..n).map(|i| (i % 2) as u8).collect();
        let outcome = (0..n).map(|i| ((i / 2) % 2) as u8).collect();
        Dataset::new(schema, features, treatment, outcome).unwrap()
    }

    #[test]
    fn sizes_follow_ratios() {
        let out = split_dataset(&balanced(100), SplitRatios::default(), 7).unwrap();
        assert_eq!(out.train.n_rows(), 60);
        assert_eq!(out.valid.n_rows(), 20);
        assert_eq!(out.test.n_rows(), 20);
        assert!(out.warnings.is_empty());
        out.indices.check_partition(100).unwrap();
    }

    #[test]
    fn same_seed_same_partition_other_seed_differs() {
        let ds = balanced(100);
        let a = split_dataset(&ds, SplitRatios::default(), 7).unwrap();
        let b = split_dataset(&ds, SplitRatios::default(), 7).unwrap();
        let c = split_dataset(&ds, SplitRatios::default(), 8).unwrap();
        assert_eq!(a.indices, b.indices);
        assert_ne!(a.indices.train, c.indices.train);
    }

    #[test]
    fn empty_stratum_is_a_warning() {
        let schema = FeatureSchema::new(vec![Column::numeric("x")]).unwrap();
        let n = 20;
        let ds = Dataset::new(
            schema,
            (0..n).map(|i| i as f64).collect(),
            (0..n).map(|i| (i % 2) as u8).collect(),
            vec![0; n],
        )
        .unwrap();
        let out = split_dataset(&ds, SplitRatios::default(), 1).unwrap();
        assert_eq!(out.warnings.len(), 2);
        out.indices.check_partition(n).unwrap();
    }

    #[test]
    fn too_few_rows_rejected() {
        assert!(matches!(
            split_dataset(&balanced(9), SplitRatios::default(), 1),
            Err(DataError::TooFewRows { n: 9, .. })
        ));
    }

    #[test]
    fn bad_ratios_rejected() {
        assert!(SplitRatios::new(0.5, 0.5, 0.0).is_err());
        assert!(SplitRatios::new(0.6, 0.2, 0.3).is_err());
        assert!(SplitRatios::new(0.6, 0.2, 0.2).is_ok());
    }

    #[test]
    fn sidecar_round_trip() {
        let out = split_dataset(&balanced(50), SplitRatios::default(), 3).unwrap();
        let text = out.indices.to_text(50, 3, &SplitRatios::default());
        assert_eq!(SplitIndices::parse_text(&text).unwrap(), out.indices);
    }

    #[test]
    fn subsample_takes_n_per_arm() {
        let ds = balanced(100);
        let s = subsample_per_arm(&ds, 10, 4);
        assert_eq!(s.n_rows(), 20);
        assert_eq!(s.n_treated(), 10);
    }
}
