use super::{Column, DataError, Dataset, FeatureSchema};
use crate::seed;
use rand::Rng;

/// Built-in treatment-effect shapes. `x0`, `x1` are the first two numeric
/// covariates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EffectFunction {
    /// `primary * [x0 > 0.5] + secondary * [x1 > 0.5]`.
    Piecewise { primary: f64, secondary: f64 },
    /// `magnitude * clamp(2 (x0 + x1 - 1), -1, 1)`.
    LinearClipped { magnitude: f64 },
    Zero,
}

impl EffectFunction {
    pub fn eval(&self, numeric: &[f64]) -> f64 {
        match *self {
            EffectFunction::Piecewise { primary, secondary } => {
                let mut tau = 0.0;
                if numeric[0] > 0.5 {
                    tau += primary;
                }
                if secondary != 0.0 && numeric[1] > 0.5 {
                    tau += secondary;
                }
                tau
            }
            EffectFunction::LinearClipped { magnitude } => {
                magnitude * (2.0 * (numeric[0] + numeric[1] - 1.0)).clamp(-1.0, 1.0)
            }
            EffectFunction::Zero => 0.0,
        }
    }

    /// `(min, max)` of the effect over the unit cube.
    pub fn range(&self) -> (f64, f64) {
        match *self {
            EffectFunction::Piecewise { primary, secondary } => {
                let corners = [0.0, primary, secondary, primary + secondary];
                (
                    corners.iter().copied().fold(f64::INFINITY, f64::min),
                    corners.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                )
            }
            EffectFunction::LinearClipped { magnitude } => (-magnitude.abs(), magnitude.abs()),
            EffectFunction::Zero => (0.0, 0.0),
        }
    }

    fn numeric_features_needed(&self) -> usize {
        match *self {
            EffectFunction::Piecewise { secondary, .. } if secondary == 0.0 => 1,
            EffectFunction::Piecewise { .. } | EffectFunction::LinearClipped { .. } => 2,
            EffectFunction::Zero => 0,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            EffectFunction::Piecewise { .. } => "piecewise",
            EffectFunction::LinearClipped { .. } => "linear-clipped",
            EffectFunction::Zero => "zero",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub n: usize,
    pub d_numeric: usize,
    pub d_categorical: usize,
    /// Levels of every categorical covariate.
    pub cardinality: usize,
    pub base_rate: f64,
    pub effect: EffectFunction,
    pub treatment_fraction: f64,
    pub noise_features: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n: 50_000,
            d_numeric: 4,
            d_categorical: 2,
            cardinality: 4,
            base_rate: 0.02,
            effect: EffectFunction::Piecewise {
                primary: 0.04,
                secondary: 0.0,
            },
            treatment_fraction: 0.5,
            noise_features: 2,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        let open_unit = |name: &str, p: f64| {
            if p > 0.0 && p < 1.0 {
                Ok(())
            } else {
                Err(DataError::Config(format!("{name} must lie in (0, 1), got {p}")))
            }
        };
        open_unit("base_rate", self.base_rate)?;
        open_unit("treatment_fraction", self.treatment_fraction)?;
        if self.n == 0 {
            return Err(DataError::Config("n must be positive".into()));
        }
        if self.d_categorical > 0 && self.cardinality < 2 {
            return Err(DataError::Config("categorical cardinality must be >= 2".into()));
        }
        let needed = self.effect.numeric_features_needed();
        if self.d_numeric < needed {
            return Err(DataError::Config(format!(
                "effect `{}` needs {needed} numeric features, got {}",
                self.effect.name(),
                self.d_numeric
            )));
        }
        let (lo, hi) = self.effect.range();
        if !(lo.is_finite() && hi.is_finite()) || self.base_rate + hi > 1.0 || self.base_rate + lo < 0.0 {
            return Err(DataError::Config(format!(
                "base_rate {} with effect range [{lo}, {hi}] leaves [0, 1]",
                self.base_rate
            )));
        }
        Ok(())
    }

    /// Columns: `x0..` numeric, `noise0..` numeric, `c0..` categorical.
    pub fn schema(&self) -> FeatureSchema {
        let mut cols = Vec::new();
        cols.extend((0..self.d_numeric).map(|j| Column::numeric(format!("x{j}"))));
        cols.extend((0..self.noise_features).map(|j| Column::numeric(format!("noise{j}"))));
        cols.extend((0..self.d_categorical).map(|j| Column::categorical(format!("c{j}"), self.cardinality)));
        FeatureSchema::new(cols).expect("generated names are unique")
    }
}

/// Draws an RCT sample with outcome probability `base_rate + T * tau(x)`.
///
/// Numeric covariates are uniform on `[0, 1]`, categorical ones uniform over
/// codes, and treatment is an independent Bernoulli draw. Returns the dataset
/// and the realized `tau(x)` per row.
pub fn gen_synthetic(cfg: &SyntheticConfig) -> Result<(Dataset, Vec<f64>), DataError> {
    cfg.validate()?;
    let schema = cfg.schema();
    let d = schema.len();
    let mut rng = seed::rng(cfg.seed);
    let mut features = Vec::with_capacity(cfg.n * d);
    let mut treatment = Vec::with_capacity(cfg.n);
    let mut outcome = Vec::with_capacity(cfg.n);
    let mut cate = Vec::with_capacity(cfg.n);
    let mut row = vec![0.0; d];
    for i in 0..cfg.n {
        for (j, cell) in row.iter_mut().enumerate() {
            *cell = if j < cfg.d_numeric + cfg.noise_features {
                rng.gen::<f64>()
            } else {
                rng.gen_range(0..cfg.cardinality) as f64
            };
        }
        let tau = cfg.effect.eval(&row[..cfg.d_numeric]);
        let t = u8::from(rng.gen::<f64>() < cfg.treatment_fraction);
        let p = cfg.base_rate + f64::from(t) * tau;
        if !(0.0..=1.0).contains(&p) {
            return Err(DataError::Construction(format!("row {i}: outcome probability {p}")));
        }
        let y = u8::from(rng.gen::<f64>() < p);
        features.extend_from_slice(&row);
        treatment.push(t);
        outcome.push(y);
        cate.push(tau);
    }
    Ok((Dataset::new(schema, features, treatment, outcome)?, cate))
}
