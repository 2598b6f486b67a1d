//! The student: a feed-forward response model over `[X, T]`.
//!
//! Input layout is `[standardized numeric features ‖ categorical embeddings ‖
//! treatment bit]`, followed by dense hidden layers and a scalar output. All
//! parameters live in one flat vector described by [`ParamLayout`], so a
//! gradient is just another vector of the same length.

mod backward;
mod io;
mod model;
mod optim;

pub use backward::{batch_gradient, unit_loss, LossParts, LossUnit, Obs};
pub use model::{Head, Normalizer, ParamLayout, StudentModel};
pub use optim::{GradientBuffer, Optimizer};

use std::fmt;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StudentError {
    #[error("invalid student config: {0}")]
    Config(String),
    #[error("input feature {feature} is not usable: {value}")]
    Input { feature: usize, value: f64 },
    #[error("input has {found} features, model expects {expected}")]
    Width { expected: usize, found: usize },
    #[error("non-finite gradient at {path}")]
    NonFiniteGradient { path: String },
    #[error("model schema {found} does not match data schema {expected}")]
    SchemaMismatch { expected: String, found: String },
    #[error("model file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    pub fn as_str(&self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        }
    }
}

impl FromStr for Activation {
    type Err = StudentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(StudentError::Config(format!("unknown activation {other:?} (expected relu or tanh)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    Sgd { momentum: f64 },
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OptimizerKind::Sgd { momentum } => write!(f, "sgd:{momentum}"),
            OptimizerKind::Adam { beta1, beta2, eps } => write!(f, "adam:{beta1}:{beta2}:{eps}"),
        }
    }
}

impl FromStr for OptimizerKind {
    type Err = StudentError;

    /// `sgd`, `sgd:<momentum>`, `adam` or `adam:<beta1>:<beta2>:<eps>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || StudentError::Config(format!("bad optimizer {s:?}"));
        let parts: Vec<&str> = s.split(':').collect();
        let num = |p: &str| p.parse::<f64>().map_err(|_| bad());
        match parts.as_slice() {
            ["sgd"] => Ok(OptimizerKind::Sgd { momentum: 0.0 }),
            ["sgd", m] => Ok(OptimizerKind::Sgd { momentum: num(m)? }),
            ["adam"] => Ok(OptimizerKind::default()),
            ["adam", b1, b2, eps] => Ok(OptimizerKind::Adam {
                beta1: num(b1)?,
                beta2: num(b2)?,
                eps: num(eps)?,
            }),
            _ => Err(bad()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudentConfig {
    pub hidden_sizes: Vec<usize>,
    /// Shared by every categorical column.
    pub embedding_dim: usize,
    pub activation: Activation,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub lr_decay_factor: f64,
    /// Epochs without validation improvement before the rate is decayed.
    pub lr_decay_patience: usize,
    pub init_seed: u64,
}

impl Default for StudentConfig {
    fn default() -> Self {
        Self {
            hidden_sizes: vec![64, 32],
            embedding_dim: 8,
            activation: Activation::Relu,
            optimizer: OptimizerKind::default(),
            learning_rate: 1e-2,
            lr_decay_factor: 0.1,
            lr_decay_patience: 3,
            init_seed: 0,
        }
    }
}

impl StudentConfig {
    pub fn validate(&self) -> Result<(), StudentError> {
        let bad = |m: String| Err(StudentError::Config(m));
        if self.hidden_sizes.contains(&0) {
            return bad("hidden sizes must be positive".into());
        }
        if self.embedding_dim == 0 {
            return bad("embedding_dim must be positive".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor < 1.0) {
            return bad(format!("lr_decay_factor must be in (0, 1), got {}", self.lr_decay_factor));
        }
        if self.lr_decay_patience == 0 {
            return bad("lr_decay_patience must be at least 1".into());
        }
        match self.optimizer {
            OptimizerKind::Sgd { momentum } if !(0.0..1.0).contains(&momentum) => {
                bad(format!("sgd momentum must be in [0, 1), got {momentum}"))
            }
            OptimizerKind::Adam { beta1, beta2, eps }
                if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(eps > 0.0) =>
            {
                bad(format!("bad adam parameters {}", self.optimizer))
            }
            _ => Ok(()),
        }
    }
}

/// Binary cross-entropy with the prediction clamped to `[1e-7, 1 - 1e-7]`.
pub fn bce(y: u8, y_hat: f64) -> f64 {
    let p = y_hat.clamp(PROB_EPS, 1.0 - PROB_EPS);
    if y == 1 {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

pub(crate) const PROB_EPS: f64 = 1e-7;
pub(crate) const LOGIT_CLAMP: f64 = 30.0;

pub(crate) fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bce_values() {
        assert!((bce(1, 1.0 - 1e-7) - 1e-7).abs() < 1e-12);
        assert!((bce(0, 0.5) - 2f64.ln()).abs() < 1e-15);
        assert!((bce(1, 0.1) - 2.302585092994046).abs() < 1e-12);
        assert!(bce(0, 1.0).is_finite() && bce(1, 0.0).is_finite());
    }

    #[test]
    fn config_parsing_and_validation() {
        assert_eq!("sgd:0.5".parse::<OptimizerKind>().unwrap(), OptimizerKind::Sgd { momentum: 0.5 });
        let adam: OptimizerKind = "adam".parse().unwrap();
        assert_eq!(adam.to_string().parse::<OptimizerKind>().unwrap(), adam);
        assert!("rmsprop".parse::<OptimizerKind>().is_err());
        assert!("gelu".parse::<Activation>().is_err());
        StudentConfig::default().validate().unwrap();
        let bad = StudentConfig { lr_decay_factor: 1.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = StudentConfig { hidden_sizes: vec![4, 0], ..Default::default() };
        assert!(bad.validate().is_err());
    }
}
