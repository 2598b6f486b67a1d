//! Uplift modeling with knowledge distillation from an uplift decision tree
//! into a gradient-trained response model.
//!
//! The pipeline:
//!
//! 1. [`data`]: load or synthesize a randomized-trial dataset and split it.
//! 2. [`tree`]: fit the teacher, an uplift decision tree (ED or KL criterion).
//! 3. [`student`]: a feed-forward response model over `[X, T]` with a
//!    hand-written backward pass and Adam/SGD optimizers.
//! 4. [`distill`]: within-leaf counterfactual pair matching and the pairwise
//!    distillation loop, plus the single-sample ablation and the two-model and
//!    transformed-outcome baselines.
//! 5. [`metrics`]: uplift and Qini curves, AUUC and the Qini coefficient.

pub mod data;
pub mod distill;
pub mod metrics;
pub mod seed;
pub mod student;
pub mod tree;

pub use data::{Dataset, FeatureKind, FeatureSchema};
pub use metrics::RankingEval;
pub use student::{StudentConfig, StudentModel};
pub use tree::{TreeParams, UpliftTree};

/// Anything that scores a covariate row with a predicted treatment effect.
pub trait UpliftPredictor {
    fn predict_uplift(&self, row: &[f64]) -> f64;

    fn predict_uplift_all(&self, ds: &Dataset) -> Vec<f64> {
        ds.rows().map(|row| self.predict_uplift(row)).collect()
    }
}
