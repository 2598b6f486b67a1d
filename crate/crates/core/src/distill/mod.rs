//! Distillation from the uplift tree into the student.
//!
//! Before every epoch the training rows are matched into counterfactual pairs:
//! within each leaf of the teacher, treated and control rows are shuffled and
//! zipped. A pair carries its leaf's uplift `u_tea` and is trained with
//!
//! `bce(y_t, f(x_t, 1)) + bce(y_c, f(x_c, 0)) + lambda * (u_tea - (f(x_t, 1) - f(x_c, 0)))^2`.
//!
//! Rows of a leaf's larger arm that find no partner are kept as plain
//! cross-entropy singletons unless leftovers are dropped.

mod report;
mod train;

pub use report::{EpochRecord, TrainReport};
pub use train::{
    train_kdsm, train_kdss, train_mom, train_plain, train_two_model, train_two_model_on_arms, transformed_outcome,
    PlainStream, TwoModel,
};

use crate::data::{DataError, Dataset};
use crate::metrics::MetricsError;
use crate::seed::{self, stream};
use crate::student::{LossParts, LossUnit, Obs, StudentError, StudentModel};
use crate::tree::{TreeError, UpliftTree};
use rand::seq::SliceRandom;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DistillError {
    #[error("invalid hyper-parameters: {0}")]
    Config(String),
    #[error("cannot fit: {0}")]
    Fit(String),
    #[error("invalid epoch plan: {0}")]
    Plan(String),
    #[error(transparent)]
    Student(#[from] StudentError),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// One treated and one control training row routed to the same leaf.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplePair {
    pub treated_row: usize,
    pub control_row: usize,
    pub leaf_id: usize,
    pub u_tea: f64,
}

/// The matching for one epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochPlan {
    pub pairs: Vec<SamplePair>,
    pub leftovers: Vec<usize>,
    pub epoch_seed: u64,
}

impl EpochPlan {
    /// Re-derives every invariant from the data and the tree: pairs join a
    /// treated and a control row of the same leaf with that leaf's uplift,
    /// and pairs plus leftovers cover every row exactly once.
    pub fn check(&self, train: &Dataset, tree: &UpliftTree) -> Result<(), DistillError> {
        let bad = |m: String| Err(DistillError::Plan(m));
        let n = train.n_rows();
        let mut seen = vec![false; n];
        let mut mark = |i: usize| -> Result<(), DistillError> {
            if i >= n || std::mem::replace(&mut seen[i], true) {
                return Err(DistillError::Plan(format!("row {i} is out of range or used twice")));
            }
            Ok(())
        };
        for p in &self.pairs {
            mark(p.treated_row)?;
            mark(p.control_row)?;
            if train.treatment()[p.treated_row] != 1 || train.treatment()[p.control_row] != 0 {
                return bad(format!("pair {p:?} does not join opposite arms"));
            }
            let (lt, lc) = (tree.leaf_of(train.row(p.treated_row)), tree.leaf_of(train.row(p.control_row)));
            if lt != p.leaf_id || lc != p.leaf_id {
                return bad(format!("pair {p:?} routes to leaves {lt} and {lc}"));
            }
            if p.u_tea.to_bits() != tree.leaf_tau(p.leaf_id).to_bits() {
                return bad(format!("pair {p:?} does not carry its leaf uplift"));
            }
        }
        for &i in &self.leftovers {
            mark(i)?;
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return bad(format!("row {i} is in neither pairs nor leftovers"));
        }
        Ok(())
    }
}

/// Seed of epoch `epoch` under `master_seed`.
pub fn epoch_seed(master_seed: u64, epoch: usize) -> u64 {
    seed::derive(master_seed, stream::EPOCH, epoch as u64)
}

/// Random within-leaf matching without replacement.
///
/// For every leaf, treated and control rows (in row order) are shuffled
/// independently by a stream seeded from `(epoch_seed, leaf_id)`, and the
/// first `min(n_t, n_c)` of each are zipped. The rest become leftovers.
pub fn match_pairs(train: &Dataset, tree: &UpliftTree, epoch_seed: u64) -> EpochPlan {
    plan_from_leaves(&tree.leaves_of(train), train.treatment(), tree, epoch_seed)
}

pub(crate) fn plan_from_leaves(leaves: &[usize], treatment: &[u8], tree: &UpliftTree, epoch_seed: u64) -> EpochPlan {
    let n_leaves = tree.n_leaves();
    let mut treated: Vec<Vec<usize>> = vec![Vec::new(); n_leaves];
    let mut control: Vec<Vec<usize>> = vec![Vec::new(); n_leaves];
    for (i, (&leaf, &t)) in leaves.iter().zip(treatment).enumerate() {
        if t == 1 {
            treated[leaf].push(i);
        } else {
            control[leaf].push(i);
        }
    }
    let mut pairs = Vec::new();
    let mut leftovers = Vec::new();
    for leaf in 0..n_leaves {
        let (t_rows, c_rows) = (&mut treated[leaf], &mut control[leaf]);
        let mut rng = seed::derived_rng(epoch_seed, stream::LEAF, leaf as u64);
        t_rows.shuffle(&mut rng);
        c_rows.shuffle(&mut rng);
        let k = t_rows.len().min(c_rows.len());
        let u_tea = tree.leaf_tau(leaf);
        pairs.extend(t_rows.iter().zip(c_rows.iter()).map(|(&t, &c)| SamplePair {
            treated_row: t,
            control_row: c,
            leaf_id: leaf,
            u_tea,
        }));
        leftovers.extend_from_slice(&t_rows[k..]);
        leftovers.extend_from_slice(&c_rows[k..]);
    }
    EpochPlan {
        pairs,
        leftovers,
        epoch_seed,
    }
}

/// The pairwise loss of one matched pair. With `lambda == 0` the total is
/// exactly the sum of the two cross-entropy terms.
pub fn pair_loss(model: &StudentModel, train: &Dataset, pair: &SamplePair, lambda: f64) -> LossParts {
    crate::student::unit_loss(model, &pair_unit(train, pair, lambda))
}

pub(crate) fn pair_unit<'a>(train: &'a Dataset, pair: &SamplePair, lambda: f64) -> LossUnit<'a> {
    LossUnit::Pair {
        treated: Obs {
            x: train.row(pair.treated_row),
            t: 1,
            y: train.outcome()[pair.treated_row],
        },
        control: Obs {
            x: train.row(pair.control_row),
            t: 0,
            y: train.outcome()[pair.control_row],
        },
        u_tea: pair.u_tea,
        lambda,
    }
}

/// Training-loop settings shared by every method.
#[derive(Debug, Clone, PartialEq)]
pub struct KdsmHyper {
    /// Weight of the teacher-matching term.
    pub lambda: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation AUUC improvement before stopping.
    pub early_stop_patience: usize,
    pub master_seed: u64,
    /// Discard unmatched rows instead of training on them as singletons.
    pub drop_leftovers: bool,
}

impl Default for KdsmHyper {
    fn default() -> Self {
        Self {
            lambda: 0.5,
            batch_size: 256,
            max_epochs: 50,
            early_stop_patience: 20,
            master_seed: 0,
            drop_leftovers: false,
        }
    }
}

impl KdsmHyper {
    pub fn validate(&self) -> Result<(), DistillError> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(DistillError::Config(format!("lambda must be finite and >= 0, got {}", self.lambda)));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.early_stop_patience == 0 {
            return Err(DistillError::Config(
                "batch_size, max_epochs and early_stop_patience must be positive".into(),
            ));
        }
        Ok(())
    }
}
