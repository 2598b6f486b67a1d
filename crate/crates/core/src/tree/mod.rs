//! The teacher: an uplift decision tree grown by greedy maximization of a
//! treatment/control divergence criterion.

mod fit;
mod io;

pub use fit::fit_tree;

use crate::data::{DataError, Dataset, FeatureSchema};
use crate::UpliftPredictor;
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TreeError {
    #[error("cannot fit: {0}")]
    Fit(String),
    #[error("invalid tree parameters: {0}")]
    Params(String),
    #[error("tree file: {0}")]
    Format(String),
    #[error("schema mismatch: tree was fit on schema {expected}, data has {found}")]
    SchemaMismatch { expected: String, found: String },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Criterion {
    /// Squared Euclidean distance between arm outcome distributions.
    Ed,
    /// Kullback-Leibler divergence with Laplace-smoothed rates.
    Kl,
}

impl Criterion {
    pub fn as_str(&self) -> &'static str {
        match self {
            Criterion::Ed => "ed",
            Criterion::Kl => "kl",
        }
    }
}

impl std::str::FromStr for Criterion {
    type Err = TreeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "ed" => Ok(Criterion::Ed),
            "kl" => Ok(Criterion::Kl),
            other => Err(TreeError::Params(format!(
                "unknown criterion {other:?} (expected `ed` or `kl`)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeParams {
    pub criterion: Criterion,
    /// Number of edges on the longest root-to-leaf path.
    pub max_depth: usize,
    pub min_samples_per_arm: usize,
    pub min_gain: f64,
    pub numeric_split_candidates: usize,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self {
            criterion: Criterion::Ed,
            max_depth: 5,
            min_samples_per_arm: 100,
            min_gain: 0.0,
            numeric_split_candidates: 32,
        }
    }
}

impl TreeParams {
    pub fn validate(&self) -> Result<(), TreeError> {
        if self.max_depth < 1 {
            return Err(TreeError::Params("max_depth must be >= 1".into()));
        }
        if self.min_samples_per_arm < 1 {
            return Err(TreeError::Params("min_samples_per_arm must be >= 1".into()));
        }
        if !(self.min_gain >= 0.0 && self.min_gain.is_finite()) {
            return Err(TreeError::Params("min_gain must be a finite value >= 0".into()));
        }
        if self.numeric_split_candidates < 2 {
            return Err(TreeError::Params("numeric_split_candidates must be >= 2".into()));
        }
        Ok(())
    }
}

/// Per-arm counts of a node's training rows.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct NodeStats {
    pub n_t: usize,
    pub n_c: usize,
    pub pos_t: usize,
    pub pos_c: usize,
}

impl NodeStats {
    pub fn n(&self) -> usize {
        self.n_t + self.n_c
    }

    pub fn add(&mut self, t: u8, y: u8) {
        if t == 1 {
            self.n_t += 1;
            self.pos_t += y as usize;
        } else {
            self.n_c += 1;
            self.pos_c += y as usize;
        }
    }

    pub fn minus(&self, other: &NodeStats) -> NodeStats {
        NodeStats {
            n_t: self.n_t - other.n_t,
            n_c: self.n_c - other.n_c,
            pos_t: self.pos_t - other.pos_t,
            pos_c: self.pos_c - other.pos_c,
        }
    }

    pub fn merged(&self, other: &NodeStats) -> NodeStats {
        NodeStats {
            n_t: self.n_t + other.n_t,
            n_c: self.n_c + other.n_c,
            pos_t: self.pos_t + other.pos_t,
            pos_c: self.pos_c + other.pos_c,
        }
    }

    pub fn has_both_arms(&self) -> bool {
        self.n_t > 0 && self.n_c > 0
    }

    /// Within-node difference of positive rates; an empty arm contributes a
    /// rate of 0.
    pub fn tau_hat(&self) -> f64 {
        rate(self.pos_t, self.n_t) - rate(self.pos_c, self.n_c)
    }
}

fn rate(pos: usize, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        pos as f64 / n as f64
    }
}

/// `(n_L/n) * tau_L^2 + (n_R/n) * tau_R^2`, or `None` when either child lacks
/// an arm.
pub fn ed_value(left: &NodeStats, right: &NodeStats) -> Option<f64> {
    if !(left.has_both_arms() && right.has_both_arms()) {
        return None;
    }
    let n = (left.n() + right.n()) as f64;
    let (tl, tr) = (left.tau_hat(), right.tau_hat());
    Some(left.n() as f64 / n * tl * tl + right.n() as f64 / n * tr * tr)
}

/// Bernoulli KL divergence `KL(a || b)`.
fn bernoulli_kl(a: f64, b: f64) -> f64 {
    a * (a / b).ln() + (1.0 - a) * ((1.0 - a) / (1.0 - b)).ln()
}

fn smoothed(pos: usize, n: usize) -> f64 {
    (pos as f64 + 1.0) / (n as f64 + 2.0)
}

fn node_kl(s: &NodeStats) -> f64 {
    bernoulli_kl(smoothed(s.pos_t, s.n_t), smoothed(s.pos_c, s.n_c))
}

/// Divergence gain of a split under the KL criterion:
/// `sum_c (n_c/n) KL(p_T^c || p_C^c) - KL(p_T || p_C)` with Laplace-smoothed
/// per-arm rates `(pos + 1) / (count + 2)`.
pub fn kl_value(left: &NodeStats, right: &NodeStats, parent: &NodeStats) -> Option<f64> {
    if !(left.has_both_arms() && right.has_both_arms()) {
        return None;
    }
    let n = (left.n() + right.n()) as f64;
    Some(left.n() as f64 / n * node_kl(left) + right.n() as f64 / n * node_kl(right) - node_kl(parent))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SplitRule {
    /// Left iff `x[feature] <= value`.
    Threshold { feature: usize, value: f64 },
    /// Left iff `x[feature] == code`.
    Equals { feature: usize, code: usize },
}

impl SplitRule {
    pub fn feature(&self) -> usize {
        match *self {
            SplitRule::Threshold { feature, .. } | SplitRule::Equals { feature, .. } => feature,
        }
    }

    pub fn goes_left(&self, row: &[f64]) -> bool {
        match *self {
            SplitRule::Threshold { feature, value } => row[feature] <= value,
            SplitRule::Equals { feature, code } => row[feature] == code as f64,
        }
    }
}

impl fmt::Display for SplitRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SplitRule::Threshold { feature, value } => write!(f, "x[{feature}] <= {value}"),
            SplitRule::Equals { feature, code } => write!(f, "x[{feature}] == {code}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub stats: NodeStats,
    pub rule: Option<SplitRule>,
    pub left: Option<usize>,
    pub right: Option<usize>,
    pub leaf_id: Option<usize>,
    pub depth: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UpliftTree {
    nodes: Vec<Node>,
    params: TreeParams,
    schema_fingerprint: String,
    n_features: usize,
    /// Node index of each leaf, indexed by leaf id.
    leaves: Vec<usize>,
}

impl UpliftTree {
    fn from_nodes(
        mut nodes: Vec<Node>,
        params: TreeParams,
        schema_fingerprint: String,
        n_features: usize,
    ) -> Self {
        let mut leaves = Vec::new();
        for (i, node) in nodes.iter_mut().enumerate() {
            if node.rule.is_none() {
                node.leaf_id = Some(leaves.len());
                leaves.push(i);
            } else {
                node.leaf_id = None;
            }
        }
        Self {
            nodes,
            params,
            schema_fingerprint,
            n_features,
            leaves,
        }
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn params(&self) -> &TreeParams {
        &self.params
    }

    pub fn schema_fingerprint(&self) -> &str {
        &self.schema_fingerprint
    }

    pub fn n_leaves(&self) -> usize {
        self.leaves.len()
    }

    pub fn root(&self) -> &Node {
        &self.nodes[0]
    }

    pub fn depth(&self) -> usize {
        self.nodes.iter().map(|n| n.depth).max().unwrap_or(0)
    }

    pub fn leaf(&self, leaf_id: usize) -> &Node {
        &self.nodes[self.leaves[leaf_id]]
    }

    pub fn leaf_tau(&self, leaf_id: usize) -> f64 {
        self.leaf(leaf_id).stats.tau_hat()
    }

    pub fn check_schema(&self, schema: &FeatureSchema) -> Result<(), TreeError> {
        let found = schema.fingerprint();
        if found != self.schema_fingerprint || schema.len() != self.n_features {
            return Err(TreeError::SchemaMismatch {
                expected: self.schema_fingerprint.clone(),
                found,
            });
        }
        Ok(())
    }

    fn route(&self, row: &[f64]) -> &Node {
        let mut node = &self.nodes[0];
        while let Some(rule) = node.rule {
            let next = if rule.goes_left(row) { node.left } else { node.right };
            node = &self.nodes[next.expect("internal nodes have two children")];
        }
        node
    }

    /// Dense identifier (`0..n_leaves`) of the leaf `row` falls into.
    pub fn leaf_of(&self, row: &[f64]) -> usize {
        self.route(row).leaf_id.expect("routing ends at a leaf")
    }

    /// Within-leaf CATE of the leaf `row` falls into.
    pub fn predict(&self, row: &[f64]) -> f64 {
        self.route(row).stats.tau_hat()
    }

    pub fn leaves_of(&self, ds: &Dataset) -> Vec<usize> {
        ds.rows().map(|r| self.leaf_of(r)).collect()
    }

    /// Per-leaf table: `leaf_id, depth, n_t, n_c, pos_t, pos_c, tau_hat, path`.
    pub fn leaf_summary(&self, schema: &FeatureSchema) -> String {
        let mut parent = vec![None; self.nodes.len()];
        for (i, node) in self.nodes.iter().enumerate() {
            for child in [node.left, node.right].into_iter().flatten() {
                parent[child] = Some((i, node.left == Some(child)));
            }
        }
        let mut out = String::from("leaf_id,depth,n_t,n_c,pos_t,pos_c,tau_hat,path\n");
        for (leaf_id, &node_idx) in self.leaves.iter().enumerate() {
            let mut path = Vec::new();
            let mut cur = node_idx;
            while let Some((p, is_left)) = parent[cur] {
                let rule = self.nodes[p].rule.expect("parent has a rule");
                let name = &schema.columns()[rule.feature()].name;
                path.push(match (rule, is_left) {
                    (SplitRule::Threshold { value, .. }, true) => format!("{name}<={value}"),
                    (SplitRule::Threshold { value, .. }, false) => format!("{name}>{value}"),
                    (SplitRule::Equals { code, .. }, true) => format!("{name}=={code}"),
                    (SplitRule::Equals { code, .. }, false) => format!("{name}!={code}"),
                });
                cur = p;
            }
            path.reverse();
            let node = &self.nodes[node_idx];
            let s = node.stats;
            out.push_str(&format!(
                "{leaf_id},{},{},{},{},{},{},{}\n",
                node.depth,
                s.n_t,
                s.n_c,
                s.pos_t,
                s.pos_c,
                s.tau_hat(),
                if path.is_empty() { "root".to_string() } else { path.join(" & ") }
            ));
        }
        out
    }
}

impl UpliftPredictor for UpliftTree {
    fn predict_uplift(&self, row: &[f64]) -> f64 {
        self.predict(row)
    }
}
