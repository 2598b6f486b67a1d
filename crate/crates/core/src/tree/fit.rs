use super::{ed_value, kl_value, Criterion, Node, NodeStats, SplitRule, TreeError, TreeParams, UpliftTree};
use crate::data::{Dataset, FeatureKind};
use rayon::prelude::*;

#[derive(Debug, Clone, Copy)]
struct Candidate {
    rule: SplitRule,
    /// Ranking key: the criterion value for ED, the divergence gain for KL.
    score: f64,
    /// Improvement over the parent, compared against `min_gain`.
    gain: f64,
}

/// Grows an uplift tree on `ds` by greedy recursive splitting.
///
/// At each node every feature proposes candidates (numeric: thresholds at up
/// to `numeric_split_candidates` quantile cut points; categorical: one
/// equality test per observed code) and the best-scoring one is taken, ties
/// going to the lowest feature index and then the lowest candidate index.
/// A node becomes a leaf at `max_depth`, when no candidate keeps
/// `min_samples_per_arm` rows of each arm on both sides, or when the best
/// gain does not exceed `min_gain`.
pub fn fit_tree(ds: &Dataset, params: &TreeParams) -> Result<UpliftTree, TreeError> {
    params.validate()?;
    let mut root = NodeStats::default();
    for i in 0..ds.n_rows() {
        root.add(ds.treatment()[i], ds.outcome()[i]);
    }
    if !root.has_both_arms() {
        return Err(TreeError::Fit(format!(
            "both arms must be present at the root (treated {}, control {})",
            root.n_t, root.n_c
        )));
    }
    let mut nodes = Vec::new();
    let rows: Vec<usize> = (0..ds.n_rows()).collect();
    grow(ds, params, rows, root, 0, &mut nodes);
    Ok(UpliftTree::from_nodes(
        nodes,
        params.clone(),
        ds.schema().fingerprint(),
        ds.n_features(),
    ))
}

fn grow(
    ds: &Dataset,
    params: &TreeParams,
    rows: Vec<usize>,
    stats: NodeStats,
    depth: usize,
    nodes: &mut Vec<Node>,
) -> usize {
    let id = nodes.len();
    nodes.push(Node {
        stats,
        rule: None,
        left: None,
        right: None,
        leaf_id: None,
        depth,
    });
    if depth >= params.max_depth {
        return id;
    }
    let best = match best_split(ds, params, &rows, &stats) {
        Some(c) if c.gain > params.min_gain => c,
        _ => return id,
    };
    let (mut left_rows, mut right_rows) = (Vec::new(), Vec::new());
    let (mut left_stats, mut right_stats) = (NodeStats::default(), NodeStats::default());
    for &i in &rows {
        let (t, y) = (ds.treatment()[i], ds.outcome()[i]);
        if best.rule.goes_left(ds.row(i)) {
            left_rows.push(i);
            left_stats.add(t, y);
        } else {
            right_rows.push(i);
            right_stats.add(t, y);
        }
    }
    drop(rows);
    let left = grow(ds, params, left_rows, left_stats, depth + 1, nodes);
    let right = grow(ds, params, right_rows, right_stats, depth + 1, nodes);
    let node = &mut nodes[id];
    node.rule = Some(best.rule);
    node.left = Some(left);
    node.right = Some(right);
    id
}

fn best_split(ds: &Dataset, params: &TreeParams, rows: &[usize], parent: &NodeStats) -> Option<Candidate> {
    // Per-feature maxima are reduced in feature order, so the result does not
    // depend on how rayon schedules the features.
    let per_feature: Vec<Option<Candidate>> = (0..ds.n_features())
        .into_par_iter()
        .map(|feature| match ds.schema().kind(feature) {
            FeatureKind::Numeric => best_numeric(ds, params, rows, parent, feature),
            FeatureKind::Categorical { cardinality } => {
                best_categorical(ds, params, rows, parent, feature, cardinality)
            }
        })
        .collect();
    let mut best: Option<Candidate> = None;
    for c in per_feature.into_iter().flatten() {
        if best.is_none_or(|b| c.score > b.score) {
            best = Some(c);
        }
    }
    best
}

fn score(params: &TreeParams, left: &NodeStats, right: &NodeStats, parent: &NodeStats) -> Option<(f64, f64)> {
    let m = params.min_samples_per_arm;
    if left.n_t < m || left.n_c < m || right.n_t < m || right.n_c < m {
        return None;
    }
    match params.criterion {
        Criterion::Ed => {
            let value = ed_value(left, right)?;
            let tau = parent.tau_hat();
            Some((value, value - tau * tau))
        }
        Criterion::Kl => {
            let gain = kl_value(left, right, parent)?;
            Some((gain, gain))
        }
    }
}

/// Cut points: for each quantile level `j / (q + 1)`, the midpoint between the
/// order statistic at that level and the next larger distinct value.
fn quantile_thresholds(sorted: &[f64], q: usize) -> Vec<f64> {
    let m = sorted.len();
    let mut out: Vec<f64> = Vec::with_capacity(q);
    for j in 1..=q {
        let pos = j * m / (q + 1);
        if pos == 0 || pos >= m {
            continue;
        }
        let lo = sorted[pos - 1];
        let next = sorted.partition_point(|&v| v <= lo);
        if next >= m {
            continue;
        }
        let mid = lo + (sorted[next] - lo) / 2.0;
        if out.last().is_none_or(|&last| mid > last) {
            out.push(mid);
        }
    }
    out
}

fn best_numeric(
    ds: &Dataset,
    params: &TreeParams,
    rows: &[usize],
    parent: &NodeStats,
    feature: usize,
) -> Option<Candidate> {
    let mut items: Vec<(f64, u8, u8)> = rows
        .iter()
        .map(|&i| (ds.value(i, feature), ds.treatment()[i], ds.outcome()[i]))
        .collect();
    items.sort_by(|a, b| a.0.total_cmp(&b.0));
    let values: Vec<f64> = items.iter().map(|it| it.0).collect();
    let thresholds = quantile_thresholds(&values, params.numeric_split_candidates);

    let mut best: Option<Candidate> = None;
    let mut left = NodeStats::default();
    let mut cursor = 0;
    for &threshold in &thresholds {
        while cursor < items.len() && items[cursor].0 <= threshold {
            left.add(items[cursor].1, items[cursor].2);
            cursor += 1;
        }
        let right = parent.minus(&left);
        if let Some((score, gain)) = score(params, &left, &right, parent) {
            if best.is_none_or(|b| score > b.score) {
                best = Some(Candidate {
                    rule: SplitRule::Threshold {
                        feature,
                        value: threshold,
                    },
                    score,
                    gain,
                });
            }
        }
    }
    best
}

fn best_categorical(
    ds: &Dataset,
    params: &TreeParams,
    rows: &[usize],
    parent: &NodeStats,
    feature: usize,
    cardinality: usize,
) -> Option<Candidate> {
    let mut per_code = vec![NodeStats::default(); cardinality];
    for &i in rows {
        per_code[ds.value(i, feature) as usize].add(ds.treatment()[i], ds.outcome()[i]);
    }
    let mut best: Option<Candidate> = None;
    for (code, left) in per_code.iter().enumerate() {
        if left.n() == 0 {
            continue;
        }
        let right = parent.minus(left);
        if let Some((score, gain)) = score(params, left, &right, parent) {
            if best.is_none_or(|b| score > b.score) {
                best = Some(Candidate {
                    rule: SplitRule::Equals { feature, code },
                    score,
                    gain,
                });
            }
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_synthetic, Column, EffectFunction, FeatureSchema, SyntheticConfig};
    use crate::UpliftPredictor;

    #[test]
    fn thresholds_are_midpoints_between_distinct_values() {
        let v: Vec<f64> = (0..10).map(|i| i as f64).collect();
        assert_eq!(quantile_thresholds(&v, 4), vec![1.5, 3.5, 5.5, 7.5]);
        let ties = [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0];
        assert_eq!(quantile_thresholds(&ties, 8), vec![0.5]);
        assert!(quantile_thresholds(&[2.0; 5], 4).is_empty());
    }

    fn constant_effect_data() -> Dataset {
        // Treated rate 0.3, control rate 0.2 everywhere: tau = 0.1 globally.
        let schema = FeatureSchema::new(vec![Column::numeric("x")]).unwrap();
        let mut features = Vec::new();
        let mut treatment = Vec::new();
        let mut outcome = Vec::new();
        for block in 0..20 {
            for i in 0..10 {
                features.push(block as f64);
                treatment.push(1);
                outcome.push(u8::from(i < 3));
                features.push(block as f64);
                treatment.push(0);
                outcome.push(u8::from(i < 2));
            }
        }
        Dataset::new(schema, features, treatment, outcome).unwrap()
    }

    #[test]
    fn no_useful_split_gives_single_leaf() {
        let ds = constant_effect_data();
        let tree = fit_tree(&ds, &TreeParams { min_samples_per_arm: 10, ..Default::default() }).unwrap();
        assert_eq!(tree.n_leaves(), 1);
        assert!((tree.predict(ds.row(0)) - 0.1).abs() < 1e-12);
        assert_eq!(tree.leaf_of(&[123.0]), 0);
    }

    #[test]
    fn missing_arm_is_fit_error() {
        let schema = FeatureSchema::new(vec![Column::numeric("x")]).unwrap();
        let ds = Dataset::new(schema, vec![0.0, 1.0], vec![1, 1], vec![0, 1]).unwrap();
        assert!(matches!(fit_tree(&ds, &TreeParams::default()), Err(TreeError::Fit(_))));
    }

    fn planted(n: usize, seed: u64) -> Dataset {
        let cfg = SyntheticConfig {
            n,
            d_numeric: 3,
            d_categorical: 1,
            noise_features: 0,
            base_rate: 0.1,
            effect: EffectFunction::Piecewise {
                primary: 0.1,
                secondary: 0.0,
            },
            seed,
            ..Default::default()
        };
        gen_synthetic(&cfg).unwrap().0
    }

    #[test]
    fn depth_one_has_at_most_two_leaves_and_routes_apart() {
        let ds = planted(20_000, 1);
        let tree = fit_tree(&ds, &TreeParams { max_depth: 1, ..Default::default() }).unwrap();
        assert!(tree.n_leaves() <= 2);
        assert_eq!(tree.depth(), 1);
        let rule = tree.root().rule.unwrap();
        assert_eq!(rule.feature(), 0);
        let (mut lo, mut hi) = (vec![0.5; 4], vec![0.5; 4]);
        lo[0] = 0.1;
        hi[0] = 0.9;
        hi[3] = 0.0;
        lo[3] = 0.0;
        assert_ne!(tree.leaf_of(&lo), tree.leaf_of(&hi));
    }

    #[test]
    fn leaf_stats_partition_the_root() {
        let ds = planted(20_000, 2);
        let tree = fit_tree(&ds, &TreeParams { max_depth: 4, min_samples_per_arm: 50, ..Default::default() }).unwrap();
        let total = (0..tree.n_leaves()).fold(NodeStats::default(), |acc, l| acc.merged(&tree.leaf(l).stats));
        assert_eq!(total, tree.root().stats);
        for node in tree.nodes() {
            assert_eq!(node.rule.is_none(), node.leaf_id.is_some());
            assert_eq!(node.rule.is_some(), node.left.is_some() && node.right.is_some());
            assert!(node.depth <= 4);
        }
    }

    #[test]
    fn training_predictions_equal_recomputed_leaf_means() {
        let ds = planted(10_000, 3);
        let tree = fit_tree(&ds, &TreeParams { max_depth: 3, min_samples_per_arm: 30, ..Default::default() }).unwrap();
        let leaves = tree.leaves_of(&ds);
        let mut sums = vec![[0usize; 4]; tree.n_leaves()];
        for i in 0..ds.n_rows() {
            let s = &mut sums[leaves[i]];
            if ds.treatment()[i] == 1 {
                s[0] += 1;
                s[1] += ds.outcome()[i] as usize;
            } else {
                s[2] += 1;
                s[3] += ds.outcome()[i] as usize;
            }
        }
        for i in 0..ds.n_rows() {
            let s = sums[leaves[i]];
            let expected = s[1] as f64 / s[0] as f64 - s[3] as f64 / s[2] as f64;
            assert_eq!(tree.predict_uplift(ds.row(i)), expected);
        }
    }

    fn ed_objective(tree: &UpliftTree) -> f64 {
        let n = tree.root().stats.n() as f64;
        (0..tree.n_leaves())
            .map(|l| {
                let s = tree.leaf(l).stats;
                s.n() as f64 / n * s.tau_hat().powi(2)
            })
            .sum()
    }

    #[test]
    fn ed_objective_grows_with_depth() {
        let ds = planted(20_000, 4);
        let mut last = f64::NEG_INFINITY;
        for depth in 1..=5 {
            let tree = fit_tree(&ds, &TreeParams { max_depth: depth, min_samples_per_arm: 50, ..Default::default() }).unwrap();
            let obj = ed_objective(&tree);
            assert!(obj >= last - 1e-15, "depth {depth}: {obj} < {last}");
            last = obj;
        }
    }

    #[test]
    fn kl_tree_finds_planted_feature() {
        let ds = planted(40_000, 6);
        let tree = fit_tree(
            &ds,
            &TreeParams {
                criterion: Criterion::Kl,
                max_depth: 2,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(tree.root().rule.unwrap().feature(), 0);
    }

    #[test]
    fn categorical_split_uses_equality() {
        let schema = FeatureSchema::new(vec![Column::categorical("c", 3)]).unwrap();
        let mut features = Vec::new();
        let mut treatment = Vec::new();
        let mut outcome = Vec::new();
        // Effect only for code 2.
        for code in 0..3 {
            for i in 0..100 {
                features.push(code as f64);
                treatment.push((i % 2) as u8);
                let p = if code == 2 && i % 2 == 1 { 60 } else { 20 };
                outcome.push(u8::from((i * 37) % 100 < p));
            }
        }
        let ds = Dataset::new(schema, features, treatment, outcome).unwrap();
        let tree = fit_tree(&ds, &TreeParams { max_depth: 1, min_samples_per_arm: 5, ..Default::default() }).unwrap();
        assert_eq!(tree.root().rule, Some(SplitRule::Equals { feature: 0, code: 2 }));
    }

    #[test]
    fn fit_is_deterministic() {
        let ds = planted(10_000, 8);
        let p = TreeParams { max_depth: 4, min_samples_per_arm: 20, ..Default::default() };
        assert_eq!(fit_tree(&ds, &p).unwrap(), fit_tree(&ds, &p).unwrap());
    }
}
