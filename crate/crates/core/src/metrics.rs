//! Ranking-based uplift evaluation.
//!
//! Subjects are ordered by predicted uplift, descending. For each prefix of
//! size `k` the cumulative positives `R` and subject counts `N` per arm give
//!
//! * uplift curve: `(R_t/N_t - R_c/N_c) * (N_t + N_c)` (0 while an arm is empty)
//! * Qini curve: `R_t - R_c * N_t / N_c` (`R_t` while the control arm is empty)
//!
//! AUUC is the mean height of the uplift curve normalized by its final value
//! (random ranking gives about 0.5). The Qini coefficient is the mean signed
//! gap between the Qini curve and the random-targeting diagonal, divided by
//! `N` (random ranking gives about 0).
//!
//! Ties in the predictions are ordered by a seeded shuffle applied before a
//! stable sort, so every evaluation is reproducible from its `tie_seed`.

use crate::seed;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("length mismatch: {predictions} predictions, {treatment} treatments, {outcome} outcomes")]
    Length {
        predictions: usize,
        treatment: usize,
        outcome: usize,
    },
    #[error("need at least 2 subjects, got {0}")]
    TooFew(usize),
    #[error("the {0} arm is empty")]
    MissingArm(&'static str),
    #[error("prediction {index} is not finite")]
    NonFinite { index: usize },
    #[error("treatment or outcome at {index} is not 0/1")]
    NotBinary { index: usize },
    #[error("AUUC undefined: final uplift {0} is not positive")]
    UndefinedAuuc(f64),
    #[error("curve file: {0}")]
    Format(String),
    #[error("brute-force oracle is limited to {max} subjects, got {n}")]
    OracleTooLarge { n: usize, max: usize },
}

/// Largest input [`brute_force_curves`] accepts.
pub const BRUTE_FORCE_MAX_N: usize = 2000;

/// A descending ranking with per-prefix cumulative counts. Index `k - 1` of
/// each count vector holds the value for the first `k` subjects.
#[derive(Debug, Clone, PartialEq)]
pub struct RankingEval {
    pub order: Vec<usize>,
    pub pos_treated: Vec<u64>,
    pub pos_control: Vec<u64>,
    pub n_treated: Vec<u64>,
    pub n_control: Vec<u64>,
    pub tie_seed: u64,
}

impl RankingEval {
    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    /// `(k, value)` for `k = 1..=N`.
    pub points: Vec<(usize, f64)>,
}

impl Curve {
    pub fn last_value(&self) -> f64 {
        self.points.last().map_or(0.0, |p| p.1)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,value\n");
        for (k, v) in &self.points {
            writeln!(out, "{k},{v}").unwrap();
        }
        out
    }

    pub fn parse_csv(text: &str) -> Result<Self, MetricsError> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some("k,value") {
            return Err(MetricsError::Format("expected header `k,value`".into()));
        }
        let points = lines
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                let (k, v) = l
                    .split_once(',')
                    .ok_or_else(|| MetricsError::Format(format!("bad line {l:?}")))?;
                Ok((
                    k.trim().parse().map_err(|_| MetricsError::Format(format!("bad k in {l:?}")))?,
                    v.trim().parse().map_err(|_| MetricsError::Format(format!("bad value in {l:?}")))?,
                ))
            })
            .collect::<Result<_, MetricsError>>()?;
        Ok(Self { points })
    }
}

fn check_inputs(predictions: &[f64], treatment: &[u8], outcome: &[u8]) -> Result<(), MetricsError> {
    let n = predictions.len();
    if treatment.len() != n || outcome.len() != n {
        return Err(MetricsError::Length {
            predictions: n,
            treatment: treatment.len(),
            outcome: outcome.len(),
        });
    }
    if n < 2 {
        return Err(MetricsError::TooFew(n));
    }
    if let Some(index) = predictions.iter().position(|p| !p.is_finite()) {
        return Err(MetricsError::NonFinite { index });
    }
    if let Some(index) = (0..n).find(|&i| treatment[i] > 1 || outcome[i] > 1) {
        return Err(MetricsError::NotBinary { index });
    }
    if !treatment.contains(&1) {
        return Err(MetricsError::MissingArm("treated"));
    }
    if !treatment.contains(&0) {
        return Err(MetricsError::MissingArm("control"));
    }
    Ok(())
}

fn tie_shuffled(n: usize, tie_seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seed::rng(tie_seed));
    idx
}

/// Orders subjects by prediction, descending, in one pass of cumulative
/// counting.
pub fn rank_eval(
    predictions: &[f64],
    treatment: &[u8],
    outcome: &[u8],
    tie_seed: u64,
) -> Result<RankingEval, MetricsError> {
    check_inputs(predictions, treatment, outcome)?;
    let n = predictions.len();
    let mut order = tie_shuffled(n, tie_seed);
    order.sort_by(|&a, &b| predictions[b].total_cmp(&predictions[a]));
    let mut ev = RankingEval {
        order,
        pos_treated: Vec::with_capacity(n),
        pos_control: Vec::with_capacity(n),
        n_treated: Vec::with_capacity(n),
        n_control: Vec::with_capacity(n),
        tie_seed,
    };
    let (mut rt, mut rc, mut nt, mut nc) = (0u64, 0u64, 0u64, 0u64);
    for &i in &ev.order {
        let y = outcome[i] as u64;
        if treatment[i] == 1 {
            nt += 1;
            rt += y;
        } else {
            nc += 1;
            rc += y;
        }
        ev.pos_treated.push(rt);
        ev.pos_control.push(rc);
        ev.n_treated.push(nt);
        ev.n_control.push(nc);
    }
    Ok(ev)
}

fn uplift_value(rt: u64, rc: u64, nt: u64, nc: u64) -> f64 {
    if nt == 0 || nc == 0 {
        return 0.0;
    }
    (rt as f64 / nt as f64 - rc as f64 / nc as f64) * (nt + nc) as f64
}

fn qini_value(rt: u64, rc: u64, nt: u64, nc: u64) -> f64 {
    if nc == 0 {
        return rt as f64;
    }
    rt as f64 - rc as f64 * (nt as f64 / nc as f64)
}

pub fn uplift_curve(ev: &RankingEval) -> Curve {
    Curve {
        points: (0..ev.len())
            .map(|j| {
                let v = uplift_value(ev.pos_treated[j], ev.pos_control[j], ev.n_treated[j], ev.n_control[j]);
                (j + 1, v)
            })
            .collect(),
    }
}

pub fn qini_curve(ev: &RankingEval) -> Curve {
    Curve {
        points: (0..ev.len())
            .map(|j| {
                let v = qini_value(ev.pos_treated[j], ev.pos_control[j], ev.n_treated[j], ev.n_control[j]);
                (j + 1, v)
            })
            .collect(),
    }
}

/// `(1/N) * sum_k uplift(k) / uplift(N)`.
pub fn auuc_from_uplift_curve(curve: &Curve) -> Result<f64, MetricsError> {
    let last = curve.last_value();
    if !(last > 0.0) {
        return Err(MetricsError::UndefinedAuuc(last));
    }
    let n = curve.points.len() as f64;
    Ok(curve.points.iter().map(|&(_, v)| v / last).sum::<f64>() / n)
}

pub fn auuc(ev: &RankingEval) -> Result<f64, MetricsError> {
    auuc_from_uplift_curve(&uplift_curve(ev))
}

/// `(1/N^2) * sum_k (Qini(k) - (k/N) * Qini(N))`.
pub fn qini_coefficient_from_curve(curve: &Curve) -> f64 {
    let n = curve.points.len() as f64;
    let last = curve.last_value();
    curve
        .points
        .iter()
        .map(|&(k, v)| v - (k as f64 / n) * last)
        .sum::<f64>()
        / (n * n)
}

pub fn qini_coefficient(ev: &RankingEval) -> f64 {
    qini_coefficient_from_curve(&qini_curve(ev))
}

/// O(N^2) oracle: re-derives the ranking by sorting `(prediction desc,
/// tie-shuffle position asc)` keys and recounts every prefix from scratch.
pub fn brute_force_curves(
    predictions: &[f64],
    treatment: &[u8],
    outcome: &[u8],
    tie_seed: u64,
) -> Result<(Curve, Curve), MetricsError> {
    check_inputs(predictions, treatment, outcome)?;
    let n = predictions.len();
    if n > BRUTE_FORCE_MAX_N {
        return Err(MetricsError::OracleTooLarge { n, max: BRUTE_FORCE_MAX_N });
    }
    let shuffled = tie_shuffled(n, tie_seed);
    let mut position = vec![0usize; n];
    for (pos, &i) in shuffled.iter().enumerate() {
        position[i] = pos;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_unstable_by(|&a, &b| {
        predictions[b]
            .total_cmp(&predictions[a])
            .then(position[a].cmp(&position[b]))
    });
    let mut uplift = Vec::with_capacity(n);
    let mut qini = Vec::with_capacity(n);
    for k in 1..=n {
        let (mut rt, mut rc, mut nt, mut nc) = (0, 0, 0, 0);
        for &i in &order[..k] {
            if treatment[i] == 1 {
                nt += 1;
                rt += outcome[i] as u64;
            } else {
                nc += 1;
                rc += outcome[i] as u64;
            }
        }
        uplift.push((k, uplift_value(rt, rc, nt, nc)));
        qini.push((k, qini_value(rt, rc, nt, nc)));
    }
    Ok((Curve { points: uplift }, Curve { points: qini }))
}

/// Scalar summary of one evaluation. `auuc` is `None` when undefined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub auuc: Option<f64>,
    pub qini: f64,
    pub n: usize,
    pub tie_seed: u64,
}

pub fn evaluate(
    predictions: &[f64],
    treatment: &[u8],
    outcome: &[u8],
    tie_seed: u64,
) -> Result<MetricsSummary, MetricsError> {
    let ev = rank_eval(predictions, treatment, outcome, tie_seed)?;
    Ok(MetricsSummary {
        auuc: auuc(&ev).ok(),
        qini: qini_coefficient(&ev),
        n: ev.len(),
        tie_seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn four_row_example() {
        let ev = rank_eval(&[0.4, 0.3, 0.2, 0.1], &[1, 0, 1, 0], &[1, 0, 0, 0], 0).unwrap();
        assert_eq!(ev.order, vec![0, 1, 2, 3]);
        assert_eq!((ev.pos_treated[1], ev.pos_control[1], ev.n_treated[1], ev.n_control[1]), (1, 0, 1, 1));
        assert_eq!(qini_curve(&ev).points[1], (2, 1.0));
        // First prefix holds only a treated subject.
        assert_eq!(uplift_curve(&ev).points[0], (1, 0.0));
        assert_eq!(qini_curve(&ev).points[0], (1, 1.0));
    }

    #[test]
    fn full_prefix_uplift_from_rates() {
        // 500 treated with 100 positives, 500 control with 50 positives.
        let n = 1000;
        let t: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
        let y: Vec<u8> = (0..n).map(|i| u8::from(if i % 2 == 1 { i % 10 == 1 } else { i % 20 == 0 })).collect();
        let preds: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let ev = rank_eval(&preds, &t, &y, 1).unwrap();
        let up = uplift_curve(&ev);
        assert!((up.last_value() - 100.0).abs() < 1e-9, "{}", up.last_value());
        let q = qini_curve(&ev);
        assert_eq!(q.last_value(), 100.0 - 50.0);
        // Balanced at k = N: Qini(N) = uplift(N) * N_t / N.
        assert!((q.last_value() - up.last_value() * 500.0 / 1000.0).abs() < 1e-9);
    }

    #[test]
    fn zero_positives_give_flat_zero_qini() {
        let ev = rank_eval(&[0.3, 0.2, 0.1, 0.0], &[1, 0, 1, 0], &[0; 4], 0).unwrap();
        assert!(qini_curve(&ev).points.iter().all(|p| p.1 == 0.0));
        assert_eq!(qini_coefficient(&ev), 0.0);
        assert!(matches!(auuc(&ev), Err(MetricsError::UndefinedAuuc(_))));
    }

    #[test]
    fn flat_normalized_curve_has_unit_auuc() {
        let curve = Curve { points: vec![(1, 3.0), (2, 3.0)] };
        assert_eq!(auuc_from_uplift_curve(&curve).unwrap(), 1.0);
    }

    #[test]
    fn input_errors() {
        assert_eq!(rank_eval(&[0.1], &[1], &[0], 0).unwrap_err(), MetricsError::TooFew(1));
        assert_eq!(rank_eval(&[0.1, 0.2], &[1, 1], &[0, 1], 0).unwrap_err(), MetricsError::MissingArm("control"));
        assert_eq!(rank_eval(&[0.1, 0.2], &[0, 0], &[0, 1], 0).unwrap_err(), MetricsError::MissingArm("treated"));
        assert!(matches!(rank_eval(&[0.1, 0.2], &[0], &[0, 1], 0), Err(MetricsError::Length { .. })));
        assert!(matches!(rank_eval(&[0.1, f64::NAN], &[0, 1], &[0, 1], 0), Err(MetricsError::NonFinite { index: 1 })));
        let n = BRUTE_FORCE_MAX_N + 1;
        let t: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
        assert_eq!(
            brute_force_curves(&vec![0.0; n], &t, &vec![0; n], 0).unwrap_err(),
            MetricsError::OracleTooLarge { n, max: BRUTE_FORCE_MAX_N }
        );
    }

    #[test]
    fn true_effect_ranking_beats_its_mirror() {
        let mut rng = seed::rng(3);
        let n = 4000;
        let tau: Vec<f64> = (0..n).map(|_| if rng.gen::<f64>() > 0.5 { 0.2 } else { 0.0 }).collect();
        let t: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2)).collect();
        let y: Vec<u8> = (0..n).map(|i| u8::from(rng.gen::<f64>() < 0.1 + t[i] as f64 * tau[i])).collect();
        let neg: Vec<f64> = tau.iter().map(|v| -v).collect();
        let good = qini_coefficient(&rank_eval(&tau, &t, &y, 5).unwrap());
        let bad = qini_coefficient(&rank_eval(&neg, &t, &y, 5).unwrap());
        assert!(good > 0.0 && bad < 0.0, "{good} {bad}");
        assert!(auuc(&rank_eval(&tau, &t, &y, 5).unwrap()).unwrap() > 0.5);
    }

    #[test]
    fn curve_csv_round_trip_reintegrates() {
        let ev = rank_eval(&[0.5, 0.1, 0.3, 0.2, 0.9], &[1, 0, 1, 0, 1], &[1, 0, 0, 1, 1], 2).unwrap();
        let up = uplift_curve(&ev);
        let back = Curve::parse_csv(&up.to_csv()).unwrap();
        assert_eq!(back, up);
        assert_eq!(auuc_from_uplift_curve(&back).unwrap(), auuc(&ev).unwrap());
    }

    fn instance() -> impl Strategy<Value = (Vec<f64>, Vec<u8>, Vec<u8>, u64)> {
        (2usize..120, any::<u64>()).prop_flat_map(|(n, seed)| {
            (
                prop::collection::vec(prop::sample::select(vec![-1.0, 0.0, 0.25, 0.5, 2.0]), n),
                prop::collection::vec(0u8..2, n),
                prop::collection::vec(0u8..2, n),
                Just(seed),
            )
        })
    }

    proptest! {
        #[test]
        fn streaming_matches_brute_force((p, mut t, y, seed) in instance()) {
            t[0] = 1;
            t[1] = 0;
            let ev = rank_eval(&p, &t, &y, seed).unwrap();
            let (up, q) = brute_force_curves(&p, &t, &y, seed).unwrap();
            prop_assert_eq!(uplift_curve(&ev), up);
            prop_assert_eq!(qini_curve(&ev), q);
        }

        #[test]
        fn metrics_depend_only_on_order((p, mut t, y, seed) in instance(), shift in -5.0f64..5.0) {
            t[0] = 1;
            t[1] = 0;
            let moved: Vec<f64> = p.iter().map(|v| (v + shift).exp()).collect();
            let a = rank_eval(&p, &t, &y, seed).unwrap();
            let b = rank_eval(&moved, &t, &y, seed).unwrap();
            prop_assert_eq!(uplift_curve(&a), uplift_curve(&b));
            prop_assert_eq!(qini_coefficient(&a).to_bits(), qini_coefficient(&b).to_bits());
            prop_assert_eq!(auuc(&a).ok().map(f64::to_bits), auuc(&b).ok().map(f64::to_bits));
        }

        #[test]
        fn counts_are_monotone((p, mut t, y, seed) in instance()) {
            t[0] = 1;
            t[1] = 0;
            let ev = rank_eval(&p, &t, &y, seed).unwrap();
            for k in 1..ev.len() {
                prop_assert!(ev.pos_treated[k] >= ev.pos_treated[k - 1]);
                prop_assert!(ev.n_control[k] >= ev.n_control[k - 1]);
                prop_assert!(ev.pos_treated[k] <= ev.n_treated[k]);
                prop_assert!(ev.pos_control[k] <= ev.n_control[k]);
            }
            prop_assert_eq!(ev.n_treated[ev.len() - 1] + ev.n_control[ev.len() - 1], ev.len() as u64);
        }
    }
}
