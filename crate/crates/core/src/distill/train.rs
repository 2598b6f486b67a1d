//! Training loops.
//!
//! Every method shares one loop: per epoch, build the loss-unit stream, take
//! optimizer steps over consecutive batches, score the validation split by
//! AUUC, keep the best parameters, decay the learning rate on stagnation and
//! stop early after `early_stop_patience` epochs without improvement.
//!
//! Seeds: the epoch stream uses `epoch_seed(master, epoch)`, model init uses
//! `derive(master, INIT, init_seed)`, and validation ties use
//! `derive(master, VALID_TIE, 0)`.

use super::report::{EpochRecord, TrainReport};
use super::{epoch_seed, pair_unit, plan_from_leaves, DistillError, KdsmHyper};
use crate::data::Dataset;
use crate::metrics;
use crate::seed::{self, stream};
use crate::student::{
    batch_gradient, Head, LossParts, LossUnit, Normalizer, Obs, Optimizer, StudentConfig, StudentError, StudentModel,
};
use crate::tree::UpliftTree;
use crate::UpliftPredictor;
use rand::seq::SliceRandom;
use std::path::Path;

/// Sample order for the plain response-model trainer.
#[derive(Debug, Clone, Copy)]
pub enum PlainStream<'t> {
    /// Every row as a singleton, reshuffled each epoch.
    Shuffled,
    /// The matched-pair stream of the given teacher with the pairs trained as
    /// two cross-entropy terms and no distillation term.
    Matched(&'t UpliftTree),
}

struct EpochUnits<'a> {
    units: Vec<LossUnit<'a>>,
    pairs: usize,
    singletons: usize,
}

type Stream<'a> = Box<dyn FnMut(usize) -> EpochUnits<'a> + 'a>;

struct Part<'a> {
    model: StudentModel,
    optimizer: Optimizer,
    stream: Stream<'a>,
}

impl<'a> Part<'a> {
    fn new(model: StudentModel, cfg: &StudentConfig, stream: Stream<'a>) -> Self {
        let optimizer = Optimizer::new(cfg.optimizer, cfg.learning_rate, model.n_params());
        Self {
            model,
            optimizer,
            stream,
        }
    }
}

fn check_inputs(train: &Dataset, valid: &Dataset, cfg: &StudentConfig, hyper: &KdsmHyper) -> Result<(), DistillError> {
    hyper.validate()?;
    cfg.validate()?;
    if train.schema() != valid.schema() {
        return Err(DistillError::Fit("train and validation schemas differ".into()));
    }
    if train.n_rows() == 0 {
        return Err(DistillError::Fit("training split is empty".into()));
    }
    let n_t = valid.n_treated();
    if n_t == 0 || n_t == valid.n_rows() {
        return Err(DistillError::Fit("validation split needs both treatment arms".into()));
    }
    Ok(())
}

fn run(
    mut parts: Vec<Part<'_>>,
    valid: &Dataset,
    score: impl Fn(&[&StudentModel]) -> Vec<f64>,
    cfg: &StudentConfig,
    hyper: &KdsmHyper,
    method: &str,
) -> Result<(Vec<StudentModel>, TrainReport), DistillError> {
    let tie_seed = seed::derive(hyper.master_seed, stream::VALID_TIE, 0);
    let mut lr = cfg.learning_rate;
    let mut best: Option<(f64, usize, Vec<StudentModel>)> = None;
    let mut since_improve = 0;
    let mut since_decay = 0;
    let mut epochs = Vec::new();
    let mut stopped_early = false;
    for epoch in 0..hyper.max_epochs {
        let mut sums = LossParts::default();
        let (mut n_units, mut pairs, mut singletons) = (0usize, 0usize, 0usize);
        for part in &mut parts {
            part.optimizer.learning_rate = lr;
            let epoch_units = (part.stream)(epoch);
            for batch in epoch_units.units.chunks(hyper.batch_size) {
                let (grad, loss) = batch_gradient(&part.model, batch)?;
                part.optimizer.apply_update(part.model.params_mut(), &grad);
                let w = batch.len() as f64;
                sums.total += loss.total * w;
                sums.hard += loss.hard * w;
                sums.soft += loss.soft * w;
            }
            n_units += epoch_units.units.len();
            pairs += epoch_units.pairs;
            singletons += epoch_units.singletons;
        }
        let models: Vec<&StudentModel> = parts.iter().map(|p| &p.model).collect();
        let preds = score(&models);
        let ev = metrics::rank_eval(&preds, valid.treatment(), valid.outcome(), tie_seed)?;
        let auuc = metrics::auuc(&ev).ok();
        let n = n_units.max(1) as f64;
        epochs.push(EpochRecord {
            epoch,
            pairs,
            singletons,
            hard: sums.hard / n,
            soft: sums.soft / n,
            total: sums.total / n,
            valid_auuc: auuc,
            learning_rate: lr,
        });
        let improved = match (auuc, &best) {
            (Some(a), Some((b, _, _))) => a > *b,
            (Some(_), None) => true,
            (None, _) => false,
        };
        if improved {
            best = Some((auuc.unwrap(), epoch, parts.iter().map(|p| p.model.clone()).collect()));
            since_improve = 0;
            since_decay = 0;
        } else {
            since_improve += 1;
            since_decay += 1;
            if since_decay >= cfg.lr_decay_patience {
                lr *= cfg.lr_decay_factor;
                since_decay = 0;
            }
        }
        if since_improve >= hyper.early_stop_patience {
            stopped_early = true;
            break;
        }
    }
    let (best_valid_auuc, best_epoch, models) = match best {
        Some((a, e, m)) => (Some(a), Some(e), m),
        None => (None, None, parts.into_iter().map(|p| p.model).collect()),
    };
    let report = TrainReport {
        method: method.to_string(),
        lambda: hyper.lambda,
        master_seed: hyper.master_seed,
        epochs,
        best_epoch,
        best_valid_auuc,
        stopped_early,
    };
    Ok((models, report))
}

fn shuffled_rows(n: usize, master_seed: u64, epoch: usize) -> Vec<usize> {
    let mut rows: Vec<usize> = (0..n).collect();
    rows.shuffle(&mut seed::derived_rng(epoch_seed(master_seed, epoch), stream::SHUFFLE, 0));
    rows
}

fn obs(ds: &Dataset, i: usize) -> Obs<'_> {
    Obs {
        x: ds.row(i),
        t: ds.treatment()[i],
        y: ds.outcome()[i],
    }
}

/// Pairs as pair units (`Some(lambda)`) or as two-term cross-entropy units
/// (`None`), plus leftover singletons, shuffled together.
fn matched_units<'a>(
    train: &'a Dataset,
    leaves: &[usize],
    tree: &UpliftTree,
    hyper: &KdsmHyper,
    epoch: usize,
    lambda: Option<f64>,
) -> EpochUnits<'a> {
    let seed = epoch_seed(hyper.master_seed, epoch);
    let plan = plan_from_leaves(leaves, train.treatment(), tree, seed);
    let mut units: Vec<LossUnit<'a>> = plan
        .pairs
        .iter()
        .map(|p| match lambda {
            Some(l) => pair_unit(train, p, l),
            None => LossUnit::Hard {
                first: Obs { t: 1, ..obs(train, p.treated_row) },
                second: Some(Obs { t: 0, ..obs(train, p.control_row) }),
            },
        })
        .collect();
    let singletons = if hyper.drop_leftovers { 0 } else { plan.leftovers.len() };
    if !hyper.drop_leftovers {
        units.extend(plan.leftovers.iter().map(|&i| LossUnit::Hard {
            first: obs(train, i),
            second: None,
        }));
    }
    units.shuffle(&mut seed::derived_rng(seed, stream::SHUFFLE, 0));
    EpochUnits {
        units,
        pairs: plan.pairs.len(),
        singletons,
    }
}

fn response_model(train: &Dataset, cfg: &StudentConfig, master_seed: u64) -> Result<StudentModel, StudentError> {
    StudentModel::for_training(
        train,
        cfg.clone(),
        Head::Response,
        seed::derive(master_seed, stream::INIT, cfg.init_seed),
    )
}

fn response_score(valid: &Dataset) -> impl Fn(&[&StudentModel]) -> Vec<f64> + '_ {
    move |m| m[0].predict_uplift_all(valid)
}

/// Distillation with within-leaf sample matching, re-matched every epoch.
/// The teacher must have been fit on `train`'s schema.
pub fn train_kdsm(
    train: &Dataset,
    valid: &Dataset,
    tree: &UpliftTree,
    cfg: &StudentConfig,
    hyper: &KdsmHyper,
) -> Result<(StudentModel, TrainReport), DistillError> {
    check_inputs(train, valid, cfg, hyper)?;
    tree.check_schema(train.schema())?;
    let leaves = tree.leaves_of(train);
    let lambda = hyper.lambda;
    let stream: Stream<'_> = Box::new(move |epoch| matched_units(train, &leaves, tree, hyper, epoch, Some(lambda)));
    let parts = vec![Part::new(response_model(train, cfg, hyper.master_seed)?, cfg, stream)];
    let (mut models, report) = run(parts, valid, response_score(valid), cfg, hyper, "kdsm")?;
    Ok((models.remove(0), report))
}

/// Distillation on single samples: each row's loss is its own cross-entropy
/// plus `lambda * (tree(x) - (f(x, 1) - f(x, 0)))^2`.
pub fn train_kdss(
    train: &Dataset,
    valid: &Dataset,
    tree: &UpliftTree,
    cfg: &StudentConfig,
    hyper: &KdsmHyper,
) -> Result<(StudentModel, TrainReport), DistillError> {
    check_inputs(train, valid, cfg, hyper)?;
    tree.check_schema(train.schema())?;
    let u_tea = tree.predict_uplift_all(train);
    let lambda = hyper.lambda;
    let stream: Stream<'_> = Box::new(move |epoch| {
        let units: Vec<LossUnit<'_>> = shuffled_rows(train.n_rows(), hyper.master_seed, epoch)
            .into_iter()
            .map(|i| LossUnit::SingleKd {
                obs: obs(train, i),
                u_tea: u_tea[i],
                lambda,
            })
            .collect();
        EpochUnits {
            pairs: 0,
            singletons: units.len(),
            units,
        }
    });
    let parts = vec![Part::new(response_model(train, cfg, hyper.master_seed)?, cfg, stream)];
    let (mut models, report) = run(parts, valid, response_score(valid), cfg, hyper, "kdss")?;
    Ok((models.remove(0), report))
}

/// The response model without any teacher term. `hyper.lambda` is ignored.
pub fn train_plain(
    train: &Dataset,
    valid: &Dataset,
    cfg: &StudentConfig,
    hyper: &KdsmHyper,
    order: PlainStream<'_>,
) -> Result<(StudentModel, TrainReport), DistillError> {
    check_inputs(train, valid, cfg, hyper)?;
    let stream: Stream<'_> = match order {
        PlainStream::Shuffled => Box::new(move |epoch| {
            let units: Vec<LossUnit<'_>> = shuffled_rows(train.n_rows(), hyper.master_seed, epoch)
                .into_iter()
                .map(|i| LossUnit::Hard {
                    first: obs(train, i),
                    second: None,
                })
                .collect();
            EpochUnits {
                pairs: 0,
                singletons: units.len(),
                units,
            }
        }),
        PlainStream::Matched(tree) => {
            tree.check_schema(train.schema())?;
            let leaves = tree.leaves_of(train);
            Box::new(move |epoch| matched_units(train, &leaves, tree, hyper, epoch, None))
        }
    };
    let parts = vec![Part::new(response_model(train, cfg, hyper.master_seed)?, cfg, stream)];
    let plain = KdsmHyper { lambda: 0.0, ..hyper.clone() };
    let (mut models, report) = run(parts, valid, response_score(valid), cfg, &plain, "plain")?;
    Ok((models.remove(0), report))
}

/// Separate outcome models for the treated and control arms.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoModel {
    pub treated: StudentModel,
    pub control: StudentModel,
}

impl UpliftPredictor for TwoModel {
    fn predict_uplift(&self, row: &[f64]) -> f64 {
        UpliftPredictor::predict_uplift(&self.treated, row) - UpliftPredictor::predict_uplift(&self.control, row)
    }

    fn predict_uplift_all(&self, ds: &Dataset) -> Vec<f64> {
        let t = self.treated.predict_uplift_all(ds);
        let c = self.control.predict_uplift_all(ds);
        t.iter().zip(&c).map(|(a, b)| a - b).collect()
    }
}

const TWO_MODEL_MAGIC: &str = "# kdsm two-model";

impl TwoModel {
    pub fn to_text(&self) -> String {
        format!(
            "{TWO_MODEL_MAGIC}\n[treated]\n{}[control]\n{}",
            self.treated.to_text(),
            self.control.to_text()
        )
    }

    pub fn parse_text(text: &str) -> Result<Self, StudentError> {
        let bad = |m: &str| StudentError::Format(m.to_string());
        let rest = text
            .strip_prefix(TWO_MODEL_MAGIC)
            .ok_or_else(|| bad("missing two-model header"))?;
        let rest = rest.trim_start().strip_prefix("[treated]").ok_or_else(|| bad("missing [treated] section"))?;
        let (treated, control) = rest.split_once("[control]").ok_or_else(|| bad("missing [control] section"))?;
        Ok(Self {
            treated: StudentModel::parse_text(treated.trim_start())?,
            control: StudentModel::parse_text(control.trim_start())?,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), StudentError> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, StudentError> {
        Self::parse_text(&std::fs::read_to_string(path)?)
    }
}

/// Two-model baseline on `train`, split by arm. Each arm gets its own seed
/// chain derived from the master seed.
pub fn train_two_model(
    train: &Dataset,
    valid: &Dataset,
    cfg: &StudentConfig,
    hyper: &KdsmHyper,
) -> Result<(TwoModel, TrainReport), DistillError> {
    let (t_rows, c_rows): (Vec<usize>, Vec<usize>) = (0..train.n_rows()).partition(|&i| train.treatment()[i] == 1);
    if t_rows.is_empty() || c_rows.is_empty() {
        return Err(DistillError::Fit("two-model baseline needs both treatment arms".into()));
    }
    let seeds = (
        seed::derive(hyper.master_seed, stream::ARM_TREATED, 0),
        seed::derive(hyper.master_seed, stream::ARM_CONTROL, 0),
    );
    train_two_model_on_arms(&train.subset(&t_rows), &train.subset(&c_rows), valid, cfg, hyper, seeds)
}

/// Two-model baseline on explicit arm datasets. `arm_seeds` play the role of
/// the master seed for the treated and control model respectively; the two
/// are trained side by side and stopped jointly on validation AUUC of their
/// difference.
pub fn train_two_model_on_arms(
    treated: &Dataset,
    control: &Dataset,
    valid: &Dataset,
    cfg: &StudentConfig,
    hyper: &KdsmHyper,
    arm_seeds: (u64, u64),
) -> Result<(TwoModel, TrainReport), DistillError> {
    check_inputs(treated, valid, cfg, hyper)?;
    check_inputs(control, valid, cfg, hyper)?;
    let parts = vec![arm_part(treated, cfg, arm_seeds.0)?, arm_part(control, cfg, arm_seeds.1)?];
    let score = |m: &[&StudentModel]| {
        let t = m[0].predict_uplift_all(valid);
        let c = m[1].predict_uplift_all(valid);
        t.iter().zip(&c).map(|(a, b)| a - b).collect()
    };
    let plain = KdsmHyper { lambda: 0.0, ..hyper.clone() };
    let (mut models, report) = run(parts, valid, score, cfg, &plain, "tm")?;
    let control = models.pop().unwrap();
    let treated = models.pop().unwrap();
    Ok((TwoModel { treated, control }, report))
}

fn arm_part<'a>(ds: &'a Dataset, cfg: &StudentConfig, arm_seed: u64) -> Result<Part<'a>, DistillError> {
    let model = StudentModel::for_training(
        ds,
        cfg.clone(),
        Head::Arm,
        seed::derive(arm_seed, stream::INIT, cfg.init_seed),
    )?;
    let stream: Stream<'a> = Box::new(move |epoch| {
        let units: Vec<LossUnit<'a>> = shuffled_rows(ds.n_rows(), arm_seed, epoch)
            .into_iter()
            .map(|i| LossUnit::Hard {
                first: obs(ds, i),
                second: None,
            })
            .collect();
        EpochUnits {
            pairs: 0,
            singletons: units.len(),
            units,
        }
    });
    Ok(Part::new(model, cfg, stream))
}

/// `Y* = Y T / p - Y (1 - T) / (1 - p)`, whose conditional mean is the
/// treatment effect when `p` is the treatment probability.
pub fn transformed_outcome(t: u8, y: u8, p: f64) -> f64 {
    let y = y as f64;
    if t == 1 {
        y / p
    } else {
        -y / (1.0 - p)
    }
}

/// Modified-outcome baseline: squared-loss regression of `Y*` on `X`, with
/// `p` estimated as the treated fraction of `train`.
pub fn train_mom(
    train: &Dataset,
    valid: &Dataset,
    cfg: &StudentConfig,
    hyper: &KdsmHyper,
) -> Result<(StudentModel, TrainReport), DistillError> {
    check_inputs(train, valid, cfg, hyper)?;
    let p = train.n_treated() as f64 / train.n_rows() as f64;
    if !(p > 0.0 && p < 1.0) {
        return Err(DistillError::Fit(format!("treatment fraction {p} leaves an arm empty")));
    }
    let target: Vec<f64> = (0..train.n_rows())
        .map(|i| transformed_outcome(train.treatment()[i], train.outcome()[i], p))
        .collect();
    let mean = target.iter().sum::<f64>() / target.len() as f64;
    let model = StudentModel::new(
        train.schema().clone(),
        cfg.clone(),
        Head::Regression,
        Normalizer::fit(train),
        mean,
        seed::derive(hyper.master_seed, stream::INIT, cfg.init_seed),
    )?;
    let stream: Stream<'_> = Box::new(move |epoch| {
        let units: Vec<LossUnit<'_>> = shuffled_rows(train.n_rows(), hyper.master_seed, epoch)
            .into_iter()
            .map(|i| LossUnit::Squared {
                x: train.row(i),
                target: target[i],
            })
            .collect();
        EpochUnits {
            pairs: 0,
            singletons: units.len(),
            units,
        }
    });
    let parts = vec![Part::new(model, cfg, stream)];
    let plain = KdsmHyper { lambda: 0.0, ..hyper.clone() };
    let (mut models, report) = run(parts, valid, response_score(valid), cfg, &plain, "mom")?;
    Ok((models.remove(0), report))
}
