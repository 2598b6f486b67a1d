use kdsm::data::{gen_synthetic, split_dataset, Column, Dataset, EffectFunction, SplitRatios, SyntheticConfig};
use kdsm::distill::{
    epoch_seed, match_pairs, pair_loss, train_kdsm, train_plain, train_two_model, KdsmHyper, PlainStream,
};
use kdsm::metrics;
use kdsm::student::{unit_loss, Head, LossUnit, Obs};
use kdsm::tree::{fit_tree, SplitRule};
use kdsm::{FeatureSchema, StudentConfig, StudentModel, TreeParams, UpliftPredictor};

fn piecewise(n: usize, base_rate: f64, primary: f64, seed: u64) -> (Dataset, Vec<f64>) {
    gen_synthetic(&SyntheticConfig {
        n,
        base_rate,
        effect: EffectFunction::Piecewise { primary, secondary: 0.0 },
        seed,
        ..Default::default()
    })
    .unwrap()
}

fn small_hyper(lambda: f64, seed: u64) -> KdsmHyper {
    KdsmHyper {
        lambda,
        batch_size: 128,
        max_epochs: 3,
        early_stop_patience: 2,
        master_seed: seed,
        drop_leftovers: false,
    }
}

#[test]
fn depth_three_root_split_lands_on_planted_threshold() {
    let (ds, _) = piecewise(100_000, 0.02, 0.1, 7);
    let tree = fit_tree(&ds, &TreeParams { max_depth: 3, ..Default::default() }).unwrap();
    match tree.root().rule {
        Some(SplitRule::Threshold { feature, value }) => {
            assert_eq!(feature, 0);
            assert!((value - 0.5).abs() <= 0.05, "{value}");
        }
        other => panic!("root rule {other:?}"),
    }
    assert!(tree.depth() <= 3);
}

#[test]
fn single_leaf_teacher_distills_the_global_effect() {
    let (ds, _) = piecewise(3000, 0.1, 0.1, 8);
    let s = split_dataset(&ds, SplitRatios::default(), 8).unwrap();
    let params = TreeParams {
        max_depth: 2,
        min_samples_per_arm: 10_000,
        ..Default::default()
    };
    let tree = fit_tree(&s.train, &params).unwrap();
    assert_eq!(tree.n_leaves(), 1);
    let global = tree.leaf_tau(0);

    let cfg = StudentConfig { hidden_sizes: vec![8], ..Default::default() };
    let (model, report) = train_kdsm(&s.train, &s.valid, &tree, &cfg, &small_hyper(0.5, 1)).unwrap();
    assert!(report.epochs.iter().all(|e| e.soft.is_finite() && e.hard.is_finite()));
    for pair in match_pairs(&s.train, &tree, epoch_seed(1, 0)).pairs.iter().take(50) {
        assert_eq!(pair.u_tea, global);
        let diff = model.forward(s.train.row(pair.treated_row), 1).unwrap()
            - model.forward(s.train.row(pair.control_row), 0).unwrap();
        let soft = pair_loss(&model, &s.train, pair, 0.5).soft;
        assert!((soft - (global - diff).powi(2)).abs() < 1e-15);
    }
}

#[test]
fn zero_teacher_and_flat_student_give_no_soft_term() {
    // Both arms have rate 1/4 exactly, so the root effect is 0.
    let schema = FeatureSchema::new(vec![Column::numeric("x")]).unwrap();
    let n = 400;
    let features: Vec<f64> = (0..n).map(|i| i as f64 / n as f64).collect();
    let treatment: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
    let outcome: Vec<u8> = (0..n).map(|i| u8::from(i % 8 < 2)).collect();
    let ds = Dataset::new(schema, features, treatment, outcome).unwrap();
    let tree = fit_tree(&ds, &TreeParams { min_samples_per_arm: 1000, ..Default::default() }).unwrap();
    assert_eq!(tree.leaf_tau(0), 0.0);

    let mut model = StudentModel::for_training(&ds, StudentConfig::default(), Head::Response, 3).unwrap();
    let out = model.layout().layers.last().unwrap().clone();
    model.params_mut()[out.weight_offset..out.weight_offset + out.fan_in].fill(0.0);
    for i in 0..ds.n_rows() {
        let obs = Obs {
            x: ds.row(i),
            t: ds.treatment()[i],
            y: ds.outcome()[i],
        };
        let parts = unit_loss(
            &model,
            &LossUnit::SingleKd {
                obs,
                u_tea: tree.predict(ds.row(i)),
                lambda: 0.5,
            },
        );
        assert_eq!(parts.soft, 0.0);
    }
}

#[test]
fn two_model_on_zero_effect_data_predicts_no_uplift() {
    let (ds, _) = gen_synthetic(&SyntheticConfig {
        n: 50_000,
        base_rate: 0.05,
        effect: EffectFunction::Zero,
        seed: 9,
        ..Default::default()
    })
    .unwrap();
    let s = split_dataset(&ds, SplitRatios::default(), 9).unwrap();
    let cfg = StudentConfig { hidden_sizes: vec![16], ..Default::default() };
    let hyper = KdsmHyper {
        batch_size: 1024,
        max_epochs: 5,
        early_stop_patience: 3,
        ..Default::default()
    };
    let (tm, _) = train_two_model(&s.train, &s.valid, &cfg, &hyper).unwrap();
    let preds = tm.predict_uplift_all(&s.test);
    let mean = preds.iter().sum::<f64>() / preds.len() as f64;
    assert!(mean.abs() <= 0.01, "{mean}");
}

#[test]
fn constant_predictions_score_like_random_targeting() {
    let (ds, _) = piecewise(2000, 0.1, 0.1, 10);
    let preds = vec![0.3; ds.n_rows()];
    let (mut auuc, mut qini) = (0.0, 0.0);
    for tie_seed in 0..200 {
        let ev = metrics::rank_eval(&preds, ds.treatment(), ds.outcome(), tie_seed).unwrap();
        auuc += metrics::auuc(&ev).unwrap();
        qini += metrics::qini_coefficient(&ev);
    }
    assert!((auuc / 200.0 - 0.5).abs() <= 0.02, "{}", auuc / 200.0);
    assert!((qini / 200.0).abs() < 0.02, "{}", qini / 200.0);
}

#[test]
fn ranking_by_true_effect_beats_random_and_trained_models() {
    let (ds, cate) = piecewise(20_000, 0.05, 0.1, 12);
    let s = split_dataset(&ds, SplitRatios::default(), 12).unwrap();
    let truth: Vec<f64> = s.indices.test.iter().map(|&i| cate[i]).collect();
    let tree = fit_tree(&s.train, &TreeParams::default()).unwrap();
    let cfg = StudentConfig { hidden_sizes: vec![16, 8], ..Default::default() };
    let test = &s.test;
    let score = |p: &[f64], seed: u64| {
        metrics::auuc(&metrics::rank_eval(p, test.treatment(), test.outcome(), seed).unwrap()).unwrap()
    };
    let (mut oracle, mut model_auuc) = (Vec::new(), Vec::new());
    for seed in 0..3 {
        let (m, _) = train_kdsm(&s.train, &s.valid, &tree, &cfg, &small_hyper(0.5, seed)).unwrap();
        oracle.push(score(&truth, seed));
        model_auuc.push(score(&m.predict_uplift_all(test), seed));
    }
    let median = |mut v: Vec<f64>| {
        v.sort_by(f64::total_cmp);
        v[v.len() / 2]
    };
    let oracle = median(oracle);
    assert!(oracle > 0.5, "{oracle}");
    assert!(oracle >= median(model_auuc));
}

#[test]
fn training_is_bit_identical_across_thread_counts() {
    let (ds, _) = piecewise(3000, 0.1, 0.1, 13);
    let s = split_dataset(&ds, SplitRatios::default(), 13).unwrap();
    let tree = fit_tree(&s.train, &TreeParams { max_depth: 3, ..Default::default() }).unwrap();
    let cfg = StudentConfig { hidden_sizes: vec![8, 4], ..Default::default() };
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let (a, ra) = train_kdsm(&s.train, &s.valid, &tree, &cfg, &small_hyper(0.5, 4)).unwrap();
            let (b, _) = train_plain(&s.train, &s.valid, &cfg, &small_hyper(0.0, 4), PlainStream::Shuffled).unwrap();
            (a.to_text(), ra.to_text(), b.to_text())
        })
    };
    assert_eq!(run(1), run(4));
}
