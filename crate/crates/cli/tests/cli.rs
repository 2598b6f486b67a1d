use kdsm::data::{load_csv, split_dataset, SplitIndices};
use kdsm::metrics::{self, Curve, MetricsSummary};
use kdsm::tree::fit_tree;
use kdsm::{FeatureSchema, TreeParams, UpliftPredictor, UpliftTree};
use kdsm_cli::ComparisonReport;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use tempfile::TempDir;

const SMALL: &str = "\
out=out
synth.n=3000
synth.base_rate=0.05
synth.primary=0.1
tree.max_depth=2
student.hidden_sizes=8
train.max_epochs=3
train.early_stop_patience=2
";

fn kdsm(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kdsm"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = kdsm(dir, args);
    assert!(
        out.status.success(),
        "kdsm {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn stderr_of(dir: &Path, args: &[&str]) -> String {
    let out = kdsm(dir, args);
    assert!(!out.status.success(), "kdsm {args:?} should fail");
    String::from_utf8(out.stderr).unwrap()
}

/// A temp dir holding `run.cfg` and a prepared data + split (+ tree).
fn prepared(extra: &str, with_tree: bool) -> TempDir {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("run.cfg"), format!("{SMALL}{extra}")).unwrap();
    ok(dir.path(), &["synth", "--config", "run.cfg"]);
    ok(dir.path(), &["split", "--config", "run.cfg"]);
    if with_tree {
        ok(dir.path(), &["fit-tree", "--config", "run.cfg"]);
    }
    dir
}

fn read(dir: &Path, rel: &str) -> Vec<u8> {
    fs::read(dir.join(rel)).unwrap_or_else(|e| panic!("{rel}: {e}"))
}

#[test]
fn synth_writes_header_plus_rows_and_is_reproducible() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("run.cfg"), "out=a\nsynth.n=1000\n").unwrap();
    ok(dir.path(), &["synth", "--config", "run.cfg"]);
    ok(dir.path(), &["synth", "--config", "run.cfg", "--out", "b"]);
    let csv = String::from_utf8(read(dir.path(), "a/data.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1001);
    assert!(csv.starts_with("x0,"));
    for f in ["data.csv", "data.schema", "true_cate.csv"] {
        assert_eq!(read(dir.path(), &format!("a/{f}")), read(dir.path(), &format!("b/{f}")), "{f}");
    }
}

#[test]
fn invalid_base_rate_fails_before_writing() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("run.cfg"), "out=out\nsynth.base_rate=1.5\n").unwrap();
    let err = stderr_of(dir.path(), &["synth", "--config", "run.cfg"]);
    assert!(err.contains("base_rate"), "{err}");
    assert!(!dir.path().join("out").exists());
}

#[test]
fn depth_one_tree_finds_planted_feature_and_reloads() {
    let dir = prepared("synth.n=20000\ntree.max_depth=1\n", true);
    let summary = String::from_utf8(read(dir.path(), "out/leaf_summary.csv")).unwrap();
    let leaves: Vec<&str> = summary.lines().skip(1).collect();
    assert_eq!(leaves.len(), 2, "{summary}");
    assert!(leaves.iter().all(|l| l.contains("x0")), "{summary}");

    let out = dir.path().join("out");
    let schema = FeatureSchema::parse_text(&fs::read_to_string(out.join("data.schema")).unwrap()).unwrap();
    let ds = load_csv(out.join("data.csv"), &schema, "treatment", "outcome").unwrap();
    let idx = SplitIndices::parse_text(&fs::read_to_string(out.join("split.txt")).unwrap()).unwrap();
    let (train, _, _) = idx.apply(&ds).unwrap();
    let params = TreeParams { max_depth: 1, ..Default::default() };
    let fresh = fit_tree(&train, &params).unwrap();
    let loaded = UpliftTree::load(out.join("tree.txt")).unwrap();
    let rows = ds.subset(&(0..1000).collect::<Vec<_>>());
    let a = fresh.predict_uplift_all(&rows);
    let b = loaded.predict_uplift_all(&rows);
    assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn criterion_flag_accepts_ed_and_kl_only() {
    let dir = prepared("", false);
    for c in ["ed", "kl", "KL"] {
        let out = ok(dir.path(), &["fit-tree", "--config", "run.cfg", "--criterion", c]);
        assert!(out.contains(&format!("{} criterion", c.to_lowercase())), "{out}");
    }
    let err = stderr_of(dir.path(), &["fit-tree", "--config", "run.cfg", "--criterion", "chi2"]);
    assert!(err.contains("--criterion"), "{err}");
}

#[test]
fn plain_matches_zero_lambda_kdsm_on_matched_stream() {
    let dir = prepared("", true);
    ok(dir.path(), &["train", "--config", "run.cfg", "--method", "plain", "--drop-leftovers"]);
    ok(
        dir.path(),
        &["train", "--config", "run.cfg", "--method", "kdsm", "--lambda", "0", "--drop-leftovers"],
    );
    assert_eq!(read(dir.path(), "out/model-plain.txt"), read(dir.path(), "out/model-kdsm.txt"));
}

#[test]
fn kdsm_report_has_loss_columns() {
    let dir = prepared("", true);
    let out = ok(dir.path(), &["train", "--config", "run.cfg", "--method", "kdsm"]);
    assert!(out.contains("epoch,pairs,singletons,hard,soft,total,valid_auuc,learning_rate\n"));
    let report = String::from_utf8(read(dir.path(), "out/report-kdsm.txt")).unwrap();
    let records: Vec<&str> = report
        .lines()
        .skip(2)
        .take_while(|l| !l.starts_with('#'))
        .collect();
    assert!(!records.is_empty());
    for r in records {
        let f: Vec<f64> = r.split(',').take(6).map(|x| x.parse().unwrap()).collect();
        assert!(f[4] >= 0.0 && (f[5] - (f[3] + 0.5 * f[4])).abs() < 1e-9, "{r}");
    }
}

#[test]
fn missing_tree_names_the_flag() {
    let dir = prepared("", false);
    for method in ["kdsm", "kdss"] {
        let err = stderr_of(dir.path(), &["train", "--config", "run.cfg", "--method", method]);
        assert!(err.contains("--tree"), "{err}");
    }
    let err = stderr_of(
        dir.path(),
        &["train", "--config", "run.cfg", "--method", "kdsm", "--tree", "missing.txt"],
    );
    assert!(err.contains("missing.txt") && err.contains("--tree"), "{err}");
    // The baselines need no teacher.
    ok(dir.path(), &["train", "--config", "run.cfg", "--method", "mom"]);
}

#[test]
fn tree_from_another_schema_is_rejected() {
    let dir = prepared("", false);
    let other = prepared("synth.d_numeric=3\n", true);
    let tree = other.path().join("out/tree.txt");
    let err = stderr_of(
        dir.path(),
        &["train", "--config", "run.cfg", "--method", "kdsm", "--tree", tree.to_str().unwrap()],
    );
    assert!(err.contains("schema"), "{err}");
}

#[test]
fn unknown_method_and_missing_inputs_exit_nonzero() {
    let dir = prepared("", false);
    let err = stderr_of(dir.path(), &["train", "--config", "run.cfg", "--method", "xlearner"]);
    assert!(err.contains("--method"), "{err}");
    let empty = TempDir::new().unwrap();
    let err = stderr_of(empty.path(), &["split", "--out", "nothing"]);
    assert!(err.contains("kdsm synth"), "{err}");
}

fn summary(dir: &Path, name: &str) -> MetricsSummary {
    serde_json::from_slice(&read(dir, &format!("out/eval/{name}.summary.json"))).unwrap()
}

#[test]
fn evaluate_teacher_and_students_with_shared_ties() {
    let dir = prepared("", true);
    ok(dir.path(), &["train", "--config", "run.cfg", "--method", "kdsm"]);
    ok(dir.path(), &["train", "--config", "run.cfg", "--method", "tm"]);
    let out = ok(
        dir.path(),
        &[
            "evaluate",
            "--config",
            "run.cfg",
            "--tie-seed",
            "17",
            "--model",
            "out/tree.txt",
            "--model",
            "out/model-kdsm.txt",
            "--model",
            "out/model-tm.txt",
        ],
    );
    assert_eq!(out.lines().count(), 3);

    // The teacher's summary equals the in-process prediction path.
    let o = dir.path().join("out");
    let schema = FeatureSchema::parse_text(&fs::read_to_string(o.join("data.schema")).unwrap()).unwrap();
    let ds = load_csv(o.join("data.csv"), &schema, "treatment", "outcome").unwrap();
    let idx = SplitIndices::parse_text(&fs::read_to_string(o.join("split.txt")).unwrap()).unwrap();
    let (_, _, test) = idx.apply(&ds).unwrap();
    let tree = UpliftTree::load(o.join("tree.txt")).unwrap();
    let direct = metrics::evaluate(&tree.predict_uplift_all(&test), test.treatment(), test.outcome(), 17).unwrap();
    assert_eq!(summary(dir.path(), "tree"), direct);

    for name in ["tree", "model-kdsm", "model-tm"] {
        let s = summary(dir.path(), name);
        assert_eq!((s.tie_seed, s.n), (17, test.n_rows()));
        let uplift = Curve::parse_csv(&String::from_utf8(read(dir.path(), &format!("out/eval/{name}.uplift.csv"))).unwrap()).unwrap();
        let qini = Curve::parse_csv(&String::from_utf8(read(dir.path(), &format!("out/eval/{name}.qini.csv"))).unwrap()).unwrap();
        assert_eq!(uplift.points.len(), test.n_rows());
        let auuc = metrics::auuc_from_uplift_curve(&uplift).unwrap();
        assert!((auuc - s.auuc.unwrap()).abs() <= 1e-12, "{name}: {auuc} vs {:?}", s.auuc);
        assert!((metrics::qini_coefficient_from_curve(&qini) - s.qini).abs() <= 1e-12);
    }
}

#[test]
fn split_file_matches_library_split() {
    let dir = prepared("split.seed=5\n", false);
    let o: PathBuf = dir.path().join("out");
    let schema = FeatureSchema::parse_text(&fs::read_to_string(o.join("data.schema")).unwrap()).unwrap();
    let ds = load_csv(o.join("data.csv"), &schema, "treatment", "outcome").unwrap();
    let idx = SplitIndices::parse_text(&fs::read_to_string(o.join("split.txt")).unwrap()).unwrap();
    let lib = split_dataset(&ds, Default::default(), 5).unwrap();
    assert_eq!(idx, lib.indices);
}

#[test]
fn compare_tabulates_methods_by_seeds() {
    let dir = prepared("compare.methods=plain,kdss,kdsm\ncompare.seeds=0,1,2,3,4\n", false);
    let out = ok(dir.path(), &["compare", "--config", "run.cfg"]);
    let report = ComparisonReport::parse_text(&out).unwrap();
    assert_eq!(report.rows.len(), 15);
    assert_eq!(report.medians.len(), 3);
    let q: Vec<f64> = report.medians.iter().map(|m| m.qini.unwrap()).collect();
    assert!(q.windows(2).all(|w| w[0] >= w[1]), "{q:?}");
    assert_eq!(read(dir.path(), "out/compare/report.txt"), out.as_bytes());
    assert!(dir.path().join("out/compare/kdsm-s3/model.txt").is_file());

    // Identical config and seeds give identical bytes.
    let again = ok(dir.path(), &["compare", "--config", "run.cfg"]);
    assert_eq!(out, again);
}
