//! The pipeline steps behind each subcommand. Every step reads and writes
//! plain files under the configured output directory and returns the text it
//! echoes to stdout.
//!
//! Layout of `out/`:
//!
//! | file | written by |
//! |------|------------|
//! | `data.csv`, `data.schema`, `true_cate.csv` | `synth` |
//! | `split.txt` | `split` |
//! | `tree.txt`, `leaf_summary.csv` | `fit-tree` |
//! | `model-<method>.txt`, `report-<method>.txt` | `train` |
//! | `eval/<name>.{uplift,qini}.csv`, `eval/<name>.summary.json` | `evaluate` |
//! | `compare/...` | `compare` |

use crate::config::{require_file, Method, PlainOrder, RunConfig};
use anyhow::{bail, Context, Result};
use kdsm::data::{gen_synthetic, load_csv, split_dataset, write_csv, SplitIndices};
use kdsm::distill::{self, PlainStream, TrainReport, TwoModel};
use kdsm::metrics::{self, MetricsSummary};
use kdsm::tree::fit_tree;
use kdsm::{Dataset, FeatureSchema, StudentConfig, StudentModel, UpliftPredictor, UpliftTree};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

pub(crate) fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

pub fn synth(cfg: &RunConfig) -> Result<String> {
    let sc = cfg.synth_config();
    sc.validate().context("invalid synthetic configuration")?;
    let (ds, cate) = gen_synthetic(&sc)?;
    let mut csv = Vec::new();
    write_csv(&ds, &mut csv, &cfg.data.treatment_col, &cfg.data.outcome_col)?;
    let mut cate_text = String::from("row,true_cate\n");
    for (i, c) in cate.iter().enumerate() {
        writeln!(cate_text, "{i},{c}").unwrap();
    }
    let csv_path = cfg.csv_path();
    write(&csv_path, csv)?;
    write(&cfg.schema_path(), ds.schema().to_text())?;
    write(&cfg.out.join("true_cate.csv"), cate_text)?;
    Ok(format!(
        "wrote {} rows to {} (seed {}, positive rate {:.5}, treated {})\n",
        ds.n_rows(),
        csv_path.display(),
        sc.seed,
        ds.positive_rate(),
        ds.n_treated()
    ))
}

pub fn load_data(cfg: &RunConfig) -> Result<Dataset> {
    let csv = cfg.csv_path();
    let schema_path = cfg.schema_path();
    require_file(&csv, "data file", "run `kdsm synth` first or set data.path")?;
    require_file(&schema_path, "schema file", "set data.schema")?;
    let schema = FeatureSchema::parse_text(&fs::read_to_string(&schema_path)?)
        .with_context(|| format!("reading {}", schema_path.display()))?;
    load_csv(&csv, &schema, &cfg.data.treatment_col, &cfg.data.outcome_col)
        .with_context(|| format!("reading {}", csv.display()))
}

pub fn split(cfg: &RunConfig) -> Result<String> {
    cfg.split.validate()?;
    let ds = load_data(cfg)?;
    let seed = cfg.split_seed();
    let s = split_dataset(&ds, cfg.split, seed)?;
    for w in &s.warnings {
        eprintln!("warning: {w}");
    }
    let path = cfg.split_file();
    write(&path, s.indices.to_text(ds.n_rows(), seed, &cfg.split))?;
    Ok(format!(
        "wrote {} (train {}, valid {}, test {})\n",
        path.display(),
        s.train.n_rows(),
        s.valid.n_rows(),
        s.test.n_rows()
    ))
}

pub struct Parts {
    pub train: Dataset,
    pub valid: Dataset,
    pub test: Dataset,
}

pub fn load_parts(cfg: &RunConfig) -> Result<Parts> {
    let ds = load_data(cfg)?;
    let path = cfg.split_file();
    require_file(&path, "split file", "run `kdsm split` first or set split.path")?;
    let idx = SplitIndices::parse_text(&fs::read_to_string(&path)?)?;
    let (train, valid, test) = idx.apply(&ds).with_context(|| format!("applying {}", path.display()))?;
    Ok(Parts { train, valid, test })
}

pub fn fit_tree_cmd(cfg: &RunConfig) -> Result<String> {
    cfg.tree.validate()?;
    let parts = load_parts(cfg)?;
    let tree = fit_tree(&parts.train, &cfg.tree)?;
    let path = cfg.tree_file();
    write(&path, tree.to_text())?;
    let summary = tree.leaf_summary(parts.train.schema());
    write(&cfg.out.join("leaf_summary.csv"), &summary)?;
    Ok(format!(
        "wrote {} ({} criterion, {} leaves, depth {})\n{summary}",
        path.display(),
        tree.params().criterion.as_str(),
        tree.n_leaves(),
        tree.depth()
    ))
}

fn load_tree(cfg: &RunConfig, method: Method) -> Result<UpliftTree> {
    let path = cfg.tree_file();
    require_file(
        &path,
        "tree file",
        &format!(
            "method `{}` needs a teacher; pass --tree <path> or run `kdsm fit-tree` first",
            method.as_str()
        ),
    )?;
    UpliftTree::load(&path).with_context(|| format!("loading tree {}", path.display()))
}

/// A trained uplift model of any method.
pub enum Trained {
    Response(StudentModel),
    TwoModel(TwoModel),
}

impl Trained {
    pub fn to_text(&self) -> String {
        match self {
            Trained::Response(m) => m.to_text(),
            Trained::TwoModel(m) => m.to_text(),
        }
    }

    pub fn predict(&self, ds: &Dataset) -> Vec<f64> {
        match self {
            Trained::Response(m) => m.predict_uplift_all(ds),
            Trained::TwoModel(m) => m.predict_uplift_all(ds),
        }
    }
}

/// Trains one method. `tree` is required for kdsm, kdss and matched plain.
pub fn train_method(
    method: Method,
    parts: &Parts,
    tree: Option<&UpliftTree>,
    student: &StudentConfig,
    hyper: &distill::KdsmHyper,
    plain_order: PlainOrder,
) -> Result<(Trained, TrainReport)> {
    let need = || tree.context("this method needs a teacher tree");
    let (train, valid) = (&parts.train, &parts.valid);
    Ok(match method {
        Method::Kdsm => {
            let (m, r) = distill::train_kdsm(train, valid, need()?, student, hyper)?;
            (Trained::Response(m), r)
        }
        Method::Kdss => {
            let (m, r) = distill::train_kdss(train, valid, need()?, student, hyper)?;
            (Trained::Response(m), r)
        }
        Method::Plain => {
            let order = match plain_order {
                PlainOrder::Matched => PlainStream::Matched(need()?),
                PlainOrder::Shuffled => PlainStream::Shuffled,
            };
            let (m, r) = distill::train_plain(train, valid, student, hyper, order)?;
            (Trained::Response(m), r)
        }
        Method::Tm => {
            let (m, r) = distill::train_two_model(train, valid, student, hyper)?;
            (Trained::TwoModel(m), r)
        }
        Method::Mom => {
            let (m, r) = distill::train_mom(train, valid, student, hyper)?;
            (Trained::Response(m), r)
        }
    })
}

pub fn train(cfg: &RunConfig) -> Result<String> {
    cfg.student.validate()?;
    cfg.hyper.validate()?;
    let method = cfg.method;
    let tree = if method.needs_tree(cfg.plain_order) {
        Some(load_tree(cfg, method)?)
    } else {
        None
    };
    let parts = load_parts(cfg)?;
    let hyper = cfg.hyper_for(cfg.seed);
    let (model, report) = train_method(method, &parts, tree.as_ref(), &cfg.student, &hyper, cfg.plain_order)?;
    let model_path = cfg.out.join(format!("model-{}.txt", method.as_str()));
    write(&model_path, model.to_text())?;
    let report_text = report.to_text();
    write(&cfg.out.join(format!("report-{}.txt", method.as_str())), &report_text)?;
    Ok(format!("wrote {}\n{report_text}", model_path.display()))
}

/// Any serialized predictor: a response model, a two-model pair or a tree.
pub enum LoadedModel {
    Student(StudentModel),
    TwoModel(TwoModel),
    Tree(UpliftTree),
}

impl LoadedModel {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading model {}", path.display()))?;
        let first = text.lines().next().unwrap_or_default().trim();
        let parsed = match first {
            "# kdsm student" => StudentModel::parse_text(&text).map(LoadedModel::Student)?,
            "# kdsm two-model" => TwoModel::parse_text(&text).map(LoadedModel::TwoModel)?,
            "# kdsm tree" => UpliftTree::parse_text(&text).map(LoadedModel::Tree)?,
            other => bail!("{}: unrecognized model header {other:?}", path.display()),
        };
        Ok(parsed)
    }

    pub fn predict(&self, ds: &Dataset) -> Result<Vec<f64>> {
        match self {
            LoadedModel::Student(m) => {
                m.check_schema(ds.schema())?;
                Ok(m.predict_uplift_all(ds))
            }
            LoadedModel::TwoModel(m) => {
                m.treated.check_schema(ds.schema())?;
                m.control.check_schema(ds.schema())?;
                Ok(m.predict_uplift_all(ds))
            }
            LoadedModel::Tree(t) => {
                t.check_schema(ds.schema())?;
                Ok(t.predict_uplift_all(ds))
            }
        }
    }
}

fn model_name(path: &Path) -> String {
    path.file_stem().map_or_else(|| "model".to_string(), |s| s.to_string_lossy().into_owned())
}

/// Scores each model on the test split with one shared tie seed and writes
/// its curves and summary. Returns the summaries as JSON lines.
pub fn evaluate(cfg: &RunConfig, models: &[PathBuf]) -> Result<String> {
    if models.is_empty() {
        bail!("no models to evaluate; pass one or more --model <path>");
    }
    let parts = load_parts(cfg)?;
    let test = &parts.test;
    let tie_seed = cfg.tie_seed();
    let dir = cfg.out.join("eval");
    let mut out = String::new();
    for path in models {
        require_file(path, "model file", "check the --model path")?;
        let model = LoadedModel::load(path)?;
        let preds = model.predict(test)?;
        let ev = metrics::rank_eval(&preds, test.treatment(), test.outcome(), tie_seed)?;
        let name = model_name(path);
        write(&dir.join(format!("{name}.uplift.csv")), metrics::uplift_curve(&ev).to_csv())?;
        write(&dir.join(format!("{name}.qini.csv")), metrics::qini_curve(&ev).to_csv())?;
        let summary = MetricsSummary {
            auuc: metrics::auuc(&ev).ok(),
            qini: metrics::qini_coefficient(&ev),
            n: ev.len(),
            tie_seed,
        };
        let json = serde_json::to_string(&summary)?;
        write(&dir.join(format!("{name}.summary.json")), format!("{json}\n"))?;
        writeln!(out, "{name}: {json}").unwrap();
    }
    Ok(out)
}
