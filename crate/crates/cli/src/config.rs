//! Run configuration: flat `key=value` lines with dotted namespaces.
//!
//! ```text
//! # comments and blank lines are ignored
//! seed=0
//! out=runs/demo
//! synth.n=50000
//! synth.effect=piecewise
//! synth.primary=0.04
//! tree.max_depth=5
//! student.hidden_sizes=64,32
//! train.lambda=0.5
//! compare.seeds=0,1,2,3,4
//! ```
//!
//! Unset seeds fan out from the master `seed`:
//! data `derive(seed, DATA, 0)`, split `derive(seed, SPLIT, 0)`, test ties
//! `derive(seed, TEST_TIE, 0)`. Training runs use `seed` itself as their
//! master seed.

use anyhow::{anyhow, bail, Context, Result};
use kdsm::data::{EffectFunction, SplitRatios, SyntheticConfig};
use kdsm::distill::KdsmHyper;
use kdsm::seed::{self, stream};
use kdsm::tree::Criterion;
use kdsm::{StudentConfig, TreeParams};
use std::path::{Path, PathBuf};

/// Training methods known to `train` and `compare`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Plain,
    Kdss,
    Kdsm,
    Tm,
    Mom,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Plain, Method::Kdss, Method::Kdsm, Method::Tm, Method::Mom];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Plain => "plain",
            Method::Kdss => "kdss",
            Method::Kdsm => "kdsm",
            Method::Tm => "tm",
            Method::Mom => "mom",
        }
    }

    pub fn needs_tree(&self, plain_stream: PlainOrder) -> bool {
        match self {
            Method::Kdsm | Method::Kdss => true,
            Method::Plain => plain_stream == PlainOrder::Matched,
            Method::Tm | Method::Mom => false,
        }
    }
}

impl std::str::FromStr for Method {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| anyhow!("unknown method {s:?} (expected plain, kdss, kdsm, tm or mom)"))
    }
}

/// Sample order of the plain trainer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlainOrder {
    /// The teacher's matched-pair stream without the distillation term.
    Matched,
    Shuffled,
}

#[derive(Debug, Clone)]
pub struct DataPaths {
    pub csv: Option<PathBuf>,
    pub schema: Option<PathBuf>,
    pub treatment_col: String,
    pub outcome_col: String,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub data: DataPaths,
    pub synth: SyntheticConfig,
    synth_seed: Option<u64>,
    pub split: SplitRatios,
    split_seed: Option<u64>,
    pub split_path: Option<PathBuf>,
    pub tree: TreeParams,
    pub tree_path: Option<PathBuf>,
    pub student: StudentConfig,
    pub hyper: KdsmHyper,
    pub plain_order: PlainOrder,
    pub method: Method,
    tie_seed: Option<u64>,
    pub compare_methods: Vec<Method>,
    pub compare_seeds: Vec<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("kdsm-out"),
            data: DataPaths {
                csv: None,
                schema: None,
                treatment_col: "treatment".into(),
                outcome_col: "outcome".into(),
            },
            synth: SyntheticConfig::default(),
            synth_seed: None,
            split: SplitRatios::default(),
            split_seed: None,
            split_path: None,
            tree: TreeParams::default(),
            tree_path: None,
            student: StudentConfig::default(),
            hyper: KdsmHyper::default(),
            plain_order: PlainOrder::Matched,
            method: Method::Kdsm,
            tie_seed: None,
            compare_methods: Method::ALL.to_vec(),
            compare_seeds: (0..5).collect(),
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| anyhow!("config key `{key}`: cannot parse {value:?}: {e}"))
}

fn list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

fn boolean(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => bail!("config key `{key}`: expected true or false, got {value:?}"),
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse_text(&text).with_context(|| format!("in config {}", path.display()))
    }

    pub fn parse_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        // Effect parameters are collected first so their order in the file
        // does not matter.
        let (mut effect, mut primary, mut secondary, mut magnitude) = (None, None, None, None);
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {}: expected key=value, got {line:?}", lineno + 1))?;
            let (k, v) = (k.trim(), v.trim());
            match k {
                "synth.effect" => effect = Some(v.to_string()),
                "synth.primary" => primary = Some(parse(k, v)?),
                "synth.secondary" => secondary = Some(parse(k, v)?),
                "synth.magnitude" => magnitude = Some(parse(k, v)?),
                _ => cfg.set(k, v).with_context(|| format!("line {}", lineno + 1))?,
            }
        }
        cfg.synth.effect = match effect.as_deref().unwrap_or("piecewise") {
            "piecewise" => {
                let (p, s) = match cfg.synth.effect {
                    EffectFunction::Piecewise { primary, secondary } => (primary, secondary),
                    _ => (0.04, 0.0),
                };
                EffectFunction::Piecewise {
                    primary: primary.unwrap_or(p),
                    secondary: secondary.unwrap_or(s),
                }
            }
            "linear-clipped" => EffectFunction::LinearClipped {
                magnitude: magnitude.ok_or_else(|| anyhow!("synth.effect=linear-clipped needs synth.magnitude"))?,
            },
            "zero" => EffectFunction::Zero,
            other => bail!("unknown synth.effect {other:?} (expected piecewise, linear-clipped or zero)"),
        };
        Ok(cfg)
    }

    fn set(&mut self, k: &str, v: &str) -> Result<()> {
        match k {
            "seed" => self.seed = parse(k, v)?,
            "out" => self.out = PathBuf::from(v),
            "data.path" => self.data.csv = Some(PathBuf::from(v)),
            "data.schema" => self.data.schema = Some(PathBuf::from(v)),
            "data.treatment_col" => self.data.treatment_col = v.to_string(),
            "data.outcome_col" => self.data.outcome_col = v.to_string(),
            "synth.n" => self.synth.n = parse(k, v)?,
            "synth.d_numeric" => self.synth.d_numeric = parse(k, v)?,
            "synth.d_categorical" => self.synth.d_categorical = parse(k, v)?,
            "synth.cardinality" => self.synth.cardinality = parse(k, v)?,
            "synth.base_rate" => self.synth.base_rate = parse(k, v)?,
            "synth.treatment_fraction" => self.synth.treatment_fraction = parse(k, v)?,
            "synth.noise_features" => self.synth.noise_features = parse(k, v)?,
            "synth.seed" => self.synth_seed = Some(parse(k, v)?),
            "split.train" => self.split.train = parse(k, v)?,
            "split.valid" => self.split.valid = parse(k, v)?,
            "split.test" => self.split.test = parse(k, v)?,
            "split.seed" => self.split_seed = Some(parse(k, v)?),
            "split.path" => self.split_path = Some(PathBuf::from(v)),
            "tree.criterion" => self.tree.criterion = parse::<Criterion>(k, v)?,
            "tree.max_depth" => self.tree.max_depth = parse(k, v)?,
            "tree.min_samples_per_arm" => self.tree.min_samples_per_arm = parse(k, v)?,
            "tree.min_gain" => self.tree.min_gain = parse(k, v)?,
            "tree.numeric_split_candidates" => self.tree.numeric_split_candidates = parse(k, v)?,
            "tree.path" => self.tree_path = Some(PathBuf::from(v)),
            "student.hidden_sizes" => self.student.hidden_sizes = list(k, v)?,
            "student.embedding_dim" => self.student.embedding_dim = parse(k, v)?,
            "student.activation" => self.student.activation = parse(k, v)?,
            "student.optimizer" => self.student.optimizer = parse(k, v)?,
            "student.learning_rate" => self.student.learning_rate = parse(k, v)?,
            "student.lr_decay_factor" => self.student.lr_decay_factor = parse(k, v)?,
            "student.lr_decay_patience" => self.student.lr_decay_patience = parse(k, v)?,
            "student.init_seed" => self.student.init_seed = parse(k, v)?,
            "train.method" => self.method = parse(k, v)?,
            "train.lambda" => self.hyper.lambda = parse(k, v)?,
            "train.batch_size" => self.hyper.batch_size = parse(k, v)?,
            "train.max_epochs" => self.hyper.max_epochs = parse(k, v)?,
            "train.early_stop_patience" => self.hyper.early_stop_patience = parse(k, v)?,
            "train.drop_leftovers" => self.hyper.drop_leftovers = boolean(k, v)?,
            "train.plain_stream" => {
                self.plain_order = match v {
                    "matched" => PlainOrder::Matched,
                    "shuffled" => PlainOrder::Shuffled,
                    _ => bail!("train.plain_stream must be matched or shuffled, got {v:?}"),
                }
            }
            "eval.tie_seed" => self.tie_seed = Some(parse(k, v)?),
            "compare.methods" => self.compare_methods = list(k, v)?,
            "compare.seeds" => self.compare_seeds = list(k, v)?,
            _ => bail!("unknown config key `{k}`"),
        }
        Ok(())
    }

    pub fn set_tie_seed(&mut self, tie_seed: u64) {
        self.tie_seed = Some(tie_seed);
    }

    pub fn set_criterion(&mut self, criterion: &str) -> Result<()> {
        self.tree.criterion = criterion.parse().map_err(|e| anyhow!("--criterion: {e}"))?;
        Ok(())
    }

    pub fn synth_config(&self) -> SyntheticConfig {
        SyntheticConfig {
            seed: self.synth_seed.unwrap_or_else(|| seed::derive(self.seed, stream::DATA, 0)),
            ..self.synth.clone()
        }
    }

    pub fn split_seed(&self) -> u64 {
        self.split_seed.unwrap_or_else(|| seed::derive(self.seed, stream::SPLIT, 0))
    }

    pub fn tie_seed(&self) -> u64 {
        self.tie_seed.unwrap_or_else(|| seed::derive(self.seed, stream::TEST_TIE, 0))
    }

    pub fn hyper_for(&self, master_seed: u64) -> KdsmHyper {
        KdsmHyper {
            master_seed,
            ..self.hyper.clone()
        }
    }

    pub fn csv_path(&self) -> PathBuf {
        self.data.csv.clone().unwrap_or_else(|| self.out.join("data.csv"))
    }

    /// The schema sidecar defaults to the CSV path with a `.schema` extension.
    pub fn schema_path(&self) -> PathBuf {
        self.data.schema.clone().unwrap_or_else(|| self.csv_path().with_extension("schema"))
    }

    pub fn split_file(&self) -> PathBuf {
        self.split_path.clone().unwrap_or_else(|| self.out.join("split.txt"))
    }

    pub fn tree_file(&self) -> PathBuf {
        self.tree_path.clone().unwrap_or_else(|| self.out.join("tree.txt"))
    }

    /// Checks every nested invariant.
    pub fn validate(&self) -> Result<()> {
        self.synth_config().validate()?;
        self.split.validate()?;
        self.tree.validate()?;
        self.student.validate()?;
        self.hyper.validate()?;
        if self.compare_methods.is_empty() || self.compare_seeds.is_empty() {
            bail!("compare.methods and compare.seeds must not be empty");
        }
        let mut seen = self.compare_seeds.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.compare_seeds.len() {
            bail!("compare.seeds contains duplicates");
        }
        let mut methods = self.compare_methods.clone();
        methods.sort_unstable();
        methods.dedup();
        if methods.len() != self.compare_methods.len() {
            bail!("compare.methods contains duplicates");
        }
        Ok(())
    }
}

/// Fails with a message naming how to provide the file when it is missing.
pub fn require_file(path: &Path, what: &str, hint: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        bail!("{what} {} not found; {hint}", path.display())
    }
}
