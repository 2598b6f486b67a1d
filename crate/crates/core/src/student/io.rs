//! Text serialization for student models.
//!
//! ```text
//! # kdsm student
//! version=1
//! head=response
//! hidden_sizes=64,32
//! embedding_dim=8
//! activation=relu
//! optimizer=adam:0.9:0.999:0.00000001
//! learning_rate=0.01
//! lr_decay_factor=0.1
//! lr_decay_patience=3
//! init_seed=0
//! schema=<column>;<column>;...
//! norm_mean=<comma-separated>
//! norm_std=<comma-separated>
//! params=<count>
//! <one parameter per line>
//! ```
//!
//! Floats are written in shortest round-trip form, so a reload predicts
//! bit for bit the same values.

use super::{Head, Normalizer, StudentConfig, StudentError, StudentModel};
use crate::data::FeatureSchema;
use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

const MAGIC: &str = "# kdsm student";
const VERSION: u32 = 1;

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

impl StudentModel {
    pub fn to_text(&self) -> String {
        let c = self.config();
        let mut out = format!("{MAGIC}\n");
        writeln!(out, "version={VERSION}").unwrap();
        writeln!(out, "head={}", self.head().as_str()).unwrap();
        writeln!(out, "hidden_sizes={}", join(&c.hidden_sizes)).unwrap();
        writeln!(out, "embedding_dim={}", c.embedding_dim).unwrap();
        writeln!(out, "activation={}", c.activation.as_str()).unwrap();
        writeln!(out, "optimizer={}", c.optimizer).unwrap();
        writeln!(out, "learning_rate={}", c.learning_rate).unwrap();
        writeln!(out, "lr_decay_factor={}", c.lr_decay_factor).unwrap();
        writeln!(out, "lr_decay_patience={}", c.lr_decay_patience).unwrap();
        writeln!(out, "init_seed={}", c.init_seed).unwrap();
        let schema_text = self.schema().to_text();
        let schema_body: Vec<&str> = schema_text
            .lines()
            .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
            .map(str::trim)
            .collect::<Vec<_>>();
        writeln!(out, "schema={}", schema_body.join(";")).unwrap();
        writeln!(out, "norm_mean={}", join(&self.normalizer().mean)).unwrap();
        writeln!(out, "norm_std={}", join(&self.normalizer().std)).unwrap();
        writeln!(out, "params={}", self.n_params()).unwrap();
        for p in self.params() {
            writeln!(out, "{p}").unwrap();
        }
        out
    }

    pub fn parse_text(text: &str) -> Result<Self, StudentError> {
        let bad = |m: String| StudentError::Format(m);
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some(MAGIC) {
            return Err(bad(format!("missing `{MAGIC}` header")));
        }
        let mut header: HashMap<&str, &str> = HashMap::new();
        for line in lines.by_ref() {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("unrecognized line {line:?}")))?;
            header.insert(k.trim(), v.trim());
            if k.trim() == "params" {
                break;
            }
        }
        let get = |k: &str| header.get(k).copied().ok_or_else(|| bad(format!("missing `{k}`")));
        let num = |k: &str| -> Result<f64, StudentError> {
            get(k)?.parse().map_err(|_| bad(format!("`{k}` is not a number")))
        };
        let int = |k: &str| -> Result<u64, StudentError> {
            get(k)?.parse().map_err(|_| bad(format!("`{k}` is not an integer")))
        };
        let list = |k: &str| -> Result<Vec<f64>, StudentError> {
            let v = get(k)?;
            if v.is_empty() {
                return Ok(Vec::new());
            }
            v.split(',')
                .map(|x| x.parse().map_err(|_| bad(format!("bad value {x:?} in `{k}`"))))
                .collect()
        };
        if int("version")? != VERSION as u64 {
            return Err(bad(format!("unsupported version {}", get("version")?)));
        }
        let hidden = get("hidden_sizes")?;
        let hidden_sizes = if hidden.is_empty() {
            Vec::new()
        } else {
            hidden
                .split(',')
                .map(|h| h.parse().map_err(|_| bad(format!("bad hidden size {h:?}"))))
                .collect::<Result<_, _>>()?
        };
        let config = StudentConfig {
            hidden_sizes,
            embedding_dim: int("embedding_dim")? as usize,
            activation: get("activation")?.parse()?,
            optimizer: get("optimizer")?.parse()?,
            learning_rate: num("learning_rate")?,
            lr_decay_factor: num("lr_decay_factor")?,
            lr_decay_patience: int("lr_decay_patience")? as usize,
            init_seed: int("init_seed")?,
        };
        let schema_text = format!("# kdsm schema v1\n{}\n", get("schema")?.replace(';', "\n"));
        let schema = FeatureSchema::parse_text(&schema_text).map_err(|e| bad(format!("schema: {e}")))?;
        let head: Head = get("head")?.parse()?;
        let normalizer = Normalizer {
            mean: list("norm_mean")?,
            std: list("norm_std")?,
        };
        let count = int("params")? as usize;
        let params: Vec<f64> = lines
            .filter(|l| !l.trim().is_empty())
            .map(|l| l.trim().parse().map_err(|_| bad(format!("bad parameter {l:?}"))))
            .collect::<Result<_, _>>()?;
        if params.len() != count {
            return Err(bad(format!("expected {count} parameters, found {}", params.len())));
        }
        StudentModel::from_parts(schema, config, head, normalizer, params)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), StudentError> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, StudentError> {
        Self::parse_text(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_synthetic, SyntheticConfig};
    use crate::student::Activation;
    use crate::UpliftPredictor;

    #[test]
    fn round_trip_preserves_predictions() {
        let (ds, _) = gen_synthetic(&SyntheticConfig { n: 500, seed: 4, ..Default::default() }).unwrap();
        for (head, act) in [(Head::Response, Activation::Relu), (Head::Regression, Activation::Tanh)] {
            let cfg = StudentConfig { hidden_sizes: vec![7, 3], activation: act, ..Default::default() };
            let m = StudentModel::for_training(&ds, cfg, head, 12).unwrap();
            let back = StudentModel::parse_text(&m.to_text()).unwrap();
            assert_eq!(m, back);
            let a = m.predict_uplift_all(&ds);
            let b = back.predict_uplift_all(&ds);
            assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn rejects_damaged_files() {
        let (ds, _) = gen_synthetic(&SyntheticConfig { n: 200, seed: 4, ..Default::default() }).unwrap();
        let m = StudentModel::for_training(&ds, StudentConfig { hidden_sizes: vec![2], ..Default::default() }, Head::Response, 1).unwrap();
        let text = m.to_text();
        assert!(StudentModel::parse_text(&text.replace("version=1", "version=2")).is_err());
        assert!(StudentModel::parse_text(&text.replace("head=response", "head=tower")).is_err());
        let mut short: Vec<&str> = text.lines().collect();
        short.pop();
        assert!(StudentModel::parse_text(&short.join("\n")).is_err());
        assert!(StudentModel::parse_text("not a model").is_err());
    }
}
