//! Methods x seeds comparison on the test split.
//!
//! ```text
//! # kdsm comparison report v1
//! lambda=0.5
//! tie_seed=...
//! test_rows=10000
//! method,seed,auuc,qini,status
//! plain,0,0.71,0.0021,ok
//! ...
//! # medians
//! method,runs,median_auuc,median_qini
//! kdsm,5,0.72,0.0025
//! ...
//! ```
//!
//! Rows are ordered by configured method order, then seed. Median rows are
//! sorted by median Qini, descending; methods with no successful run are
//! listed last with `failed` medians.

use crate::commands::{load_parts, train_method, write, Parts};
use crate::config::{Method, RunConfig};
use anyhow::{anyhow, bail, Context, Result};
use kdsm::metrics;
use kdsm::tree::fit_tree;
use rayon::prelude::*;
use std::fmt::Write as _;
use std::path::Path;

#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Ok { auuc: Option<f64>, qini: f64 },
    Failed(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub method: String,
    pub seed: u64,
    pub outcome: Outcome,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MedianRow {
    pub method: String,
    pub runs: usize,
    pub auuc: Option<f64>,
    pub qini: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub lambda: f64,
    pub tie_seed: u64,
    pub test_rows: usize,
    pub rows: Vec<Row>,
    pub medians: Vec<MedianRow>,
}

/// Median with the mean of the two middle values for even counts.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}

fn medians(rows: &[Row]) -> Vec<MedianRow> {
    let mut methods: Vec<&str> = Vec::new();
    for r in rows {
        if !methods.contains(&r.method.as_str()) {
            methods.push(&r.method);
        }
    }
    let mut out: Vec<MedianRow> = methods
        .into_iter()
        .map(|m| {
            let ok: Vec<(Option<f64>, f64)> = rows
                .iter()
                .filter(|r| r.method == m)
                .filter_map(|r| match r.outcome {
                    Outcome::Ok { auuc, qini } => Some((auuc, qini)),
                    Outcome::Failed(_) => None,
                })
                .collect();
            let auucs: Vec<f64> = ok.iter().filter_map(|o| o.0).collect();
            let qinis: Vec<f64> = ok.iter().map(|o| o.1).collect();
            MedianRow {
                method: m.to_string(),
                runs: ok.len(),
                auuc: median(&auucs),
                qini: median(&qinis),
            }
        })
        .collect();
    // Stable: ties keep configured order; failed methods sink.
    out.sort_by(|a, b| match (a.qini, b.qini) {
        (Some(x), Some(y)) => y.total_cmp(&x),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => std::cmp::Ordering::Equal,
    });
    out
}

fn opt(v: Option<f64>, missing: &str) -> String {
    v.map_or(missing.to_string(), |v| v.to_string())
}

impl ComparisonReport {
    pub fn new(lambda: f64, tie_seed: u64, test_rows: usize, rows: Vec<Row>) -> Self {
        let medians = medians(&rows);
        Self {
            lambda,
            tie_seed,
            test_rows,
            rows,
            medians,
        }
    }

    pub fn median_of(&self, method: &str) -> Option<&MedianRow> {
        self.medians.iter().find(|m| m.method == method)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("# kdsm comparison report v1\n");
        writeln!(out, "lambda={}", self.lambda).unwrap();
        writeln!(out, "tie_seed={}", self.tie_seed).unwrap();
        writeln!(out, "test_rows={}", self.test_rows).unwrap();
        out.push_str("method,seed,auuc,qini,status\n");
        for r in &self.rows {
            match &r.outcome {
                Outcome::Ok { auuc, qini } => {
                    writeln!(out, "{},{},{},{qini},ok", r.method, r.seed, opt(*auuc, "undefined")).unwrap()
                }
                // Commas would break the record; the message goes to stderr
                // in full.
                Outcome::Failed(msg) => {
                    writeln!(out, "{},{},,,failed: {}", r.method, r.seed, msg.replace([',', '\n'], ";")).unwrap()
                }
            }
        }
        out.push_str("# medians\nmethod,runs,median_auuc,median_qini\n");
        for m in &self.medians {
            writeln!(out, "{},{},{},{}", m.method, m.runs, opt(m.auuc, "undefined"), opt(m.qini, "failed")).unwrap();
        }
        out
    }

    pub fn parse_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some("# kdsm comparison report v1") {
            bail!("missing comparison report header");
        }
        let mut header = |key: &str| -> Result<String> {
            let line = lines.next().ok_or_else(|| anyhow!("report ends before `{key}`"))?;
            line.strip_prefix(&format!("{key}="))
                .map(str::to_string)
                .ok_or_else(|| anyhow!("expected `{key}=`, got {line:?}"))
        };
        let lambda: f64 = header("lambda")?.parse()?;
        let tie_seed: u64 = header("tie_seed")?.parse()?;
        let test_rows: usize = header("test_rows")?.parse()?;
        let num = |s: &str| -> Result<Option<f64>> {
            match s {
                "undefined" | "failed" => Ok(None),
                _ => Ok(Some(s.parse()?)),
            }
        };
        let mut rows = Vec::new();
        let mut medians = Vec::new();
        let mut in_medians = false;
        for line in lines {
            if line == "# medians" {
                in_medians = true;
                continue;
            }
            if line.starts_with("method,") || line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.splitn(5, ',').collect();
            if in_medians {
                let [method, runs, auuc, qini] = f.as_slice() else {
                    bail!("bad median row {line:?}");
                };
                medians.push(MedianRow {
                    method: method.to_string(),
                    runs: runs.parse()?,
                    auuc: num(auuc)?,
                    qini: num(qini)?,
                });
            } else {
                let [method, seed, auuc, qini, status] = f.as_slice() else {
                    bail!("bad row {line:?}");
                };
                let outcome = match status.strip_prefix("failed: ") {
                    Some(msg) => Outcome::Failed(msg.to_string()),
                    None => Outcome::Ok {
                        auuc: num(auuc)?,
                        qini: qini.parse()?,
                    },
                };
                rows.push(Row {
                    method: method.to_string(),
                    seed: seed.parse()?,
                    outcome,
                });
            }
        }
        Ok(Self {
            lambda,
            tie_seed,
            test_rows,
            rows,
            medians,
        })
    }
}

fn run_cell(
    cfg: &RunConfig,
    parts: &Parts,
    tree: Option<&kdsm::UpliftTree>,
    method: Method,
    seed: u64,
    dir: &Path,
) -> Result<Outcome> {
    let hyper = cfg.hyper_for(seed);
    let (model, report) = train_method(method, parts, tree, &cfg.student, &hyper, cfg.plain_order)?;
    write(&dir.join("model.txt"), model.to_text())?;
    write(&dir.join("report.txt"), report.to_text())?;
    let test = &parts.test;
    let ev = metrics::rank_eval(&model.predict(test), test.treatment(), test.outcome(), cfg.tie_seed())?;
    Ok(Outcome::Ok {
        auuc: metrics::auuc(&ev).ok(),
        qini: metrics::qini_coefficient(&ev),
    })
}

/// Runs every (method, seed) cell in its own `out/compare/<method>-s<seed>/`
/// directory and writes `out/compare/report.txt`. A failing cell is recorded
/// as a failed row; the others proceed.
pub fn compare(cfg: &RunConfig) -> Result<ComparisonReport> {
    cfg.validate()?;
    let parts = load_parts(cfg)?;
    let root = cfg.out.join("compare");
    let needs_tree = cfg.compare_methods.iter().any(|m| m.needs_tree(cfg.plain_order));
    let tree = if needs_tree {
        let tree = fit_tree(&parts.train, &cfg.tree).context("fitting the teacher")?;
        write(&root.join("tree.txt"), tree.to_text())?;
        Some(tree)
    } else {
        None
    };
    let cells: Vec<(Method, u64)> = cfg
        .compare_methods
        .iter()
        .flat_map(|&m| cfg.compare_seeds.iter().map(move |&s| (m, s)))
        .collect();
    let rows: Vec<Row> = cells
        .par_iter()
        .map(|&(method, seed)| {
            let dir = root.join(format!("{}-s{seed}", method.as_str()));
            let outcome = run_cell(cfg, &parts, tree.as_ref(), method, seed, &dir).unwrap_or_else(|e| {
                eprintln!("warning: {} seed {seed} failed: {e:#}", method.as_str());
                Outcome::Failed(format!("{e:#}"))
            });
            Row {
                method: method.as_str().to_string(),
                seed,
                outcome,
            }
        })
        .collect();
    let report = ComparisonReport::new(cfg.hyper.lambda, cfg.tie_seed(), parts.test.n_rows(), rows);
    write(&root.join("report.txt"), report.to_text())?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(method: &str, seed: u64, qini: f64) -> Row {
        Row {
            method: method.into(),
            seed,
            outcome: Outcome::Ok { auuc: Some(0.5 + qini), qini },
        }
    }

    #[test]
    fn fifteen_rows_three_medians_sorted() {
        let mut rows = Vec::new();
        for (m, base) in [("plain", 0.001), ("kdss", 0.003), ("kdsm", 0.002)] {
            for s in 0..5 {
                rows.push(row(m, s, base + s as f64 * 1e-4));
            }
        }
        let r = ComparisonReport::new(0.5, 1, 100, rows);
        assert_eq!(r.rows.len(), 15);
        let order: Vec<&str> = r.medians.iter().map(|m| m.method.as_str()).collect();
        assert_eq!(order, ["kdss", "kdsm", "plain"]);
        assert_eq!(r.median_of("kdsm").unwrap().qini, Some(0.002 + 2e-4));
        assert_eq!(ComparisonReport::parse_text(&r.to_text()).unwrap(), r);
    }

    #[test]
    fn failed_rows_are_marked_and_sink() {
        let rows = vec![
            row("plain", 0, 0.001),
            Row {
                method: "tm".into(),
                seed: 0,
                outcome: Outcome::Failed("arm empty, giving up".into()),
            },
        ];
        let r = ComparisonReport::new(0.5, 1, 100, rows);
        let text = r.to_text();
        assert!(text.contains("tm,0,,,failed: arm empty; giving up\n"));
        assert!(text.ends_with("tm,0,undefined,failed\n"));
        let back = ComparisonReport::parse_text(&text).unwrap();
        assert_eq!(back.medians, r.medians);
    }

    #[test]
    fn even_median_averages() {
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), Some(2.5));
        assert_eq!(median(&[]), None);
    }
}
