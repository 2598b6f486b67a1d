//! Text serialization for fitted trees.
//!
//! ```text
//! # kdsm tree
//! version=1
//! schema=<fingerprint>
//! n_features=<d>
//! criterion=ed
//! max_depth=5
//! min_samples_per_arm=100
//! min_gain=0
//! numeric_split_candidates=32
//! nodes=<count>
//! node id=0 rule=le:3:0.5 left=1 right=2 n_t=.. n_c=.. pos_t=.. pos_c=.. leaf=-
//! ```
//!
//! Rules are `le:<feature>:<threshold>`, `eq:<feature>:<code>` or `-`.
//! Thresholds use the shortest decimal form that parses back to the same
//! `f64`, so a load reproduces every field bit for bit.

use super::{Node, NodeStats, SplitRule, TreeError, TreeParams, UpliftTree};
use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

const VERSION: u32 = 1;

impl UpliftTree {
    pub fn to_text(&self) -> String {
        let p = &self.params;
        let mut out = String::from("# kdsm tree\n");
        writeln!(out, "version={VERSION}").unwrap();
        writeln!(out, "schema={}", self.schema_fingerprint).unwrap();
        writeln!(out, "n_features={}", self.n_features).unwrap();
        writeln!(out, "criterion={}", p.criterion.as_str()).unwrap();
        writeln!(out, "max_depth={}", p.max_depth).unwrap();
        writeln!(out, "min_samples_per_arm={}", p.min_samples_per_arm).unwrap();
        writeln!(out, "min_gain={}", p.min_gain).unwrap();
        writeln!(out, "numeric_split_candidates={}", p.numeric_split_candidates).unwrap();
        writeln!(out, "nodes={}", self.nodes.len()).unwrap();
        for (id, node) in self.nodes.iter().enumerate() {
            let rule = match node.rule {
                None => "-".to_string(),
                Some(SplitRule::Threshold { feature, value }) => format!("le:{feature}:{value}"),
                Some(SplitRule::Equals { feature, code }) => format!("eq:{feature}:{code}"),
            };
            let opt = |v: Option<usize>| v.map_or("-".to_string(), |v| v.to_string());
            let s = node.stats;
            writeln!(
                out,
                "node id={id} rule={rule} left={} right={} n_t={} n_c={} pos_t={} pos_c={} leaf={}",
                opt(node.left),
                opt(node.right),
                s.n_t,
                s.n_c,
                s.pos_t,
                s.pos_c,
                opt(node.leaf_id)
            )
            .unwrap();
        }
        out
    }

    pub fn parse_text(text: &str) -> Result<Self, TreeError> {
        let bad = |msg: String| TreeError::Format(msg);
        let mut header: HashMap<&str, &str> = HashMap::new();
        let mut records = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(rest) = line.strip_prefix("node ") {
                records.push(rest);
            } else if let Some((k, v)) = line.split_once('=') {
                header.insert(k.trim(), v.trim());
            } else {
                return Err(bad(format!("unrecognized line {line:?}")));
            }
        }
        let get = |k: &str| header.get(k).copied().ok_or_else(|| bad(format!("missing `{k}`")));
        let num = |k: &str| -> Result<usize, TreeError> {
            get(k)?.parse().map_err(|_| bad(format!("`{k}` is not an integer")))
        };
        let version = num("version")?;
        if version != VERSION as usize {
            return Err(bad(format!("unsupported version {version}")));
        }
        let params = TreeParams {
            criterion: get("criterion")?.parse()?,
            max_depth: num("max_depth")?,
            min_samples_per_arm: num("min_samples_per_arm")?,
            min_gain: get("min_gain")?.parse().map_err(|_| bad("bad `min_gain`".into()))?,
            numeric_split_candidates: num("numeric_split_candidates")?,
        };
        let n_features = num("n_features")?;
        let count = num("nodes")?;
        if records.len() != count {
            return Err(bad(format!("expected {count} nodes, found {}", records.len())));
        }
        let mut nodes: Vec<Node> = Vec::with_capacity(count);
        for (expected_id, rec) in records.iter().enumerate() {
            let fields: HashMap<&str, &str> = rec
                .split_whitespace()
                .filter_map(|kv| kv.split_once('='))
                .collect();
            let field = |k: &str| fields.get(k).copied().ok_or_else(|| bad(format!("node {expected_id}: missing `{k}`")));
            let int = |k: &str| -> Result<usize, TreeError> {
                field(k)?.parse().map_err(|_| bad(format!("node {expected_id}: bad `{k}`")))
            };
            let opt = |k: &str| -> Result<Option<usize>, TreeError> {
                match field(k)? {
                    "-" => Ok(None),
                    v => v.parse().map(Some).map_err(|_| bad(format!("node {expected_id}: bad `{k}`"))),
                }
            };
            if int("id")? != expected_id {
                return Err(bad(format!("node ids must be dense and ordered (at {expected_id})")));
            }
            let rule = parse_rule(field("rule")?, n_features).map_err(|m| bad(format!("node {expected_id}: {m}")))?;
            nodes.push(Node {
                stats: NodeStats {
                    n_t: int("n_t")?,
                    n_c: int("n_c")?,
                    pos_t: int("pos_t")?,
                    pos_c: int("pos_c")?,
                },
                rule,
                left: opt("left")?,
                right: opt("right")?,
                leaf_id: opt("leaf")?,
                depth: 0,
            });
        }
        if nodes.is_empty() {
            return Err(bad("tree has no nodes".into()));
        }
        // Children must point forward, which also rules out cycles; depths
        // follow from the parent links.
        for id in 0..nodes.len() {
            let (rule, left, right, depth) = (nodes[id].rule, nodes[id].left, nodes[id].right, nodes[id].depth);
            match (rule, left, right) {
                (Some(_), Some(l), Some(r)) => {
                    for c in [l, r] {
                        if c <= id || c >= nodes.len() {
                            return Err(bad(format!("node {id}: child {c} out of order")));
                        }
                        nodes[c].depth = depth + 1;
                    }
                }
                (None, None, None) => {}
                _ => return Err(bad(format!("node {id}: rule and children disagree"))),
            }
            let s = nodes[id].stats;
            if s.pos_t > s.n_t || s.pos_c > s.n_c {
                return Err(bad(format!("node {id}: more positives than rows")));
            }
        }
        let declared: Vec<Option<usize>> = nodes.iter().map(|n| n.leaf_id).collect();
        let tree = UpliftTree::from_nodes(nodes, params, get("schema")?.to_string(), n_features);
        let rebuilt: Vec<Option<usize>> = tree.nodes.iter().map(|n| n.leaf_id).collect();
        if declared != rebuilt {
            return Err(bad("leaf ids are not dense in node order".into()));
        }
        Ok(tree)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), TreeError> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TreeError> {
        Self::parse_text(&std::fs::read_to_string(path)?)
    }
}

fn parse_rule(s: &str, n_features: usize) -> Result<Option<SplitRule>, String> {
    if s == "-" {
        return Ok(None);
    }
    let mut parts = s.splitn(3, ':');
    let (kind, feature, value) = (parts.next(), parts.next(), parts.next());
    let feature: usize = feature
        .and_then(|f| f.parse().ok())
        .ok_or_else(|| format!("bad rule {s:?}"))?;
    if feature >= n_features {
        return Err(format!("rule feature {feature} out of range"));
    }
    let value = value.ok_or_else(|| format!("bad rule {s:?}"))?;
    match kind {
        Some("le") => {
            let value: f64 = value.parse().map_err(|_| format!("bad threshold in {s:?}"))?;
            if !value.is_finite() {
                return Err(format!("non-finite threshold in {s:?}"));
            }
            Ok(Some(SplitRule::Threshold { feature, value }))
        }
        Some("eq") => Ok(Some(SplitRule::Equals {
            feature,
            code: value.parse().map_err(|_| format!("bad code in {s:?}"))?,
        })),
        _ => Err(format!("bad rule {s:?}")),
    }
}
