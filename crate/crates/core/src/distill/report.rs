use std::fmt::Write as _;

/// One training epoch. Losses are means over the epoch's loss units, taken
/// before each batch's update.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub pairs: usize,
    pub singletons: usize,
    pub hard: f64,
    pub soft: f64,
    pub total: f64,
    /// `None` when the validation AUUC is undefined.
    pub valid_auuc: Option<f64>,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub method: String,
    pub lambda: f64,
    pub master_seed: u64,
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were returned.
    pub best_epoch: Option<usize>,
    pub best_valid_auuc: Option<f64>,
    pub stopped_early: bool,
}

fn opt(v: Option<f64>) -> String {
    v.map_or("undefined".to_string(), |v| v.to_string())
}

impl TrainReport {
    /// One CSV record per epoch followed by a `key=value` summary block.
    pub fn to_text(&self) -> String {
        let mut out = String::from("# kdsm train report v1\n");
        out.push_str("epoch,pairs,singletons,hard,soft,total,valid_auuc,learning_rate\n");
        for e in &self.epochs {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                e.epoch,
                e.pairs,
                e.singletons,
                e.hard,
                e.soft,
                e.total,
                opt(e.valid_auuc),
                e.learning_rate
            )
            .unwrap();
        }
        out.push_str("# summary\n");
        writeln!(out, "method={}", self.method).unwrap();
        writeln!(out, "lambda={}", self.lambda).unwrap();
        writeln!(out, "master_seed={}", self.master_seed).unwrap();
        writeln!(out, "epochs_run={}", self.epochs.len()).unwrap();
        writeln!(out, "best_epoch={}", self.best_epoch.map_or("none".to_string(), |b| b.to_string())).unwrap();
        writeln!(out, "best_valid_auuc={}", opt(self.best_valid_auuc)).unwrap();
        writeln!(out, "stop={}", if self.stopped_early { "early_stopping" } else { "max_epochs" }).unwrap();
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_layout() {
        let r = TrainReport {
            method: "kdsm".into(),
            lambda: 0.5,
            master_seed: 3,
            epochs: vec![EpochRecord {
                epoch: 0,
                pairs: 10,
                singletons: 2,
                hard: 0.5,
                soft: 0.01,
                total: 0.505,
                valid_auuc: None,
                learning_rate: 0.01,
            }],
            best_epoch: None,
            best_valid_auuc: None,
            stopped_early: false,
        };
        let text = r.to_text();
        assert!(text.contains("\n0,10,2,0.5,0.01,0.505,undefined,0.01\n"));
        assert!(text.contains("best_epoch=none\n"));
        assert!(text.ends_with("stop=max_epochs\n"));
    }
}
