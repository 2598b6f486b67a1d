use anyhow::Result;
use clap::{Parser, Subcommand};
use kdsm_cli::{commands, compare, RunConfig};
use std::path::PathBuf;
use std::process::ExitCode;

/// Uplift modeling by distilling an uplift tree into a response model.
#[derive(Parser)]
#[command(name = "kdsm", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Flat key=value configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Weight of the distillation term.
    #[arg(long, global = true)]
    lambda: Option<f64>,
    /// Tree splitting criterion: ed or kl.
    #[arg(long, global = true)]
    criterion: Option<String>,
    /// Seed for tie-breaking when ranking the test split.
    #[arg(long, global = true)]
    tie_seed: Option<u64>,
    /// Drop rows left unmatched instead of training on them alone.
    #[arg(long, global = true)]
    drop_leftovers: bool,
    /// Teacher tree file (default: <out>/tree.txt).
    #[arg(long, global = true)]
    tree: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic randomized trial.
    Synth,
    /// Stratified train/valid/test split.
    Split,
    /// Fit the teacher tree on the training split.
    FitTree,
    /// Train one method.
    Train {
        /// kdsm, kdss, plain, tm or mom.
        #[arg(long)]
        method: Option<String>,
    },
    /// Score saved models on the test split.
    Evaluate {
        #[arg(long = "model", required = true)]
        models: Vec<PathBuf>,
    },
    /// Train every configured method for every seed and tabulate.
    Compare,
}

fn build_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    if let Some(l) = cli.lambda {
        cfg.hyper.lambda = l;
    }
    if let Some(c) = &cli.criterion {
        cfg.set_criterion(c)?;
    }
    if let Some(t) = cli.tie_seed {
        cfg.set_tie_seed(t);
    }
    if cli.drop_leftovers {
        cfg.hyper.drop_leftovers = true;
    }
    if let Some(t) = &cli.tree {
        cfg.tree_path = Some(t.clone());
    }
    if let Command::Train { method: Some(m) } = &cli.command {
        cfg.method = m.parse().map_err(|e| anyhow::anyhow!("--method: {e}"))?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<String> {
    let cfg = build_config(&cli)?;
    match &cli.command {
        Command::Synth => commands::synth(&cfg),
        Command::Split => commands::split(&cfg),
        Command::FitTree => commands::fit_tree_cmd(&cfg),
        Command::Train { .. } => commands::train(&cfg),
        Command::Evaluate { models } => commands::evaluate(&cfg, models),
        Command::Compare => compare(&cfg).map(|r| r.to_text()),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
