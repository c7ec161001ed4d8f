use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use goral::harness::{self, ExperimentConfig};

#[derive(Parser)]
#[command(name = "goral", version, about = "Goal-oriented active learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one strategy and write learning/goal curves.
    Run(Common),
    /// Compare exact and approximate utilities on a fixed pool.
    ApproxCheck(Common),
    /// Sample exact batch utilities for histogramming.
    UtilHist(Common),
    /// Adversarial synth2 study across strategies.
    Synth2(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `out_dir` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seeds as `a..b`, `a..=b`, or a comma list; overrides the config.
    #[arg(long)]
    seeds: Option<String>,
    /// Record every iteration's pool utilities (`run` only).
    #[arg(long)]
    snapshot_utilities: bool,
}

impl Common {
    fn resolve(&self) -> Result<(ExperimentConfig, PathBuf, Vec<u64>)> {
        let cfg = ExperimentConfig::load(&self.config)
            .with_context(|| format!("loading {}", self.config.display()))?;
        let out = self
            .out
            .clone()
            .or_else(|| cfg.out_dir.clone())
            .context("no output directory: pass --out or set out_dir")?;
        let seeds = match &self.seeds {
            Some(s) => harness::parse_seeds(s)?,
            None => cfg.seeds.clone(),
        };
        Ok((cfg, out, seeds))
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run(c) => {
            let (cfg, out, seeds) = c.resolve()?;
            let hs = harness::cmd_run(&cfg, &out, &seeds, c.snapshot_utilities)?;
            for (seed, h) in seeds.iter().zip(&hs) {
                let last = h.records.last().expect("history has an init record");
                println!(
                    "seed {seed}: {} labels, test accuracy {:.4}",
                    last.n_labeled, last.test_accuracy
                );
            }
        }
        Command::ApproxCheck(c) => {
            let (cfg, out, seeds) = c.resolve()?;
            let rows = harness::cmd_approx_check(&cfg, &out, &seeds)?;
            for r in harness::correlations(&rows) {
                println!(
                    "{:<6} {:<22} n={:<4} spearman={:>8} pearson={:>8}",
                    r.mode,
                    r.resolver,
                    r.n,
                    fmt_opt(r.spearman),
                    fmt_opt(r.pearson)
                );
            }
        }
        Command::UtilHist(c) => {
            let (cfg, out, seeds) = c.resolve()?;
            let rows = harness::cmd_util_hist(&cfg, &out, &seeds)?;
            println!("{} utility samples written to {}", rows.len(), out.join("histograms.csv").display());
        }
        Command::Synth2(c) => {
            let (cfg, out, seeds) = c.resolve()?;
            let study = harness::cmd_synth2(&cfg, &out, &seeds)?;
            for s in study.summary(cfg.synth2.target_accuracy) {
                println!(
                    "{:<32} median queries to {}: {:>6}  central share of first 50: {:.2}",
                    s.strategy,
                    cfg.synth2.target_accuracy,
                    s.median_queries_to_target.map_or("never".into(), |m| m.to_string()),
                    s.central_rate_first_50
                );
            }
        }
    }
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("n/a".into(), |v| format!("{v:.4}"))
}
