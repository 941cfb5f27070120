//! `finx`: train, backtest, search and report for the dual-agent allocator.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use finx_core::backtest::Strategy;
use finx_core::commands::{self, Split};
use finx_core::config::RunConfig;

#[derive(Parser)]
#[command(name = "finx", version, about = "Dual-agent portfolio allocation with extended-universe exploration")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct RunArgs {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Data directory used when the config names none.
    #[arg(long, env = "FINX_DATA_DIR")]
    data_dir: Option<PathBuf>,
}

impl RunArgs {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::load(&self.config).with_context(|| format!("loading {}", self.config.display()))?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.out_dir = out.clone();
        }
        if cfg.data_dir.is_none() {
            cfg.data_dir = self.data_dir.clone();
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train the agents on the training split.
    Train {
        #[command(flatten)]
        run: RunArgs,
        /// finxplore (both agents) or no-explore (allocation agent only).
        #[arg(long, default_value = "finxplore")]
        strategy: Strategy,
    },
    /// Evaluate a trained checkpoint or a baseline.
    Backtest {
        #[command(flatten)]
        run: RunArgs,
        /// finxplore | no-explore | mvo | winner | loser | index
        #[arg(long, default_value = "finxplore")]
        strategy: Strategy,
        /// Agent checkpoint; defaults to <out>/checkpoint.json.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Split to evaluate on: trade or train.
        #[arg(long, default_value = "trade")]
        split: Split,
    },
    /// Seeded random hyperparameter search.
    Search {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value_t = 10)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        search_seed: u64,
        /// Parallel worker threads.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Aggregate backtest run directories into comparison tables.
    Report {
        /// Completed backtest run directories.
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long, default_value = "report")]
        out: PathBuf,
    },
    /// Write a synthetic market and a matching demo config.
    Synth {
        #[arg(long, default_value = "demo")]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 600)]
        days: usize,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { run, strategy } => {
            let cfg = run.load()?;
            let summary = commands::cmd_train(&cfg, strategy)?;
            let best = summary.report.best_episode.map(|e| e.to_string()).unwrap_or_else(|| "-".into());
            println!(
                "trained {} episodes, best episode {best}; artifacts in {}",
                summary.report.episodes.len(),
                summary.out_dir.display()
            );
        }
        Command::Backtest {
            run,
            strategy,
            checkpoint,
            split,
        } => {
            let cfg = run.load()?;
            let s = commands::cmd_backtest(&cfg, strategy, checkpoint.as_deref(), split)?;
            for w in &s.warnings {
                eprintln!("warning: {w}");
            }
            let m = &s.metrics;
            let opt = |x: Option<f64>| x.map(|v| format!("{v:.4}")).unwrap_or_else(|| "n/a".into());
            println!(
                "{strategy}: cumulative {:.2}%  annualized {:.2}%  sharpe {}  calmar {}  volatility {:.2}%  max drawdown {:.2}%",
                m.cumulative_return_pct,
                m.annualized_return_pct,
                opt(m.sharpe),
                opt(m.calmar),
                m.annual_volatility_pct,
                m.max_drawdown * 100.0
            );
            println!("artifacts in {}", s.out_dir.display());
        }
        Command::Search {
            run,
            samples,
            search_seed,
            jobs,
        } => {
            let cfg = run.load()?;
            let rows = commands::cmd_search(&cfg, samples, search_seed, jobs)?;
            for r in rows.iter().take(5) {
                let s = r.validation_sharpe.map(|s| format!("{s:.4}")).unwrap_or_else(|| "n/a".into());
                println!("#{} sample {} validation sharpe {s}", r.rank, r.sample);
            }
            println!("leaderboard in {}", cfg.out_dir.join(commands::LEADERBOARD).display());
        }
        Command::Report { runs, out } => {
            let summaries = commands::cmd_report(&runs, &out)?;
            for s in &summaries {
                let sharpe = s.metrics["sharpe"];
                println!(
                    "{}: {} run(s), sharpe {} ± {}",
                    s.strategy,
                    s.runs,
                    sharpe.mean.map(|v| format!("{v:.4}")).unwrap_or_else(|| "n/a".into()),
                    sharpe.std.map(|v| format!("{v:.4}")).unwrap_or_else(|| "n/a".into()),
                );
            }
            println!("report in {}", out.display());
        }
        Command::Synth { out, seed, days } => {
            let path = commands::cmd_synth(&out, seed, days)?;
            println!("synthetic market written; config at {}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
