//! The CLI verbs as library functions: every artifact a command writes lands
//! in the configured output directory.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::Serialize;

use crate::backtest::{run_backtest, Backtest, Policy, Strategy};
use crate::baselines::{index_hold, price_weighted_index};
use crate::config::{stream_seed, RunConfig, UniverseConfig, DQN_STREAM, PPO_STREAM};
use crate::coordinator::{self, AgentCheckpoint, TraceRecord, TrainingReport, CHECKPOINT_FORMAT};
use crate::data::{self, align_rows, load_groups, slice_range, DateRange, PricePanel};
use crate::dqn::DqnAgent;
use crate::env::Environment;
use crate::metrics::{EquityCurve, MetricsReport};
use crate::ppo::PpoAgent;
use crate::report::{self, RunInfo, EQUITY_CSV, METRICS_CSV, METRICS_JSON, RUN_INFO, TRACE_JSONL};
use crate::search::{self, LeaderboardRow, SearchSpace};
use crate::synthetic::SyntheticSpec;
use crate::{Error, Result};

pub const CONFIG_SNAPSHOT: &str = "config.toml";
pub const TRAINING_REPORT: &str = "training_report.json";
pub const CHECKPOINT: &str = "checkpoint.json";
pub const FINAL_CHECKPOINT: &str = "checkpoint-final.json";
pub const LEADERBOARD: &str = "leaderboard.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Trade,
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "trade" => Ok(Split::Trade),
            other => Err(format!("unknown split '{other}' (expected train or trade)")),
        }
    }
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Trade => "trade",
        }
    }
}

/// Aligned panels for one configuration.
#[derive(Debug, Clone)]
pub struct Market {
    pub existing: PricePanel,
    pub extended: Option<PricePanel>,
    pub index: Option<PricePanel>,
}

pub fn load_market(universe: &UniverseConfig, dir: &Path) -> Result<Market> {
    universe.spec().validate()?;
    let index_group: Vec<String> = universe.index.iter().cloned().collect();
    let mut groups: Vec<&[String]> = vec![&universe.existing];
    if !universe.extended.is_empty() {
        groups.push(&universe.extended);
    }
    if !index_group.is_empty() {
        groups.push(&index_group);
    }
    let mut panels = load_groups(dir, &groups)?.into_iter();
    let existing = panels.next().expect("existing group");
    let extended = if universe.extended.is_empty() { None } else { panels.next() };
    let index = panels.next();
    Ok(Market {
        existing,
        extended,
        index,
    })
}

/// Environment rows for a split plus the index closes over the same rows.
pub struct Stage {
    pub env: Environment,
    pub index_closes: Vec<f64>,
}

pub fn stage(cfg: &RunConfig, market: &Market, split: Split) -> Result<Stage> {
    let warmup = cfg.env.warmup;
    let existing = match split {
        Split::Train => slice_range(&market.existing, &cfg.universe.train_range, "train")?,
        Split::Trade => {
            let (_, trade) = data::split(&market.existing, &cfg.universe.spec(), warmup)?;
            if trade.measured_from < warmup {
                return Err(data::DataError::TooShort {
                    len: trade.measured_from,
                    needed: warmup,
                }
                .into());
            }
            trade.panel
        }
    };
    if existing.len() < warmup + 2 {
        return Err(data::DataError::TooShort {
            len: existing.len(),
            needed: warmup + 2,
        }
        .into());
    }
    let extended = market.extended.as_ref().map(|e| align_rows(&existing, e)).transpose()?;
    let index_closes = match &market.index {
        Some(idx) => align_rows(&existing, idx)?.close_series(0),
        None => price_weighted_index(&(0..existing.n_assets()).map(|i| existing.close_series(i)).collect::<Vec<_>>()),
    };
    let env = Environment::new(&existing, extended.as_ref(), cfg.env.clone())?;
    Ok(Stage { env, index_closes })
}

pub fn build_agents(cfg: &RunConfig, env: &Environment, with_dqn: bool) -> Result<(PpoAgent, Option<DqnAgent>)> {
    let ppo = PpoAgent::new(env.base_dim(), env.n_assets(), cfg.ppo.clone(), stream_seed(cfg.seed, PPO_STREAM))?;
    let dqn = if with_dqn && env.n_extended() > 0 {
        Some(DqnAgent::new(
            env.augmented_dim(),
            env.n_extended(),
            cfg.dqn.clone(),
            stream_seed(cfg.seed, DQN_STREAM),
        )?)
    } else {
        None
    };
    Ok((ppo, dqn))
}

fn write(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(Error::io(path))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("artifacts serialize");
    text.push('\n');
    write(path, &text)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(Error::io(dir))
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub report: TrainingReport,
    pub out_dir: PathBuf,
}

/// Trains on the training split and writes the config snapshot, run info,
/// training report, best checkpoint and final checkpoint.
pub fn cmd_train(cfg: &RunConfig, strategy: Strategy) -> Result<TrainSummary> {
    cfg.validate()?;
    if !strategy.needs_checkpoint() {
        return Err(Error::Artifact {
            path: cfg.out_dir.clone(),
            message: format!("strategy {strategy} has nothing to train"),
        });
    }
    let market = load_market(&cfg.universe, &cfg.data_dir())?;
    let mut env = stage(cfg, &market, Split::Train)?.env;
    let stats = env.fit_norm_stats()?;
    env.set_norm_stats(stats)?;
    let (mut ppo, mut dqn) = build_agents(cfg, &env, strategy == Strategy::Finxplore)?;
    let outcome = coordinator::train(&mut env, &mut ppo, dqn.as_mut(), &cfg.coordinator, cfg.train.episodes)?;
    let last = AgentCheckpoint::capture(&ppo, dqn.as_ref(), env.norm_stats());

    let out = &cfg.out_dir;
    ensure_dir(out)?;
    cfg.save(&out.join(CONFIG_SNAPSHOT))?;
    write_json(&out.join(RUN_INFO), &RunInfo::new("train", strategy.name(), cfg.seed))?;
    write_json(&out.join(TRAINING_REPORT), &outcome.report)?;
    write_json(&out.join(CHECKPOINT), outcome.best.as_ref().unwrap_or(&last))?;
    write_json(&out.join(FINAL_CHECKPOINT), &last)?;
    Ok(TrainSummary {
        report: outcome.report,
        out_dir: out.clone(),
    })
}

pub fn load_checkpoint(path: &Path) -> Result<AgentCheckpoint> {
    if !path.is_file() {
        return Err(Error::MissingArtifacts(path.to_path_buf()));
    }
    let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
    let ckpt: AgentCheckpoint = serde_json::from_str(&text).map_err(|e| Error::Artifact {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    if ckpt.format != CHECKPOINT_FORMAT {
        return Err(Error::Artifact {
            path: path.to_path_buf(),
            message: format!("unsupported checkpoint format {:?}", ckpt.format),
        });
    }
    Ok(ckpt)
}

fn restore_agents(
    cfg: &RunConfig,
    env: &mut Environment,
    ckpt: &AgentCheckpoint,
    with_dqn: bool,
) -> Result<(PpoAgent, Option<DqnAgent>)> {
    let (mut ppo, mut dqn) = build_agents(cfg, env, with_dqn)?;
    let mismatch = |e: &dyn std::fmt::Display| Error::ShapeMismatch(e.to_string());
    ppo.load_checkpoint(&ckpt.ppo).map_err(|e| mismatch(&e))?;
    if let Some(agent) = dqn.as_mut() {
        let net = ckpt
            .dqn
            .as_ref()
            .ok_or_else(|| Error::ShapeMismatch("checkpoint has no exploration agent".into()))?;
        agent.load_checkpoint(net).map_err(|e| mismatch(&e))?;
    }
    if let Some(norm) = &ckpt.norm {
        env.set_norm_stats(norm.clone()).map_err(|e| mismatch(&e))?;
    }
    Ok((ppo, dqn))
}

#[derive(Debug, Clone)]
pub struct BacktestSummary {
    pub metrics: MetricsReport,
    pub curve: EquityCurve,
    pub warnings: Vec<String>,
    pub out_dir: PathBuf,
}

pub const LEAK_WARNING: &str = "backtest runs on the training split; results are in-sample (data leak)";

/// Runs one strategy over a split and writes metrics, equity curve, trace
/// and run info. Agent strategies read `checkpoint` (default
/// `<out_dir>/checkpoint.json`).
pub fn cmd_backtest(cfg: &RunConfig, strategy: Strategy, checkpoint: Option<&Path>, split: Split) -> Result<BacktestSummary> {
    cfg.validate()?;
    let market = load_market(&cfg.universe, &cfg.data_dir())?;
    let Stage { mut env, index_closes } = stage(cfg, &market, split)?;
    let mut warnings = Vec::new();
    if split == Split::Train {
        log::warn!("{LEAK_WARNING}");
        warnings.push(LEAK_WARNING.to_string());
    }
    let result = match strategy {
        Strategy::Finxplore | Strategy::NoExplore => {
            let path = checkpoint.map(Path::to_path_buf).unwrap_or_else(|| cfg.out_dir.join(CHECKPOINT));
            let ckpt = load_checkpoint(&path)?;
            let with_dqn = strategy == Strategy::Finxplore;
            if with_dqn && env.n_extended() == 0 {
                return Err(Error::ShapeMismatch("configuration has no extended universe".into()));
            }
            let (mut ppo, mut dqn) = restore_agents(cfg, &mut env, &ckpt, with_dqn)?;
            run_backtest(
                &mut env,
                Policy::Agents {
                    ppo: &mut ppo,
                    dqn: dqn.as_mut(),
                    config: &cfg.coordinator,
                },
            )?
        }
        Strategy::Mvo => run_backtest(
            &mut env,
            Policy::Mvo {
                risk_aversion: cfg.mvo.risk_aversion,
                window: cfg.mvo.window,
            },
        )?,
        Strategy::Winner => run_backtest(&mut env, Policy::Winner)?,
        Strategy::Loser => run_backtest(&mut env, Policy::Loser)?,
        Strategy::Index => index_backtest(&env, &index_closes)?,
    };
    let metrics = MetricsReport::compute(&result.curve, cfg.env.risk_free)?;

    let out = &cfg.out_dir;
    ensure_dir(out)?;
    cfg.save(&out.join(CONFIG_SNAPSHOT))?;
    let mut info = RunInfo::new("backtest", strategy.name(), cfg.seed);
    info.split = Some(split.name().to_string());
    info.warnings = warnings.clone();
    write_json(&out.join(RUN_INFO), &info)?;
    write_json(&out.join(METRICS_JSON), &metrics)?;
    write(&out.join(METRICS_CSV), &metrics.csv(strategy.name()))?;
    result.curve.write_csv(&out.join(EQUITY_CSV))?;
    write(&out.join(TRACE_JSONL), &result.trace_jsonl())?;
    Ok(BacktestSummary {
        metrics,
        curve: result.curve,
        warnings,
        out_dir: out.clone(),
    })
}

/// Buy-and-hold of the index over the environment's decision rows.
fn index_backtest(env: &Environment, closes: &[f64]) -> Result<Backtest> {
    let start = env.start();
    let panel = env.panel();
    let dates = &panel.dates[start..];
    let curve = index_hold(dates, &closes[start..], env.config().initial_capital)?;
    let trace = curve
        .returns()
        .iter()
        .enumerate()
        .map(|(k, r)| TraceRecord {
            date: dates[k + 1],
            base_weights: Vec::new(),
            candidate: None,
            adopted: false,
            sr_current: None,
            sr_new: None,
            executed_weights: Vec::new(),
            wealth: curve.wealth[k + 1],
            r_p: *r,
            turnover: 0.0,
            cost: 0.0,
        })
        .collect();
    Ok(Backtest { curve, trace })
}

/// Random search: each sample trains on the first 80% of the training range
/// and is ranked by its Sharpe on the remaining 20%. Sample failures are
/// recorded in the leaderboard. Samples run on `jobs` worker threads.
pub fn cmd_search(cfg: &RunConfig, samples: usize, search_seed: u64, jobs: usize) -> Result<Vec<LeaderboardRow>> {
    cfg.validate()?;
    if samples == 0 {
        return Err(crate::config::ConfigError::Invalid {
            field: "samples".into(),
            message: "must be >= 1".into(),
        }
        .into());
    }
    let market = load_market(&cfg.universe, &cfg.data_dir())?;
    let train = slice_range(&market.existing, &cfg.universe.train_range, "train")?;
    let (fit, validation) = search::validation_ranges(&train.dates).ok_or_else(|| crate::config::ConfigError::Invalid {
        field: "universe.train_range".into(),
        message: "too short for a validation split".into(),
    })?;
    let strategy = if cfg.universe.extended.is_empty() {
        Strategy::NoExplore
    } else {
        Strategy::Finxplore
    };
    let mut space = SearchSpace::new(search_seed);
    let plans: Vec<_> = (0..samples)
        .map(|i| {
            let params = space.sample();
            let mut c = params.apply(cfg);
            c.universe.train_range = fit;
            c.universe.trade_range = validation;
            c.out_dir = cfg.out_dir.join(format!("sample-{i:03}"));
            (i, params, c)
        })
        .collect();

    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<LeaderboardRow>>> = Mutex::new(vec![None; samples]);
    let run_one = |c: &RunConfig| -> Result<Option<f64>> {
        cmd_train(c, strategy)?;
        Ok(cmd_backtest(c, strategy, None, Split::Trade)?.metrics.sharpe)
    };
    std::thread::scope(|scope| {
        for _ in 0..jobs.clamp(1, samples) {
            scope.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::SeqCst);
                let Some((i, params, c)) = plans.get(k) else { break };
                let (validation_sharpe, error) = match run_one(c) {
                    Ok(s) => (s, None),
                    Err(e) => {
                        log::warn!("search sample {i} failed: {e}");
                        (None, Some(e.to_string()))
                    }
                };
                results.lock().expect("results lock")[*i] = Some(LeaderboardRow {
                    rank: 0,
                    sample: *i,
                    validation_sharpe,
                    params: params.clone(),
                    error,
                });
            });
        }
    });
    let rows = search::rank(
        results
            .into_inner()
            .expect("results lock")
            .into_iter()
            .map(|r| r.expect("every sample ran"))
            .collect(),
    );
    ensure_dir(&cfg.out_dir)?;
    write(&cfg.out_dir.join(LEADERBOARD), &search::leaderboard_csv(&rows))?;
    Ok(rows)
}

pub const REPORT_CSV: &str = "report.csv";
pub const REPORT_JSON: &str = "report.json";
pub const WEALTH_CSV: &str = "wealth.csv";
pub const QUARTERLY_CSV: &str = "quarterly.csv";

/// Aggregates completed backtest runs into per-strategy tables.
pub fn cmd_report(run_dirs: &[PathBuf], out: &Path) -> Result<Vec<report::StrategySummary>> {
    if run_dirs.is_empty() {
        return Err(Error::MissingArtifacts(PathBuf::from("<no run directories>")));
    }
    let runs = run_dirs.iter().map(|d| report::load_run(d)).collect::<Result<Vec<_>>>()?;
    let summaries = report::summarize(&runs);
    ensure_dir(out)?;
    write(&out.join(REPORT_CSV), &report::summary_csv(&summaries))?;
    write_json(&out.join(REPORT_JSON), &summaries)?;
    write(&out.join(WEALTH_CSV), &report::merged_wealth_csv(&runs))?;
    write(&out.join(QUARTERLY_CSV), &report::quarterly_csv(&runs))?;
    Ok(summaries)
}

/// Writes a synthetic market (per-asset CSVs) and a matching demo config.
pub fn cmd_synth(out: &Path, seed: u64, days: usize) -> Result<PathBuf> {
    let spec = SyntheticSpec {
        days,
        dominant: Some((2, 0.002, 0.006)),
        ..SyntheticSpec::default()
    };
    let mkt = spec.generate(seed);
    let data_dir = out.join("data");
    data::write_panel(&data_dir, &mkt.existing)?;
    data::write_panel(&data_dir, &mkt.extended)?;
    let dates = &mkt.existing.dates;
    let cut = dates.len() * 3 / 4;
    if cut < 1 || cut + 1 >= dates.len() {
        return Err(data::DataError::TooShort { len: days, needed: 8 }.into());
    }
    let cfg = RunConfig {
        seed,
        data_dir: Some(data_dir),
        out_dir: out.join("runs"),
        universe: UniverseConfig {
            existing: mkt.existing.assets.clone(),
            extended: mkt.extended.assets.clone(),
            index: None,
            train_range: DateRange::new(dates[0], dates[cut - 1]),
            trade_range: DateRange::new(dates[cut], dates[dates.len() - 1]),
        },
        env: Default::default(),
        ppo: Default::default(),
        dqn: Default::default(),
        coordinator: Default::default(),
        train: crate::config::TrainConfig { episodes: 20 },
        mvo: Default::default(),
    };
    let path = out.join(CONFIG_SNAPSHOT);
    cfg.save(&path)?;
    Ok(path)
}
