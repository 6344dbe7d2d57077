//! `jointcast`: command-line driver for the forecasting pipeline.
//!
//! Exit codes: 0 on success, 1 on invalid arguments, configuration or input
//! data, 2 when the run itself fails.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use chrono::NaiveDate;
use clap::{Parser, Subcommand};
use jointcast::backtest::{self, Pipeline};
use jointcast::bundle::{load_bundle, DataPaths, DatasetBundle};
use jointcast::config::{RunConfig, Target};
use jointcast::ensemble::Registry;
use jointcast::evaluate::{self, Truth};
use jointcast::forecast::ForecastTable;
use jointcast::imputation::write_imputations;
use jointcast::synthetic::{generate_synthetic, SyntheticScenario};
use jointcast::{state, Error};
use serde_json::json;
use sha2::{Digest, Sha256};

#[derive(Parser, Debug)]
#[command(name = "jointcast", version, about = "Joint influenza and COVID-19 forecasting")]
struct Cli {
    /// JSON run configuration; defaults apply to missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Input data directory (cases.csv, ili.csv, trends.csv, geography.csv).
    /// Overrides `data_dir` and `scenario` in the config.
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    /// Worker threads; defaults to the number of logical cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic input panel to --out.
    Simulate,
    /// Daily %ILI imputation draws for the nation and every state.
    Impute,
    /// National forecast of one signal at one as-of week.
    FitNational {
        #[arg(long)]
        signal: Target,
        #[arg(long, value_parser = parse_date)]
        as_of: NaiveDate,
    },
    /// State-level ARGOX-Idv forecast of one target at one as-of week.
    FitState {
        #[arg(long)]
        target: Target,
        #[arg(long, value_parser = parse_date)]
        as_of: NaiveDate,
    },
    /// Ensemble forecast at one as-of week, with selection records.
    Ensemble {
        #[arg(long)]
        target: Target,
        #[arg(long, value_parser = parse_date)]
        as_of: NaiveDate,
    },
    /// Rolling backtest over the configured or given as-of range.
    Backtest {
        #[arg(long, value_parser = parse_date)]
        start: Option<NaiveDate>,
        #[arg(long, value_parser = parse_date)]
        end: Option<NaiveDate>,
    },
    /// Scores a forecasts CSV against the observed data.
    Evaluate {
        #[arg(long)]
        forecasts: PathBuf,
        #[arg(long)]
        target: Target,
    },
}

fn parse_date(s: &str) -> std::result::Result<NaiveDate, String> {
    NaiveDate::parse_from_str(s, "%Y-%m-%d").map_err(|e| format!("expected YYYY-MM-DD: {e}"))
}

/// Marks an error as the caller's fault (exit code 1).
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct Invalid(String);

fn is_validation(e: &anyhow::Error) -> bool {
    e.chain().any(|c| {
        c.downcast_ref::<Invalid>().is_some()
            || matches!(
                c.downcast_ref::<Error>(),
                Some(Error::Config(_) | Error::Schema { .. } | Error::NotSaturday { .. } | Error::FrequencyMismatch(_))
            )
    })
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

struct Run {
    cfg: RunConfig,
    out: PathBuf,
    data: Option<PathBuf>,
    inputs: Vec<(String, String)>,
    outputs: Vec<String>,
}

impl Run {
    fn new(cli: &Cli) -> Result<Self> {
        let mut cfg = match &cli.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        let mut inputs = Vec::new();
        if let Some(p) = &cli.config {
            inputs.push((p.display().to_string(), sha256_hex(&fs::read(p)?)));
        }
        if let Some(s) = cli.seed {
            cfg.seed = s;
        }
        cfg.validate()?;
        let data = cli.data.clone().or_else(|| cfg.data_dir.as_ref().map(PathBuf::from));
        Ok(Run { cfg, out: cli.out.clone(), data, inputs, outputs: Vec::new() })
    }

    fn bundle(&mut self) -> Result<DatasetBundle> {
        if let Some(dir) = &self.data {
            let paths = DataPaths::from_dir(dir);
            for p in paths.all() {
                let bytes = fs::read(p).with_context(|| format!("reading {}", p.display()))?;
                self.inputs.push((p.display().to_string(), sha256_hex(&bytes)));
            }
            return Ok(load_bundle(&paths)?);
        }
        match &self.cfg.scenario {
            Some(sc) => Ok(generate_synthetic(sc)?),
            None => bail!(Invalid("no input data: pass --data or set `data_dir` or `scenario` in the config".into())),
        }
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.outputs.push(name.to_string());
        self.out.join(name)
    }

    /// Writes `manifest.json`. Thread count and output location are left out
    /// because they do not affect results.
    fn finish(mut self, command: &str) -> Result<()> {
        self.outputs.sort();
        let config = self.cfg.to_canonical_json();
        let manifest = json!({
            "tool": "jointcast",
            "version": env!("CARGO_PKG_VERSION"),
            "command": command,
            "seed": self.cfg.seed,
            "config_sha256": sha256_hex(config.as_bytes()),
            "config": serde_json::from_str::<serde_json::Value>(&config)?,
            "inputs": self.inputs.iter().map(|(p, h)| json!({"path": p, "sha256": h})).collect::<Vec<_>>(),
            "outputs": self.outputs,
        });
        fs::write(self.out.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
        Ok(())
    }
}

fn backtest_range(cfg: &RunConfig, start: Option<NaiveDate>, end: Option<NaiveDate>) -> Result<(NaiveDate, NaiveDate)> {
    let start = start.or(cfg.backtest_start);
    let end = end.or(cfg.backtest_end);
    match (start, end) {
        (Some(s), Some(e)) => Ok((s, e)),
        _ => bail!(Invalid("backtest needs a start and end (flags or `backtest_start`/`backtest_end`)".into())),
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            bail!(Invalid("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let mut run = Run::new(&cli)?;
    fs::create_dir_all(&run.out).with_context(|| format!("creating {}", run.out.display()))?;
    let name = match &cli.command {
        Command::Simulate => {
            let mut sc = run.cfg.scenario.clone().unwrap_or_else(SyntheticScenario::default);
            if let Some(s) = cli.seed {
                sc.seed = s;
            }
            let bundle = generate_synthetic(&sc)?;
            bundle.write_dir(&run.out)?;
            for f in ["cases.csv", "ili.csv", "trends.csv", "geography.csv"] {
                run.outputs.push(f.into());
            }
            "simulate"
        }
        Command::Impute => {
            let bundle = run.bundle()?;
            let p = Pipeline::with_lags(&bundle, &run.cfg, Default::default())?;
            let sets: Vec<_> = p.imputations.values().cloned().collect();
            write_imputations(&sets, &run.path("imputations.csv"))?;
            "impute"
        }
        Command::FitNational { signal, as_of } => {
            let bundle = run.bundle()?;
            let cfg = run.cfg.clone();
            let p = Pipeline::prepare(&bundle, &cfg, *as_of)?;
            let table = p.national(*signal, *as_of)?;
            table.write_csv(&run.path(&format!("national_{signal}.csv")))?;
            "fit-national"
        }
        Command::FitState { target, as_of } => {
            let bundle = run.bundle()?;
            let cfg = RunConfig { targets: vec![*target], ..run.cfg.clone() };
            let p = Pipeline::prepare(&bundle, &cfg, backtest::earliest_as_of(&cfg, *as_of))?;
            let raw = p.raw_for(*target, &[*as_of])?;
            let (table, specs) = state::forecast_state(&bundle, &cfg, &raw, &p.exo_draws()?, *as_of, *target)?;
            table.write_csv(&run.path(&format!("state_{target}.csv")))?;
            let specs: Vec<_> = specs.into_iter().map(|s| (*as_of, *target, s)).collect();
            state::write_covariance_csv(&specs, &run.path(&format!("covariance_{target}.csv")))?;
            "fit-state"
        }
        Command::Ensemble { target, as_of } => {
            let bundle = run.bundle()?;
            let cfg = RunConfig { targets: vec![*target], ..run.cfg.clone() };
            let p = Pipeline::prepare(&bundle, &cfg, backtest::earliest_as_of(&cfg, *as_of))?;
            let out = backtest::backtest(&p, &Registry::default(), *as_of, *as_of)?;
            let mut table = out.results[target].forecasts.clone();
            table.retain(|k| k.method == jointcast::ensemble::METHOD);
            table.write_csv(&run.path(&format!("ensemble_{target}.csv")))?;
            jointcast::ensemble::write_selection_csv(&out.selections, &run.path("selection.csv"))?;
            "ensemble"
        }
        Command::Backtest { start, end } => {
            let (start, end) = backtest_range(&run.cfg, *start, *end)?;
            let bundle = run.bundle()?;
            let cfg = run.cfg.clone();
            let p = Pipeline::prepare(&bundle, &cfg, backtest::earliest_as_of(&cfg, start))?;
            let out = backtest::backtest(&p, &Registry::default(), start, end)?;
            out.write_dir(&run.out, &p.truth)?;
            for t in out.results.keys() {
                for kind in ["forecasts", "metrics", "series"] {
                    run.outputs.push(format!("{kind}_{t}.csv"));
                }
            }
            run.outputs.push("selection.csv".into());
            run.outputs.push("covariance.csv".into());
            "backtest"
        }
        Command::Evaluate { forecasts, target } => {
            let bundle = run.bundle()?;
            let table = ForecastTable::read_csv(forecasts, *target)?;
            run.inputs.push((forecasts.display().to_string(), sha256_hex(&fs::read(forecasts)?)));
            let truth = Truth::from_bundle(&bundle, *target)?;
            let states: Vec<String> = bundle.geography.states().iter().map(|u| u.id.clone()).collect();
            evaluate::score(&table, &truth, &states)?.write_csv(&run.path(&format!("metrics_{target}.csv")))?;
            evaluate::write_series_csv(&table, &truth, &run.path(&format!("series_{target}.csv")))?;
            "evaluate"
        }
    };
    run.finish(name)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if is_validation(&e) { 1 } else { 2 })
        }
    }
}
