//! Command-line driver.
//!
//! Every command reads the optional `--config` file first and then applies
//! flags on top. Outputs go under `--out` (default `.`), with names derived
//! from the input scenario's file stem, so re-running a command with the same
//! inputs and seed rewrites the same bytes.

use std::ffi::OsString;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use impalloc_core::learner::Method;
use impalloc_core::report::{render_decomposition, render_summary, summarize, YieldReport};
use impalloc_core::scenario::{apply_drift, generate_scenario, Scenario};

use crate::checkpoint::Checkpoint;
use crate::config::Config;
use crate::error::CliError;
use crate::format::{load_scenario, save_scenario};
use crate::output::{
    read_json, write_baseline_trace, write_curves, write_episode_trace, write_json, OracleRecord, ReportRecord,
};
use crate::pipeline::{self, TrainingSetup, WallClock};

#[derive(Debug, Parser)]
#[command(name = "impalloc", version, about = "Impression allocation between guaranteed contracts and RTB")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML experiment configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for every random choice the command makes.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    /// Oracle tolerance on the relative duality gap.
    #[arg(long, global = true)]
    pub tol: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic scenario.
    Generate {
        #[arg(long)]
        m: Option<usize>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long = "T")]
        horizon: Option<u32>,
        /// Output file stem.
        #[arg(long, default_value = "train")]
        name: String,
    },
    /// Derive a drifted test day from a scenario.
    Drift {
        scenario: PathBuf,
        #[arg(long)]
        volume: Option<f64>,
        #[arg(long)]
        price: Option<f64>,
        #[arg(long)]
        quality_noise: Option<f64>,
        #[arg(long, default_value = "test")]
        name: String,
    },
    /// Solve for the optimal bid shifts and oracle yield.
    SolveOptimal { scenario: PathBuf },
    /// Run the contract-first or PID controller.
    RunBaseline {
        scenario: PathBuf,
        #[arg(long)]
        method: String,
        #[command(flatten)]
        start: Start,
    },
    /// Train MAPOLO or MADDPG policies.
    Train {
        scenario: PathBuf,
        #[arg(long)]
        method: Method,
        #[arg(long)]
        episodes: Option<usize>,
        /// Scenario scored for the learning curve.
        #[arg(long)]
        eval: Option<PathBuf>,
        #[command(flatten)]
        start: Start,
    },
    /// Roll out a trained checkpoint without exploration.
    Evaluate {
        scenario: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Oracle record of the scenario; solved on the fly when absent.
        #[arg(long)]
        reference: Option<PathBuf>,
    },
    /// Tabulate saved yield reports.
    Report {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct Start {
    /// Oracle record whose bid shifts start the day (default: the scenario's own).
    #[arg(long)]
    pub alpha: Option<PathBuf>,
    /// Oracle record of this scenario; solved on the fly when absent.
    #[arg(long)]
    pub reference: Option<PathBuf>,
}

fn stem(path: &Path) -> String {
    path.file_stem().map_or_else(|| "scenario".into(), |s| s.to_string_lossy().into_owned())
}

fn out_file(out: &Path, name: &str) -> PathBuf {
    out.join(name)
}

fn load(path: &Path) -> Result<Scenario, CliError> {
    load_scenario(path).map_err(|e| match e {
        crate::format::FormatError::Io(io) => CliError::io(path, io),
        other => CliError::from(other).with_context(path),
    })
}

impl CliError {
    fn with_context(self, path: &Path) -> Self {
        let p = path.display();
        match self {
            CliError::Parse(m) => CliError::Parse(format!("{p}: {m}")),
            CliError::Invalid(m) => CliError::Invalid(format!("{p}: {m}")),
            other => other,
        }
    }
}

fn load_record(path: &Path) -> Result<OracleRecord, CliError> {
    read_json(path).map_err(|e| match e.kind() {
        io::ErrorKind::InvalidData => CliError::Parse(e.to_string()),
        _ => CliError::io(path, e),
    })
}

fn write_to(path: &Path, f: impl FnOnce(&mut Vec<u8>) -> Result<(), CliError>) -> Result<(), CliError> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    fs::write(path, buf).map_err(|e| CliError::io(path, e))
}

struct Ctx<W: Write> {
    config: Config,
    seed: u64,
    out: PathBuf,
    stdout: W,
}

impl<W: Write> Ctx<W> {
    fn say(&mut self, text: &str) -> Result<(), CliError> {
        self.stdout
            .write_all(text.as_bytes())
            .map_err(|e| CliError::Io(format!("stdout: {e}")))
    }

    fn r_star(&self, s: &Scenario, reference: Option<&Path>) -> Result<f64, CliError> {
        match reference {
            Some(p) => Ok(load_record(p)?.r_star),
            None => Ok(pipeline::oracle(s, &self.config.oracle)?.upper_bound),
        }
    }

    fn alpha_start(&self, s: &Scenario, alpha: Option<&Path>) -> Result<Vec<f64>, CliError> {
        let a = match alpha {
            Some(p) => load_record(p)?.alpha,
            None => s.alpha_init(),
        };
        if a.len() != s.contracts.len() {
            return Err(CliError::Invalid(format!(
                "{} bid shifts for {} contracts",
                a.len(),
                s.contracts.len()
            )));
        }
        Ok(a)
    }

    fn save_report(&self, method: &str, scenario: &str, report: &YieldReport) -> Result<PathBuf, CliError> {
        let path = out_file(&self.out, &format!("{method}-{scenario}.json"));
        let record = ReportRecord {
            method: method.to_string(),
            scenario: scenario.to_string(),
            report: report.clone(),
        };
        write_json(&record, &path).map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }

    fn run(&mut self, command: Command) -> Result<(), CliError> {
        match command {
            Command::Generate { m, n, horizon, name } => {
                let mut spec = self.config.generator.clone();
                if let Some(m) = m {
                    spec.contracts = m;
                }
                if let Some(n) = n {
                    spec.impressions = n;
                }
                if let Some(t) = horizon {
                    spec.horizon = t;
                }
                let s = generate_scenario(&spec, self.seed)?;
                let path = out_file(&self.out, &format!("{name}.scn"));
                save_scenario(&s, &path).map_err(|e| CliError::io(&path, e))?;
                self.say(&format!(
                    "wrote {} ({} contracts, {} impressions, {} steps)\n",
                    path.display(),
                    s.contracts.len(),
                    s.impressions.len(),
                    s.horizon
                ))
            }
            Command::Drift {
                scenario,
                volume,
                price,
                quality_noise,
                name,
            } => {
                let train = load(&scenario)?;
                let mut drift = self.config.drift;
                if let Some(v) = volume {
                    drift.volume_factor = v;
                }
                if let Some(p) = price {
                    drift.price_factor = p;
                }
                if let Some(q) = quality_noise {
                    drift.quality_noise = q;
                }
                let s = apply_drift(&train, &drift, self.seed)?;
                let path = out_file(&self.out, &format!("{name}.scn"));
                save_scenario(&s, &path).map_err(|e| CliError::io(&path, e))?;
                self.say(&format!("wrote {} ({} impressions)\n", path.display(), s.impressions.len()))
            }
            Command::SolveOptimal { scenario } => {
                let s = load(&scenario)?;
                let d = pipeline::oracle(&s, &self.config.oracle)?;
                let record = OracleRecord::new(&stem(&scenario), &d);
                let path = out_file(&self.out, &format!("{}.oracle.json", stem(&scenario)));
                write_json(&record, &path).map_err(|e| CliError::io(&path, e))?;
                let text = toml::to_string(&record).map_err(|e| CliError::Numerical(e.to_string()))?;
                self.say(&text)
            }
            Command::RunBaseline { scenario, method, start } => {
                let s = load(&scenario)?;
                let alpha = self.alpha_start(&s, start.alpha.as_deref())?;
                let r_star = self.r_star(&s, start.reference.as_deref())?;
                let run = pipeline::run_baseline(&method, &s, &alpha, &self.config)?;
                let report = run.report.clone().with_oracle(r_star);
                let name = stem(&scenario);
                self.save_report(&method, &name, &report)?;
                let path = out_file(&self.out, &format!("{method}-{name}.csv"));
                write_to(&path, |buf| Ok(write_baseline_trace(&run.trace, s.contracts.len(), buf)?))?;
                self.say(&render_decomposition(&[(method.clone(), report.clone())]))?;
                self.say(&format!("R/R* = {:.4}\n", report.ratio.unwrap_or(f64::NAN)))
            }
            Command::Train {
                scenario,
                method,
                episodes,
                eval,
                start,
            } => {
                let s = load(&scenario)?;
                let alpha = self.alpha_start(&s, start.alpha.as_deref())?;
                let r_star = self.r_star(&s, start.reference.as_deref())?;
                let mut trainer = self.config.trainer.clone();
                trainer.seed = self.seed;
                if let Some(k) = episodes {
                    trainer.episodes = k;
                }
                trainer.validate()?;
                let pool = pipeline::drift_pool(&s, &self.config.pool, &self.config.oracle, self.seed)?;
                let eval_s = eval.as_deref().map(load).transpose()?;
                let eval_r = eval_s.as_ref().map(|e| self.r_star(e, None)).transpose()?;
                let setup = TrainingSetup {
                    train: (&s, r_star),
                    pool: &pool,
                    eval: eval_s.as_ref().zip(eval_r),
                    alpha_init: alpha.clone(),
                };
                let clock = WallClock::start();
                let trained = pipeline::train_policies(method, &setup, &trainer, &clock)?;
                let ckpt_path = out_file(&self.out, &format!("{}.ckpt.json", method.name()));
                Checkpoint::new(trainer, alpha, trained.policies).save(&ckpt_path)?;
                let curve_path = out_file(&self.out, &format!("{}-curve.csv", method.name()));
                write_to(&curve_path, |buf| {
                    write_curves(std::slice::from_ref(&trained.curve), buf).map_err(|e| CliError::Io(e.to_string()))
                })?;
                let c = &trained.curve;
                self.say(&format!(
                    "{}: {} episodes in {:.1}s ({:.4}s per episode), last R/R* {:.4}, best {:.4}\nwrote {} and {}\n",
                    method.name(),
                    c.episodes,
                    c.train_seconds,
                    c.mean_episode_seconds(),
                    c.last().unwrap_or(f64::NAN),
                    c.best().unwrap_or(f64::NAN),
                    ckpt_path.display(),
                    curve_path.display()
                ))
            }
            Command::Evaluate {
                scenario,
                checkpoint,
                reference,
            } => {
                let s = load(&scenario)?;
                let ckpt = Checkpoint::load(&checkpoint)?;
                let r_star = self.r_star(&s, reference.as_deref())?;
                let ev = pipeline::evaluate(&s, r_star, &ckpt.alpha_init, &ckpt.policies)?;
                let method = ckpt.policies.method.name();
                let name = stem(&scenario);
                self.save_report(method, &name, &ev.report)?;
                let path = out_file(&self.out, &format!("{method}-{name}.csv"));
                write_to(&path, |buf| Ok(write_episode_trace(&ev.trace, s.contracts.len(), buf)?))?;
                self.say(&render_decomposition(&[(method.to_string(), ev.report.clone())]))?;
                self.say(&format!("R/R* = {:.4}\n", ev.ratio))
            }
            Command::Report { reports } => {
                let mut rows = Vec::new();
                for p in &reports {
                    let r: ReportRecord = read_json(p).map_err(|e| match e.kind() {
                        io::ErrorKind::InvalidData => CliError::Parse(e.to_string()),
                        _ => CliError::io(p, e),
                    })?;
                    rows.push((r.method, r.scenario, r.report));
                }
                let summary = summarize(&rows)?;
                let text = render_summary(&summary);
                let path = out_file(&self.out, "summary.txt");
                fs::write(&path, &text).map_err(|e| CliError::io(&path, e))?;
                self.say(&text)
            }
        }
    }
}

/// Parses `args` (program name first) and runs the command, writing
/// human-readable output to `stdout`.
pub fn run<I, T, W>(args: I, stdout: W) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
    W: Write,
{
    let cli = Cli::try_parse_from(args).map_err(|e| CliError::Usage(e.to_string()))?;
    execute(cli, stdout)
}

pub fn execute<W: Write>(cli: Cli, stdout: W) -> Result<(), CliError> {
    let mut config = Config::load_or_default(cli.common.config.as_deref())?;
    if let Some(tol) = cli.common.tol {
        if !(tol > 0.0) {
            return Err(CliError::Usage("--tol must be positive".into()));
        }
        config.oracle.tol = tol;
    }
    fs::create_dir_all(&cli.common.out).map_err(|e| CliError::io(&cli.common.out, e))?;
    let mut ctx = Ctx {
        seed: cli.common.seed.unwrap_or(config.trainer.seed),
        config,
        out: cli.common.out,
        stdout,
    };
    ctx.run(cli.command)
}
