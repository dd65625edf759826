//! The experiment steps shared by the command-line driver and the test suites.

use std::time::Instant;

use impalloc_core::baselines::{run_contract_first, run_pid, BaselineRun};
use impalloc_core::learner::{evaluate_policy, train, Clock, Method, PolicySet, Trained, TrainerConfig};
use impalloc_core::marlenv::{AllocationEnv, MarkovGame, StepRecord};
use impalloc_core::oracle::{solve_dual, DualSolution};
use impalloc_core::report::YieldReport;
use impalloc_core::scenario::{apply_drift, DriftSpec, Scenario};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{Config, OracleConfig, PoolConfig};
use crate::error::CliError;

/// Seconds since construction.
pub struct WallClock(Instant);

impl WallClock {
    pub fn start() -> Self {
        WallClock(Instant::now())
    }
}

impl Clock for WallClock {
    fn seconds(&self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}

pub fn oracle(s: &Scenario, cfg: &OracleConfig) -> Result<DualSolution, CliError> {
    let d = solve_dual(s, cfg.tol, cfg.max_iters);
    if !d.upper_bound.is_finite() || !(d.upper_bound > 0.0) {
        return Err(CliError::Numerical(format!(
            "oracle value {} is not a positive number",
            d.upper_bound
        )));
    }
    Ok(d)
}

/// Draws one drift with each factor uniform in `1 +- spread`.
pub fn sample_drift<R: Rng>(cfg: &PoolConfig, rng: &mut R) -> DriftSpec {
    let mut factor = |spread: f64| {
        if spread > 0.0 {
            1.0 + rng.random_range(-spread..spread)
        } else {
            1.0
        }
    };
    DriftSpec {
        volume_factor: factor(cfg.volume_spread),
        price_factor: factor(cfg.price_spread),
        quality_noise: cfg.quality_noise,
    }
}

/// `cfg.size` drifted copies of `train`, each with its oracle value.
pub fn drift_pool(train: &Scenario, cfg: &PoolConfig, oracle_cfg: &OracleConfig, seed: u64) -> Result<Vec<(Scenario, f64)>, CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..cfg.size)
        .map(|k| {
            let drift = sample_drift(cfg, &mut rng);
            let s = apply_drift(train, &drift, seed.wrapping_mul(1_000).wrapping_add(k as u64))?;
            let r = oracle(&s, oracle_cfg)?.upper_bound;
            Ok((s, r))
        })
        .collect()
}

pub fn run_baseline(method: &str, s: &Scenario, alpha: &[f64], cfg: &Config) -> Result<BaselineRun, CliError> {
    match method {
        "cf" => Ok(run_contract_first(s, alpha, cfg.cf.risk_factor)),
        "pid" => {
            if !cfg.pid.is_valid(s.horizon) {
                return Err(CliError::Invalid("PID gains or setpoint curve are invalid for this horizon".into()));
            }
            Ok(run_pid(s, alpha, &cfg.pid))
        }
        other => Err(CliError::Usage(format!("unknown baseline {other:?} (expected cf or pid)"))),
    }
}

/// What [`train_policies`] trains on and is scored against.
pub struct TrainingSetup<'a> {
    pub train: (&'a Scenario, f64),
    pub pool: &'a [(Scenario, f64)],
    pub eval: Option<(&'a Scenario, f64)>,
    pub alpha_init: Vec<f64>,
}

/// Trains on the training day plus its drift pool; the curve scores `eval`
/// when given and the training episodes otherwise.
pub fn train_policies(method: Method, setup: &TrainingSetup<'_>, trainer: &TrainerConfig, clock: &dyn Clock) -> Result<Trained, CliError> {
    let mut sources: Vec<(&Scenario, f64)> = vec![setup.train];
    sources.extend(setup.pool.iter().map(|(s, r)| (s, *r)));
    let mut env = AllocationEnv::pool(&sources, setup.alpha_init.clone(), trainer.seed)?.with_action_bound(trainer.action_bound)
        .with_hold_baseline();
    let mut eval_env = setup
        .eval
        .map(|(s, r)| AllocationEnv::new(s, setup.alpha_init.clone(), r).with_action_bound(trainer.action_bound));
    let eval = eval_env.as_mut().map(|e| e as &mut dyn MarkovGame);
    Ok(train(method, &mut env, eval, trainer, clock)?)
}

pub struct Evaluation {
    pub ratio: f64,
    pub report: YieldReport,
    pub trace: Vec<StepRecord>,
}

/// One noise-free day under `policies`.
pub fn evaluate(s: &Scenario, r_star: f64, alpha_init: &[f64], policies: &PolicySet) -> Result<Evaluation, CliError> {
    if alpha_init.len() != s.contracts.len() || policies.agents() != s.contracts.len() {
        return Err(CliError::Invalid(format!(
            "policy has {} agents, scenario has {} contracts",
            policies.agents(),
            s.contracts.len()
        )));
    }
    let mut env = AllocationEnv::new(s, alpha_init.to_vec(), r_star).with_action_bound(policies.action_bound);
    let ratio = evaluate_policy(&mut env, policies, r_star)?;
    Ok(Evaluation {
        ratio,
        report: env.report().with_oracle(r_star),
        trace: env.trace().to_vec(),
    })
}
