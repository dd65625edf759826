//! An allocation day as an episodic multi-agent game.
//!
//! One agent per contract. At every step each agent scales its bid shift,
//! `alpha_j <- clamp(alpha_j * (1 + a_j), 0, p_j)`, then the step's impressions
//! are allocated with the held shifts. All agents receive the same reward: the
//! step's RTB revenue, plus its quality value, plus `p_j` for every unit of
//! demand newly fulfilled during the step. Summed over an episode and added
//! to `sum_j (c_j - p_j) d_j` this is exactly the day's yield.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::allocator::{Ledger, Winner};
use crate::report::YieldReport;
use crate::scenario::Scenario;

/// Length of every agent's observation.
pub const OBS_DIM: usize = 5;

/// Default bound on `|a_j|`.
pub const DEFAULT_ACTION_BOUND: f64 = 0.1;

/// Cap on the delivery-rate feature.
const MAX_DELIVERY_RATE: f64 = 5.0;

/// Local observation of one agent:
/// `[t / T, remaining demand fraction, delivery rate, alpha / p, last reward / scale]`.
pub type Observation = [f64; OBS_DIM];

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub observations: Vec<Observation>,
    /// Shared by all agents.
    pub reward: f64,
    pub done: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Error)]
pub enum EnvError {
    #[error("episode is finished; call reset")]
    EpisodeDone,
    #[error("expected {expected} actions, got {got}")]
    ActionCount { expected: usize, got: usize },
    #[error("pooled scenarios must share the same contracts and horizon")]
    PoolMismatch,
}

/// A deterministic episodic game where all agents share one reward.
pub trait MarkovGame {
    fn agents(&self) -> usize;
    fn horizon(&self) -> u32;
    /// Starts a new episode.
    fn reset(&mut self) -> Vec<Observation>;
    fn step(&mut self, actions: &[f64]) -> Result<StepResult, EnvError>;
    /// Added to the reward sum to give the episode's value.
    fn return_offset(&self) -> f64 {
        0.0
    }
    /// Best achievable value of the current episode, used to normalise returns.
    fn return_scale(&self) -> f64 {
        1.0
    }
    /// Value of a reference policy on the current episode. Learners measure
    /// returns from it, which removes the spread between episodes that the
    /// agents cannot influence.
    fn return_baseline(&self) -> f64 {
        0.0
    }
    /// Scale of the last-reward feature, if the game has one.
    fn reward_normalizer(&self) -> Option<RewardNormalizer> {
        None
    }
    fn set_reward_normalizer(&mut self, _n: RewardNormalizer) {}
}

/// Sum of the shared rewards (`gamma = 1`), reported once per agent.
pub fn episode_return(rewards: &[f64], agents: usize) -> Vec<f64> {
    let total: f64 = rewards.iter().sum();
    vec![total; agents]
}

/// Scale for the last-reward feature: running maximum of `|r|` seen while
/// not frozen.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RewardNormalizer {
    pub scale: f64,
    pub frozen: bool,
}

impl RewardNormalizer {
    pub fn observe(&mut self, r: f64) {
        if !self.frozen && r.is_finite() {
            self.scale = self.scale.max(libm::fabs(r));
        }
    }

    pub fn normalize(&self, r: f64) -> f64 {
        if self.scale > 0.0 {
            r / self.scale
        } else {
            0.0
        }
    }

    pub fn frozen(mut self) -> Self {
        self.frozen = true;
        self
    }
}

/// What happened at one step, for episode traces.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub step: u32,
    pub alphas: Vec<f64>,
    pub actions: Vec<f64>,
    pub reward: f64,
    /// Yield so far: the episode offset plus rewards up to this step.
    pub cumulative_yield: f64,
}

struct Source<'a> {
    scenario: &'a Scenario,
    bounds: Vec<usize>,
    /// `lambda_j q_ij`, row-major by impression.
    values: Vec<f64>,
    r_star: f64,
    baseline: f64,
}

impl<'a> Source<'a> {
    fn new(scenario: &'a Scenario, r_star: f64) -> Self {
        let mut values = Vec::with_capacity(scenario.impressions.len() * scenario.contracts.len());
        for imp in &scenario.impressions {
            for (j, c) in scenario.contracts.iter().enumerate() {
                values.push(c.quality_weight * imp.quality[j]);
            }
        }
        Source {
            scenario,
            bounds: scenario.step_bounds(),
            values,
            r_star,
            baseline: 0.0,
        }
    }
}

/// The allocation game over one scenario, or over a pool of scenarios with
/// identical contracts from which each episode draws one at random.
pub struct AllocationEnv<'a> {
    sources: Vec<Source<'a>>,
    current: usize,
    pick: ChaCha8Rng,
    alpha_init: Vec<f64>,
    alphas: Vec<f64>,
    ledger: Ledger,
    /// Next step to play, 1-based.
    t: u32,
    last_delivered: Vec<u64>,
    last_reward: f64,
    normalizer: RewardNormalizer,
    action_bound: f64,
    trace: Vec<StepRecord>,
    reward_sum: f64,
}

impl<'a> AllocationEnv<'a> {
    /// `r_star` is the oracle yield used by [`MarkovGame::return_scale`].
    pub fn new(scenario: &'a Scenario, alpha_init: Vec<f64>, r_star: f64) -> Self {
        let m = scenario.contracts.len();
        let mut env = AllocationEnv {
            sources: vec![Source::new(scenario, r_star)],
            current: 0,
            pick: ChaCha8Rng::seed_from_u64(0),
            alpha_init,
            alphas: vec![0.0; m],
            ledger: Ledger::new(m),
            t: 1,
            last_delivered: vec![0; m],
            last_reward: 0.0,
            normalizer: RewardNormalizer::default(),
            action_bound: DEFAULT_ACTION_BOUND,
            trace: Vec::new(),
            reward_sum: 0.0,
        };
        env.reset_with(None);
        env
    }

    /// A pool of `(scenario, r_star)` pairs; `seed` drives which one each
    /// episode uses.
    pub fn pool(pool: &[(&'a Scenario, f64)], alpha_init: Vec<f64>, seed: u64) -> Result<Self, EnvError> {
        let (first, r0) = *pool.first().ok_or(EnvError::PoolMismatch)?;
        if pool
            .iter()
            .any(|(s, _)| s.contracts != first.contracts || s.horizon != first.horizon)
        {
            return Err(EnvError::PoolMismatch);
        }
        let mut env = AllocationEnv::new(first, alpha_init, r0);
        env.sources = pool.iter().map(|&(s, r)| Source::new(s, r)).collect();
        env.pick = ChaCha8Rng::seed_from_u64(seed);
        Ok(env)
    }

    pub fn with_action_bound(mut self, bound: f64) -> Self {
        self.action_bound = bound;
        self
    }

    pub fn scenario(&self) -> &'a Scenario {
        self.sources[self.current].scenario
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn set_alpha_init(&mut self, alpha_init: Vec<f64>) {
        self.alpha_init = alpha_init;
    }

    pub fn trace(&self) -> &[StepRecord] {
        &self.trace
    }

    pub fn is_done(&self) -> bool {
        self.t > self.scenario().horizon
    }

    /// Report of the episode so far (final once done).
    pub fn report(&self) -> YieldReport {
        self.ledger.report(&self.scenario().contracts)
    }

    /// Clears the ledger and starts an episode from `alpha_init` (or the
    /// stored initial shifts). Keeps the current scenario.
    /// Uses the yield of holding the initial bid shifts all day as each
    /// scenario's return baseline.
    pub fn with_hold_baseline(mut self) -> Self {
        for src in &mut self.sources {
            src.baseline = crate::allocator::run_fixed(src.scenario, &self.alpha_init).0.total;
        }
        self
    }

    pub fn reset_with(&mut self, alpha_init: Option<&[f64]>) -> Vec<Observation> {
        if let Some(a) = alpha_init {
            self.alpha_init = a.to_vec();
        }
        let contracts = &self.sources[self.current].scenario.contracts;
        let m = contracts.len();
        self.alphas = contracts
            .iter()
            .enumerate()
            .map(|(j, c)| crate::allocator::clamp_alpha(c, self.alpha_init.get(j).copied().unwrap_or(0.0)))
            .collect();
        self.ledger = Ledger::new(m);
        self.t = 1;
        self.last_delivered = vec![0; m];
        self.last_reward = 0.0;
        self.trace.clear();
        self.reward_sum = 0.0;
        self.observations()
    }

    fn observations(&self) -> Vec<Observation> {
        let s = self.scenario();
        let horizon = s.horizon as f64;
        let elapsed = (self.t - 1) as f64 / horizon;
        let last = self.normalizer.normalize(self.last_reward);
        s.contracts
            .iter()
            .enumerate()
            .map(|(j, c)| {
                let d = c.demand as f64;
                let left = (d - self.ledger.delivered[j] as f64) / d;
                let share = d / horizon;
                [
                    elapsed,
                    left.clamp(0.0, 1.0),
                    (self.last_delivered[j] as f64 / share).min(MAX_DELIVERY_RATE),
                    self.alphas[j] / c.penalty,
                    last,
                ]
            })
            .collect()
    }
}

impl MarkovGame for AllocationEnv<'_> {
    fn agents(&self) -> usize {
        self.alphas.len()
    }

    fn horizon(&self) -> u32 {
        self.scenario().horizon
    }

    fn reset(&mut self) -> Vec<Observation> {
        if self.sources.len() > 1 {
            self.current = self.pick.random_range(0..self.sources.len());
        }
        self.reset_with(None)
    }

    fn step(&mut self, actions: &[f64]) -> Result<StepResult, EnvError> {
        if self.is_done() {
            return Err(EnvError::EpisodeDone);
        }
        let m = self.alphas.len();
        if actions.len() != m {
            return Err(EnvError::ActionCount {
                expected: m,
                got: actions.len(),
            });
        }
        let src = &self.sources[self.current];
        let s = src.scenario;
        let bound = self.action_bound;
        for ((alpha, c), a) in self.alphas.iter_mut().zip(&s.contracts).zip(actions) {
            let a = if a.is_nan() { 0.0 } else { a.clamp(-bound, bound) };
            *alpha = (*alpha * (1.0 + a)).clamp(0.0, c.penalty);
        }

        let t = self.t as usize;
        let before: Vec<u64> = self.ledger.delivered.clone();
        let mut reward = 0.0;
        for i in src.bounds[t - 1]..src.bounds[t] {
            let imp = &s.impressions[i];
            let row = &src.values[i * m..(i + 1) * m];
            let mut best = f64::NEG_INFINITY;
            let mut arg = 0;
            for (j, (v, a)) in row.iter().zip(&self.alphas).enumerate() {
                let b = v + a;
                if b > best {
                    best = b;
                    arg = j;
                }
            }
            if best > imp.rtb_second {
                let c = &s.contracts[arg];
                reward += row[arg];
                if self.ledger.delivered[arg] < c.demand {
                    reward += c.penalty;
                }
                self.ledger.settle_winner(Winner::Contract(arg), imp).expect("ledger is open");
            } else {
                reward += imp.rtb_second;
                self.ledger.settle_winner(Winner::Rtb, imp).expect("ledger is open");
            }
        }
        for j in 0..m {
            self.last_delivered[j] = self.ledger.delivered[j] - before[j];
        }
        self.last_reward = reward;
        self.normalizer.observe(reward);
        self.reward_sum += reward;
        self.trace.push(StepRecord {
            step: self.t,
            alphas: self.alphas.clone(),
            actions: actions.to_vec(),
            reward,
            cumulative_yield: s.floor_value() + self.reward_sum,
        });
        self.t += 1;
        Ok(StepResult {
            observations: self.observations(),
            reward,
            done: self.is_done(),
        })
    }

    fn return_offset(&self) -> f64 {
        self.scenario().floor_value()
    }

    fn return_scale(&self) -> f64 {
        self.sources[self.current].r_star
    }

    fn return_baseline(&self) -> f64 {
        self.sources[self.current].baseline
    }

    fn reward_normalizer(&self) -> Option<RewardNormalizer> {
        Some(self.normalizer)
    }

    fn set_reward_normalizer(&mut self, n: RewardNormalizer) {
        self.normalizer = n;
    }
}

/// A one-agent, one-step game with reward `1 - (a - target)^2 / bound^2`,
/// whose only optimal action is `target`.
#[derive(Clone, Debug)]
pub struct QuadraticBandit {
    pub target: f64,
    pub bound: f64,
    done: bool,
}

impl QuadraticBandit {
    pub fn new(target: f64, bound: f64) -> Self {
        QuadraticBandit {
            target,
            bound,
            done: false,
        }
    }

    pub fn reward(&self, a: f64) -> f64 {
        let a = a.clamp(-self.bound, self.bound);
        let x = (a - self.target) / self.bound;
        1.0 - x * x
    }
}

impl MarkovGame for QuadraticBandit {
    fn agents(&self) -> usize {
        1
    }

    fn horizon(&self) -> u32 {
        1
    }

    fn reset(&mut self) -> Vec<Observation> {
        self.done = false;
        vec![[0.0, 1.0, 0.0, 0.5, 0.0]]
    }

    fn step(&mut self, actions: &[f64]) -> Result<StepResult, EnvError> {
        if self.done {
            return Err(EnvError::EpisodeDone);
        }
        if actions.len() != 1 {
            return Err(EnvError::ActionCount {
                expected: 1,
                got: actions.len(),
            });
        }
        self.done = true;
        Ok(StepResult {
            observations: vec![[1.0, 1.0, 0.0, 0.5, 0.0]],
            reward: self.reward(actions[0]),
            done: true,
        })
    }
}
