//! MAPOLO and MADDPG training loops.

use alloc::vec;
use alloc::vec::Vec;
use core::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::mlp::{soft_update, Adam, Cache, Mlp, Output};
use super::replay::ReplayBuffer;
use super::shaped::{pair_input, ShapedRewardModel};
use super::LearnError;
use crate::marlenv::{MarkovGame, Observation, RewardNormalizer, DEFAULT_ACTION_BOUND, OBS_DIM};

/// Wall-clock source in seconds. The core crate has no clock of its own.
pub trait Clock {
    fn seconds(&self) -> f64;
}

impl<F: Fn() -> f64> Clock for F {
    fn seconds(&self) -> f64 {
        self()
    }
}

/// A clock that never advances.
#[derive(Clone, Copy, Debug, Default)]
pub struct NoClock;

impl Clock for NoClock {
    fn seconds(&self) -> f64 {
        0.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Method {
    Mapolo,
    Maddpg,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Mapolo => "mapolo",
            Method::Maddpg => "maddpg",
        }
    }

    /// Critic input length for `agents` agents.
    pub fn critic_input_dim(self, agents: usize) -> usize {
        match self {
            Method::Mapolo => OBS_DIM + 1,
            Method::Maddpg => agents * (OBS_DIM + 1),
        }
    }
}

impl FromStr for Method {
    type Err = LearnError;

    fn from_str(s: &str) -> Result<Self, LearnError> {
        match s {
            "mapolo" => Ok(Method::Mapolo),
            "maddpg" => Ok(Method::Maddpg),
            _ => Err(LearnError::Config("method must be mapolo or maddpg")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct TrainerConfig {
    pub actor_lr: f64,
    pub critic_lr: f64,
    /// Learning rate of the shaped-reward networks.
    pub reward_lr: f64,
    pub tau: f64,
    pub noise_std: f64,
    /// Per-episode multiplier on `noise_std`; 1 keeps it fixed.
    pub noise_decay: f64,
    /// Step-to-step correlation of each agent's exploration noise. The noise
    /// is an AR(1) process whose marginal stays N(0, noise_std^2); 0 gives
    /// independent draws.
    pub noise_correlation: f64,
    pub episodes: usize,
    pub seed: u64,
    pub hidden: Vec<usize>,
    pub batch_size: usize,
    pub replay_capacity: usize,
    /// Mini-batch updates after each episode.
    pub updates_per_episode: usize,
    /// Episodes before the first actor update.
    pub actor_delay: usize,
    /// Gradient steps per shaped-reward update.
    pub reward_fit_steps: usize,
    /// Weight on returns below the shaped reward's prediction; 0 is a pure
    /// running maximum.
    pub reward_down_weight: f64,
    pub action_bound: f64,
    /// Half-width of the uniform init of actor output weights.
    pub actor_init_scale: f64,
    /// Weight of the squared pre-tanh actor output in the actor loss. Keeps
    /// actors out of the flat saturated region of the tanh.
    pub preactivation_penalty: f64,
    /// Evaluate every this many episodes; 0 records training returns instead.
    pub eval_every: usize,
    /// Stop once this much clock time has passed.
    pub time_budget_secs: Option<f64>,
    /// Stop at the first evaluation reaching this ratio.
    pub stop_at_ratio: Option<f64>,
    /// Return the actors that scored best on the evaluation game instead of
    /// the last ones. Has no effect without an evaluation game.
    pub keep_best: bool,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            actor_lr: 1e-3,
            critic_lr: 1e-4,
            reward_lr: 1e-3,
            tau: 0.02,
            noise_std: 0.05,
            noise_decay: 1.0,
            noise_correlation: 0.0,
            episodes: 1000,
            seed: 0,
            hidden: vec![64, 64, 64],
            batch_size: 32,
            replay_capacity: 100_000,
            updates_per_episode: 8,
            actor_delay: 0,
            reward_fit_steps: 4,
            reward_down_weight: 0.1,
            action_bound: DEFAULT_ACTION_BOUND,
            actor_init_scale: 3e-3,
            preactivation_penalty: 1e-3,
            eval_every: 10,
            time_budget_secs: None,
            stop_at_ratio: None,
            keep_best: false,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<(), LearnError> {
        let pos = |x: f64| x.is_finite() && x > 0.0;
        if !(pos(self.actor_lr) && pos(self.critic_lr) && pos(self.reward_lr)) {
            return Err(LearnError::Config("learning rates must be positive"));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(LearnError::Config("tau must be in (0, 1]"));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(LearnError::Config("noise_std must be nonnegative"));
        }
        if !(0.0..1.0).contains(&self.noise_correlation) {
            return Err(LearnError::Config("noise_correlation must be in [0, 1)"));
        }
        if !(self.noise_decay > 0.0 && self.noise_decay <= 1.0) {
            return Err(LearnError::Config("noise_decay must be in (0, 1]"));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(LearnError::Config("hidden layers must be nonempty"));
        }
        if self.batch_size == 0 || self.replay_capacity < self.batch_size {
            return Err(LearnError::Config("replay must hold at least one batch"));
        }
        if !pos(self.action_bound) {
            return Err(LearnError::Config("action_bound must be positive"));
        }
        if !(0.0..=1.0).contains(&self.reward_down_weight) {
            return Err(LearnError::Config("reward_down_weight must be in [0, 1]"));
        }
        if !(self.preactivation_penalty >= 0.0 && self.preactivation_penalty.is_finite()) {
            return Err(LearnError::Config("preactivation_penalty must be nonnegative"));
        }
        if !(self.actor_init_scale >= 0.0 && self.actor_init_scale.is_finite()) {
            return Err(LearnError::Config("actor_init_scale must be nonnegative"));
        }
        if self.time_budget_secs.is_some_and(|b| !(b >= 0.0)) {
            return Err(LearnError::Config("time budget must be nonnegative"));
        }
        Ok(())
    }

    fn sizes(&self, input: usize) -> Vec<usize> {
        let mut s = vec![input];
        s.extend_from_slice(&self.hidden);
        s.push(1);
        s
    }
}

/// Trained networks. Actors are all that is needed to act.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PolicySet {
    pub method: Method,
    pub actors: Vec<Mlp>,
    pub critics: Vec<Mlp>,
    /// Shaped-reward networks; empty for MADDPG.
    pub reward_models: Vec<Mlp>,
    /// Frozen last-reward scale from training.
    pub normalizer: RewardNormalizer,
    pub action_bound: f64,
}

impl PolicySet {
    /// Policies that always output 0, so every bid shift keeps its initial value.
    pub fn hold(method: Method, agents: usize) -> Self {
        let config = TrainerConfig::default();
        PolicySet {
            method,
            actors: vec![Mlp::zeros(&config.sizes(OBS_DIM), Output::Tanh { scale: config.action_bound }); agents],
            critics: Vec::new(),
            reward_models: Vec::new(),
            normalizer: RewardNormalizer::default().frozen(),
            action_bound: config.action_bound,
        }
    }

    pub fn agents(&self) -> usize {
        self.actors.len()
    }

    pub fn critic_input_dim(&self) -> usize {
        self.critics
            .first()
            .map(Mlp::input_dim)
            .unwrap_or_else(|| self.method.critic_input_dim(self.agents()))
    }

    /// Greedy joint action.
    pub fn act(&self, obs: &[Observation]) -> Result<Vec<f64>, LearnError> {
        if obs.len() != self.actors.len() {
            return Err(LearnError::Shape {
                expected: self.actors.len(),
                got: obs.len(),
            });
        }
        self.actors.iter().zip(obs).map(|(a, o)| a.eval(o)).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.actors
            .iter()
            .chain(&self.critics)
            .chain(&self.reward_models)
            .all(Mlp::is_finite)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurvePoint {
    /// Episodes completed.
    pub episode: usize,
    pub seconds: f64,
    pub ratio: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LearningCurve {
    pub method: Method,
    pub points: Vec<CurvePoint>,
    pub episodes: usize,
    /// Clock time spent in training, evaluations excluded.
    pub train_seconds: f64,
}

impl LearningCurve {
    pub fn mean_episode_seconds(&self) -> f64 {
        if self.episodes == 0 {
            0.0
        } else {
            self.train_seconds / self.episodes as f64
        }
    }

    pub fn first_reaching(&self, ratio: f64) -> Option<&CurvePoint> {
        self.points.iter().find(|p| p.ratio >= ratio)
    }

    pub fn best(&self) -> Option<f64> {
        self.points.iter().map(|p| p.ratio).reduce(f64::max)
    }

    pub fn last(&self) -> Option<f64> {
        self.points.last().map(|p| p.ratio)
    }
}

#[derive(Clone, Debug)]
pub struct Trained {
    pub policies: PolicySet,
    pub curve: LearningCurve,
}

/// One noise-free episode; returns the episode value over `r_star`.
pub fn evaluate_policy<G: MarkovGame + ?Sized>(
    env: &mut G,
    policies: &PolicySet,
    r_star: f64,
) -> Result<f64, LearnError> {
    if !(r_star > 0.0) {
        return Err(LearnError::Precondition("oracle value must be positive"));
    }
    if env.agents() != policies.agents() {
        return Err(LearnError::Shape {
            expected: env.agents(),
            got: policies.agents(),
        });
    }
    let saved = env.reward_normalizer();
    if saved.is_some() {
        env.set_reward_normalizer(policies.normalizer.frozen());
    }
    let mut obs = env.reset();
    let mut total = 0.0;
    let result = loop {
        let actions = policies.act(&obs)?;
        let r = env.step(&actions)?;
        total += r.reward;
        obs = r.observations;
        if r.done {
            break Ok((env.return_offset() + total) / r_star);
        }
    };
    if let Some(n) = saved {
        env.set_reward_normalizer(n);
    }
    result
}

/// Actions are stored divided by the action bound, as the critics see them.
struct Transition {
    obs: Vec<Observation>,
    actions: Vec<f64>,
    /// Reward over the episode's scale.
    reward: f64,
    next: Vec<Observation>,
    done: bool,
}

struct Rollout {
    ratio: f64,
    excess: f64,
    traj: Vec<Vec<(Observation, f64)>>,
}

/// Per-agent actor, its optimiser, and scratch space.
struct ActorState {
    net: Mlp,
    opt: Adam,
}

struct Common<'c> {
    config: &'c TrainerConfig,
    rng: ChaCha8Rng,
    actors: Vec<ActorState>,
    replay: ReplayBuffer<Transition>,
    noise: f64,
}

impl<'c> Common<'c> {
    fn new(config: &'c TrainerConfig, agents: usize) -> Result<Self, LearnError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let sizes = config.sizes(OBS_DIM);
        let actors = (0..agents)
            .map(|_| {
                let net = Mlp::new(
                    &sizes,
                    Output::Tanh {
                        scale: config.action_bound,
                    },
                    config.actor_init_scale,
                    &mut rng,
                );
                let opt = Adam::new(net.num_params(), config.actor_lr);
                ActorState { net, opt }
            })
            .collect();
        Ok(Common {
            config,
            rng,
            actors,
            replay: ReplayBuffer::new(config.replay_capacity),
            noise: config.noise_std,
        })
    }

    /// Plays one exploratory episode, filling the replay buffer. Returns the
    /// episode value and its excess over the game's baseline, both over the
    /// return scale, and each agent's `(o, a / bound)` trajectory.
    fn rollout<G: MarkovGame + ?Sized>(&mut self, env: &mut G) -> Result<Rollout, LearnError> {
        let m = self.actors.len();
        let bound = self.config.action_bound;
        let normal = Normal::new(0.0, self.noise.max(0.0)).map_err(|_| LearnError::Config("bad noise"))?;
        let mut traj = vec![Vec::with_capacity(env.horizon() as usize); m];
        let mut obs = env.reset();
        let scale = env.return_scale();
        let scale = if scale > 0.0 { scale } else { 1.0 };
        let rho = self.config.noise_correlation;
        let fresh = libm::sqrt(1.0 - rho * rho);
        let mut eps = vec![0.0; m];
        let mut first = true;
        let mut total = 0.0;
        loop {
            let mut actions = Vec::with_capacity(m);
            for (j, a) in self.actors.iter().enumerate() {
                let mut x = a.net.eval(&obs[j])?;
                if self.noise > 0.0 {
                    let z = normal.sample(&mut self.rng);
                    eps[j] = if first { z } else { rho * eps[j] + fresh * z };
                    x += eps[j];
                }
                let x = x.clamp(-bound, bound);
                traj[j].push((obs[j], x / bound));
                actions.push(x);
            }
            first = false;
            let r = env.step(&actions)?;
            actions.iter_mut().for_each(|a| *a /= bound);
            total += r.reward;
            let done = r.done;
            let next = r.observations;
            self.replay.push(Transition {
                obs: core::mem::replace(&mut obs, next.clone()),
                actions,
                reward: r.reward / scale,
                next,
                done,
            });
            if done {
                break;
            }
        }
        self.noise *= self.config.noise_decay;
        let value = env.return_offset() + total;
        Ok(Rollout {
            ratio: value / scale,
            excess: (value - env.return_baseline()) / scale,
            traj,
        })
    }

    /// Deterministic policy gradient step for agent `j` given
    /// `dQ/da` at the actor's own actions.
    fn actor_step(&mut self, j: usize, batch_obs: &[Observation], mut dqda: impl FnMut(usize, f64) -> Result<f64, LearnError>) -> Result<(), LearnError> {
        let actor = &mut self.actors[j];
        let penalty = self.config.preactivation_penalty;
        let mut grads = vec![0.0; actor.net.num_params()];
        let mut cache = Cache::default();
        let inv = 1.0 / batch_obs.len() as f64;
        for (b, o) in batch_obs.iter().enumerate() {
            let a = actor.net.forward_cached(o, &mut cache)?[0];
            let g = dqda(b, a)?;
            let pre = [2.0 * penalty * cache.pre_activation()[0] * inv];
            actor.net.backward_with(&cache, &[-g * inv], Some(&pre), &mut grads)?;
        }
        actor.opt.step(actor.net.params_mut(), &grads);
        Ok(())
    }

    fn policies(&self, method: Method, critics: Vec<Mlp>, reward_models: Vec<Mlp>, normalizer: Option<RewardNormalizer>) -> PolicySet {
        PolicySet {
            method,
            actors: self.actors.iter().map(|a| a.net.clone()).collect(),
            critics,
            reward_models,
            normalizer: normalizer.unwrap_or_default().frozen(),
            action_bound: self.config.action_bound,
        }
    }
}

struct Critic {
    net: Mlp,
    opt: Adam,
}

impl Critic {
    fn new(sizes: &[usize], lr: f64, rng: &mut ChaCha8Rng) -> Self {
        let net = Mlp::new(sizes, Output::Linear, 3e-3, rng);
        let opt = Adam::new(net.num_params(), lr);
        Critic { net, opt }
    }

    /// One MSE step toward `targets`; returns the loss.
    fn fit(&mut self, inputs: &[Vec<f64>], targets: &[f64]) -> Result<f64, LearnError> {
        let mut grads = vec![0.0; self.net.num_params()];
        let mut cache = Cache::default();
        let inv = 1.0 / inputs.len() as f64;
        let mut loss = 0.0;
        for (x, y) in inputs.iter().zip(targets) {
            let err = self.net.forward_cached(x, &mut cache)?[0] - y;
            loss += err * err * inv;
            self.net.backward(&cache, &[2.0 * err * inv], &mut grads)?;
        }
        if !loss.is_finite() {
            return Err(LearnError::Divergence { what: "critic" });
        }
        self.opt.step(self.net.params_mut(), &grads);
        Ok(loss)
    }
}

/// `dQ/dx` at `x`; `scratch` receives throwaway parameter gradients.
fn input_gradient(net: &Mlp, x: &[f64], cache: &mut Cache, scratch: &mut [f64]) -> Result<Vec<f64>, LearnError> {
    net.forward_cached(x, cache)?;
    net.backward(cache, &[1.0], scratch)
}

struct Progress<'a, C: Clock + ?Sized> {
    clock: &'a C,
    start: f64,
    eval_seconds: f64,
    curve: LearningCurve,
    best: Option<(f64, PolicySet)>,
}

impl<C: Clock + ?Sized> Progress<'_, C> {
    /// The final policies, with the best evaluated actors swapped in when
    /// one was kept.
    fn finish(&mut self, mut last: PolicySet) -> PolicySet {
        if let Some((_, best)) = self.best.take() {
            last.actors = best.actors;
            last.normalizer = best.normalizer;
        }
        last
    }

    fn elapsed(&self) -> f64 {
        self.clock.seconds() - self.start
    }

    /// Records the episode and reports whether training should stop.
    fn record(
        &mut self,
        episode: usize,
        train_ratio: f64,
        config: &TrainerConfig,
        eval: &mut Option<&mut dyn MarkovGame>,
        policies: impl FnOnce() -> PolicySet,
    ) -> Result<bool, LearnError> {
        self.curve.episodes = episode;
        let ratio = match eval {
            Some(env) if config.eval_every > 0 => {
                if episode % config.eval_every != 0 && episode != config.episodes {
                    None
                } else {
                    let t0 = self.clock.seconds();
                    let scale = env.return_scale();
                    let snapshot = policies();
                    let r = evaluate_policy(&mut **env, &snapshot, scale)?;
                    if config.keep_best && self.best.as_ref().is_none_or(|(b, _)| r > *b) {
                        self.best = Some((r, snapshot));
                    }
                    self.eval_seconds += self.clock.seconds() - t0;
                    Some(r)
                }
            }
            _ => Some(train_ratio),
        };
        let seconds = self.elapsed() - self.eval_seconds;
        self.curve.train_seconds = seconds;
        let mut stop = config.time_budget_secs.is_some_and(|b| seconds >= b);
        if let Some(ratio) = ratio {
            self.curve.points.push(CurvePoint { episode, seconds, ratio });
            stop |= config.stop_at_ratio.is_some_and(|target| ratio >= target);
        }
        Ok(stop)
    }
}

/// Trains per-agent actors whose critics see only `(o_j, a_j)` and regress
/// the shaped reward: the best normalised episode value seen through that
/// pair. `eval`, if given, is rolled out noise-free for the learning curve.
pub fn train_mapolo<G: MarkovGame + ?Sized>(
    env: &mut G,
    mut eval: Option<&mut dyn MarkovGame>,
    config: &TrainerConfig,
    clock: &dyn Clock,
) -> Result<Trained, LearnError> {
    let m = env.agents();
    let bound = config.action_bound;
    let mut c = Common::new(config, m)?;
    let sizes = config.sizes(OBS_DIM + 1);
    let mut critics: Vec<Critic> = (0..m).map(|_| Critic::new(&sizes, config.critic_lr, &mut c.rng)).collect();
    let reward_nets: Vec<Mlp> = (0..m)
        .map(|_| Mlp::new(&sizes, Output::Linear, 3e-3, &mut c.rng))
        .collect();
    let mut target_reward = reward_nets.clone();
    let mut shaped = ShapedRewardModel::new(
        reward_nets,
        config.reward_lr,
        config.reward_fit_steps,
        config.reward_down_weight,
    );
    let mut progress = Progress {
        clock,
        start: clock.seconds(),
        eval_seconds: 0.0,
        best: None,
        curve: LearningCurve {
            method: Method::Mapolo,
            points: Vec::new(),
            episodes: 0,
            train_seconds: 0.0,
        },
    };
    let mut cache = Cache::default();
    let mut scratch = vec![0.0; critics.first().map_or(0, |c| c.net.num_params())];

    // Shaped targets are measured from the first episode's value so freshly
    // initialised networks, which predict about zero, start near the data.
    let mut baseline = None;
    for episode in 1..=config.episodes {
        let Rollout { ratio, excess, traj } = c.rollout(env)?;
        let base = *baseline.get_or_insert(excess);
        for (j, t) in traj.iter().enumerate() {
            shaped.update(j, t, excess - base)?;
            soft_update(&mut target_reward[j], &shaped.nets[j], config.tau)?;
        }
        for _ in 0..config.updates_per_episode {
            let Some(batch) = c.replay.sample(config.batch_size, &mut c.rng) else {
                break;
            };
            let per_agent: Vec<(Vec<Observation>, Vec<Vec<f64>>)> = (0..m)
                .map(|j| {
                    let obs: Vec<Observation> = batch.iter().map(|t| t.obs[j]).collect();
                    let inputs = batch.iter().map(|t| pair_input(&t.obs[j], t.actions[j]).to_vec()).collect();
                    (obs, inputs)
                })
                .collect();
            for (j, (obs, inputs)) in per_agent.iter().enumerate() {
                let targets: Vec<f64> = inputs
                    .iter()
                    .map(|x| target_reward[j].eval(x))
                    .collect::<Result<_, _>>()?;
                critics[j].fit(inputs, &targets)?;
                if episode <= config.actor_delay {
                    continue;
                }
                let critic = &critics[j].net;
                c.actor_step(j, obs, |b, a| {
                    let dx = input_gradient(critic, &pair_input(&obs[b], a / bound), &mut cache, &mut scratch)?;
                    Ok(dx[OBS_DIM] / bound)
                })?;
            }
        }
        if !c.actors.iter().all(|a| a.net.is_finite()) {
            return Err(LearnError::Divergence { what: "actor" });
        }
        let normalizer = env.reward_normalizer();
        let stop = progress.record(episode, ratio, config, &mut eval, || {
            c.policies(Method::Mapolo, Vec::new(), Vec::new(), normalizer)
        })?;
        if stop {
            break;
        }
    }
    let normalizer = env.reward_normalizer();
    let policies = c.policies(
        Method::Mapolo,
        critics.into_iter().map(|c| c.net).collect(),
        shaped.nets,
        normalizer,
    );
    Ok(Trained {
        policies: progress.finish(policies),
        curve: progress.curve,
    })
}

fn joint_input(obs: &[Observation], actions: &[f64]) -> Vec<f64> {
    let mut x = Vec::with_capacity(obs.len() * (OBS_DIM + 1));
    for (o, a) in obs.iter().zip(actions) {
        x.extend_from_slice(o);
        x.push(*a);
    }
    x
}

/// Trains decentralised actors with one centralised critic per agent over
/// all observations and actions, bootstrapped on the per-step reward.
pub fn train_maddpg<G: MarkovGame + ?Sized>(
    env: &mut G,
    mut eval: Option<&mut dyn MarkovGame>,
    config: &TrainerConfig,
    clock: &dyn Clock,
) -> Result<Trained, LearnError> {
    let m = env.agents();
    let bound = config.action_bound;
    let mut c = Common::new(config, m)?;
    let sizes = config.sizes(Method::Maddpg.critic_input_dim(m));
    let mut critics: Vec<Critic> = (0..m).map(|_| Critic::new(&sizes, config.critic_lr, &mut c.rng)).collect();
    let mut target_critics: Vec<Mlp> = critics.iter().map(|c| c.net.clone()).collect();
    let mut target_actors: Vec<Mlp> = c.actors.iter().map(|a| a.net.clone()).collect();
    let mut progress = Progress {
        clock,
        start: clock.seconds(),
        eval_seconds: 0.0,
        best: None,
        curve: LearningCurve {
            method: Method::Maddpg,
            points: Vec::new(),
            episodes: 0,
            train_seconds: 0.0,
        },
    };
    let mut cache = Cache::default();
    let mut scratch = vec![0.0; critics.first().map_or(0, |c| c.net.num_params())];

    for episode in 1..=config.episodes {
        let ratio = c.rollout(env)?.ratio;
        for _ in 0..config.updates_per_episode {
            let Some(batch) = c.replay.sample(config.batch_size, &mut c.rng) else {
                break;
            };
            let next_actions: Vec<Vec<f64>> = batch
                .iter()
                .map(|t| {
                    target_actors
                        .iter()
                        .zip(&t.next)
                        .map(|(a, o)| Ok(a.eval(o)? / bound))
                        .collect::<Result<Vec<f64>, LearnError>>()
                })
                .collect::<Result<_, _>>()?;
            let inputs: Vec<Vec<f64>> = batch.iter().map(|t| joint_input(&t.obs, &t.actions)).collect();
            let next_inputs: Vec<Vec<f64>> = batch
                .iter()
                .zip(&next_actions)
                .map(|(t, a)| joint_input(&t.next, a))
                .collect();
            let steps: Vec<(f64, bool)> = batch.iter().map(|t| (t.reward, t.done)).collect();
            let agent_obs: Vec<Vec<Observation>> = (0..m).map(|j| batch.iter().map(|t| t.obs[j]).collect()).collect();
            for (j, obs) in agent_obs.iter().enumerate() {
                let mut targets = Vec::with_capacity(steps.len());
                for (&(r, done), x) in steps.iter().zip(&next_inputs) {
                    let future = if done { 0.0 } else { target_critics[j].eval(x)? };
                    targets.push(r + future);
                }
                critics[j].fit(&inputs, &targets)?;
                if episode <= config.actor_delay {
                    continue;
                }
                let critic = &critics[j].net;
                let inputs = &inputs;
                c.actor_step(j, obs, |b, a| {
                    let mut x = inputs[b].clone();
                    x[j * (OBS_DIM + 1) + OBS_DIM] = a / bound;
                    let dx = input_gradient(critic, &x, &mut cache, &mut scratch)?;
                    Ok(dx[j * (OBS_DIM + 1) + OBS_DIM] / bound)
                })?;
            }
            for j in 0..m {
                soft_update(&mut target_critics[j], &critics[j].net, config.tau)?;
                soft_update(&mut target_actors[j], &c.actors[j].net, config.tau)?;
            }
        }
        if !c.actors.iter().all(|a| a.net.is_finite()) {
            return Err(LearnError::Divergence { what: "actor" });
        }
        let normalizer = env.reward_normalizer();
        let stop = progress.record(episode, ratio, config, &mut eval, || {
            c.policies(Method::Maddpg, Vec::new(), Vec::new(), normalizer)
        })?;
        if stop {
            break;
        }
    }
    let normalizer = env.reward_normalizer();
    let policies = c.policies(
        Method::Maddpg,
        critics.into_iter().map(|c| c.net).collect(),
        Vec::new(),
        normalizer,
    );
    Ok(Trained {
        policies: progress.finish(policies),
        curve: progress.curve,
    })
}

/// Dispatches on `method`.
pub fn train<G: MarkovGame + ?Sized>(
    method: Method,
    env: &mut G,
    eval: Option<&mut dyn MarkovGame>,
    config: &TrainerConfig,
    clock: &dyn Clock,
) -> Result<Trained, LearnError> {
    match method {
        Method::Mapolo => train_mapolo(env, eval, config, clock),
        Method::Maddpg => train_maddpg(env, eval, config, clock),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::marlenv::{AllocationEnv, QuadraticBandit};
    use crate::oracle::solve_dual;
    use crate::scenario::{generate_scenario, GenSpec};

    fn bandit_config(seed: u64) -> TrainerConfig {
        TrainerConfig {
            episodes: 500,
            seed,
            eval_every: 0,
            ..TrainerConfig::default()
        }
    }

    /// Best action on a fine grid of the bounded action interval.
    fn scan_optimum(b: &QuadraticBandit) -> f64 {
        (0..=2000)
            .map(|k| -b.bound + 2.0 * b.bound * k as f64 / 2000.0)
            .fold((f64::NEG_INFINITY, 0.0), |(best, arg), a| {
                let r = b.reward(a);
                if r > best {
                    (r, a)
                } else {
                    (best, arg)
                }
            })
            .1
    }

    #[test]
    fn mapolo_finds_bandit_optimum() {
        let mut env = QuadraticBandit::new(0.06, 0.1);
        let best = scan_optimum(&env);
        let out = train_mapolo(&mut env, None, &bandit_config(1), &NoClock).unwrap();
        let a = out.policies.act(&env.reset()).unwrap()[0];
        assert!((a - best).abs() < 0.01, "{a} vs {best}");
    }

    #[test]
    fn maddpg_finds_bandit_optimum() {
        let mut env = QuadraticBandit::new(-0.04, 0.1);
        let best = scan_optimum(&env);
        let out = train_maddpg(&mut env, None, &bandit_config(2), &NoClock).unwrap();
        let a = out.policies.act(&env.reset()).unwrap()[0];
        assert!((a - best).abs() < 0.01, "{a} vs {best}");
    }

    #[test]
    fn critic_dimensions() {
        for m in [2usize, 8, 64] {
            assert_eq!(Method::Mapolo.critic_input_dim(m), OBS_DIM + 1);
            assert_eq!(Method::Maddpg.critic_input_dim(m), m * (OBS_DIM + 1));
        }
    }

    #[test]
    fn config_validation() {
        assert!(TrainerConfig::default().validate().is_ok());
        let bad = TrainerConfig {
            tau: 0.0,
            ..TrainerConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainerConfig {
            critic_lr: -1.0,
            ..TrainerConfig::default()
        };
        assert!(bad.validate().is_err());
        assert_eq!("maddpg".parse::<Method>(), Ok(Method::Maddpg));
        assert!("dqn".parse::<Method>().is_err());
    }

    fn small_scenario() -> crate::scenario::Scenario {
        generate_scenario(
            &GenSpec {
                contracts: 3,
                impressions: 3000,
                horizon: 6,
                ..GenSpec::default()
            },
            8,
        )
        .unwrap()
    }

    #[test]
    fn hold_policy_at_optimal_alpha_scores_one() {
        let s = small_scenario();
        let d = solve_dual(&s, 1e-9, 2000);
        let mut env = AllocationEnv::new(&s, d.alpha.clone(), d.upper_bound);
        let ratio = evaluate_policy(&mut env, &PolicySet::hold(Method::Mapolo, 3), d.upper_bound).unwrap();
        assert!(ratio >= 1.0 - 1e-3 && ratio <= 1.0 + 1e-9, "{ratio}");
        let zero = evaluate_policy(
            &mut AllocationEnv::new(&s, vec![0.0; 3], d.upper_bound),
            &PolicySet::hold(Method::Mapolo, 3),
            d.upper_bound,
        )
        .unwrap();
        assert!(zero <= ratio);
    }

    #[test]
    fn training_is_reproducible() {
        let s = small_scenario();
        let d = solve_dual(&s, 1e-9, 2000);
        let config = TrainerConfig {
            episodes: 6,
            hidden: vec![8, 8, 8],
            eval_every: 2,
            batch_size: 8,
            ..TrainerConfig::default()
        };
        for method in [Method::Mapolo, Method::Maddpg] {
            let run = || {
                let mut env = AllocationEnv::new(&s, s.alpha_init(), d.upper_bound);
                let mut eval = AllocationEnv::new(&s, s.alpha_init(), d.upper_bound);
                train(method, &mut env, Some(&mut eval), &config, &NoClock).unwrap()
            };
            let (a, b) = (run(), run());
            assert_eq!(a.policies, b.policies);
            assert_eq!(a.curve, b.curve);
            assert_eq!(a.curve.points.len(), 3);
            assert_eq!(a.policies.critic_input_dim(), method.critic_input_dim(3));
        }
    }

    #[test]
    fn stops_at_target_ratio() {
        let s = small_scenario();
        let d = solve_dual(&s, 1e-9, 2000);
        let config = TrainerConfig {
            episodes: 50,
            hidden: vec![8, 8, 8],
            eval_every: 1,
            stop_at_ratio: Some(0.0),
            ..TrainerConfig::default()
        };
        let mut env = AllocationEnv::new(&s, d.alpha.clone(), d.upper_bound);
        let mut eval = AllocationEnv::new(&s, d.alpha.clone(), d.upper_bound);
        let out = train_mapolo(&mut env, Some(&mut eval), &config, &NoClock).unwrap();
        assert_eq!(out.curve.episodes, 1);
    }

    #[test]
    fn keep_best_returns_best_evaluated_actors() {
        let s = small_scenario();
        let d = solve_dual(&s, 1e-9, 2000);
        let config = TrainerConfig {
            episodes: 12,
            hidden: vec![8, 8, 8],
            eval_every: 1,
            batch_size: 8,
            actor_lr: 1e-2,
            keep_best: true,
            ..TrainerConfig::default()
        };
        for method in [Method::Mapolo, Method::Maddpg] {
            let mut env = AllocationEnv::new(&s, s.alpha_init(), d.upper_bound);
            let mut eval = AllocationEnv::new(&s, s.alpha_init(), d.upper_bound);
            let out = train(method, &mut env, Some(&mut eval), &config, &NoClock).unwrap();
            let again = evaluate_policy(&mut eval, &out.policies, d.upper_bound).unwrap();
            assert_eq!(Some(again), out.curve.best());
        }
    }
}
