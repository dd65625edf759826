//! Impressions, contracts and the RTB bid landscape for one publisher day.

use alloc::vec;
use alloc::vec::Vec;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, StandardNormal};
use thiserror::Error;

/// A guaranteed-delivery contract.
///
/// `id` is dense and 1-based; the contract with id `j` is stored at index
/// `j - 1` of [`Scenario::contracts`] and every impression's quality vector.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Contract {
    pub id: u32,
    /// Impressions promised.
    pub demand: u64,
    /// Prepaid price per impression.
    pub unit_price: f64,
    /// Paid back per undelivered impression.
    pub penalty: f64,
    /// Money per unit of delivered quality.
    pub quality_weight: f64,
    /// Bid shift the day starts with.
    pub alpha_init: f64,
}

impl Contract {
    /// Prepaid value `c_j * d_j`.
    pub fn value(&self) -> f64 {
        self.unit_price * self.demand as f64
    }

    /// Contract value net of a full shortfall, `(c_j - p_j) * d_j`.
    ///
    /// This is what the contract contributes to yield when nothing is delivered.
    pub fn floor_value(&self) -> f64 {
        (self.unit_price - self.penalty) * self.demand as f64
    }

    fn check(&self) -> Result<(), ScenarioError> {
        let ok = self.demand >= 1
            && self.unit_price.is_finite()
            && self.unit_price >= 0.0
            && self.penalty.is_finite()
            && self.penalty > 0.0
            && self.quality_weight.is_finite()
            && self.quality_weight >= 0.0
            && self.alpha_init >= 0.0
            && self.alpha_init <= self.penalty;
        if ok {
            Ok(())
        } else {
            Err(ScenarioError::InvalidContract(self.id))
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Impression {
    pub id: u64,
    /// Arrival bucket in `1..=T`.
    pub step: u32,
    /// Highest RTB bid.
    pub rtb_first: f64,
    /// Second-highest RTB bid; the price RTB pays for the impression.
    pub rtb_second: f64,
    /// `q_ij` in contract order.
    pub quality: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Scenario {
    pub contracts: Vec<Contract>,
    /// Sorted by step.
    pub impressions: Vec<Impression>,
    pub horizon: u32,
}

#[derive(Clone, Debug, PartialEq, Error)]
pub enum ScenarioError {
    #[error("configuration error: {0}")]
    Config(&'static str),
    #[error("total demand {demand} exceeds supply {supply}")]
    InfeasibleSupply { demand: u64, supply: u64 },
    #[error("contract {0} violates its invariants")]
    InvalidContract(u32),
    #[error("contract ids must be dense 1..m (found {found} at position {position})")]
    ContractIds { position: usize, found: u32 },
    #[error("impression {0} violates its invariants")]
    InvalidImpression(u64),
    #[error("impression {0} has {1} quality entries, expected one per contract")]
    QualityArity(u64, usize),
    #[error("duplicate impression id {0}")]
    DuplicateImpression(u64),
    #[error("impressions are not ordered by step at id {0}")]
    Unordered(u64),
    #[error("drift parameters out of range")]
    InvalidDrift,
}

impl Scenario {
    /// Builds a scenario and checks every invariant.
    pub fn new(
        contracts: Vec<Contract>,
        impressions: Vec<Impression>,
        horizon: u32,
    ) -> Result<Self, ScenarioError> {
        let s = Scenario {
            contracts,
            impressions,
            horizon,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.horizon == 0 {
            return Err(ScenarioError::Config("horizon must be at least 1"));
        }
        for (pos, c) in self.contracts.iter().enumerate() {
            if c.id as usize != pos + 1 {
                return Err(ScenarioError::ContractIds {
                    position: pos,
                    found: c.id,
                });
            }
            c.check()?;
        }
        let m = self.contracts.len();
        let mut ids: Vec<u64> = Vec::with_capacity(self.impressions.len());
        let mut last_step = 0;
        for imp in &self.impressions {
            check_impression(imp, self.horizon, m)?;
            if imp.step < last_step {
                return Err(ScenarioError::Unordered(imp.id));
            }
            last_step = imp.step;
            ids.push(imp.id);
        }
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(ScenarioError::DuplicateImpression(w[0]));
        }
        Ok(())
    }

    pub fn num_contracts(&self) -> usize {
        self.contracts.len()
    }

    pub fn num_impressions(&self) -> usize {
        self.impressions.len()
    }

    pub fn total_demand(&self) -> u64 {
        self.contracts.iter().map(|c| c.demand).sum()
    }

    /// `sum_j c_j d_j`.
    pub fn contract_value(&self) -> f64 {
        self.contracts.iter().map(Contract::value).sum()
    }

    /// `sum_j (c_j - p_j) d_j`, the yield of a day where no contract gets anything
    /// and no impression is sold.
    pub fn floor_value(&self) -> f64 {
        self.contracts.iter().map(Contract::floor_value).sum()
    }

    /// `sum_i b_i2`, the RTB revenue of sending everything to RTB.
    pub fn rtb_value(&self) -> f64 {
        self.impressions.iter().map(|i| i.rtb_second).sum()
    }

    pub fn alpha_init(&self) -> Vec<f64> {
        self.contracts.iter().map(|c| c.alpha_init).collect()
    }

    /// Offsets of each step in the impression list: step `t` (1-based) owns
    /// `impressions[b[t - 1]..b[t]]`. Length is `horizon + 1`.
    pub fn step_bounds(&self) -> Vec<usize> {
        let t_max = self.horizon as usize;
        let mut bounds = vec![0usize; t_max + 1];
        for imp in &self.impressions {
            bounds[imp.step as usize] += 1;
        }
        for t in 1..=t_max {
            bounds[t] += bounds[t - 1];
        }
        bounds
    }

    /// Impression counts per step.
    pub fn step_counts(&self) -> Vec<usize> {
        self.step_bounds().windows(2).map(|w| w[1] - w[0]).collect()
    }
}

pub(crate) fn check_impression(imp: &Impression, horizon: u32, m: usize) -> Result<(), ScenarioError> {
    if imp.quality.len() != m {
        return Err(ScenarioError::QualityArity(imp.id, imp.quality.len()));
    }
    let ok = imp.step >= 1
        && imp.step <= horizon
        && imp.rtb_second.is_finite()
        && imp.rtb_first.is_finite()
        && imp.rtb_second >= 0.0
        && imp.rtb_first >= imp.rtb_second
        && imp.quality.iter().all(|q| q.is_finite() && *q >= 0.0);
    if ok {
        Ok(())
    } else {
        Err(ScenarioError::InvalidImpression(imp.id))
    }
}

/// Parameters of the synthetic scenario generator.
///
/// RTB bids for an impression are the top two of `bidders` i.i.d. draws from
/// `exp(bid_location + bid_scale * z)`, multiplied by the step's entry of
/// `price_curve`. Quality `q_ij` is Beta distributed with per-contract shape
/// parameters drawn from the two shape ranges.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct GenSpec {
    pub contracts: usize,
    pub impressions: usize,
    pub horizon: u32,
    pub bidders: usize,
    pub bid_location: f64,
    pub bid_scale: f64,
    /// Explicit `d_j / n` per contract. When empty, `demand_share` of the
    /// supply is split across contracts with random weights.
    pub demand_fractions: Vec<f64>,
    pub demand_share: f64,
    pub unit_price_range: (f64, f64),
    pub penalty_range: (f64, f64),
    pub quality_weight_range: (f64, f64),
    pub quality_shape_a: (f64, f64),
    pub quality_shape_b: (f64, f64),
    /// `alpha_init = u * p_j` with `u` drawn from this range.
    pub alpha_init_fraction: (f64, f64),
    /// Relative arrival volume per step; empty means uniform.
    pub arrival_curve: Vec<f64>,
    /// Multiplier on RTB bids per step; empty means flat.
    pub price_curve: Vec<f64>,
}

impl Default for GenSpec {
    fn default() -> Self {
        GenSpec {
            contracts: 5,
            impressions: 10_000,
            horizon: 24,
            bidders: 5,
            bid_location: 0.0,
            bid_scale: 0.5,
            demand_fractions: Vec::new(),
            demand_share: 0.6,
            unit_price_range: (1.0, 3.0),
            penalty_range: (0.5, 2.0),
            quality_weight_range: (0.2, 1.0),
            quality_shape_a: (1.0, 4.0),
            quality_shape_b: (2.0, 6.0),
            alpha_init_fraction: (0.0, 1.0),
            arrival_curve: Vec::new(),
            price_curve: Vec::new(),
        }
    }
}

fn ordered(r: (f64, f64)) -> bool {
    r.0.is_finite() && r.1.is_finite() && r.0 <= r.1
}

fn draw<R: Rng>(rng: &mut R, r: (f64, f64)) -> f64 {
    if r.0 == r.1 {
        r.0
    } else {
        r.0 + (r.1 - r.0) * rng.random::<f64>()
    }
}

impl GenSpec {
    fn check(&self) -> Result<(), ScenarioError> {
        use ScenarioError::Config;
        if self.contracts == 0 {
            return Err(Config("m must be at least 1"));
        }
        if self.impressions == 0 {
            return Err(Config("n must be at least 1"));
        }
        if self.horizon == 0 {
            return Err(Config("T must be at least 1"));
        }
        if self.bidders == 0 {
            return Err(Config("at least one RTB bidder is required"));
        }
        if !(self.bid_scale >= 0.0 && self.bid_scale.is_finite() && self.bid_location.is_finite()) {
            return Err(Config("bid distribution parameters must be finite, scale >= 0"));
        }
        if !self.demand_fractions.is_empty() {
            if self.demand_fractions.len() != self.contracts {
                return Err(Config("demand_fractions needs one entry per contract"));
            }
            if self.demand_fractions.iter().any(|f| !(*f >= 0.0 && f.is_finite())) {
                return Err(Config("demand fractions must be finite and non-negative"));
            }
        } else if !(self.demand_share > 0.0 && self.demand_share.is_finite()) {
            return Err(Config("demand_share must be positive"));
        }
        for r in [
            self.unit_price_range,
            self.penalty_range,
            self.quality_weight_range,
            self.quality_shape_a,
            self.quality_shape_b,
            self.alpha_init_fraction,
        ] {
            if !ordered(r) {
                return Err(Config("ranges must be finite and ordered"));
            }
        }
        if self.unit_price_range.0 < 0.0 || self.quality_weight_range.0 < 0.0 {
            return Err(Config("prices and quality weights must be non-negative"));
        }
        if self.penalty_range.0 <= 0.0 {
            return Err(Config("penalties must be positive"));
        }
        if self.quality_shape_a.0 <= 0.0 || self.quality_shape_b.0 <= 0.0 {
            return Err(Config("Beta shape parameters must be positive"));
        }
        if self.alpha_init_fraction.0 < 0.0 || self.alpha_init_fraction.1 > 1.0 {
            return Err(Config("alpha_init_fraction must lie in [0, 1]"));
        }
        let t = self.horizon as usize;
        if !self.arrival_curve.is_empty()
            && (self.arrival_curve.len() != t
                || self.arrival_curve.iter().any(|w| !(*w >= 0.0 && w.is_finite()))
                || self.arrival_curve.iter().all(|w| *w == 0.0))
        {
            return Err(Config("arrival_curve needs T non-negative weights, not all zero"));
        }
        if !self.price_curve.is_empty()
            && (self.price_curve.len() != t || self.price_curve.iter().any(|w| !(*w > 0.0 && w.is_finite())))
        {
            return Err(Config("price_curve needs T positive multipliers"));
        }
        Ok(())
    }

    fn demands<R: Rng>(&self, rng: &mut R) -> Vec<u64> {
        let n = self.impressions as f64;
        let fractions: Vec<f64> = if self.demand_fractions.is_empty() {
            let weights: Vec<f64> = (0..self.contracts).map(|_| 0.5 + rng.random::<f64>()).collect();
            let total: f64 = weights.iter().sum();
            weights.iter().map(|w| self.demand_share * w / total).collect()
        } else {
            self.demand_fractions.clone()
        };
        fractions
            .iter()
            .map(|f| (libm::round(f * n) as u64).max(1))
            .collect()
    }
}

/// Generates a scenario; a pure function of `(spec, seed)`.
pub fn generate_scenario(spec: &GenSpec, seed: u64) -> Result<Scenario, ScenarioError> {
    spec.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = spec.contracts;
    let n = spec.impressions;

    let demands = spec.demands(&mut rng);
    let total: u64 = demands.iter().sum();
    if total > n as u64 {
        return Err(ScenarioError::InfeasibleSupply {
            demand: total,
            supply: n as u64,
        });
    }

    let mut contracts = Vec::with_capacity(m);
    let mut quality_dists = Vec::with_capacity(m);
    for (j, &demand) in demands.iter().enumerate() {
        let penalty = draw(&mut rng, spec.penalty_range);
        let c = Contract {
            id: j as u32 + 1,
            demand,
            unit_price: draw(&mut rng, spec.unit_price_range),
            penalty,
            quality_weight: draw(&mut rng, spec.quality_weight_range),
            alpha_init: (draw(&mut rng, spec.alpha_init_fraction) * penalty).min(penalty),
        };
        let a = draw(&mut rng, spec.quality_shape_a);
        let b = draw(&mut rng, spec.quality_shape_b);
        quality_dists.push(Beta::new(a, b).map_err(|_| ScenarioError::Config("invalid Beta shape"))?);
        contracts.push(c);
    }

    let steps = spec.horizon;
    let arrivals = if spec.arrival_curve.is_empty() {
        None
    } else {
        Some(WeightedIndex::new(&spec.arrival_curve).map_err(|_| ScenarioError::Config("invalid arrival curve"))?)
    };

    let mut bids = vec![0.0f64; spec.bidders];
    let mut impressions = Vec::with_capacity(n);
    for _ in 0..n {
        let step = match &arrivals {
            Some(w) => w.sample(&mut rng) as u32 + 1,
            None => rng.random_range(1..=steps),
        };
        let price = spec.price_curve.get(step as usize - 1).copied().unwrap_or(1.0);
        for b in bids.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *b = price * libm::exp(spec.bid_location + spec.bid_scale * z);
        }
        let (first, second) = top_two(&bids);
        let quality = quality_dists.iter().map(|d| d.sample(&mut rng)).collect();
        impressions.push(Impression {
            id: 0,
            step,
            rtb_first: first,
            rtb_second: second,
            quality,
        });
    }
    impressions.sort_by_key(|i| i.step);
    for (k, imp) in impressions.iter_mut().enumerate() {
        imp.id = k as u64 + 1;
    }

    Scenario::new(contracts, impressions, steps)
}

fn top_two(bids: &[f64]) -> (f64, f64) {
    let mut first = 0.0f64;
    let mut second = 0.0f64;
    for &b in bids {
        if b > first {
            second = first;
            first = b;
        } else if b > second {
            second = b;
        }
    }
    (first, second)
}

/// Train-to-test environment change.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct DriftSpec {
    /// Test impression count over train impression count.
    pub volume_factor: f64,
    /// Multiplier on every RTB bid.
    pub price_factor: f64,
    /// Standard deviation of the multiplicative quality perturbation.
    pub quality_noise: f64,
}

impl Default for DriftSpec {
    fn default() -> Self {
        DriftSpec::IDENTITY
    }
}

impl DriftSpec {
    pub const IDENTITY: DriftSpec = DriftSpec {
        volume_factor: 1.0,
        price_factor: 1.0,
        quality_noise: 0.0,
    };

    pub fn check(&self) -> Result<(), ScenarioError> {
        if self.volume_factor > 0.0
            && self.volume_factor.is_finite()
            && self.price_factor > 0.0
            && self.price_factor.is_finite()
            && self.quality_noise >= 0.0
            && self.quality_noise.is_finite()
        {
            Ok(())
        } else {
            Err(ScenarioError::InvalidDrift)
        }
    }
}

/// Derives a test day from a training day.
///
/// The test day has `round(n * volume_factor)` impressions resampled with
/// replacement from the training day (each keeps its step, bids and quality
/// row), RTB bids scaled by `price_factor`, and each `q_ij` multiplied by
/// `max(0, 1 + quality_noise * z)`. Contracts are copied unchanged.
pub fn apply_drift(train: &Scenario, drift: &DriftSpec, seed: u64) -> Result<Scenario, ScenarioError> {
    drift.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = train.impressions.len();
    let target = libm::round(n as f64 * drift.volume_factor) as usize;
    let mut impressions = Vec::with_capacity(target);
    if n > 0 {
        for _ in 0..target {
            let src = &train.impressions[rng.random_range(0..n)];
            let quality = src
                .quality
                .iter()
                .map(|q| {
                    if drift.quality_noise > 0.0 {
                        let z: f64 = rng.sample(StandardNormal);
                        q * (1.0 + drift.quality_noise * z).max(0.0)
                    } else {
                        *q
                    }
                })
                .collect();
            impressions.push(Impression {
                id: 0,
                step: src.step,
                rtb_first: src.rtb_first * drift.price_factor,
                rtb_second: src.rtb_second * drift.price_factor,
                quality,
            });
        }
    }
    impressions.sort_by_key(|i| i.step);
    for (k, imp) in impressions.iter_mut().enumerate() {
        imp.id = k as u64 + 1;
    }
    Scenario::new(train.contracts.clone(), impressions, train.horizon)
}
