//! TOML experiment configuration. Every section is optional; missing keys
//! take the library defaults.
//!
//! ```toml
//! [generator]
//! contracts = 5
//! impressions = 50000
//! horizon = 96
//!
//! [trainer]
//! episodes = 2000
//! hidden = [64, 64, 64]
//!
//! [pool]
//! size = 8
//! ```

use std::fs;
use std::path::Path;

use impalloc_core::baselines::{PidGains, DEFAULT_RISK_FACTOR};
use impalloc_core::learner::TrainerConfig;
use impalloc_core::scenario::{DriftSpec, GenSpec};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            tol: 1e-6,
            max_iters: 5000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CfConfig {
    pub risk_factor: f64,
}

impl Default for CfConfig {
    fn default() -> Self {
        CfConfig {
            risk_factor: DEFAULT_RISK_FACTOR,
        }
    }
}

/// Randomly drifted copies of the training day that training cycles
/// through, so the learned controller has seen volume and price shifts.
/// Factors are drawn uniformly from `1 +- spread`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoolConfig {
    pub size: usize,
    pub volume_spread: f64,
    pub price_spread: f64,
    pub quality_noise: f64,
}

impl Default for PoolConfig {
    fn default() -> Self {
        PoolConfig {
            size: 0,
            volume_spread: 0.26,
            price_spread: 0.53,
            quality_noise: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub generator: GenSpec,
    pub drift: DriftSpec,
    pub pool: PoolConfig,
    pub trainer: TrainerConfig,
    pub pid: PidGains,
    pub cf: CfConfig,
    pub oracle: OracleConfig,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            generator: GenSpec::default(),
            drift: DriftSpec::IDENTITY,
            pool: PoolConfig::default(),
            trainer: TrainerConfig::default(),
            pid: PidGains::default(),
            cf: CfConfig::default(),
            oracle: OracleConfig::default(),
        }
    }
}

impl Config {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Parse(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<Self, CliError> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    /// Fails when a value has no TOML form, such as a seed above `i64::MAX`.
    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Invalid(format!("config: {e}")))
    }
}
