//! Trained policies on disk: versioned JSON with shortest round-trip floats,
//! so a saved and reloaded checkpoint acts bit-identically.

use std::fs;
use std::path::Path;

use impalloc_core::learner::{PolicySet, TrainerConfig};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub trainer: TrainerConfig,
    /// Bid shifts every episode started from.
    pub alpha_init: Vec<f64>,
    pub policies: PolicySet,
}

impl Checkpoint {
    pub fn new(trainer: TrainerConfig, alpha_init: Vec<f64>, policies: PolicySet) -> Self {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            trainer,
            alpha_init,
            policies,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serialises")
    }

    pub fn from_json(text: &str) -> Result<Self, CliError> {
        #[derive(Deserialize)]
        struct Version {
            version: u32,
        }
        let v: Version = serde_json::from_str(text).map_err(|e| CliError::Parse(format!("checkpoint: {e}")))?;
        if v.version != CHECKPOINT_VERSION {
            return Err(CliError::Invalid(format!(
                "checkpoint version {} is not supported (expected {CHECKPOINT_VERSION})",
                v.version
            )));
        }
        let c: Checkpoint = serde_json::from_str(text).map_err(|e| CliError::Parse(format!("checkpoint: {e}")))?;
        if !c.policies.is_finite() {
            return Err(CliError::Numerical("checkpoint holds non-finite parameters".into()));
        }
        if c.alpha_init.len() != c.policies.agents() {
            return Err(CliError::Invalid("checkpoint alpha count differs from agent count".into()));
        }
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        fs::write(path, self.to_json()).map_err(|e| CliError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use impalloc_core::learner::{train_mapolo, NoClock};
    use impalloc_core::marlenv::QuadraticBandit;

    fn trained() -> Checkpoint {
        let cfg = TrainerConfig {
            episodes: 30,
            hidden: vec![8, 8],
            batch_size: 4,
            ..TrainerConfig::default()
        };
        let mut env = QuadraticBandit::new(0.03, 0.1);
        let out = train_mapolo(&mut env, None, &cfg, &NoClock).unwrap();
        Checkpoint::new(cfg, vec![0.5], out.policies)
    }

    #[test]
    fn json_round_trip_is_exact() {
        let c = trained();
        let back = Checkpoint::from_json(&c.to_json()).unwrap();
        assert_eq!(back, c);
        let o = [0.25, 0.5, 1.0, 0.125, -0.5];
        assert_eq!(
            back.policies.act(&[o]).unwrap()[0].to_bits(),
            c.policies.act(&[o]).unwrap()[0].to_bits()
        );
    }

    #[test]
    fn rejects_other_versions() {
        let mut c = trained();
        c.version = 99;
        assert!(matches!(Checkpoint::from_json(&c.to_json()), Err(CliError::Invalid(_))));
        assert!(matches!(Checkpoint::from_json("{\"version\":1"), Err(CliError::Parse(_))));
    }
}
