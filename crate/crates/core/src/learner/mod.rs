//! Multi-agent learners over [`crate::marlenv`] games.
//!
//! [`train_mapolo`] gives every agent its own actor and a critic over its own
//! observation and action, trained on a shaped reward that remembers the best
//! episode each state-action pair has been part of. [`train_maddpg`] is the
//! centralised-critic baseline. Both run on the small networks in [`mlp`].

pub mod mlp;
pub mod replay;
pub mod shaped;
pub mod toy;
pub mod train;

use thiserror::Error;

use crate::marlenv::EnvError;

pub use mlp::{gradient_check, soft_update, Adam, Mlp, Output};
pub use replay::ReplayBuffer;
pub use shaped::{ShapedRewardModel, TabularShapedReward};
pub use toy::{running_max_greedy_check, ToyGame};
pub use train::{
    evaluate_policy, train, train_maddpg, train_mapolo, Clock, CurvePoint, LearningCurve, Method, NoClock,
    PolicySet, Trained, TrainerConfig,
};

#[derive(Clone, Debug, PartialEq, Error)]
pub enum LearnError {
    #[error("expected length {expected}, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("invalid trainer config: {0}")]
    Config(&'static str),
    #[error("{what} loss is not finite")]
    Divergence { what: &'static str },
    #[error("precondition violated: {0}")]
    Precondition(&'static str),
    #[error(transparent)]
    Env(#[from] EnvError),
}
