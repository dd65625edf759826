//! File formats, experiment configuration, checkpoints, CSV/JSON outputs and
//! the `impalloc` command-line driver on top of [`impalloc_core`].

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod format;
pub mod output;
pub mod pipeline;

pub use checkpoint::Checkpoint;
pub use config::Config;
pub use error::CliError;
