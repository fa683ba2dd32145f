//! Config-driven experiment runner: synthetic data, target training,
//! shadow-model inference, evaluation and parameter sweeps.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;

pub use commands::{cmd_evaluate, cmd_infer, cmd_sweep, cmd_synth, cmd_train_target, Overrides};
pub use config::RunConfig;
pub use error::{CliError, CliResult};
