//! Batch experiment harness behind the `cppd` binary.

pub mod config;
pub mod demo;
pub mod experiment;

use crate::error::Error;

pub use config::ExperimentConfig;
pub use experiment::{run_experiment, run_in_memory, sweep, RunSummary, SweepParam};

/// Pipeline stage an error came out of.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    Setup,
    Data,
    Eigen,
    Plan,
    Solve,
    Output,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Config => "config",
            Stage::Setup => "setup",
            Stage::Data => "data",
            Stage::Eigen => "eigenpairs",
            Stage::Plan => "step plan",
            Stage::Solve => "solve",
            Stage::Output => "output",
        }
    }

    pub fn wrap(self) -> impl Fn(Error) -> CliError {
        move |error| CliError::new(self, error)
    }
}

#[derive(Debug, thiserror::Error)]
#[error("{} stage failed: {error}", stage.name())]
pub struct CliError {
    pub stage: Stage,
    #[source]
    pub error: Error,
}

impl CliError {
    pub fn new(stage: Stage, error: Error) -> Self {
        Self { stage, error }
    }

    /// 2 for numerical failures, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        if self.error.is_numerical() {
            2
        } else {
            1
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
