//! Library side of the `gridbid` command: config parsing, the run commands and the
//! validation suites.

pub mod commands;
pub mod config;
pub mod validate;

use gridbid::bilevel::BilevelError;
use gridbid::clearing::ClearingError;
use gridbid::dro::DroError;
use gridbid::grid::GridError;
use gridbid::market::MarketError;
use gridbid::rtmarket::RtError;
use gridbid::scenario::ScenarioError;
use thiserror::Error;

pub use config::{ConfigError, RunConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("input: {0}")]
    Input(String),
    #[error(transparent)]
    Market(#[from] MarketError),
    #[error(transparent)]
    Clearing(#[from] ClearingError),
    #[error(transparent)]
    Bilevel(#[from] BilevelError),
    #[error(transparent)]
    Dro(#[from] DroError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Rt(#[from] RtError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    /// The run finished but some hour was not solved to optimality.
    #[error("{0} day-ahead hour(s) not solved to optimality")]
    NotOptimal(usize),
    #[error("validation failed: {0}")]
    ValidationFailed(String),
}

impl CliError {
    /// Process exit code: 2 for bad input, 1 for runs that finished with a failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::NotOptimal(_) | CliError::ValidationFailed(_) => 1,
            CliError::Rt(RtError::Diverged { .. }) | CliError::Grid(GridError::SweepDiverged { .. }) => 1,
            _ => 2,
        }
    }
}
