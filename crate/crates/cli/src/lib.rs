//! Experiment harness behind the `ccgame` binary: JSON experiment configs,
//! parallel seeded runs over parameter grids, and CSV/JSON reports.

pub mod config;
pub mod harness;
pub mod table;

pub use config::{Aggregation, ExperimentConfig, ExperimentKind, PivotSpec};
pub use harness::{run_experiment, ExperimentOutcome, ResultRow};
pub use table::{emit_table, PivotTable};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error("conflicting table cells: {0}")]
    Conflict(String),
    #[error(transparent)]
    Core(#[from] creator_game::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

/// Process exit statuses.
pub mod exit {
    pub const SUCCESS: i32 = 0;
    pub const INVALID_INPUT: i32 = 1;
    pub const BUDGET_EXCEEDED: i32 = 2;
    pub const VERIFICATION_FAILED: i32 = 3;
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Core(creator_game::Error::BudgetExceeded { .. }) => exit::BUDGET_EXCEEDED,
            _ => exit::INVALID_INPUT,
        }
    }
}
