//! Running compiled drivers: libFuzzer child processes, and a deterministic
//! simulator for desk-scale campaigns.

pub mod libfuzzer;
pub mod sim;

pub use libfuzzer::{LibFuzzerConfig, LibFuzzerExecutor};
pub use sim::{SimCrash, SimDriver, SimExecutor, SimSpec};

use std::collections::BTreeSet;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::synth::FuzzDriver;
use crate::triage::RawCrash;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageExport {
    /// `file:line:index` identifiers exercised by the run.
    pub branches: BTreeSet<String>,
    /// Where the export was written, when it was.
    pub path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionResult {
    pub driver_id: String,
    pub t_actual: f64,
    /// Present iff `executions > 0`.
    pub coverage: Option<CoverageExport>,
    pub crashes: Vec<RawCrash>,
    pub executions: u64,
}

impl ExecutionResult {
    pub fn branches(&self) -> BTreeSet<String> {
        self.coverage.as_ref().map(|c| c.branches.clone()).unwrap_or_default()
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ExecutorError {
    #[error("budget must be positive, got {0}")]
    InvalidBudget(f64),
    #[error("no simulation entry for driver {0}")]
    UnknownDriver(String),
    #[error("driver {driver} failed to start: {reason}")]
    Launch { driver: String, reason: String },
    #[error("executor I/O: {0}")]
    Io(String),
}

pub trait DriverExecutor {
    fn execute(&mut self, driver: &FuzzDriver, budget_secs: f64) -> Result<ExecutionResult, ExecutorError>;

    /// Executor granularity: the most a run may exceed its budget by.
    fn grace_secs(&self) -> f64 {
        1.0
    }
}

pub(crate) fn check_budget(budget: f64) -> Result<(), ExecutorError> {
    if budget > 0.0 && budget.is_finite() {
        Ok(())
    } else {
        Err(ExecutorError::InvalidBudget(budget))
    }
}
