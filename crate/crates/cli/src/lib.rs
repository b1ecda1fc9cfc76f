//! Experiment harness around the core library: configuration files with
//! overridable keys, seeded run directories with checksummed artifacts,
//! planning/training/evaluation/ablation drivers, and CSV plot-data
//! emission.

pub mod config;
pub mod plots;
pub mod records;
pub mod runner;

use thiserror::Error;

/// Top-level harness error; the binary maps variants onto exit codes
/// (2 config, 3 numerical, 4 I/O).
#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error:\n  {}", details.join("\n  "))]
    Config { details: Vec<String> },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl HarnessError {
    pub fn config(detail: String) -> Self {
        HarnessError::Config { details: vec![detail] }
    }

    /// Process exit code for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config { .. } => 2,
            HarnessError::Numerical(_) => 3,
            HarnessError::Io(_) => 4,
        }
    }
}

impl From<qpensieve_core::planner::PlannerError> for HarnessError {
    fn from(e: qpensieve_core::planner::PlannerError) -> Self {
        use qpensieve_core::planner::PlannerError as P;
        match e {
            P::EvaluationDiverged { .. }
            | P::OracleDiverged { .. }
            | P::IterationDiverged { .. } => HarnessError::Numerical(e.to_string()),
            other => HarnessError::config(other.to_string()),
        }
    }
}

impl From<qpensieve_core::agent::AgentError> for HarnessError {
    fn from(e: qpensieve_core::agent::AgentError) -> Self {
        use qpensieve_core::agent::AgentError as A;
        match &e {
            A::NonFinite { .. } => HarnessError::Numerical(e.to_string()),
            A::Neural(qpensieve_core::neural::NeuralError::NonFiniteGradient { .. }) => {
                HarnessError::Numerical(e.to_string())
            }
            A::Neural(qpensieve_core::neural::NeuralError::Io(_)) => {
                HarnessError::Io(std::io::Error::other(e.to_string()))
            }
            _ => HarnessError::config(e.to_string()),
        }
    }
}

impl From<qpensieve_core::neural::NeuralError> for HarnessError {
    fn from(e: qpensieve_core::neural::NeuralError) -> Self {
        use qpensieve_core::neural::NeuralError as N;
        match e {
            N::Io(io) => HarnessError::Io(io),
            N::NonFiniteGradient { .. } => HarnessError::Numerical(e.to_string()),
            other => HarnessError::config(other.to_string()),
        }
    }
}

impl From<qpensieve_core::metrics::MetricsError> for HarnessError {
    fn from(e: qpensieve_core::metrics::MetricsError) -> Self {
        HarnessError::config(e.to_string())
    }
}
