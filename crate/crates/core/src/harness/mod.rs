//! Run orchestration: configuration, warm-up, interleaved training,
//! evaluation, metrics, checkpoints and the finite-difference suite.

mod config;
mod eval;
mod gradcheck;
mod metrics;
mod run;

use std::path::{Path, PathBuf};

use crate::agent::AgentError;
use crate::envs::EnvError;
use crate::numkit::NumError;
use crate::repr::ReprError;

pub use config::{default_total, default_warmup, parse_config_text, read_config_file, RunConfig};
pub use eval::{evaluate, evaluate_policy, eval_seed, random_action, EvalResult};
pub use gradcheck::{gradcheck_suite, GradCheckLine, GRADCHECK_H, GRADCHECK_TOL};
pub use metrics::{binary_hash, git_blob_hash, CsvLog, MetricsRow, EVAL_HEADER, METRICS_HEADER};
pub use run::{episode_seed, Counters, Run, RunSummary};

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_IO: i32 = 4;
pub const EXIT_INTERNAL: i32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numeric fault: {0}")]
    NumericFault(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed file: {0}")]
    Format(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl HarnessError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => EXIT_CONFIG,
            Self::NumericFault(_) => EXIT_NUMERIC,
            Self::Io { .. } | Self::Format(_) => EXIT_IO,
            Self::Internal(_) => EXIT_INTERNAL,
        }
    }
}

impl From<NumError> for HarnessError {
    fn from(e: NumError) -> Self {
        match e {
            NumError::NumericFault(m) => Self::NumericFault(m),
            NumError::Config(m) => Self::Config(m),
            NumError::Format(m) => Self::Format(m),
            NumError::Io(source) => Self::Io {
                path: PathBuf::from("<checkpoint>"),
                source,
            },
            other => Self::Internal(other.to_string()),
        }
    }
}

impl From<ReprError> for HarnessError {
    fn from(e: ReprError) -> Self {
        match e {
            ReprError::Num(n) => n.into(),
            ReprError::Config(m) => Self::Config(m),
            other => Self::Internal(other.to_string()),
        }
    }
}

impl From<AgentError> for HarnessError {
    fn from(e: AgentError) -> Self {
        match e {
            AgentError::Num(n) => n.into(),
            AgentError::Repr(r) => r.into(),
            AgentError::Config(m) => Self::Config(m),
            other => Self::Internal(other.to_string()),
        }
    }
}

impl From<EnvError> for HarnessError {
    fn from(e: EnvError) -> Self {
        match e {
            EnvError::Config(m) => Self::Config(m),
            other => Self::Internal(other.to_string()),
        }
    }
}
