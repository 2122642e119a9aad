use std::path::PathBuf;

use thiserror::Error;

use crate::{BlockId, NodeId};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("schedule invalid at step {step}: node {node} block {block}: {reason}")]
    ScheduleInvalid {
        step: usize,
        node: NodeId,
        block: BlockId,
        reason: String,
    },

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("no copy of model {0} exists in GPU, host memory, or SSD")]
    UnsatisfiableScaling(String),

    #[error("capacity exceeded: need {needed} bytes, have {available} (short by {deficit})")]
    Capacity {
        needed: u64,
        available: u64,
        deficit: u64,
    },

    #[error("input validation: {0}")]
    Validation(String),

    #[error("trace row {row}: {reason}")]
    TraceRow { row: usize, reason: String },

    #[error("incomplete event log: {0}")]
    IncompleteLog(String),

    #[error("config key `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            reason: reason.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
