//! Simulation harness around `byzsgd-core`: TOML configs, CSV/JSON outputs,
//! experiment drivers and the `byzsgd` command line.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod diagnostics;
pub mod experiments;
pub mod io;
pub mod stats;

/// Failures surfaced by the harness, split by exit code.
#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("config error: {0}")]
    Config(String),
    #[error("runtime failure: {0}")]
    Runtime(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl SimError {
    pub fn config(msg: impl Into<String>) -> Self {
        Self::Config(msg.into())
    }

    pub fn runtime(msg: impl Into<String>) -> Self {
        Self::Runtime(msg.into())
    }

    pub fn from_config(e: byzsgd_core::Error) -> Self {
        Self::Config(e.to_string())
    }

    /// 1 for configuration problems, 2 for everything that fails while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 1,
            _ => 2,
        }
    }
}

impl From<byzsgd_core::Error> for SimError {
    fn from(e: byzsgd_core::Error) -> Self {
        Self::Runtime(e.to_string())
    }
}
