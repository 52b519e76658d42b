//! Experiment runner for latent-time neural ODEs.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod report;
pub mod verify;

use std::fmt;

pub use commands::{attack, evaluate, posterior_report, train, RunContext};
pub use config::ExperimentConfig;
pub use report::emit_report;

/// Failure with a stable process exit code.
#[derive(Debug, Clone, PartialEq)]
pub enum CliError {
    /// Config rejected by the schema; `path` points at the offending field.
    Schema { path: String, message: String },
    /// Non-finite values, solver or quadrature failure.
    Numeric {
        module: String,
        iteration: Option<usize>,
        message: String,
    },
    Io(String),
    /// Report artifacts not found.
    Missing(Vec<String>),
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Schema { .. } => 2,
            CliError::Numeric { .. } => 3,
            CliError::Io(_) => 4,
            CliError::Missing(_) | CliError::Other(_) => 1,
        }
    }

    /// Attach the failing module to numeric errors.
    pub fn in_module(self, module: &str) -> Self {
        match self {
            CliError::Numeric { iteration, message, .. } => CliError::Numeric {
                module: module.to_string(),
                iteration,
                message,
            },
            other => other,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Schema { path, message } => write!(f, "config error at {path}: {message}"),
            CliError::Numeric {
                module,
                iteration,
                message,
            } => match iteration {
                Some(it) => write!(f, "numeric failure in {module} at iteration {it}: {message}"),
                None => write!(f, "numeric failure in {module}: {message}"),
            },
            CliError::Io(m) => write!(f, "i/o error: {m}"),
            CliError::Missing(m) => write!(f, "missing artifacts: {}", m.join(", ")),
            CliError::Other(m) => write!(f, "{m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<ltnode::Error> for CliError {
    fn from(e: ltnode::Error) -> Self {
        use ltnode::Error as E;
        let message = e.to_string();
        match e {
            E::Diverged { iteration, .. } => CliError::Numeric {
                module: "training".into(),
                iteration: Some(iteration),
                message,
            },
            E::NonFinite { op } => CliError::Numeric {
                module: op,
                iteration: None,
                message,
            },
            E::NonConvergence { .. } => CliError::Numeric {
                module: "ode".into(),
                iteration: None,
                message,
            },
            E::Quadrature { .. } => CliError::Numeric {
                module: "oracles".into(),
                iteration: None,
                message,
            },
            E::Io(m) => CliError::Io(m),
            _ => CliError::Other(message),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Other(e.to_string())
    }
}
