//! Configuration-driven experiment runner for the `jumptime` toolkit.

// `!(x > 0.0)` deliberately rejects NaN along with non-positive values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod output;

use thiserror::Error;

pub use config::{ConfigError, ExperimentConfig, RawConfig};

/// Process exit statuses.
pub mod exit {
    pub const OK: i32 = 0;
    pub const IO: i32 = 1;
    pub const CONFIG: i32 = 2;
    pub const DEGENERATE: i32 = 3;
    pub const ASSERTION: i32 = 4;
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("config error: {0}")]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Model(#[from] jumptime::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        use jumptime::Error as E;
        match self {
            RunError::Config(_) => exit::CONFIG,
            RunError::Io(_) => exit::IO,
            RunError::Model(E::Domain(_) | E::UnknownModel(_) | E::Unsupported(_)) => exit::CONFIG,
            RunError::Model(_) => exit::DEGENERATE,
        }
    }
}
