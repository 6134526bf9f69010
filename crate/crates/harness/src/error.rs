//! Harness error type, mapped onto process exit codes by the CLI.

use thiserror::Error;

#[derive(Error, Debug)]
pub enum HarnessError {
    /// Schema or semantic problem in a config file; the message names the
    /// offending field.
    #[error("config error: {0}")]
    Config(String),

    /// Estimated work exceeds the configured site-step budget.
    #[error("resource cap exceeded: estimated {estimated} site-steps > cap {cap}")]
    ResourceCap { estimated: u64, cap: u64 },

    #[error(transparent)]
    Model(#[from] rwre_core::ModelError),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

impl HarnessError {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;
