use std::path::PathBuf;

use serde::Serialize;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot parse config: {0}")]
    Parse(String),

    #[error("missing required field `{0}`")]
    Missing(&'static str),

    #[error("subsonic regime required: |U| = {} must be < 1", .0.abs())]
    Subsonic(f64),

    #[error("invalid `{field}`: {reason}")]
    Invalid { field: &'static str, reason: String },

    #[error("grid conformity: {0}")]
    Conformity(String),
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),

    #[error("{0}")]
    Model(#[source] flowbeam_core::Error),

    #[error("solver failure: {0}")]
    Solver(#[source] flowbeam_core::Error),

    #[error("assertion failed: {0}")]
    Assertion(String),

    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl From<flowbeam_core::Error> for CliError {
    fn from(e: flowbeam_core::Error) -> Self {
        use flowbeam_core::Error as E;
        match e {
            E::Config(_) | E::Supersonic(_) | E::Shape { .. } | E::Usage(_) => CliError::Model(e),
            _ => CliError::Solver(e),
        }
    }
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }

    /// 2 for configuration, 3 for solver failures, 4 for failed assertions.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Model(_) | CliError::Io { .. } => 2,
            CliError::Solver(_) => 3,
            CliError::Assertion(_) => 4,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) | CliError::Model(_) => "config",
            CliError::Io { .. } => "io",
            CliError::Solver(_) => "solver",
            CliError::Assertion(_) => "assertion",
        }
    }

    pub fn record(&self) -> ErrorRecord {
        ErrorRecord { kind: self.kind(), exit_code: self.exit_code(), message: self.to_string() }
    }
}

/// Machine-readable form of a failure, written as `error.json`.
#[derive(Debug, Clone, Serialize)]
pub struct ErrorRecord {
    pub kind: &'static str,
    pub exit_code: u8,
    pub message: String,
}
