use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by the file formats, the study harness and the command line.
#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Model(#[from] jointcox_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Validation(String),
    #[error("fit did not converge: {0}")]
    NotConverged(String),
}

pub type Result<T> = std::result::Result<T, CliError>;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const VALIDATION: i32 = 2;
    pub const NON_CONVERGENCE: i32 = 3;
    pub const IO: i32 = 4;
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        use jointcox_core::Error as E;
        match self {
            CliError::Io { .. } => exit::IO,
            CliError::Csv { source, .. } if source.is_io_error() => exit::IO,
            CliError::Json { source, .. } if source.is_io() => exit::IO,
            CliError::Json { .. } | CliError::Csv { .. } => exit::VALIDATION,
            CliError::Usage(_) | CliError::Validation(_) => exit::VALIDATION,
            CliError::NotConverged(_) => exit::NON_CONVERGENCE,
            CliError::Model(e) => match e {
                E::ModeSearch { .. }
                | E::NonFinite { .. }
                | E::DegenerateRiskSet { .. }
                | E::EmptyRiskSet { .. }
                | E::AscentFailure { .. }
                | E::SingularOperator { .. }
                | E::NonPositiveVariance(_) => exit::NON_CONVERGENCE,
                _ => exit::VALIDATION,
            },
        }
    }
}
