//! Command implementations behind the `resgcnn` binary.

pub mod commands;
pub mod config;
pub mod selfcheck;

use std::path::PathBuf;

use thiserror::Error;

pub use config::RunConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    /// Input data that could not be read or does not make sense.
    #[error("{context}: {source}")]
    Data {
        context: String,
        #[source]
        source: resgcnn::Error,
    },

    #[error("{context}: {source}")]
    Core {
        context: String,
        #[source]
        source: resgcnn::Error,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("self-check failed")]
    SelfCheck,
}

impl CliError {
    pub fn data(context: impl Into<String>) -> impl FnOnce(resgcnn::Error) -> Self {
        let context = context.into();
        move |source| CliError::Data { context, source }
    }

    pub fn core(context: impl Into<String>) -> impl FnOnce(resgcnn::Error) -> Self {
        let context = context.into();
        move |source| CliError::Core { context, source }
    }

    /// 1 usage, 2 data, 3 numerical failure.
    pub fn exit_code(&self) -> i32 {
        use resgcnn::Error as E;
        let numerical = |e: &E| matches!(e, E::NonFinite(_) | E::Divergence { .. } | E::NoConvergence(_));
        match self {
            CliError::Usage(_) => 1,
            CliError::Data { source, .. } if numerical(source) => 3,
            CliError::Data { .. } | CliError::Io { .. } => 2,
            CliError::Core { source, .. } => match source {
                e if numerical(e) => 3,
                E::InvalidInput(_) => 1,
                _ => 2,
            },
            CliError::SelfCheck => 3,
        }
    }
}
