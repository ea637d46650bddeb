//! Command-line errors and their exit codes.

use serde::Serialize;
use slotfill_core::augment::AugmentError;
use slotfill_core::eval::EvalError;
use slotfill_core::parse::ExtractError;
use slotfill_core::sgd::IngestError;
use slotfill_core::state::StateError;
use slotfill_core::{BackendError, PromptError};
use thiserror::Error;

use crate::config::ConfigError;
use crate::session::SessionError;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_BACKEND: i32 = 3;

#[derive(Debug, Error)]
pub enum AppError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl AppError {
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Usage(_) => EXIT_USAGE,
            AppError::Backend(_) => EXIT_BACKEND,
            AppError::Data(_) | AppError::Config(_) | AppError::Io { .. } => EXIT_DATA,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            AppError::Usage(_) => "usage",
            AppError::Data(_) => "data",
            AppError::Config(_) => "config",
            AppError::Backend(_) => "backend",
            AppError::Io { .. } => "io",
        }
    }

    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Report<'a> {
            error: &'a str,
            message: String,
            exit_code: i32,
        }
        serde_json::to_string(&Report {
            error: self.kind(),
            message: self.to_string(),
            exit_code: self.exit_code(),
        })
        .expect("error report serializes")
    }

    pub fn io(path: impl std::fmt::Display, source: std::io::Error) -> Self {
        AppError::Io {
            path: path.to_string(),
            source,
        }
    }
}

macro_rules! data_error {
    ($($t:ty),*) => {$(
        impl From<$t> for AppError {
            fn from(e: $t) -> Self {
                AppError::Data(e.to_string())
            }
        }
    )*};
}

data_error!(IngestError, AugmentError, StateError, PromptError);

impl From<ExtractError> for AppError {
    fn from(e: ExtractError) -> Self {
        match e {
            ExtractError::Backend(b) => AppError::Backend(b),
            ExtractError::Prompt(p) => p.into(),
        }
    }
}

impl From<EvalError> for AppError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Record { source: ExtractError::Backend(b), .. } => AppError::Backend(b),
            other => AppError::Data(other.to_string()),
        }
    }
}

impl From<SessionError> for AppError {
    fn from(e: SessionError) -> Self {
        match e {
            SessionError::Backend(b) => AppError::Backend(b),
            other => AppError::Data(other.to_string()),
        }
    }
}
