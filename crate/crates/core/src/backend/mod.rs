//! Text-completion backends.
//!
//! Every backend turns a [`CompletionRequest`] into raw generated text. The
//! HTTP backend talks to any JSON completion endpoint; the local ones
//! (oracle, corruption, fixed delay) close the loop in tests and evaluations
//! without a model.

mod http;
mod local;

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompt::{TokenBudget, TokenCounter};
use crate::state::PromptRecord;

pub use http::{HttpBackend, HttpSettings, JsonPath};
pub use local::{CorruptBackend, FnBackend, MockDelayBackend, OracleBackend, OracleMissPolicy};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("request timed out after {0:.1}s")]
    Timeout(f64),
    #[error("endpoint returned HTTP {code}: {body}")]
    HttpStatus { code: u16, body: String },
    #[error("environment variable {0} holding the API key is not set")]
    AuthMissing(String),
    #[error("response has no text at {0}")]
    MalformedResponse(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("oracle has no record for this prompt")]
    OracleMiss,
    #[error("invalid backend configuration: {0}")]
    Config(String),
}

impl BackendError {
    /// Transient failures worth another attempt.
    pub fn is_retriable(&self) -> bool {
        match self {
            BackendError::Timeout(_) | BackendError::Transport(_) => true,
            BackendError::HttpStatus { code, .. } => *code == 429 || *code >= 500,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub prompt: String,
    pub max_new_tokens: usize,
    #[serde(default)]
    pub stop_sequences: Vec<String>,
    #[serde(default)]
    pub temperature: f64,
}

impl CompletionRequest {
    pub fn new(prompt: impl Into<String>, max_new_tokens: usize) -> Self {
        Self {
            prompt: prompt.into(),
            max_new_tokens: max_new_tokens.max(1),
            stop_sequences: Vec::new(),
            temperature: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub text: String,
    pub latency: Duration,
}

/// Implementations must tolerate concurrent `complete` calls.
pub trait CompletionBackend: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<Completion, BackendError>;

    /// Local backends need no network to answer.
    fn is_local(&self) -> bool {
        true
    }

    fn health(&self) -> Result<(), BackendError> {
        Ok(())
    }
}

impl<T: CompletionBackend + ?Sized> CompletionBackend for std::sync::Arc<T> {
    fn complete(&self, request: &CompletionRequest) -> Result<Completion, BackendError> {
        (**self).complete(request)
    }

    fn is_local(&self) -> bool {
        (**self).is_local()
    }

    fn health(&self) -> Result<(), BackendError> {
        (**self).health()
    }
}

impl<T: CompletionBackend + ?Sized> CompletionBackend for Box<T> {
    fn complete(&self, request: &CompletionRequest) -> Result<Completion, BackendError> {
        (**self).complete(request)
    }

    fn is_local(&self) -> bool {
        (**self).is_local()
    }

    fn health(&self) -> Result<(), BackendError> {
        (**self).health()
    }
}

/// Cuts `text` at the earliest occurrence of any stop sequence.
pub fn truncate_at_stop<'a>(text: &'a str, stops: &[String]) -> &'a str {
    let cut = stops
        .iter()
        .filter(|s| !s.is_empty())
        .filter_map(|s| text.find(s.as_str()))
        .min()
        .unwrap_or(text.len());
    &text[..cut]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Http,
    Oracle,
    Corrupt,
    MockDelay,
}

/// The `[backend]` section of a config file. Secrets are referenced by
/// environment variable name only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub kind: BackendKind,
    #[serde(default, flatten)]
    pub http: HttpSettings,
    /// Dataset for oracle-derived backends; defaults to the records being
    /// evaluated.
    #[serde(default)]
    pub dataset: Option<std::path::PathBuf>,
    #[serde(default)]
    pub on_miss: OracleMissPolicy,
    #[serde(default)]
    pub drop_k: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub delay_ms: u64,
}

impl BackendConfig {
    pub fn local(kind: BackendKind) -> Self {
        Self {
            kind,
            http: HttpSettings::default(),
            dataset: None,
            on_miss: OracleMissPolicy::default(),
            drop_k: 0,
            seed: 0,
            delay_ms: 0,
        }
    }

    pub fn needs_records(&self) -> bool {
        match self.kind {
            BackendKind::Oracle | BackendKind::Corrupt => true,
            BackendKind::MockDelay => self.dataset.is_some(),
            BackendKind::Http => false,
        }
    }
}

/// Builds a backend. Oracle-derived kinds index `records`, rendering their
/// prompts with `budget` and `counter` so lookups match extraction-time
/// prompts.
pub fn build_backend(
    config: &BackendConfig,
    records: Option<&[PromptRecord]>,
    budget: &TokenBudget,
    counter: &dyn TokenCounter,
) -> Result<Box<dyn CompletionBackend>, BackendError> {
    let oracle = || -> Result<OracleBackend, BackendError> {
        let records = records.ok_or_else(|| {
            BackendError::Config(format!("{:?} backend needs a dataset", config.kind))
        })?;
        Ok(OracleBackend::from_records(records, budget, counter).with_miss_policy(config.on_miss))
    };
    Ok(match config.kind {
        BackendKind::Http => Box::new(HttpBackend::new(config.http.clone())?),
        BackendKind::Oracle => Box::new(oracle()?),
        BackendKind::Corrupt => Box::new(CorruptBackend::new(oracle()?, config.drop_k, config.seed)),
        BackendKind::MockDelay => {
            let inner: Option<Box<dyn CompletionBackend>> = if records.is_some() {
                Some(Box::new(oracle()?))
            } else {
                None
            };
            Box::new(MockDelayBackend::new(Duration::from_millis(config.delay_ms), inner))
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stop_sequences() {
        let stops = vec!["\n\n".to_string(), "###".to_string()];
        assert_eq!(truncate_at_stop("a\nb###c\n\nd", &stops), "a\nb");
        assert_eq!(truncate_at_stop("abc", &[]), "abc");
        assert_eq!(truncate_at_stop("abc", &[String::new()]), "abc");
    }

    #[test]
    fn retriable_classification() {
        assert!(BackendError::Timeout(1.0).is_retriable());
        assert!(BackendError::HttpStatus { code: 503, body: String::new() }.is_retriable());
        assert!(BackendError::HttpStatus { code: 429, body: String::new() }.is_retriable());
        assert!(!BackendError::HttpStatus { code: 400, body: String::new() }.is_retriable());
        assert!(!BackendError::AuthMissing("K".into()).is_retriable());
    }

    #[test]
    fn config_parses_from_toml_shape() {
        let cfg: BackendConfig = serde_json::from_value(serde_json::json!({
            "kind": "http",
            "endpoint": "http://localhost:8080/v1/completions",
            "auth_env": "MY_KEY",
            "response_path": "choices.0.text"
        }))
        .unwrap();
        assert_eq!(cfg.kind, BackendKind::Http);
        assert_eq!(cfg.http.auth_env.as_deref(), Some("MY_KEY"));
        assert_eq!(cfg.http.timeout_s, 30.0);
        assert_eq!(cfg.http.retries, 2);

        let oracle: BackendConfig = serde_json::from_value(serde_json::json!({"kind": "oracle"})).unwrap();
        assert!(oracle.needs_records());
        assert!(build_backend(&oracle, None, &TokenBudget::default(), &crate::prompt::WhitespaceCounter).is_err());
    }
}
