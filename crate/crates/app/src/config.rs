//! The configuration file: one TOML or JSON document whose sections are all
//! optional. Secrets are never stored here, only the names of environment
//! variables holding them.
//!
//! ```toml
//! [backend]
//! kind = "http"
//! endpoint = "http://localhost:8000/v1/completions"
//! auth_env = "SLOTFILL_API_KEY"
//!
//! [budget]
//! max_prompt_tokens = 1200
//! max_output_tokens = 270
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use slotfill_core::augment::PipelineConfig;
use slotfill_core::backend::{build_backend, BackendConfig};
use slotfill_core::eval::{AverageBy, ValueMatcher};
use slotfill_core::prompt::counter_by_name;
use slotfill_core::sgd::read_jsonl;
use slotfill_core::{CompletionBackend, NormalizeOptions, PromptRecord, TokenBudget, TokenCounter};
use thiserror::Error;

use crate::error::AppError;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CounterConfig {
    /// `whitespace`, `chars` or `plugin`.
    pub name: String,
    /// Shell command for the plugin counter.
    pub command: Option<String>,
}

impl Default for CounterConfig {
    fn default() -> Self {
        Self {
            name: "whitespace".into(),
            command: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub parallelism: usize,
    /// `exact`, `case-insensitive` or `fuzzy[:threshold]`.
    pub matcher: String,
    pub average_by: AverageBy,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            parallelism: 1,
            matcher: "exact".into(),
            average_by: AverageBy::Example,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub host: String,
    pub port: u16,
    /// Directory for the file-backed session store; in-memory when unset.
    pub store: Option<PathBuf>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            host: "127.0.0.1".into(),
            port: 8080,
            store: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub backend: Option<BackendConfig>,
    pub budget: TokenBudget,
    pub counter: CounterConfig,
    pub normalize: NormalizeOptions,
    pub augment: PipelineConfig,
    pub eval: EvalConfig,
    pub service: ServiceConfig,
}

impl AppConfig {
    /// Reads a `.json` file as JSON and anything else as TOML. Relative
    /// paths inside are resolved against the file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let parse_err = |message: String| ConfigError::Parse {
            path: path.to_path_buf(),
            message,
        };
        let mut config: AppConfig = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| parse_err(e.to_string()))?
        } else {
            toml::from_str(&text).map_err(|e| parse_err(e.to_string()))?
        };
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve_paths(base);
        config.validate()?;
        Ok(config)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(path) = p {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
            }
        };
        if let Some(b) = &mut self.backend {
            fix(&mut b.dataset);
        }
        fix(&mut self.augment.banks_dir);
        fix(&mut self.augment.lexicon_dir);
        fix(&mut self.service.store);
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        TokenBudget::new(self.budget.max_prompt_tokens, self.budget.max_output_tokens)
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.matcher()?;
        counter_by_name(&self.counter.name, self.counter.command.as_deref()).map_err(ConfigError::Invalid)?;
        Ok(())
    }

    pub fn matcher(&self) -> Result<ValueMatcher, ConfigError> {
        self.eval.matcher.parse().map_err(ConfigError::Invalid)
    }

    pub fn token_counter(&self) -> Result<Box<dyn TokenCounter>, ConfigError> {
        counter_by_name(&self.counter.name, self.counter.command.as_deref()).map_err(ConfigError::Invalid)
    }

    pub fn backend_config(&self) -> Result<&BackendConfig, ConfigError> {
        self.backend
            .as_ref()
            .ok_or_else(|| ConfigError::Invalid("the configuration has no [backend] section".into()))
    }

    /// Builds the configured backend. Oracle-style backends index the
    /// `dataset` named in the config, falling back to `records`.
    pub fn build_backend(
        &self,
        records: Option<&[PromptRecord]>,
        counter: &dyn TokenCounter,
    ) -> Result<Box<dyn CompletionBackend>, AppError> {
        let cfg = self.backend_config()?;
        let loaded;
        let records = match &cfg.dataset {
            Some(path) => {
                loaded = read_jsonl(path)?;
                Some(loaded.as_slice())
            }
            None => records,
        };
        if cfg.needs_records() && records.is_none() {
            return Err(ConfigError::Invalid(format!("{:?} backend needs `dataset` in [backend]", cfg.kind)).into());
        }
        Ok(build_backend(cfg, records, &self.budget, counter)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use slotfill_core::BackendKind;

    #[test]
    fn toml_sections() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.toml");
        std::fs::write(
            &path,
            r#"
[backend]
kind = "oracle"
dataset = "test.jsonl"

[budget]
max_prompt_tokens = 600

[eval]
parallelism = 4
matcher = "fuzzy:0.9"
"#,
        )
        .unwrap();
        let cfg = AppConfig::load(&path).unwrap();
        let backend = cfg.backend.as_ref().unwrap();
        assert_eq!(backend.kind, BackendKind::Oracle);
        assert_eq!(backend.dataset.as_deref(), Some(dir.path().join("test.jsonl").as_path()));
        assert_eq!(cfg.budget, TokenBudget::new(600, 270).unwrap());
        assert_eq!(cfg.eval.parallelism, 4);
        assert_eq!(cfg.matcher().unwrap(), ValueMatcher::Fuzzy(0.9));
    }

    #[test]
    fn unknown_section_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.toml");
        std::fs::write(&path, "[bakend]\nkind = \"oracle\"\n").unwrap();
        assert!(matches!(AppConfig::load(&path), Err(ConfigError::Parse { .. })));
    }

    #[test]
    fn json_config() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        std::fs::write(&path, r#"{"backend": {"kind": "mock_delay", "delay_ms": 10}}"#).unwrap();
        let cfg = AppConfig::load(&path).unwrap();
        assert_eq!(cfg.backend.unwrap().delay_ms, 10);
    }
}
