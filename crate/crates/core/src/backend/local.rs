use std::collections::HashMap;
use std::time::{Duration, Instant};

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{BackendError, Completion, CompletionBackend, CompletionRequest};
use crate::parse::scan_pairs;
use crate::prompt::{self, TokenBudget, TokenCounter};
use crate::state::{Fnv, PromptRecord};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OracleMissPolicy {
    /// Unknown prompts fail with [`BackendError::OracleMiss`].
    #[default]
    Error,
    /// Unknown prompts produce an empty generation.
    Empty,
}

/// Answers each known prompt with its record's gold output.
#[derive(Debug, Clone, Default)]
pub struct OracleBackend {
    answers: HashMap<String, String>,
    on_miss: OracleMissPolicy,
}

impl OracleBackend {
    /// Indexes records by the prompt `render_prompt` produces for them under
    /// `budget`/`counter`. Records whose prompt cannot be rendered are
    /// skipped; on duplicate prompts the first record wins.
    pub fn from_records(
        records: &[PromptRecord],
        budget: &TokenBudget,
        counter: &dyn TokenCounter,
    ) -> Self {
        let mut answers = HashMap::with_capacity(records.len());
        for rec in records {
            match prompt::render_prompt(&rec.library, &rec.conversation, budget, counter) {
                Ok(rendered) => {
                    answers
                        .entry(rendered.text)
                        .or_insert_with(|| rec.gold_output.clone());
                }
                Err(e) => log::warn!("oracle skips a record: {e}"),
            }
        }
        Self {
            answers,
            on_miss: OracleMissPolicy::Error,
        }
    }

    pub fn with_miss_policy(mut self, policy: OracleMissPolicy) -> Self {
        self.on_miss = policy;
        self
    }

    pub fn insert(&mut self, prompt: impl Into<String>, output: impl Into<String>) {
        self.answers.insert(prompt.into(), output.into());
    }

    pub fn len(&self) -> usize {
        self.answers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.answers.is_empty()
    }

    pub fn answer(&self, prompt: &str) -> Result<String, BackendError> {
        match (self.answers.get(prompt), self.on_miss) {
            (Some(out), _) => Ok(out.clone()),
            (None, OracleMissPolicy::Empty) => Ok(String::new()),
            (None, OracleMissPolicy::Error) => Err(BackendError::OracleMiss),
        }
    }
}

impl CompletionBackend for OracleBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<Completion, BackendError> {
        let start = Instant::now();
        let text = self.answer(&request.prompt)?;
        let text = super::truncate_at_stop(&text, &request.stop_sequences).to_string();
        Ok(Completion {
            text,
            latency: start.elapsed(),
        })
    }
}

/// Oracle that removes `min(drop_k, n)` of the `n` gold pairs, chosen by a
/// RNG seeded from `seed` and the prompt, then re-renders the rest.
#[derive(Debug, Clone)]
pub struct CorruptBackend {
    oracle: OracleBackend,
    drop_k: usize,
    seed: u64,
}

impl CorruptBackend {
    pub fn new(oracle: OracleBackend, drop_k: usize, seed: u64) -> Self {
        Self {
            oracle,
            drop_k,
            seed,
        }
    }

    pub fn corrupt(&self, prompt: &str, gold_output: &str) -> String {
        let pairs = scan_pairs(gold_output).pairs;
        let n = pairs.len();
        let k = self.drop_k.min(n);
        if k == 0 {
            return gold_output.to_string();
        }
        let mut h = Fnv::new();
        h.write_u64(self.seed);
        h.write(prompt.as_bytes());
        let mut rng = ChaCha8Rng::seed_from_u64(h.finish());
        let dropped: Vec<usize> = index::sample(&mut rng, n, k).into_vec();
        prompt::render_pairs(
            pairs
                .iter()
                .enumerate()
                .filter(|(i, _)| !dropped.contains(i))
                .map(|(_, (id, v))| (id, v.as_str())),
        )
    }
}

impl CompletionBackend for CorruptBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<Completion, BackendError> {
        let start = Instant::now();
        let gold = self.oracle.answer(&request.prompt)?;
        let text = self.corrupt(&request.prompt, &gold);
        Ok(Completion {
            text,
            latency: start.elapsed(),
        })
    }
}

/// Sleeps for a fixed delay, then answers from `inner` (or with empty text).
pub struct MockDelayBackend {
    delay: Duration,
    inner: Option<Box<dyn CompletionBackend>>,
}

impl MockDelayBackend {
    pub fn new(delay: Duration, inner: Option<Box<dyn CompletionBackend>>) -> Self {
        Self { delay, inner }
    }
}

impl CompletionBackend for MockDelayBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<Completion, BackendError> {
        let start = Instant::now();
        std::thread::sleep(self.delay);
        let text = match &self.inner {
            Some(inner) => inner.complete(request)?.text,
            None => String::new(),
        };
        Ok(Completion {
            text,
            latency: start.elapsed(),
        })
    }
}

/// Adapts a closure into a backend.
pub struct FnBackend<F>(pub F);

impl<F> CompletionBackend for FnBackend<F>
where
    F: Fn(&CompletionRequest) -> Result<String, BackendError> + Send + Sync,
{
    fn complete(&self, request: &CompletionRequest) -> Result<Completion, BackendError> {
        let start = Instant::now();
        let text = (self.0)(request)?;
        Ok(Completion {
            text,
            latency: start.elapsed(),
        })
    }
}
