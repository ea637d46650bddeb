//! Helpers shared by the app integration tests.

#![allow(dead_code)]

use std::net::SocketAddr;
use std::sync::Arc;

use serde_json::Value;
use slotfill_app::service::{spawn, ServiceHandle};
use slotfill_app::session::{MemoryStore, SessionManager, SessionStore, TrackerContext};
use slotfill_core::backend::{FnBackend, OracleBackend, OracleMissPolicy};
use slotfill_core::sgd::read_jsonl;
use slotfill_core::{CompletionBackend, CompletionRequest, NormalizeOptions, PromptRecord, TokenBudget, WhitespaceCounter};

pub fn context(backend: impl CompletionBackend + 'static, budget: TokenBudget) -> TrackerContext {
    TrackerContext {
        backend: Arc::new(backend),
        budget,
        counter: Arc::new(WhitespaceCounter),
        normalize: NormalizeOptions::default(),
    }
}

pub fn start(ctx: TrackerContext) -> ServiceHandle {
    start_with_store(ctx, Box::new(MemoryStore::default()))
}

pub fn start_with_store(ctx: TrackerContext, store: Box<dyn SessionStore>) -> ServiceHandle {
    let manager = Arc::new(SessionManager::new(store, ctx));
    spawn(SocketAddr::from(([127, 0, 0, 1], 0)), manager).unwrap()
}

pub fn figure_record(name: &'static str) -> PromptRecord {
    let fig = slotfill_fixtures::figure(name);
    read_jsonl(&fig.jsonl).unwrap().remove(0)
}

/// Oracle over the given records that answers unknown prompts with nothing.
pub fn lenient_oracle(records: &[PromptRecord]) -> OracleBackend {
    OracleBackend::from_records(records, &TokenBudget::default(), &WhitespaceCounter).with_miss_policy(OracleMissPolicy::Empty)
}

/// Answers `set N to VALUE` user lines with `'Slot-N': 'VALUE'`, later lines winning.
pub fn setter_backend() -> impl CompletionBackend {
    FnBackend(|req: &CompletionRequest| {
        let conv = req.prompt.split("<conversation>\n").nth(1).unwrap_or("");
        let mut values = std::collections::BTreeMap::new();
        for line in conv.lines() {
            let Some(rest) = line.strip_prefix("[USER] set ") else { continue };
            if let Some((n, v)) = rest.split_once(" to ") {
                values.insert(n.parse::<u32>().unwrap(), v.to_string());
            }
        }
        Ok(values.iter().map(|(n, v)| format!("'Slot-{n}': '{v}'")).collect::<Vec<_>>().join(",\n"))
    })
}

pub fn setter_library(n: u32) -> Value {
    Value::Array(
        (1..=n)
            .map(|i| serde_json::json!({"id": format!("Slot-{i}"), "description": format!("field {i}")}))
            .collect(),
    )
}

pub struct Client {
    agent: ureq::Agent,
    base: String,
}

impl Client {
    pub fn new(handle: &ServiceHandle) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder().http_status_as_error(false).build().into();
        Self {
            agent,
            base: handle.url(""),
        }
    }

    fn finish(resp: Result<ureq::http::Response<ureq::Body>, ureq::Error>) -> (u16, Value) {
        let mut resp = resp.unwrap();
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().unwrap();
        let body = if text.is_empty() { Value::Null } else { serde_json::from_str(&text).unwrap() };
        (status, body)
    }

    pub fn post(&self, path: &str, body: &Value) -> (u16, Value) {
        Self::finish(self.agent.post(format!("{}{path}", self.base)).send_json(body))
    }

    pub fn post_raw(&self, path: &str, body: &str) -> (u16, Value) {
        Self::finish(
            self.agent
                .post(format!("{}{path}", self.base))
                .header("content-type", "application/json")
                .send(body),
        )
    }

    pub fn get(&self, path: &str) -> (u16, Value) {
        Self::finish(self.agent.get(format!("{}{path}", self.base)).call())
    }

    pub fn delete(&self, path: &str) -> (u16, Value) {
        Self::finish(self.agent.delete(format!("{}{path}", self.base)).call())
    }

    pub fn create_session(&self, library: &Value) -> String {
        let (status, body) = self.post("/v1/sessions", &serde_json::json!({"library": library}));
        assert_eq!(status, 201, "{body}");
        body["session_id"].as_str().unwrap().to_string()
    }
}

/// JSON payload for `/v1/extract` built from a record.
pub fn extract_payload(record: &PromptRecord) -> Value {
    serde_json::json!({
        "library": record.library,
        "conversation": record.conversation,
    })
}
