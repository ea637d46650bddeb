//! Generic JSON-over-HTTP completion client.
//!
//! Request and response shapes are described by dotted field paths
//! (`choices.0.text`, `messages.0.content`, ...) applied to a JSON body
//! template, so one client covers OpenAI-style, PaLM-style and local
//! inference servers.

use std::net::{TcpStream, ToSocketAddrs};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{BackendError, Completion, CompletionBackend, CompletionRequest};

const BODY_EXCERPT_CHARS: usize = 300;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpSettings {
    pub endpoint: Option<String>,
    /// Name of the environment variable holding the API key.
    pub auth_env: Option<String>,
    pub auth_header: String,
    /// Prefix put before the key in the auth header; empty for a bare key.
    pub auth_scheme: String,
    pub timeout_s: f64,
    pub retries: u32,
    pub backoff_initial_s: f64,
    pub backoff_factor: f64,
    /// Sampling requests are not idempotent, so they are only retried when
    /// this is set.
    pub retry_nonzero_temperature: bool,
    /// Static request body the per-call fields are written into.
    pub body: Value,
    pub prompt_path: String,
    pub max_tokens_path: Option<String>,
    pub temperature_path: Option<String>,
    pub stop_path: Option<String>,
    pub response_path: String,
}

impl Default for HttpSettings {
    fn default() -> Self {
        Self {
            endpoint: None,
            auth_env: None,
            auth_header: "Authorization".into(),
            auth_scheme: "Bearer".into(),
            timeout_s: 30.0,
            retries: 2,
            backoff_initial_s: 0.5,
            backoff_factor: 2.0,
            retry_nonzero_temperature: false,
            body: Value::Object(Default::default()),
            prompt_path: "prompt".into(),
            max_tokens_path: Some("max_tokens".into()),
            temperature_path: Some("temperature".into()),
            stop_path: Some("stop".into()),
            response_path: "choices.0.text".into(),
        }
    }
}

/// A dotted path into a JSON document; numeric segments index arrays.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JsonPath {
    raw: String,
    segments: Vec<Segment>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Key(String),
    Index(usize),
}

impl JsonPath {
    pub fn parse(raw: &str) -> Result<Self, BackendError> {
        if raw.trim().is_empty() {
            return Err(BackendError::Config("empty JSON path".into()));
        }
        let segments = raw
            .split('.')
            .map(|s| {
                if s.is_empty() {
                    Err(BackendError::Config(format!("empty segment in path {raw:?}")))
                } else if let Ok(i) = s.parse::<usize>() {
                    Ok(Segment::Index(i))
                } else {
                    Ok(Segment::Key(s.to_string()))
                }
            })
            .collect::<Result<_, _>>()?;
        Ok(Self {
            raw: raw.to_string(),
            segments,
        })
    }

    pub fn get<'a>(&self, value: &'a Value) -> Option<&'a Value> {
        self.segments.iter().try_fold(value, |v, seg| match seg {
            Segment::Key(k) => v.get(k),
            Segment::Index(i) => v.get(*i),
        })
    }

    /// Writes `new` at the path, creating objects (and appending to arrays
    /// at exactly their length) along the way.
    pub fn set(&self, root: &mut Value, new: Value) -> Result<(), BackendError> {
        let mut cur = root;
        for (i, seg) in self.segments.iter().enumerate() {
            let last = i + 1 == self.segments.len();
            let next_is_index = matches!(self.segments.get(i + 1), Some(Segment::Index(_)));
            let fresh = || if next_is_index { Value::Array(vec![]) } else { Value::Object(Default::default()) };
            cur = match seg {
                Segment::Key(k) => {
                    if cur.is_null() {
                        *cur = Value::Object(Default::default());
                    }
                    let obj = cur.as_object_mut().ok_or_else(|| self.bad("expected an object"))?;
                    if last {
                        obj.insert(k.clone(), new);
                        return Ok(());
                    }
                    obj.entry(k.clone()).or_insert_with(fresh)
                }
                Segment::Index(idx) => {
                    if cur.is_null() {
                        *cur = Value::Array(vec![]);
                    }
                    let arr = cur.as_array_mut().ok_or_else(|| self.bad("expected an array"))?;
                    if *idx == arr.len() {
                        arr.push(fresh());
                    }
                    let slot = arr.get_mut(*idx).ok_or_else(|| self.bad("array index out of range"))?;
                    if last {
                        *slot = new;
                        return Ok(());
                    }
                    slot
                }
            };
        }
        Ok(())
    }

    fn bad(&self, why: &str) -> BackendError {
        BackendError::Config(format!("cannot write path {}: {why}", self.raw))
    }

    pub fn as_str(&self) -> &str {
        &self.raw
    }
}

pub struct HttpBackend {
    settings: HttpSettings,
    endpoint: String,
    agent: ureq::Agent,
    prompt_path: JsonPath,
    max_tokens_path: Option<JsonPath>,
    temperature_path: Option<JsonPath>,
    stop_path: Option<JsonPath>,
    response_path: JsonPath,
}

impl std::fmt::Debug for HttpBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpBackend")
            .field("endpoint", &self.endpoint)
            .finish_non_exhaustive()
    }
}

impl HttpBackend {
    pub fn new(settings: HttpSettings) -> Result<Self, BackendError> {
        let endpoint = settings
            .endpoint
            .clone()
            .ok_or_else(|| BackendError::Config("http backend requires an endpoint".into()))?;
        if settings.timeout_s <= 0.0 || !settings.timeout_s.is_finite() {
            return Err(BackendError::Config("timeout_s must be positive".into()));
        }
        let opt_path = |p: &Option<String>| p.as_deref().map(JsonPath::parse).transpose();
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(settings.timeout_s)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self {
            prompt_path: JsonPath::parse(&settings.prompt_path)?,
            max_tokens_path: opt_path(&settings.max_tokens_path)?,
            temperature_path: opt_path(&settings.temperature_path)?,
            stop_path: opt_path(&settings.stop_path)?,
            response_path: JsonPath::parse(&settings.response_path)?,
            endpoint,
            agent,
            settings,
        })
    }

    fn api_key(&self) -> Result<Option<String>, BackendError> {
        match &self.settings.auth_env {
            None => Ok(None),
            Some(var) => std::env::var(var)
                .ok()
                .filter(|k| !k.is_empty())
                .map(Some)
                .ok_or_else(|| BackendError::AuthMissing(var.clone())),
        }
    }

    pub fn request_body(&self, request: &CompletionRequest) -> Result<Value, BackendError> {
        let mut body = self.settings.body.clone();
        self.prompt_path.set(&mut body, Value::from(request.prompt.clone()))?;
        if let Some(p) = &self.max_tokens_path {
            p.set(&mut body, Value::from(request.max_new_tokens))?;
        }
        if let Some(p) = &self.temperature_path {
            p.set(&mut body, Value::from(request.temperature))?;
        }
        if let (Some(p), false) = (&self.stop_path, request.stop_sequences.is_empty()) {
            p.set(&mut body, Value::from(request.stop_sequences.clone()))?;
        }
        Ok(body)
    }

    fn send_once(&self, body: &Value, key: Option<&str>) -> Result<String, BackendError> {
        let mut req = self.agent.post(&self.endpoint);
        if let Some(key) = key {
            let value = if self.settings.auth_scheme.is_empty() {
                key.to_string()
            } else {
                format!("{} {}", self.settings.auth_scheme, key)
            };
            req = req.header(self.settings.auth_header.as_str(), value.as_str());
        }
        let scrub = |s: String| match key {
            Some(k) => s.replace(k, "***"),
            None => s,
        };
        let mut resp = req.send_json(body).map_err(|e| match e {
            ureq::Error::Timeout(_) => BackendError::Timeout(self.settings.timeout_s),
            other => BackendError::Transport(scrub(other.to_string())),
        })?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(|e| match e {
            ureq::Error::Timeout(_) => BackendError::Timeout(self.settings.timeout_s),
            other => BackendError::Transport(scrub(other.to_string())),
        })?;
        if !(200..300).contains(&status) {
            let excerpt: String = text.chars().take(BODY_EXCERPT_CHARS).collect();
            return Err(BackendError::HttpStatus {
                code: status,
                body: scrub(excerpt),
            });
        }
        let json: Value = serde_json::from_str(&text)
            .map_err(|_| BackendError::MalformedResponse(self.response_path.as_str().to_string()))?;
        self.response_path
            .get(&json)
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| BackendError::MalformedResponse(self.response_path.as_str().to_string()))
    }
}

impl CompletionBackend for HttpBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<Completion, BackendError> {
        let key = self.api_key()?;
        let body = self.request_body(request)?;
        let idempotent = request.temperature == 0.0 || self.settings.retry_nonzero_temperature;
        let attempts = if idempotent { self.settings.retries + 1 } else { 1 };
        let mut delay = Duration::from_secs_f64(self.settings.backoff_initial_s.max(0.0));

        let start = Instant::now();
        let mut attempt = 0;
        let text = loop {
            attempt += 1;
            log::debug!("POST {} (attempt {attempt}/{attempts})", self.endpoint);
            match self.send_once(&body, key.as_deref()) {
                Ok(text) => break text,
                Err(e) if e.is_retriable() && attempt < attempts => {
                    log::warn!("completion attempt {attempt} failed: {e}; retrying in {delay:?}");
                    std::thread::sleep(delay);
                    delay = delay.mul_f64(self.settings.backoff_factor.max(1.0));
                }
                Err(e) => return Err(e),
            }
        };
        let latency = start.elapsed();
        Ok(Completion {
            text: super::truncate_at_stop(&text, &request.stop_sequences).to_string(),
            latency,
        })
    }

    fn is_local(&self) -> bool {
        false
    }

    /// Reachability: a TCP connection to the endpoint's host and port.
    fn health(&self) -> Result<(), BackendError> {
        let uri: ureq::http::Uri = self
            .endpoint
            .parse()
            .map_err(|e| BackendError::Config(format!("bad endpoint: {e}")))?;
        let host = uri
            .host()
            .ok_or_else(|| BackendError::Config("endpoint has no host".into()))?;
        let port = uri.port_u16().unwrap_or(match uri.scheme_str() {
            Some("https") => 443,
            _ => 80,
        });
        let timeout = Duration::from_secs_f64(self.settings.timeout_s.min(5.0));
        let addrs = (host, port)
            .to_socket_addrs()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let mut last = BackendError::Transport(format!("{host}:{port} did not resolve"));
        for addr in addrs {
            match TcpStream::connect_timeout(&addr, timeout) {
                Ok(_) => return Ok(()),
                Err(e) => last = BackendError::Transport(e.to_string()),
            }
        }
        Err(last)
    }
}
