//! HTTP client against the in-repo stub server.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, OnceLock};
use std::time::Duration;

use serde_json::json;
use slotfill_core::backend::{HttpBackend, HttpSettings};
use slotfill_core::{BackendError, CompletionBackend, CompletionRequest};
use slotfill_fixtures::{StubResponse, StubServer};

struct Capture(Mutex<Vec<String>>);

impl log::Log for Capture {
    fn enabled(&self, _: &log::Metadata) -> bool {
        true
    }

    fn log(&self, record: &log::Record) {
        self.0.lock().unwrap().push(format!("{} {}", record.target(), record.args()));
    }

    fn flush(&self) {}
}

fn captured() -> &'static Capture {
    static LOGGER: OnceLock<&'static Capture> = OnceLock::new();
    LOGGER.get_or_init(|| {
        let logger: &'static Capture = Box::leak(Box::new(Capture(Mutex::new(Vec::new()))));
        log::set_logger(logger).unwrap();
        log::set_max_level(log::LevelFilter::Trace);
        logger
    })
}

fn settings(server: &StubServer) -> HttpSettings {
    HttpSettings {
        endpoint: Some(server.url("/v1/completions")),
        backoff_initial_s: 0.01,
        timeout_s: 5.0,
        ..Default::default()
    }
}

fn ok_body(text: &str) -> serde_json::Value {
    json!({"choices": [{"text": text}]})
}

#[test]
fn extracts_text_by_field_path() {
    let server = StubServer::fixed(StubResponse::json(200, ok_body("'Slot-1': 'x'")));
    let backend = HttpBackend::new(HttpSettings {
        body: json!({"model": "slot-model"}),
        ..settings(&server)
    })
    .unwrap();
    let out = backend.complete(&CompletionRequest::new("the prompt", 270)).unwrap();
    assert_eq!(out.text, "'Slot-1': 'x'");

    let reqs = server.requests();
    assert_eq!(reqs.len(), 1);
    assert_eq!(reqs[0].method, "POST");
    assert_eq!(reqs[0].path, "/v1/completions");
    assert_eq!(
        reqs[0].json(),
        json!({"model": "slot-model", "prompt": "the prompt", "max_tokens": 270, "temperature": 0.0})
    );
}

#[test]
fn nested_response_path() {
    let server = StubServer::fixed(StubResponse::json(200, json!({"results": [{"generated_text": "ok"}]})));
    let backend = HttpBackend::new(HttpSettings {
        prompt_path: "input".into(),
        max_tokens_path: Some("parameters.max_new_tokens".into()),
        temperature_path: None,
        response_path: "results.0.generated_text".into(),
        ..settings(&server)
    })
    .unwrap();
    assert_eq!(backend.complete(&CompletionRequest::new("p", 5)).unwrap().text, "ok");
    assert_eq!(server.requests()[0].json(), json!({"input": "p", "parameters": {"max_new_tokens": 5}}));
}

#[test]
fn stop_sequence_truncates() {
    let server = StubServer::fixed(StubResponse::json(200, ok_body("'Slot-1': 'x'\n\nextra")));
    let backend = HttpBackend::new(settings(&server)).unwrap();
    let mut req = CompletionRequest::new("p", 10);
    req.stop_sequences = vec!["\n\n".into()];
    assert_eq!(backend.complete(&req).unwrap().text, "'Slot-1': 'x'");
    assert_eq!(server.requests()[0].json()["stop"], json!(["\n\n"]));
}

#[test]
fn retries_transient_failures() {
    let calls = Arc::new(AtomicUsize::new(0));
    let c = Arc::clone(&calls);
    let server = StubServer::start(move |_| {
        if c.fetch_add(1, Ordering::SeqCst) < 2 {
            StubResponse::text(503, "busy")
        } else {
            StubResponse::json(200, ok_body("done"))
        }
    });
    let backend = HttpBackend::new(settings(&server)).unwrap();
    assert_eq!(backend.complete(&CompletionRequest::new("p", 1)).unwrap().text, "done");
    assert_eq!(calls.load(Ordering::SeqCst), 3);
}

#[test]
fn gives_up_after_retry_budget() {
    let server = StubServer::fixed(StubResponse::text(503, "still busy"));
    let backend = HttpBackend::new(HttpSettings { retries: 1, ..settings(&server) }).unwrap();
    let err = backend.complete(&CompletionRequest::new("p", 1)).unwrap_err();
    assert_eq!(err, BackendError::HttpStatus { code: 503, body: "still busy".into() });
    assert_eq!(server.requests().len(), 2);
}

#[test]
fn client_errors_are_not_retried() {
    let server = StubServer::fixed(StubResponse::text(400, "bad prompt"));
    let backend = HttpBackend::new(settings(&server)).unwrap();
    let err = backend.complete(&CompletionRequest::new("p", 1)).unwrap_err();
    assert_eq!(err, BackendError::HttpStatus { code: 400, body: "bad prompt".into() });
    assert_eq!(server.requests().len(), 1);
}

#[test]
fn sampling_requests_are_not_retried_by_default() {
    let server = StubServer::fixed(StubResponse::text(503, "busy"));
    let backend = HttpBackend::new(settings(&server)).unwrap();
    let mut req = CompletionRequest::new("p", 1);
    req.temperature = 0.7;
    assert!(backend.complete(&req).is_err());
    assert_eq!(server.requests().len(), 1);
}

#[test]
fn body_excerpt_is_bounded() {
    let server = StubServer::fixed(StubResponse::text(500, "e".repeat(5000)));
    let backend = HttpBackend::new(HttpSettings { retries: 0, ..settings(&server) }).unwrap();
    match backend.complete(&CompletionRequest::new("p", 1)).unwrap_err() {
        BackendError::HttpStatus { code, body } => {
            assert_eq!(code, 500);
            assert!(body.len() <= 300);
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn malformed_response_names_the_path() {
    let server = StubServer::fixed(StubResponse::json(200, json!({"choices": []})));
    let backend = HttpBackend::new(settings(&server)).unwrap();
    assert_eq!(
        backend.complete(&CompletionRequest::new("p", 1)).unwrap_err(),
        BackendError::MalformedResponse("choices.0.text".into())
    );

    let server = StubServer::fixed(StubResponse::text(200, "not json"));
    let backend = HttpBackend::new(settings(&server)).unwrap();
    assert!(matches!(backend.complete(&CompletionRequest::new("p", 1)), Err(BackendError::MalformedResponse(_))));
}

#[test]
fn slow_server_times_out() {
    let server = StubServer::fixed(StubResponse::json(200, ok_body("late")).delayed(Duration::from_millis(1500)));
    let backend = HttpBackend::new(HttpSettings {
        timeout_s: 0.2,
        retries: 0,
        ..settings(&server)
    })
    .unwrap();
    assert_eq!(backend.complete(&CompletionRequest::new("p", 1)).unwrap_err(), BackendError::Timeout(0.2));
}

#[test]
fn health_checks_reachability() {
    let server = StubServer::fixed(StubResponse::json(200, ok_body("")));
    assert!(HttpBackend::new(settings(&server)).unwrap().health().is_ok());
    assert!(!HttpBackend::new(settings(&server)).unwrap().is_local());

    let closed = {
        let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap().port()
    };
    let backend = HttpBackend::new(HttpSettings {
        endpoint: Some(format!("http://127.0.0.1:{closed}/x")),
        ..Default::default()
    })
    .unwrap();
    assert!(backend.health().is_err());
}

#[test]
fn secret_never_leaks_into_logs_or_errors() {
    let logs = captured();
    let secret = "sk-test-7f3a9c1e55d04b2a";
    std::env::set_var("SLOTFILL_STUB_KEY", secret);
    // The stub echoes the auth header back in an error body.
    let server = StubServer::start(|req| {
        StubResponse::text(503, format!("rejected credentials {}", req.header("authorization").unwrap_or("")))
    });
    let backend = HttpBackend::new(HttpSettings {
        auth_env: Some("SLOTFILL_STUB_KEY".into()),
        retries: 2,
        ..settings(&server)
    })
    .unwrap();
    let err = backend.complete(&CompletionRequest::new("p", 1)).unwrap_err();

    assert_eq!(server.requests()[0].header("authorization"), Some(format!("Bearer {secret}").as_str()));
    let shown = format!("{err} {err:?} {backend:?}");
    assert!(!shown.contains(secret), "{shown}");
    assert!(shown.contains("***"));
    let logs = logs.0.lock().unwrap();
    assert!(logs.iter().any(|l| l.contains("retrying")), "retry warnings are logged");
    for line in logs.iter() {
        assert!(!line.contains(secret), "log leaked the key: {line}");
    }
}
