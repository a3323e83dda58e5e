//! Transport behavior against a scripted in-process HTTP server: retry
//! classification, backoff exhaustion, credential handling, and the
//! promise that credential values never reach any artifact.

use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use nerval::eval::RepairMode;
use nerval::prompt::{fingerprint, Granularity, Prompt};
use nerval_cli::config::RunConfig;
use nerval_cli::provider::{HttpProvider, ModelConfig, ProviderMode, TransportStatus};
use nerval_cli::runner::run_extract;

struct Scripted {
    status: u16,
    body: String,
    /// Delay before answering; lets a test trigger the client timeout.
    delay: Duration,
}

impl Scripted {
    fn ok(body: &str) -> Self {
        Scripted { status: 200, body: body.to_string(), delay: Duration::ZERO }
    }

    fn status(status: u16) -> Self {
        Scripted { status, body: "{}".to_string(), delay: Duration::ZERO }
    }
}

fn chat_body(content: &str) -> String {
    serde_json::json!({"choices": [{"message": {"content": content}}]}).to_string()
}

#[derive(Debug)]
struct Captured {
    authorization: Option<String>,
    body: String,
}

/// Serves the scripted responses in order, one per connection, recording
/// each request. The endpoint string is ready for `ModelConfig`.
fn serve(responses: Vec<Scripted>) -> (String, Arc<Mutex<Vec<Captured>>>, JoinHandle<()>) {
    let listener = TcpListener::bind("127.0.0.1:0").expect("bind test server");
    let addr = listener.local_addr().expect("server address");
    let captured = Arc::new(Mutex::new(Vec::new()));
    let sink = Arc::clone(&captured);
    let handle = std::thread::spawn(move || {
        for script in responses {
            let Ok((mut stream, _)) = listener.accept() else { return };
            stream.set_read_timeout(Some(Duration::from_secs(10))).ok();
            let request = read_request(&mut stream);
            sink.lock().expect("capture lock").push(request);
            std::thread::sleep(script.delay);
            let reply = format!(
                "HTTP/1.1 {} Scripted\r\ncontent-type: application/json\r\n\
                 content-length: {}\r\nconnection: close\r\n\r\n{}",
                script.status,
                script.body.len(),
                script.body
            );
            let _ = stream.write_all(reply.as_bytes());
            let _ = stream.flush();
        }
    });
    (format!("http://{addr}"), captured, handle)
}

fn read_request(stream: &mut TcpStream) -> Captured {
    let mut raw = Vec::new();
    let mut chunk = [0u8; 1024];
    let header_end = loop {
        let n = stream.read(&mut chunk).expect("read request");
        assert!(n > 0, "client closed mid-request");
        raw.extend_from_slice(&chunk[..n]);
        if let Some(pos) = raw.windows(4).position(|w| w == b"\r\n\r\n") {
            break pos + 4;
        }
    };
    let head = String::from_utf8_lossy(&raw[..header_end]).to_string();
    let mut authorization = None;
    let mut content_length = 0usize;
    for line in head.lines().skip(1) {
        let Some((name, value)) = line.split_once(':') else { continue };
        match name.to_ascii_lowercase().as_str() {
            "authorization" => authorization = Some(value.trim().to_string()),
            "content-length" => content_length = value.trim().parse().unwrap_or(0),
            _ => {}
        }
    }
    while raw.len() < header_end + content_length {
        let n = stream.read(&mut chunk).expect("read request body");
        assert!(n > 0, "client closed mid-body");
        raw.extend_from_slice(&chunk[..n]);
    }
    let body = String::from_utf8_lossy(&raw[header_end..header_end + content_length]).to_string();
    Captured { authorization, body }
}

fn test_prompt() -> Prompt {
    Prompt {
        system_text: "system".to_string(),
        user_text: "user".to_string(),
        granularity: Granularity::SpanLevel,
        exemplar_ids: vec!["e".to_string()],
        fingerprint: fingerprint("system", "user"),
    }
}

fn model_config(endpoint: &str, max_retries: u32) -> ModelConfig {
    ModelConfig {
        endpoint_url: endpoint.to_string(),
        model_name: "test-model".to_string(),
        temperature: 0.25,
        max_output_units: Some(512),
        timeout_secs: 5,
        max_retries,
        backoff_ms: 1,
        credential_ref: None,
        requests_per_minute: None,
    }
}

#[test]
fn rate_limit_then_success_is_reported_as_one_retry() {
    let (endpoint, requests, server) =
        serve(vec![Scripted::status(429), Scripted::ok(&chat_body("[]"))]);
    let provider = HttpProvider::new(model_config(&endpoint, 2)).unwrap();
    let response = provider.complete(&test_prompt());
    server.join().unwrap();

    assert_eq!(response.transport_status, TransportStatus::Retried(1));
    assert_eq!(response.text.as_deref(), Some("[]"));
    assert_eq!(requests.lock().unwrap().len(), 2);
}

#[test]
fn persistent_server_errors_exhaust_the_retry_budget() {
    let (endpoint, requests, server) = serve(vec![
        Scripted::status(500),
        Scripted::status(500),
        Scripted::status(500),
    ]);
    let provider = HttpProvider::new(model_config(&endpoint, 2)).unwrap();
    let response = provider.complete(&test_prompt());
    server.join().unwrap();

    assert_eq!(requests.lock().unwrap().len(), 3);
    assert!(response.text.is_none());
    let TransportStatus::Failed(reason) = &response.transport_status else {
        panic!("expected failure, got {:?}", response.transport_status);
    };
    assert!(reason.contains("retries exhausted after 3 attempt(s)"), "got: {reason}");
    assert!(reason.contains("HTTP 500"), "got: {reason}");
}

#[test]
fn zero_retries_means_exactly_one_attempt() {
    let (endpoint, requests, server) = serve(vec![Scripted::status(500)]);
    let provider = HttpProvider::new(model_config(&endpoint, 0)).unwrap();
    let response = provider.complete(&test_prompt());
    server.join().unwrap();

    assert_eq!(requests.lock().unwrap().len(), 1);
    let TransportStatus::Failed(reason) = &response.transport_status else {
        panic!("expected failure");
    };
    assert!(reason.contains("after 1 attempt(s)"), "got: {reason}");
}

#[test]
fn client_errors_other_than_rate_limits_fail_without_retry() {
    let (endpoint, requests, server) = serve(vec![Scripted::status(400)]);
    let provider = HttpProvider::new(model_config(&endpoint, 3)).unwrap();
    let response = provider.complete(&test_prompt());
    server.join().unwrap();

    assert_eq!(requests.lock().unwrap().len(), 1, "a 400 must not be retried");
    let TransportStatus::Failed(reason) = &response.transport_status else {
        panic!("expected failure");
    };
    assert!(reason.contains("HTTP 400"), "got: {reason}");
}

#[test]
fn malformed_success_payload_fails_without_retry() {
    let (endpoint, requests, server) =
        serve(vec![Scripted::ok(r#"{"choices": []}"#)]);
    let provider = HttpProvider::new(model_config(&endpoint, 3)).unwrap();
    let response = provider.complete(&test_prompt());
    server.join().unwrap();

    assert_eq!(requests.lock().unwrap().len(), 1);
    let TransportStatus::Failed(reason) = &response.transport_status else {
        panic!("expected failure");
    };
    assert!(reason.contains("malformed transport payload"), "got: {reason}");
}

#[test]
fn timeouts_are_retried() {
    let slow = |status| Scripted {
        status,
        body: "{}".to_string(),
        delay: Duration::from_secs(3),
    };
    let (endpoint, _requests, _server) = serve(vec![slow(200), slow(200)]);
    let mut config = model_config(&endpoint, 1);
    config.timeout_secs = 1;
    let provider = HttpProvider::new(config).unwrap();
    let response = provider.complete(&test_prompt());

    // Two attempts prove the timeout was classified as retryable.
    let TransportStatus::Failed(reason) = &response.transport_status else {
        panic!("expected failure");
    };
    assert!(reason.contains("after 2 attempt(s)"), "got: {reason}");
}

#[test]
fn connection_refused_is_retried_until_the_budget_runs_out() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let endpoint = format!("http://{}", listener.local_addr().unwrap());
    drop(listener);

    let provider = HttpProvider::new(model_config(&endpoint, 1)).unwrap();
    let response = provider.complete(&test_prompt());
    let TransportStatus::Failed(reason) = &response.transport_status else {
        panic!("expected failure");
    };
    assert!(reason.contains("retries exhausted after 2 attempt(s)"), "got: {reason}");
}

#[test]
fn request_carries_model_messages_temperature_and_output_cap() {
    let (endpoint, requests, server) = serve(vec![Scripted::ok(&chat_body("hi"))]);
    let provider = HttpProvider::new(model_config(&endpoint, 0)).unwrap();
    let response = provider.complete(&test_prompt());
    server.join().unwrap();

    assert_eq!(response.transport_status, TransportStatus::Ok);
    assert_eq!(response.text.as_deref(), Some("hi"));
    let requests = requests.lock().unwrap();
    let body: serde_json::Value = serde_json::from_str(&requests[0].body).unwrap();
    assert_eq!(body["model"], "test-model");
    assert_eq!(body["messages"][0]["role"], "system");
    assert_eq!(body["messages"][0]["content"], "system");
    assert_eq!(body["messages"][1]["role"], "user");
    assert_eq!(body["messages"][1]["content"], "user");
    assert_eq!(body["temperature"], 0.25);
    assert_eq!(body["max_tokens"], 512);
    assert!(requests[0].authorization.is_none(), "no credential was configured");
}

#[test]
fn credential_is_read_from_the_environment_and_sent_as_bearer() {
    let var = "NERVAL_TEST_BEARER_CRED";
    std::env::set_var(var, "sekret-bearer-value");
    let (endpoint, requests, server) = serve(vec![Scripted::ok(&chat_body("ok"))]);
    let mut config = model_config(&endpoint, 0);
    config.credential_ref = Some(var.to_string());
    let provider = HttpProvider::new(config).unwrap();
    let response = provider.complete(&test_prompt());
    server.join().unwrap();

    assert_eq!(response.transport_status, TransportStatus::Ok);
    let requests = requests.lock().unwrap();
    assert_eq!(
        requests[0].authorization.as_deref(),
        Some("Bearer sekret-bearer-value")
    );
}

#[test]
fn missing_credential_variable_fails_before_any_request() {
    let mut config = model_config("http://127.0.0.1:1", 0);
    config.credential_ref = Some("NERVAL_TEST_UNSET_CRED_VAR".to_string());
    let err = match HttpProvider::new(config) {
        Ok(_) => panic!("construction should fail without the credential"),
        Err(err) => err,
    };
    assert!(err.to_string().contains("NERVAL_TEST_UNSET_CRED_VAR"));
}

fn fixture_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures/replay")
        .join(name)
}

fn scan_files(dir: &Path, needle: &str, hits: &mut Vec<PathBuf>) {
    for entry in std::fs::read_dir(dir).expect("read output dir") {
        let path = entry.expect("dir entry").path();
        if path.is_dir() {
            scan_files(&path, needle, hits);
        } else if std::fs::read_to_string(&path).is_ok_and(|s| s.contains(needle)) {
            hits.push(path);
        }
    }
}

#[test]
fn live_run_artifacts_never_contain_the_credential_value() {
    let var = "NERVAL_TEST_LIVE_CRED";
    let secret = "sekret-artifact-value";
    std::env::set_var(var, secret);

    // 5 target documents, one scripted empty-payload answer each.
    let scripts = (0..5).map(|_| Scripted::ok(&chat_body("[]"))).collect();
    let (endpoint, requests, server) = serve(scripts);

    let out = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        corpus_path: fixture_path("corpus.jsonl"),
        labels_path: Some(fixture_path("labels.json")),
        template_dir: None,
        granularity: Granularity::SpanLevel,
        exemplar_id: None,
        context_budget: None,
        chars_per_unit: 4.0,
        model: ModelConfig {
            endpoint_url: endpoint,
            model_name: "live-test".to_string(),
            temperature: 0.0,
            max_output_units: None,
            timeout_secs: 5,
            max_retries: 0,
            backoff_ms: 1,
            credential_ref: Some(var.to_string()),
            requests_per_minute: None,
        },
        provider_mode: ProviderMode::Live,
        fixture_dir: None,
        output_dir: out.path().to_path_buf(),
        concurrency: 1,
        repair_mode: RepairMode::WithRegrounded,
        echo_threshold: 0.5,
        include_outside: false,
    };
    let summary = run_extract(&cfg).unwrap();
    server.join().unwrap();

    assert_eq!(summary.succeeded, 5);
    assert_eq!(summary.failed, 0);
    let requests = requests.lock().unwrap();
    assert_eq!(requests.len(), 5);
    for request in requests.iter() {
        assert_eq!(request.authorization.as_deref(), Some(format!("Bearer {secret}").as_str()));
    }

    // The variable name may appear in the config snapshot; the value must not.
    let mut hits = Vec::new();
    scan_files(out.path(), secret, &mut hits);
    assert!(hits.is_empty(), "credential value leaked into: {hits:?}");
    let manifest = std::fs::read_to_string(out.path().join("manifest.json")).unwrap();
    assert!(manifest.contains(var), "config snapshot should name the credential variable");
}
