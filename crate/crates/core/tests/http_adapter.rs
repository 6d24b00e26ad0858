//! Integration tests for the external-model HTTP adapter against an in-repo
//! mock server (a plain TCP listener speaking just enough HTTP/1.1).

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::mpsc;
use std::thread;
use std::time::Duration;

use cotplane::cot;
use cotplane::encode::{PromptTask, Vocab};
use cotplane::policy::{ExternalModelConfig, HttpPolicy, PolicyBackend, PolicyError};
use cotplane::Prompt;

/// What the mock should do with one request.
#[derive(Clone)]
enum Behavior {
    /// Respond 200 with this JSON body.
    Json(String),
    /// Respond with the given status and an empty JSON object.
    Status(u16),
    /// Read the request then stall long enough to trip the client timeout.
    Stall(Duration),
}

struct MockServer {
    addr: String,
    requests: mpsc::Receiver<String>,
    handle: Option<thread::JoinHandle<()>>,
}

impl MockServer {
    /// Serves the scripted behaviors in order, one connection each, then exits.
    fn start(behaviors: Vec<Behavior>) -> MockServer {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind mock server");
        let addr = format!("http://{}/complete", listener.local_addr().unwrap());
        let (tx, rx) = mpsc::channel();
        let handle = thread::spawn(move || {
            for behavior in behaviors {
                let Ok((stream, _)) = listener.accept() else { return };
                serve_one(stream, &behavior, &tx);
            }
        });
        MockServer { addr, requests: rx, handle: Some(handle) }
    }

    fn endpoint(&self) -> String {
        self.addr.clone()
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        if let Some(handle) = self.handle.take() {
            let _ = handle.join();
        }
    }
}

fn serve_one(mut stream: TcpStream, behavior: &Behavior, tx: &mpsc::Sender<String>) {
    stream.set_read_timeout(Some(Duration::from_secs(5))).ok();
    let mut reader = BufReader::new(stream.try_clone().expect("clone stream"));
    let mut content_length = 0usize;
    let mut line = String::new();
    loop {
        line.clear();
        if reader.read_line(&mut line).is_err() || line.trim().is_empty() {
            break;
        }
        if let Some(rest) = line.to_ascii_lowercase().strip_prefix("content-length:") {
            content_length = rest.trim().parse().unwrap_or(0);
        }
    }
    let mut body = vec![0u8; content_length];
    if content_length > 0 {
        reader.read_exact(&mut body).ok();
    }
    tx.send(String::from_utf8_lossy(&body).into_owned()).ok();

    match behavior {
        Behavior::Json(json) => {
            let response = format!(
                "HTTP/1.1 200 OK\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{}",
                json.len(),
                json
            );
            stream.write_all(response.as_bytes()).ok();
        }
        Behavior::Status(code) => {
            let body = "{}";
            let response = format!(
                "HTTP/1.1 {code} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{}",
                body.len(),
                body
            );
            stream.write_all(response.as_bytes()).ok();
        }
        Behavior::Stall(how_long) => {
            thread::sleep(*how_long);
        }
    }
}

fn test_prompt() -> Prompt {
    let vocab = Vocab::standard();
    let text = "[CLUSTER_STATE]\n#1 cpu HIGH mem LOW latency HIGH replicas 1 ready 1 VIOLATED\narrival HIGH\n";
    Prompt {
        task: PromptTask::Rca,
        guidance: String::new(),
        deployments: String::new(),
        call_graph: String::new(),
        expected_schema: String::new(),
        cluster_state: String::new(),
        carrier: String::new(),
        text: text.to_string(),
        token_sequence: vocab.tokenize_lossy(text),
    }
}

fn policy_for(endpoint: String, timeout_secs: f64, retry_count: u32) -> HttpPolicy {
    let cfg = ExternalModelConfig {
        endpoint,
        timeout_secs,
        retry_count,
        max_tokens: 256,
        ..Default::default()
    };
    HttpPolicy::new(cfg, Vocab::standard().clone())
}

const CANNED_COT: &str = "<think> #1 cpu HIGH </think>\n<Fault> #1 @C </Fault>\n<Counterfactual> IF SCALE_OUT #1 THEN IMPROVED </Counterfactual>\n<root> #1 @C </root>";

#[test]
fn fixed_completion_parses_to_expected_output() {
    let body = serde_json::json!({ "completions": [CANNED_COT] }).to_string();
    let server = MockServer::start(vec![Behavior::Json(body)]);
    let policy = policy_for(server.endpoint(), 5.0, 0);

    let samples = policy.generate(&test_prompt(), 1, 0).unwrap();
    assert_eq!(samples.len(), 1);
    assert!(samples[0].logp.is_none(), "http samples carry no likelihoods");

    let out = cot::parse(&samples[0].text, Vocab::standard());
    assert!(out.is_violation_free(), "{:?}", out.violations);
    assert_eq!(out.root.len(), 1);
    assert_eq!(out.root[0].0 .0, 1);
    assert_eq!(cot::interpret(&out).len(), 1);

    // The request body follows the documented wire format and carries the
    // system prompt ahead of the prompt text.
    let request = server.requests.recv_timeout(Duration::from_secs(1)).unwrap();
    let parsed: serde_json::Value = serde_json::from_str(&request).unwrap();
    assert_eq!(parsed["n"], 1);
    assert_eq!(parsed["max_tokens"], 256);
    let sent_prompt = parsed["prompt"].as_str().unwrap();
    assert!(sent_prompt.contains("[CLUSTER_STATE]"));
    assert!(sent_prompt.contains("<Counterfactual>"), "system prompt must mandate the schema");
}

#[test]
fn one_request_carries_n_for_multi_sample_groups() {
    let body = serde_json::json!({ "completions": [CANNED_COT, CANNED_COT, CANNED_COT] }).to_string();
    let server = MockServer::start(vec![Behavior::Json(body)]);
    let policy = policy_for(server.endpoint(), 5.0, 0);
    let samples = policy.generate(&test_prompt(), 3, 0).unwrap();
    assert_eq!(samples.len(), 3);
    let request = server.requests.recv_timeout(Duration::from_secs(1)).unwrap();
    let parsed: serde_json::Value = serde_json::from_str(&request).unwrap();
    assert_eq!(parsed["n"], 3, "group size rides in the n field of a single request");
}

#[test]
fn timeout_retries_then_surfaces_timeout_error() {
    let stall = Behavior::Stall(Duration::from_millis(1500));
    let server = MockServer::start(vec![stall.clone(), stall]);
    let policy = policy_for(server.endpoint(), 0.3, 1);
    let err = policy.generate(&test_prompt(), 1, 0).unwrap_err();
    match err {
        PolicyError::Timeout { attempts } => assert_eq!(attempts, 2),
        other => panic!("expected timeout, got {other}"),
    }
    // Both attempts reached the server.
    assert!(server.requests.recv_timeout(Duration::from_secs(3)).is_ok());
    assert!(server.requests.recv_timeout(Duration::from_secs(3)).is_ok());
}

#[test]
fn server_error_retries_and_succeeds() {
    let good = serde_json::json!({ "completions": [CANNED_COT] }).to_string();
    let server = MockServer::start(vec![Behavior::Status(503), Behavior::Json(good)]);
    let policy = policy_for(server.endpoint(), 5.0, 2);
    let samples = policy.generate(&test_prompt(), 1, 0).unwrap();
    assert_eq!(samples.len(), 1);
}

#[test]
fn client_error_is_not_retried() {
    let server = MockServer::start(vec![Behavior::Status(404)]);
    let policy = policy_for(server.endpoint(), 5.0, 3);
    let err = policy.generate(&test_prompt(), 1, 0).unwrap_err();
    match err {
        PolicyError::Status(404) => {}
        other => panic!("expected status 404, got {other}"),
    }
    // Only one request must have been made despite retry budget.
    assert!(server.requests.recv_timeout(Duration::from_secs(1)).is_ok());
    assert!(server.requests.recv_timeout(Duration::from_millis(300)).is_err());
}

#[test]
fn malformed_body_is_a_distinct_error() {
    let server = MockServer::start(vec![Behavior::Json("{\"unexpected\": 1}".into())]);
    let policy = policy_for(server.endpoint(), 5.0, 0);
    let err = policy.generate(&test_prompt(), 1, 0).unwrap_err();
    assert!(matches!(err, PolicyError::MalformedBody(_)), "{err}");
}

#[test]
fn empty_completions_are_malformed() {
    let server = MockServer::start(vec![Behavior::Json("{\"completions\": []}".into())]);
    let policy = policy_for(server.endpoint(), 5.0, 0);
    let err = policy.generate(&test_prompt(), 1, 0).unwrap_err();
    assert!(matches!(err, PolicyError::MalformedBody(_)), "{err}");
}
