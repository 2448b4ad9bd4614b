use oai_client::{
    load_endpoints, score_corpus, ClientError, EndpointConfig, HttpTransport, RawResponse, ScoreOptions, Transport,
    TransportError, FAILURES_FILE, RAW_FILE, SCORES_FILE,
};
use oai_core::fixture;
use oai_core::protocol::{serialize_response, ChatRequest, SYSTEM_PROMPT};
use oai_core::taxonomy::Dwa;
use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

fn dwas() -> Vec<Dwa> {
    fixture::taxonomy().dwas().values().cloned().collect()
}

fn endpoint(model: &str) -> EndpointConfig {
    EndpointConfig { backoff_ms: 0, max_retries: 2, ..EndpointConfig::new("http://mock.invalid/v1", model) }
}

fn envelope(content: &str) -> String {
    serde_json::json!({ "choices": [{ "message": { "role": "assistant", "content": content } }] }).to_string()
}

/// Deterministic valid reply derived from the title length and model name.
fn canned(model: &str, request: &ChatRequest) -> String {
    let n = request.messages[1].content.len() + model.len();
    envelope(&serialize_response((n % 4) as u8, (n % 5) as u8 + 1, &format!("{model} on item of length {n}")))
}

struct Scripted<F: Fn(&EndpointConfig, &ChatRequest, u32) -> Result<String, TransportError> + Sync> {
    reply: F,
    calls: Mutex<BTreeMap<(String, String), u32>>,
}

impl<F: Fn(&EndpointConfig, &ChatRequest, u32) -> Result<String, TransportError> + Sync> Scripted<F> {
    fn new(reply: F) -> Self {
        Scripted { reply, calls: Mutex::new(BTreeMap::new()) }
    }

    fn total_calls(&self) -> u32 {
        self.calls.lock().unwrap().values().sum()
    }
}

impl<F: Fn(&EndpointConfig, &ChatRequest, u32) -> Result<String, TransportError> + Sync> Transport for Scripted<F> {
    fn complete(&self, endpoint: &EndpointConfig, request: &ChatRequest) -> Result<String, TransportError> {
        let attempt = {
            let mut calls = self.calls.lock().unwrap();
            let n = calls.entry((endpoint.model_id.clone(), request.messages[1].content.clone())).or_insert(0);
            *n += 1;
            *n
        };
        (self.reply)(endpoint, request, attempt)
    }
}

fn opts(dir: &Path, concurrency: usize) -> ScoreOptions {
    ScoreOptions { concurrency, out_dir: dir.to_path_buf() }
}

fn raw_log(dir: &Path) -> Vec<RawResponse> {
    fs::read_to_string(dir.join(RAW_FILE)).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

#[test]
fn scores_every_pair_once() {
    let dir = tempfile::tempdir().unwrap();
    let t = Scripted::new(|e: &EndpointConfig, r: &ChatRequest, _| Ok(canned(&e.model_id, r)));
    let eps = [endpoint("model-a"), endpoint("model-b")];
    let s = score_corpus(&dwas(), &eps, &t, &opts(dir.path(), 4)).unwrap();
    assert_eq!((s.requested, s.scored, s.skipped, s.attempts), (40, 40, 0, 40));
    let scores = oai_core::ensemble::read_scores(fs::File::open(dir.path().join(SCORES_FILE)).unwrap()).unwrap();
    assert_eq!(scores.len(), 40);
    // Sorted by DWA, then model.
    assert_eq!((scores[0].dwa_id.as_str(), scores[0].model_id.as_str()), ("D01", "model-a"));
    assert_eq!((scores[1].dwa_id.as_str(), scores[1].model_id.as_str()), ("D01", "model-b"));
    assert_eq!(raw_log(dir.path()).len(), 40);
    assert_eq!(fs::read_to_string(dir.path().join(FAILURES_FILE)).unwrap(), "dwa_id,model_id,attempts,last_error\n");
}

#[test]
fn garbage_then_valid_succeeds_on_second_attempt() {
    let dir = tempfile::tempdir().unwrap();
    let t = Scripted::new(|e: &EndpointConfig, r: &ChatRequest, attempt| {
        if r.messages[1].content.starts_with("Analyze data") && attempt == 1 {
            Ok(envelope("I think the tech level is about 2."))
        } else {
            Ok(canned(&e.model_id, r))
        }
    });
    let s = score_corpus(&dwas()[..1], &[endpoint("m")], &t, &opts(dir.path(), 1)).unwrap();
    assert_eq!((s.scored, s.attempts), (1, 2));
    let log = raw_log(dir.path());
    assert_eq!(log.len(), 2);
    assert_eq!((log[0].attempt, log[1].attempt), (1, 2));
    assert!(log[0].error.as_deref().unwrap().contains("not valid JSON"));
    assert!(log[0].body.as_deref().unwrap().contains("about 2"));
    assert!(log[1].error.is_none());
}

#[test]
fn resume_after_interruption_matches_uninterrupted_run() {
    let t = Scripted::new(|e: &EndpointConfig, r: &ChatRequest, _| Ok(canned(&e.model_id, r)));
    let eps = [endpoint("model-a"), endpoint("model-b")];
    let full = tempfile::tempdir().unwrap();
    score_corpus(&dwas(), &eps, &t, &opts(full.path(), 3)).unwrap();
    let complete = fs::read_to_string(full.path().join(SCORES_FILE)).unwrap();

    // Header, 20 rows, and half of the 21st as if killed mid-write.
    let lines: Vec<&str> = complete.lines().collect();
    let mut partial = lines[..21].join("\n");
    partial.push('\n');
    partial.push_str(&lines[21][..10]);
    let resumed = tempfile::tempdir().unwrap();
    fs::write(resumed.path().join(SCORES_FILE), &partial).unwrap();

    let t2 = Scripted::new(|e: &EndpointConfig, r: &ChatRequest, _| Ok(canned(&e.model_id, r)));
    let s = score_corpus(&dwas(), &eps, &t2, &opts(resumed.path(), 3)).unwrap();
    assert_eq!((s.skipped, s.requested, s.scored), (20, 20, 20));
    assert_eq!(t2.total_calls(), 20);
    assert_eq!(fs::read_to_string(resumed.path().join(SCORES_FILE)).unwrap(), complete);

    // A third run has nothing left to do.
    let s = score_corpus(&dwas(), &eps, &t2, &opts(resumed.path(), 3)).unwrap();
    assert_eq!((s.skipped, s.requested), (40, 0));
}

#[test]
fn partial_failures_are_logged_and_the_run_continues() {
    let dir = tempfile::tempdir().unwrap();
    let t = Scripted::new(|e: &EndpointConfig, r: &ChatRequest, _| {
        if e.model_id == "flaky" && r.messages[1].content.contains("roof") {
            Err(TransportError("connection refused".into()))
        } else if e.model_id == "flaky" && r.messages[1].content.starts_with("Sort") {
            Ok(envelope(r#"{"tech_level": 7, "risk_score": 3, "reasoning": ""}"#))
        } else {
            Ok(canned(&e.model_id, r))
        }
    });
    let s = score_corpus(&dwas(), &[endpoint("steady"), endpoint("flaky")], &t, &opts(dir.path(), 2)).unwrap();
    // Three roofing DWAs fail at transport level, one sorting DWA returns an out-of-range value.
    assert_eq!(s.failures.len(), 4);
    assert_eq!(s.scored, 36);
    assert!(s.failures.iter().all(|f| f.attempts == 3 && f.model_id == "flaky"));
    let failures = fs::read_to_string(dir.path().join(FAILURES_FILE)).unwrap();
    assert_eq!(failures.lines().count(), 5);
    assert!(failures.contains("D19,flaky,3,tech_level = 7 is out of range"));
    // 36 successes plus 3 attempts for each failed item.
    assert_eq!(raw_log(dir.path()).len(), 36 + 12);
    assert_eq!(s.attempts, 48);
}

#[test]
fn run_fails_only_when_everything_fails() {
    let dir = tempfile::tempdir().unwrap();
    let t = Scripted::new(|_: &EndpointConfig, _: &ChatRequest, _| Err(TransportError("unreachable".into())));
    let err = score_corpus(&dwas(), &[endpoint("m")], &t, &opts(dir.path(), 2)).unwrap_err();
    assert!(matches!(err, ClientError::AllFailed(20)));
    assert_eq!(fs::read_to_string(dir.path().join(FAILURES_FILE)).unwrap().lines().count(), 21);
}

#[test]
fn concurrency_is_bounded_per_endpoint() {
    let in_flight: Mutex<BTreeMap<String, (usize, usize)>> = Mutex::new(BTreeMap::new());
    let t = Scripted::new(|e: &EndpointConfig, r: &ChatRequest, _| {
        {
            let mut m = in_flight.lock().unwrap();
            let slot = m.entry(e.model_id.clone()).or_default();
            slot.0 += 1;
            slot.1 = slot.1.max(slot.0);
        }
        std::thread::sleep(Duration::from_millis(5));
        in_flight.lock().unwrap().get_mut(&e.model_id).unwrap().0 -= 1;
        Ok(canned(&e.model_id, r))
    });
    let dir = tempfile::tempdir().unwrap();
    score_corpus(&dwas(), &[endpoint("a"), endpoint("b")], &t, &opts(dir.path(), 3)).unwrap();
    for (model, (_, peak)) in in_flight.lock().unwrap().iter() {
        assert!(*peak <= 3, "{model} peaked at {peak}");
    }
}

#[test]
fn endpoints_file_defaults_and_validation() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("endpoints.json");
    fs::write(&path, r#"[{"base_url": "http://localhost:8000/v1", "model_id": "qwen"}]"#).unwrap();
    let eps = load_endpoints(&path).unwrap();
    assert_eq!(eps[0].temperature, 0.0);
    assert_eq!(eps[0].completions_url(), "http://localhost:8000/v1/chat/completions");

    for bad in [
        r#"[{"base_url": "http://x", "model_id": "a", "timeout": 0}]"#,
        r#"[{"base_url": "http://x", "model_id": "a"}, {"base_url": "http://y", "model_id": "a"}]"#,
        r#"[{"base_url": "ftp://x", "model_id": "a"}]"#,
        r#"[{"base_url": "http://x", "model_id": "a", "retries": 2}]"#,
        r#"[]"#,
    ] {
        fs::write(&path, bad).unwrap();
        assert!(matches!(load_endpoints(&path), Err(ClientError::Config(_))), "{bad}");
    }
}

/// Serves `n` HTTP requests on a loopback port, recording each request body.
fn serve(
    n: usize,
    reply: impl Fn(&serde_json::Value) -> (u16, String) + Send + 'static,
) -> (String, std::thread::JoinHandle<Vec<String>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1", listener.local_addr().unwrap());
    let handle = std::thread::spawn(move || {
        let mut bodies = Vec::new();
        for stream in listener.incoming().take(n) {
            let mut stream = stream.unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut request_line = String::new();
            reader.read_line(&mut request_line).unwrap();
            assert!(request_line.starts_with("POST /v1/chat/completions "), "{request_line}");
            let mut length = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line == "\r\n" {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    length = v.trim().parse().unwrap();
                }
            }
            let mut body = vec![0; length];
            reader.read_exact(&mut body).unwrap();
            let body = String::from_utf8(body).unwrap();
            let (status, text) = reply(&serde_json::from_str(&body).unwrap());
            write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{text}",
                text.len()
            )
            .unwrap();
            bodies.push(body);
        }
        bodies
    });
    (url, handle)
}

#[test]
fn http_transport_speaks_chat_completions() {
    let (url, server) = serve(2, |req| {
        if req["messages"][1]["content"] == "Check facts, names, or dates in written materials" {
            (500, "overloaded".to_string())
        } else {
            (200, envelope(r#"{"tech_level": 3, "risk_score": 2, "reasoning": "routine"}"#))
        }
    });
    let mut ep = EndpointConfig::new(&url, "local-model");
    ep.backoff_ms = 0;
    ep.max_retries = 0;
    let d = dwas();
    let picked = [d[6].clone(), d[0].clone()];
    let dir = tempfile::tempdir().unwrap();
    let s = score_corpus(&picked, &[ep], &HttpTransport::new(), &opts(dir.path(), 1)).unwrap();
    assert_eq!(s.scored, 1);
    assert_eq!(s.failures.len(), 1);
    assert!(s.failures[0].last_error.contains("HTTP 500"));

    let bodies = server.join().unwrap();
    let first: serde_json::Value = serde_json::from_str(&bodies[0]).unwrap();
    assert_eq!(first["model"], "local-model");
    assert_eq!(first["temperature"], 0.0);
    assert_eq!(first["messages"][0]["role"], "system");
    assert_eq!(first["messages"][0]["content"], SYSTEM_PROMPT);
    assert_eq!(first["messages"][1]["role"], "user");
    let scores = fs::read_to_string(dir.path().join(SCORES_FILE)).unwrap();
    assert_eq!(scores, "dwa_id,model_id,tech_level,risk_score,reasoning\nD01,local-model,3,2,routine\n");
}
