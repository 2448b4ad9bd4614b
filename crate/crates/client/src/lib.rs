//! Collects DWA ratings from chat-completions endpoints.
//!
//! Every (DWA, model) pair is requested with the fixed system prompt, the
//! reply is validated strictly, and accepted scores are appended to
//! `scores.csv` as they arrive, so an interrupted run can be resumed.
//! Every attempt, successful or not, is logged to `raw_responses.jsonl`.

mod http;

pub use http::HttpTransport;

use oai_core::ensemble::SCORE_COLUMNS;
use oai_core::protocol::{chat_request, extract_content, parse_response, ChatRequest};
use oai_core::taxonomy::Dwa;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

pub const SCORES_FILE: &str = "scores.csv";
pub const RAW_FILE: &str = "raw_responses.jsonl";
pub const FAILURES_FILE: &str = "failures.csv";

fn default_max_retries() -> u32 {
    3
}

fn default_timeout() -> f64 {
    60.0
}

fn default_backoff_ms() -> u64 {
    500
}

/// One model endpoint, as listed in `endpoints.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndpointConfig {
    /// Base URL; requests go to `{base_url}/chat/completions`.
    pub base_url: String,
    pub model_id: String,
    /// Per-request timeout in seconds.
    #[serde(default = "default_timeout")]
    pub timeout: f64,
    /// Retries after the first attempt.
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default)]
    pub temperature: f64,
    /// First retry delay; doubles on each further retry.
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
    /// Name of an environment variable holding a bearer token, if the endpoint needs one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
}

impl EndpointConfig {
    pub fn new(base_url: &str, model_id: &str) -> Self {
        EndpointConfig {
            base_url: base_url.to_string(),
            model_id: model_id.to_string(),
            timeout: default_timeout(),
            max_retries: default_max_retries(),
            temperature: 0.0,
            backoff_ms: default_backoff_ms(),
            api_key_env: None,
        }
    }

    pub fn validate(&self) -> Result<(), ClientError> {
        let bad = |m: String| Err(ClientError::Config(format!("endpoint {:?}: {m}", self.model_id)));
        if self.model_id.trim().is_empty() {
            return Err(ClientError::Config("endpoint with empty model_id".into()));
        }
        if !(self.timeout.is_finite() && self.timeout > 0.0) {
            return bad(format!("timeout must be positive, got {}", self.timeout));
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return bad(format!("temperature must be non-negative, got {}", self.temperature));
        }
        if !(self.base_url.starts_with("http://") || self.base_url.starts_with("https://")) {
            return bad(format!("base_url must be http(s), got {:?}", self.base_url));
        }
        Ok(())
    }

    pub fn completions_url(&self) -> String {
        format!("{}/chat/completions", self.base_url.trim_end_matches('/'))
    }

    fn backoff(&self, attempt: u32) -> Duration {
        Duration::from_millis(self.backoff_ms.saturating_mul(1u64 << (attempt - 1).min(16)))
    }
}

/// Reads and validates `endpoints.json`: a JSON array of endpoint objects.
pub fn load_endpoints(path: &Path) -> Result<Vec<EndpointConfig>, ClientError> {
    let text = fs::read_to_string(path).map_err(|source| ClientError::Io { path: path.to_path_buf(), source })?;
    let endpoints: Vec<EndpointConfig> =
        serde_json::from_str(&text).map_err(|e| ClientError::Config(format!("{}: {e}", path.display())))?;
    if endpoints.is_empty() {
        return Err(ClientError::Config(format!("{}: no endpoints listed", path.display())));
    }
    let mut seen = BTreeSet::new();
    for e in &endpoints {
        e.validate()?;
        if !seen.insert(e.model_id.as_str()) {
            return Err(ClientError::Config(format!("duplicate model_id {:?}", e.model_id)));
        }
    }
    Ok(endpoints)
}

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("configuration: {0}")]
    Config(String),
    #[error("{path}: {message}")]
    Existing { path: PathBuf, message: String },
    #[error("every one of the {0} requested items failed; see failures.csv")]
    AllFailed(usize),
}

#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct TransportError(pub String);

/// Sends one chat-completions request and returns the raw response body.
pub trait Transport: Sync {
    fn complete(&self, endpoint: &EndpointConfig, request: &ChatRequest) -> Result<String, TransportError>;
}

/// One line of `raw_responses.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawResponse {
    pub dwa_id: String,
    pub model_id: String,
    pub attempt: u32,
    pub latency: f64,
    /// Response body verbatim; absent when the request itself failed.
    pub body: Option<String>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Failure {
    pub dwa_id: String,
    pub model_id: String,
    pub attempts: u32,
    pub last_error: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct RunSummary {
    pub requested: usize,
    pub scored: usize,
    /// Pairs already present in `scores.csv` before this run.
    pub skipped: usize,
    pub attempts: usize,
    pub warnings: usize,
    pub failures: Vec<Failure>,
}

#[derive(Debug, Clone)]
pub struct ScoreOptions {
    /// In-flight requests allowed per endpoint.
    pub concurrency: usize,
    pub out_dir: PathBuf,
}

struct Sinks {
    scores: Mutex<csv::Writer<File>>,
    raw: Mutex<BufWriter<File>>,
}

impl Sinks {
    fn log_attempt(&self, raw: &RawResponse) -> io::Result<()> {
        let mut w = self.raw.lock().expect("raw log lock");
        serde_json::to_writer(&mut *w, raw)?;
        w.write_all(b"\n")?;
        w.flush()
    }

    fn append_score(&self, row: [&str; 5]) -> io::Result<()> {
        let mut w = self.scores.lock().expect("scores lock");
        w.write_record(row)?;
        w.flush()
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> ClientError + '_ {
    move |source| ClientError::Io { path: path.to_path_buf(), source }
}

/// (dwa_id, model_id) pairs already in `scores.csv`.
type Done = BTreeSet<(String, String)>;

/// Opens `scores.csv` for appending. A trailing partial record left by an
/// interrupted run is cut off; complete rows are returned as already done.
fn open_scores(path: &Path) -> Result<(csv::Writer<File>, Done), ClientError> {
    let mut done = BTreeSet::new();
    let mut file = OpenOptions::new().read(true).append(true).create(true).open(path).map_err(io_err(path))?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes).map_err(io_err(path))?;
    let existing = |message: String| ClientError::Existing { path: path.into(), message };

    // Byte offset just past the last newline-terminated record.
    let mut keep = 0;
    if bytes.contains(&b'\n') {
        let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(bytes.as_slice());
        let mut rec = csv::ByteRecord::new();
        let mut first = true;
        loop {
            match rdr.read_byte_record(&mut rec) {
                Ok(true) => {
                    let end = rdr.position().byte() as usize;
                    if bytes[end - 1] != b'\n' {
                        break;
                    }
                    if first {
                        if !rec.iter().eq(SCORE_COLUMNS.iter().map(|c| c.as_bytes())) {
                            return Err(existing(format!("expected header {}", SCORE_COLUMNS.join(","))));
                        }
                        first = false;
                    } else if rec.len() == SCORE_COLUMNS.len() {
                        let text = |i: usize| String::from_utf8_lossy(&rec[i]).into_owned();
                        done.insert((text(0), text(1)));
                    } else {
                        return Err(existing(format!(
                            "malformed row at byte {}",
                            rec.position().map_or(0, |p| p.byte())
                        )));
                    }
                    keep = end;
                }
                Ok(false) => break,
                Err(e) => return Err(existing(e.to_string())),
            }
        }
    }
    if keep < bytes.len() {
        log::warn!("{}: dropping {} bytes of incomplete trailing row", path.display(), bytes.len() - keep);
        file.set_len(keep as u64).map_err(io_err(path))?;
        file.seek(SeekFrom::End(0)).map_err(io_err(path))?;
    }
    let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    if keep == 0 {
        writer
            .write_record(SCORE_COLUMNS)
            .and_then(|_| Ok(writer.flush()?))
            .map_err(|e| ClientError::Io { path: path.into(), source: io::Error::other(e) })?;
    }
    Ok((writer, done))
}

fn csv_io(e: csv::Error) -> io::Error {
    io::Error::other(e)
}

/// Requests one (DWA, model) pair until it validates or retries run out.
fn score_one(
    dwa: &Dwa,
    endpoint: &EndpointConfig,
    transport: &dyn Transport,
    sinks: &Sinks,
    attempts_total: &AtomicUsize,
    warnings_total: &AtomicUsize,
) -> io::Result<Result<(), Failure>> {
    let request = chat_request(&endpoint.model_id, endpoint.temperature, dwa);
    let mut last_error = String::new();
    let max_attempts = endpoint.max_retries + 1;
    for attempt in 1..=max_attempts {
        if attempt > 1 {
            std::thread::sleep(endpoint.backoff(attempt - 1));
        }
        attempts_total.fetch_add(1, Ordering::Relaxed);
        let start = Instant::now();
        let result = transport.complete(endpoint, &request);
        let latency = start.elapsed().as_secs_f64();
        let (body, parsed) = match result {
            Ok(body) => {
                let parsed = extract_content(&body).and_then(|c| parse_response(&c)).map_err(|e| e.to_string());
                (Some(body), parsed)
            }
            Err(e) => (None, Err(e.to_string())),
        };
        sinks.log_attempt(&RawResponse {
            dwa_id: dwa.dwa_id.clone(),
            model_id: endpoint.model_id.clone(),
            attempt,
            latency,
            body,
            error: parsed.as_ref().err().cloned(),
        })?;
        match parsed {
            Ok(score) => {
                warnings_total.fetch_add(score.warnings.len(), Ordering::Relaxed);
                if attempt > 1 {
                    log::info!("{} / {}: accepted on attempt {attempt}", dwa.dwa_id, endpoint.model_id);
                }
                let tech = score.tech_level.to_string();
                let risk = score.risk_score.to_string();
                sinks.append_score([&dwa.dwa_id, &endpoint.model_id, &tech, &risk, &score.reasoning])?;
                return Ok(Ok(()));
            }
            Err(e) => {
                log::warn!("{} / {} attempt {attempt}/{max_attempts}: {e}", dwa.dwa_id, endpoint.model_id);
                last_error = e;
            }
        }
    }
    Ok(Err(Failure {
        dwa_id: dwa.dwa_id.clone(),
        model_id: endpoint.model_id.clone(),
        attempts: max_attempts,
        last_error,
    }))
}

/// Rewrites `scores.csv` sorted by (dwa_id, model_id) so completed runs are
/// byte-identical regardless of request completion order.
fn normalize_scores(path: &Path) -> Result<(), ClientError> {
    let text = fs::read(path).map_err(io_err(path))?;
    let mut rdr = csv::Reader::from_reader(text.as_slice());
    let mut rows: Vec<csv::StringRecord> = rdr
        .records()
        .collect::<Result<_, _>>()
        .map_err(|e| ClientError::Existing { path: path.into(), message: e.to_string() })?;
    rows.sort_by(|a, b| (&a[0], &a[1]).cmp(&(&b[0], &b[1])));
    let tmp = path.with_extension("csv.tmp");
    let mut w = csv::Writer::from_path(&tmp).map_err(|e| ClientError::Io { path: tmp.clone(), source: csv_io(e) })?;
    let write = |w: &mut csv::Writer<File>| -> Result<(), csv::Error> {
        w.write_record(SCORE_COLUMNS)?;
        for r in &rows {
            w.write_record(r)?;
        }
        w.flush()?;
        Ok(())
    };
    write(&mut w).map_err(|e| ClientError::Io { path: tmp.clone(), source: csv_io(e) })?;
    drop(w);
    fs::rename(&tmp, path).map_err(io_err(path))
}

fn write_failures(path: &Path, failures: &[Failure]) -> Result<(), ClientError> {
    let run = || -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["dwa_id", "model_id", "attempts", "last_error"])?;
        for f in failures {
            w.write_record([&f.dwa_id, &f.model_id, &f.attempts.to_string(), &f.last_error])?;
        }
        w.flush()?;
        Ok(())
    };
    run().map_err(|e| ClientError::Io { path: path.into(), source: csv_io(e) })
}

/// Scores every DWA with every endpoint, writing into `opts.out_dir`.
///
/// At most `opts.concurrency` requests are in flight per endpoint. Pairs
/// already in `scores.csv` are skipped. Items that exhaust their retries are
/// listed in `failures.csv`; the run is an error only when nothing at all
/// could be scored.
pub fn score_corpus(
    dwas: &[Dwa],
    endpoints: &[EndpointConfig],
    transport: &dyn Transport,
    opts: &ScoreOptions,
) -> Result<RunSummary, ClientError> {
    if opts.concurrency == 0 {
        return Err(ClientError::Config("concurrency must be at least 1".into()));
    }
    for e in endpoints {
        e.validate()?;
    }
    fs::create_dir_all(&opts.out_dir).map_err(io_err(&opts.out_dir))?;
    let scores_path = opts.out_dir.join(SCORES_FILE);
    let raw_path = opts.out_dir.join(RAW_FILE);
    let (writer, done) = open_scores(&scores_path)?;
    let raw = OpenOptions::new().append(true).create(true).open(&raw_path).map_err(io_err(&raw_path))?;
    let sinks = Sinks { scores: Mutex::new(writer), raw: Mutex::new(BufWriter::new(raw)) };

    let mut summary = RunSummary::default();
    let queues: Vec<(&EndpointConfig, Vec<&Dwa>)> = endpoints
        .iter()
        .map(|e| {
            let todo: Vec<&Dwa> =
                dwas.iter().filter(|d| !done.contains(&(d.dwa_id.clone(), e.model_id.clone()))).collect();
            summary.skipped += dwas.len() - todo.len();
            (e, todo)
        })
        .collect();
    summary.requested = queues.iter().map(|(_, q)| q.len()).sum();

    let attempts = AtomicUsize::new(0);
    let warnings = AtomicUsize::new(0);
    let failures = Mutex::new(Vec::new());
    let scored = AtomicUsize::new(0);
    let fatal: Mutex<Option<io::Error>> = Mutex::new(None);
    let cursors: Vec<AtomicUsize> = queues.iter().map(|_| AtomicUsize::new(0)).collect();
    std::thread::scope(|scope| {
        for ((endpoint, queue), next) in queues.iter().zip(&cursors) {
            for _ in 0..opts.concurrency.min(queue.len()) {
                let (sinks, attempts, warnings, failures, scored, fatal) =
                    (&sinks, &attempts, &warnings, &failures, &scored, &fatal);
                scope.spawn(move || loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    let Some(dwa) = queue.get(i) else { break };
                    if fatal.lock().expect("fatal lock").is_some() {
                        break;
                    }
                    match score_one(dwa, endpoint, transport, sinks, attempts, warnings) {
                        Ok(Ok(())) => {
                            scored.fetch_add(1, Ordering::Relaxed);
                        }
                        Ok(Err(f)) => failures.lock().expect("failures lock").push(f),
                        Err(e) => {
                            *fatal.lock().expect("fatal lock") = Some(e);
                            break;
                        }
                    }
                });
            }
        }
    });
    drop(sinks);
    if let Some(e) = fatal.into_inner().expect("fatal lock") {
        return Err(ClientError::Io { path: opts.out_dir.clone(), source: e });
    }
    let mut failures = failures.into_inner().expect("failures lock");
    failures.sort_by(|a, b| (&a.dwa_id, &a.model_id).cmp(&(&b.dwa_id, &b.model_id)));
    summary.scored = scored.into_inner();
    summary.attempts = attempts.into_inner();
    summary.warnings = warnings.into_inner();
    write_failures(&opts.out_dir.join(FAILURES_FILE), &failures)?;
    normalize_scores(&scores_path)?;
    summary.failures = failures;
    if summary.requested > 0 && summary.scored == 0 {
        return Err(ClientError::AllFailed(summary.requested));
    }
    Ok(summary)
}
