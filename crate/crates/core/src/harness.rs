//! Open-loop HTTP load generator and a stub responder for offline runs.
//!
//! Requests leave at the traffic pattern's arrival times whether or not
//! earlier requests have completed, so slow responses never delay later
//! sends (no coordinated omission). Latency is measured at the client from
//! send to last body byte. That includes network and platform overhead and
//! is not the server-side execution time; when the server reports its own
//! execution time in a header, that is collected separately.

use std::net::SocketAddr;
use std::path::Path;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, State};
use axum::http::{HeaderMap, StatusCode};
use axum::routing::any;
use axum::Router;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::time::Instant;
use thiserror::Error;

use crate::metrics::{self, warmup_filter, MetricsError, Recorder, Sample, SampleSet};
use crate::providers::{check, ProviderLimits, ValidationReport, REQUEST_SIZE};
use crate::simulator::{generate_arrivals, SimError, TrafficPattern};
use crate::units::Limit;

pub const EXEC_TIME_HEADER: &str = "x-execution-time-ms";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid target: {0}")]
    Config(String),
    #[error("invalid traffic pattern: {0}")]
    Pattern(#[from] SimError),
    #[error("preflight failed: {} violation(s)", .0.violations.len())]
    Preflight(ValidationReport),
    #[error("cannot build http client: {0}")]
    Client(#[source] reqwest::Error),
    #[error(transparent)]
    Export(#[from] MetricsError),
    #[error("runtime: {0}")]
    Runtime(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchTarget {
    pub url: String,
    #[serde(default = "default_method")]
    pub method: String,
    #[serde(default)]
    pub headers: Vec<(String, String)>,
    #[serde(default)]
    pub payload: Vec<u8>,
    pub timeout_ms: u64,
    /// Response header carrying server-side execution time in ms, if any.
    #[serde(default)]
    pub exec_time_header: Option<String>,
}

fn default_method() -> String {
    "POST".into()
}

impl BenchTarget {
    pub fn new(url: &str) -> Self {
        BenchTarget {
            url: url.to_string(),
            method: default_method(),
            headers: Vec::new(),
            payload: Vec::new(),
            timeout_ms: 30_000,
            exec_time_header: None,
        }
    }

    pub fn payload_bytes(&self) -> u64 {
        self.payload.len() as u64
    }
}

/// Fails when the request payload exceeds the provider's request-size limit.
pub fn preflight(target: &BenchTarget, limits: &ProviderLimits) -> ValidationReport {
    let mut violations = Vec::new();
    check(
        REQUEST_SIZE,
        Limit::Finite(limits.max_request_bytes),
        target.payload_bytes(),
        &mut violations,
    );
    ValidationReport::from_violations(violations)
}

#[derive(Debug, Clone)]
pub struct BenchRun {
    pub target: BenchTarget,
    pub pattern: TrafficPattern,
    pub n_warmup: usize,
    pub provider_limits: Option<ProviderLimits>,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    Timeout,
    Connect,
    HttpStatus,
    Other,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorTally {
    pub timeout: usize,
    pub connect: usize,
    pub http_status: usize,
    pub other: usize,
}

impl ErrorTally {
    pub fn total(&self) -> usize {
        self.timeout + self.connect + self.http_status + self.other
    }
}

#[derive(Default)]
struct AtomicTally {
    timeout: AtomicUsize,
    connect: AtomicUsize,
    http_status: AtomicUsize,
    other: AtomicUsize,
}

impl AtomicTally {
    fn add(&self, kind: ErrorKind) {
        let slot = match kind {
            ErrorKind::Timeout => &self.timeout,
            ErrorKind::Connect => &self.connect,
            ErrorKind::HttpStatus => &self.http_status,
            ErrorKind::Other => &self.other,
        };
        slot.fetch_add(1, Ordering::Relaxed);
    }

    fn snapshot(&self) -> ErrorTally {
        ErrorTally {
            timeout: self.timeout.load(Ordering::Relaxed),
            connect: self.connect.load(Ordering::Relaxed),
            http_status: self.http_status.load(Ordering::Relaxed),
            other: self.other.load(Ordering::Relaxed),
        }
    }
}

/// When a request was due and when it actually left, ms since run start.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SendRecord {
    pub scheduled_ms: f64,
    pub sent_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchOutcome {
    pub attempted: usize,
    /// Successful responses recorded, warm-up included.
    pub recorded: usize,
    pub warmup_excluded: usize,
    /// Successful latencies after warm-up exclusion, in send order.
    pub samples: SampleSet,
    /// Server-reported execution times after warm-up exclusion, when the
    /// target names a header and the server sends it.
    pub server_samples: SampleSet,
    pub errors: ErrorTally,
    pub sends: Vec<SendRecord>,
}

impl BenchOutcome {
    pub fn error_ratio(&self) -> f64 {
        if self.attempted == 0 {
            0.0
        } else {
            self.errors.total() as f64 / self.attempted as f64
        }
    }

    /// Largest lag between a scheduled and actual send, ms.
    pub fn max_send_lag_ms(&self) -> f64 {
        self.sends
            .iter()
            .map(|s| (s.sent_ms - s.scheduled_ms).abs())
            .fold(0.0, f64::max)
    }
}

fn classify(e: &reqwest::Error) -> ErrorKind {
    if e.is_timeout() {
        ErrorKind::Timeout
    } else if e.is_connect() {
        ErrorKind::Connect
    } else if e.is_status() {
        ErrorKind::HttpStatus
    } else {
        ErrorKind::Other
    }
}

fn build_request(
    client: &reqwest::Client,
    target: &BenchTarget,
) -> Result<reqwest::RequestBuilder, HarnessError> {
    let method = reqwest::Method::from_bytes(target.method.as_bytes())
        .map_err(|_| HarnessError::Config(format!("bad method {:?}", target.method)))?;
    let url = reqwest::Url::parse(&target.url)
        .map_err(|e| HarnessError::Config(format!("bad url {:?}: {e}", target.url)))?;
    let mut req = client.request(method, url);
    for (k, v) in &target.headers {
        let name = reqwest::header::HeaderName::from_bytes(k.as_bytes())
            .map_err(|_| HarnessError::Config(format!("bad header name {k:?}")))?;
        let value = reqwest::header::HeaderValue::from_str(v)
            .map_err(|_| HarnessError::Config(format!("bad header value for {k}")))?;
        req = req.header(name, value);
    }
    if !target.payload.is_empty() {
        req = req.body(target.payload.clone());
    }
    Ok(req)
}

fn sleep_until_precise(due: Instant) {
    let now = Instant::now();
    if due > now {
        std::thread::sleep(due - now);
    }
}

/// Fires the run's schedule at the target and collects latencies.
///
/// Per-request failures are tallied by category; only configuration
/// problems (bad URL, header, pattern, or a failed preflight) abort the run.
pub async fn run_bench(run: &BenchRun) -> Result<BenchOutcome, HarnessError> {
    if let Some(limits) = &run.provider_limits {
        let report = preflight(&run.target, limits);
        if !report.passed {
            return Err(HarnessError::Preflight(report));
        }
    }
    if run.target.timeout_ms == 0 {
        return Err(HarnessError::Config("timeout_ms must be positive".into()));
    }
    let arrivals = generate_arrivals(&run.pattern, run.seed)?;
    let client = reqwest::Client::builder()
        .timeout(Duration::from_millis(run.target.timeout_ms))
        .build()
        .map_err(HarnessError::Client)?;
    // validate the request shape once before the clock starts
    let _ = build_request(&client, &run.target)?;

    let recorder = Arc::new(Recorder::new());
    let server_recorder = Arc::new(Recorder::new());
    let tally = Arc::new(AtomicTally::default());
    let target = Arc::new(run.target.clone());
    let runtime = tokio::runtime::Handle::current();
    let schedule = arrivals.clone();
    let sched_tally = tally.clone();
    let (sched_recorder, sched_server) = (recorder.clone(), server_recorder.clone());
    // the schedule runs on its own thread so timer granularity and busy
    // workers do not delay sends
    let scheduler = tokio::task::spawn_blocking(move || {
        let mut sends = Vec::with_capacity(schedule.len());
        let mut handles = Vec::with_capacity(schedule.len());
        let start = Instant::now();
        for (seq, &at_ms) in schedule.iter().enumerate() {
            let due = start + Duration::from_micros((at_ms * 1000.0).round() as u64);
            sleep_until_precise(due);
            let sent = Instant::now();
            let sent_ms = (sent - start).as_secs_f64() * 1000.0;
            sends.push(SendRecord {
                scheduled_ms: at_ms,
                sent_ms,
            });

            let req = build_request(&client, &target)?;
            let recorder = sched_recorder.clone();
            let server_recorder = sched_server.clone();
            let tally = sched_tally.clone();
            let target = target.clone();
            handles.push(runtime.spawn(async move {
                let result = async {
                    let resp = req.send().await?.error_for_status()?;
                    let server_ms = target.exec_time_header.as_deref().and_then(|h| {
                        resp.headers()
                            .get(h)
                            .and_then(|v| v.to_str().ok())
                            .and_then(|v| v.trim().parse::<f64>().ok())
                    });
                    resp.bytes().await?;
                    Ok::<_, reqwest::Error>(server_ms)
                }
                .await;
                let latency_ms = sent.elapsed().as_secs_f64() * 1000.0;
                match result {
                    Ok(server_ms) => {
                        let seq = seq as u64;
                        let _ = recorder.record(
                            seq,
                            Sample {
                                timestamp_ms: sent_ms,
                                ..Sample::duration(latency_ms)
                            },
                        );
                        if let Some(ms) = server_ms {
                            let _ = server_recorder.record(
                                seq,
                                Sample {
                                    timestamp_ms: sent_ms,
                                    ..Sample::duration(ms)
                                },
                            );
                        }
                    }
                    Err(e) => tally.add(classify(&e)),
                }
            }));
        }
        Ok::<_, HarnessError>((sends, handles))
    });
    let (sends, handles) = scheduler
        .await
        .map_err(|e| HarnessError::Runtime(std::io::Error::other(e)))??;
    for h in handles {
        if h.await.is_err() {
            tally.add(ErrorKind::Other);
        }
    }

    let raw = recorder.snapshot();
    let samples = warmup_filter(&raw, run.n_warmup);
    // server samples follow the same warm-up cut: drop those sent before the
    // first retained client sample
    let cutoff = samples.samples().first().map(|s| s.timestamp_ms);
    let server_raw = server_recorder.snapshot();
    let server_samples = SampleSet::from_samples(
        server_raw
            .samples()
            .iter()
            .filter(|s| cutoff.is_some_and(|c| s.timestamp_ms >= c))
            .cloned()
            .collect(),
    )?;

    Ok(BenchOutcome {
        attempted: arrivals.len(),
        recorded: raw.len(),
        warmup_excluded: raw.len() - samples.len(),
        samples,
        server_samples,
        errors: tally.snapshot(),
        sends,
    })
}

/// Runs [`run_bench`] on a fresh multi-threaded runtime.
pub fn run_bench_blocking(run: &BenchRun) -> Result<BenchOutcome, HarnessError> {
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()?;
    rt.block_on(run_bench(run))
}

/// Writes the retained samples in the metrics CSV format.
pub fn export_run(outcome: &BenchOutcome, path: &Path) -> Result<(), HarnessError> {
    metrics::write_csv_file(&outcome.samples, path)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StubDelay {
    Fixed { ms: f64 },
    Uniform { lo_ms: f64, hi_ms: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StubConfig {
    pub delay: StubDelay,
    /// Every k-th request (1-based) answers 500.
    pub fail_every: Option<u64>,
    pub seed: u64,
}

impl StubConfig {
    pub fn fixed(ms: f64) -> Self {
        StubConfig {
            delay: StubDelay::Fixed { ms },
            fail_every: None,
            seed: 0,
        }
    }
}

struct StubState {
    config: StubConfig,
    counter: AtomicU64,
    rng: Mutex<ChaCha8Rng>,
}

async fn stub_handler(
    State(state): State<Arc<StubState>>,
    _body: Bytes,
) -> (StatusCode, HeaderMap, &'static str) {
    let n = state.counter.fetch_add(1, Ordering::SeqCst) + 1;
    let delay_ms = match state.config.delay {
        StubDelay::Fixed { ms } => ms,
        StubDelay::Uniform { lo_ms, hi_ms } => {
            let mut rng = state.rng.lock().unwrap_or_else(|e| e.into_inner());
            if hi_ms > lo_ms {
                rng.random_range(lo_ms..hi_ms)
            } else {
                lo_ms
            }
        }
    };
    tokio::time::sleep(Duration::from_secs_f64(delay_ms.max(0.0) / 1000.0)).await;
    let mut headers = HeaderMap::new();
    if let Ok(v) = format!("{delay_ms:.3}").parse() {
        headers.insert(EXEC_TIME_HEADER, v);
    }
    let failing = state.config.fail_every.is_some_and(|k| k > 0 && n % k == 0);
    if failing {
        (StatusCode::INTERNAL_SERVER_ERROR, headers, "stub failure\n")
    } else {
        (StatusCode::OK, headers, "{\"ok\":true}\n")
    }
}

/// Local HTTP responder with a configurable delay and failure schedule.
pub struct StubServer {
    addr: SocketAddr,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
    handle: tokio::task::JoinHandle<()>,
    state: Arc<StubState>,
}

impl StubServer {
    /// Binds 127.0.0.1 on an ephemeral port. Must be called inside a tokio runtime.
    pub async fn start(config: StubConfig) -> std::io::Result<Self> {
        let state = Arc::new(StubState {
            config,
            counter: AtomicU64::new(0),
            rng: Mutex::new(ChaCha8Rng::seed_from_u64(config.seed)),
        });
        let app = Router::new()
            .route("/", any(stub_handler))
            .route("/{*path}", any(stub_handler))
            .layer(DefaultBodyLimit::disable())
            .with_state(state.clone());
        let listener = tokio::net::TcpListener::bind(("127.0.0.1", 0)).await?;
        let addr = listener.local_addr()?;
        let (tx, rx) = tokio::sync::oneshot::channel::<()>();
        let handle = tokio::spawn(async move {
            let _ = axum::serve(listener, app)
                .with_graceful_shutdown(async {
                    let _ = rx.await;
                })
                .await;
        });
        Ok(StubServer {
            addr,
            shutdown: Some(tx),
            handle,
            state,
        })
    }

    pub fn url(&self) -> String {
        format!("http://{}/", self.addr)
    }

    pub fn requests_served(&self) -> u64 {
        self.state.counter.load(Ordering::SeqCst)
    }

    pub async fn stop(mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        let _ = (&mut self.handle).await;
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
    }
}
