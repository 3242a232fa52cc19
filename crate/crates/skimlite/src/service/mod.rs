//! The skim daemon: accepts queries over HTTP, runs them against its
//! storage backend, and streams the skimmed file back.
//!
//! `POST /skim` takes a query document and answers with the output file
//! bytes; run metadata (event counts, stage totals, timings, storage-side
//! read accounting, warnings) travels in `x-skim-*` response headers so the
//! body stays a plain dataset. `GET /healthz` reports liveness, the build
//! version, and a digest of the loaded minimal-sets table.

use std::path::{Component, Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use sha2::{Digest, Sha256};

use crate::colfmt::DatasetReader;
use crate::engine::{run_skim, SkimResult};
use crate::error::{Result, SkimError};
use crate::query::plan::{build_plan, MinimalSets};
use crate::query::parse_query;
use crate::timing::TimingBreakdown;
use crate::transport::http::HttpClient;
use crate::transport::httpd::{start_httpd, HttpReply, HttpRequest, HttpdHandle, ReplyBody};
use crate::transport::throttle::{Throttle, ThrottledReader, DEFAULT_BURST};
use crate::transport::{HttpRangeSource, LocalFileSource, PrefetchCache, RangeSource, DEFAULT_CACHE_BUDGET};

/// Where the daemon finds its input files.
#[derive(Debug, Clone)]
pub enum StorageEndpoint {
    /// Local directory (or one that only looks local, like a mounted pool).
    Dir(PathBuf),
    /// Base URL of a byte-range file server.
    Url(String),
}

#[derive(Debug, Clone)]
pub struct DaemonConfig {
    pub storage: StorageEndpoint,
    pub listen: String,
    /// Concurrent skim jobs; requests beyond this wait in the accept queue.
    pub workers: usize,
    pub minimal_sets: MinimalSets,
    pub cache_budget: u64,
    /// Response bandwidth cap in bytes/s; `None` means unthrottled.
    pub rate: Option<u64>,
    pub burst: u64,
    /// Per-read latency for local storage, modeling seek cost.
    pub read_latency: Duration,
}

impl DaemonConfig {
    pub fn new(storage: StorageEndpoint, listen: impl Into<String>) -> DaemonConfig {
        DaemonConfig {
            storage,
            listen: listen.into(),
            workers: 2,
            minimal_sets: MinimalSets::default(),
            cache_budget: DEFAULT_CACHE_BUDGET,
            rate: None,
            burst: DEFAULT_BURST,
            read_latency: Duration::ZERO,
        }
    }
}

/// Hex SHA-256 of the canonical minimal-sets JSON; lets clients confirm
/// which substitution table produced a skim.
pub fn minimal_sets_digest(sets: &MinimalSets) -> String {
    let canonical = serde_json::to_vec(sets).expect("btreemap serializes");
    hex::encode(Sha256::digest(&canonical))
}

pub struct DaemonHandle {
    inner: HttpdHandle,
}

impl DaemonHandle {
    pub fn addr(&self) -> std::net::SocketAddr {
        self.inner.addr()
    }

    pub fn url(&self) -> String {
        self.inner.url()
    }

    pub fn stop(self) {
        self.inner.stop();
    }
}

struct DaemonState {
    config: DaemonConfig,
    client: HttpClient,
    throttle: Option<Arc<Throttle>>,
    digest: String,
}

/// Starts the daemon on background threads.
pub fn start_daemon(config: DaemonConfig) -> Result<DaemonHandle> {
    let listen = config.listen.clone();
    let workers = config.workers.max(1);
    let state = Arc::new(DaemonState {
        throttle: config.rate.map(|r| Arc::new(Throttle::with_burst(r, config.burst))),
        digest: minimal_sets_digest(&config.minimal_sets),
        client: HttpClient::new(),
        config,
    });
    let handler = move |req: &HttpRequest| handle(req, &state);
    let inner = start_httpd(&listen, workers, Arc::new(handler))?;
    Ok(DaemonHandle { inner })
}

/// Blocking variant for the CLI.
pub fn run_daemon(config: DaemonConfig) -> Result<()> {
    let handle = start_daemon(config)?;
    eprintln!("skim daemon on {}", handle.url());
    loop {
        std::thread::sleep(Duration::from_secs(3600));
    }
}

fn handle(request: &HttpRequest, state: &DaemonState) -> HttpReply {
    let path = request.path.split('?').next().unwrap_or("");
    let outcome = match (request.method.as_str(), path) {
        ("GET", "/healthz") => handle_healthz(state),
        ("POST", "/skim") => match std::str::from_utf8(&request.body) {
            Ok(body) => handle_skim(state, body),
            Err(e) => Err((400, format!("unreadable body: {e}"))),
        },
        _ => Err((404, format!("no such endpoint: {path}"))),
    };
    match outcome {
        Ok(reply) => {
            let len = reply.body.len() as u64;
            let body = match &state.throttle {
                Some(t) => ReplyBody::Stream {
                    reader: Box::new(ThrottledReader::new(
                        std::io::Cursor::new(reply.body),
                        Arc::clone(t),
                    )),
                    len,
                },
                None => ReplyBody::Bytes(reply.body),
            };
            HttpReply { status: 200, headers: reply.headers, body }
        }
        Err((status, msg)) => HttpReply::text(status, msg),
    }
}

fn header(name: &str, value: &str) -> (String, String) {
    (name.to_string(), value.to_string())
}

struct Reply {
    headers: Vec<(String, String)>,
    body: Vec<u8>,
}

type Handled = std::result::Result<Reply, (u16, String)>;

fn handle_healthz(state: &DaemonState) -> Handled {
    let reachable = match &state.config.storage {
        StorageEndpoint::Dir(dir) => dir.is_dir(),
        StorageEndpoint::Url(base) => state
            .client
            .head(base)
            .map(|r| r.status < 500)
            .unwrap_or(false),
    };
    let status = if reachable { "ok" } else { "degraded" };
    let body = serde_json::json!({
        "status": status,
        "version": env!("CARGO_PKG_VERSION"),
        "minimal_sets_digest": state.digest,
    });
    Ok(Reply {
        headers: vec![header("Content-Type", "application/json")],
        body: body.to_string().into_bytes(),
    })
}

fn handle_skim(state: &DaemonState, body: &str) -> Handled {
    let query = parse_query(body).map_err(|e| (400, e.to_string()))?;
    let source = open_input(state, &query.input)?;
    let reader = DatasetReader::open(Arc::clone(&source)).map_err(|e| (500, e.to_string()))?;

    // Strict planning: a query naming branches this file does not have is
    // the client's mistake, not something to paper over.
    let plan = build_plan(&query, &reader.header, &state.config.minimal_sets, true)
        .map_err(|e| match e {
            SkimError::Plan(msg) => (422, msg),
            other => (400, other.to_string()),
        })?;

    let cache = PrefetchCache::new(state.config.cache_budget);
    let mut out = Vec::new();
    let result = run_skim(&reader, &plan, &cache, &mut out).map_err(|e| (500, e.to_string()))?;

    Ok(Reply { headers: skim_headers(&result, source.as_ref()), body: out })
}

fn skim_headers(result: &SkimResult, source: &dyn RangeSource) -> Vec<(String, String)> {
    vec![
        header("Content-Type", "application/octet-stream"),
        header("x-skim-n-input", &result.n_input.to_string()),
        header("x-skim-n-passed", &result.n_passed.to_string()),
        header(
            "x-skim-stages",
            &serde_json::to_string(&result.stages).expect("stage stats serialize"),
        ),
        header(
            "x-skim-timings",
            &serde_json::to_string(&result.timing).expect("timings serialize"),
        ),
        header(
            "x-skim-warnings",
            &serde_json::to_string(&result.warnings).expect("warnings serialize"),
        ),
        header("x-skim-storage-bytes", &source.counters().bytes().to_string()),
        header("x-skim-storage-requests", &source.counters().requests().to_string()),
    ]
}

fn open_input(state: &DaemonState, input: &str) -> std::result::Result<Arc<dyn RangeSource>, (u16, String)> {
    match &state.config.storage {
        StorageEndpoint::Dir(dir) => {
            let path = resolve_under(dir, input)
                .ok_or_else(|| (404, format!("bad input path {input:?}")))?;
            if !path.is_file() {
                return Err((404, format!("no such input: {input}")));
            }
            LocalFileSource::open_with_latency(&path, state.config.read_latency)
                .map(|s| Arc::new(s) as Arc<dyn RangeSource>)
                .map_err(|e| (500, e.to_string()))
        }
        StorageEndpoint::Url(base) => {
            let url = format!("{}/{}", base.trim_end_matches('/'), input.trim_start_matches('/'));
            // Probe with HEAD so a missing file is a clean 404 here instead
            // of a mid-skim transport error.
            match state.client.head(&url) {
                Ok(resp) if resp.status == 200 => {}
                Ok(resp) if resp.status == 404 => {
                    return Err((404, format!("no such input: {input}")))
                }
                Ok(resp) => return Err((502, format!("storage returned {}", resp.status))),
                Err(e) => return Err((502, format!("storage unreachable: {e}"))),
            }
            HttpRangeSource::open(Arc::new(HttpClient::new()), url)
                .map(|s| Arc::new(s) as Arc<dyn RangeSource>)
                .map_err(|e| (502, e.to_string()))
        }
    }
}

fn resolve_under(root: &Path, input: &str) -> Option<PathBuf> {
    let rel = Path::new(input.trim_start_matches('/'));
    for comp in rel.components() {
        match comp {
            Component::Normal(_) => {}
            _ => return None,
        }
    }
    Some(root.join(rel))
}

/// Client-side view of one daemon response.
#[derive(Debug)]
pub struct SkimReply {
    pub bytes: Vec<u8>,
    pub n_input: u64,
    pub n_passed: u64,
    pub timing: TimingBreakdown,
    pub warnings: Vec<String>,
    pub storage_bytes: u64,
    pub storage_requests: u64,
    /// Client-side time spent receiving the body.
    pub transfer_seconds: f64,
}

/// Submits a query to a daemon and unpacks the reply.
pub fn submit_skim(client: &HttpClient, daemon_url: &str, query_json: &str) -> Result<SkimReply> {
    let url = format!("{}/skim", daemon_url.trim_end_matches('/'));
    let resp = client.post(&url, "application/json", query_json.as_bytes())?;
    if resp.status != 200 {
        return Err(SkimError::transport(format!(
            "skim request failed with status {}: {}",
            resp.status,
            String::from_utf8_lossy(&resp.body)
        )));
    }
    let num = |name: &str| -> Result<u64> {
        resp.header(name)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| SkimError::transport(format!("missing or bad {name} header")))
    };
    let timing: TimingBreakdown = resp
        .header("x-skim-timings")
        .and_then(|v| serde_json::from_str(v).ok())
        .ok_or_else(|| SkimError::transport("missing x-skim-timings header"))?;
    let warnings: Vec<String> = resp
        .header("x-skim-warnings")
        .and_then(|v| serde_json::from_str(v).ok())
        .unwrap_or_default();
    Ok(SkimReply {
        n_input: num("x-skim-n-input")?,
        n_passed: num("x-skim-n-passed")?,
        storage_bytes: num("x-skim-storage-bytes")?,
        storage_requests: num("x-skim-storage-requests")?,
        timing,
        warnings,
        transfer_seconds: resp.body_elapsed.as_secs_f64(),
        bytes: resp.body,
    })
}
