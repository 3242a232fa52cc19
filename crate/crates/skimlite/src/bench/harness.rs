//! Four-mode benchmark runner.
//!
//! The same query runs four ways against the same stored file:
//!
//! * `client_naive` — event-loop skim at the client, every involved branch
//!   fetched over the throttled link.
//! * `client_opt` — two-phase skim at the client over the same link, with
//!   the prefetch cache coalescing range requests.
//! * `server_side` — two-phase skim running on the storage host against the
//!   local file (no coalescing: local reads are one per basket, each paying
//!   the seek latency), output then shipped over the throttled link.
//! * `near_storage` — the query is POSTed to the skim daemon, which reads
//!   storage over its fast loopback link; only the skimmed file crosses the
//!   throttled link.
//!
//! Every row reports per-phase timings, bytes over the client and storage
//! links, request counts, engine CPU over mode wall, and the pass count.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::colfmt::DatasetReader;
use crate::engine::{run_naive, run_skim};
use crate::error::{Result, SkimError};
use crate::query::plan::{build_plan, MinimalSets};
use crate::query::parse_query;
use crate::service::{start_daemon, submit_skim, DaemonConfig, StorageEndpoint};
use crate::timing::TimingBreakdown;
use crate::transport::http::HttpClient;
use crate::transport::{
    start_server, HttpRangeSource, LocalFileSource, PrefetchCache, RangeSource, ServeConfig,
    ServerHandle, DEFAULT_CACHE_BUDGET,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    ClientNaive,
    ClientOpt,
    ServerSide,
    NearStorage,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::ClientNaive, Mode::ClientOpt, Mode::ServerSide, Mode::NearStorage];

    pub fn name(self) -> &'static str {
        match self {
            Mode::ClientNaive => "client_naive",
            Mode::ClientOpt => "client_opt",
            Mode::ServerSide => "server_side",
            Mode::NearStorage => "near_storage",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = SkimError;

    fn from_str(s: &str) -> Result<Mode> {
        match s {
            "client_naive" => Ok(Mode::ClientNaive),
            "client_opt" => Ok(Mode::ClientOpt),
            "server_side" => Ok(Mode::ServerSide),
            "near_storage" => Ok(Mode::NearStorage),
            other => Err(SkimError::Query(format!("unknown mode {other:?}"))),
        }
    }
}

/// Where the benchmark's moving parts live. Fill it from [`BenchEnv`] for
/// in-process runs or point it at externally started processes.
#[derive(Debug, Clone)]
pub struct Endpoints {
    /// Byte-range server behind the client-rate throttle.
    pub storage_throttled_url: String,
    /// Local directory that same server serves from.
    pub data_dir: PathBuf,
    /// Skim daemon (its response path is throttled at the client rate).
    pub daemon_url: String,
}

/// Knobs shared across modes.
#[derive(Debug, Clone)]
pub struct ModeOptions {
    /// Per-request storage seek latency; must match what the servers use.
    pub read_latency: Duration,
    pub cache_budget: u64,
    /// Disables the prefetch cache in client_opt (per-basket requests).
    pub use_cache: bool,
}

impl Default for ModeOptions {
    fn default() -> Self {
        ModeOptions {
            read_latency: Duration::ZERO,
            cache_budget: DEFAULT_CACHE_BUDGET,
            use_cache: true,
        }
    }
}

/// One benchmark row. `output` carries the skimmed file for cross-mode
/// equivalence checks and is not serialized.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModeRow {
    pub mode: String,
    pub timing: TimingBreakdown,
    /// Wire bytes over the throttled client link, both directions.
    pub client_bytes: u64,
    pub client_requests: u64,
    /// Payload bytes read from storage.
    pub storage_bytes: u64,
    pub storage_requests: u64,
    /// Engine CPU seconds over mode wall seconds.
    pub cpu_ratio: f64,
    pub n_passed: u64,
    pub output_bytes: u64,
    #[serde(skip)]
    pub output: Vec<u8>,
}

/// Runs one mode end to end and returns its report row.
pub fn run_mode(
    mode: Mode,
    endpoints: &Endpoints,
    file_name: &str,
    query_json: &str,
    opts: &ModeOptions,
) -> Result<ModeRow> {
    match mode {
        Mode::ClientNaive => run_client(endpoints, file_name, query_json, opts, false),
        Mode::ClientOpt => run_client(endpoints, file_name, query_json, opts, true),
        Mode::ServerSide => run_server_side(endpoints, file_name, query_json, opts),
        Mode::NearStorage => run_near_storage(endpoints, file_name, query_json),
    }
}

fn client_plan(
    reader: &DatasetReader,
    query_json: &str,
) -> Result<crate::query::plan::ExecPlan> {
    let query = parse_query(query_json)?;
    build_plan(&query, &reader.header, &MinimalSets::default(), false)
}

fn finish_row(
    mode: Mode,
    mut timing: TimingBreakdown,
    wall: f64,
    result_n_passed: u64,
    output: Vec<u8>,
    client: Option<&HttpClient>,
    client_requests: u64,
    storage: (&str, u64, u64),
) -> ModeRow {
    timing.total_wall = wall;
    let (_, storage_bytes, storage_requests) = storage;
    ModeRow {
        mode: mode.name().to_string(),
        cpu_ratio: if wall > 0.0 { timing.cpu_time / wall } else { 0.0 },
        client_bytes: client.map(|c| c.wire_in() + c.wire_out()).unwrap_or(0),
        client_requests,
        storage_bytes,
        storage_requests,
        n_passed: result_n_passed,
        output_bytes: output.len() as u64,
        timing,
        output,
    }
}

fn run_client(
    endpoints: &Endpoints,
    file_name: &str,
    query_json: &str,
    opts: &ModeOptions,
    optimized: bool,
) -> Result<ModeRow> {
    let wall = Instant::now();
    let client = Arc::new(HttpClient::new());
    let url = format!("{}/{file_name}", endpoints.storage_throttled_url.trim_end_matches('/'));
    let source = Arc::new(HttpRangeSource::open(Arc::clone(&client), url)?);
    let reader = DatasetReader::open(Arc::clone(&source) as Arc<dyn RangeSource>)?;
    let plan = client_plan(&reader, query_json)?;

    let mut out = Vec::new();
    let result = if optimized {
        let budget = if opts.use_cache { opts.cache_budget } else { 0 };
        let cache = PrefetchCache::new(budget);
        run_skim(&reader, &plan, &cache, &mut out)?
    } else {
        run_naive(&reader, &plan, &mut out)?
    };

    let storage = ("client", source.counters().bytes(), source.counters().requests());
    let requests = source.counters().requests() + 2; // header preamble + HEAD probe
    Ok(finish_row(
        if optimized { Mode::ClientOpt } else { Mode::ClientNaive },
        result.timing,
        wall.elapsed().as_secs_f64(),
        result.n_passed,
        out,
        Some(&client),
        requests,
        storage,
    ))
}

fn run_server_side(
    endpoints: &Endpoints,
    file_name: &str,
    query_json: &str,
    opts: &ModeOptions,
) -> Result<ModeRow> {
    let wall = Instant::now();
    let path = endpoints.data_dir.join(file_name);
    // Local storage-host read: the prefetch cache detects the local source
    // and degrades to one uncoalesced read per basket, each paying the seek
    // latency.
    let source = Arc::new(LocalFileSource::open_with_latency(&path, opts.read_latency)?);
    let reader = DatasetReader::open(Arc::clone(&source) as Arc<dyn RangeSource>)?;
    let plan = client_plan(&reader, query_json)?;
    let cache = PrefetchCache::new(opts.cache_budget);
    let mut out = Vec::new();
    let mut result = run_skim(&reader, &plan, &cache, &mut out)?;

    // Ship the result over the throttled link: serve it from the storage
    // root and pull it like any other client download.
    let out_name = "bench_server_side_output.skim";
    std::fs::write(endpoints.data_dir.join(out_name), &out)?;
    let client = HttpClient::new();
    let url = format!("{}/{out_name}", endpoints.storage_throttled_url.trim_end_matches('/'));
    let t0 = Instant::now();
    let resp = client.get(&url)?;
    result.timing.result_transfer = t0.elapsed().as_secs_f64();
    let _ = std::fs::remove_file(endpoints.data_dir.join(out_name));
    if resp.status != 200 || resp.body != out {
        return Err(SkimError::transport("server_side output transfer mismatch"));
    }

    let storage = ("local", source.counters().bytes(), source.counters().requests());
    Ok(finish_row(
        Mode::ServerSide,
        result.timing,
        wall.elapsed().as_secs_f64(),
        result.n_passed,
        out,
        Some(&client),
        1,
        storage,
    ))
}

fn run_near_storage(endpoints: &Endpoints, file_name: &str, query_json: &str) -> Result<ModeRow> {
    let wall = Instant::now();
    // The daemon resolves `input` against its own storage; rewrite it so
    // callers can pass the same query document to every mode.
    let mut query: serde_json::Value = serde_json::from_str(query_json)
        .map_err(|e| SkimError::Query(e.to_string()))?;
    query["input"] = serde_json::Value::String(file_name.to_string());
    let query_json = query.to_string();

    let client = HttpClient::new();
    let reply = submit_skim(&client, &endpoints.daemon_url, &query_json)?;
    let mut timing = reply.timing.clone();
    timing.result_transfer = reply.transfer_seconds;

    let storage = ("daemon", reply.storage_bytes, reply.storage_requests);
    Ok(finish_row(
        Mode::NearStorage,
        timing,
        wall.elapsed().as_secs_f64(),
        reply.n_passed,
        reply.bytes,
        Some(&client),
        1,
        storage,
    ))
}

/// In-process benchmark topology: a throttled storage server (the client
/// link), an unthrottled one (the daemon's loopback), and the skim daemon
/// with its response path throttled at the client rate.
pub struct BenchEnv {
    pub endpoints: Endpoints,
    _storage_throttled: ServerHandle,
    _storage_fast: ServerHandle,
    _daemon: crate::service::DaemonHandle,
}

impl BenchEnv {
    pub fn start(
        data_dir: impl Into<PathBuf>,
        rate: u64,
        opts: &ModeOptions,
        minimal_sets: MinimalSets,
    ) -> Result<BenchEnv> {
        let data_dir = data_dir.into();
        let mut throttled = ServeConfig::new(&data_dir, "127.0.0.1:0");
        throttled.rate = Some(rate);
        throttled.read_latency = opts.read_latency;
        let storage_throttled = start_server(throttled)?;

        let mut fast = ServeConfig::new(&data_dir, "127.0.0.1:0");
        fast.read_latency = opts.read_latency;
        let storage_fast = start_server(fast)?;

        let mut daemon_config = DaemonConfig::new(
            StorageEndpoint::Url(storage_fast.url()),
            "127.0.0.1:0",
        );
        daemon_config.rate = Some(rate);
        daemon_config.cache_budget = opts.cache_budget;
        daemon_config.minimal_sets = minimal_sets;
        let daemon = start_daemon(daemon_config)?;

        Ok(BenchEnv {
            endpoints: Endpoints {
                storage_throttled_url: storage_throttled.url(),
                data_dir,
                daemon_url: daemon.url(),
            },
            _storage_throttled: storage_throttled,
            _storage_fast: storage_fast,
            _daemon: daemon,
        })
    }
}

/// The bundled reference query, tuned to pass about 1% of the reference
/// dataset's events.
pub fn reference_query(input: &str, output: &str) -> String {
    serde_json::json!({
        "input": input,
        "output": output,
        "branches": ["Electron_*", "Muon_*", "Jet_*", "MET_*", "HLT_*"],
        "preselection": "nElectron >= 1",
        "object_selections": [
            {"collection": "Electron", "cut": "pt > 25 && abs(eta) < 2.4", "min_count": 1}
        ],
        "derived": {"HT": "sum(Jet_pt)"},
        "event_selection": "HT > 350"
    })
    .to_string()
}

/// Convenience: generate the dataset (if absent), start the in-process
/// topology, and run the requested modes.
pub fn run_bench(
    data_dir: &Path,
    spec: &super::gen::GenSpec,
    modes: &[Mode],
    rate: u64,
    opts: &ModeOptions,
) -> Result<Vec<ModeRow>> {
    let file_name = "bench_input.skim";
    let path = data_dir.join(file_name);
    if !path.is_file() {
        super::gen::write_file(spec, &path)?;
    }
    let env = BenchEnv::start(data_dir, rate, opts, MinimalSets::default())?;
    let query = reference_query(file_name, "bench_output.skim");
    let mut rows = Vec::new();
    for &mode in modes {
        rows.push(run_mode(mode, &env.endpoints, file_name, &query, opts)?);
    }
    if let Some(first) = rows.first() {
        if rows.iter().any(|r| r.n_passed != first.n_passed) {
            return Err(SkimError::format(
                "modes disagree on the passing event count; benchmark invalid",
            ));
        }
    }
    Ok(rows)
}
