//! Command-line front end: dataset inspection and generation, the range
//! file server, the skim daemon, one-shot skims, and the benchmark runner.

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use clap::{Parser, Subcommand};

use skimlite::bench::{gen, harness, BenchReport, GenSpec, Mode, ModeOptions};
use skimlite::colfmt::{BranchKind, DatasetReader};
use skimlite::engine::{run_naive, run_skim};
use skimlite::query::plan::{build_plan, MinimalSets};
use skimlite::query::parse_query;
use skimlite::service::{run_daemon, DaemonConfig, StorageEndpoint};
use skimlite::transport::http::HttpClient;
use skimlite::transport::{
    serve, HttpRangeSource, LocalFileSource, PrefetchCache, RangeSource, ServeConfig,
};
use skimlite::{Result, SkimError};

#[derive(Parser)]
#[command(name = "skimlite", version, about = "Near-storage event skimming")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print a dataset's header summary.
    Inspect {
        path: PathBuf,
        /// List every branch with its basket layout.
        #[arg(long)]
        branches: bool,
    },
    /// Generate a benchmark dataset.
    Gen {
        /// Generator spec JSON; defaults to the reference spec.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Built-in spec: "reference" or "small".
        #[arg(long, default_value = "reference", conflicts_with = "spec")]
        preset: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve a directory over HTTP byte ranges.
    Serve {
        #[arg(long)]
        root: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        listen: String,
        /// Bandwidth cap in bytes/s.
        #[arg(long)]
        rate: Option<u64>,
        /// Per-request seek latency in milliseconds (fractional allowed).
        #[arg(long, default_value_t = 0.0)]
        read_latency_ms: f64,
    },
    /// Run the skim daemon.
    Skimd {
        /// Local directory or http:// base URL the daemon reads inputs from.
        #[arg(long)]
        storage: String,
        #[arg(long, default_value = "127.0.0.1:8081")]
        listen: String,
        #[arg(long, default_value_t = 2)]
        workers: usize,
        /// Minimal-sets JSON file (wildcard prefix -> branch list).
        #[arg(long)]
        minimal_sets: Option<PathBuf>,
        /// Response bandwidth cap in bytes/s.
        #[arg(long)]
        rate: Option<u64>,
        #[arg(long, default_value_t = 100 * 1024 * 1024)]
        cache_budget: u64,
        #[arg(long, default_value_t = 0.0)]
        read_latency_ms: f64,
    },
    /// Run a query locally: read the input (file path or URL), write the
    /// output file named by the query.
    Skim {
        /// Query JSON file.
        #[arg(long)]
        query: PathBuf,
        #[arg(long)]
        minimal_sets: Option<PathBuf>,
        /// Use the single-phase baseline instead of the two-phase engine.
        #[arg(long)]
        naive: bool,
    },
    /// Run the four-mode benchmark and write reports.
    Bench {
        /// Working directory for the dataset and servers.
        #[arg(long)]
        dir: PathBuf,
        /// Generator spec JSON; defaults to the reference spec.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Comma-separated modes (client_naive,client_opt,server_side,near_storage).
        #[arg(long, default_value = "client_naive,client_opt,server_side,near_storage")]
        modes: String,
        /// Client-link throttle in bytes/s.
        #[arg(long, default_value_t = 10_000_000)]
        rate: u64,
        /// Per-storage-access seek latency in milliseconds (fractional allowed).
        #[arg(long, default_value_t = 0.75)]
        read_latency_ms: f64,
        /// Disable the prefetch cache in client_opt.
        #[arg(long)]
        no_cache: bool,
        /// Directory for report.json / report.csv; defaults to --dir.
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Inspect { path, branches } => inspect(&path, branches),
        Command::Gen { spec, preset, out } => {
            let spec = match spec {
                Some(path) => serde_json::from_str(&std::fs::read_to_string(path)?)
                    .map_err(|e| SkimError::Query(format!("bad generator spec: {e}")))?,
                None => match preset.as_str() {
                    "reference" => GenSpec::reference(),
                    "small" => GenSpec::small(),
                    other => return Err(SkimError::Query(format!("unknown preset {other:?}"))),
                },
            };
            let header = gen::write_file(&spec, &out)?;
            println!(
                "wrote {} ({} events, {} branches)",
                out.display(),
                header.n_events,
                header.branches.len()
            );
            Ok(())
        }
        Command::Serve { root, listen, rate, read_latency_ms } => {
            let mut config = ServeConfig::new(root, listen);
            config.rate = rate;
            config.read_latency = latency_from_ms(read_latency_ms);
            serve(config)
        }
        Command::Skimd {
            storage,
            listen,
            workers,
            minimal_sets,
            rate,
            cache_budget,
            read_latency_ms,
        } => {
            let endpoint = if storage.starts_with("http://") {
                StorageEndpoint::Url(storage)
            } else {
                StorageEndpoint::Dir(PathBuf::from(storage))
            };
            let mut config = DaemonConfig::new(endpoint, listen);
            config.workers = workers;
            config.rate = rate;
            config.cache_budget = cache_budget;
            config.read_latency = latency_from_ms(read_latency_ms);
            if let Some(path) = minimal_sets {
                config.minimal_sets = MinimalSets::load(path)?;
            }
            run_daemon(config)
        }
        Command::Skim { query, minimal_sets, naive } => {
            let sets = match minimal_sets {
                Some(path) => MinimalSets::load(path)?,
                None => MinimalSets::default(),
            };
            skim_once(&std::fs::read_to_string(query)?, &sets, naive)
        }
        Command::Bench { dir, spec, modes, rate, read_latency_ms, no_cache, report } => {
            let spec = match spec {
                Some(path) => serde_json::from_str(&std::fs::read_to_string(path)?)
                    .map_err(|e| SkimError::Query(format!("bad generator spec: {e}")))?,
                None => GenSpec::reference(),
            };
            let modes: Vec<Mode> = modes
                .split(',')
                .map(|m| m.trim().parse())
                .collect::<Result<_>>()?;
            bench(&dir, spec, &modes, rate, read_latency_ms, no_cache, report)
        }
    }
}

fn inspect(path: &PathBuf, list_branches: bool) -> Result<()> {
    let source = Arc::new(LocalFileSource::open(path)?);
    let reader = DatasetReader::open(source)?;
    let h = &reader.header;
    let total_baskets: usize = h.branches.iter().map(|b| b.baskets.len()).sum();
    let data_bytes: u64 = h
        .branches
        .iter()
        .flat_map(|b| &b.baskets)
        .map(|b| b.compressed_len as u64)
        .sum();
    println!("{}", path.display());
    println!("  format version {}", h.format_version);
    println!("  {} events, {} branches, {} baskets", h.n_events, h.branches.len(), total_baskets);
    println!("  header {} bytes, basket data {} bytes", h.header_length, data_bytes);
    if list_branches {
        for b in &h.branches {
            let compressed: u64 = b.baskets.iter().map(|k| k.compressed_len as u64).sum();
            let kind = match b.kind {
                BranchKind::Scalar => "scalar",
                BranchKind::Jagged => "jagged",
            };
            println!(
                "  {:<32} {:<6} {:?}{} {:>3} baskets {:>10} bytes",
                b.name,
                kind,
                b.value_type,
                b.counter_branch
                    .as_deref()
                    .map(|c| format!(" (counts: {c})"))
                    .unwrap_or_default(),
                b.baskets.len(),
                compressed,
            );
        }
    }
    Ok(())
}

fn skim_once(query_json: &str, sets: &MinimalSets, naive: bool) -> Result<()> {
    let query = parse_query(query_json)?;
    let source: Arc<dyn RangeSource> = if query.input.starts_with("http://") {
        Arc::new(HttpRangeSource::open(Arc::new(HttpClient::new()), query.input.clone())?)
    } else {
        Arc::new(LocalFileSource::open(&query.input)?)
    };
    let reader = DatasetReader::open(source)?;
    let plan = build_plan(&query, &reader.header, sets, false)?;
    for w in &plan.warnings {
        eprintln!("warning: {w}");
    }
    let mut out = std::io::BufWriter::new(std::fs::File::create(&query.output)?);
    let result = if naive {
        run_naive(&reader, &plan, &mut out)?
    } else {
        let cache = PrefetchCache::default();
        run_skim(&reader, &plan, &cache, &mut out)?
    };
    println!(
        "{} / {} events passed -> {} ({} bytes)",
        result.n_passed, result.n_input, query.output, result.output_bytes
    );
    for s in &result.stages {
        println!("  {:<24} {:>8} -> {:>8}", s.stage, s.input, s.passed);
    }
    println!(
        "  fetch {:.3}s decompress {:.3}s deserialize {:.3}s select {:.3}s write {:.3}s (wall {:.3}s)",
        result.timing.basket_fetch,
        result.timing.decompress,
        result.timing.deserialize,
        result.timing.select,
        result.timing.write,
        result.timing.total_wall,
    );
    Ok(())
}

fn latency_from_ms(ms: f64) -> Duration {
    Duration::from_secs_f64(ms.max(0.0) / 1000.0)
}

fn bench(
    dir: &PathBuf,
    spec: GenSpec,
    modes: &[Mode],
    rate: u64,
    read_latency_ms: f64,
    no_cache: bool,
    report_dir: Option<PathBuf>,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let opts = ModeOptions {
        read_latency: latency_from_ms(read_latency_ms),
        use_cache: !no_cache,
        ..ModeOptions::default()
    };
    eprintln!(
        "benchmark: {} events, {} byte/s client link, {} ms seek",
        spec.n_events, rate, read_latency_ms
    );
    let n_events = spec.n_events;
    let rows = harness::run_bench(dir, &spec, modes, rate, &opts)?;
    let report = BenchReport::new(rate, "bench_input.skim", n_events, rows);
    println!("{}", report.to_table());
    let out_dir = report_dir.unwrap_or_else(|| dir.clone());
    std::fs::create_dir_all(&out_dir)?;
    std::fs::write(out_dir.join("report.json"), report.to_json()?)?;
    std::fs::write(out_dir.join("report.csv"), report.to_csv())?;
    println!("reports in {}", out_dir.display());
    Ok(())
}
