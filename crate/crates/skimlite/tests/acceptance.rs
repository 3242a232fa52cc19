//! Acceptance gate: one test per release criterion. Every test prints a
//! single `criterion NN PASS` line on success; tolerances are pinned as
//! constants next to the assertions they feed.

mod common;

use std::sync::{Arc, Mutex, OnceLock};
use std::time::{Duration, Instant};

use rand::prelude::*;

use skimlite::bench::harness::{reference_query, run_bench, BenchEnv, Mode, ModeOptions};
use skimlite::bench::gen::{self, GenSpec};
use skimlite::colfmt::{
    write_dataset, BranchSpec, Codec, ColumnData, ColumnInput, DatasetReader, ValueType,
};
use skimlite::engine::run_skim;
use skimlite::query::parse_query;
use skimlite::query::plan::{build_plan, MinimalSets};
use skimlite::service::{start_daemon, submit_skim, DaemonConfig, StorageEndpoint};
use skimlite::transport::{
    GuardedSource, HttpClient, MemSource, PrefetchCache, RangeSource, Throttle, ThrottledReader,
};

use common::{
    assert_output_matches, oracle_skim, rand_dataset, rand_query, test_rng, MatDataset,
};

/// Serializes the wall-clock-sensitive criteria so they never compete for
/// CPU or bandwidth with each other.
fn timing_lock() -> std::sync::MutexGuard<'static, ()> {
    static LOCK: OnceLock<Mutex<()>> = OnceLock::new();
    LOCK.get_or_init(|| Mutex::new(()))
        .lock()
        .unwrap_or_else(|e| e.into_inner())
}

fn pass(n: u32, what: &str) {
    println!("criterion {n:02} PASS — {what}");
}

// ---------------------------------------------------------------------------

const C1_CASES: usize = 200;
const C1_BUDGET_SECS: f64 = 60.0;

#[test]
fn criterion_01_format_round_trips_bit_exact() {
    let start = Instant::now();
    let mut rng = test_rng(0xC1);
    for case in 0..C1_CASES {
        let n_events = match case % 5 {
            0 => 0,
            1 => 1,
            _ => rng.random_range(2..1500),
        } as u64;
        let basket_target = *[32usize, 64, 256, 1024, 8192].choose(&mut rng).unwrap();
        let codec = *[Codec::None, Codec::Lz4, Codec::Deflate].choose(&mut rng).unwrap();

        let mut schema = Vec::new();
        let mut columns = Vec::new();
        // A couple of jagged collections plus scalars of every value type.
        for c in 0..rng.random_range(0..3usize) {
            let counter = format!("nC{c}");
            let counts: Vec<u32> = (0..n_events).map(|_| rng.random_range(0..5)).collect();
            let total: usize = counts.iter().map(|&x| x as usize).sum();
            schema.push(BranchSpec::scalar(&counter, ValueType::I32));
            columns.push(ColumnInput::scalar(ColumnData::I32(
                counts.iter().map(|&x| x as i32).collect(),
            )));
            for f in 0..rng.random_range(1..4usize) {
                let vt = *[
                    ValueType::F32,
                    ValueType::F64,
                    ValueType::I32,
                    ValueType::U8,
                    ValueType::Bool,
                ]
                .choose(&mut rng)
                .unwrap();
                schema.push(BranchSpec::jagged(format!("C{c}_f{f}"), vt, &counter));
                columns.push(ColumnInput::jagged(rand_column(&mut rng, vt, total), counts.clone()));
            }
        }
        for s in 0..rng.random_range(1..5usize) {
            let vt = *[
                ValueType::F32,
                ValueType::F64,
                ValueType::I32,
                ValueType::U8,
                ValueType::Bool,
            ]
            .choose(&mut rng)
            .unwrap();
            schema.push(BranchSpec::scalar(format!("s{s}"), vt));
            columns.push(ColumnInput::scalar(rand_column(&mut rng, vt, n_events as usize)));
        }

        let mut file = Vec::new();
        write_dataset(&schema, &columns, n_events, basket_target, codec, &mut file)
            .unwrap_or_else(|e| panic!("case {case}: write failed: {e}"));
        let reader = DatasetReader::open(Arc::new(MemSource::local(file)))
            .unwrap_or_else(|e| panic!("case {case}: open failed: {e}"));
        assert_eq!(reader.header.n_events, n_events, "case {case}");
        assert_eq!(reader.header.branches.len(), schema.len(), "case {case}");
        for (i, (spec, input)) in schema.iter().zip(&columns).enumerate() {
            let meta = &reader.header.branches[i];
            assert_eq!(meta.name, spec.name, "case {case}");
            assert_eq!(meta.kind, spec.kind, "case {case}");
            assert_eq!(meta.value_type, spec.value_type, "case {case}");
            let (data, counts) = reader
                .read_full_column(i)
                .unwrap_or_else(|e| panic!("case {case} branch {}: {e}", spec.name));
            assert_eq!(data, input.data, "case {case} branch {}: values differ", spec.name);
            assert_eq!(counts, input.counts, "case {case} branch {}: counts differ", spec.name);
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < C1_BUDGET_SECS, "round trips took {elapsed:.1}s, budget {C1_BUDGET_SECS}s");
    pass(1, &format!("{C1_CASES} randomized files round-tripped bit-exact in {elapsed:.1}s"));
}

fn rand_column(rng: &mut rand_chacha::ChaCha8Rng, vt: ValueType, n: usize) -> ColumnData {
    match vt {
        ValueType::F32 => ColumnData::F32((0..n).map(|_| rng.random_range(-1e6..1e6)).collect()),
        ValueType::F64 => ColumnData::F64((0..n).map(|_| rng.random_range(-1e9..1e9)).collect()),
        ValueType::I32 => ColumnData::I32((0..n).map(|_| rng.random()).collect()),
        ValueType::U8 => ColumnData::U8((0..n).map(|_| rng.random()).collect()),
        ValueType::Bool => ColumnData::Bool((0..n).map(|_| rng.random_bool(0.5)).collect()),
    }
}

// ---------------------------------------------------------------------------

const C2_CASES: usize = 50;
const C2_MAX_EVENTS: u64 = 10_000;
const C2_BUDGET_SECS: f64 = 300.0;
/// Fast link so this criterion measures agreement, not bandwidth.
const C2_RATE: u64 = 500_000_000;

#[test]
fn criterion_02_all_modes_agree_with_brute_force() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let opts = ModeOptions::default();
    let env = BenchEnv::start(dir.path(), C2_RATE, &opts, MinimalSets::default()).unwrap();

    let mut rng = test_rng(0xC2);
    for case in 0..C2_CASES {
        let (file, _) = rand_dataset(&mut rng, C2_MAX_EVENTS);
        let name = format!("ds_{case:03}.skim");
        std::fs::write(dir.path().join(&name), &file).unwrap();
        let query_json = rand_query(&mut rng, &name, "out.skim");

        let ds = MatDataset::read(&file);
        let query = parse_query(&query_json).unwrap();
        let verdict = oracle_skim(&ds, &query);

        for mode in Mode::ALL {
            let row = skimlite::bench::harness::run_mode(
                mode,
                &env.endpoints,
                &name,
                &query_json,
                &opts,
            )
            .unwrap_or_else(|e| panic!("case {case} {}: {e}\nquery: {query_json}", mode.name()));
            assert_eq!(
                row.n_passed,
                verdict.passing.len() as u64,
                "case {case} {}: pass count\nquery: {query_json}",
                mode.name()
            );
            assert_output_matches(&ds, &verdict, &row.output);
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < C2_BUDGET_SECS, "agreement suite took {elapsed:.1}s");
    pass(2, &format!("{C2_CASES} random queries × 4 modes matched brute force in {elapsed:.1}s"));
}

// ---------------------------------------------------------------------------

/// Block-structured spec whose inactive blocks align with whole baskets.
fn blocky_spec() -> GenSpec {
    GenSpec {
        n_events: 20_000,
        seed: 11,
        basket_target: 4096, // 1024 events per f32 basket == one block
        codec: Codec::Lz4,
        block_len: 1024,
        active_fraction: 0.3,
        hlt_paths: 5,
        extra_scalars: 5,
    }
}

const C34_QUERY: &str = r#"{
    "input": "mem", "output": "out.skim",
    "branches": ["Electron_pt", "Electron_eta", "MET_pt", "Jet_pt"],
    "preselection": "nElectron >= 1",
    "object_selections": [{"collection": "Electron", "cut": "pt > 25", "min_count": 1}]
}"#;

#[test]
fn criterion_03_phase_two_fetches_exactly_the_needed_baskets() {
    let spec = blocky_spec();
    let (schema, columns) = gen::generate(&spec);
    let mut file = Vec::new();
    write_dataset(&schema, &columns, spec.n_events, spec.basket_target, spec.codec, &mut file)
        .unwrap();

    let ds = MatDataset::read(&file);
    let query = parse_query(C34_QUERY).unwrap();
    let verdict = oracle_skim(&ds, &query);
    assert!(!verdict.passing.is_empty(), "query must select something");
    assert!(
        (verdict.passing.len() as u64) < spec.n_events / 2,
        "query must also reject plenty"
    );

    let reader = DatasetReader::open(Arc::new(MemSource::new(file))).unwrap();
    let plan = build_plan(&query, &reader.header, &MinimalSets::default(), false).unwrap();
    let cache = PrefetchCache::default();
    let mut out = Vec::new();
    let result = run_skim(&reader, &plan, &cache, &mut out).unwrap();
    assert_eq!(result.passing_events, verdict.passing, "engine disagrees with oracle");

    // Independently derived expectation: for every output branch, exactly
    // the baskets whose event range holds at least one passing event.
    let mut expected = Vec::new();
    for name in &plan.branch_plan.output {
        let bi = reader.header.branch_index(name).unwrap();
        let meta = &reader.header.branches[bi];
        for b in 0..meta.baskets.len() {
            let (s, e) = meta.basket_event_range(b, reader.header.n_events);
            if verdict.passing.iter().any(|&ev| ev >= s && ev < e) {
                expected.push((bi as u32, b as u32));
            }
        }
    }
    let mut got = result.phase2_keys.clone();
    expected.sort_unstable();
    got.sort_unstable();
    assert_eq!(got, expected, "phase-2 basket set mismatch");

    // And the skipped ones exist: some baskets held no passing event.
    let total_output_baskets: usize = plan
        .branch_plan
        .output
        .iter()
        .map(|n| reader.header.branches[reader.header.branch_index(n).unwrap()].baskets.len())
        .sum();
    assert!(
        expected.len() < total_output_baskets,
        "every basket was needed; the dataset is not selective enough to prove anything"
    );
    pass(
        3,
        &format!(
            "phase 2 fetched exactly {}/{} output baskets, all holding passing events",
            expected.len(),
            total_output_baskets
        ),
    );
}

#[test]
fn criterion_04_rejected_events_never_touch_output_only_bytes() {
    let spec = blocky_spec();
    let (schema, columns) = gen::generate(&spec);
    let mut file = Vec::new();
    write_dataset(&schema, &columns, spec.n_events, spec.basket_target, spec.codec, &mut file)
        .unwrap();

    // Same branches as above, but a preselection nothing satisfies: the
    // whole selection phase runs, then phase 2 has nothing to fetch.
    let query_json = C34_QUERY.replace("nElectron >= 1", "nElectron >= 50");
    let query = parse_query(&query_json).unwrap();

    let inner = Arc::new(MemSource::new(file));
    let guard = Arc::new(GuardedSource::new(inner));
    let reader = DatasetReader::open(Arc::clone(&guard) as Arc<dyn RangeSource>).unwrap();
    let plan = build_plan(&query, &reader.header, &MinimalSets::default(), false).unwrap();

    // Deny every byte of every output-only basket, then run. A transport
    // guard (not engine bookkeeping) proves the isolation.
    let output_only = plan.branch_plan.output_only();
    assert!(output_only.contains(&"MET_pt".to_string()));
    let mut denied = Vec::new();
    for name in &output_only {
        let meta = &reader.header.branches[reader.header.branch_index(name).unwrap()];
        for b in &meta.baskets {
            denied.push((b.file_offset, b.file_offset + b.compressed_len as u64));
        }
    }
    assert!(!denied.is_empty());
    guard.deny_ranges(denied);

    let cache = PrefetchCache::default();
    let mut out = Vec::new();
    let result = run_skim(&reader, &plan, &cache, &mut out).unwrap();
    assert_eq!(result.n_passed, 0);
    assert_eq!(guard.violations(), 0, "engine touched output-only bytes");
    pass(4, "all-rejecting run read zero output-only bytes (transport-enforced)");
}

// ---------------------------------------------------------------------------

const C5_HLT_BRANCHES: usize = 650;
const C5_MINIMAL_SET: usize = 23;

#[test]
fn criterion_05_minimal_set_substitution() {
    let n_events = 64u64;
    let mut schema = Vec::new();
    let mut columns = Vec::new();
    for i in 0..C5_HLT_BRANCHES {
        schema.push(BranchSpec::scalar(format!("HLT_path{i:03}"), ValueType::Bool));
        columns.push(ColumnInput::scalar(ColumnData::Bool(vec![i % 2 == 0; n_events as usize])));
    }
    schema.push(BranchSpec::scalar("met", ValueType::F64));
    columns.push(ColumnInput::scalar(ColumnData::F64(vec![1.0; n_events as usize])));
    let mut file = Vec::new();
    write_dataset(&schema, &columns, n_events, 4096, Codec::Lz4, &mut file).unwrap();
    let reader = DatasetReader::open(Arc::new(MemSource::local(file))).unwrap();

    let keep: Vec<String> = (0..C5_MINIMAL_SET).map(|i| format!("HLT_path{:03}", i * 7)).collect();
    let sets = MinimalSets::from_json(
        &serde_json::json!({ "HLT_": keep }).to_string(),
    )
    .unwrap();

    let query = parse_query(
        r#"{"input": "f", "output": "o", "branches": ["HLT_*"]}"#,
    )
    .unwrap();
    let plan = build_plan(&query, &reader.header, &sets, false).unwrap();
    assert_eq!(plan.branch_plan.output.len(), C5_MINIMAL_SET);
    let excluded = C5_HLT_BRANCHES - C5_MINIMAL_SET;
    assert!(
        plan.warnings.iter().any(|w| w.contains(&format!("excluding {excluded}"))),
        "no warning names the {excluded} exclusions: {:?}",
        plan.warnings
    );

    let query_all = parse_query(
        r#"{"input": "f", "output": "o", "branches": ["HLT_*"], "force_all": true}"#,
    )
    .unwrap();
    let plan_all = build_plan(&query_all, &reader.header, &sets, false).unwrap();
    assert_eq!(plan_all.branch_plan.output.len(), C5_HLT_BRANCHES);
    pass(
        5,
        &format!(
            "{C5_HLT_BRANCHES}-trigger wildcard kept {C5_MINIMAL_SET} (warned about {excluded}), force_all kept all"
        ),
    );
}

// ---------------------------------------------------------------------------

const C6_RATE: u64 = 10_000_000; // 10 MB/s client link
const C6_SEEK: Duration = Duration::from_micros(750);
const C6_MIN_NEAR_STORAGE_SPEEDUP: f64 = 5.0;
const C6_BUDGET_SECS: f64 = 600.0;

#[test]
fn criterion_06_mode_ordering_on_the_reference_workload() {
    let _lock = timing_lock();
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let opts = ModeOptions { read_latency: C6_SEEK, ..ModeOptions::default() };
    let rows = run_bench(dir.path(), &GenSpec::reference(), &Mode::ALL, C6_RATE, &opts).unwrap();
    let wall = |name: &str| {
        rows.iter()
            .find(|r| r.mode == name)
            .map(|r| r.timing.total_wall)
            .unwrap()
    };
    let (naive, opt, server, near) = (
        wall("client_naive"),
        wall("client_opt"),
        wall("server_side"),
        wall("near_storage"),
    );
    let summary = format!(
        "naive {naive:.1}s > opt {opt:.1}s > server {server:.1}s > near {near:.1}s"
    );
    assert!(naive > opt && opt > server && server > near, "ordering violated: {summary}");
    assert!(
        naive / near >= C6_MIN_NEAR_STORAGE_SPEEDUP,
        "near-storage speedup {:.1}x below {C6_MIN_NEAR_STORAGE_SPEEDUP}x ({summary})",
        naive / near
    );
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < C6_BUDGET_SECS, "criterion took {elapsed:.0}s");
    pass(
        6,
        &format!("{summary}; near-storage {:.1}x over naive in {elapsed:.0}s", naive / near),
    );
}

// ---------------------------------------------------------------------------

const C7_SEEDS: [u64; 3] = [101, 202, 303];

#[test]
fn criterion_07_deflate_trades_cpu_for_size_against_lz4() {
    let _lock = timing_lock();
    for seed in C7_SEEDS {
        let spec = GenSpec {
            n_events: 20_000,
            seed,
            basket_target: 16 * 1024,
            codec: Codec::Lz4,
            block_len: 2048,
            active_fraction: 0.4,
            hlt_paths: 10,
            extra_scalars: 10,
        };
        let (schema, columns) = gen::generate(&spec);
        let mut lz4 = Vec::new();
        write_dataset(&schema, &columns, spec.n_events, spec.basket_target, Codec::Lz4, &mut lz4)
            .unwrap();
        let mut deflate = Vec::new();
        write_dataset(
            &schema,
            &columns,
            spec.n_events,
            spec.basket_target,
            Codec::Deflate,
            &mut deflate,
        )
        .unwrap();
        assert!(
            deflate.len() < lz4.len(),
            "seed {seed}: deflate file {} not smaller than lz4 {}",
            deflate.len(),
            lz4.len()
        );

        // Same query over both files; the heavier codec must cost more
        // decompression time.
        let query = parse_query(
            r#"{"input": "f", "output": "o",
                "branches": ["Electron_pt", "Jet_pt", "MET_pt"],
                "preselection": "nElectron >= 0"}"#,
        )
        .unwrap();
        let decompress_time = |file: Vec<u8>| {
            let reader = DatasetReader::open(Arc::new(MemSource::local(file))).unwrap();
            let plan = build_plan(&query, &reader.header, &MinimalSets::default(), false).unwrap();
            let cache = PrefetchCache::default();
            let mut out = Vec::new();
            run_skim(&reader, &plan, &cache, &mut out).unwrap().timing.decompress
        };
        let t_lz4 = decompress_time(lz4);
        let t_deflate = decompress_time(deflate);
        assert!(
            t_deflate > t_lz4,
            "seed {seed}: deflate decompress {t_deflate:.4}s not above lz4 {t_lz4:.4}s"
        );
    }
    pass(7, "deflate produced smaller files and longer decompress phases on 3 seeds");
}

// ---------------------------------------------------------------------------

const C8_OVERHEAD_FACTOR: f64 = 1.05;

#[test]
fn criterion_08_near_storage_moves_only_the_result() {
    let dir = tempfile::tempdir().unwrap();
    gen::write_file(&GenSpec::small(), dir.path().join("in.skim")).unwrap();
    let daemon = start_daemon(DaemonConfig::new(
        StorageEndpoint::Dir(dir.path().to_path_buf()),
        "127.0.0.1:0",
    ))
    .unwrap();

    // A wide output so the 5% allowance dwarfs fixed header overhead.
    let query = serde_json::json!({
        "input": "in.skim", "output": "o.skim",
        "branches": ["Electron_pt", "Electron_eta", "Jet_pt", "Jet_eta", "MET_pt"],
        "preselection": "nElectron >= 0"
    })
    .to_string();
    let client = HttpClient::new();
    let reply = submit_skim(&client, &daemon.url(), &query).unwrap();
    assert!(reply.bytes.len() > 50_000, "output too small to be meaningful");

    let client_bytes = (client.wire_in() + client.wire_out()) as f64;
    let request_size = client.wire_out() as f64;
    let bound = C8_OVERHEAD_FACTOR * (reply.bytes.len() as f64 + request_size);
    assert!(
        client_bytes <= bound,
        "client link moved {client_bytes} bytes, bound {bound:.0} (output {})",
        reply.bytes.len()
    );
    daemon.stop();
    pass(
        8,
        &format!(
            "client link carried {:.0} bytes for a {}-byte result (bound {:.0})",
            client_bytes,
            reply.bytes.len(),
            bound
        ),
    );
}

// ---------------------------------------------------------------------------

const C9_MAX_REQUEST_RATIO: f64 = 0.20;

#[test]
fn criterion_09_cache_collapses_request_count() {
    // Fine-grained baskets inside coarse activity blocks: passing events
    // cluster into long byte-contiguous basket runs, which is the layout
    // the coalescing prefetcher exists for.
    let spec = GenSpec {
        n_events: 100_000,
        seed: 42,
        basket_target: 4096,
        codec: Codec::Lz4,
        block_len: 16_384,
        active_fraction: 0.3,
        hlt_paths: 10,
        extra_scalars: 20,
    };
    let (schema, columns) = gen::generate(&spec);
    let mut file = Vec::new();
    write_dataset(&schema, &columns, spec.n_events, spec.basket_target, spec.codec, &mut file)
        .unwrap();

    let query = parse_query(&reference_query("mem", "out.skim")).unwrap();
    let source = Arc::new(MemSource::new(file));
    let reader = DatasetReader::open(Arc::clone(&source) as Arc<dyn RangeSource>).unwrap();
    let plan = build_plan(&query, &reader.header, &MinimalSets::default(), false).unwrap();
    let cache = PrefetchCache::default();
    let mut out = Vec::new();
    let result = run_skim(&reader, &plan, &cache, &mut out).unwrap();
    let cached_requests = source.counters().requests();

    // Without a cache every needed basket is its own range request:
    // every criteria basket, plus every phase-2 basket, plus the two
    // header reads. Counted from the header, not from the engine.
    let criteria_baskets: u64 = plan
        .branch_plan
        .criteria
        .iter()
        .map(|n| reader.header.branches[reader.header.branch_index(n).unwrap()].baskets.len() as u64)
        .sum();
    let uncached_requests = criteria_baskets + result.phase2_keys.len() as u64 + 2;

    let ratio = cached_requests as f64 / uncached_requests as f64;
    assert!(
        ratio <= C9_MAX_REQUEST_RATIO,
        "cache made {cached_requests} requests vs {uncached_requests} uncached ({ratio:.3})"
    );
    pass(
        9,
        &format!(
            "prefetch cache: {cached_requests} requests vs {uncached_requests} uncached ({:.1}% of baseline)",
            ratio * 100.0
        ),
    );
}

// ---------------------------------------------------------------------------

const C10_RATE: u64 = 1_000_000; // 1 MB/s
const C10_PAYLOAD: u64 = 10_000_000; // 10 MB
const C10_TOLERANCE: f64 = 0.15;

#[test]
fn criterion_10_throttle_delivers_the_configured_rate() {
    let _lock = timing_lock();
    let data = vec![0u8; C10_PAYLOAD as usize];
    let throttle = Arc::new(Throttle::new(C10_RATE));
    let mut reader = ThrottledReader::new(&data[..], throttle);
    let start = Instant::now();
    let n = std::io::copy(&mut reader, &mut std::io::sink()).unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    assert_eq!(n, C10_PAYLOAD);
    let measured = C10_PAYLOAD as f64 / elapsed;
    let lo = C10_RATE as f64 * (1.0 - C10_TOLERANCE);
    let hi = C10_RATE as f64 * (1.0 + C10_TOLERANCE);
    assert!(
        measured >= lo && measured <= hi,
        "measured {measured:.0} B/s outside [{lo:.0}, {hi:.0}]"
    );
    pass(
        10,
        &format!("10 MB at a 1 MB/s cap delivered {:.3} MB/s", measured / 1e6),
    );
}
