//! The skimming engine.
//!
//! [`run_skim`] executes a plan in two phases. Phase 1 walks every event
//! through the selection stages — preselection, object selections, derived
//! quantities, event selection — reading only criteria branches, lazily and
//! with short-circuiting, so an event failing the preselection never touches
//! the later branches. Phase 2 fetches exactly the output baskets that
//! contain at least one passing event and copies the surviving rows into a
//! new file.
//!
//! [`run_naive`] is the baseline it is measured against: a traditional
//! event-loop skim that materializes every involved branch for every event
//! before deciding anything.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::colfmt::{
    decompress_basket, deserialize_basket, locate_basket, write_dataset, BranchKind, BranchSpec,
    Codec, ColumnData, ColumnInput, ColumnSlice, DatasetReader, DEFAULT_BASKET_TARGET,
};
use crate::error::{Result, SkimError};
use crate::query::plan::{ExecPlan, PlannedAggregate};
use crate::query::{AggregateSpec, BinOp, ExprNode};
use crate::timing::{thread_cpu_time, TimingBreakdown};
use crate::transport::PrefetchCache;

/// A runtime value: selections are flags, everything else is a number.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Value {
    Num(f64),
    Flag(bool),
}

impl Value {
    pub fn as_num(self) -> Result<f64> {
        match self {
            Value::Num(x) => Ok(x),
            Value::Flag(_) => Err(SkimError::plan("flag used as a number")),
        }
    }

    pub fn as_flag(self) -> Result<bool> {
        match self {
            Value::Flag(b) => Ok(b),
            Value::Num(_) => Err(SkimError::plan("number used as a flag")),
        }
    }
}

/// Per-event data access the evaluator runs against. `object_index` is set
/// when evaluating inside an object-selection cut; scalar branches broadcast
/// in that context.
pub trait EventView {
    fn ident(&mut self, branch: &str, object_index: Option<usize>) -> Result<Value>;
    fn n_objects(&mut self, counter: &str) -> Result<usize>;
    /// All values of a jagged numeric branch for the current event.
    fn values_f64(&mut self, branch: &str) -> Result<Vec<f64>>;
}

struct EvalEnv<'a> {
    view: &'a mut dyn EventView,
    object_index: Option<usize>,
    derived: &'a BTreeMap<String, f64>,
}

/// Evaluates an expression tree. `&&` and `||` short-circuit, so branches
/// referenced only on the untaken side are never loaded.
fn eval(expr: &ExprNode, env: &mut EvalEnv) -> Result<Value> {
    match expr {
        ExprNode::Number(x) => Ok(Value::Num(*x)),
        ExprNode::Bool(b) => Ok(Value::Flag(*b)),
        ExprNode::Ident(name) => {
            if env.object_index.is_none() {
                if let Some(&x) = env.derived.get(name) {
                    return Ok(Value::Num(x));
                }
            }
            env.view.ident(name, env.object_index)
        }
        ExprNode::Neg(x) => Ok(Value::Num(-eval(x, env)?.as_num()?)),
        ExprNode::Not(x) => Ok(Value::Flag(!eval(x, env)?.as_flag()?)),
        ExprNode::Abs(x) => Ok(Value::Num(eval(x, env)?.as_num()?.abs())),
        ExprNode::Binary { op, lhs, rhs } => match op {
            BinOp::And => {
                if !eval(lhs, env)?.as_flag()? {
                    return Ok(Value::Flag(false));
                }
                Ok(Value::Flag(eval(rhs, env)?.as_flag()?))
            }
            BinOp::Or => {
                if eval(lhs, env)?.as_flag()? {
                    return Ok(Value::Flag(true));
                }
                Ok(Value::Flag(eval(rhs, env)?.as_flag()?))
            }
            BinOp::Add => Ok(Value::Num(eval(lhs, env)?.as_num()? + eval(rhs, env)?.as_num()?)),
            BinOp::Sub => Ok(Value::Num(eval(lhs, env)?.as_num()? - eval(rhs, env)?.as_num()?)),
            BinOp::Mul => Ok(Value::Num(eval(lhs, env)?.as_num()? * eval(rhs, env)?.as_num()?)),
            BinOp::Eq | BinOp::Ne => {
                let l = eval(lhs, env)?;
                let r = eval(rhs, env)?;
                let same = match (l, r) {
                    (Value::Num(a), Value::Num(b)) => a == b,
                    (Value::Flag(a), Value::Flag(b)) => a == b,
                    _ => return Err(SkimError::plan("==/!= operands have different types")),
                };
                Ok(Value::Flag(if *op == BinOp::Eq { same } else { !same }))
            }
            cmp => {
                let l = eval(lhs, env)?.as_num()?;
                let r = eval(rhs, env)?.as_num()?;
                let pass = match cmp {
                    BinOp::Lt => l < r,
                    BinOp::Le => l <= r,
                    BinOp::Gt => l > r,
                    BinOp::Ge => l >= r,
                    _ => unreachable!(),
                };
                Ok(Value::Flag(pass))
            }
        },
        ExprNode::Aggregate(_) => Err(SkimError::plan(
            "aggregates are only legal as derived definitions",
        )),
    }
}

/// Evaluates an event-level flag expression.
pub fn eval_event_cut(
    expr: &ExprNode,
    view: &mut dyn EventView,
    derived: &BTreeMap<String, f64>,
) -> Result<bool> {
    eval(expr, &mut EvalEnv { view, object_index: None, derived })?.as_flag()
}

/// Per-object pass mask of an object-selection cut.
pub fn eval_object_mask(
    cut: &ExprNode,
    n_objects: usize,
    view: &mut dyn EventView,
) -> Result<Vec<bool>> {
    let empty = BTreeMap::new();
    let mut mask = Vec::with_capacity(n_objects);
    for i in 0..n_objects {
        let pass = eval(cut, &mut EvalEnv { view, object_index: Some(i), derived: &empty })?
            .as_flag()?;
        mask.push(pass);
    }
    Ok(mask)
}

/// Computes one derived aggregate, honoring the collection's object mask
/// when one exists.
pub fn compute_aggregate(
    agg: &PlannedAggregate,
    view: &mut dyn EventView,
    masks: &HashMap<String, Vec<bool>>,
) -> Result<f64> {
    let mask = masks.get(&agg.collection);
    match &agg.spec {
        AggregateSpec::Sum { branch } => {
            let values = view.values_f64(branch)?;
            Ok(match mask {
                Some(mask) => values
                    .iter()
                    .zip(mask)
                    .filter(|(_, &m)| m)
                    .map(|(v, _)| v)
                    .sum(),
                None => values.iter().sum(),
            })
        }
        AggregateSpec::Count { .. } => {
            let n = view.n_objects(&agg.counter)?;
            Ok(match mask {
                Some(mask) => mask.iter().filter(|&&m| m).count() as f64,
                None => n as f64,
            })
        }
    }
}

/// Pass/fail totals for one selection stage.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct StageStats {
    pub stage: String,
    /// Events that reached this stage.
    pub input: u64,
    pub passed: u64,
}

/// Everything a skim run reports besides the output file itself.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SkimResult {
    pub n_input: u64,
    pub n_passed: u64,
    /// Bytes of the written output file.
    pub output_bytes: u64,
    pub timing: TimingBreakdown,
    pub stages: Vec<StageStats>,
    pub warnings: Vec<String>,
    /// Baskets fetched during phase 2 (zero for the naive path).
    pub phase2_baskets: u64,
    /// The `(branch, basket)` keys fetched in phase 2 (empty for naive).
    #[serde(skip)]
    pub phase2_keys: Vec<(u32, u32)>,
    #[serde(skip)]
    pub passing_events: Vec<u64>,
}

/// Per-branch cursor cache: each branch holds its most recent slice, so a
/// monotone event walk decodes every basket at most once.
struct Loader<'a> {
    reader: &'a DatasetReader,
    cache: Option<&'a PrefetchCache>,
    allow_window: bool,
    cursors: HashMap<String, Arc<ColumnSlice>>,
    /// Seconds spent in fetch + decompress + deserialize, for keeping the
    /// `select` phase disjoint from I/O.
    work: f64,
    timing: TimingBreakdown,
}

impl<'a> Loader<'a> {
    fn new(reader: &'a DatasetReader, cache: Option<&'a PrefetchCache>, allow_window: bool) -> Loader<'a> {
        Loader {
            reader,
            cache,
            allow_window,
            cursors: HashMap::new(),
            work: 0.0,
            timing: TimingBreakdown::default(),
        }
    }

    fn slice(&mut self, branch: &str, event: u64) -> Result<Arc<ColumnSlice>> {
        if let Some(slice) = self.cursors.get(branch) {
            if slice.contains(event) {
                return Ok(Arc::clone(slice));
            }
        }
        let header = &self.reader.header;
        let bi = header.branch_index(branch)?;
        let meta = &header.branches[bi];
        let b = locate_basket(meta, event, header.n_events)?;

        let t0 = Instant::now();
        let raw: Arc<Vec<u8>> = match self.cache {
            Some(cache) => cache.get_basket(
                self.reader.source.as_ref(),
                header,
                bi as u32,
                b as u32,
                self.allow_window,
            )?,
            None => Arc::new(self.reader.read_basket_raw(bi, b)?),
        };
        let t1 = Instant::now();
        let payload = decompress_basket(&raw, &meta.baskets[b])?;
        let t2 = Instant::now();
        let slice = Arc::new(deserialize_basket(meta, b, &payload)?);
        let t3 = Instant::now();

        self.timing.basket_fetch += (t1 - t0).as_secs_f64();
        self.timing.decompress += (t2 - t1).as_secs_f64();
        self.timing.deserialize += (t3 - t2).as_secs_f64();
        self.work += (t3 - t0).as_secs_f64();

        self.cursors.insert(branch.to_string(), Arc::clone(&slice));
        Ok(slice)
    }
}

/// [`EventView`] over a loader positioned at one event.
struct LoaderView<'a, 'b> {
    loader: &'b mut Loader<'a>,
    event: u64,
}

impl EventView for LoaderView<'_, '_> {
    fn ident(&mut self, branch: &str, object_index: Option<usize>) -> Result<Value> {
        let slice = self.loader.slice(branch, self.event)?;
        let (a, b) = slice.value_range(self.event)?;
        let jagged = slice.event_offsets.is_some();
        let idx = match (jagged, object_index) {
            (true, Some(i)) => {
                if a + i >= b {
                    return Err(SkimError::plan(format!(
                        "object index {i} out of range for {branch:?}"
                    )));
                }
                a + i
            }
            (true, None) => {
                return Err(SkimError::plan(format!(
                    "jagged branch {branch:?} needs an object context"
                )))
            }
            // Scalars broadcast across objects.
            (false, _) => a,
        };
        match slice.data {
            ColumnData::Bool(_) => Ok(Value::Flag(slice.data.get_bool(idx)?)),
            _ => Ok(Value::Num(slice.data.get_f64(idx)?)),
        }
    }

    fn n_objects(&mut self, counter: &str) -> Result<usize> {
        let slice = self.loader.slice(counter, self.event)?;
        let n = slice.scalar_f64(self.event)?;
        if n < 0.0 {
            return Err(SkimError::format(format!("negative count in {counter:?}")));
        }
        Ok(n as usize)
    }

    fn values_f64(&mut self, branch: &str) -> Result<Vec<f64>> {
        let slice = self.loader.slice(branch, self.event)?;
        let (a, b) = slice.value_range(self.event)?;
        (a..b).map(|i| slice.data.get_f64(i)).collect()
    }
}

/// Runs the staged selection for one event. Returns the index of the first
/// failed stage, or `None` if the event passes everything.
fn run_stages(plan: &ExecPlan, view: &mut dyn EventView) -> Result<Option<usize>> {
    let mut stage = 0usize;
    let no_derived = BTreeMap::new();

    if let Some(pre) = &plan.preselection {
        if !eval_event_cut(pre, view, &no_derived)? {
            return Ok(Some(stage));
        }
        stage += 1;
    }

    let mut masks: HashMap<String, Vec<bool>> = HashMap::new();
    for sel in &plan.object_selections {
        let n = view.n_objects(&sel.counter)?;
        let mask = eval_object_mask(&sel.cut, n, view)?;
        let survivors = mask.iter().filter(|&&m| m).count() as u32;
        masks.insert(sel.collection.clone(), mask);
        if survivors < sel.min_count {
            return Ok(Some(stage));
        }
        stage += 1;
    }

    if let Some(cut) = &plan.event_selection {
        let mut derived = BTreeMap::new();
        for agg in &plan.derived {
            derived.insert(agg.name.clone(), compute_aggregate(agg, view, &masks)?);
        }
        if !eval_event_cut(cut, view, &derived)? {
            return Ok(Some(stage));
        }
    }
    Ok(None)
}

fn stage_names(plan: &ExecPlan) -> Vec<String> {
    let mut names = Vec::new();
    if plan.preselection.is_some() {
        names.push("preselection".to_string());
    }
    for sel in &plan.object_selections {
        names.push(format!("object:{}", sel.collection));
    }
    if plan.event_selection.is_some() {
        names.push("event_selection".to_string());
    }
    names
}

fn tally_stages(names: &[String], fails: &[u64], n_input: u64) -> Vec<StageStats> {
    let mut stats = Vec::with_capacity(names.len());
    let mut reached = n_input;
    for (i, name) in names.iter().enumerate() {
        let passed = reached - fails[i];
        stats.push(StageStats { stage: name.clone(), input: reached, passed });
        reached = passed;
    }
    stats
}

struct CountingWriter<'a, W: Write> {
    inner: &'a mut W,
    written: u64,
}

impl<W: Write> Write for CountingWriter<'_, W> {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        let n = self.inner.write(buf)?;
        self.written += n as u64;
        Ok(n)
    }

    fn flush(&mut self) -> std::io::Result<()> {
        self.inner.flush()
    }
}

fn output_codec(plan: &ExecPlan, reader: &DatasetReader) -> Codec {
    plan.codec.unwrap_or_else(|| {
        reader
            .header
            .branches
            .iter()
            .flat_map(|b| b.baskets.first())
            .map(|b| b.codec)
            .next()
            .unwrap_or(Codec::Lz4)
    })
}

fn output_schema(plan: &ExecPlan, reader: &DatasetReader) -> Vec<BranchSpec> {
    plan.branch_plan
        .output
        .iter()
        .map(|name| {
            let (_, meta) = reader.header.branch(name).expect("plan built against schema");
            BranchSpec {
                name: meta.name.clone(),
                kind: meta.kind,
                value_type: meta.value_type,
                counter_branch: meta.counter_branch.clone(),
            }
        })
        .collect()
}

/// Extracts the passing rows of one branch into a [`ColumnInput`], fetching
/// baskets through `fetch` and timing decode work into `timing`.
fn extract_column(
    reader: &DatasetReader,
    branch: &str,
    events: &[u64],
    fetch: &mut dyn FnMut(u32, u32) -> Result<Arc<Vec<u8>>>,
    timing: &mut TimingBreakdown,
) -> Result<ColumnInput> {
    let header = &reader.header;
    let bi = header.branch_index(branch)?;
    let meta = &header.branches[bi];
    let mut data = ColumnData::new(meta.value_type);
    let mut counts = match meta.kind {
        BranchKind::Jagged => Some(Vec::with_capacity(events.len())),
        BranchKind::Scalar => None,
    };

    let mut current: Option<(usize, ColumnSlice)> = None;
    for &event in events {
        let b = locate_basket(meta, event, header.n_events)?;
        let hit = matches!(&current, Some((cb, _)) if *cb == b);
        if !hit {
            let t0 = Instant::now();
            let raw = fetch(bi as u32, b as u32)?;
            let t1 = Instant::now();
            let payload = decompress_basket(&raw, &meta.baskets[b])?;
            let t2 = Instant::now();
            let slice = deserialize_basket(meta, b, &payload)?;
            let t3 = Instant::now();
            timing.basket_fetch += (t1 - t0).as_secs_f64();
            timing.decompress += (t2 - t1).as_secs_f64();
            timing.deserialize += (t3 - t2).as_secs_f64();
            current = Some((b, slice));
        }
        let (_, slice) = current.as_ref().unwrap();
        let (a, b_end) = slice.value_range(event)?;
        data.extend_from(&slice.data, a, b_end)?;
        if let Some(counts) = counts.as_mut() {
            counts.push((b_end - a) as u32);
        }
    }
    Ok(ColumnInput { data, counts })
}

/// The needed `(branch, basket)` set for a list of events, in plan order.
fn needed_baskets(reader: &DatasetReader, branches: &[String], events: &[u64]) -> Result<Vec<(u32, u32)>> {
    let header = &reader.header;
    let mut keys = Vec::new();
    for name in branches {
        let bi = header.branch_index(name)? as u32;
        let meta = &header.branches[bi as usize];
        let mut last = None;
        for &event in events {
            let b = locate_basket(meta, event, header.n_events)? as u32;
            if last != Some(b) {
                keys.push((bi, b));
                last = Some(b);
            }
        }
    }
    Ok(keys)
}

/// Two-phase skim: decide on criteria branches only, then fetch exactly the
/// output baskets holding passing events and write the skimmed file.
pub fn run_skim(
    reader: &DatasetReader,
    plan: &ExecPlan,
    cache: &PrefetchCache,
    sink: &mut impl Write,
) -> Result<SkimResult> {
    let wall = Instant::now();
    let cpu0 = thread_cpu_time();
    let header = &reader.header;
    let n_input = header.n_events;

    // Phase 1: selection over criteria branches.
    let criteria_indices: Vec<u32> = plan
        .branch_plan
        .criteria
        .iter()
        .map(|n| header.branch_index(n).map(|i| i as u32))
        .collect::<Result<_>>()?;
    cache.set_enabled_branches(criteria_indices);

    let mut loader = Loader::new(reader, Some(cache), true);
    let names = stage_names(plan);
    let mut fails = vec![0u64; names.len()];
    let mut passing = Vec::new();

    let select_span = Instant::now();
    let work_before = loader.work;
    for event in 0..n_input {
        let mut view = LoaderView { loader: &mut loader, event };
        match run_stages(plan, &mut view)? {
            Some(stage) => fails[stage] += 1,
            None => passing.push(event),
        }
    }
    let select_elapsed = select_span.elapsed().as_secs_f64() - (loader.work - work_before);

    let mut timing = loader.timing;
    timing.select = select_elapsed.max(0.0);
    let stages = tally_stages(&names, &fails, n_input);

    // Phase 2: fetch only output baskets that hold a passing event, batched
    // up front so byte-adjacent baskets coalesce into single requests.
    let keys = needed_baskets(reader, &plan.branch_plan.output, &passing)?;
    cache.prefetch_baskets(reader.source.as_ref(), header, &keys)?;
    let phase2_baskets = keys.len() as u64;

    let mut fetch = |bi: u32, b: u32| -> Result<Arc<Vec<u8>>> {
        cache.get_basket(reader.source.as_ref(), header, bi, b, false)
    };
    let schema = output_schema(plan, reader);
    let mut columns = Vec::with_capacity(schema.len());
    for name in &plan.branch_plan.output {
        columns.push(extract_column(reader, name, &passing, &mut fetch, &mut timing)?);
    }

    let write_span = Instant::now();
    let mut counting = CountingWriter { inner: sink, written: 0 };
    write_dataset(
        &schema,
        &columns,
        passing.len() as u64,
        plan.basket_target.unwrap_or(DEFAULT_BASKET_TARGET),
        output_codec(plan, reader),
        &mut counting,
    )?;
    timing.write = write_span.elapsed().as_secs_f64();
    let output_bytes = counting.written;

    timing.total_wall = wall.elapsed().as_secs_f64();
    timing.cpu_time = thread_cpu_time() - cpu0;

    Ok(SkimResult {
        n_input,
        n_passed: passing.len() as u64,
        output_bytes,
        timing,
        stages,
        warnings: plan.warnings.clone(),
        phase2_baskets,
        phase2_keys: keys,
        passing_events: passing,
    })
}

/// Baseline skim: for every event, materialize every involved branch (the
/// per-event row extraction is what a traditional event loop pays), then
/// decide, then copy. Reads go straight to the source, one per basket.
pub fn run_naive(
    reader: &DatasetReader,
    plan: &ExecPlan,
    sink: &mut impl Write,
) -> Result<SkimResult> {
    let wall = Instant::now();
    let cpu0 = thread_cpu_time();
    let header = &reader.header;
    let n_input = header.n_events;

    // Everything any stage or the output touches, in schema order.
    let mut involved: Vec<String> = plan.branch_plan.output.clone();
    for name in &plan.branch_plan.criteria {
        if !involved.contains(name) {
            involved.push(name.clone());
        }
    }
    involved.sort_by_key(|n| header.branch_index(n).expect("plan built against schema"));

    let mut loader = Loader::new(reader, None, false);
    let names = stage_names(plan);
    let mut fails = vec![0u64; names.len()];
    let mut passing = Vec::new();

    let schema = output_schema(plan, reader);
    let mut columns: Vec<ColumnInput> = schema
        .iter()
        .map(|s| ColumnInput {
            data: ColumnData::new(s.value_type),
            counts: (s.kind == BranchKind::Jagged).then(Vec::new),
        })
        .collect();

    let mut extract_time = 0.0;
    let mut select_time = 0.0;
    let mut copy_time = 0.0;
    for event in 0..n_input {
        // Row materialization: every involved branch, every event.
        let t0 = Instant::now();
        let work0 = loader.work;
        let mut row: Vec<(usize, usize, Arc<ColumnSlice>)> = Vec::with_capacity(involved.len());
        for name in &involved {
            let slice = loader.slice(name, event)?;
            let (a, b) = slice.value_range(event)?;
            // The copy out of the decoded basket is the per-event
            // deserialization cost the baseline pays.
            let _values = slice.data.slice(a, b);
            row.push((a, b, slice));
        }
        extract_time += (t0.elapsed().as_secs_f64() - (loader.work - work0)).max(0.0);

        let t1 = Instant::now();
        let work1 = loader.work;
        let mut view = LoaderView { loader: &mut loader, event };
        let decision = run_stages(plan, &mut view)?;
        select_time += (t1.elapsed().as_secs_f64() - (loader.work - work1)).max(0.0);

        match decision {
            Some(stage) => fails[stage] += 1,
            None => {
                passing.push(event);
                let t2 = Instant::now();
                for (col, name) in columns.iter_mut().zip(&plan.branch_plan.output) {
                    let (a, b, slice) = row
                        .iter()
                        .find(|(_, _, s)| &s.branch == name)
                        .map(|(a, b, s)| (*a, *b, Arc::clone(s)))
                        .expect("output is a subset of involved");
                    col.data.extend_from(&slice.data, a, b)?;
                    if let Some(counts) = col.counts.as_mut() {
                        counts.push((b - a) as u32);
                    }
                }
                copy_time += t2.elapsed().as_secs_f64();
            }
        }
    }

    let mut timing = loader.timing;
    timing.deserialize += extract_time;
    timing.select = select_time;
    let stages = tally_stages(&names, &fails, n_input);

    let write_span = Instant::now();
    let mut counting = CountingWriter { inner: sink, written: 0 };
    write_dataset(
        &schema,
        &columns,
        passing.len() as u64,
        plan.basket_target.unwrap_or(DEFAULT_BASKET_TARGET),
        output_codec(plan, reader),
        &mut counting,
    )?;
    timing.write = write_span.elapsed().as_secs_f64() + copy_time;
    let output_bytes = counting.written;

    timing.total_wall = wall.elapsed().as_secs_f64();
    timing.cpu_time = thread_cpu_time() - cpu0;

    Ok(SkimResult {
        n_input,
        n_passed: passing.len() as u64,
        output_bytes,
        timing,
        stages,
        warnings: plan.warnings.clone(),
        phase2_baskets: 0,
        phase2_keys: Vec::new(),
        passing_events: passing,
    })
}
