//! Shared test support: an independent brute-force skim oracle and
//! randomized dataset/query generators.
//!
//! The oracle deliberately reimplements selection from scratch on fully
//! materialized columns — no lazy loading, no two-phase split, no basket
//! awareness — so agreement with the engine is meaningful.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use skimlite::colfmt::{
    write_dataset, BranchKind, BranchSpec, Codec, ColumnData, ColumnInput, DatasetReader,
    ValueType,
};
use skimlite::query::expr::{parse_expression, AggregateSpec, BinOp, ExprNode};
use skimlite::query::SkimQuery;
use skimlite::transport::MemSource;

/// One fully materialized column.
#[derive(Debug, Clone)]
pub struct MatColumn {
    pub kind: BranchKind,
    pub value_type: ValueType,
    pub counter: Option<String>,
    pub data: ColumnData,
    /// Cumulative value offsets per event (len = n_events + 1), jagged only.
    pub offsets: Option<Vec<usize>>,
}

/// A dataset with every column in memory, in schema order.
#[derive(Debug, Clone)]
pub struct MatDataset {
    pub n_events: u64,
    pub order: Vec<String>,
    pub columns: BTreeMap<String, MatColumn>,
}

impl MatDataset {
    /// Reads every column of an encoded file into memory.
    pub fn read(file: &[u8]) -> MatDataset {
        let reader = DatasetReader::open(Arc::new(MemSource::local(file.to_vec()))).unwrap();
        let mut order = Vec::new();
        let mut columns = BTreeMap::new();
        for (i, meta) in reader.header.branches.iter().enumerate() {
            let (data, counts) = reader.read_full_column(i).unwrap();
            let offsets = counts.map(|counts| {
                let mut off = Vec::with_capacity(counts.len() + 1);
                let mut total = 0usize;
                off.push(0);
                for c in counts {
                    total += c as usize;
                    off.push(total);
                }
                off
            });
            order.push(meta.name.clone());
            columns.insert(
                meta.name.clone(),
                MatColumn {
                    kind: meta.kind,
                    value_type: meta.value_type,
                    counter: meta.counter_branch.clone(),
                    data,
                    offsets,
                },
            );
        }
        MatDataset { n_events: reader.header.n_events, order, columns }
    }

    pub fn col(&self, name: &str) -> &MatColumn {
        self.columns
            .get(name)
            .unwrap_or_else(|| panic!("oracle: no branch {name}"))
    }

    fn scalar(&self, name: &str, event: u64) -> OVal {
        let col = self.col(name);
        assert_eq!(col.kind, BranchKind::Scalar, "oracle: {name} is not scalar");
        match &col.data {
            ColumnData::Bool(v) => OVal::Flag(v[event as usize]),
            other => OVal::Num(other.get_f64(event as usize).unwrap()),
        }
    }

    fn object_value(&self, name: &str, event: u64, index: usize) -> OVal {
        let col = self.col(name);
        match col.kind {
            BranchKind::Scalar => self.scalar(name, event),
            BranchKind::Jagged => {
                let off = col.offsets.as_ref().unwrap();
                let at = off[event as usize] + index;
                assert!(at < off[event as usize + 1], "oracle: object index out of range");
                match &col.data {
                    ColumnData::Bool(v) => OVal::Flag(v[at]),
                    other => OVal::Num(other.get_f64(at).unwrap()),
                }
            }
        }
    }

    fn n_objects(&self, counter: &str, event: u64) -> usize {
        match self.scalar(counter, event) {
            OVal::Num(n) => n as usize,
            OVal::Flag(_) => panic!("oracle: counter {counter} is a flag"),
        }
    }

    /// Counter branch of a collection: `n<Collection>` when present, else
    /// whatever the collection's jagged branches declare.
    pub fn collection_counter(&self, collection: &str) -> String {
        let direct = format!("n{collection}");
        if self.columns.contains_key(&direct) {
            return direct;
        }
        let prefix = format!("{collection}_");
        self.columns
            .iter()
            .find(|(name, col)| name.starts_with(&prefix) && col.kind == BranchKind::Jagged)
            .and_then(|(_, col)| col.counter.clone())
            .unwrap_or_else(|| panic!("oracle: no counter for collection {collection}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OVal {
    Num(f64),
    Flag(bool),
}

impl OVal {
    fn num(self) -> f64 {
        match self {
            OVal::Num(x) => x,
            OVal::Flag(_) => panic!("oracle: flag used as number"),
        }
    }

    fn flag(self) -> bool {
        match self {
            OVal::Flag(b) => b,
            OVal::Num(_) => panic!("oracle: number used as flag"),
        }
    }
}

/// Straightforward recursive evaluation; `lookup` resolves identifiers.
fn eval_oracle(node: &ExprNode, lookup: &dyn Fn(&str) -> OVal) -> OVal {
    match node {
        ExprNode::Number(x) => OVal::Num(*x),
        ExprNode::Bool(b) => OVal::Flag(*b),
        ExprNode::Ident(name) => lookup(name),
        ExprNode::Neg(e) => OVal::Num(-eval_oracle(e, lookup).num()),
        ExprNode::Not(e) => OVal::Flag(!eval_oracle(e, lookup).flag()),
        ExprNode::Abs(e) => OVal::Num(eval_oracle(e, lookup).num().abs()),
        ExprNode::Aggregate(_) => panic!("oracle: aggregate outside derived"),
        ExprNode::Binary { op, lhs, rhs } => {
            let l = eval_oracle(lhs, lookup);
            match op {
                BinOp::And => OVal::Flag(l.flag() && eval_oracle(rhs, lookup).flag()),
                BinOp::Or => OVal::Flag(l.flag() || eval_oracle(rhs, lookup).flag()),
                BinOp::Add => OVal::Num(l.num() + eval_oracle(rhs, lookup).num()),
                BinOp::Sub => OVal::Num(l.num() - eval_oracle(rhs, lookup).num()),
                BinOp::Mul => OVal::Num(l.num() * eval_oracle(rhs, lookup).num()),
                BinOp::Eq | BinOp::Ne => {
                    let r = eval_oracle(rhs, lookup);
                    let same = match (l, r) {
                        (OVal::Num(a), OVal::Num(b)) => a == b,
                        (OVal::Flag(a), OVal::Flag(b)) => a == b,
                        _ => panic!("oracle: mixed-type equality"),
                    };
                    OVal::Flag(if matches!(op, BinOp::Eq) { same } else { !same })
                }
                BinOp::Lt => OVal::Flag(l.num() < eval_oracle(rhs, lookup).num()),
                BinOp::Le => OVal::Flag(l.num() <= eval_oracle(rhs, lookup).num()),
                BinOp::Gt => OVal::Flag(l.num() > eval_oracle(rhs, lookup).num()),
                BinOp::Ge => OVal::Flag(l.num() >= eval_oracle(rhs, lookup).num()),
            }
        }
    }
}

/// Oracle verdict for one query over one dataset.
#[derive(Debug, Clone)]
pub struct OracleResult {
    pub passing: Vec<u64>,
    /// Expected output branch set, in schema order.
    pub output_branches: Vec<String>,
}

/// Brute-force skim: walks every event through every stage with fully
/// materialized columns. Queries handed to the oracle must list branches
/// literally (no wildcards).
pub fn oracle_skim(ds: &MatDataset, query: &SkimQuery) -> OracleResult {
    for b in &query.branches {
        assert!(!b.contains('*'), "oracle queries must not use wildcards: {b}");
    }

    // Selected branches plus the counters of selected jagged branches,
    // ordered like the schema.
    let mut wanted: Vec<String> = query.branches.clone();
    for name in &query.branches {
        if let Some(counter) = &ds.col(name).counter {
            if !wanted.contains(counter) {
                wanted.push(counter.clone());
            }
        }
    }
    let output_branches: Vec<String> = ds
        .order
        .iter()
        .filter(|name| wanted.contains(name))
        .cloned()
        .collect();

    let pre = query.preselection.as_deref().map(|t| parse_expression(t).unwrap());
    let event_sel = query.event_selection.as_deref().map(|t| parse_expression(t).unwrap());
    let object_sels: Vec<_> = query
        .object_selections
        .iter()
        .map(|sel| {
            let counter = ds.collection_counter(&sel.collection);
            let cut = parse_expression(&sel.cut).unwrap().map_idents(&|ident| {
                let qualified = format!("{}_{ident}", sel.collection);
                if ds.columns.contains_key(&qualified) {
                    qualified
                } else {
                    ident.to_string()
                }
            });
            (sel.collection.clone(), counter, cut, sel.min_count)
        })
        .collect();
    let derived: Vec<(String, AggregateSpec)> = query
        .derived
        .iter()
        .map(|(name, text)| {
            let tree = parse_expression(text).unwrap();
            match tree {
                ExprNode::Aggregate(spec) => (name.clone(), spec),
                other => panic!("oracle: derived {name} is not an aggregate: {other}"),
            }
        })
        .collect();

    let mut passing = Vec::new();
    'events: for e in 0..ds.n_events {
        if let Some(pre) = &pre {
            if !eval_oracle(pre, &|name| ds.scalar(name, e)).flag() {
                continue;
            }
        }

        // Per-collection pass masks, kept for the aggregates.
        let mut masks: BTreeMap<String, Vec<bool>> = BTreeMap::new();
        for (collection, counter, cut, min_count) in &object_sels {
            let n = ds.n_objects(counter, e);
            let mask: Vec<bool> = (0..n)
                .map(|i| eval_oracle(cut, &|name| ds.object_value(name, e, i)).flag())
                .collect();
            let surviving = mask.iter().filter(|&&m| m).count() as u32;
            masks.insert(collection.clone(), mask);
            if surviving < *min_count {
                continue 'events;
            }
        }

        if let Some(sel) = &event_sel {
            let mut values: BTreeMap<String, f64> = BTreeMap::new();
            for (name, spec) in &derived {
                let v = match spec {
                    AggregateSpec::Sum { branch } => {
                        let col = ds.col(branch);
                        let collection = branch.split('_').next().unwrap().to_string();
                        let off = col.offsets.as_ref().unwrap();
                        let (a, b) = (off[e as usize], off[e as usize + 1]);
                        match masks.get(&collection) {
                            Some(mask) => (a..b)
                                .filter(|i| mask[i - a])
                                .map(|i| col.data.get_f64(i).unwrap())
                                .sum(),
                            None => (a..b).map(|i| col.data.get_f64(i).unwrap()).sum(),
                        }
                    }
                    AggregateSpec::Count { collection } => match masks.get(collection) {
                        Some(mask) => mask.iter().filter(|&&m| m).count() as f64,
                        None => ds.n_objects(&ds.collection_counter(collection), e) as f64,
                    },
                };
                values.insert(name.clone(), v);
            }
            let ok = eval_oracle(sel, &|name| match values.get(name) {
                Some(&v) => OVal::Num(v),
                None => ds.scalar(name, e),
            })
            .flag();
            if !ok {
                continue;
            }
        }
        passing.push(e);
    }

    OracleResult { passing, output_branches }
}

/// Asserts that an encoded skim output holds exactly the oracle's passing
/// rows of the oracle's output branches.
pub fn assert_output_matches(ds: &MatDataset, verdict: &OracleResult, output_file: &[u8]) {
    let out = MatDataset::read(output_file);
    assert_eq!(out.n_events, verdict.passing.len() as u64, "event count mismatch");
    assert_eq!(out.order, verdict.output_branches, "output branch set mismatch");
    for name in &verdict.output_branches {
        let src = ds.col(name);
        let got = out.col(name);
        assert_eq!(got.kind, src.kind, "{name}: kind mismatch");
        assert_eq!(got.value_type, src.value_type, "{name}: type mismatch");
        let mut expected = ColumnData::new(src.data.value_type());
        for &e in &verdict.passing {
            let (a, b) = match &src.offsets {
                Some(off) => (off[e as usize], off[e as usize + 1]),
                None => (e as usize, e as usize + 1),
            };
            expected.extend_from(&src.data, a, b).unwrap();
        }
        assert_eq!(got.data, expected, "{name}: column data mismatch");
    }
}

// ---------------------------------------------------------------------------
// Randomized inputs

/// A random schema/column set small enough for brute force, with two
/// collections, scalars of every type, and a basket size that forces
/// multi-basket branches.
pub fn rand_dataset(rng: &mut ChaCha8Rng, max_events: u64) -> (Vec<u8>, u64) {
    let n_events = rng.random_range(1..=max_events);
    let basket_target = *[64usize, 256, 1024, 4096].choose(rng).unwrap();
    let codec = *[Codec::None, Codec::Lz4, Codec::Deflate].choose(rng).unwrap();

    let mut schema = Vec::new();
    let mut columns = Vec::new();

    let counts_for = |rng: &mut ChaCha8Rng, max: u32| -> Vec<u32> {
        (0..n_events).map(|_| rng.random_range(0..=max)).collect()
    };

    for (collection, max) in [("Ele", 4u32), ("Jet", 6u32)] {
        let counter = format!("n{collection}");
        let counts = counts_for(rng, max);
        let total: usize = counts.iter().map(|&c| c as usize).sum();
        schema.push(BranchSpec::scalar(&counter, ValueType::I32));
        columns.push(ColumnInput::scalar(ColumnData::I32(
            counts.iter().map(|&c| c as i32).collect(),
        )));
        for (field, vt) in [("pt", ValueType::F32), ("eta", ValueType::F32), ("q", ValueType::I32)] {
            schema.push(BranchSpec::jagged(format!("{collection}_{field}"), vt, &counter));
            let data = match vt {
                ValueType::F32 => ColumnData::F32(
                    (0..total)
                        .map(|_| {
                            if field == "pt" {
                                rng.random_range(0.0..100.0)
                            } else {
                                rng.random_range(-3.0..3.0)
                            }
                        })
                        .collect(),
                ),
                ValueType::I32 => {
                    ColumnData::I32((0..total).map(|_| *[-1, 1].choose(rng).unwrap()).collect())
                }
                _ => unreachable!(),
            };
            columns.push(ColumnInput::jagged(data, counts.clone()));
        }
    }

    schema.push(BranchSpec::scalar("met", ValueType::F64));
    columns.push(ColumnInput::scalar(ColumnData::F64(
        (0..n_events).map(|_| rng.random_range(0.0..200.0)).collect(),
    )));
    schema.push(BranchSpec::scalar("npv", ValueType::U8));
    columns.push(ColumnInput::scalar(ColumnData::U8(
        (0..n_events).map(|_| rng.random_range(0..60)).collect(),
    )));
    schema.push(BranchSpec::scalar("trig", ValueType::Bool));
    columns.push(ColumnInput::scalar(ColumnData::Bool(
        (0..n_events).map(|_| rng.random_bool(0.5)).collect(),
    )));
    schema.push(BranchSpec::scalar("run", ValueType::I32));
    columns.push(ColumnInput::scalar(ColumnData::I32(
        (0..n_events).map(|_| rng.random_range(1000..1010)).collect(),
    )));

    let mut file = Vec::new();
    write_dataset(&schema, &columns, n_events, basket_target, codec, &mut file).unwrap();
    (file, n_events)
}

/// A random wildcard-free query against [`rand_dataset`] schemas. Roughly
/// half the stages are present in any draw.
pub fn rand_query(rng: &mut ChaCha8Rng, input: &str, output: &str) -> String {
    let all_branches = [
        "Ele_pt", "Ele_eta", "Ele_q", "Jet_pt", "Jet_eta", "Jet_q", "nEle", "nJet", "met",
        "npv", "trig", "run",
    ];
    let n_branches = rng.random_range(2..=all_branches.len());
    let mut branches: Vec<&str> = all_branches
        .choose_multiple(rng, n_branches)
        .copied()
        .collect();
    branches.sort_unstable();

    let mut query = serde_json::json!({
        "input": input,
        "output": output,
        "branches": branches,
    });

    if rng.random_bool(0.6) {
        let pre = [
            format!("nEle >= {}", rng.random_range(0..3)),
            format!("met > {}", rng.random_range(0..150)),
            format!("trig == true || met > {}", rng.random_range(50..150)),
            format!("npv < {} && nJet >= 1", rng.random_range(20..60)),
        ];
        query["preselection"] = pre.choose(rng).unwrap().clone().into();
    }

    if rng.random_bool(0.7) {
        let (collection, field) = *[("Ele", "pt"), ("Jet", "pt"), ("Ele", "eta")]
            .choose(rng)
            .unwrap();
        let cut = match field {
            "pt" => format!("pt > {} && abs(eta) < {:.1}", rng.random_range(10..60), rng.random_range(15..30) as f64 / 10.0),
            _ => format!("abs(eta) < {:.1} && q == 1", rng.random_range(10..30) as f64 / 10.0),
        };
        query["object_selections"] = serde_json::json!([{
            "collection": collection,
            "cut": cut,
            "min_count": rng.random_range(0..2),
        }]);

        if rng.random_bool(0.6) {
            let (name, def, threshold) = match collection {
                "Jet" => ("HT", "sum(Jet_pt)", rng.random_range(20..200)),
                _ => ("nGood", "count(Ele)", rng.random_range(0..3)),
            };
            query["derived"] = serde_json::json!({ name: def });
            query["event_selection"] = format!("{name} >= {threshold}").into();
        }
    }

    if query.get("event_selection").is_none() && rng.random_bool(0.5) {
        query["event_selection"] = format!("met > {} + {}", rng.random_range(0..100), rng.random_range(0..50)).into();
    }

    query.to_string()
}

/// Deterministic RNG for a named test case.
pub fn test_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
