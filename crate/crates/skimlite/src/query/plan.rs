//! Query planning: wildcard expansion against the file schema, minimal-set
//! substitution, expression type checking, and the split between criteria
//! branches (read to decide) and output branches (copied if the event
//! passes).

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::colfmt::{BranchKind, Codec, DatasetHeader, ValueType};
use crate::error::{Result, SkimError};
use crate::query::expr::{parse_expression, AggregateSpec, BinOp, ExprNode};
use crate::query::SkimQuery;

/// Curated substitutes for overly broad wildcard prefixes, e.g. the handful
/// of trigger flags an analysis actually uses instead of every `HLT_*`
/// branch in the file. Keys are the wildcard prefix including the trailing
/// underscore ("HLT_"); values are full branch names.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MinimalSets(pub BTreeMap<String, Vec<String>>);

impl MinimalSets {
    pub fn load(path: impl AsRef<Path>) -> Result<MinimalSets> {
        let text = std::fs::read_to_string(path)?;
        MinimalSets::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<MinimalSets> {
        serde_json::from_str(text).map_err(|e| SkimError::Query(format!("bad minimal sets: {e}")))
    }

    pub fn get(&self, prefix: &str) -> Option<&[String]> {
        self.0.get(prefix).map(|v| v.as_slice())
    }
}

/// Which branches the engine reads, and why.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BranchPlan {
    /// Branches any selection stage evaluates; read during phase 1.
    pub criteria: Vec<String>,
    /// Branches the output file carries; fetched in phase 2 for baskets with
    /// at least one passing event. May overlap `criteria`.
    pub output: Vec<String>,
}

impl BranchPlan {
    /// Output branches not needed by any selection: the ones phase 2 can
    /// skip entirely for fully failing baskets.
    pub fn output_only(&self) -> Vec<String> {
        self.output
            .iter()
            .filter(|b| !self.criteria.contains(b))
            .cloned()
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct PlannedObjectSelection {
    pub collection: String,
    /// Scalar i32 branch holding the per-event object count.
    pub counter: String,
    /// Cut with field shorthand already expanded to full branch names.
    pub cut: ExprNode,
    pub min_count: u32,
}

/// A derived quantity with its storage resolved.
#[derive(Debug, Clone)]
pub struct PlannedAggregate {
    pub name: String,
    pub spec: AggregateSpec,
    /// Counter branch of the aggregated collection.
    pub counter: String,
    /// Collection name, for applying that collection's object mask.
    pub collection: String,
}

/// A fully resolved, type-checked execution plan.
#[derive(Debug, Clone)]
pub struct ExecPlan {
    pub input: String,
    pub output: String,
    pub branch_plan: BranchPlan,
    pub preselection: Option<ExprNode>,
    pub object_selections: Vec<PlannedObjectSelection>,
    pub derived: Vec<PlannedAggregate>,
    pub event_selection: Option<ExprNode>,
    pub codec: Option<Codec>,
    pub basket_target: Option<usize>,
    pub warnings: Vec<String>,
}

/// Compiles a parsed query against a file schema.
///
/// With `strict` set, branch patterns that match nothing are errors instead
/// of warnings; selection expressions referencing unknown branches are
/// always errors.
pub fn build_plan(
    query: &SkimQuery,
    schema: &DatasetHeader,
    minimal_sets: &MinimalSets,
    strict: bool,
) -> Result<ExecPlan> {
    let mut warnings = Vec::new();
    let selected = expand_branches(query, schema, minimal_sets, strict, &mut warnings)?;

    let mut criteria: BTreeSet<String> = BTreeSet::new();
    let mut add_criteria = |name: &str| {
        criteria.insert(name.to_string());
    };

    // Preselection: event-level scalars only.
    let preselection = match &query.preselection {
        Some(text) => {
            let tree = parse_expression(text)?;
            check_event_expr(&tree, schema, &BTreeMap::new(), "preselection")?;
            for ident in tree.idents() {
                add_criteria(ident);
            }
            Some(tree)
        }
        None => None,
    };

    // Object selections: rewrite field shorthand to full branch names and
    // require every referenced jagged branch to belong to the collection.
    let mut object_selections = Vec::new();
    for sel in &query.object_selections {
        let counter = collection_counter(schema, &sel.collection)?;
        let raw = parse_expression(&sel.cut)?;
        let cut = raw.map_idents(&|ident| {
            let qualified = format!("{}_{ident}", sel.collection);
            if schema.branch(&qualified).is_some() {
                qualified
            } else {
                ident.to_string()
            }
        });
        check_object_expr(&cut, schema, &sel.collection)?;
        add_criteria(&counter);
        for ident in cut.idents() {
            add_criteria(ident);
            if let Some((_, meta)) = schema.branch(ident) {
                if let Some(c) = &meta.counter_branch {
                    add_criteria(c);
                }
            }
        }
        object_selections.push(PlannedObjectSelection {
            collection: sel.collection.clone(),
            counter,
            cut,
            min_count: sel.min_count,
        });
    }

    // Derived aggregates.
    let mut derived = Vec::new();
    let mut derived_types: BTreeMap<String, Type> = BTreeMap::new();
    for (name, text) in &query.derived {
        if schema.branch(name).is_some() {
            return Err(SkimError::plan(format!(
                "derived {name:?} shadows a branch of the same name"
            )));
        }
        let spec = match parse_expression(text)? {
            ExprNode::Aggregate(spec) => spec,
            _ => unreachable!("validated at parse_query time"),
        };
        let (collection, counter) = match &spec {
            AggregateSpec::Sum { branch } => {
                let (_, meta) = schema.branch(branch).ok_or_else(|| {
                    SkimError::plan(format!("sum() target {branch:?} not found in schema"))
                })?;
                if meta.kind != BranchKind::Jagged {
                    return Err(SkimError::plan(format!(
                        "sum() target {branch:?} is not a jagged branch"
                    )));
                }
                if !meta.value_type.is_numeric() {
                    return Err(SkimError::plan(format!(
                        "sum() target {branch:?} is not numeric"
                    )));
                }
                let counter = meta.counter_branch.clone().expect("validated header");
                let collection = branch
                    .split_once('_')
                    .map(|(c, _)| c.to_string())
                    .unwrap_or_else(|| branch.clone());
                add_criteria(branch);
                (collection, counter)
            }
            AggregateSpec::Count { collection } => {
                let counter = collection_counter(schema, collection)?;
                (collection.clone(), counter)
            }
        };
        add_criteria(&counter);
        derived_types.insert(name.clone(), Type::Num);
        derived.push(PlannedAggregate { name: name.clone(), spec, counter, collection });
    }

    // Event selection: scalars plus derived names.
    let event_selection = match &query.event_selection {
        Some(text) => {
            let tree = parse_expression(text)?;
            check_event_expr(&tree, schema, &derived_types, "event_selection")?;
            for ident in tree.idents() {
                if !derived_types.contains_key(ident) {
                    add_criteria(ident);
                }
            }
            Some(tree)
        }
        None => None,
    };

    // Output set: the selected branches plus any counters the format
    // requires for selected jagged branches.
    let mut output: BTreeSet<String> = selected;
    let mut forced_counters = Vec::new();
    for name in output.clone() {
        let (_, meta) = schema.branch(&name).expect("expanded against schema");
        if let Some(counter) = &meta.counter_branch {
            if output.insert(counter.clone()) {
                forced_counters.push(format!("{counter} (counts {name})"));
            }
        }
    }
    if !forced_counters.is_empty() {
        warnings.push(format!(
            "added {} counter branch(es) required by selected jagged branches: {}",
            forced_counters.len(),
            forced_counters.join(", ")
        ));
    }

    // Deterministic schema order for both sets.
    let by_schema_order = |set: &BTreeSet<String>| -> Vec<String> {
        let mut v: Vec<String> = set.iter().cloned().collect();
        v.sort_by_key(|name| schema.branch_index(name).expect("checked above"));
        v
    };
    let branch_plan = BranchPlan {
        criteria: by_schema_order(&criteria),
        output: by_schema_order(&output),
    };

    Ok(ExecPlan {
        input: query.input.clone(),
        output: query.output.clone(),
        branch_plan,
        preselection,
        object_selections,
        derived,
        event_selection,
        codec: query.codec,
        basket_target: query.basket_target,
        warnings,
    })
}

/// Expands the query's branch list against the schema.
///
/// Literal names must exist (warning and skip when not strict). A wildcard
/// with a configured minimal set keeps only that set unless `force_all`,
/// with a warning naming how many matches were dropped.
fn expand_branches(
    query: &SkimQuery,
    schema: &DatasetHeader,
    minimal_sets: &MinimalSets,
    strict: bool,
    warnings: &mut Vec<String>,
) -> Result<BTreeSet<String>> {
    let mut out = BTreeSet::new();
    for pat in &query.branches {
        if let Some(prefix) = pat.strip_suffix('*') {
            let matches: Vec<&str> = schema
                .branches
                .iter()
                .map(|b| b.name.as_str())
                .filter(|n| n.starts_with(prefix))
                .collect();
            if matches.is_empty() {
                let msg = format!("pattern {pat:?} matches no branches");
                if strict {
                    return Err(SkimError::plan(msg));
                }
                warnings.push(msg);
                continue;
            }
            match minimal_sets.get(prefix) {
                Some(set) if !query.force_all => {
                    let keep: Vec<&str> = matches
                        .iter()
                        .copied()
                        .filter(|n| set.iter().any(|s| s == n))
                        .collect();
                    if keep.is_empty() {
                        let msg = format!(
                            "minimal set for {pat:?} shares no branches with this file; keeping all {} matches",
                            matches.len()
                        );
                        warnings.push(msg);
                        out.extend(matches.iter().map(|s| s.to_string()));
                    } else {
                        let dropped = matches.len() - keep.len();
                        if dropped > 0 {
                            warnings.push(format!(
                                "{pat:?} matched {} branches; minimal set keeps {}, excluding {dropped} (set force_all to keep everything)",
                                matches.len(),
                                keep.len()
                            ));
                        }
                        out.extend(keep.iter().map(|s| s.to_string()));
                    }
                }
                _ => out.extend(matches.iter().map(|s| s.to_string())),
            }
        } else if schema.branch(pat).is_some() {
            out.insert(pat.clone());
        } else {
            let msg = format!("branch {pat:?} not found in schema");
            if strict {
                return Err(SkimError::plan(msg));
            }
            warnings.push(msg);
        }
    }
    if out.is_empty() {
        return Err(SkimError::plan("no requested branch exists in this file"));
    }
    Ok(out)
}

/// Finds the counter branch of a collection: the scalar i32 branch
/// `n<collection>`, cross-checked against the collection's jagged branches.
pub fn collection_counter(schema: &DatasetHeader, collection: &str) -> Result<String> {
    let counter_name = format!("n{collection}");
    if let Some((_, meta)) = schema.branch(&counter_name) {
        if meta.kind == BranchKind::Scalar && meta.value_type == ValueType::I32 {
            return Ok(counter_name);
        }
    }
    // Fall back to whatever the collection's jagged branches declare.
    let prefix = format!("{collection}_");
    for b in &schema.branches {
        if b.kind == BranchKind::Jagged && b.name.starts_with(&prefix) {
            return Ok(b.counter_branch.clone().expect("validated header"));
        }
    }
    Err(SkimError::plan(format!(
        "collection {collection:?} has no counter branch (expected {counter_name:?})"
    )))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Type {
    Num,
    Flag,
}

impl Type {
    fn name(self) -> &'static str {
        match self {
            Type::Num => "number",
            Type::Flag => "flag",
        }
    }
}

fn branch_type(vt: ValueType) -> Type {
    if vt == ValueType::Bool {
        Type::Flag
    } else {
        Type::Num
    }
}

/// Type-checks an event-level expression: identifiers must be scalar
/// branches or derived names, and the whole expression must be a flag.
fn check_event_expr(
    tree: &ExprNode,
    schema: &DatasetHeader,
    derived: &BTreeMap<String, Type>,
    what: &str,
) -> Result<()> {
    let lookup = |ident: &str| -> Result<Type> {
        if let Some(&t) = derived.get(ident) {
            return Ok(t);
        }
        match schema.branch(ident) {
            Some((_, meta)) if meta.kind == BranchKind::Scalar => Ok(branch_type(meta.value_type)),
            Some(_) => Err(SkimError::plan(format!(
                "{what}: jagged branch {ident:?} used at event level; aggregate it first"
            ))),
            None => Err(SkimError::plan(format!(
                "{what}: unknown identifier {ident:?}"
            ))),
        }
    };
    expect_type(tree, &lookup, Type::Flag, what)
}

/// Type-checks an object-level cut: jagged identifiers must belong to the
/// collection; scalars broadcast.
fn check_object_expr(tree: &ExprNode, schema: &DatasetHeader, collection: &str) -> Result<()> {
    let prefix = format!("{collection}_");
    let what = format!("object selection on {collection:?}");
    let lookup = |ident: &str| -> Result<Type> {
        match schema.branch(ident) {
            Some((_, meta)) => {
                if meta.kind == BranchKind::Jagged && !ident.starts_with(&prefix) {
                    return Err(SkimError::plan(format!(
                        "{what}: {ident:?} belongs to another collection"
                    )));
                }
                Ok(branch_type(meta.value_type))
            }
            None => Err(SkimError::plan(format!("{what}: unknown identifier {ident:?}"))),
        }
    };
    expect_type(tree, &lookup, Type::Flag, &what)
}

fn expect_type(
    tree: &ExprNode,
    lookup: &impl Fn(&str) -> Result<Type>,
    want: Type,
    what: &str,
) -> Result<()> {
    let got = infer(tree, lookup, what)?;
    if got != want {
        return Err(SkimError::plan(format!(
            "{what}: expression is a {}, expected a {}",
            got.name(),
            want.name()
        )));
    }
    Ok(())
}

fn infer(tree: &ExprNode, lookup: &impl Fn(&str) -> Result<Type>, what: &str) -> Result<Type> {
    let demand = |node: &ExprNode, want: Type| -> Result<()> {
        let got = infer(node, lookup, what)?;
        if got != want {
            return Err(SkimError::plan(format!(
                "{what}: {node} is a {}, expected a {}",
                got.name(),
                want.name()
            )));
        }
        Ok(())
    };
    match tree {
        ExprNode::Number(_) => Ok(Type::Num),
        ExprNode::Bool(_) => Ok(Type::Flag),
        ExprNode::Ident(name) => lookup(name),
        ExprNode::Neg(x) | ExprNode::Abs(x) => {
            demand(x, Type::Num)?;
            Ok(Type::Num)
        }
        ExprNode::Not(x) => {
            demand(x, Type::Flag)?;
            Ok(Type::Flag)
        }
        ExprNode::Binary { op, lhs, rhs } => match op {
            BinOp::And | BinOp::Or => {
                demand(lhs, Type::Flag)?;
                demand(rhs, Type::Flag)?;
                Ok(Type::Flag)
            }
            BinOp::Add | BinOp::Sub | BinOp::Mul => {
                demand(lhs, Type::Num)?;
                demand(rhs, Type::Num)?;
                Ok(Type::Num)
            }
            BinOp::Eq | BinOp::Ne => {
                let lt = infer(lhs, lookup, what)?;
                demand(rhs, lt)?;
                Ok(Type::Flag)
            }
            _ => {
                demand(lhs, Type::Num)?;
                demand(rhs, Type::Num)?;
                Ok(Type::Flag)
            }
        },
        ExprNode::Aggregate(_) => Ok(Type::Num),
    }
}
