//! The JSON query language and its compilation into an executable plan.
//!
//! A query names an input and output file, the branches to keep (with
//! trailing-`*` wildcards), and up to three selection stages: an event-level
//! preselection, per-collection object selections, and a final event
//! selection that may reference derived quantities. Unknown keys are
//! rejected outright so typos fail loudly instead of silently skimming the
//! wrong thing. The machine-readable schema is `docs/query.schema.json`.

pub mod expr;
pub mod plan;

pub use expr::{parse_expression, AggregateSpec, BinOp, ExprNode};
pub use plan::{build_plan, BranchPlan, ExecPlan, MinimalSets, PlannedAggregate, PlannedObjectSelection};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::colfmt::Codec;
use crate::error::{Result, SkimError};

/// One object-level cut: rows of `collection` must satisfy `cut`, and the
/// event keeps at least `min_count` surviving rows.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectSelection {
    pub collection: String,
    pub cut: String,
    #[serde(default)]
    pub min_count: u32,
}

/// A skim request, as written by the user.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkimQuery {
    pub input: String,
    pub output: String,
    /// Branches to keep; a trailing `*` matches by prefix.
    pub branches: Vec<String>,
    /// Disables minimal-set substitution for wildcard matches.
    #[serde(default)]
    pub force_all: bool,
    /// Cheap event-level cut evaluated first.
    #[serde(default)]
    pub preselection: Option<String>,
    #[serde(default)]
    pub object_selections: Vec<ObjectSelection>,
    /// Final event-level cut; may reference derived quantities by name.
    #[serde(default)]
    pub event_selection: Option<String>,
    /// Named aggregates, e.g. `"HT": "sum(Jet_pt)"`.
    #[serde(default)]
    pub derived: BTreeMap<String, String>,
    /// Output codec override; defaults to each input basket's codec.
    #[serde(default)]
    pub codec: Option<Codec>,
    /// Output basket size override, in bytes.
    #[serde(default)]
    pub basket_target: Option<usize>,
}

/// Parses and structurally validates a JSON query.
///
/// Everything checkable without the input file's schema is checked here:
/// JSON shape, unknown keys, expression syntax, and that each derived value
/// is exactly one aggregate call.
pub fn parse_query(text: &str) -> Result<SkimQuery> {
    let query: SkimQuery =
        serde_json::from_str(text).map_err(|e| SkimError::Query(e.to_string()))?;
    validate_query(&query)?;
    Ok(query)
}

fn validate_query(query: &SkimQuery) -> Result<()> {
    if query.input.is_empty() {
        return Err(SkimError::Query("input must not be empty".into()));
    }
    if query.output.is_empty() {
        return Err(SkimError::Query("output must not be empty".into()));
    }
    if query.branches.is_empty() {
        return Err(SkimError::Query("branches must name at least one branch".into()));
    }
    for pat in &query.branches {
        if !valid_branch_pattern(pat) {
            return Err(SkimError::Query(format!(
                "bad branch pattern {pat:?}: identifier characters with at most one trailing '*'"
            )));
        }
    }
    if let Some(expr) = &query.preselection {
        let tree = parse_expression(expr)?;
        if !tree.aggregates().is_empty() {
            return Err(SkimError::Query(
                "preselection must not use aggregates; derive them and cut in event_selection"
                    .into(),
            ));
        }
    }
    for sel in &query.object_selections {
        if !is_ident(&sel.collection) {
            return Err(SkimError::Query(format!(
                "bad collection name {:?}",
                sel.collection
            )));
        }
        let tree = parse_expression(&sel.cut)?;
        if !tree.aggregates().is_empty() {
            return Err(SkimError::Query(format!(
                "object selection on {:?} must not use aggregates",
                sel.collection
            )));
        }
    }
    if let Some(expr) = &query.event_selection {
        parse_expression(expr)?;
    }
    for (name, text) in &query.derived {
        if !is_ident(name) {
            return Err(SkimError::Query(format!("bad derived name {name:?}")));
        }
        let tree = parse_expression(text)?;
        if !matches!(tree, ExprNode::Aggregate(_)) {
            return Err(SkimError::Query(format!(
                "derived {name:?} must be a single sum(...) or count(...) call, got {text:?}"
            )));
        }
    }
    if let Some(target) = query.basket_target {
        if target == 0 {
            return Err(SkimError::Query("basket_target must be positive".into()));
        }
    }
    Ok(())
}

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn valid_branch_pattern(pat: &str) -> bool {
    let stem = pat.strip_suffix('*').unwrap_or(pat);
    if pat.ends_with('*') {
        // `*` alone would select everything; require a named prefix.
        !stem.is_empty() && stem.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
    } else {
        is_ident(stem)
    }
}
