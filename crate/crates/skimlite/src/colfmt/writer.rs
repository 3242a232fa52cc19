//! Dataset writer: splits columns into baskets, compresses them, and emits
//! magic, preamble, header body, then baskets grouped by branch.

use std::io::Write;

use crate::colfmt::{
    codec, encode_header_body, BasketRef, BranchKind, BranchMeta, Codec, ColumnData,
    DatasetHeader, ValueType, FORMAT_VERSION, MAGIC,
};
use crate::error::{Result, SkimError};

/// Schema entry handed to [`write_dataset`].
#[derive(Debug, Clone, PartialEq)]
pub struct BranchSpec {
    pub name: String,
    pub kind: BranchKind,
    pub value_type: ValueType,
    pub counter_branch: Option<String>,
}

impl BranchSpec {
    pub fn scalar(name: impl Into<String>, value_type: ValueType) -> BranchSpec {
        BranchSpec {
            name: name.into(),
            kind: BranchKind::Scalar,
            value_type,
            counter_branch: None,
        }
    }

    pub fn jagged(
        name: impl Into<String>,
        value_type: ValueType,
        counter: impl Into<String>,
    ) -> BranchSpec {
        BranchSpec {
            name: name.into(),
            kind: BranchKind::Jagged,
            value_type,
            counter_branch: Some(counter.into()),
        }
    }
}

/// One branch's full value stream.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnInput {
    /// All values, flattened across events.
    pub data: ColumnData,
    /// Per-event multiplicities; required for jagged branches, absent for
    /// scalars.
    pub counts: Option<Vec<u32>>,
}

impl ColumnInput {
    pub fn scalar(data: ColumnData) -> ColumnInput {
        ColumnInput { data, counts: None }
    }

    pub fn jagged(data: ColumnData, counts: Vec<u32>) -> ColumnInput {
        ColumnInput { data, counts: Some(counts) }
    }
}

/// Events per basket for a value type under the given uncompressed target.
pub fn entries_per_basket(basket_target: usize, vt: ValueType) -> u64 {
    let width = vt.width();
    (basket_target.div_ceil(width).max(1)) as u64
}

/// Writes a dataset and returns the header exactly as written.
pub fn write_dataset<W: Write>(
    schema: &[BranchSpec],
    columns: &[ColumnInput],
    n_events: u64,
    basket_target: usize,
    default_codec: Codec,
    sink: &mut W,
) -> Result<DatasetHeader> {
    validate_inputs(schema, columns, n_events)?;

    // Build every basket in memory first: the header stores per-basket
    // compressed lengths and absolute offsets, so it must precede the data.
    let mut branch_baskets: Vec<Vec<Vec<u8>>> = Vec::with_capacity(schema.len());
    let mut branches: Vec<BranchMeta> = Vec::with_capacity(schema.len());

    for (spec, col) in schema.iter().zip(columns) {
        let epb = entries_per_basket(basket_target, spec.value_type);
        let mut baskets = Vec::new();
        let mut first_event = Vec::new();
        let mut payloads = Vec::new();

        // Cumulative value offset per event for jagged branches.
        let cum: Option<Vec<u64>> = col.counts.as_ref().map(|counts| {
            let mut cum = Vec::with_capacity(counts.len() + 1);
            let mut total = 0u64;
            cum.push(0);
            for &c in counts {
                total += c as u64;
                cum.push(total);
            }
            cum
        });

        let mut start = 0u64;
        while start < n_events {
            let end = (start + epb).min(n_events);
            let n_entries = (end - start) as u32;
            let payload = match (&spec.kind, &cum) {
                (BranchKind::Scalar, _) => {
                    col.data.slice(start as usize, end as usize).encode()
                }
                (BranchKind::Jagged, Some(cum)) => {
                    let base = cum[start as usize];
                    let mut payload = Vec::new();
                    for e in start..=end {
                        let off = (cum[e as usize] - base) as u32;
                        payload.extend_from_slice(&off.to_le_bytes());
                    }
                    let values = col
                        .data
                        .slice(cum[start as usize] as usize, cum[end as usize] as usize);
                    payload.extend_from_slice(&values.encode());
                    payload
                }
                (BranchKind::Jagged, None) => unreachable!("validated above"),
            };
            let compressed = codec::compress(default_codec, &payload)?;
            baskets.push(BasketRef {
                file_offset: 0, // assigned once the header length is known
                compressed_len: compressed.len() as u32,
                uncompressed_len: payload.len() as u32,
                codec: default_codec,
                n_entries,
            });
            first_event.push(start);
            payloads.push(compressed);
            start = end;
        }

        branches.push(BranchMeta {
            name: spec.name.clone(),
            kind: spec.kind,
            value_type: spec.value_type,
            counter_branch: spec.counter_branch.clone(),
            baskets,
            first_event,
        });
        branch_baskets.push(payloads);
    }

    let mut header = DatasetHeader {
        format_version: FORMAT_VERSION,
        n_events,
        branches,
        header_length: 0,
    };

    // The body length is independent of the offset values (fixed-width
    // fields), so encode once for the length, assign offsets, encode again.
    let body_len = encode_header_body(&header).len() as u64;
    header.header_length = body_len;
    let mut offset = header.data_start();
    for branch in header.branches.iter_mut() {
        for basket in branch.baskets.iter_mut() {
            basket.file_offset = offset;
            offset += basket.compressed_len as u64;
        }
    }
    let body = encode_header_body(&header);
    debug_assert_eq!(body.len() as u64, body_len);
    header.validate()?;

    sink.write_all(MAGIC)?;
    sink.write_all(&FORMAT_VERSION.to_le_bytes())?;
    sink.write_all(&body_len.to_le_bytes())?;
    sink.write_all(&n_events.to_le_bytes())?;
    sink.write_all(&body)?;
    for payloads in &branch_baskets {
        for payload in payloads {
            sink.write_all(payload)?;
        }
    }
    sink.flush()?;
    Ok(header)
}

fn validate_inputs(schema: &[BranchSpec], columns: &[ColumnInput], n_events: u64) -> Result<()> {
    if schema.len() != columns.len() {
        return Err(SkimError::format(format!(
            "{} branch specs but {} columns",
            schema.len(),
            columns.len()
        )));
    }
    let mut names = std::collections::HashMap::new();
    for (i, spec) in schema.iter().enumerate() {
        if names.insert(spec.name.clone(), i).is_some() {
            return Err(SkimError::format(format!("duplicate branch name {:?}", spec.name)));
        }
    }
    for (spec, col) in schema.iter().zip(columns) {
        if col.data.value_type() != spec.value_type {
            return Err(SkimError::format(format!(
                "branch {:?}: column data is {:?}, schema says {:?}",
                spec.name,
                col.data.value_type(),
                spec.value_type
            )));
        }
        match spec.kind {
            BranchKind::Scalar => {
                if col.counts.is_some() {
                    return Err(SkimError::format(format!(
                        "scalar branch {:?} must not carry counts",
                        spec.name
                    )));
                }
                if col.data.len() as u64 != n_events {
                    return Err(SkimError::format(format!(
                        "scalar branch {:?} has {} values for {} events",
                        spec.name,
                        col.data.len(),
                        n_events
                    )));
                }
            }
            BranchKind::Jagged => {
                let counts = col.counts.as_ref().ok_or_else(|| {
                    SkimError::format(format!("jagged branch {:?} lacks counts", spec.name))
                })?;
                if counts.len() as u64 != n_events {
                    return Err(SkimError::format(format!(
                        "jagged branch {:?} has {} counts for {} events",
                        spec.name,
                        counts.len(),
                        n_events
                    )));
                }
                let total: u64 = counts.iter().map(|&c| c as u64).sum();
                if total != col.data.len() as u64 {
                    return Err(SkimError::format(format!(
                        "jagged branch {:?}: counts sum to {total} but {} values given",
                        spec.name,
                        col.data.len()
                    )));
                }
                let counter_name = spec.counter_branch.as_deref().ok_or_else(|| {
                    SkimError::format(format!("jagged branch {:?} lacks a counter branch", spec.name))
                })?;
                let ci = *names.get(counter_name).ok_or_else(|| {
                    SkimError::format(format!(
                        "counter branch {counter_name:?} of {:?} not in schema",
                        spec.name
                    ))
                })?;
                if let ColumnData::I32(counter_vals) = &columns[ci].data {
                    let matches = counter_vals
                        .iter()
                        .zip(counts)
                        .all(|(&v, &c)| v >= 0 && v as u32 == c);
                    if !matches {
                        return Err(SkimError::format(format!(
                            "jagged branch {:?}: counts disagree with counter branch {counter_name:?}",
                            spec.name
                        )));
                    }
                } else {
                    return Err(SkimError::format(format!(
                        "counter branch {counter_name:?} of {:?} is not i32",
                        spec.name
                    )));
                }
            }
        }
    }
    Ok(())
}
