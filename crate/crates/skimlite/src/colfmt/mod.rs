//! The columnar event file format.
//!
//! A file is `MAGIC | preamble | header body | baskets`. Every branch stores
//! its entries as a sequence of compressed baskets; the header carries a
//! first-event index array per branch so an event maps to its basket with a
//! binary search. Baskets are laid out grouped by branch: all of one branch's
//! baskets are contiguous in the file.
//!
//! Byte-level details live in `docs/FORMAT.md`.

pub mod codec;
mod reader;
mod writer;

pub use codec::{compress, decompress, Codec};
pub use reader::{
    decompress_basket, deserialize_basket, read_header, DatasetReader, HEADER_PREAMBLE_LEN,
};
pub use writer::{write_dataset, BranchSpec, ColumnInput};

use serde::{Deserialize, Serialize};

use crate::error::{Result, SkimError};

/// 8-byte file magic.
pub const MAGIC: &[u8; 8] = b"SKIMLITE";

/// Current on-disk format version.
pub const FORMAT_VERSION: u64 = 1;

/// Default uncompressed basket size, in bytes.
pub const DEFAULT_BASKET_TARGET: usize = 64 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BranchKind {
    /// One value per event.
    Scalar,
    /// A variable-length list per event, sized by a counter branch.
    Jagged,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueType {
    F32,
    F64,
    I32,
    U8,
    Bool,
}

impl ValueType {
    /// Encoded width of one value, in bytes.
    pub fn width(self) -> usize {
        match self {
            ValueType::F32 | ValueType::I32 => 4,
            ValueType::F64 => 8,
            ValueType::U8 | ValueType::Bool => 1,
        }
    }

    fn to_tag(self) -> u8 {
        match self {
            ValueType::F32 => 0,
            ValueType::F64 => 1,
            ValueType::I32 => 2,
            ValueType::U8 => 3,
            ValueType::Bool => 4,
        }
    }

    fn from_tag(tag: u8) -> Result<ValueType> {
        match tag {
            0 => Ok(ValueType::F32),
            1 => Ok(ValueType::F64),
            2 => Ok(ValueType::I32),
            3 => Ok(ValueType::U8),
            4 => Ok(ValueType::Bool),
            other => Err(SkimError::format(format!("unknown value type tag {other}"))),
        }
    }

    pub fn is_numeric(self) -> bool {
        !matches!(self, ValueType::Bool)
    }
}

impl BranchKind {
    fn to_tag(self) -> u8 {
        match self {
            BranchKind::Scalar => 0,
            BranchKind::Jagged => 1,
        }
    }

    fn from_tag(tag: u8) -> Result<BranchKind> {
        match tag {
            0 => Ok(BranchKind::Scalar),
            1 => Ok(BranchKind::Jagged),
            other => Err(SkimError::format(format!("unknown branch kind tag {other}"))),
        }
    }
}

/// Location and shape of one compressed basket in the file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BasketRef {
    pub file_offset: u64,
    pub compressed_len: u32,
    pub uncompressed_len: u32,
    pub codec: Codec,
    /// Events covered by this basket.
    pub n_entries: u32,
}

/// Per-branch metadata: type info, basket map, first-event index array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchMeta {
    pub name: String,
    pub kind: BranchKind,
    pub value_type: ValueType,
    /// For jagged branches, the scalar i32 branch holding per-event counts.
    pub counter_branch: Option<String>,
    pub baskets: Vec<BasketRef>,
    /// Starting event index of each basket; strictly increasing from 0.
    pub first_event: Vec<u64>,
}

impl BranchMeta {
    /// `[start, end)` event range of basket `b`, given the file's event count.
    pub fn basket_event_range(&self, b: usize, n_events: u64) -> (u64, u64) {
        let start = self.first_event[b];
        let end = if b + 1 < self.first_event.len() {
            self.first_event[b + 1]
        } else {
            n_events
        };
        (start, end)
    }
}

/// Fully self-describing file header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub format_version: u64,
    pub n_events: u64,
    pub branches: Vec<BranchMeta>,
    /// Length of the encoded header body (bytes after the fixed preamble).
    pub header_length: u64,
}

impl DatasetHeader {
    /// File offset where basket data begins.
    pub fn data_start(&self) -> u64 {
        HEADER_PREAMBLE_LEN + self.header_length
    }

    pub fn branch(&self, name: &str) -> Option<(usize, &BranchMeta)> {
        self.branches
            .iter()
            .enumerate()
            .find(|(_, b)| b.name == name)
    }

    pub fn branch_index(&self, name: &str) -> Result<usize> {
        self.branch(name)
            .map(|(i, _)| i)
            .ok_or_else(|| SkimError::plan(format!("branch {name:?} not found in schema")))
    }

    /// Checks the structural invariants of the header.
    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for b in &self.branches {
            if !seen.insert(b.name.as_str()) {
                return Err(SkimError::format(format!("duplicate branch name {:?}", b.name)));
            }
            if b.first_event.len() != b.baskets.len() {
                return Err(SkimError::format(format!(
                    "branch {:?}: first_event length {} != basket count {}",
                    b.name,
                    b.first_event.len(),
                    b.baskets.len()
                )));
            }
            if self.n_events > 0 && b.baskets.is_empty() {
                return Err(SkimError::format(format!(
                    "branch {:?} has no baskets but the file has {} events",
                    b.name, self.n_events
                )));
            }
            if let Some(first) = b.first_event.first() {
                if *first != 0 {
                    return Err(SkimError::format(format!(
                        "branch {:?}: first basket starts at event {first}, expected 0",
                        b.name
                    )));
                }
            }
            for w in b.first_event.windows(2) {
                if w[1] <= w[0] {
                    return Err(SkimError::format(format!(
                        "branch {:?}: first_event array not strictly increasing",
                        b.name
                    )));
                }
            }
            let mut covered = 0u64;
            for (i, basket) in b.baskets.iter().enumerate() {
                if basket.n_entries > 0 && basket.compressed_len == 0 {
                    return Err(SkimError::format(format!(
                        "branch {:?}: basket {i} covers entries but is empty",
                        b.name
                    )));
                }
                if basket.codec == Codec::None && basket.compressed_len != basket.uncompressed_len
                {
                    return Err(SkimError::format(format!(
                        "branch {:?}: basket {i} uses codec none but lengths differ",
                        b.name
                    )));
                }
                covered = b.first_event[i] + basket.n_entries as u64;
            }
            if !b.baskets.is_empty() && covered != self.n_events {
                return Err(SkimError::format(format!(
                    "branch {:?}: baskets cover {covered} events, file has {}",
                    b.name, self.n_events
                )));
            }
            if b.kind == BranchKind::Jagged {
                let counter = b.counter_branch.as_deref().ok_or_else(|| {
                    SkimError::format(format!("jagged branch {:?} lacks a counter branch", b.name))
                })?;
                match self.branch(counter) {
                    Some((_, c))
                        if c.kind == BranchKind::Scalar && c.value_type == ValueType::I32 => {}
                    Some(_) => {
                        return Err(SkimError::format(format!(
                            "counter branch {counter:?} of {:?} is not a scalar i32 branch",
                            b.name
                        )))
                    }
                    None => {
                        return Err(SkimError::format(format!(
                            "counter branch {counter:?} of {:?} does not exist",
                            b.name
                        )))
                    }
                }
            }
        }
        Ok(())
    }
}

/// Finds the basket holding `event` by binary search over the first-event
/// index array.
pub fn locate_basket(meta: &BranchMeta, event: u64, n_events: u64) -> Result<usize> {
    if event >= n_events || meta.first_event.is_empty() {
        return Err(SkimError::EventOutOfRange { event, n_events });
    }
    let b = meta.first_event.partition_point(|&fe| fe <= event);
    Ok(b - 1)
}

/// Typed, decoded values for one branch over one basket's event range.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnSlice {
    pub branch: String,
    pub first_event: u64,
    pub n_entries: u64,
    pub data: ColumnData,
    /// Offsets into `data`, length `n_entries + 1`. `None` means the
    /// identity mapping of a scalar branch.
    pub event_offsets: Option<Vec<u32>>,
}

impl ColumnSlice {
    pub fn contains(&self, event: u64) -> bool {
        event >= self.first_event && event < self.first_event + self.n_entries
    }

    /// Index range into `data` for `event`.
    pub fn value_range(&self, event: u64) -> Result<(usize, usize)> {
        if !self.contains(event) {
            return Err(SkimError::EventOutOfRange {
                event,
                n_events: self.first_event + self.n_entries,
            });
        }
        let k = (event - self.first_event) as usize;
        match &self.event_offsets {
            None => Ok((k, k + 1)),
            Some(offsets) => Ok((offsets[k] as usize, offsets[k + 1] as usize)),
        }
    }

    /// Number of values stored for `event`.
    pub fn count(&self, event: u64) -> Result<usize> {
        let (a, b) = self.value_range(event)?;
        Ok(b - a)
    }

    /// The typed value list for one event.
    pub fn event_values(&self, event: u64) -> Result<ColumnData> {
        let (a, b) = self.value_range(event)?;
        Ok(self.data.slice(a, b))
    }

    /// The single numeric value of a scalar branch at `event`.
    pub fn scalar_f64(&self, event: u64) -> Result<f64> {
        let (a, _) = self.value_range(event)?;
        self.data.get_f64(a)
    }

    pub fn scalar_bool(&self, event: u64) -> Result<bool> {
        let (a, _) = self.value_range(event)?;
        self.data.get_bool(a)
    }
}

/// A typed flat value array.
#[derive(Debug, Clone, PartialEq)]
pub enum ColumnData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    I32(Vec<i32>),
    U8(Vec<u8>),
    Bool(Vec<bool>),
}

impl ColumnData {
    pub fn new(vt: ValueType) -> ColumnData {
        match vt {
            ValueType::F32 => ColumnData::F32(Vec::new()),
            ValueType::F64 => ColumnData::F64(Vec::new()),
            ValueType::I32 => ColumnData::I32(Vec::new()),
            ValueType::U8 => ColumnData::U8(Vec::new()),
            ValueType::Bool => ColumnData::Bool(Vec::new()),
        }
    }

    pub fn value_type(&self) -> ValueType {
        match self {
            ColumnData::F32(_) => ValueType::F32,
            ColumnData::F64(_) => ValueType::F64,
            ColumnData::I32(_) => ValueType::I32,
            ColumnData::U8(_) => ValueType::U8,
            ColumnData::Bool(_) => ValueType::Bool,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            ColumnData::F32(v) => v.len(),
            ColumnData::F64(v) => v.len(),
            ColumnData::I32(v) => v.len(),
            ColumnData::U8(v) => v.len(),
            ColumnData::Bool(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn slice(&self, a: usize, b: usize) -> ColumnData {
        match self {
            ColumnData::F32(v) => ColumnData::F32(v[a..b].to_vec()),
            ColumnData::F64(v) => ColumnData::F64(v[a..b].to_vec()),
            ColumnData::I32(v) => ColumnData::I32(v[a..b].to_vec()),
            ColumnData::U8(v) => ColumnData::U8(v[a..b].to_vec()),
            ColumnData::Bool(v) => ColumnData::Bool(v[a..b].to_vec()),
        }
    }

    /// Appends `other[a..b]` to `self`. Both sides must share a variant.
    pub fn extend_from(&mut self, other: &ColumnData, a: usize, b: usize) -> Result<()> {
        match (self, other) {
            (ColumnData::F32(d), ColumnData::F32(s)) => d.extend_from_slice(&s[a..b]),
            (ColumnData::F64(d), ColumnData::F64(s)) => d.extend_from_slice(&s[a..b]),
            (ColumnData::I32(d), ColumnData::I32(s)) => d.extend_from_slice(&s[a..b]),
            (ColumnData::U8(d), ColumnData::U8(s)) => d.extend_from_slice(&s[a..b]),
            (ColumnData::Bool(d), ColumnData::Bool(s)) => d.extend_from_slice(&s[a..b]),
            _ => return Err(SkimError::format("column type mismatch in extend_from")),
        }
        Ok(())
    }

    /// Numeric view of one value. Integers widen exactly; bool is an error.
    pub fn get_f64(&self, idx: usize) -> Result<f64> {
        match self {
            ColumnData::F32(v) => Ok(v[idx] as f64),
            ColumnData::F64(v) => Ok(v[idx]),
            ColumnData::I32(v) => Ok(v[idx] as f64),
            ColumnData::U8(v) => Ok(v[idx] as f64),
            ColumnData::Bool(_) => Err(SkimError::plan("boolean branch used as a number")),
        }
    }

    pub fn get_bool(&self, idx: usize) -> Result<bool> {
        match self {
            ColumnData::Bool(v) => Ok(v[idx]),
            _ => Err(SkimError::plan("numeric branch used as a boolean")),
        }
    }

    /// Little-endian encoding of all values.
    pub fn encode(&self) -> Vec<u8> {
        match self {
            ColumnData::F32(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
            ColumnData::F64(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
            ColumnData::I32(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
            ColumnData::U8(v) => v.clone(),
            ColumnData::Bool(v) => v.iter().map(|&b| b as u8).collect(),
        }
    }

    /// Decodes `n` little-endian values of type `vt` from `bytes`.
    pub fn decode(vt: ValueType, bytes: &[u8], n: usize) -> Result<ColumnData> {
        if bytes.len() != n * vt.width() {
            return Err(SkimError::format(format!(
                "payload length {} does not match {} values of width {}",
                bytes.len(),
                n,
                vt.width()
            )));
        }
        let data = match vt {
            ValueType::F32 => ColumnData::F32(
                bytes
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            ValueType::F64 => ColumnData::F64(
                bytes
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            ValueType::I32 => ColumnData::I32(
                bytes
                    .chunks_exact(4)
                    .map(|c| i32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            ValueType::U8 => ColumnData::U8(bytes.to_vec()),
            ValueType::Bool => {
                let mut out = Vec::with_capacity(n);
                for &b in bytes {
                    match b {
                        0 => out.push(false),
                        1 => out.push(true),
                        other => {
                            return Err(SkimError::format(format!(
                                "invalid boolean byte {other:#04x}"
                            )))
                        }
                    }
                }
                ColumnData::Bool(out)
            }
        };
        Ok(data)
    }
}

pub(crate) fn encode_header_body(header: &DatasetHeader) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&(header.branches.len() as u32).to_le_bytes());
    for b in &header.branches {
        put_str(&mut out, &b.name);
        out.push(b.kind.to_tag());
        out.push(b.value_type.to_tag());
        put_str(&mut out, b.counter_branch.as_deref().unwrap_or(""));
        out.extend_from_slice(&(b.baskets.len() as u32).to_le_bytes());
        for basket in &b.baskets {
            out.extend_from_slice(&basket.file_offset.to_le_bytes());
            out.extend_from_slice(&basket.compressed_len.to_le_bytes());
            out.extend_from_slice(&basket.uncompressed_len.to_le_bytes());
            out.push(basket.codec.to_tag());
            out.extend_from_slice(&basket.n_entries.to_le_bytes());
        }
        for fe in &b.first_event {
            out.extend_from_slice(&fe.to_le_bytes());
        }
    }
    out
}

pub(crate) fn decode_header_body(
    body: &[u8],
    format_version: u64,
    n_events: u64,
) -> Result<DatasetHeader> {
    let mut cur = Cursor { buf: body, pos: 0 };
    let n_branches = cur.u32()? as usize;
    let mut branches = Vec::with_capacity(n_branches);
    for _ in 0..n_branches {
        let name = cur.string()?;
        let kind = BranchKind::from_tag(cur.u8()?)?;
        let value_type = ValueType::from_tag(cur.u8()?)?;
        let counter = cur.string()?;
        let n_baskets = cur.u32()? as usize;
        let mut baskets = Vec::with_capacity(n_baskets);
        for _ in 0..n_baskets {
            baskets.push(BasketRef {
                file_offset: cur.u64()?,
                compressed_len: cur.u32()?,
                uncompressed_len: cur.u32()?,
                codec: Codec::from_tag(cur.u8()?)?,
                n_entries: cur.u32()?,
            });
        }
        let mut first_event = Vec::with_capacity(n_baskets);
        for _ in 0..n_baskets {
            first_event.push(cur.u64()?);
        }
        branches.push(BranchMeta {
            name,
            kind,
            value_type,
            counter_branch: if counter.is_empty() { None } else { Some(counter) },
            baskets,
            first_event,
        });
    }
    if cur.pos != body.len() {
        return Err(SkimError::format("trailing bytes after header body"));
    }
    let header = DatasetHeader {
        format_version,
        n_events,
        branches,
        header_length: body.len() as u64,
    };
    header.validate()?;
    Ok(header)
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    let bytes = s.as_bytes();
    debug_assert!(bytes.len() <= u16::MAX as usize);
    out.extend_from_slice(&(bytes.len() as u16).to_le_bytes());
    out.extend_from_slice(bytes);
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(SkimError::format("truncated header body"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let len = u16::from_le_bytes(self.take(2)?.try_into().unwrap()) as usize;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec())
            .map_err(|_| SkimError::format("branch name is not valid utf-8"))
    }
}
