//! Header and basket readers over a range-addressable source.

use std::sync::Arc;

use crate::colfmt::{
    codec, decode_header_body, locate_basket, BasketRef, BranchKind, BranchMeta, ColumnData,
    ColumnSlice, DatasetHeader, MAGIC,
};
use crate::error::{Result, SkimError};
use crate::transport::RangeSource;

/// Bytes before the header body: 8-byte magic plus the 24-byte preamble
/// (format version, header length, event count).
pub const HEADER_PREAMBLE_LEN: u64 = 32;

/// Reads and validates the header with exactly two range reads: the fixed
/// preamble, then the header body.
pub fn read_header(source: &dyn RangeSource) -> Result<DatasetHeader> {
    if source.len() < HEADER_PREAMBLE_LEN {
        return Err(SkimError::format(format!(
            "truncated header: source is {} bytes, preamble needs {}",
            source.len(),
            HEADER_PREAMBLE_LEN
        )));
    }
    let preamble = source.read_range(0, HEADER_PREAMBLE_LEN)?;
    if &preamble[0..8] != MAGIC {
        return Err(SkimError::format("bad magic: not a skimlite dataset"));
    }
    let format_version = u64::from_le_bytes(preamble[8..16].try_into().unwrap());
    if format_version != super::FORMAT_VERSION {
        return Err(SkimError::format(format!(
            "unsupported format version {format_version}"
        )));
    }
    let header_length = u64::from_le_bytes(preamble[16..24].try_into().unwrap());
    let n_events = u64::from_le_bytes(preamble[24..32].try_into().unwrap());
    if source.len() < HEADER_PREAMBLE_LEN + header_length {
        return Err(SkimError::format("truncated header body"));
    }
    let body = source.read_range(HEADER_PREAMBLE_LEN, header_length)?;
    decode_header_body(&body, format_version, n_events)
}

/// Undoes the basket's compression; the output length must equal the
/// recorded uncompressed length.
pub fn decompress_basket(raw: &[u8], bref: &BasketRef) -> Result<Vec<u8>> {
    if raw.len() as u32 != bref.compressed_len {
        return Err(SkimError::format(format!(
            "basket payload is {} bytes, header says {}",
            raw.len(),
            bref.compressed_len
        )));
    }
    codec::decompress(bref.codec, raw, bref.uncompressed_len as usize)
}

/// Decodes an uncompressed basket payload into a typed column slice.
///
/// Jagged payloads are `[event offset table][values]`; the offset table has
/// `n_entries + 1` little-endian u32 entries starting at 0.
pub fn deserialize_basket(
    meta: &BranchMeta,
    basket_index: usize,
    payload: &[u8],
) -> Result<ColumnSlice> {
    let bref = &meta.baskets[basket_index];
    let n = bref.n_entries as usize;
    let first_event = meta.first_event[basket_index];
    match meta.kind {
        BranchKind::Scalar => {
            let data = ColumnData::decode(meta.value_type, payload, n)?;
            Ok(ColumnSlice {
                branch: meta.name.clone(),
                first_event,
                n_entries: n as u64,
                data,
                event_offsets: None,
            })
        }
        BranchKind::Jagged => {
            let table_len = 4 * (n + 1);
            if payload.len() < table_len {
                return Err(SkimError::format(format!(
                    "jagged basket of {:?} too short for its offset table",
                    meta.name
                )));
            }
            let offsets: Vec<u32> = payload[..table_len]
                .chunks_exact(4)
                .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            if offsets[0] != 0 {
                return Err(SkimError::format("event offset table does not start at 0"));
            }
            if offsets.windows(2).any(|w| w[1] < w[0]) {
                return Err(SkimError::format("event offset table is not non-decreasing"));
            }
            let n_values = offsets[n] as usize;
            let data = ColumnData::decode(meta.value_type, &payload[table_len..], n_values)?;
            Ok(ColumnSlice {
                branch: meta.name.clone(),
                first_event,
                n_entries: n as u64,
                data,
                event_offsets: Some(offsets),
            })
        }
    }
}

/// An open dataset: a validated header over a shared range source.
///
/// Immutable after open; safe to use from multiple workers.
pub struct DatasetReader {
    pub source: Arc<dyn RangeSource>,
    pub header: DatasetHeader,
}

impl DatasetReader {
    pub fn open(source: Arc<dyn RangeSource>) -> Result<DatasetReader> {
        let header = read_header(source.as_ref())?;
        Ok(DatasetReader { source, header })
    }

    pub fn read_basket_raw(&self, branch_idx: usize, basket_idx: usize) -> Result<Vec<u8>> {
        let bref = &self.header.branches[branch_idx].baskets[basket_idx];
        self.source
            .read_range(bref.file_offset, bref.compressed_len as u64)
    }

    /// Fetch + decompress + deserialize one basket.
    pub fn read_slice(&self, branch_idx: usize, basket_idx: usize) -> Result<ColumnSlice> {
        let meta = &self.header.branches[branch_idx];
        let raw = self.read_basket_raw(branch_idx, basket_idx)?;
        let payload = decompress_basket(&raw, &meta.baskets[basket_idx])?;
        deserialize_basket(meta, basket_idx, &payload)
    }

    /// The slice covering `event` for a branch.
    pub fn slice_for_event(&self, branch_idx: usize, event: u64) -> Result<ColumnSlice> {
        let meta = &self.header.branches[branch_idx];
        let b = locate_basket(meta, event, self.header.n_events)?;
        self.read_slice(branch_idx, b)
    }

    /// Reads a whole column back into memory (values plus per-event counts
    /// for jagged branches).
    pub fn read_full_column(&self, branch_idx: usize) -> Result<(ColumnData, Option<Vec<u32>>)> {
        let meta = &self.header.branches[branch_idx];
        let mut data = ColumnData::new(meta.value_type);
        let mut counts = match meta.kind {
            BranchKind::Jagged => Some(Vec::with_capacity(self.header.n_events as usize)),
            BranchKind::Scalar => None,
        };
        for b in 0..meta.baskets.len() {
            let slice = self.read_slice(branch_idx, b)?;
            data.extend_from(&slice.data, 0, slice.data.len())?;
            if let (Some(counts), Some(offsets)) = (counts.as_mut(), &slice.event_offsets) {
                for w in offsets.windows(2) {
                    counts.push(w[1] - w[0]);
                }
            }
        }
        Ok((data, counts))
    }
}
