//! Per-basket block codecs: raw passthrough, LZ4 (fast), DEFLATE (dense).

use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SkimError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Codec {
    None,
    Lz4,
    Deflate,
}

impl Codec {
    pub(crate) fn to_tag(self) -> u8 {
        match self {
            Codec::None => 0,
            Codec::Lz4 => 1,
            Codec::Deflate => 2,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Result<Codec> {
        match tag {
            0 => Ok(Codec::None),
            1 => Ok(Codec::Lz4),
            2 => Ok(Codec::Deflate),
            other => Err(SkimError::Codec(format!("unknown codec tag {other}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Codec::None => "none",
            Codec::Lz4 => "lz4",
            Codec::Deflate => "deflate",
        }
    }
}

impl FromStr for Codec {
    type Err = SkimError;

    fn from_str(s: &str) -> Result<Codec> {
        match s {
            "none" => Ok(Codec::None),
            "lz4" => Ok(Codec::Lz4),
            "deflate" => Ok(Codec::Deflate),
            other => Err(SkimError::Codec(format!("unknown codec {other:?}"))),
        }
    }
}

impl std::fmt::Display for Codec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

pub fn compress(codec: Codec, data: &[u8]) -> Result<Vec<u8>> {
    match codec {
        Codec::None => Ok(data.to_vec()),
        Codec::Lz4 => Ok(lz4_flex::block::compress(data)),
        Codec::Deflate => {
            let mut enc =
                flate2::write::DeflateEncoder::new(Vec::new(), flate2::Compression::new(6));
            enc.write_all(data)
                .and_then(|_| enc.finish())
                .map_err(|e| SkimError::Codec(format!("deflate compression failed: {e}")))
        }
    }
}

pub fn decompress(codec: Codec, data: &[u8], uncompressed_len: usize) -> Result<Vec<u8>> {
    let out = match codec {
        Codec::None => data.to_vec(),
        Codec::Lz4 => lz4_flex::block::decompress(data, uncompressed_len)
            .map_err(|e| SkimError::Codec(format!("lz4 decompression failed: {e}")))?,
        Codec::Deflate => {
            let mut dec = flate2::write::DeflateDecoder::new(Vec::with_capacity(uncompressed_len));
            dec.write_all(data)
                .and_then(|_| dec.finish())
                .map_err(|e| SkimError::Codec(format!("deflate decompression failed: {e}")))?
        }
    };
    if out.len() != uncompressed_len {
        return Err(SkimError::Codec(format!(
            "decompressed length {} does not match expected {}",
            out.len(),
            uncompressed_len
        )));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn none_is_identity() {
        let data = b"hello baskets".to_vec();
        assert_eq!(compress(Codec::None, &data).unwrap(), data);
        assert_eq!(decompress(Codec::None, &data, data.len()).unwrap(), data);
    }

    #[test]
    fn lz4_and_deflate_round_trip() {
        let data: Vec<u8> = (0..10_000u32).flat_map(|i| (i % 251).to_le_bytes()).collect();
        for codec in [Codec::Lz4, Codec::Deflate] {
            let c = compress(codec, &data).unwrap();
            assert_eq!(decompress(codec, &c, data.len()).unwrap(), data);
        }
    }

    #[test]
    fn corrupt_stream_is_an_error() {
        let data = vec![7u8; 512];
        let mut c = compress(Codec::Lz4, &data).unwrap();
        c.truncate(c.len() / 2);
        assert!(decompress(Codec::Lz4, &c, data.len()).is_err());
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let data = vec![1u8; 64];
        let c = compress(Codec::Lz4, &data).unwrap();
        assert!(decompress(Codec::Lz4, &c, 63).is_err());
    }
}
