//! IDX container format: big-endian header followed by unsigned bytes.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const LABELS_MAGIC: u32 = 0x0000_0801;
pub const IMAGES_MAGIC: u32 = 0x0000_0803;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum IdxData {
    Labels(Vec<u8>),
    Images {
        count: usize,
        rows: usize,
        cols: usize,
        pixels: Vec<u8>,
    },
}

impl IdxData {
    pub fn len(&self) -> usize {
        match self {
            IdxData::Labels(l) => l.len(),
            IdxData::Images { count, .. } => *count,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Images as `count` rows of `rows·cols` values scaled to `[0, 1]`.
    pub fn unit_rows(&self) -> Option<Vec<f64>> {
        match self {
            IdxData::Images { pixels, .. } => Some(pixels.iter().map(|&p| p as f64 / 255.0).collect()),
            IdxData::Labels(_) => None,
        }
    }
}

fn be_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| Error::Idx(format!("truncated header: {} bytes", bytes.len())))
}

pub fn parse_idx_bytes(bytes: &[u8]) -> Result<IdxData> {
    let magic = be_u32(bytes, 0)?;
    let (dims, header) = match magic {
        LABELS_MAGIC => (1, 8),
        IMAGES_MAGIC => (3, 16),
        other => return Err(Error::Idx(format!("bad magic {other:#010x}"))),
    };
    let sizes: Vec<usize> = (0..dims)
        .map(|d| be_u32(bytes, 4 + 4 * d).map(|v| v as usize))
        .collect::<Result<_>>()?;
    let payload_len = sizes
        .iter()
        .try_fold(1usize, |acc, &s| acc.checked_mul(s))
        .ok_or_else(|| Error::Idx(format!("dimension overflow: {sizes:?}")))?;
    let payload = &bytes[header..];
    if payload.len() < payload_len {
        return Err(Error::Idx(format!(
            "truncated payload: expected {payload_len} bytes, found {}",
            payload.len()
        )));
    }
    if payload.len() > payload_len {
        return Err(Error::Idx(format!(
            "{} trailing bytes after payload",
            payload.len() - payload_len
        )));
    }
    Ok(match dims {
        1 => IdxData::Labels(payload.to_vec()),
        _ => IdxData::Images {
            count: sizes[0],
            rows: sizes[1],
            cols: sizes[2],
            pixels: payload.to_vec(),
        },
    })
}

pub fn parse_idx(path: impl AsRef<Path>) -> Result<IdxData> {
    let bytes = fs::read(path.as_ref())?;
    parse_idx_bytes(&bytes)
}

pub fn encode_idx(data: &IdxData) -> Result<Vec<u8>> {
    let too_big = |v: usize| u32::try_from(v).map_err(|_| Error::Idx(format!("dimension {v} exceeds u32")));
    let mut out = Vec::new();
    match data {
        IdxData::Labels(labels) => {
            out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
            out.extend_from_slice(&too_big(labels.len())?.to_be_bytes());
            out.extend_from_slice(labels);
        }
        IdxData::Images {
            count,
            rows,
            cols,
            pixels,
        } => {
            if pixels.len() != count * rows * cols {
                return Err(Error::Idx(format!(
                    "{} pixels for {count}×{rows}×{cols} images",
                    pixels.len()
                )));
            }
            out.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
            for d in [*count, *rows, *cols] {
                out.extend_from_slice(&too_big(d)?.to_be_bytes());
            }
            out.extend_from_slice(pixels);
        }
    }
    Ok(out)
}

pub fn write_idx(path: impl AsRef<Path>, data: &IdxData) -> Result<()> {
    crate::io::write_atomic(path.as_ref(), &encode_idx(data)?)
}
