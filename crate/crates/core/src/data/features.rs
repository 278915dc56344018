//! Binary patch-feature files.
//!
//! Layout (little-endian): magic `WSGF`, `u32` version (1), `u32`
//! patch_count, `u32` dim_a (1024), `u32` dim_b (768), then for each
//! patch `u32` patch_id, `f64` x, `f64` y, `dim_a × f32`, `dim_b × f32`.
//! Features are stored as `f32` and widened to `f64` on read.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use super::{DataError, PatchRecord, FEAT_A_DIM, FEAT_B_DIM};

const MAGIC: &[u8; 4] = b"WSGF";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SlideHeader {
    pub version: u32,
    pub patch_count: usize,
    pub dim_a: usize,
    pub dim_b: usize,
}

fn record_len() -> usize {
    4 + 8 + 8 + 4 * (FEAT_A_DIM + FEAT_B_DIM)
}

pub fn encode_slide(records: &[PatchRecord]) -> Result<Vec<u8>, DataError> {
    let count = u32::try_from(records.len())
        .map_err(|_| DataError::Parameter("too many patches for one file".into()))?;
    let mut buf = Vec::with_capacity(HEADER_LEN + records.len() * record_len());
    buf.extend_from_slice(MAGIC);
    for v in [VERSION, count, FEAT_A_DIM as u32, FEAT_B_DIM as u32] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut seen = HashSet::with_capacity(records.len());
    for (i, r) in records.iter().enumerate() {
        if r.feat_a.len() != FEAT_A_DIM || r.feat_b.len() != FEAT_B_DIM {
            return Err(DataError::Format(format!(
                "patch {i}: feature dims ({}, {}), expected ({FEAT_A_DIM}, {FEAT_B_DIM})",
                r.feat_a.len(),
                r.feat_b.len()
            )));
        }
        if !seen.insert(r.patch_id) {
            return Err(DataError::Validation(format!("duplicate patch_id {}", r.patch_id)));
        }
        if !(r.x.is_finite() && r.y.is_finite()) {
            return Err(DataError::NonFinite { patch_index: i });
        }
        buf.extend_from_slice(&r.patch_id.to_le_bytes());
        buf.extend_from_slice(&r.x.to_le_bytes());
        buf.extend_from_slice(&r.y.to_le_bytes());
        for &v in r.feat_a.iter().chain(&r.feat_b) {
            let narrow = v as f32;
            if !narrow.is_finite() {
                return Err(DataError::NonFinite { patch_index: i });
            }
            buf.extend_from_slice(&narrow.to_le_bytes());
        }
    }
    Ok(buf)
}

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
}

fn parse_header(bytes: &[u8]) -> Result<SlideHeader, DataError> {
    if bytes.len() < HEADER_LEN {
        return Err(DataError::Format(format!(
            "truncated header: {} bytes",
            bytes.len()
        )));
    }
    if &bytes[..4] != MAGIC {
        return Err(DataError::Format("bad magic, expected WSGF".into()));
    }
    let header = SlideHeader {
        version: u32_at(bytes, 4),
        patch_count: u32_at(bytes, 8) as usize,
        dim_a: u32_at(bytes, 12) as usize,
        dim_b: u32_at(bytes, 16) as usize,
    };
    if header.version != VERSION {
        return Err(DataError::Format(format!(
            "unsupported version {}, expected {VERSION}",
            header.version
        )));
    }
    if header.dim_a != FEAT_A_DIM {
        return Err(DataError::Format(format!(
            "feat_a dim {}: expected {FEAT_A_DIM}",
            header.dim_a
        )));
    }
    if header.dim_b != FEAT_B_DIM {
        return Err(DataError::Format(format!(
            "feat_b dim {}: expected {FEAT_B_DIM}",
            header.dim_b
        )));
    }
    Ok(header)
}

pub fn decode_slide(bytes: &[u8]) -> Result<Vec<PatchRecord>, DataError> {
    let header = parse_header(bytes)?;
    let expected = HEADER_LEN + header.patch_count * record_len();
    if bytes.len() != expected {
        return Err(DataError::Format(format!(
            "{} patches need {expected} bytes, found {}",
            header.patch_count,
            bytes.len()
        )));
    }
    let f32_at = |at: usize| f32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as f64;
    let f64_at = |at: usize| f64::from_le_bytes(bytes[at..at + 8].try_into().unwrap());

    let mut records = Vec::with_capacity(header.patch_count);
    let mut seen = HashSet::with_capacity(header.patch_count);
    let mut at = HEADER_LEN;
    for i in 0..header.patch_count {
        let patch_id = u32_at(bytes, at);
        let x = f64_at(at + 4);
        let y = f64_at(at + 12);
        at += 20;
        let feat_a: Vec<f64> = (0..FEAT_A_DIM).map(|j| f32_at(at + 4 * j)).collect();
        at += 4 * FEAT_A_DIM;
        let feat_b: Vec<f64> = (0..FEAT_B_DIM).map(|j| f32_at(at + 4 * j)).collect();
        at += 4 * FEAT_B_DIM;
        let finite = x.is_finite()
            && y.is_finite()
            && feat_a.iter().chain(&feat_b).all(|v| v.is_finite());
        if !finite {
            return Err(DataError::NonFinite { patch_index: i });
        }
        if !seen.insert(patch_id) {
            return Err(DataError::Validation(format!("duplicate patch_id {patch_id}")));
        }
        records.push(PatchRecord {
            patch_id,
            x,
            y,
            feat_a,
            feat_b,
        });
    }
    Ok(records)
}

pub fn write_slide(path: &Path, records: &[PatchRecord]) -> Result<(), DataError> {
    let bytes = encode_slide(records)?;
    fs::write(path, bytes).map_err(|e| DataError::io(path, e))
}

pub fn read_slide(path: &Path) -> Result<Vec<PatchRecord>, DataError> {
    let bytes = fs::read(path).map_err(|e| DataError::io(path, e))?;
    decode_slide(&bytes)
}

/// Reads and validates only the fixed-size header.
pub fn read_slide_header(path: &Path) -> Result<SlideHeader, DataError> {
    use std::io::Read;
    let mut f = fs::File::open(path).map_err(|e| DataError::io(path, e))?;
    let mut buf = [0u8; HEADER_LEN];
    f.read_exact(&mut buf).map_err(|e| DataError::io(path, e))?;
    parse_header(&buf)
}
