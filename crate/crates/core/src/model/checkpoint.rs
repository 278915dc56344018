//! Binary checkpoint layout, all integers little-endian:
//!
//! ```text
//! "VERN" | u32 version | u32 meta_len | meta (UTF-8 key=value lines)
//! u32 param_count | per param: u32 name_len | name | u32 rows | u32 cols | f64 × rows·cols
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use super::{VernConfig, VernParams, PARAM_NAMES};
use crate::numerics::Tensor;

const MAGIC: &[u8; 4] = b"VERN";
const VERSION: u32 = 1;
const NOTE_PREFIX: &str = "note.";

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed checkpoint: {0}")]
    Format(String),
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("checkpoint does not fit the model: {0}")]
    Mismatch(String),
}

fn fmt_err(msg: impl Into<String>) -> CheckpointError {
    CheckpointError::Format(msg.into())
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<(), CheckpointError> {
    let v = u32::try_from(v).map_err(|_| fmt_err(format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn metadata(p: &VernParams) -> String {
    let c = &p.config;
    let mut meta = format!(
        "dim_a={}\ndim_b={}\nhidden={}\nembed={}\nmlp_hidden={}\ndropout={}\nseed={}\n",
        c.dim_a, c.dim_b, c.hidden, c.embed, c.mlp_hidden, c.dropout, p.seed
    );
    for (k, v) in &p.notes {
        meta.push_str(&format!("{NOTE_PREFIX}{k}={v}\n"));
    }
    meta
}

pub fn encode_checkpoint(p: &VernParams) -> Result<Vec<u8>, CheckpointError> {
    for (k, v) in &p.notes {
        if k.contains(['=', '\n']) || v.contains('\n') {
            return Err(fmt_err(format!("note {k:?} cannot be stored")));
        }
    }
    let meta = metadata(p);
    let mut out = Vec::with_capacity(16 + meta.len() + 8 * p.param_count() + 64 * PARAM_NAMES.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    put_u32(&mut out, meta.len())?;
    out.extend_from_slice(meta.as_bytes());
    put_u32(&mut out, PARAM_NAMES.len())?;
    for (name, t) in PARAM_NAMES.iter().zip(p.params()) {
        put_u32(&mut out, name.len())?;
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, t.rows())?;
        put_u32(&mut out, t.cols())?;
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'b> {
    buf: &'b [u8],
    pos: usize,
}

impl<'b> Reader<'b> {
    fn take(&mut self, n: usize) -> Result<&'b [u8], CheckpointError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| fmt_err(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn str(&mut self, n: usize) -> Result<&'b str, CheckpointError> {
        std::str::from_utf8(self.take(n)?).map_err(|e| fmt_err(format!("invalid UTF-8: {e}")))
    }
}

fn parse_meta(meta: &str) -> Result<(VernConfig, u64, BTreeMap<String, String>), CheckpointError> {
    let mut fields = BTreeMap::new();
    let mut notes = BTreeMap::new();
    for line in meta.lines() {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| fmt_err(format!("metadata line {line:?}")))?;
        match k.strip_prefix(NOTE_PREFIX) {
            Some(note) => {
                notes.insert(note.to_string(), v.to_string());
            }
            None => {
                fields.insert(k, v);
            }
        }
    }
    fn field<T: std::str::FromStr>(f: &BTreeMap<&str, &str>, key: &str) -> Result<T, CheckpointError> {
        f.get(key)
            .ok_or_else(|| fmt_err(format!("metadata lacks {key}")))?
            .parse()
            .map_err(|_| fmt_err(format!("metadata {key} is not a valid value")))
    }
    let config = VernConfig {
        dim_a: field(&fields, "dim_a")?,
        dim_b: field(&fields, "dim_b")?,
        hidden: field(&fields, "hidden")?,
        embed: field(&fields, "embed")?,
        mlp_hidden: field(&fields, "mlp_hidden")?,
        dropout: field(&fields, "dropout")?,
    };
    config
        .validate()
        .map_err(|e| fmt_err(format!("metadata describes an invalid model: {e}")))?;
    Ok((config, field(&fields, "seed")?, notes))
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<VernParams, CheckpointError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4).ok() != Some(MAGIC.as_slice()) {
        return Err(fmt_err("missing VERN magic"));
    }
    let version = r.u32()? as u32;
    if version != VERSION {
        return Err(CheckpointError::Version(version));
    }
    let meta_len = r.u32()?;
    let (config, seed, notes) = parse_meta(r.str(meta_len)?)?;
    let count = r.u32()?;
    if count != PARAM_NAMES.len() {
        return Err(CheckpointError::Mismatch(format!(
            "{count} parameters stored, model has {}",
            PARAM_NAMES.len()
        )));
    }
    let expected = VernParams::expected_shapes(&config);
    let mut tensors = Vec::with_capacity(count);
    for (name, shape) in PARAM_NAMES.iter().zip(expected) {
        let len = r.u32()?;
        let found = r.str(len)?;
        if found != *name {
            return Err(CheckpointError::Mismatch(format!("expected parameter {name}, found {found}")));
        }
        let (rows, cols) = (r.u32()?, r.u32()?);
        if (rows, cols) != shape {
            return Err(CheckpointError::Mismatch(format!(
                "{name} is {rows}×{cols}, metadata implies {}×{}",
                shape.0, shape.1
            )));
        }
        let raw = r.take(rows * cols * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push(Tensor::new(rows, cols, data).map_err(|e| fmt_err(format!("{name}: {e}")))?);
    }
    if r.pos != bytes.len() {
        return Err(fmt_err(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    let mut p = VernParams::init(config, seed).map_err(|e| fmt_err(e.to_string()))?;
    for (slot, t) in p.params_mut().into_iter().zip(tensors) {
        *slot = t;
    }
    p.notes = notes;
    Ok(p)
}

pub fn save_checkpoint(p: &VernParams, path: &Path) -> Result<(), CheckpointError> {
    let bytes = encode_checkpoint(p)?;
    fs::write(path, bytes).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<VernParams, CheckpointError> {
    let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode_checkpoint(&bytes)
}

/// Loads a checkpoint and requires its architecture to equal `expected`.
pub fn load_checkpoint_expecting(path: &Path, expected: &VernConfig) -> Result<VernParams, CheckpointError> {
    let p = load_checkpoint(path)?;
    if &p.config != expected {
        return Err(CheckpointError::Mismatch(format!(
            "file holds {:?}, expected {:?}",
            p.config, expected
        )));
    }
    Ok(p)
}
