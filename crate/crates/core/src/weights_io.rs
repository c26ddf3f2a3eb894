//! `DNW1` parameter archives.
//!
//! Layout, all integers little-endian `u32`:
//!
//! ```text
//! "DNW1" | entry count | { name len | name (UTF-8) | rank | dims… | f32 LE payload }*
//! ```

use std::collections::HashSet;
use std::io::{self, Read, Write};

use thiserror::Error;

use crate::model::{param_block, Model, ParamMap};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"DNW1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum WeightsError {
    #[error("bad magic {found:?}, expected \"DNW1\"")]
    BadMagic { found: [u8; 4] },
    #[error("archive truncated while reading {context}")]
    Truncated { context: String },
    #[error("duplicate parameter name {name:?}")]
    DuplicateName { name: String },
    #[error("entry {name:?}: {message}")]
    BadEntry { name: String, message: String },
    #[error("parameter {name:?}: archive shape {archive:?} does not match model shape {model:?}")]
    ShapeMismatch {
        name: String,
        archive: Vec<usize>,
        model: Vec<usize>,
    },
    #[error("parameter {name:?} is missing from the archive")]
    Missing { name: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Entry manifest without payloads; enough to predict the archive size.
pub fn archive_len(params: &ParamMap) -> usize {
    8 + params
        .iter()
        .map(|(name, t)| 4 + name.len() + 4 + 4 * t.rank() + 4 * t.len())
        .sum::<usize>()
}

pub fn write_params(params: &ParamMap, sink: &mut impl Write) -> Result<usize, WeightsError> {
    let mut buf = Vec::with_capacity(archive_len(params));
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, t) in params {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    sink.write_all(&buf)?;
    Ok(buf.len())
}

pub fn write_weights(model: &Model, sink: &mut impl Write) -> Result<usize, WeightsError> {
    write_params(model.params(), sink)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, context: impl FnOnce() -> String) -> Result<&'a [u8], WeightsError> {
        if self.bytes.len() - self.pos < n {
            return Err(WeightsError::Truncated { context: context() });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self, context: impl FnOnce() -> String) -> Result<u32, WeightsError> {
        let b = self.take(4, context)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn read_weights(source: &mut impl Read) -> Result<ParamMap, WeightsError> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    decode_weights(&bytes)
}

pub fn decode_weights(bytes: &[u8]) -> Result<ParamMap, WeightsError> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic = cur.take(4, || "magic".into())?;
    if magic != MAGIC {
        return Err(WeightsError::BadMagic {
            found: [magic[0], magic[1], magic[2], magic[3]],
        });
    }
    let count = cur.u32(|| "entry count".into())?;
    let mut params = ParamMap::new();
    let mut seen = HashSet::new();
    for i in 0..count {
        let name_len = cur.u32(|| format!("name length of entry {i}"))? as usize;
        let raw = cur.take(name_len, || format!("name of entry {i}"))?;
        let name = String::from_utf8(raw.to_vec()).map_err(|_| WeightsError::BadEntry {
            name: String::from_utf8_lossy(raw).into_owned(),
            message: "name is not valid UTF-8".into(),
        })?;
        if !seen.insert(name.clone()) {
            return Err(WeightsError::DuplicateName { name });
        }
        let rank = cur.u32(|| format!("rank of {name:?}"))? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(cur.u32(|| format!("shape of {name:?}"))? as usize);
        }
        let n: usize = shape.iter().product();
        if rank == 0 || n == 0 {
            return Err(WeightsError::BadEntry {
                name,
                message: format!("invalid shape {shape:?}"),
            });
        }
        let payload = cur.take(4 * n, || format!("payload of {name:?} ({} bytes)", 4 * n))?;
        let data = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| WeightsError::BadEntry {
            name: name.clone(),
            message: e.to_string(),
        })?;
        params.insert(name, t);
    }
    if cur.pos != bytes.len() {
        return Err(WeightsError::BadEntry {
            name: "<end>".into(),
            message: format!("{} trailing bytes", bytes.len() - cur.pos),
        });
    }
    Ok(params)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LoadPolicy {
    /// Every model parameter must be present with the same shape.
    Strict,
    /// Absent parameters keep their initialisation. Head parameters whose
    /// class count differs are treated as absent, so an archive with a
    /// different classifier transfers only its convolution stack.
    SkipMissing,
}

/// Names that were copied from the archive.
pub fn load_into(model: &mut Model, params: &ParamMap, policy: LoadPolicy) -> Result<Vec<String>, WeightsError> {
    let mut plan = Vec::new();
    for (name, current) in model.params() {
        match params.get(name) {
            Some(src) if src.shape() == current.shape() => plan.push(name.clone()),
            Some(_) if policy == LoadPolicy::SkipMissing && param_block(name).is_none() => {}
            Some(src) => {
                return Err(WeightsError::ShapeMismatch {
                    name: name.clone(),
                    archive: src.shape().to_vec(),
                    model: current.shape().to_vec(),
                })
            }
            None if policy == LoadPolicy::Strict => return Err(WeightsError::Missing { name: name.clone() }),
            None => {}
        }
    }
    let dst = model.params_mut();
    for name in &plan {
        dst.insert(name.clone(), params[name].clone());
    }
    Ok(plan)
}
