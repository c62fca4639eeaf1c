//! SLRW weight files.
//!
//! Little-endian layout:
//!
//! ```text
//! "SLRW" | u16 version | u32 config length | config JSON
//! u32 record count
//! per record: u16 name length | name | u8 rank | u32 dims[rank] | f32 values
//! ```
//!
//! Records cover every parameter and the running mean/variance of every
//! batch-norm layer (`<layer>.running_mean`, `<layer>.running_var`).

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::{Architecture, Model, ModelConfig};
use crate::error::{Error, Result};
use crate::tensor::RunningStats;

pub const WEIGHT_MAGIC: &[u8; 4] = b"SLRW";
const VERSION: u16 = 1;

struct Record {
    dims: Vec<usize>,
    values: Vec<f32>,
}

fn push_record(out: &mut Vec<u8>, name: &str, dims: &[usize], values: &[f32]) {
    out.extend_from_slice(&(name.len() as u16).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.push(dims.len() as u8);
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_weights(model: &Model<f32>) -> Result<Vec<u8>> {
    let config = serde_json::to_string(model.config())
        .map_err(|e| Error::Config(format!("cannot serialize model config: {e}")))?;
    let mut out = Vec::new();
    out.extend_from_slice(WEIGHT_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(config.len() as u32).to_le_bytes());
    out.extend_from_slice(config.as_bytes());
    let params = model.params();
    let norms = model.norms();
    out.extend_from_slice(&((params.len() + 2 * norms.len()) as u32).to_le_bytes());
    for p in params {
        push_record(&mut out, &p.name, p.value.shape(), p.value.data());
    }
    for bn in norms {
        let st = bn.stats();
        push_record(&mut out, &format!("{}.running_mean", bn.name), &[st.mean.len()], &st.mean);
        push_record(&mut out, &format!("{}.running_var", bn.name), &[st.var.len()], &st.var);
    }
    Ok(out)
}

pub fn save_weights(model: &Model<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_weights(model)?).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, at: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Corrupt {
                param: at.to_string(),
                detail: format!("file truncated: needed {n} more bytes at offset {}", self.pos),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, at: &str) -> Result<u8> {
        Ok(self.take(1, at)?[0])
    }

    fn u16(&mut self, at: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, at)?.try_into().unwrap()))
    }

    fn u32(&mut self, at: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, at)?.try_into().unwrap()))
    }
}

fn corrupt(param: &str, detail: impl Into<String>) -> Error {
    Error::Corrupt {
        param: param.to_string(),
        detail: detail.into(),
    }
}

/// Parses a weight file; the model is only returned if every record checks out.
pub fn decode_weights(bytes: &[u8]) -> Result<Model<f32>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "header")? != WEIGHT_MAGIC {
        return Err(corrupt("header", "missing SLRW magic"));
    }
    let version = r.u16("header")?;
    if version != VERSION {
        return Err(Error::Unsupported {
            field: "weight file version",
            found: version.to_string(),
            expected: VERSION.to_string(),
        });
    }
    let len = r.u32("config")? as usize;
    let text = std::str::from_utf8(r.take(len, "config")?).map_err(|e| corrupt("config", e.to_string()))?;
    let config: ModelConfig = serde_json::from_str(text).map_err(|e| corrupt("config", e.to_string()))?;
    let count = r.u32("record table")? as usize;
    let mut records = HashMap::with_capacity(count);
    let mut last = String::from("record table");
    for i in 0..count {
        let at = format!("record {i} (after `{last}`)");
        let n = r.u16(&at)? as usize;
        let name = String::from_utf8(r.take(n, &at)?.to_vec()).map_err(|e| corrupt(&at, e.to_string()))?;
        let rank = r.u8(&name)? as usize;
        let dims = (0..rank).map(|_| r.u32(&name).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let numel: usize = dims.iter().product();
        let raw = r.take(numel * 4, &name)?;
        let values: Vec<f32> = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
            return Err(corrupt(&name, format!("non-finite value at element {bad}")));
        }
        if records.insert(name.clone(), Record { dims, values }).is_some() {
            return Err(corrupt(&name, "duplicate record"));
        }
        last = name;
    }
    if r.pos != bytes.len() {
        return Err(corrupt(&last, format!("{} trailing bytes after the last record", bytes.len() - r.pos)));
    }

    let mut model = Model::<f32>::build(config).map_err(|e| corrupt("config", e.to_string()))?;
    let mut take = |name: &str, dims: &[usize]| -> Result<Vec<f32>> {
        let rec = records.remove(name).ok_or_else(|| corrupt(name, "record missing"))?;
        if rec.dims != dims {
            return Err(corrupt(name, format!("shape {:?}, expected {dims:?}", rec.dims)));
        }
        Ok(rec.values)
    };
    for p in model.params_mut() {
        let shape = p.value.shape().to_vec();
        let values = take(&p.name, &shape)?;
        p.set_data(values)?;
    }
    for bn in model.norms_mut() {
        let c = bn.channels();
        let mean = take(&format!("{}.running_mean", bn.name), &[c])?;
        let var = take(&format!("{}.running_var", bn.name), &[c])?;
        if let Some(i) = var.iter().position(|&v| v < 0.0) {
            return Err(corrupt(&format!("{}.running_var", bn.name), format!("negative variance at {i}")));
        }
        bn.set_stats(RunningStats { mean, var });
    }
    if let Some(extra) = records.keys().min() {
        return Err(corrupt(extra, "record does not belong to this architecture"));
    }
    Ok(model)
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<Model<f32>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_weights(&bytes)
}

/// Loads a weight file and checks that it holds the expected architecture.
pub fn load_weights_as(path: impl AsRef<Path>, expected: Architecture) -> Result<Model<f32>> {
    let model = load_weights(path)?;
    if model.architecture() != expected {
        return Err(Error::ArchitectureMismatch {
            found: model.architecture().to_string(),
            expected: expected.to_string(),
        });
    }
    Ok(model)
}
