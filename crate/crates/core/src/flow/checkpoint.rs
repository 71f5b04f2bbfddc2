//! Versioned binary checkpoint.
//!
//! ```text
//! "FSNC"                 magic
//! u32                    format version
//! u32 + bytes            config echo (canonical JSON of FlowConfig)
//! [u8; 32]               SHA-256 of the config echo
//! u64                    optimizer step
//! u8                     actnorm initialized flag
//! u32                    tensor count
//! per tensor:            u32 name length, name, u32 rank, u64 extents, f64 values
//! ```
//!
//! All integers and reals are little-endian. Parameters appear under their
//! own names; Adam moments under `adam.m/<name>` and `adam.v/<name>`.

use std::path::Path;

use sha2::{Digest, Sha256};

use super::config::FlowConfig;
use super::model::FlowModel;
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::numerics::{Param, ParamStore, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"FSNC";
pub const CHECKPOINT_VERSION: u32 = 1;

const MOMENT_M: &str = "adam.m/";
const MOMENT_V: &str = "adam.v/";

pub fn config_hash(config: &FlowConfig) -> [u8; 32] {
    Sha256::digest(config.canonical_json().as_bytes()).into()
}

fn put_tensor(out: &mut Vec<u8>, name: &str, t: &Tensor) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_checkpoint(model: &FlowModel) -> Vec<u8> {
    let json = model.config().canonical_json();
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(json.as_bytes());
    out.extend_from_slice(&config_hash(model.config()));
    out.extend_from_slice(&model.params().step().to_le_bytes());
    out.push(u8::from(model.actnorm_initialized()));
    let params = model.params();
    out.extend_from_slice(&(3 * params.len() as u32).to_le_bytes());
    for (name, p) in params.iter() {
        put_tensor(&mut out, name, &p.value);
    }
    for (name, p) in params.iter() {
        put_tensor(&mut out, &format!("{MOMENT_M}{name}"), &p.m);
    }
    for (name, p) in params.iter() {
        put_tensor(&mut out, &format!("{MOMENT_V}{name}"), &p.v);
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint("truncated file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn tensor(&mut self) -> Result<(String, Tensor)> {
        let n = self.u32()? as usize;
        let name = String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
        let rank = self.u32()? as usize;
        let shape = (0..rank)
            .map(|_| self.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let count: usize = shape.iter().product();
        let raw = self.take(count.checked_mul(8).ok_or_else(|| Error::Checkpoint("tensor too large".into()))?)?;
        let data = raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| Error::Checkpoint(format!("{name}: {e}")))?;
        Ok((name, t))
    }
}

/// Decodes a checkpoint. With `expected`, the stored config hash must match.
pub fn decode_checkpoint(bytes: &[u8], expected: Option<&FlowConfig>) -> Result<FlowModel> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let n = r.u32()? as usize;
    let json = r.take(n)?;
    let stored_hash: [u8; 32] = r.take(32)?.try_into().unwrap();
    let echo_hash: [u8; 32] = Sha256::digest(json).into();
    if echo_hash != stored_hash {
        return Err(Error::Checkpoint("config echo does not match its hash".into()));
    }
    let config: FlowConfig = serde_json::from_slice(json)?;
    if let Some(exp) = expected {
        if config_hash(exp) != stored_hash {
            return Err(Error::Checkpoint(
                "config hash mismatch: checkpoint was written for a different model config".into(),
            ));
        }
    }
    let step = r.u64()?;
    let initialized = r.take(1)?[0] != 0;
    let count = r.u32()? as usize;
    let mut values = Vec::new();
    let mut ms = std::collections::BTreeMap::new();
    let mut vs = std::collections::BTreeMap::new();
    for _ in 0..count {
        let (name, t) = r.tensor()?;
        if let Some(base) = name.strip_prefix(MOMENT_M) {
            ms.insert(base.to_string(), t);
        } else if let Some(base) = name.strip_prefix(MOMENT_V) {
            vs.insert(base.to_string(), t);
        } else {
            values.push((name, t));
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    let mut store = ParamStore::new();
    for (name, value) in values {
        let m = ms
            .remove(&name)
            .ok_or_else(|| Error::Checkpoint(format!("missing first moment for {name}")))?;
        let v = vs
            .remove(&name)
            .ok_or_else(|| Error::Checkpoint(format!("missing second moment for {name}")))?;
        if m.shape() != value.shape() || v.shape() != value.shape() {
            return Err(Error::Checkpoint(format!("moment shape mismatch for {name}")));
        }
        store.insert_param(name, Param { value, m, v });
    }
    store.set_step(step);
    FlowModel::from_parts(config, store, initialized)
}

pub fn save_checkpoint(model: &FlowModel, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &encode_checkpoint(model))
}

pub fn load_checkpoint(path: impl AsRef<Path>, expected: Option<&FlowConfig>) -> Result<FlowModel> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, expected)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> FlowConfig {
        FlowConfig {
            levels: 1,
            steps: 1,
            hidden: 4,
            encoder_width: 4,
            feature_channels: 2,
            ..Default::default()
        }
    }

    #[test]
    fn roundtrip_preserves_everything() {
        let mut model = FlowModel::new(tiny()).unwrap();
        model.params_mut().get_mut("l1.s0.actnorm.scale").unwrap().data_mut()[0] = 1.5;
        model.params_mut().set_step(7);
        model.set_actnorm_initialized(true);
        let bytes = encode_checkpoint(&model);
        assert_eq!(&bytes[..4], b"FSNC");
        let back = decode_checkpoint(&bytes, Some(model.config())).unwrap();
        assert_eq!(back, model);
        assert_eq!(encode_checkpoint(&back), bytes);
    }

    #[test]
    fn rejects_mismatch_and_corruption() {
        let model = FlowModel::new(tiny()).unwrap();
        let bytes = encode_checkpoint(&model);
        let other = FlowConfig { hidden: 5, ..tiny() };
        assert!(decode_checkpoint(&bytes, Some(&other)).is_err());
        assert!(decode_checkpoint(&bytes[..bytes.len() - 3], None).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_checkpoint(&bad, None).is_err());
        let mut flipped = bytes.clone();
        flipped[14] ^= 1; // inside the JSON echo
        assert!(decode_checkpoint(&flipped, None).is_err());
    }
}
