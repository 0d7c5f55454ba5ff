//! Binary checkpoint format.
//!
//! ```text
//! magic    "RNRCKPT\0"
//! u32      format version
//! [u8; 32] sha256 of the architecture config JSON
//! u32      config length, then the config JSON
//! u32      tensor count, then per tensor:
//!          u16 name length, name, u8 dtype (0 = f32), u8 rank,
//!          u32 per dim, u64 byte offset into the payload
//! payload  little-endian f32 values, tensors in directory order
//! ```
//! All integers are little-endian.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{ModelConfig, RnrModel};
use crate::nn::ParamStore;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"RNRCKPT\0";
pub const FORMAT_VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;

pub fn fingerprint(config: &ModelConfig) -> [u8; 32] {
    let json = serde_json::to_vec(config).expect("model config serializes");
    Sha256::digest(&json).into()
}

pub fn to_bytes(config: &ModelConfig, params: &ParamStore<f32>) -> Result<Vec<u8>> {
    let cfg = serde_json::to_vec(config)?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&fingerprint(config));
    out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
    out.extend_from_slice(&cfg);
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    let mut offset = 0u64;
    for (name, t) in params.iter() {
        let name_len = u16::try_from(name.len())
            .map_err(|_| Error::Contract(format!("parameter name too long: {name}")))?;
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(DTYPE_F32);
        out.push(t.rank() as u8);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.extend_from_slice(&offset.to_le_bytes());
        offset += 4 * t.numel() as u64;
    }
    for (_, t) in params.iter() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Format(format!("checkpoint truncated at byte {} (need {n} more)", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Parses a checkpoint. With `expected`, the stored fingerprint must match
/// that configuration.
pub fn from_bytes(bytes: &[u8], expected: Option<&ModelConfig>) -> Result<(ModelConfig, ParamStore<f32>)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Version(format!(
            "file has format version {version}, this build reads {FORMAT_VERSION}"
        )));
    }
    let stored: [u8; 32] = r.take(32)?.try_into().unwrap();
    let cfg_len = r.u32()? as usize;
    let config: ModelConfig = serde_json::from_slice(r.take(cfg_len)?)
        .map_err(|e| Error::Format(format!("checkpoint config: {e}")))?;
    if fingerprint(&config) != stored {
        return Err(Error::Format("stored fingerprint does not match stored config".into()));
    }
    if let Some(exp) = expected {
        if fingerprint(exp) != stored {
            return Err(Error::Version(format!(
                "checkpoint was trained with a different architecture ({} C={} T={} image={})",
                config.kind.name(),
                config.channels,
                config.max_len,
                config.image_size
            )));
        }
    }
    let count = r.u32()? as usize;
    let mut dir = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let name_len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::Format("parameter name is not UTF-8".into()))?
            .to_string();
        if r.u8()? != DTYPE_F32 {
            return Err(Error::Format(format!("`{name}`: unsupported dtype")));
        }
        let rank = r.u8()? as usize;
        let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let offset = r.u64()?;
        dir.push((name, shape, offset));
    }
    let payload = &bytes[r.pos..];
    let mut params = ParamStore::new();
    let mut expected_offset = 0u64;
    for (name, shape, offset) in dir {
        let numel: usize = shape.iter().product();
        if offset != expected_offset {
            return Err(Error::Format(format!("`{name}`: offset {offset}, expected {expected_offset}")));
        }
        let start = offset as usize;
        let end = start + 4 * numel;
        let raw = payload
            .get(start..end)
            .ok_or_else(|| Error::Format(format!("checkpoint truncated inside `{name}`")))?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        params.insert(name, Tensor::new(&shape, data)?);
        expected_offset = end as u64;
    }
    if payload.len() as u64 != expected_offset {
        return Err(Error::Format(format!(
            "{} trailing bytes after the payload",
            payload.len() as u64 - expected_offset
        )));
    }
    Ok((config, params))
}

pub fn save(path: &Path, config: &ModelConfig, params: &ParamStore<f32>) -> Result<()> {
    std::fs::write(path, to_bytes(config, params)?)?;
    Ok(())
}

pub fn load(path: &Path, expected: Option<&ModelConfig>) -> Result<(ModelConfig, ParamStore<f32>)> {
    from_bytes(&std::fs::read(path)?, expected)
}

/// Loads a checkpoint and checks its tensors against the architecture.
pub fn load_model(path: &Path, expected: Option<&ModelConfig>) -> Result<(RnrModel, ParamStore<f32>)> {
    let (config, params) = load(path, expected)?;
    let mut reference = ParamStore::<f32>::new();
    let model = RnrModel::new(config, &mut reference, 0)?;
    if reference.len() != params.len() {
        return Err(Error::Format(format!(
            "checkpoint has {} tensors, architecture needs {}",
            params.len(),
            reference.len()
        )));
    }
    for (name, t) in reference.iter() {
        match params.get(name) {
            Some(p) if p.shape() == t.shape() => {}
            Some(p) => return Err(Error::dim("checkpoint", p.shape(), t.shape())),
            None => return Err(Error::Format(format!("checkpoint lacks `{name}`"))),
        }
    }
    Ok((model, params))
}
