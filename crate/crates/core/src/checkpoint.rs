//! Versioned binary container for network weights and optimizer state.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! b"MESSFNCK" u32:version
//! u32:len model-config text
//! u32:len training-config text
//! u64:epochs_completed u64:global_step
//! u32:param_count
//! per parameter:
//!   u32:len name  u32:ndim  u64 x ndim  u64:step_count
//!   f32 x numel value  f32 x numel adam_m  f32 x numel adam_v
//!   u32:crc32 of the record bytes above
//! ```

use std::fs;
use std::path::Path;

use messfn_tensor::{ParamStore, Parameter, Tensor};

use crate::error::{CoreError, Result};
use crate::net::{MessfnConfig, MessfnWeights};

const MAGIC: &[u8; 8] = b"MESSFNCK";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub weights: MessfnWeights<f32>,
    /// Echo of the training configuration that produced the weights.
    pub train_echo: String,
    pub epochs_completed: u64,
    pub global_step: u64,
}

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_str(buf: &mut Vec<u8>, s: &str) {
    put_u32(buf, s.len() as u32);
    buf.extend_from_slice(s.as_bytes());
}

fn put_f32s(buf: &mut Vec<u8>, v: &[f32]) {
    for x in v {
        buf.extend_from_slice(&x.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(CoreError::format(self.path, "checkpoint truncated"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| CoreError::format(self.path, "non-UTF-8 text in checkpoint"))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        Ok(self
            .take(4 * n)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        put_u32(&mut buf, VERSION);
        put_str(&mut buf, &self.weights.config.echo());
        put_str(&mut buf, &self.train_echo);
        put_u64(&mut buf, self.epochs_completed);
        put_u64(&mut buf, self.global_step);
        put_u32(&mut buf, self.weights.params.len() as u32);
        for p in self.weights.params.iter() {
            let start = buf.len();
            put_str(&mut buf, &p.name);
            put_u32(&mut buf, p.shape().len() as u32);
            for &d in p.shape() {
                put_u64(&mut buf, d as u64);
            }
            put_u64(&mut buf, p.step_count);
            put_f32s(&mut buf, p.value.data());
            put_f32s(&mut buf, &p.adam_m);
            put_f32s(&mut buf, &p.adam_v);
            let crc = crc32fast::hash(&buf[start..]);
            put_u32(&mut buf, crc);
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut rd = Reader { bytes, pos: 0, path };
        if rd.take(8)? != MAGIC {
            return Err(CoreError::format(path, "not a checkpoint (bad magic)"));
        }
        let version = rd.u32()?;
        if version != VERSION {
            return Err(CoreError::format(path, format!("unsupported checkpoint version {version}")));
        }
        let config = MessfnConfig::from_echo(&rd.string()?)?;
        let train_echo = rd.string()?;
        let epochs_completed = rd.u64()?;
        let global_step = rd.u64()?;
        let count = rd.u32()? as usize;
        let layout = config.layout();
        if count != layout.len() {
            return Err(CoreError::format(
                path,
                format!("{count} parameter records, configuration declares {}", layout.len()),
            ));
        }
        let mut params = ParamStore::new();
        for (name, shape, _) in layout {
            let start = rd.pos;
            let stored_name = rd.string()?;
            let ndim = rd.u32()? as usize;
            let stored_shape = (0..ndim).map(|_| rd.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            if stored_name != name || stored_shape != shape {
                return Err(CoreError::format(
                    path,
                    format!("record {stored_name} {stored_shape:?} where {name} {shape:?} was expected"),
                ));
            }
            let step_count = rd.u64()?;
            let n: usize = shape.iter().product();
            let value = rd.f32s(n)?;
            let adam_m = rd.f32s(n)?;
            let adam_v = rd.f32s(n)?;
            let crc = crc32fast::hash(&bytes[start..rd.pos]);
            if rd.u32()? != crc {
                return Err(CoreError::format(path, format!("checksum mismatch in parameter {name}")));
            }
            let mut p = Parameter::new(name, Tensor::new(shape, value)?);
            p.adam_m = adam_m;
            p.adam_v = adam_v;
            p.step_count = step_count;
            let id = params.add(p.name.clone(), p.value.clone())?;
            *params.get_mut(id) = p;
        }
        if rd.pos != bytes.len() {
            return Err(CoreError::format(path, "trailing bytes after last parameter"));
        }
        Ok(Checkpoint {
            weights: MessfnWeights { config, params },
            train_echo,
            epochs_completed,
            global_step,
        })
    }

    /// Writes atomically via a temporary sibling file.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_bytes()).map_err(|e| CoreError::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| CoreError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| CoreError::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    /// Loads and checks that the stored architecture equals `expected`.
    pub fn load_for(path: impl AsRef<Path>, expected: &MessfnConfig) -> Result<Self> {
        let ck = Self::load(path)?;
        ck.ensure_config(expected)?;
        Ok(ck)
    }

    pub fn ensure_config(&self, expected: &MessfnConfig) -> Result<()> {
        let got = &self.weights.config;
        if got != expected {
            return Err(CoreError::Incompatible(format!(
                "checkpoint holds B = {}, C = {}, k = {}, r = {}, ablation {}, but the run requests B = {}, C = {}, k = {}, r = {}, ablation {}",
                got.blocks, got.channels, got.spectral_kernel, got.r, got.ablation,
                expected.blocks, expected.channels, expected.spectral_kernel, expected.r, expected.ablation
            )));
        }
        Ok(())
    }
}
