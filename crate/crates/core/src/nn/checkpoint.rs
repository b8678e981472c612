//! Checkpoint file: magic `PNCK`, version, string metadata, named tensors as
//! little-endian `f64`, trailing CRC32 of everything before it.

use std::collections::BTreeMap;
use std::path::Path;

use super::tensor::Tensor;
use crate::codec::{Reader, Writer};
use crate::error::{Error, Result};
use crate::scalar::Real;

const MAGIC: &[u8; 4] = b"PNCK";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub metadata: BTreeMap<String, String>,
    pub tensors: Vec<(String, Tensor<f64>)>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set_meta(&mut self, key: &str, value: impl ToString) {
        self.metadata.insert(key.to_string(), value.to_string());
    }

    pub fn meta(&self, key: &str) -> Result<&str> {
        self.metadata
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Checkpoint(format!("missing metadata key {key:?}")))
    }

    pub fn meta_parse<V: std::str::FromStr>(&self, key: &str) -> Result<V> {
        let raw = self.meta(key)?;
        raw.parse().map_err(|_| Error::Checkpoint(format!("bad value {raw:?} for {key:?}")))
    }

    pub fn push<T: Real>(&mut self, name: impl Into<String>, t: &Tensor<T>) {
        self.tensors.push((name.into(), t.cast()));
    }

    pub fn push_all<T: Real>(&mut self, prefix: &str, ts: &[Tensor<T>]) {
        for (i, t) in ts.iter().enumerate() {
            self.push(format!("{prefix}.{i}"), t);
        }
    }

    pub fn tensor<T: Real>(&self, name: &str) -> Result<Tensor<T>> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t.cast())
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name:?}")))
    }

    /// All tensors named `prefix.0`, `prefix.1`, ... in order.
    pub fn tensors_with_prefix<T: Real>(&self, prefix: &str) -> Vec<Tensor<T>> {
        let mut out = Vec::new();
        while let Ok(t) = self.tensor(&format!("{prefix}.{}", out.len())) {
            out.push(t);
        }
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.bytes(MAGIC);
        w.u32(VERSION);
        w.u32(self.metadata.len() as u32);
        for (k, v) in &self.metadata {
            w.str(k);
            w.str(v);
        }
        w.u32(self.tensors.len() as u32);
        for (name, t) in &self.tensors {
            w.str(name);
            w.u32(t.shape().len() as u32);
            for &d in t.shape() {
                w.u32(d as u32);
            }
            for &v in t.data() {
                w.f64(v);
            }
        }
        w.finish_with_crc()
    }

    pub fn from_bytes(bytes: &[u8], origin: &str) -> Result<Self> {
        let mut r = Reader::with_crc(bytes, origin)?;
        if r.take(4)? != MAGIC {
            return Err(r.corrupt("bad magic"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
        }
        let mut ck = Checkpoint::new();
        for _ in 0..r.u32()? {
            let k = r.string()?;
            let v = r.string()?;
            ck.metadata.insert(k, v);
        }
        for _ in 0..r.u32()? {
            let name = r.string()?;
            let ndim = r.u32()? as usize;
            let shape: Vec<usize> = (0..ndim).map(|_| r.u32().map(|d| d as usize)).collect::<Result<_>>()?;
            let n: usize = shape.iter().product();
            let data = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            ck.tensors.push((name, Tensor::from_vec(&shape, data)?));
        }
        r.expect_end()?;
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::from_bytes(&bytes, &path.display().to_string())
    }
}
