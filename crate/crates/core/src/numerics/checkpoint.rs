//! Named-tensor checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic     8 bytes  "GDCKPT\0\0"
//! version   u32      currently 1
//! n_meta    u32
//!   key     u32 length + UTF-8 bytes
//!   value   u32 length + UTF-8 bytes
//! n_tensor  u32
//!   name    u32 length + UTF-8 bytes
//!   dtype   u8       1 = f64
//!   rank    u32      always 2
//!   dims    u64 x rank
//!   data    rows*cols f64, row-major, IEEE-754 little-endian
//! ```
//!
//! Values are stored bit-for-bit, so write followed by read is exact.

use std::io::{Read, Write};
use std::path::Path;

use indexmap::IndexMap;
use sha2::{Digest, Sha256};

use super::matrix::Matrix;
use super::params::{ParamKind, ParamStore};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"GDCKPT\0\0";
pub const VERSION: u32 = 1;
const DTYPE_F64: u8 = 1;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: IndexMap<String, String>,
    pub tensors: IndexMap<String, Matrix>,
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| Error::Checkpoint(e.to_string()))
    }
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    /// Every entry of `store` (trainable and buffers) under its own name.
    pub fn from_store(store: &ParamStore) -> Self {
        let mut ck = Self::new();
        ck.add_store(store);
        ck
    }

    pub fn add_store(&mut self, store: &ParamStore) {
        for (_, e) in store.entries() {
            self.tensors.insert(e.name.clone(), e.value.clone());
        }
    }

    /// Copies matching tensors into `store`; every store entry must be present.
    pub fn load_into(&self, store: &mut ParamStore) -> Result<()> {
        let ids: Vec<_> = store.entries().map(|(id, e)| (id, e.name.clone())).collect();
        for (id, name) in ids {
            let t = self.tensors.get(&name).ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")))?;
            if t.shape() != store.value(id).shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor `{name}` is {:?}, expected {:?}",
                    t.shape(),
                    store.value(id).shape()
                )));
            }
            *store.value_mut(id) = t.clone();
        }
        Ok(())
    }

    /// Builds a store holding every tensor whose name starts with `prefix`.
    pub fn to_store(&self, prefix: &str, buffer: impl Fn(&str) -> bool) -> Result<ParamStore> {
        let mut store = ParamStore::new();
        for (name, t) in self.tensors.iter().filter(|(n, _)| n.starts_with(prefix)) {
            let kind = if buffer(name) { ParamKind::Buffer } else { ParamKind::Trainable };
            store.insert(name.clone(), t.clone(), kind)?;
        }
        Ok(store)
    }

    pub fn tensor(&self, name: &str) -> Result<&Matrix> {
        self.tensors.get(name).ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")))
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.get(key).map(String::as_str)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.meta.len() as u32).to_le_bytes());
        for (k, v) in &self.meta {
            put_str(&mut out, k);
            put_str(&mut out, v);
        }
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            put_str(&mut out, name);
            out.push(DTYPE_F64);
            out.extend_from_slice(&2u32.to_le_bytes());
            out.extend_from_slice(&(t.rows() as u64).to_le_bytes());
            out.extend_from_slice(&(t.cols() as u64).to_le_bytes());
            for x in t.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let mut ck = Checkpoint::new();
        for _ in 0..r.u32()? {
            let k = r.string()?;
            let v = r.string()?;
            ck.meta.insert(k, v);
        }
        for _ in 0..r.u32()? {
            let name = r.string()?;
            let dtype = r.take(1)?[0];
            if dtype != DTYPE_F64 {
                return Err(Error::Checkpoint(format!("tensor `{name}`: unknown dtype {dtype}")));
            }
            let rank = r.u32()?;
            if rank != 2 {
                return Err(Error::Checkpoint(format!("tensor `{name}`: rank {rank} unsupported")));
            }
            let rows = r.u64()? as usize;
            let cols = r.u64()? as usize;
            let raw = r.take(
                rows.checked_mul(cols)
                    .and_then(|n| n.checked_mul(8))
                    .ok_or_else(|| Error::Checkpoint(format!("tensor `{name}`: size overflow")))?,
            )?;
            let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            ck.tensors.insert(name, Matrix::from_vec(rows, cols, data)?);
        }
        if r.pos != buf.len() {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        Ok(ck)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut buf = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }

    /// SHA-256 of the serialized bytes, hex encoded.
    pub fn digest(&self) -> String {
        sha256_hex(&self.to_bytes())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
