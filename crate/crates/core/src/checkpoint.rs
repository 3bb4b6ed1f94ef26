//! Versioned binary container for named arrays plus a JSON metadata blob.
//!
//! Layout (little endian):
//! `"EXFCKPT\0"`, `u32` version, `u32`-prefixed kind string, `u32`-prefixed JSON
//! metadata, `u32` tensor count, then per tensor: `u32`-prefixed name, `u8` dtype
//! tag, `u32` rank, `u32` dims, raw element data.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::scalar::{DType, Scalar};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"EXFCKPT\0";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T: Scalar> {
    pub kind: String,
    pub meta: serde_json::Value,
    pub tensors: Vec<(String, Tensor<T>)>,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn new(kind: impl Into<String>, meta: serde_json::Value) -> Self {
        Self {
            kind: kind.into(),
            meta,
            tensors: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor<T>) {
        self.tensors.push((name.into(), t));
    }

    /// Adds every parameter of `store` under `prefix`.
    pub fn push_store(&mut self, prefix: &str, store: &ParamStore<T>) {
        for (name, t) in store.iter() {
            self.push(format!("{prefix}{name}"), t.clone());
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Collects the tensors under `prefix` (prefix stripped) into a fresh store.
    pub fn store(&self, prefix: &str) -> ParamStore<T> {
        let mut s = ParamStore::new();
        for (n, t) in &self.tensors {
            if let Some(rest) = n.strip_prefix(prefix) {
                s.add(rest, t.clone());
            }
        }
        s
    }

    /// Overwrites `store` with the tensors under `prefix`; names and shapes must match exactly.
    pub fn load_store(&self, prefix: &str, store: &mut ParamStore<T>) -> Result<()> {
        store
            .load_from(&self.store(prefix))
            .map_err(|e| Error::Checkpoint(format!("{prefix}: {e}")))
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Checkpoint(format!(
                "expected a {kind} checkpoint, found {}",
                self.kind
            )));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        put_bytes(&mut out, self.kind.as_bytes());
        put_bytes(&mut out, serde_json::to_string(&self.meta)?.as_bytes());
        put_u32(&mut out, self.tensors.len());
        for (name, t) in &self.tensors {
            put_bytes(&mut out, name.as_bytes());
            out.push(T::DTYPE.tag());
            put_u32(&mut out, t.ndim());
            for &d in t.shape() {
                put_u32(&mut out, d);
            }
            T::to_le_bytes_vec(t.data(), &mut out);
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let kind = r.string()?;
        let meta = serde_json::from_str(&r.string()?)?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let name = r.string()?;
            let tag = r.take(1)?[0];
            let dtype = DType::from_tag(tag)
                .ok_or_else(|| Error::Checkpoint(format!("unknown dtype tag {tag}")))?;
            let rank = r.u32()? as usize;
            let shape = (0..rank)
                .map(|_| r.u32().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let t = match dtype {
                DType::F32 => decode::<f32>(r.take(n * 4)?, &shape).cast(),
                DType::F64 => decode::<f64>(r.take(n * 8)?, &shape).cast(),
            };
            tensors.push((name, t));
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        Ok(Self {
            kind,
            meta,
            tensors,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(&self.to_bytes()?)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let mut buf = Vec::new();
        BufReader::new(File::open(path)?).read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }
}

fn decode<S: Scalar>(bytes: &[u8], shape: &[usize]) -> Tensor<S> {
    let size = std::mem::size_of::<S>();
    Tensor::new(
        shape,
        bytes.chunks_exact(size).map(S::from_le_chunk).collect(),
    )
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&u32::try_from(v).expect("value fits in u32").to_le_bytes());
}

fn put_bytes(out: &mut Vec<u8>, b: &[u8]) {
    put_u32(out, b.len());
    out.extend_from_slice(b);
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint("truncated file".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Checkpoint("invalid utf-8".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint<f32> {
        let mut c = Checkpoint::new("test", serde_json::json!({"a": 1, "mode": "add"}));
        c.push(
            "x",
            Tensor::new(&[2, 3], vec![1.0, -2.5, 3.0, f32::MIN_POSITIVE, 0.0, 7.0]),
        );
        c.push("s", Tensor::scalar(0.25));
        c
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.ckpt");
        let c = sample();
        c.save(&p).unwrap();
        let back = Checkpoint::<f32>::load(&p).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn loads_across_dtypes() {
        let bytes = sample().to_bytes().unwrap();
        let c64 = Checkpoint::<f64>::from_bytes(&bytes).unwrap();
        assert_eq!(c64.get("x").unwrap().data()[1], -2.5);
    }

    #[test]
    fn rejects_corruption() {
        let mut bytes = sample().to_bytes().unwrap();
        assert!(Checkpoint::<f32>::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        bytes[0] = b'X';
        assert!(Checkpoint::<f32>::from_bytes(&bytes).is_err());
        let mut v = sample().to_bytes().unwrap();
        v[8] = 9;
        assert!(Checkpoint::<f32>::from_bytes(&v).is_err());
        assert!(matches!(
            Checkpoint::<f32>::load("/nonexistent/x"),
            Err(Error::MissingFile(_))
        ));
    }

    #[test]
    fn store_prefix_round_trip() {
        let mut store = ParamStore::<f32>::new();
        store.add("a.w", Tensor::full(&[2], 1.5));
        let mut c = Checkpoint::new("k", serde_json::Value::Null);
        c.push_store("model.", &store);
        let mut other = ParamStore::<f32>::new();
        other.add("a.w", Tensor::zeros(&[2]));
        c.load_store("model.", &mut other).unwrap();
        assert_eq!(other, store);
        let mut wrong = ParamStore::<f32>::new();
        wrong.add("a.w", Tensor::zeros(&[3]));
        assert!(c.load_store("model.", &mut wrong).is_err());
    }
}
