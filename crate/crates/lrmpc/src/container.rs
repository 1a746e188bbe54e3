//! LRMT tensor container.
//!
//! ```text
//! "LRMT" | version u32 LE | header length u64 LE | JSON header | payloads
//! ```
//!
//! The header maps each tensor name to `{shape, dtype, offset}` where `dtype`
//! is `"f64"` or `"u64"` and `offset` counts bytes from the start of the
//! payload area. File-level metadata lives under the reserved key `__meta__`.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"LRMT";
pub const VERSION: u32 = 1;
pub const META_KEY: &str = "__meta__";

#[derive(Clone, Debug, PartialEq)]
pub enum Entry {
    F64 { shape: Vec<usize>, data: Vec<f64> },
    U64 { shape: Vec<usize>, data: Vec<u64> },
}

impl Entry {
    pub fn shape(&self) -> &[usize] {
        match self {
            Entry::F64 { shape, .. } | Entry::U64 { shape, .. } => shape,
        }
    }

    fn dtype(&self) -> &'static str {
        match self {
            Entry::F64 { .. } => "f64",
            Entry::U64 { .. } => "u64",
        }
    }

    fn len(&self) -> usize {
        match self {
            Entry::F64 { data, .. } => data.len(),
            Entry::U64 { data, .. } => data.len(),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct HeaderEntry {
    shape: Vec<usize>,
    dtype: String,
    offset: u64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Container {
    pub meta: Map<String, Value>,
    pub entries: BTreeMap<String, Entry>,
}

impl Container {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert_f64(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) {
        self.entries.insert(name.into(), Entry::F64 { shape, data });
    }

    pub fn insert_u64(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<u64>) {
        self.entries.insert(name.into(), Entry::U64 { shape, data });
    }

    pub fn get(&self, name: &str) -> Result<&Entry> {
        self.entries.get(name).ok_or_else(|| Error::Container(format!("no tensor named {name:?}")))
    }

    pub fn f64(&self, name: &str) -> Result<lrmpc_core::RealTensor> {
        match self.get(name)? {
            Entry::F64 { shape, data } => Ok(lrmpc_core::RealTensor::new(shape.clone(), data.clone())?),
            Entry::U64 { .. } => Err(Error::Container(format!("{name} is u64, expected f64"))),
        }
    }

    pub fn u64(&self, name: &str, ring: lrmpc_core::Ring) -> Result<lrmpc_core::RingTensor> {
        match self.get(name)? {
            Entry::U64 { shape, data } => Ok(lrmpc_core::RingTensor::new(ring, shape.clone(), data.clone())?),
            Entry::F64 { .. } => Err(Error::Container(format!("{name} is f64, expected u64"))),
        }
    }

    /// Typed view of a metadata field.
    pub fn meta_field<T: serde::de::DeserializeOwned>(&self, key: &str) -> Result<T> {
        let v = self.meta.get(key).ok_or_else(|| Error::Container(format!("metadata lacks {key:?}")))?;
        serde_json::from_value(v.clone()).map_err(|e| Error::Container(format!("metadata {key:?}: {e}")))
    }

    pub fn set_meta(&mut self, key: &str, value: impl Serialize) -> Result<()> {
        self.meta.insert(key.into(), serde_json::to_value(value)?);
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut header = Map::new();
        let mut offset = 0u64;
        for (name, e) in &self.entries {
            if name == META_KEY {
                return Err(Error::Container(format!("{META_KEY} is reserved")));
            }
            let h = HeaderEntry { shape: e.shape().to_vec(), dtype: e.dtype().into(), offset };
            header.insert(name.clone(), serde_json::to_value(h)?);
            offset += e.len() as u64 * 8;
        }
        if !self.meta.is_empty() {
            header.insert(META_KEY.into(), Value::Object(self.meta.clone()));
        }
        let header = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(16 + header.len() + offset as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for e in self.entries.values() {
            match e {
                Entry::F64 { data, .. } => data.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
                Entry::U64 { data, .. } => data.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
            }
        }
        Ok(out)
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Container> {
        let bad = |m: &str| Error::Container(m.into());
        if buf.len() < 16 || &buf[..4] != MAGIC {
            return Err(bad("missing LRMT magic"));
        }
        let version = u32::from_le_bytes(buf[4..8].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(Error::Container(format!("unsupported version {version}")));
        }
        let hlen = u64::from_le_bytes(buf[8..16].try_into().expect("8 bytes"));
        let hend = usize::try_from(hlen).ok().and_then(|h| h.checked_add(16)).filter(|&e| e <= buf.len()).ok_or_else(|| bad("header runs past end of file"))?;
        let header: Map<String, Value> = serde_json::from_slice(&buf[16..hend]).map_err(|e| Error::Container(format!("header: {e}")))?;
        let payload = &buf[hend..];
        let mut out = Container::new();
        for (name, v) in header {
            if name == META_KEY {
                let Value::Object(m) = v else { return Err(bad("__meta__ must be an object")) };
                out.meta = m;
                continue;
            }
            let h: HeaderEntry = serde_json::from_value(v).map_err(|e| Error::Container(format!("{name}: {e}")))?;
            let len: usize = h.shape.iter().product();
            let start = usize::try_from(h.offset).map_err(|_| bad("offset overflow"))?;
            let end = len.checked_mul(8).and_then(|b| b.checked_add(start)).filter(|&e| e <= payload.len());
            let end = end.ok_or_else(|| Error::Container(format!("{name} runs past end of file")))?;
            let words = payload[start..end].chunks_exact(8).map(|c| c.try_into().expect("8 bytes"));
            let entry = match h.dtype.as_str() {
                "f64" => Entry::F64 { shape: h.shape, data: words.map(f64::from_le_bytes).collect() },
                "u64" => Entry::U64 { shape: h.shape, data: words.map(u64::from_le_bytes).collect() },
                d => return Err(Error::Container(format!("{name}: unknown dtype {d:?}"))),
            };
            out.entries.insert(name, entry);
        }
        Ok(out)
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(&self.to_bytes()?).map_err(Error::io("<stream>"))
    }

    pub fn read_from(mut r: impl Read) -> Result<Container> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf).map_err(Error::io("<stream>"))?;
        Self::from_bytes(&buf)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()?).map_err(Error::io(path))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Container> {
        let path = path.as_ref();
        let buf = std::fs::read(path).map_err(Error::io(path))?;
        Self::from_bytes(&buf).map_err(|e| match e {
            Error::Container(m) => Error::Container(format!("{}: {m}", path.display())),
            e => e,
        })
    }
}
