//! Binary parameter files.
//!
//! Layout: 8-byte magic `DVAEPARM`, u32 format version, u32 model kind, then
//! named tensors until end of file, each as u32 name length, UTF-8 name,
//! u32 rank, `rank` u64 dims and the row-major f64 values. All integers and
//! floats are little-endian.

use std::path::Path;

use crate::error::{Error, Result};
use crate::formats::write_atomic;
use crate::nn::Layout;

pub const MAGIC: &[u8; 8] = b"DVAEPARM";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Srnn,
    DeepAr,
}

impl ModelKind {
    fn code(self) -> u32 {
        match self {
            ModelKind::Srnn => 1,
            ModelKind::DeepAr => 2,
        }
    }

    fn from_code(c: u32) -> Option<Self> {
        match c {
            1 => Some(ModelKind::Srnn),
            2 => Some(ModelKind::DeepAr),
            _ => None,
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::Srnn => "srnn",
            ModelKind::DeepAr => "deepar",
        })
    }
}

pub fn encode(kind: ModelKind, layout: &Layout, data: &[f64]) -> Vec<u8> {
    assert_eq!(layout.len(), data.len(), "parameter vector does not match layout");
    let mut out = Vec::with_capacity(16 + 8 * data.len() + 64 * layout.tensors().len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&kind.code().to_le_bytes());
    for t in layout.tensors() {
        out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
        for &d in &t.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in &data[t.range()] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    what: &'a str,
}

impl<'a> Reader<'a> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::parse(self.what, format!("byte offset {}", self.pos), msg)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.err(format!("unexpected end of file (needed {n} bytes)")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

/// Decodes a parameter file and checks it against `layout`.
pub fn decode(bytes: &[u8], kind: ModelKind, layout: &Layout, what: &str) -> Result<Vec<f64>> {
    let mut r = Reader { bytes, pos: 0, what };
    if r.take(8)? != MAGIC {
        r.pos = 0;
        return Err(r.err("not a parameter file (bad magic)"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Version {
            found: version,
            expected: VERSION,
        });
    }
    let code = r.u32()?;
    match ModelKind::from_code(code) {
        Some(k) if k == kind => {}
        Some(k) => return Err(r.err(format!("file holds a {k} model, expected {kind}"))),
        None => return Err(r.err(format!("unknown model kind {code}"))),
    }
    let mut data = vec![f64::NAN; layout.len()];
    let mut seen = vec![false; layout.tensors().len()];
    while !r.done() {
        let start = r.pos;
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?).map_err(|_| r.err("tensor name is not UTF-8"))?;
        let idx = layout
            .tensors()
            .iter()
            .position(|t| t.name == name)
            .ok_or_else(|| Error::parse(what, format!("byte offset {start}"), format!("unknown tensor '{name}'")))?;
        if seen[idx] {
            return Err(r.err(format!("duplicate tensor '{name}'")));
        }
        seen[idx] = true;
        let spec = &layout.tensors()[idx];
        let rank = r.u32()? as usize;
        let mut dims = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            dims.push(r.u64()? as usize);
        }
        if dims != spec.shape {
            return Err(r.err(format!("tensor '{name}' has shape {dims:?}, expected {:?}", spec.shape)));
        }
        for slot in &mut data[spec.range()] {
            let v = f64::from_le_bytes(r.take(8)?.try_into().unwrap());
            if !v.is_finite() {
                return Err(r.err(format!("non-finite value in tensor '{name}'")));
            }
            *slot = v;
        }
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        return Err(r.err(format!("missing tensor '{}'", layout.tensors()[i].name)));
    }
    Ok(data)
}

pub fn save(path: &Path, kind: ModelKind, layout: &Layout, data: &[f64]) -> Result<()> {
    write_atomic(path, &encode(kind, layout, data))
}

pub fn load(path: &Path, kind: ModelKind, layout: &Layout) -> Result<Vec<f64>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, kind, layout, &path.display().to_string())
}
