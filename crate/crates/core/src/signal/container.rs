//! The `CSPM` dataset container.
//!
//! Little-endian, no padding:
//!
//! ```text
//! "CSPM" | u32 version=1 | u32 C | u32 T | u32 N
//! C x (UTF-8 class name, NUL terminated)
//! N x (u32 label | f32 snr_db | T x f32 I | T x f32 Q)
//! ```

use std::fs;
use std::path::Path;

use super::{ComplexSequence, Dataset, LabeledExample};
use crate::error::{Error, FormatError, Result};

pub const CONTAINER_MAGIC: [u8; 4] = *b"CSPM";
pub const CONTAINER_VERSION: u32 = 1;

pub fn encode_container(ds: &Dataset) -> Vec<u8> {
    let t = ds.seq_len();
    let mut out = Vec::with_capacity(20 + ds.len() * (8 + 8 * t));
    out.extend_from_slice(&CONTAINER_MAGIC);
    for v in [CONTAINER_VERSION, ds.num_classes() as u32, t as u32, ds.len() as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for name in ds.class_names() {
        out.extend_from_slice(name.as_bytes());
        out.push(0);
    }
    for ex in ds.examples() {
        out.extend_from_slice(&ex.label.to_le_bytes());
        out.extend_from_slice(&ex.snr_db.to_le_bytes());
        for v in ex.signal.i().iter().chain(ex.signal.q()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], FormatError> {
        let available = self.buf.len() - self.pos;
        if n > available {
            return Err(FormatError::Truncated {
                what: what.to_string(),
                needed: n,
                available,
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u32(&mut self, what: &str) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub(crate) fn f32(&mut self, what: &str) -> Result<f32, FormatError> {
        Ok(f32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub(crate) fn magic(&mut self, expected: [u8; 4]) -> Result<(), FormatError> {
        let found: [u8; 4] = self.take(4, "magic")?.try_into().unwrap();
        if found != expected {
            return Err(FormatError::BadMagic { expected, found });
        }
        Ok(())
    }

    pub(crate) fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub(crate) fn cstr(&mut self, what: &str) -> Result<String, FormatError> {
        let rest = &self.buf[self.pos..];
        let end = rest
            .iter()
            .position(|&b| b == 0)
            .ok_or_else(|| FormatError::Truncated {
                what: format!("{what} terminator"),
                needed: rest.len() + 1,
                available: rest.len(),
            })?;
        let s = std::str::from_utf8(&rest[..end])
            .map_err(|e| FormatError::Malformed(format!("{what} is not UTF-8: {e}")))?
            .to_string();
        self.pos += end + 1;
        Ok(s)
    }
}

pub fn decode_container(bytes: &[u8]) -> Result<Dataset, FormatError> {
    let mut r = Reader::new(bytes);
    r.magic(CONTAINER_MAGIC)?;
    let version = r.u32("version")?;
    if version != CONTAINER_VERSION {
        return Err(FormatError::VersionMismatch {
            expected: CONTAINER_VERSION,
            found: version,
        });
    }
    let classes = r.u32("class count")? as usize;
    let t = r.u32("sequence length")? as usize;
    let n = r.u32("example count")? as usize;
    let names = (0..classes)
        .map(|c| r.cstr(&format!("class name {c}")))
        .collect::<Result<Vec<_>, _>>()?;

    let mut examples = Vec::with_capacity(n.min(r.remaining() / (8 + 8 * t).max(1)));
    for idx in 0..n {
        let what = format!("example {idx}");
        let label = r.u32(&what)?;
        let snr_db = r.f32(&what)?;
        let payload = r.take(8 * t, &what)?;
        let floats: Vec<f32> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let (i, q) = floats.split_at(t);
        let signal =
            ComplexSequence::new(i.to_vec(), q.to_vec()).map_err(|e| FormatError::Malformed(format!("{what}: {e}")))?;
        examples.push(LabeledExample { signal, label, snr_db });
    }
    if r.remaining() != 0 {
        return Err(FormatError::Malformed(format!("{} trailing bytes", r.remaining())));
    }
    Dataset::new(names, t, examples).map_err(|e| FormatError::Malformed(e.to_string()))
}

pub fn write_container(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_container(ds)).map_err(|e| Error::io(path, e))
}

pub fn read_container(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_container(&bytes).map_err(|source| Error::Format {
        path: path.to_path_buf(),
        source,
    })
}
