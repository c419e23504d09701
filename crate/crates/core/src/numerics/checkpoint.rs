//! Flat binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic "SDCK" | u32 version | u32 record count
//! per record: u32 name length | name (UTF-8) | u8 flags | u32 rank
//!             | u64 extent x rank | f64 value x product(extents)
//! ```
//!
//! Flag bit 0 marks a trainable tensor, bit 1 a buffer. Values are stored
//! as raw IEEE-754 bits, so decoding reproduces every tensor exactly.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::params::ParameterSet;
use super::tensor::Tensor;
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"SDCK";
pub const VERSION: u32 = 1;

pub fn encode(ps: &ParameterSet) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(ps.len() as u32).to_le_bytes());
    for (_, p) in ps.iter() {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.push(u8::from(p.trainable) | (u8::from(p.buffer) << 1));
        out.extend_from_slice(&(p.value.shape().len() as u32).to_le_bytes());
        for d in p.value.shape() {
            out.extend_from_slice(&(*d as u64).to_le_bytes());
        }
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
}

pub fn decode(bytes: &[u8]) -> Result<ParameterSet> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let count = r.u32()? as usize;
    let mut ps = ParameterSet::new();
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
        let flags = r.take(1)?[0];
        let rank = r.u32()? as usize;
        let shape = (0..rank)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let raw = r.take(
            n.checked_mul(8)
                .ok_or_else(|| Error::Checkpoint("tensor too large".into()))?,
        )?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let t = Tensor::new(&shape, data)?;
        let id = if flags & 2 != 0 {
            ps.add_buffer(&name, t)
        } else {
            ps.add(&name, t)
        };
        ps.get_mut(id).trainable = flags & 1 != 0;
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes after last record".into()));
    }
    Ok(ps)
}

/// Plain-text manifest: one line per tensor with name, shape, flags, and
/// value count.
pub fn manifest(ps: &ParameterSet) -> String {
    let mut s = String::from("# name\tshape\ttrainable\tbuffer\tvalues\n");
    for (_, p) in ps.iter() {
        let shape: Vec<String> = p.value.shape().iter().map(|d| format!("{d}")).collect();
        s.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            p.name,
            shape.join("x"),
            p.trainable,
            p.buffer,
            p.value.len()
        ));
    }
    s
}
