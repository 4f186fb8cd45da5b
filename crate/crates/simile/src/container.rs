//! Named-record binary container shared by model checkpoints and retrieval
//! indices.
//!
//! All integers are little-endian. The file starts with a `u32` header length
//! and that many bytes of JSON metadata. Records follow until end of file:
//! `u32` name length, name bytes, `u8` dtype (0 = f32, 1 = f64), `u32` rank,
//! `rank` `u32` dims, then the row-major payload.

use std::io::{Read, Write};

use serde::de::DeserializeOwned;
use serde::Serialize;
use simile_core::Precision;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl Payload {
    pub fn len(&self) -> usize {
        match self {
            Self::F32(v) => v.len(),
            Self::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn precision(&self) -> Precision {
        match self {
            Self::F32(_) => Precision::F32,
            Self::F64(_) => Precision::F64,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub name: String,
    pub dims: Vec<usize>,
    pub payload: Payload,
}

fn u32_of(n: usize, what: &'static str) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::format(what, format!("{n} does not fit in 32 bits")))
}

pub fn write_container<W: Write>(mut w: W, header: &impl Serialize, records: &[Record]) -> Result<()> {
    let json = serde_json::to_vec(header)?;
    w.write_all(&u32_of(json.len(), "header")?.to_le_bytes())?;
    w.write_all(&json)?;
    for r in records {
        let numel: usize = r.dims.iter().product();
        if numel != r.payload.len() {
            return Err(Error::format(
                "record",
                format!("{}: dims {:?} need {numel} values, payload has {}", r.name, r.dims, r.payload.len()),
            ));
        }
        w.write_all(&u32_of(r.name.len(), "record name")?.to_le_bytes())?;
        w.write_all(r.name.as_bytes())?;
        w.write_all(&[match r.payload {
            Payload::F32(_) => 0,
            Payload::F64(_) => 1,
        }])?;
        w.write_all(&u32_of(r.dims.len(), "rank")?.to_le_bytes())?;
        for &d in &r.dims {
            w.write_all(&u32_of(d, "dimension")?.to_le_bytes())?;
        }
        match &r.payload {
            Payload::F32(v) => v.iter().try_for_each(|x| w.write_all(&x.to_le_bytes()))?,
            Payload::F64(v) => v.iter().try_for_each(|x| w.write_all(&x.to_le_bytes()))?,
        }
    }
    w.flush()?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8]> {
        if self.bytes.len() < n {
            return Err(Error::format("container", format!("truncated {what}")));
        }
        let (head, tail) = self.bytes.split_at(n);
        self.bytes = tail;
        Ok(head)
    }

    fn u32(&mut self, what: &'static str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }
}

/// Parses a whole container held in memory.
pub fn parse_container<H: DeserializeOwned>(bytes: &[u8]) -> Result<(H, Vec<Record>)> {
    let mut c = Cursor { bytes };
    let n = c.u32("header length")?;
    let header = serde_json::from_slice(c.take(n, "header")?)?;
    let mut records = Vec::new();
    while !c.bytes.is_empty() {
        let n = c.u32("name length")?;
        let name = std::str::from_utf8(c.take(n, "record name")?)
            .map_err(|e| Error::format("record name", e.to_string()))?
            .to_owned();
        let dtype = c.take(1, "dtype")?[0];
        let rank = c.u32("rank")?;
        let dims = (0..rank).map(|_| c.u32("dimension")).collect::<Result<Vec<_>>>()?;
        let numel = dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::format("record", format!("{name}: dims overflow")))?;
        let payload = match dtype {
            0 => Payload::F32(
                c.take(numel.saturating_mul(4), "payload")?
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
                    .collect(),
            ),
            1 => Payload::F64(
                c.take(numel.saturating_mul(8), "payload")?
                    .chunks_exact(8)
                    .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
                    .collect(),
            ),
            t => return Err(Error::format("record", format!("{name}: unknown dtype tag {t}"))),
        };
        records.push(Record { name, dims, payload });
    }
    Ok((header, records))
}

pub fn read_container<H: DeserializeOwned, R: Read>(mut r: R) -> Result<(H, Vec<Record>)> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    parse_container(&bytes)
}
