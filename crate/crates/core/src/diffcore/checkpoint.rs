//! Binary parameter container.
//!
//! ```text
//! magic    "FTNC-PARAMS\0"                     12 bytes
//! version  u8 (= 1)
//! count    u32 LE                              number of layout entries
//! entries  count × { name_len u32 LE, name UTF-8 bytes,
//!                    rank u32 LE, rank × dim u32 LE }
//! values   total × f64 LE                      total = Σ Π dims
//! ```

use std::fs;
use std::path::Path;
use std::sync::Arc;

use super::params::{Layout, ParamVector};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 12] = b"FTNC-PARAMS\0";
pub const VERSION: u8 = 1;

const MAX_NAME_LEN: usize = 4096;
const MAX_RANK: usize = 8;

pub fn encode(params: &ParamVector) -> Vec<u8> {
    let layout = params.layout();
    let mut out = Vec::with_capacity(32 + params.len() * 8);
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&(layout.entries().len() as u32).to_le_bytes());
    for e in layout.entries() {
        out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
        out.extend_from_slice(e.name.as_bytes());
        out.extend_from_slice(&(e.shape.len() as u32).to_le_bytes());
        for d in &e.shape {
            out.extend_from_slice(&(*d as u32).to_le_bytes());
        }
    }
    for v in params.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
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
            .ok_or_else(|| Error::format("checkpoint", format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()) as usize)
    }
}

pub fn decode(bytes: &[u8]) -> Result<ParamVector> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(Error::format("checkpoint", "bad magic"));
    }
    let version = r.take(1)?[0];
    if version != VERSION {
        return Err(Error::format("checkpoint", format!("unsupported version {version}")));
    }
    let count = r.u32()?;
    let mut layout = Layout::new();
    let mut total: usize = 0;
    for _ in 0..count {
        let name_len = r.u32()?;
        if name_len > MAX_NAME_LEN {
            return Err(Error::format("checkpoint", "entry name too long"));
        }
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::format("checkpoint", "entry name is not UTF-8"))?
            .to_owned();
        let rank = r.u32()?;
        if rank > MAX_RANK {
            return Err(Error::format("checkpoint", format!("rank {rank} too large")));
        }
        let mut shape = Vec::with_capacity(rank);
        let mut size: usize = 1;
        for _ in 0..rank {
            let d = r.u32()?;
            size = size.checked_mul(d).ok_or_else(|| Error::format("checkpoint", "shape overflows"))?;
            shape.push(d);
        }
        total = total
            .checked_add(size)
            .ok_or_else(|| Error::format("checkpoint", "shape overflows"))?;
        layout.push(name, shape);
    }
    let remaining = bytes.len() - r.pos;
    if total.checked_mul(8) != Some(remaining) {
        return Err(Error::format(
            "checkpoint",
            format!("expected {total} values, found {remaining} trailing bytes"),
        ));
    }
    let values = r
        .take(remaining)?
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    ParamVector::new(Arc::new(layout), values)
}

pub fn save(params: &ParamVector, path: &Path) -> Result<()> {
    fs::write(path, encode(params))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<ParamVector> {
    decode(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> ParamVector {
        let layout = Layout::from_entries([("head.l0.weight", vec![2, 3]), ("head.l0.bias", vec![3])]);
        ParamVector::new(Arc::new(layout), (0..9).map(|i| i as f64 * 0.5 - 1.0).collect()).unwrap()
    }

    #[test]
    fn header_bytes() {
        let bytes = encode(&sample());
        assert_eq!(&bytes[..12], b"FTNC-PARAMS\0");
        assert_eq!(bytes[12], 1);
        assert_eq!(&bytes[13..17], &2u32.to_le_bytes());
    }

    #[test]
    fn rejects_truncation_and_trailing_bytes() {
        let bytes = encode(&sample());
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        let mut longer = bytes.clone();
        longer.push(0);
        assert!(decode(&longer).is_err());
        assert!(decode(b"FTNC-PARAMS\0\x02").is_err());
    }

    proptest! {
        #[test]
        fn roundtrip_is_bit_exact(
            dims in prop::collection::vec(prop::collection::vec(0usize..5, 0..3), 0..4),
            seed in any::<u64>(),
        ) {
            let layout = Layout::from_entries(dims.iter().enumerate().map(|(i, d)| (format!("e{i}"), d.clone())));
            let n = layout.total_len();
            let values: Vec<f64> = (0..n).map(|i| f64::from_bits(seed.wrapping_mul(i as u64 + 1) >> 2)).collect();
            let p = ParamVector::new(Arc::new(layout), values).unwrap();
            let back = decode(&encode(&p)).unwrap();
            prop_assert_eq!(back.layout(), p.layout());
            let a: Vec<u64> = back.values().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u64> = p.values().iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn decode_never_panics(bytes in prop::collection::vec(any::<u8>(), 0..128)) {
            let _ = decode(&bytes);
        }
    }
}
