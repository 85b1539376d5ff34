//! Binary weight container.
//!
//! Little-endian: magic `ERNW`, `u32` version (1), `u32` tensor count, then
//! per tensor `u16` name length, name bytes (UTF-8), `u8` dtype (0 = f32,
//! 1 = i8), `f32` quant scale (1.0 for f32), `u8` rank, `u32` dims, raw
//! values; finally a CRC32 of every preceding byte.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use super::weights::{NamedTensor, TensorData, WeightSet};

pub const MAGIC: &[u8; 4] = b"ERNW";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FormatError {
    BadMagic,
    VersionMismatch(u32),
    ChecksumMismatch,
    Malformed(String),
}

impl FormatError {
    pub fn kind(&self) -> &'static str {
        match self {
            FormatError::BadMagic => "BadMagic",
            FormatError::VersionMismatch(_) => "VersionMismatch",
            FormatError::ChecksumMismatch => "ChecksumMismatch",
            FormatError::Malformed(_) => "Malformed",
        }
    }
}

impl fmt::Display for FormatError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FormatError::BadMagic => write!(f, "not a weight file (bad magic)"),
            FormatError::VersionMismatch(v) => write!(f, "unsupported weight file version {v}"),
            FormatError::ChecksumMismatch => write!(f, "weight file checksum mismatch (truncated or corrupt)"),
            FormatError::Malformed(m) => write!(f, "malformed weight file: {m}"),
        }
    }
}

impl core::error::Error for FormatError {}

pub fn encode(weights: &WeightSet) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + weights.payload_bytes() + 32 * weights.tensors.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(weights.tensors.len() as u32).to_le_bytes());
    for t in &weights.tensors {
        let name = t.name.as_bytes();
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name);
        out.push(t.data.dtype().code());
        let scale = match &t.data {
            TensorData::F32(_) => 1.0f32,
            TensorData::Int8 { scale, .. } => *scale,
        };
        out.extend_from_slice(&scale.to_le_bytes());
        out.push(t.dims.len() as u8);
        for &d in &t.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        match &t.data {
            TensorData::F32(v) => {
                for x in v {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
            TensorData::Int8 { values, .. } => out.extend(values.iter().map(|&q| q as u8)),
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| FormatError::Malformed("unexpected end of data".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, FormatError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, FormatError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f32(&mut self) -> Result<f32, FormatError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<WeightSet, FormatError> {
    if bytes.len() >= 4 && &bytes[..4] != MAGIC {
        return Err(FormatError::BadMagic);
    }
    if bytes.len() < 16 {
        return Err(FormatError::ChecksumMismatch);
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    if crc32fast::hash(body) != stored {
        return Err(FormatError::ChecksumMismatch);
    }

    let mut r = Reader { buf: body, pos: 4 };
    let version = r.u32()?;
    if version != VERSION {
        return Err(FormatError::VersionMismatch(version));
    }
    let count = r.u32()? as usize;
    let mut tensors = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let name_len = r.u16()? as usize;
        let name = core::str::from_utf8(r.take(name_len)?)
            .map_err(|_| FormatError::Malformed("tensor name is not UTF-8".into()))?
            .into();
        let dtype = r.u8()?;
        let scale = r.f32()?;
        let rank = r.u8()? as usize;
        let dims = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        let n = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let n = n.ok_or_else(|| FormatError::Malformed("tensor size overflows".into()))?;
        let data = match dtype {
            0 => {
                let raw = r.take(n.checked_mul(4).ok_or_else(|| FormatError::Malformed("tensor too large".into()))?)?;
                TensorData::F32(
                    raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect(),
                )
            }
            1 => {
                if !(scale > 0.0 && scale.is_finite()) {
                    return Err(FormatError::Malformed(alloc::format!("non-positive quant scale for {name}")));
                }
                TensorData::Int8 { values: r.take(n)?.iter().map(|&b| b as i8).collect(), scale }
            }
            other => return Err(FormatError::Malformed(alloc::format!("unknown dtype {other}"))),
        };
        tensors.push(NamedTensor { name, dims, data });
    }
    if r.pos != body.len() {
        return Err(FormatError::Malformed("trailing bytes after last tensor".into()));
    }
    Ok(WeightSet { tensors })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{quantize_int8, NetworkSpec};
    use proptest::prelude::*;

    #[test]
    fn round_trip_is_bitwise() {
        let spec = NetworkSpec::tiny(8, (4, 8), 4);
        let ws = WeightSet::init(&spec, 3);
        assert_eq!(decode(&encode(&ws)).unwrap(), ws);
        let q = quantize_int8(&spec, &ws).unwrap().weights;
        assert_eq!(decode(&encode(&q)).unwrap(), q);
    }

    #[test]
    fn truncated_file_fails_checksum() {
        let ws = WeightSet::init(&NetworkSpec::tiny(8, (4, 8), 4), 3);
        let bytes = encode(&ws);
        for cut in [bytes.len() - 1, bytes.len() / 2, 10, 5] {
            assert_eq!(decode(&bytes[..cut]), Err(FormatError::ChecksumMismatch), "cut at {cut}");
        }
    }

    #[test]
    fn bad_magic_and_version() {
        let ws = WeightSet::init(&NetworkSpec::tiny(8, (4, 8), 4), 3);
        let mut bytes = encode(&ws);
        bytes[..4].copy_from_slice(b"XXXX");
        assert_eq!(decode(&bytes), Err(FormatError::BadMagic));

        let mut bytes = encode(&ws);
        bytes[4..8].copy_from_slice(&2u32.to_le_bytes());
        let n = bytes.len();
        let crc = crc32fast::hash(&bytes[..n - 4]);
        bytes[n - 4..].copy_from_slice(&crc.to_le_bytes());
        assert_eq!(decode(&bytes), Err(FormatError::VersionMismatch(2)));
    }

    #[test]
    fn flipped_byte_fails_checksum() {
        let ws = WeightSet::init(&NetworkSpec::tiny(8, (4, 8), 4), 3);
        let mut bytes = encode(&ws);
        bytes[40] ^= 0x55;
        assert_eq!(decode(&bytes), Err(FormatError::ChecksumMismatch));
    }

    proptest! {
        #[test]
        fn arbitrary_tensors_round_trip(values in proptest::collection::vec(any::<f32>(), 0..64), q in proptest::collection::vec(any::<i8>(), 1..64)) {
            let ws = WeightSet { tensors: alloc::vec![
                NamedTensor::f32("a", alloc::vec![values.len()], values.clone()),
                NamedTensor { name: "b".into(), dims: alloc::vec![q.len(), 1], data: TensorData::Int8 { values: q, scale: 0.5 } },
            ]};
            let back = decode(&encode(&ws)).unwrap();
            prop_assert_eq!(back.tensors.len(), 2);
            if let TensorData::F32(v) = &back.tensors[0].data {
                prop_assert!(v.iter().zip(&values).all(|(a, b)| a.to_bits() == b.to_bits()));
            }
            prop_assert_eq!(&back.tensors[1], &ws.tensors[1]);
        }
    }
}
