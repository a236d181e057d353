//! The `TNSR` binary tensor container.
//!
//! Layout: magic `TNSR`, u8 version (1), u8 dtype (1 = f32, 2 = f64), u8 rank,
//! `rank` little-endian u64 extents, then the elements as little-endian
//! scalars in row-major order.

use super::{numel, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"TNSR";
pub const VERSION: u8 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DType {
    F32 = 1,
    F64 = 2,
}

impl DType {
    fn from_code(code: u8) -> Result<Self> {
        match code {
            1 => Ok(DType::F32),
            2 => Ok(DType::F64),
            other => Err(Error::Format(format!("unknown TNSR dtype code {other}"))),
        }
    }

    fn width(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

pub fn encode(tensor: &Tensor, dtype: DType) -> Vec<u8> {
    let mut out = Vec::with_capacity(7 + 8 * tensor.rank() + dtype.width() * tensor.numel());
    write(tensor, dtype, &mut out);
    out
}

pub fn write(tensor: &Tensor, dtype: DType, out: &mut Vec<u8>) {
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(dtype as u8);
    out.push(u8::try_from(tensor.rank()).expect("tensor rank exceeds 255"));
    for &extent in tensor.shape() {
        out.extend_from_slice(&(extent as u64).to_le_bytes());
    }
    match dtype {
        DType::F32 => tensor
            .data()
            .iter()
            .for_each(|&v| out.extend_from_slice(&(v as f32).to_le_bytes())),
        DType::F64 => tensor.data().iter().for_each(|&v| out.extend_from_slice(&v.to_le_bytes())),
    }
}

/// Decodes a whole buffer; trailing bytes are an error.
pub fn decode(bytes: &[u8]) -> Result<Tensor> {
    let (tensor, used) = decode_prefix(bytes)?;
    if used != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes after TNSR payload", bytes.len() - used)));
    }
    Ok(tensor)
}

/// Decodes one tensor from the front of `bytes`, returning it with the
/// number of bytes consumed.
pub fn decode_prefix(bytes: &[u8]) -> Result<(Tensor, usize)> {
    let truncated = || Error::Format("truncated TNSR data".into());
    if bytes.len() < 7 {
        return Err(truncated());
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Format(format!("bad TNSR magic {:?}", String::from_utf8_lossy(&bytes[..4]))));
    }
    if bytes[4] != VERSION {
        return Err(Error::Format(format!("unsupported TNSR version {}", bytes[4])));
    }
    let dtype = DType::from_code(bytes[5])?;
    let rank = bytes[6] as usize;
    let mut pos = 7;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        let raw = bytes.get(pos..pos + 8).ok_or_else(truncated)?;
        let extent = u64::from_le_bytes(raw.try_into().unwrap());
        shape.push(usize::try_from(extent).map_err(|_| Error::Format("TNSR extent overflows".into()))?);
        pos += 8;
    }
    let count = shape
        .iter()
        .try_fold(1usize, |acc, &e| acc.checked_mul(e))
        .ok_or_else(|| Error::Format("TNSR element count overflows".into()))?;
    let len = count.checked_mul(dtype.width()).ok_or_else(truncated)?;
    let payload = bytes.get(pos..pos + len).ok_or_else(truncated)?;
    let data: Vec<f64> = match dtype {
        DType::F32 => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
        DType::F64 => payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
    };
    debug_assert_eq!(data.len(), numel(&shape));
    Ok((Tensor::new(shape, data)?, pos + len))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let t = Tensor::new(vec![2], vec![1.0, -2.0]).unwrap();
        let bytes = encode(&t, DType::F64);
        assert_eq!(&bytes[..7], b"TNSR\x01\x02\x01");
        assert_eq!(&bytes[7..15], &2u64.to_le_bytes());
        assert_eq!(bytes.len(), 15 + 16);
    }

    #[test]
    fn f32_payload_decodes() {
        let t = Tensor::new(vec![1, 2], vec![0.5, 0.25]).unwrap();
        let bytes = encode(&t, DType::F32);
        assert_eq!(bytes[5], 1);
        assert_eq!(decode(&bytes).unwrap(), t);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let mut bytes = encode(&Tensor::zeros(&[3]), DType::F64);
        assert!(matches!(decode(&bytes[..bytes.len() - 1]), Err(Error::Format(_))));
        bytes[3] = b'X';
        assert!(matches!(decode(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn scalar_has_rank_zero() {
        let bytes = encode(&Tensor::scalar(3.0), DType::F64);
        assert_eq!(bytes[6], 0);
        assert_eq!(decode(&bytes).unwrap().item().unwrap(), 3.0);
    }

    proptest! {
        #[test]
        fn f64_round_trip_is_bit_exact(shape in prop::collection::vec(0usize..4, 0..4), seed in any::<u64>()) {
            let n: usize = shape.iter().product();
            let data: Vec<f64> = (0..n).map(|i| f64::from_bits(seed.wrapping_mul(i as u64 + 1) >> 2)).collect();
            let t = Tensor::new(shape, data).unwrap();
            let back = decode(&encode(&t, DType::F64)).unwrap();
            prop_assert_eq!(back.shape(), t.shape());
            for (a, b) in back.data().iter().zip(t.data()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}
