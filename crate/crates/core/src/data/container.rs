//! Bit-exact tensor container.
//!
//! Layout, all integers little-endian:
//!
//! | offset | size      | field                          |
//! |--------|-----------|--------------------------------|
//! | 0      | 4         | magic `FMT1`                   |
//! | 4      | 4         | dtype code u32 (1 f32, 2 f64)  |
//! | 8      | 4         | ndim u32                       |
//! | 12     | 4         | reserved u32, must be zero     |
//! | 16     | 8·ndim    | dims, u64 each                 |
//! | ..     | numel·sz  | row-major payload              |

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{DType, Scalar, Tensor};

pub const MAGIC: &[u8; 4] = b"FMT1";
pub const HEADER_LEN: usize = 16;
pub const MAX_NDIM: usize = 16;

/// A decoded container of either precision.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl AnyTensor {
    pub fn dtype(&self) -> DType {
        match self {
            AnyTensor::F32(_) => DType::F32,
            AnyTensor::F64(_) => DType::F64,
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            AnyTensor::F32(t) => t.shape(),
            AnyTensor::F64(t) => t.shape(),
        }
    }
}

pub fn encoded_len(ndim: usize, numel: usize, dtype: DType) -> usize {
    HEADER_LEN + 8 * ndim + numel * dtype.size()
}

pub fn encode<T: Scalar>(t: &Tensor<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(encoded_len(t.ndim(), t.numel(), T::DTYPE));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&T::DTYPE.code().to_le_bytes());
    out.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in t.data() {
        v.write_le(&mut out);
    }
    out
}

fn u32_at(bytes: &[u8], off: usize) -> Result<u32> {
    bytes
        .get(off..off + 4)
        .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
        .ok_or_else(|| Error::data("truncated header", bytes.len() as u64))
}

struct Header {
    dtype: DType,
    shape: Vec<usize>,
    payload_at: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    match bytes.get(..4) {
        Some(m) if m == MAGIC => {}
        Some(_) => return Err(Error::data("bad magic, expected FMT1", 0)),
        None => return Err(Error::data("truncated header", bytes.len() as u64)),
    }
    let code = u32_at(bytes, 4)?;
    let dtype = DType::from_code(code)
        .ok_or_else(|| Error::data(format!("unknown dtype code {code}"), 4))?;
    let ndim = u32_at(bytes, 8)? as usize;
    if ndim == 0 || ndim > MAX_NDIM {
        return Err(Error::data(format!("ndim {ndim} outside 1..={MAX_NDIM}"), 8));
    }
    if u32_at(bytes, 12)? != 0 {
        return Err(Error::data("reserved header field is not zero", 12));
    }
    let mut shape = Vec::with_capacity(ndim);
    let mut numel: usize = 1;
    for i in 0..ndim {
        let off = HEADER_LEN + 8 * i;
        let raw = bytes
            .get(off..off + 8)
            .map(|b| u64::from_le_bytes(b.try_into().unwrap()))
            .ok_or_else(|| Error::data("truncated dims", bytes.len() as u64))?;
        let d = usize::try_from(raw)
            .ok()
            .filter(|&d| d > 0)
            .ok_or_else(|| Error::data(format!("invalid dim {raw}"), off as u64))?;
        numel = numel
            .checked_mul(d)
            .filter(|n| n.checked_mul(dtype.size()).is_some())
            .ok_or_else(|| Error::data("dims overflow", off as u64))?;
        shape.push(d);
    }
    let payload_at = HEADER_LEN + 8 * ndim;
    let expected = numel
        .checked_mul(dtype.size())
        .and_then(|p| p.checked_add(payload_at))
        .ok_or_else(|| Error::data("dims overflow", payload_at as u64))?;
    if bytes.len() < expected {
        return Err(Error::data(
            format!("truncated payload: need {expected} bytes, have {}", bytes.len()),
            bytes.len() as u64,
        ));
    }
    if bytes.len() > expected {
        return Err(Error::data(
            format!("{} trailing bytes after payload", bytes.len() - expected),
            expected as u64,
        ));
    }
    Ok(Header {
        dtype,
        shape,
        payload_at,
    })
}

fn payload<T: Scalar>(bytes: &[u8], h: &Header) -> Tensor<T> {
    let sz = T::DTYPE.size();
    let data = bytes[h.payload_at..]
        .chunks_exact(sz)
        .map(T::read_le)
        .collect();
    Tensor::from_parts(h.shape.clone(), data)
}

pub fn decode_any(bytes: &[u8]) -> Result<AnyTensor> {
    let h = parse_header(bytes)?;
    Ok(match h.dtype {
        DType::F32 => AnyTensor::F32(payload(bytes, &h)),
        DType::F64 => AnyTensor::F64(payload(bytes, &h)),
    })
}

/// Decode a container whose dtype must match `T`.
pub fn decode<T: Scalar>(bytes: &[u8]) -> Result<Tensor<T>> {
    let h = parse_header(bytes)?;
    if h.dtype != T::DTYPE {
        return Err(Error::data(
            format!("stored dtype {:?}, requested {:?}", h.dtype, T::DTYPE),
            4,
        ));
    }
    Ok(payload(bytes, &h))
}

pub fn write_tensor<T: Scalar>(path: impl AsRef<Path>, t: &Tensor<T>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode(t)).map_err(|e| Error::io(path, e))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::data(format!("missing tensor file {}", path.display()), 0)
        } else {
            Error::io(path, e)
        }
    })
}

pub fn read_tensor<T: Scalar>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    let path = path.as_ref();
    decode(&read_bytes(path)?).map_err(|e| annotate(e, path))
}

pub fn read_any(path: impl AsRef<Path>) -> Result<AnyTensor> {
    let path = path.as_ref();
    decode_any(&read_bytes(path)?).map_err(|e| annotate(e, path))
}

fn annotate(e: Error, path: &Path) -> Error {
    match e {
        Error::Data { msg, offset } => Error::data(format!("{}: {msg}", path.display()), offset),
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn file_size_follows_layout() {
        let t = Tensor::<f32>::from_fn(&[2, 3, 4], |i| i as f32).unwrap();
        let bytes = encode(&t);
        assert_eq!(bytes.len(), 16 + 8 * 3 + 4 * 24);
        let t64 = t.cast::<f64>();
        assert_eq!(encode(&t64).len(), 16 + 8 * 3 + 8 * 24);
    }

    #[test]
    fn corrupted_magic_is_a_data_error_at_offset_zero() {
        let mut bytes = encode(&Tensor::<f32>::scalar(1.5));
        bytes[0] = b'X';
        assert!(matches!(decode::<f32>(&bytes), Err(Error::Data { offset: 0, .. })));
    }

    #[test]
    fn header_faults_report_their_offsets() {
        let good = encode(&Tensor::<f32>::from_fn(&[3, 2], |i| i as f32).unwrap());

        let mut b = good.clone();
        b[4] = 9;
        assert!(matches!(decode_any(&b), Err(Error::Data { offset: 4, .. })));

        let mut b = good.clone();
        b[8..12].copy_from_slice(&99u32.to_le_bytes());
        assert!(matches!(decode_any(&b), Err(Error::Data { offset: 8, .. })));

        let mut b = good.clone();
        b[24..32].copy_from_slice(&u64::MAX.to_le_bytes());
        assert!(matches!(decode_any(&b), Err(Error::Data { offset: 24, .. })));

        let b = &good[..good.len() - 3];
        assert!(matches!(decode_any(b), Err(Error::Data { .. })));

        let mut b = good.clone();
        b.push(0);
        assert!(matches!(decode_any(&b), Err(Error::Data { .. })));

        assert!(matches!(decode::<f64>(&good), Err(Error::Data { offset: 4, .. })));
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            shape in proptest::collection::vec(1usize..5, 1..5),
            seed in any::<u64>(),
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let t = Tensor::<f32>::from_fn(&shape, |_| f32::from_bits(rng.gen::<u32>() & 0x7f7f_ffff)).unwrap();
            let back = decode::<f32>(&encode(&t)).unwrap();
            prop_assert!(back.bit_eq(&t));
        }
    }
}
