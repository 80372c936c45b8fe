//! The `.wdt` tensor file format.
//!
//! ```text
//! "WDT1" | dtype: u8 (0 = f32) | ndim: u8 | dims: ndim x u32 LE | payload: f32 LE, row-major
//! ```
//!
//! The payload must be exactly `product(dims) * 4` bytes; trailing bytes are
//! rejected.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"WDT1";
pub const DTYPE_F32: u8 = 0;

fn malformed(reason: impl Into<String>) -> Error {
    Error::Format {
        kind: "wdt",
        reason: reason.into(),
    }
}

pub fn to_bytes(t: &Tensor) -> Result<Vec<u8>> {
    let shape = t.shape();
    if shape.len() > u8::MAX as usize {
        return Err(malformed("too many dimensions"));
    }
    let mut out = Vec::with_capacity(6 + 4 * shape.len() + 4 * t.len());
    out.extend_from_slice(MAGIC);
    out.push(DTYPE_F32);
    out.push(shape.len() as u8);
    for &d in shape {
        let d = u32::try_from(d).map_err(|_| malformed("dimension exceeds u32"))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn from_bytes(bytes: &[u8]) -> Result<Tensor> {
    if bytes.len() < 6 {
        return Err(malformed("truncated header"));
    }
    if &bytes[..4] != MAGIC {
        return Err(malformed(format!("bad magic {:?}", &bytes[..4])));
    }
    if bytes[4] != DTYPE_F32 {
        return Err(malformed(format!("unsupported dtype {}", bytes[4])));
    }
    let ndim = bytes[5] as usize;
    let header = 6 + 4 * ndim;
    if bytes.len() < header {
        return Err(malformed("truncated dims"));
    }
    let dims: Vec<usize> = bytes[6..header]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect();
    let n = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| malformed("element count overflows"))?;
    let payload = &bytes[header..];
    if Some(payload.len()) != n.checked_mul(4) {
        return Err(malformed(format!(
            "payload is {} bytes, dims {dims:?} need {}",
            payload.len(),
            n.saturating_mul(4)
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Tensor::new(dims, data)
}

pub fn write(path: &Path, t: &Tensor) -> Result<()> {
    fs::write(path, to_bytes(t)?).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let t = Tensor::new(vec![1, 2], vec![1.0, -2.5]).unwrap();
        let b = to_bytes(&t).unwrap();
        assert_eq!(&b[..4], b"WDT1");
        assert_eq!(b[4], 0);
        assert_eq!(b[5], 2);
        assert_eq!(&b[6..10], &1u32.to_le_bytes());
        assert_eq!(&b[10..14], &2u32.to_le_bytes());
        assert_eq!(&b[14..18], &1.0f32.to_le_bytes());
        assert_eq!(b.len(), 22);
    }

    #[test]
    fn rejects_malformed() {
        let t = Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
        let good = to_bytes(&t).unwrap();
        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        assert!(matches!(from_bytes(&bad_magic), Err(Error::Format { .. })));
        assert!(from_bytes(&good[..good.len() - 1]).is_err());
        let mut trailing = good.clone();
        trailing.push(0);
        assert!(from_bytes(&trailing).is_err());
        let mut dtype = good;
        dtype[4] = 7;
        assert!(from_bytes(&dtype).is_err());
        assert!(from_bytes(b"WD").is_err());
    }

    proptest! {
        #[test]
        fn round_trip_bit_exact(dims in proptest::collection::vec(1usize..5, 0..4), seed in any::<u32>()) {
            let n: usize = dims.iter().product();
            let data: Vec<f32> = (0..n).map(|i| f32::from_bits(seed.wrapping_mul(2654435761).wrapping_add(i as u32 * 97))).collect();
            let t = Tensor::new(dims, data).unwrap();
            let back = from_bytes(&to_bytes(&t).unwrap()).unwrap();
            prop_assert_eq!(back.shape(), t.shape());
            let same = back.data().iter().zip(t.data()).all(|(a, b)| a.to_bits() == b.to_bits());
            prop_assert!(same);
        }
    }
}
