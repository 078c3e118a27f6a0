//! Raw tensor file: `"AXT1"`, layout byte (0 = NHWC, 1 = HWCN), three zero
//! bytes, four `u32` extents, then the `f32` values in layout order.

use std::path::Path;

use crate::error::{AxError, Result};
use crate::tensor::{Layout, Tensor4};

use super::{check_magic, read_file, write_file};

pub const TENSOR_MAGIC: &[u8; 4] = b"AXT1";
pub const TENSOR_HEADER_LEN: usize = 24;

pub fn encode_tensor(t: &Tensor4) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(TENSOR_HEADER_LEN + 4 * t.len());
    out.extend_from_slice(TENSOR_MAGIC);
    out.extend_from_slice(&[t.layout().to_byte(), 0, 0, 0]);
    for e in t.shape() {
        let e = u32::try_from(e)
            .map_err(|_| AxError::Shape(format!("extent {e} does not fit the tensor header")))?;
        out.extend_from_slice(&e.to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor4> {
    let what = "tensor file";
    if bytes.len() < TENSOR_HEADER_LEN {
        return Err(AxError::Size {
            what: format!("{what} header"),
            expected: TENSOR_HEADER_LEN as u64,
            actual: bytes.len() as u64,
        });
    }
    check_magic(what, bytes, TENSOR_MAGIC)?;
    let layout = Layout::from_byte(bytes[4]).ok_or_else(|| AxError::Format {
        what: what.into(),
        reason: format!("unknown layout byte {}", bytes[4]),
    })?;
    let mut shape = [0usize; 4];
    for (i, e) in shape.iter_mut().enumerate() {
        let o = 8 + 4 * i;
        *e = u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
    }
    let count = shape
        .iter()
        .try_fold(1u64, |a, &e| a.checked_mul(e as u64))
        .unwrap_or(u64::MAX);
    let expected = count
        .saturating_mul(4)
        .saturating_add(TENSOR_HEADER_LEN as u64);
    if bytes.len() as u64 != expected {
        return Err(AxError::Size {
            what: format!("{what} with extents {shape:?}"),
            expected,
            actual: bytes.len() as u64,
        });
    }
    let data = bytes[TENSOR_HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Tensor4::new(shape, layout, data)
}

pub fn save_tensor(t: &Tensor4, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &encode_tensor(t)?)
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<Tensor4> {
    decode_tensor(&read_file(path.as_ref())?)
}
