//! CIFAR-10 binary batches: records of one label byte followed by a
//! 32×32 red plane, green plane and blue plane.

use std::path::Path;

use crate::error::{AxError, Result};
use crate::tensor::{Layout, Tensor4};

use super::{read_file, write_file};

pub const CIFAR_SIDE: usize = 32;
pub const CIFAR_PLANE: usize = CIFAR_SIDE * CIFAR_SIDE;
pub const CIFAR_RECORD: usize = 1 + 3 * CIFAR_PLANE;
pub const CIFAR_MAX_RECORDS: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct Cifar10Batch {
    /// `(n, 32, 32, 3)` with values in `[0, 1]`.
    pub images: Tensor4,
    pub labels: Vec<u8>,
}

impl Cifar10Batch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Records `start..end`.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        Ok(Self {
            images: self.images.batch_slice(start, end)?,
            labels: self.labels[start..end].to_vec(),
        })
    }
}

pub fn decode_cifar10(bytes: &[u8]) -> Result<Cifar10Batch> {
    if !bytes.len().is_multiple_of(CIFAR_RECORD) {
        let n = bytes.len() / CIFAR_RECORD + 1;
        return Err(AxError::Size {
            what: "CIFAR-10 batch (truncated record)".into(),
            expected: (n * CIFAR_RECORD) as u64,
            actual: bytes.len() as u64,
        });
    }
    let n = bytes.len() / CIFAR_RECORD;
    if n > CIFAR_MAX_RECORDS {
        return Err(AxError::Size {
            what: format!("CIFAR-10 batch of at most {CIFAR_MAX_RECORDS} records"),
            expected: (CIFAR_MAX_RECORDS * CIFAR_RECORD) as u64,
            actual: bytes.len() as u64,
        });
    }
    let mut labels = Vec::with_capacity(n);
    let mut data = Vec::with_capacity(n * 3 * CIFAR_PLANE);
    for rec in bytes.chunks_exact(CIFAR_RECORD) {
        if rec[0] > 9 {
            return Err(AxError::Format {
                what: "CIFAR-10 batch".into(),
                reason: format!("label {} out of range", rec[0]),
            });
        }
        labels.push(rec[0]);
        let planes = &rec[1..];
        for p in 0..CIFAR_PLANE {
            for c in 0..3 {
                data.push(planes[c * CIFAR_PLANE + p] as f32 / 255.0);
            }
        }
    }
    Ok(Cifar10Batch {
        images: Tensor4::new([n, CIFAR_SIDE, CIFAR_SIDE, 3], Layout::Nhwc, data)?,
        labels,
    })
}

pub fn load_cifar10(path: impl AsRef<Path>) -> Result<Cifar10Batch> {
    decode_cifar10(&read_file(path.as_ref())?)
}

/// Inverse of [`decode_cifar10`]; pixel values are rounded to bytes.
pub fn encode_cifar10(batch: &Cifar10Batch) -> Result<Vec<u8>> {
    let [n, h, w, c] = batch.images.shape();
    if [h, w, c] != [CIFAR_SIDE, CIFAR_SIDE, 3] || n != batch.labels.len() {
        return Err(AxError::Shape(format!(
            "{:?} images with {} labels are not a CIFAR-10 batch",
            batch.images.shape(),
            batch.labels.len()
        )));
    }
    let mut out = Vec::with_capacity(n * CIFAR_RECORD);
    let px = batch.images.data();
    for (i, &label) in batch.labels.iter().enumerate() {
        out.push(label);
        let img = &px[i * 3 * CIFAR_PLANE..(i + 1) * 3 * CIFAR_PLANE];
        for ch in 0..3 {
            out.extend(
                (0..CIFAR_PLANE).map(|p| (img[p * 3 + ch].clamp(0.0, 1.0) * 255.0).round() as u8),
            );
        }
    }
    Ok(out)
}

pub fn save_cifar10(batch: &Cifar10Batch, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &encode_cifar10(batch)?)
}
