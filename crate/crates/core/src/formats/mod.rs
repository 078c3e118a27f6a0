//! Everything that touches disk. All multi-byte values are little-endian.

mod cifar;
mod lut_file;
mod model_file;
mod report;
mod tensor_file;

pub use cifar::{
    decode_cifar10, encode_cifar10, load_cifar10, save_cifar10, Cifar10Batch, CIFAR_RECORD,
};
pub use lut_file::{
    decode_lut, encode_lut, load_lut, load_raw_lut, save_lut, save_raw_lut, LUT_FILE_LEN,
    LUT_HEADER_LEN, LUT_RAW_LEN,
};
pub use model_file::{load_model, load_model_with, save_model, LutResolver, MODEL_FORMAT};
pub use report::{LayerTiming, PhaseShare, RunReport};
pub use tensor_file::{decode_tensor, encode_tensor, load_tensor, save_tensor, TENSOR_HEADER_LEN};

use std::path::Path;

use crate::error::{AxError, Result};

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| {
        AxError::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| {
        AxError::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })
}

fn check_magic(what: &str, bytes: &[u8], expected: &[u8; 4]) -> Result<()> {
    let mut found = [0u8; 4];
    found.copy_from_slice(&bytes[..4]);
    if &found != expected {
        return Err(AxError::Magic {
            what: what.into(),
            expected: *expected,
            found,
        });
    }
    Ok(())
}
