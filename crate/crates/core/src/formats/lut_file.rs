//! Multiplier table files.
//!
//! Headered form: `"AXM1"`, signedness byte (0 unsigned, 1 signed),
//! operand-order byte (0: left operand in the high index byte), ten zero
//! bytes, then 65,536 `u16` entries in index order. The raw form is the
//! entries alone, as exported by circuit tools.

use std::path::Path;

use crate::axmult::{MultLut, LUT_ENTRIES};
use crate::error::{AxError, Result};
use crate::quantizer::Signedness;

use super::{check_magic, read_file, write_file};

pub const LUT_MAGIC: &[u8; 4] = b"AXM1";
pub const LUT_HEADER_LEN: usize = 16;
pub const LUT_RAW_LEN: usize = LUT_ENTRIES * 2;
pub const LUT_FILE_LEN: usize = LUT_HEADER_LEN + LUT_RAW_LEN;

fn raw_entries(lut: &MultLut, out: &mut Vec<u8>) {
    for e in lut.entries() {
        out.extend_from_slice(&e.to_le_bytes());
    }
}

fn parse_entries(mode: Signedness, bytes: &[u8]) -> Result<MultLut> {
    let entries = bytes
        .chunks_exact(2)
        .map(|c| u16::from_le_bytes([c[0], c[1]]))
        .collect();
    MultLut::from_entries(mode, entries)
}

pub fn encode_lut(lut: &MultLut) -> Vec<u8> {
    let mut out = Vec::with_capacity(LUT_FILE_LEN);
    out.extend_from_slice(LUT_MAGIC);
    out.push(match lut.mode() {
        Signedness::Unsigned => 0,
        Signedness::Signed => 1,
    });
    out.push(0);
    out.extend_from_slice(&[0; 10]);
    raw_entries(lut, &mut out);
    out
}

pub fn decode_lut(bytes: &[u8]) -> Result<MultLut> {
    let what = "multiplier table file";
    if bytes.len() != LUT_FILE_LEN {
        return Err(AxError::Size {
            what: what.into(),
            expected: LUT_FILE_LEN as u64,
            actual: bytes.len() as u64,
        });
    }
    check_magic(what, bytes, LUT_MAGIC)?;
    let mode = match bytes[4] {
        0 => Signedness::Unsigned,
        1 => Signedness::Signed,
        b => {
            return Err(AxError::Format {
                what: what.into(),
                reason: format!("unknown signedness byte {b}"),
            })
        }
    };
    if bytes[5] != 0 {
        return Err(AxError::Format {
            what: what.into(),
            reason: format!("unsupported operand order {}", bytes[5]),
        });
    }
    parse_entries(mode, &bytes[LUT_HEADER_LEN..])
}

pub fn save_lut(lut: &MultLut, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &encode_lut(lut))
}

pub fn load_lut(path: impl AsRef<Path>) -> Result<MultLut> {
    decode_lut(&read_file(path.as_ref())?)
}

pub fn save_raw_lut(lut: &MultLut, path: impl AsRef<Path>) -> Result<()> {
    let mut out = Vec::with_capacity(LUT_RAW_LEN);
    raw_entries(lut, &mut out);
    write_file(path.as_ref(), &out)
}

/// Reads a headerless table; the signedness is not recorded in the file.
pub fn load_raw_lut(path: impl AsRef<Path>, mode: Signedness) -> Result<MultLut> {
    let bytes = read_file(path.as_ref())?;
    if bytes.len() != LUT_RAW_LEN {
        return Err(AxError::Size {
            what: "raw multiplier table".into(),
            expected: LUT_RAW_LEN as u64,
            actual: bytes.len() as u64,
        });
    }
    parse_entries(mode, &bytes)
}
