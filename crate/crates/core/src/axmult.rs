//! Truth-table model of an 8×8→16-bit (approximate) multiplier.

use crate::error::{AxError, Result};
use crate::quantizer::Signedness;

/// Number of operand pairs, and of table entries.
pub const LUT_ENTRIES: usize = 1 << 16;

/// Index of the product of `a` and `b`: the raw byte of `a` is the high byte.
#[inline(always)]
pub const fn stitch_index(a: u8, b: u8) -> u16 {
    ((a as u16) << 8) | b as u16
}

/// A 256×256 table of 16-bit products indexed by [`stitch_index`].
///
/// Entries are kept verbatim; `values` holds them widened to `i32` according
/// to the table's signedness, which is what the convolution kernels read.
#[derive(Clone, PartialEq, Eq)]
pub struct MultLut {
    mode: Signedness,
    entries: Box<[u16]>,
    values: Box<[i32]>,
}

impl std::fmt::Debug for MultLut {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MultLut")
            .field("mode", &self.mode)
            .field("entries", &self.entries.len())
            .finish()
    }
}

fn widen(mode: Signedness, e: u16) -> i32 {
    match mode {
        Signedness::Unsigned => e as i32,
        Signedness::Signed => e as i16 as i32,
    }
}

impl MultLut {
    pub fn from_entries(mode: Signedness, entries: Vec<u16>) -> Result<Self> {
        if entries.len() != LUT_ENTRIES {
            return Err(AxError::Size {
                what: "multiplier table".into(),
                expected: (LUT_ENTRIES * 2) as u64,
                actual: (entries.len() * 2) as u64,
            });
        }
        let values = entries.iter().map(|&e| widen(mode, e)).collect();
        Ok(Self {
            mode,
            entries: entries.into_boxed_slice(),
            values,
        })
    }

    /// Table whose entry for every operand pair is `f(a, b)` (operands given
    /// as integers per `mode`), truncated to 16 bits.
    pub fn from_fn(mode: Signedness, mut f: impl FnMut(i32, i32) -> i32) -> Self {
        let entries = (0..LUT_ENTRIES)
            .map(|i| {
                let (a, b) = ((i >> 8) as u8, i as u8);
                f(mode.value(a), mode.value(b)) as u16
            })
            .collect();
        Self::from_entries(mode, entries).expect("full table")
    }

    pub fn mode(&self) -> Signedness {
        self.mode
    }

    pub fn entries(&self) -> &[u16] {
        &self.entries
    }

    /// Entries widened per mode, indexed by [`stitch_index`].
    #[inline]
    pub fn values(&self) -> &[i32] {
        &self.values
    }

    /// The 256 products with `a` as left operand.
    #[inline]
    pub fn row(&self, a: u8) -> &[i32] {
        let start = (a as usize) << 8;
        &self.values[start..start + 256]
    }

    /// Product of two raw operand bytes.
    #[inline]
    pub fn lookup(&self, a: u8, b: u8) -> i32 {
        self.values[stitch_index(a, b) as usize]
    }

    /// Product of two integer operands in this table's range.
    pub fn multiply(&self, a: i32, b: i32) -> i32 {
        self.lookup(self.mode.byte(a), self.mode.byte(b))
    }
}

pub fn exact_lut(mode: Signedness) -> MultLut {
    MultLut::from_fn(mode, |a, b| a * b)
}

/// Multiplier that zeroes the `drop_bits` low bits of each operand's
/// magnitude before multiplying exactly.
pub fn truncated_lut(mode: Signedness, drop_bits: u32) -> Result<MultLut> {
    if drop_bits > 7 {
        return Err(AxError::InvalidParams(format!(
            "drop_bits {drop_bits} exceeds 7"
        )));
    }
    let mask = !((1i32 << drop_bits) - 1);
    let cut = |v: i32| v.signum() * (v.abs() & mask);
    Ok(MultLut::from_fn(mode, |a, b| cut(a) * cut(b)))
}

/// Table of arbitrary 16-bit entries, for stress tests.
pub fn random_lut(mode: Signedness, rng: &mut impl rand::Rng) -> MultLut {
    let entries = (0..LUT_ENTRIES).map(|_| rng.gen()).collect();
    MultLut::from_entries(mode, entries).expect("full table")
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LutErrorStats {
    pub max_abs_error: i64,
    pub mean_abs_error: f64,
    /// Mean of `|error| / |exact|` over pairs whose exact product is nonzero.
    pub mean_rel_error: f64,
    /// Number of entries that differ from the exact product.
    pub error_count: u64,
}

pub fn error_stats(lut: &MultLut) -> LutErrorStats {
    let mode = lut.mode();
    let mut stats = LutErrorStats::default();
    let mut abs_sum = 0i64;
    let mut rel_sum = 0f64;
    let mut rel_n = 0u64;
    for a in 0..=255u8 {
        for b in 0..=255u8 {
            let exact = mode.value(a) as i64 * mode.value(b) as i64;
            let err = (lut.lookup(a, b) as i64 - exact).abs();
            if err != 0 {
                stats.error_count += 1;
            }
            stats.max_abs_error = stats.max_abs_error.max(err);
            abs_sum += err;
            if exact != 0 {
                rel_sum += err as f64 / exact.abs() as f64;
                rel_n += 1;
            }
        }
    }
    stats.mean_abs_error = abs_sum as f64 / LUT_ENTRIES as f64;
    stats.mean_rel_error = if rel_n == 0 {
        0.0
    } else {
        rel_sum / rel_n as f64
    };
    stats
}
