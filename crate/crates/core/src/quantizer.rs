//! Affine 8-bit quantization `r = alpha * (code - beta)`.

use serde::{Deserialize, Serialize};

use crate::error::{AxError, Result};
use crate::tensor::{Layout, Range, Shape4, Tensor4};

/// Number of representable codes.
pub const LEVELS: u32 = 256;

/// Interpretation of an 8-bit code word (and of the multiplier operands).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Signedness {
    /// Codes in `[0, 255]`.
    Unsigned,
    /// Two's-complement codes in `[-128, 127]`.
    Signed,
}

impl Signedness {
    #[inline]
    pub const fn lo(self) -> i32 {
        match self {
            Signedness::Unsigned => 0,
            Signedness::Signed => -128,
        }
    }

    #[inline]
    pub const fn hi(self) -> i32 {
        match self {
            Signedness::Unsigned => 255,
            Signedness::Signed => 127,
        }
    }

    /// Integer value of a raw code byte.
    #[inline]
    pub const fn value(self, byte: u8) -> i32 {
        match self {
            Signedness::Unsigned => byte as i32,
            Signedness::Signed => byte as i8 as i32,
        }
    }

    /// Raw byte of an in-range integer code.
    #[inline]
    pub const fn byte(self, value: i32) -> u8 {
        value as u8
    }

    pub fn contains(self, value: i32) -> bool {
        (self.lo()..=self.hi()).contains(&value)
    }

    pub fn name(self) -> &'static str {
        match self {
            Signedness::Unsigned => "unsigned",
            Signedness::Signed => "signed",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum RoundMode {
    #[default]
    HalfAwayFromZero,
    HalfToEven,
    TowardZero,
}

/// Largest distance from an integer that `TowardZero` still treats as that
/// integer. A code dequantized to `f32` and quantized again lands within
/// about `255 * 2^-24` steps of its integer, so plain truncation would lose
/// a step for every positive code whose `f32` image rounded down.
const TRUNC_SNAP: f64 = 1.0 / 4096.0;

impl RoundMode {
    pub const ALL: [RoundMode; 3] = [
        RoundMode::HalfAwayFromZero,
        RoundMode::HalfToEven,
        RoundMode::TowardZero,
    ];

    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            RoundMode::HalfAwayFromZero => x.round(),
            RoundMode::HalfToEven => x.round_ties_even(),
            RoundMode::TowardZero => {
                let nearest = x.round();
                if (x - nearest).abs() <= TRUNC_SNAP {
                    nearest
                } else {
                    x.trunc()
                }
            }
        }
    }

    /// Largest `|round(x) - x|` this mode can produce, in steps.
    pub fn max_error_steps(self) -> f64 {
        match self {
            RoundMode::HalfAwayFromZero | RoundMode::HalfToEven => 0.5,
            RoundMode::TowardZero => 1.0,
        }
    }
}

/// Scale, zero-point and code interpretation of one quantized operand.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantParams {
    pub alpha: f64,
    pub beta: i32,
    pub mode: Signedness,
    pub round: RoundMode,
}

impl QuantParams {
    pub fn new(alpha: f64, beta: i32, mode: Signedness, round: RoundMode) -> Result<Self> {
        let p = Self {
            alpha,
            beta,
            mode,
            round,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(AxError::InvalidParams(format!(
                "scale {} must be positive",
                self.alpha
            )));
        }
        if !self.mode.contains(self.beta) {
            return Err(AxError::InvalidParams(format!(
                "zero-point {} outside {} range",
                self.beta,
                self.mode.name()
            )));
        }
        Ok(())
    }

    /// Integer code of a finite real.
    #[inline]
    pub fn quantize_value(&self, r: f64) -> i32 {
        let q = self.round.apply(r / self.alpha) + self.beta as f64;
        q.clamp(self.mode.lo() as f64, self.mode.hi() as f64) as i32
    }

    #[inline]
    pub fn quantize_byte(&self, r: f32) -> u8 {
        self.mode.byte(self.quantize_value(r as f64))
    }

    #[inline]
    pub fn dequantize_value(&self, code: i32) -> f64 {
        self.alpha * (code - self.beta) as f64
    }
}

/// Scale and zero-point for values in `range`.
///
/// The range is first widened to contain zero; the zero-point is the rounded
/// and clamped code of real zero, which makes `0.0` exactly representable.
pub fn compute_coeffs(range: Range, mode: Signedness, round: RoundMode) -> Result<QuantParams> {
    let range = Range::new(range.min, range.max)?.with_zero();
    let alpha = if range.max == range.min {
        1.0
    } else {
        (range.max - range.min) / (LEVELS - 1) as f64
    };
    let lo = mode.lo() as f64;
    let beta = round
        .apply(lo - range.min / alpha)
        .clamp(lo, mode.hi() as f64) as i32;
    QuantParams::new(alpha, beta, mode, round)
}

/// Tensor of raw 8-bit code words plus the parameters that give them meaning.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantTensor {
    pub shape: Shape4,
    pub layout: Layout,
    pub data: Vec<u8>,
    pub params: QuantParams,
}

impl QuantTensor {
    pub fn value(&self, offset: usize) -> i32 {
        self.params.mode.value(self.data[offset])
    }
}

pub fn quantize(t: &Tensor4, p: &QuantParams) -> Result<QuantTensor> {
    p.validate()?;
    let data = t
        .data()
        .iter()
        .enumerate()
        .map(|(offset, &v)| {
            if v.is_finite() {
                Ok(p.quantize_byte(v))
            } else {
                Err(AxError::NonFinite {
                    value: v as f64,
                    offset,
                })
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(QuantTensor {
        shape: t.shape(),
        layout: t.layout(),
        data,
        params: *p,
    })
}

pub fn dequantize(q: &QuantTensor) -> Result<Tensor4> {
    let p = &q.params;
    let data = q
        .data
        .iter()
        .map(|&b| p.dequantize_value(p.mode.value(b)) as f32)
        .collect();
    Tensor4::new(q.shape, q.layout, data)
}
