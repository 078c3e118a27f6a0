use crate::axmult::MultLut;
use crate::error::Result;
use crate::quantizer::quantize;
use crate::tensor::{Layout, Range, Tensor4};

use super::{dequantize_total, prepare, Accumulator, ConvConfig, Prepared};

/// Reference convolution: nested loops over outputs and kernel taps.
///
/// Every tap contributes `lut(a, f) - b2*a - b1*f + b1*b2` with padding taps
/// reading the input zero-point. The lookup products go through the
/// configured accumulator model; the zero-point terms are summed exactly.
/// Ignores `cfg.workers`.
pub fn direct_conv(
    input: &Tensor4,
    filters: &Tensor4,
    in_range: Range,
    f_range: Range,
    lut: &MultLut,
    cfg: &ConvConfig,
) -> Result<Tensor4> {
    let Prepared { p1, p2, out_shape } = prepare(input, filters, in_range, f_range, lut, cfg)?;
    let qi = quantize(input, &p1)?;
    let qw = quantize(filters, &p2)?;
    let mode = lut.mode();
    let [_, ih, iw, cin] = input.shape();
    let [kh, kw, _, cout] = filters.shape();
    let place = cfg.geometry.place(ih, iw, kh, kw)?;
    let (b1, b2) = (p1.beta as i64, p2.beta as i64);
    let pad_code = mode.byte(p1.beta);
    let scale = p1.alpha * p2.alpha;

    Tensor4::from_fn(out_shape, Layout::Nhwc, |[n, oy, ox, co]| {
        let mut products = 0i64;
        let mut wide32 = 0i32;
        let mut correction = 0i64;
        for ky in 0..kh {
            for kx in 0..kw {
                let src = place.source(oy, ox, ky, kx, ih, iw);
                for ci in 0..cin {
                    let a = match src {
                        Some((y, x)) => qi.data[((n * ih + y) * iw + x) * cin + ci],
                        None => pad_code,
                    };
                    let f = qw.data[((ky * kw + kx) * cin + ci) * cout + co];
                    let prod = lut.lookup(a, f);
                    match cfg.accumulator {
                        Accumulator::Exact64 => products += prod as i64,
                        Accumulator::Wrap32 => wide32 = wide32.wrapping_add(prod),
                        Accumulator::Saturate32 => wide32 = wide32.saturating_add(prod),
                    }
                    let (av, fv) = (mode.value(a) as i64, mode.value(f) as i64);
                    correction += -b2 * av - b1 * fv + b1 * b2;
                }
            }
        }
        if cfg.accumulator != Accumulator::Exact64 {
            products = wide32 as i64;
        }
        dequantize_total(scale, products + correction)
    })
}
