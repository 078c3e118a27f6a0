//! Approximate 2D convolution.
//!
//! Two routes compute the same integers:
//!
//! * [`direct_conv`] walks every output element and every kernel tap, the
//!   way a straightforward emulator would. It is single-threaded and serves
//!   as the reference.
//! * [`axconv2d`] quantizes the filters once, then for each chunk of images
//!   builds a quantized patch matrix ([`im2cols`]) and multiplies it with the
//!   filter matrix through the lookup table ([`approx_gemm`]).
//!
//! With `a`/`f` the input/filter codes, `b1`/`b2` their zero-points and `K`
//! the patch length, each output is
//!
//! ```text
//! out = alpha1 * alpha2 * (sum lut(a, f) - b2 * sum a - b1 * sum f + K * b1 * b2)
//! ```
//!
//! All sums are integers, so the parallel schedule never changes a bit.

mod direct;
mod gemm;
mod im2col;

use serde::{Deserialize, Serialize};

pub use direct::direct_conv;
pub use gemm::{approx_gemm, approx_gemm_profiled, QuantFilters};
pub use im2col::{im2cols, PatchMatrix};

use crate::axmult::MultLut;
use crate::error::{AxError, Result};
use crate::profile::{timed, Phase, PhaseTimes};
use crate::quantizer::{compute_coeffs, QuantParams, RoundMode};
use crate::tensor::{output_shape, ConvGeometry, Layout, Range, Tensor4};

/// Width model of the MAC accumulator that sums lookup-table products.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum Accumulator {
    /// 64-bit, never overflows for patches up to 2^24 taps.
    #[default]
    Exact64,
    /// 32-bit two's-complement, wraps on overflow.
    Wrap32,
    /// 32-bit, clamps at the limits after every addition (in tap order).
    Saturate32,
}

/// Which route evaluates an approximate convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum Engine {
    Direct,
    #[default]
    Gemm,
}

pub const DEFAULT_CHUNK: usize = 64;
/// Upper bound on the bytes of one chunk's patch matrix.
pub const PATCH_BUDGET: usize = 64 << 20;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvConfig {
    pub geometry: ConvGeometry,
    /// Images per chunk.
    pub chunk_size: usize,
    pub accumulator: Accumulator,
    pub round: RoundMode,
    /// Worker threads; `0` uses the global pool.
    pub workers: usize,
    /// Output rows per GEMM tile.
    pub tile_rows: usize,
    /// Output channels per GEMM tile.
    pub tile_cols: usize,
}

impl Default for ConvConfig {
    fn default() -> Self {
        Self {
            geometry: ConvGeometry::default(),
            chunk_size: DEFAULT_CHUNK,
            accumulator: Accumulator::default(),
            round: RoundMode::default(),
            workers: 0,
            tile_rows: 64,
            tile_cols: 64,
        }
    }
}

impl ConvConfig {
    pub fn with_geometry(geometry: ConvGeometry) -> Self {
        Self {
            geometry,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.chunk_size == 0 {
            return Err(AxError::InvalidParams(
                "chunk_size must be at least 1".into(),
            ));
        }
        if self.tile_rows == 0 || self.tile_cols == 0 {
            return Err(AxError::InvalidParams(
                "tile extents must be positive".into(),
            ));
        }
        self.geometry.validate()
    }

    /// Chunk size actually used for images producing `patch_bytes` of patch
    /// matrix each.
    pub fn effective_chunk(&self, patch_bytes: usize) -> usize {
        let cap = (PATCH_BUDGET / patch_bytes.max(1)).max(1);
        self.chunk_size.min(cap)
    }
}

/// Work and time spent in one convolution call.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ConvStats {
    /// Lookup-table multiply-accumulates, `rows * K * Cout` over all chunks.
    pub macs: u64,
    pub chunks: usize,
    pub times: PhaseTimes,
}

/// Everything both routes agree on before touching data.
pub(crate) struct Prepared {
    pub p1: QuantParams,
    pub p2: QuantParams,
    pub out_shape: [usize; 4],
}

pub(crate) fn prepare(
    input: &Tensor4,
    filters: &Tensor4,
    in_range: Range,
    f_range: Range,
    lut: &MultLut,
    cfg: &ConvConfig,
) -> Result<Prepared> {
    cfg.validate()?;
    if input.layout() != Layout::Nhwc {
        return Err(AxError::Shape("convolution input must be NHWC".into()));
    }
    if filters.layout() != Layout::Hwcn {
        return Err(AxError::Shape("convolution filters must be HWCN".into()));
    }
    let out_shape = output_shape(input.shape(), filters.shape(), &cfg.geometry)?;
    let p1 = compute_coeffs(in_range, lut.mode(), cfg.round)?;
    let p2 = compute_coeffs(f_range, lut.mode(), cfg.round)?;
    Ok(Prepared { p1, p2, out_shape })
}

pub(crate) fn check_modes(lut: &MultLut, p1: &QuantParams, p2: &QuantParams) -> Result<()> {
    for p in [p1, p2] {
        p.validate()?;
        if p.mode != lut.mode() {
            return Err(AxError::ModeMismatch {
                lut: lut.mode().name(),
                operands: p.mode.name(),
            });
        }
    }
    Ok(())
}

/// Real output from the integer total of one output element.
#[inline(always)]
pub(crate) fn dequantize_total(scale: f64, total: i64) -> f32 {
    (scale * total as f64) as f32
}

/// Chunked image-to-columns + lookup GEMM convolution.
pub fn axconv2d(
    input: &Tensor4,
    filters: &Tensor4,
    in_range: Range,
    f_range: Range,
    lut: &MultLut,
    cfg: &ConvConfig,
) -> Result<Tensor4> {
    axconv2d_profiled(input, filters, in_range, f_range, lut, cfg).map(|(t, _)| t)
}

pub fn axconv2d_profiled(
    input: &Tensor4,
    filters: &Tensor4,
    in_range: Range,
    f_range: Range,
    lut: &MultLut,
    cfg: &ConvConfig,
) -> Result<(Tensor4, ConvStats)> {
    let Prepared { p1, p2, out_shape } = prepare(input, filters, in_range, f_range, lut, cfg)?;
    let mut stats = ConvStats::default();
    let qf = timed(&mut stats.times, Phase::QuantDequantMinMax, || {
        QuantFilters::from_tensor(filters, &p2)
    })?;

    let [n, oh, ow, cout] = out_shape;
    let per_image = oh * ow * cout;
    let mut out = vec![0f32; n * per_image];
    let chunk = cfg.effective_chunk(oh * ow * qf.k);
    let [_, ih, iw, ic] = input.shape();
    let image_len = ih * iw * ic;

    crate::parallel::with_workers(cfg.workers, || -> Result<()> {
        for (ci, dst) in out.chunks_mut(chunk * per_image).enumerate() {
            let first = ci * chunk;
            let images = dst.len() / per_image.max(1);
            let src = Tensor4::new(
                [images, ih, iw, ic],
                Layout::Nhwc,
                input.data()[first * image_len..(first + images) * image_len].to_vec(),
            )?;
            let mp = timed(&mut stats.times, Phase::Im2ColsGemmOther, || {
                im2cols(&src, &p1, &cfg.geometry, qf.kh, qf.kw)
            })?;
            let macs = approx_gemm_profiled(&mp, &qf, &p1, &p2, lut, cfg, dst, &mut stats.times)?;
            stats.macs += macs;
            stats.chunks += 1;
        }
        Ok(())
    })?;

    Ok((Tensor4::new(out_shape, Layout::Nhwc, out)?, stats))
}

/// Worst-case distance between the float convolution of `input` and
/// `filters` and the exact-multiplier quantized convolution of the same
/// operands, per output element.
///
/// Each operand moves by at most `alpha * s` under quantization (`s` the
/// round mode's largest error in steps), so every product term moves by at
/// most `|x| e2 + |w| e1 + e1 e2`.
pub fn quantization_error_bound(
    input: &Tensor4,
    filters: &Tensor4,
    in_range: Range,
    f_range: Range,
    geometry: &ConvGeometry,
    mode: crate::quantizer::Signedness,
    round: RoundMode,
) -> Result<Tensor4> {
    let p1 = compute_coeffs(in_range, mode, round)?;
    let p2 = compute_coeffs(f_range, mode, round)?;
    let e1 = p1.alpha * round.max_error_steps();
    let e2 = p2.alpha * round.max_error_steps();
    let abs_in = Tensor4::new(
        input.shape(),
        input.layout(),
        input.data().iter().map(|v| v.abs()).collect(),
    )?;
    let abs_f = Tensor4::new(
        filters.shape(),
        filters.layout(),
        filters.data().iter().map(|v| v.abs()).collect(),
    )?;
    let shape = output_shape(input.shape(), filters.shape(), geometry)?;
    let [kh, kw, cin, cout] = filters.shape();
    let [_, ih, iw, _] = input.shape();
    let place = geometry.place(ih, iw, kh, kw)?;
    Tensor4::from_fn(shape, Layout::Nhwc, |[b, oy, ox, co]| {
        let mut acc = 0f64;
        for ky in 0..kh {
            for kx in 0..kw {
                let Some((y, x)) = place.source(oy, ox, ky, kx, ih, iw) else {
                    continue;
                };
                for ci in 0..cin {
                    let a = abs_in.at([b, y, x, ci]) as f64;
                    let w = abs_f.data()[((ky * kw + kx) * cin + ci) * cout + co] as f64;
                    acc += a * e2 + w * e1 + e1 * e2;
                }
            }
        }
        acc as f32
    })
}

#[cfg(test)]
mod tests;
