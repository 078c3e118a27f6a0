//! Browser front end: multiplier error maps, the quantizer transfer curve,
//! and an approximate convolution of an image.
//!
//! The `*_impl` functions hold the logic and are what the native tests
//! call; the exported wrappers only convert errors for JavaScript.

use axemu::{
    axconv2d, compute_coeffs, error_stats, tensor_min_max, truncated_lut, ConvConfig, ConvGeometry,
    Layout, MultLut, Padding, QuantParams, Range, Result, RoundMode, Signedness, Tensor4,
};
use wasm_bindgen::prelude::*;

fn mode(signed: bool) -> Signedness {
    if signed {
        Signedness::Signed
    } else {
        Signedness::Unsigned
    }
}

fn round_mode(name: &str) -> RoundMode {
    match name {
        "half-even" => RoundMode::HalfToEven,
        "toward-zero" => RoundMode::TowardZero,
        _ => RoundMode::HalfAwayFromZero,
    }
}

fn table(drop_bits: u32, signed: bool) -> Result<MultLut> {
    truncated_lut(mode(signed), drop_bits)
}

/// 256×256 RGBA image of `|lut(a, b) - a·b|`, `a` down and `b` across,
/// in operand-value order; black is exact.
pub fn error_map_impl(drop_bits: u32, signed: bool) -> Result<Vec<u8>> {
    let lut = table(drop_bits, signed)?;
    let m = lut.mode();
    let worst = error_stats(&lut).max_abs_error.max(1) as f64;
    let mut rgba = Vec::with_capacity(256 * 256 * 4);
    for a in m.lo()..=m.hi() {
        for b in m.lo()..=m.hi() {
            let err = (lut.multiply(a, b) as i64 - a as i64 * b as i64).abs() as f64;
            let t = (err / worst).sqrt();
            rgba.extend_from_slice(&[
                (255.0 * t) as u8,
                (160.0 * t * (1.0 - t)) as u8,
                (255.0 * (1.0 - t) * t) as u8,
                255,
            ]);
        }
    }
    Ok(rgba)
}

/// Error statistics of a truncated multiplier as `key=value` lines.
pub fn error_summary_impl(drop_bits: u32, signed: bool) -> Result<String> {
    let s = error_stats(&table(drop_bits, signed)?);
    Ok(format!(
        "max_abs_error={}\nmean_abs_error={:.3}\nmean_rel_error={:.5}\nerror_count={}",
        s.max_abs_error, s.mean_abs_error, s.mean_rel_error, s.error_count
    ))
}

/// `samples` points `(r, dequantize(quantize(r)))` for `r` sweeping
/// `[min, max]`, flattened as `[r0, q0, r1, q1, …]`.
pub fn quantize_curve_impl(
    min: f64,
    max: f64,
    signed: bool,
    round: &str,
    samples: usize,
) -> Result<Vec<f32>> {
    let p: QuantParams = compute_coeffs(Range::new(min, max)?, mode(signed), round_mode(round))?;
    let n = samples.max(2);
    let mut out = Vec::with_capacity(2 * n);
    for i in 0..n {
        let r = min + (max - min) * i as f64 / (n - 1) as f64;
        out.push(r as f32);
        out.push(p.dequantize_value(p.quantize_value(r as f32 as f64)) as f32);
    }
    Ok(out)
}

fn kernel(name: &str) -> [f32; 9] {
    match name {
        "blur" => [
            1.0 / 16.0,
            2.0 / 16.0,
            1.0 / 16.0,
            2.0 / 16.0,
            4.0 / 16.0,
            2.0 / 16.0,
            1.0 / 16.0,
            2.0 / 16.0,
            1.0 / 16.0,
        ],
        "sharpen" => [0.0, -1.0, 0.0, -1.0, 5.0, -1.0, 0.0, -1.0, 0.0],
        _ => [-1.0, -1.0, -1.0, -1.0, 8.0, -1.0, -1.0, -1.0, -1.0],
    }
}

/// Convolves the luminance of an RGBA image with a named 3×3 kernel
/// through a truncated multiplier, returning an RGBA image of the result
/// stretched to `[0, 255]`.
pub fn convolve_image_impl(
    rgba: &[u8],
    width: usize,
    height: usize,
    kernel_name: &str,
    drop_bits: u32,
) -> Result<Vec<u8>> {
    if rgba.len() != width * height * 4 {
        return Err(axemu::AxError::Shape(format!(
            "{width}×{height} RGBA needs {} bytes, got {}",
            width * height * 4,
            rgba.len()
        )));
    }
    let luma: Vec<f32> = rgba
        .chunks_exact(4)
        .map(|p| (0.299 * p[0] as f32 + 0.587 * p[1] as f32 + 0.114 * p[2] as f32) / 255.0)
        .collect();
    let input = Tensor4::new([1, height, width, 1], Layout::Nhwc, luma)?;
    let filters = Tensor4::new([3, 3, 1, 1], Layout::Hwcn, kernel(kernel_name).to_vec())?;
    let lut = table(drop_bits, false)?;
    let cfg = ConvConfig::with_geometry(ConvGeometry::new((1, 1), (1, 1), Padding::Same));
    let out = axconv2d(
        &input,
        &filters,
        tensor_min_max(&input)?,
        tensor_min_max(&filters)?,
        &lut,
        &cfg,
    )?;
    let r = tensor_min_max(&out)?;
    let span = (r.max - r.min).max(1e-12);
    Ok(out
        .data()
        .iter()
        .flat_map(|&v| {
            let g = (255.0 * (v as f64 - r.min) / span).round() as u8;
            [g, g, g, 255]
        })
        .collect())
}

fn js(e: axemu::AxError) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
pub fn error_map(drop_bits: u32, signed: bool) -> std::result::Result<Vec<u8>, JsError> {
    error_map_impl(drop_bits, signed).map_err(js)
}

#[wasm_bindgen]
pub fn error_summary(drop_bits: u32, signed: bool) -> std::result::Result<String, JsError> {
    error_summary_impl(drop_bits, signed).map_err(js)
}

#[wasm_bindgen]
pub fn quantize_curve(
    min: f64,
    max: f64,
    signed: bool,
    round: &str,
    samples: usize,
) -> std::result::Result<Vec<f32>, JsError> {
    quantize_curve_impl(min, max, signed, round, samples).map_err(js)
}

#[wasm_bindgen]
pub fn convolve_image(
    rgba: &[u8],
    width: usize,
    height: usize,
    kernel_name: &str,
    drop_bits: u32,
) -> std::result::Result<Vec<u8>, JsError> {
    convolve_image_impl(rgba, width, height, kernel_name, drop_bits).map_err(js)
}
