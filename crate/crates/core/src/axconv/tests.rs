use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::axmult::{exact_lut, random_lut, truncated_lut};
use crate::quantizer::{dequantize, quantize, Signedness};
use crate::tensor::{tensor_min_max, Padding};

fn random_tensor(
    rng: &mut impl Rng,
    shape: [usize; 4],
    layout: Layout,
    lo: f32,
    hi: f32,
) -> Tensor4 {
    let n = shape.iter().product();
    Tensor4::new(
        shape,
        layout,
        (0..n).map(|_| rng.gen_range(lo..hi)).collect(),
    )
    .unwrap()
}

/// Plain float64 convolution, independent of every quantized path.
fn float_conv(input: &Tensor4, filters: &Tensor4, g: &ConvGeometry) -> Vec<f64> {
    let [n, ih, iw, cin] = input.shape();
    let [kh, kw, _, cout] = filters.shape();
    let [_, oh, ow, _] = output_shape(input.shape(), filters.shape(), g).unwrap();
    let p = g.place(ih, iw, kh, kw).unwrap();
    let mut out = Vec::with_capacity(n * oh * ow * cout);
    for b in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                for co in 0..cout {
                    let mut acc = 0f64;
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let y = (oy * p.stride_h + ky * p.dil_h) as isize - p.pad_top as isize;
                            let x = (ox * p.stride_w + kx * p.dil_w) as isize - p.pad_left as isize;
                            if y < 0 || x < 0 || y >= ih as isize || x >= iw as isize {
                                continue;
                            }
                            for ci in 0..cin {
                                acc += input.at([b, y as usize, x as usize, ci]) as f64
                                    * filters.at([ky, kx, ci, co]) as f64;
                            }
                        }
                    }
                    out.push(acc);
                }
            }
        }
    }
    out
}

fn fake_quant(t: &Tensor4, range: Range, mode: Signedness, round: RoundMode) -> Tensor4 {
    let p = compute_coeffs(range, mode, round).unwrap();
    dequantize(&quantize(t, &p).unwrap()).unwrap()
}

#[test]
fn single_tap_close_to_product() {
    let lut = exact_lut(Signedness::Unsigned);
    for (v, w) in [(0.7f32, 0.3f32), (1.9, 0.05), (0.013, 2.5)] {
        let input = Tensor4::new([1, 1, 1, 1], Layout::Nhwc, vec![v]).unwrap();
        let filt = Tensor4::new([1, 1, 1, 1], Layout::Hwcn, vec![w]).unwrap();
        let (ri, rf) = (Range::new(0.0, 2.0).unwrap(), Range::new(0.0, 2.5).unwrap());
        let out = direct_conv(&input, &filt, ri, rf, &lut, &ConvConfig::default()).unwrap();
        let (a1, a2) = (2.0 / 255.0, 2.5 / 255.0);
        let bound = a1 / 2.0 * w as f64 + a2 / 2.0 * v as f64 + a1 * a2 / 4.0;
        assert!((out.data()[0] as f64 - (v * w) as f64).abs() <= bound + 1e-7);
    }
}

#[test]
fn zero_input_hand_evaluated() {
    // Input range [-1, 1] signed gives b1 = -1 under the default rounding; the
    // whole 1x2x2x1 input sits on that code.
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let lut = random_lut(Signedness::Signed, &mut rng);
    let input = Tensor4::zeros([1, 2, 2, 1], Layout::Nhwc).unwrap();
    let filt = Tensor4::new([2, 2, 1, 1], Layout::Hwcn, vec![0.5, -0.25, 1.0, -1.0]).unwrap();
    let (ri, rf) = (
        Range::new(-1.0, 1.0).unwrap(),
        Range::new(-1.0, 1.0).unwrap(),
    );
    let out = direct_conv(&input, &filt, ri, rf, &lut, &ConvConfig::default()).unwrap();

    let p1 = compute_coeffs(ri, Signedness::Signed, RoundMode::default()).unwrap();
    let p2 = compute_coeffs(rf, Signedness::Signed, RoundMode::default()).unwrap();
    assert_eq!(p1.beta, -1);
    let mut total = 0i64;
    for &w in filt.data() {
        let f = p2.quantize_value(w as f64);
        let prod = lut.multiply(p1.beta, f) as i64;
        total += prod - p2.beta as i64 * p1.beta as i64 - p1.beta as i64 * f as i64
            + p1.beta as i64 * p2.beta as i64;
    }
    let expected = (p1.alpha * p2.alpha * total as f64) as f32;
    assert_eq!(out.data(), &[expected]);
    let gemm = axconv2d(&input, &filt, ri, rf, &lut, &ConvConfig::default()).unwrap();
    assert_eq!(gemm.data(), &[expected]);
}

#[test]
fn exact_lut_matches_float_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for mode in [Signedness::Unsigned, Signedness::Signed] {
        let lut = exact_lut(mode);
        let input = random_tensor(&mut rng, [1, 5, 5, 2], Layout::Nhwc, -1.0, 3.0);
        let filt = random_tensor(&mut rng, [3, 3, 2, 3], Layout::Hwcn, -0.5, 0.5);
        let (ri, rf) = (
            tensor_min_max(&input).unwrap(),
            tensor_min_max(&filt).unwrap(),
        );
        let cfg = ConvConfig::default();
        let out = direct_conv(&input, &filt, ri, rf, &lut, &cfg).unwrap();
        let reference = float_conv(
            &fake_quant(&input, ri, mode, cfg.round),
            &fake_quant(&filt, rf, mode, cfg.round),
            &cfg.geometry,
        );
        let scale = reference.iter().fold(0f64, |m, v| m.max(v.abs()));
        for (o, r) in out.data().iter().zip(&reference) {
            assert!((*o as f64 - r).abs() <= 1e-3 * scale, "{o} vs {r}");
        }
    }
}

#[test]
fn im2cols_single_patch() {
    let input = Tensor4::new(
        [1, 3, 3, 1],
        Layout::Nhwc,
        (1..=9).map(|v| v as f32).collect(),
    )
    .unwrap();
    let p = compute_coeffs(
        Range::new(1.0, 9.0).unwrap(),
        Signedness::Unsigned,
        RoundMode::default(),
    )
    .unwrap();
    let mp = im2cols(&input, &p, &ConvGeometry::default(), 3, 3).unwrap();
    assert_eq!((mp.rows, mp.cols), (1, 9));
    let sum: i32 = mp.codes.iter().map(|&b| b as i32).sum();
    assert_eq!(mp.patch_sums, vec![sum]);
    assert_eq!(mp.codes[8], 255);
}

#[test]
fn im2cols_same_padding_corners() {
    let input = Tensor4::new(
        [1, 3, 3, 1],
        Layout::Nhwc,
        (1..=9).map(|v| v as f32).collect(),
    )
    .unwrap();
    let p = compute_coeffs(
        Range::new(1.0, 9.0).unwrap(),
        Signedness::Unsigned,
        RoundMode::default(),
    )
    .unwrap();
    let g = ConvGeometry::new((1, 1), (1, 1), Padding::Same);
    let mp = im2cols(&input, &p, &g, 3, 3).unwrap();
    assert_eq!((mp.rows, mp.cols), (9, 9));
    for r in [0, 2, 6, 8] {
        let pads = mp.row(r).iter().filter(|&&b| b as i32 == p.beta).count();
        assert_eq!(pads, 5, "row {r}");
    }
    assert_eq!(mp.row(4).iter().filter(|&&b| b as i32 == p.beta).count(), 0);
    for r in 0..9 {
        let s: i32 = mp.row(r).iter().map(|&b| b as i32).sum();
        assert_eq!(mp.patch_sums[r], s);
    }
}

#[test]
fn im2cols_sums_match_rescan() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let chunk = random_tensor(&mut rng, [3, 7, 6, 3], Layout::Nhwc, -2.0, 2.0);
    let p = compute_coeffs(
        Range::new(-2.0, 2.0).unwrap(),
        Signedness::Signed,
        RoundMode::HalfToEven,
    )
    .unwrap();
    let g = ConvGeometry::new((2, 1), (1, 2), Padding::Same);
    let mp = im2cols(&chunk, &p, &g, 3, 2).unwrap();
    for r in 0..mp.rows {
        let mut s = 0i32;
        for &b in mp.row(r) {
            s += b as i8 as i32;
        }
        assert_eq!(mp.patch_sums[r], s);
    }
}

#[test]
fn im2cols_rejects_empty_output() {
    let chunk = Tensor4::zeros([0, 3, 3, 1], Layout::Nhwc).unwrap();
    let p = QuantParams::new(1.0, 0, Signedness::Unsigned, RoundMode::default()).unwrap();
    assert!(matches!(
        im2cols(&chunk, &p, &ConvGeometry::default(), 3, 3),
        Err(AxError::Geometry(_))
    ));
}

fn hand_operands(b1: i32, b2: i32) -> (PatchMatrix, QuantFilters, QuantParams, QuantParams) {
    let p1 = QuantParams::new(0.1, b1, Signedness::Unsigned, RoundMode::default()).unwrap();
    let p2 = QuantParams::new(0.1, b2, Signedness::Unsigned, RoundMode::default()).unwrap();
    let mp = PatchMatrix {
        rows: 1,
        cols: 2,
        codes: vec![10, 20],
        patch_sums: vec![30],
    };
    let qf = QuantFilters {
        kh: 1,
        kw: 1,
        k: 2,
        cout: 1,
        codes: vec![3, 4],
        filter_sums: vec![7],
        params: p2,
    };
    (mp, qf, p1, p2)
}

#[test]
fn gemm_hand_example() {
    let lut = exact_lut(Signedness::Unsigned);
    let (mp, qf, p1, p2) = hand_operands(5, 1);
    let out = approx_gemm(&mp, &qf, &p1, &p2, &lut, &ConvConfig::default()).unwrap();
    // 0.01 * (110 - 1*30 - 5*7 + 2*5*1) = 0.55 = 0.01 * (5*2 + 15*3)
    let expected = (0.1f64 * 0.1 * 55.0) as f32;
    assert_eq!(out, vec![expected]);
    assert!((out[0] - 0.55).abs() < 1e-6);
}

#[test]
fn gemm_zero_points_vanish() {
    let lut = exact_lut(Signedness::Unsigned);
    let (mp, qf, p1, p2) = hand_operands(0, 0);
    let out = approx_gemm(&mp, &qf, &p1, &p2, &lut, &ConvConfig::default()).unwrap();
    assert_eq!(out, vec![(0.1f64 * 0.1 * 110.0) as f32]);
}

#[test]
fn gemm_errors() {
    let lut = exact_lut(Signedness::Unsigned);
    let (mut mp, qf, p1, p2) = hand_operands(5, 1);
    let signed = QuantParams::new(0.1, 0, Signedness::Signed, RoundMode::default()).unwrap();
    assert!(matches!(
        approx_gemm(&mp, &qf, &signed, &p2, &lut, &ConvConfig::default()),
        Err(AxError::ModeMismatch { .. })
    ));
    mp.cols = 1;
    mp.codes.truncate(1);
    assert!(matches!(
        approx_gemm(&mp, &qf, &p1, &p2, &lut, &ConvConfig::default()),
        Err(AxError::Shape(_))
    ));
}

#[test]
fn accumulator_widths() {
    // 40000 taps of 255*255 overflow 32 bits.
    let lut = exact_lut(Signedness::Unsigned);
    let k = 40_000;
    let p = QuantParams::new(1.0, 0, Signedness::Unsigned, RoundMode::default()).unwrap();
    let mp = PatchMatrix {
        rows: 1,
        cols: k,
        codes: vec![255; k],
        patch_sums: vec![255 * k as i32],
    };
    let qf = QuantFilters {
        kh: 1,
        kw: 1,
        k,
        cout: 1,
        codes: vec![255; k],
        filter_sums: vec![255 * k as i32],
        params: p,
    };
    let run = |accumulator| {
        let cfg = ConvConfig {
            accumulator,
            ..ConvConfig::default()
        };
        approx_gemm(&mp, &qf, &p, &p, &lut, &cfg).unwrap()[0]
    };
    let exact = 65025i64 * k as i64;
    assert_eq!(run(Accumulator::Exact64), exact as f32);
    assert_eq!(run(Accumulator::Wrap32), (exact as i32) as f32);
    assert_eq!(run(Accumulator::Saturate32), i32::MAX as f32);
}

#[test]
fn zero_input_gives_exact_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for mode in [Signedness::Unsigned, Signedness::Signed] {
        let lut = exact_lut(mode);
        let input = Tensor4::zeros([2, 5, 4, 3], Layout::Nhwc).unwrap();
        let filt = random_tensor(&mut rng, [3, 3, 3, 4], Layout::Hwcn, -1.0, 1.0);
        let g = ConvGeometry::new((1, 1), (1, 1), Padding::Same);
        let out = axconv2d(
            &input,
            &filt,
            Range::new(-3.0, 5.0).unwrap(),
            tensor_min_max(&filt).unwrap(),
            &lut,
            &ConvConfig::with_geometry(g),
        )
        .unwrap();
        assert!(out.data().iter().all(|v| v.to_bits() == 0));
    }
}

fn random_case(rng: &mut ChaCha8Rng) -> (Tensor4, Tensor4, Range, Range, MultLut, ConvConfig) {
    let mode = if rng.gen() {
        Signedness::Signed
    } else {
        Signedness::Unsigned
    };
    let lut = if rng.gen_bool(0.3) {
        truncated_lut(mode, rng.gen_range(0..8)).unwrap()
    } else {
        random_lut(mode, rng)
    };
    let kh = rng.gen_range(1..4);
    let kw = rng.gen_range(1..4);
    let g = ConvGeometry::new(
        (rng.gen_range(1..3), rng.gen_range(1..3)),
        (rng.gen_range(1..3), rng.gen_range(1..3)),
        match rng.gen_range(0..3) {
            0 => Padding::Valid,
            1 => Padding::Same,
            _ => Padding::Explicit {
                top: rng.gen_range(0..3),
                bottom: rng.gen_range(0..3),
                left: rng.gen_range(0..3),
                right: rng.gen_range(0..3),
            },
        },
    );
    let h = rng.gen_range(((kh - 1) * g.dilations.0 + 1)..9);
    let w = rng.gen_range(((kw - 1) * g.dilations.1 + 1)..9);
    let cin = rng.gen_range(1..5);
    let (n, cout) = (rng.gen_range(1..4), rng.gen_range(1..5));
    let input = random_tensor(rng, [n, h, w, cin], Layout::Nhwc, -2.0, 4.0);
    let filt = random_tensor(rng, [kh, kw, cin, cout], Layout::Hwcn, -1.0, 1.0);
    let cfg = ConvConfig {
        geometry: g,
        chunk_size: rng.gen_range(1..4),
        round: RoundMode::ALL[rng.gen_range(0..3)],
        tile_rows: rng.gen_range(1..9),
        tile_cols: rng.gen_range(1..4),
        ..ConvConfig::default()
    };
    let ri = Range::new(rng.gen_range(-3.0..0.5), rng.gen_range(0.5..5.0)).unwrap();
    let rf = tensor_min_max(&filt).unwrap();
    (input, filt, ri, rf, lut, cfg)
}

#[test]
fn gemm_matches_direct_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..40 {
        let (input, filt, ri, rf, lut, mut cfg) = random_case(&mut rng);
        for accumulator in [
            Accumulator::Exact64,
            Accumulator::Wrap32,
            Accumulator::Saturate32,
        ] {
            cfg.accumulator = accumulator;
            let d = direct_conv(&input, &filt, ri, rf, &lut, &cfg).unwrap();
            let (g, stats) = axconv2d_profiled(&input, &filt, ri, rf, &lut, &cfg).unwrap();
            assert_eq!(d.shape(), g.shape());
            assert!(d
                .data()
                .iter()
                .zip(g.data())
                .all(|(a, b)| a.to_bits() == b.to_bits()));
            let [n, oh, ow, co] = g.shape();
            let [kh, kw, ci, _] = filt.shape();
            assert_eq!(stats.macs, (n * oh * ow * kh * kw * ci * co) as u64);
        }
    }
}

#[test]
fn gemm_matches_direct_on_wide_layers() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let g = ConvGeometry::new((1, 1), (1, 1), Padding::Same);
    for (cout, tile_cols) in [
        (8, 64),
        (16, 64),
        (32, 64),
        (64, 64),
        (70, 64),
        (48, 16),
        (20, 8),
    ] {
        let mode = if cout % 16 == 0 {
            Signedness::Signed
        } else {
            Signedness::Unsigned
        };
        let lut = random_lut(mode, &mut rng);
        let input = random_tensor(&mut rng, [2, 5, 6, 3], Layout::Nhwc, -1.0, 2.0);
        let filt = random_tensor(&mut rng, [3, 3, 3, cout], Layout::Hwcn, -1.0, 1.0);
        let (ri, rf) = (
            tensor_min_max(&input).unwrap(),
            tensor_min_max(&filt).unwrap(),
        );
        for accumulator in [
            Accumulator::Exact64,
            Accumulator::Wrap32,
            Accumulator::Saturate32,
        ] {
            let cfg = ConvConfig {
                accumulator,
                tile_cols,
                tile_rows: 7,
                ..ConvConfig::with_geometry(g)
            };
            let d = direct_conv(&input, &filt, ri, rf, &lut, &cfg).unwrap();
            let a = axconv2d(&input, &filt, ri, rf, &lut, &cfg).unwrap();
            assert!(
                d.data()
                    .iter()
                    .zip(a.data())
                    .all(|(x, y)| x.to_bits() == y.to_bits()),
                "cout {cout}"
            );
        }
    }
}

#[test]
fn chunking_invariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let lut = random_lut(Signedness::Unsigned, &mut rng);
    let input = random_tensor(&mut rng, [9, 6, 6, 2], Layout::Nhwc, 0.0, 1.0);
    let filt = random_tensor(&mut rng, [3, 3, 2, 5], Layout::Hwcn, -1.0, 1.0);
    let (ri, rf) = (
        tensor_min_max(&input).unwrap(),
        tensor_min_max(&filt).unwrap(),
    );
    let base = ConvConfig::with_geometry(ConvGeometry::new((1, 1), (1, 1), Padding::Same));
    let reference = axconv2d(
        &input,
        &filt,
        ri,
        rf,
        &lut,
        &ConvConfig {
            chunk_size: 9,
            ..base
        },
    )
    .unwrap();
    for chunk_size in [1, 2, 4, 100] {
        let (out, stats) = axconv2d_profiled(
            &input,
            &filt,
            ri,
            rf,
            &lut,
            &ConvConfig { chunk_size, ..base },
        )
        .unwrap();
        assert_eq!(out, reference);
        assert_eq!(stats.chunks, 9usize.div_ceil(chunk_size));
    }
}

#[test]
fn effective_chunk_respects_budget() {
    let cfg = ConvConfig::default();
    assert_eq!(cfg.effective_chunk(1024), DEFAULT_CHUNK);
    assert_eq!(cfg.effective_chunk(PATCH_BUDGET / 2), 2);
    assert_eq!(cfg.effective_chunk(PATCH_BUDGET * 4), 1);
}

#[test]
fn rejects_bad_inputs() {
    let lut = exact_lut(Signedness::Unsigned);
    let input = Tensor4::zeros([1, 4, 4, 2], Layout::Nhwc).unwrap();
    let filt = Tensor4::zeros([3, 3, 3, 1], Layout::Hwcn).unwrap();
    let r = Range::new(0.0, 1.0).unwrap();
    let cfg = ConvConfig::default();
    assert!(matches!(
        axconv2d(&input, &filt, r, r, &lut, &cfg),
        Err(AxError::Shape(_))
    ));
    assert!(matches!(
        direct_conv(&input, &filt, r, r, &lut, &cfg),
        Err(AxError::Shape(_))
    ));
    let filt = Tensor4::zeros([3, 3, 2, 1], Layout::Nhwc).unwrap();
    assert!(axconv2d(&input, &filt, r, r, &lut, &cfg).is_err());
    let filt = Tensor4::zeros([3, 3, 2, 1], Layout::Hwcn).unwrap();
    let bad = Range {
        min: 0.0,
        max: f64::NAN,
    };
    assert!(axconv2d(&input, &filt, bad, r, &lut, &cfg).is_err());
    let zero_chunk = ConvConfig {
        chunk_size: 0,
        ..cfg
    };
    assert!(axconv2d(&input, &filt, r, r, &lut, &zero_chunk).is_err());
}

#[test]
fn error_bound_covers_exact_lut_output() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let lut = exact_lut(Signedness::Unsigned);
    let input = random_tensor(&mut rng, [2, 6, 6, 3], Layout::Nhwc, 0.0, 2.0);
    let filt = random_tensor(&mut rng, [3, 3, 3, 4], Layout::Hwcn, -0.7, 0.7);
    let (ri, rf) = (
        tensor_min_max(&input).unwrap(),
        tensor_min_max(&filt).unwrap(),
    );
    let g = ConvGeometry::new((1, 1), (1, 1), Padding::Same);
    let cfg = ConvConfig::with_geometry(g);
    let out = axconv2d(&input, &filt, ri, rf, &lut, &cfg).unwrap();
    let bound =
        quantization_error_bound(&input, &filt, ri, rf, &g, Signedness::Unsigned, cfg.round)
            .unwrap();
    let reference = float_conv(&input, &filt, &g);
    for ((o, r), b) in out.data().iter().zip(&reference).zip(bound.data()) {
        assert!((*o as f64 - r).abs() <= *b as f64 * 1.0001 + 1e-6);
    }
}
