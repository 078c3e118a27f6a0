//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run with `cargo test -p axemu --test acceptance`. The process fails if
//! any criterion fails other than those listed in `KNOWN_FAILURES`, which
//! are still printed as FAIL.

use std::sync::Arc;
use std::time::{Duration, Instant};

use axemu::axconv::{axconv2d_profiled, Accumulator};
use axemu::axmult::{random_lut, stitch_index, LUT_ENTRIES};
use axemu::bench::{bench, linear_fit, BenchConfig};
use axemu::formats::{
    encode_lut, load_cifar10, load_lut, load_model, load_raw_lut, save_cifar10, save_lut,
    save_model, save_raw_lut,
};
use axemu::graph::{
    compare_layers, run_traced, transform, AxSettings, LayerGraph, ResNetSpec, RunOptions,
};
use axemu::profile::set_phase_timing;
use axemu::synth::{agreement, pretrained, synth_cifar, top1};
use axemu::{
    axconv2d, compute_coeffs, dequantize, direct_conv, exact_lut, quantize, tensor_min_max,
    truncated_lut, ConvConfig, ConvGeometry, Engine, Layout, Padding, Range, RoundMode, Signedness,
    Tensor4,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Criterion = (&'static str, fn() -> Outcome);

/// Criteria that cannot hold as written; see the project notes.
const KNOWN_FAILURES: &[(usize, &str)] = &[(
    3,
    "rounding toward zero moves a value by up to one full step alpha, so the alpha/2 round-trip bound cannot hold for that mode",
)];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

const MODES: [Signedness; 2] = [Signedness::Unsigned, Signedness::Signed];

fn random_tensor(
    rng: &mut ChaCha8Rng,
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

fn random_geometry(rng: &mut ChaCha8Rng) -> ConvGeometry {
    ConvGeometry::new(
        (rng.gen_range(1..4), rng.gen_range(1..4)),
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
    )
}

/// Input and filters whose geometry yields a non-empty output.
fn random_operands(rng: &mut ChaCha8Rng, g: &ConvGeometry) -> (Tensor4, Tensor4) {
    let (kh, kw) = (rng.gen_range(1..4), rng.gen_range(1..4));
    let h = rng.gen_range(((kh - 1) * g.dilations.0 + 1).max(1)..=8);
    let w = rng.gen_range(((kw - 1) * g.dilations.1 + 1).max(1)..=8);
    let (n, cin, cout) = (
        rng.gen_range(1..=4),
        rng.gen_range(1..=4),
        rng.gen_range(1..=4),
    );
    let (lo, hi) = (rng.gen_range(-3.0..0.0), rng.gen_range(0.1..4.0));
    let input = random_tensor(rng, [n, h, w, cin], Layout::Nhwc, lo, hi);
    let filters = random_tensor(rng, [kh, kw, cin, cout], Layout::Hwcn, -1.0, 1.0);
    (input, filters)
}

fn bits_equal(a: &Tensor4, b: &Tensor4) -> bool {
    a.shape() == b.shape()
        && a.data()
            .iter()
            .zip(b.data())
            .all(|(x, y)| x.to_bits() == y.to_bits())
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut mismatches = 0;
    for _ in 0..100 {
        let g = random_geometry(&mut rng);
        let (input, filters) = random_operands(&mut rng, &g);
        let mode = MODES[rng.gen_range(0..2)];
        let lut = random_lut(mode, &mut rng);
        let ri = Range::new(rng.gen_range(-4.0..0.5), rng.gen_range(0.5..5.0)).unwrap();
        let rf = Range::new(rng.gen_range(-2.0..0.2), rng.gen_range(0.2..2.0)).unwrap();
        let cfg = ConvConfig {
            chunk_size: rng.gen_range(1..6),
            workers: [1, 2, 8][rng.gen_range(0..3)],
            round: RoundMode::ALL[rng.gen_range(0..3)],
            accumulator: [
                Accumulator::Exact64,
                Accumulator::Wrap32,
                Accumulator::Saturate32,
            ][rng.gen_range(0..3)],
            ..ConvConfig::with_geometry(g)
        };
        let d = direct_conv(&input, &filters, ri, rf, &lut, &cfg).unwrap();
        let a = axconv2d(&input, &filters, ri, rf, &lut, &cfg).unwrap();
        mismatches += !bits_equal(&d, &a) as usize;
    }
    let t = start.elapsed();
    outcome(
        mismatches == 0 && t < Duration::from_secs(60),
        format!(
            "{mismatches}/100 instances differ; {:.2} s (limit 60 s)",
            t.as_secs_f64()
        ),
    )
}

/// Float64 valid-padding convolution, written out independently of the
/// library.
fn reference_conv(input: &Tensor4, filters: &Tensor4, g: &ConvGeometry) -> Vec<f64> {
    assert_eq!(g.padding, Padding::Valid);
    let [n, ih, iw, cin] = input.shape();
    let [kh, kw, _, cout] = filters.shape();
    let oh = (ih - (kh - 1) * g.dilations.0 - 1) / g.strides.0 + 1;
    let ow = (iw - (kw - 1) * g.dilations.1 - 1) / g.strides.1 + 1;
    let mut out = Vec::new();
    for b in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                for co in 0..cout {
                    let mut acc = 0f64;
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let (y, x) = (
                                oy * g.strides.0 + ky * g.dilations.0,
                                ox * g.strides.1 + kx * g.dilations.1,
                            );
                            for ci in 0..cin {
                                acc += input.at([b, y, x, ci]) as f64
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

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0f64;
    let mut zero_points = (0, 0);
    for i in 0..20 {
        let mode = MODES[i % 2];
        let lut = exact_lut(mode);
        let g = ConvGeometry::new(
            (rng.gen_range(1..3), rng.gen_range(1..3)),
            (rng.gen_range(1..3), 1),
            Padding::Valid,
        );
        let (mut input, filters) = random_operands(&mut rng, &g);
        if i % 4 < 2 {
            // Nonnegative inputs put the unsigned zero-point at 0.
            input.data_mut().iter_mut().for_each(|v| *v = v.abs());
        }
        let (ri, rf) = (
            tensor_min_max(&input).unwrap(),
            tensor_min_max(&filters).unwrap(),
        );
        let round = RoundMode::ALL[i % 3];
        let (p1, p2) = (
            compute_coeffs(ri, mode, round).unwrap(),
            compute_coeffs(rf, mode, round).unwrap(),
        );
        if p1.beta == 0 || p2.beta == 0 {
            zero_points.0 += 1;
        } else {
            zero_points.1 += 1;
        }
        let fq_in = dequantize(&quantize(&input, &p1).unwrap()).unwrap();
        let fq_f = dequantize(&quantize(&filters, &p2).unwrap()).unwrap();
        let expect = reference_conv(&fq_in, &fq_f, &g);
        let cfg = ConvConfig {
            round,
            ..ConvConfig::with_geometry(g)
        };
        let got = axconv2d(&input, &filters, ri, rf, &lut, &cfg).unwrap();
        let scale = expect
            .iter()
            .fold(0f64, |m, v| m.max(v.abs()))
            .max(f64::MIN_POSITIVE);
        for (&e, &a) in expect.iter().zip(got.data()) {
            worst = worst.max((a as f64 - e).abs() / scale);
        }
    }
    outcome(
        worst <= 1e-3,
        format!(
            "max |gemm - f64 ref| / max|ref| = {worst:.2e} (limit 1e-3); {} instances with a zero zero-point, {} with both nonzero",
            zero_points.0, zero_points.1
        ),
    )
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut failures = Vec::new();
    let mut worst_ratio = Vec::new();
    for mode in MODES {
        for round in RoundMode::ALL {
            let tag = format!("{}/{round:?}", mode.name());
            let lo: f64 = rng.gen_range(-5.0..0.5);
            let range = Range::new(lo, lo + rng.gen_range(0.5..8.0)).unwrap();
            let p = compute_coeffs(range, mode, round).unwrap();
            let q = |values: Vec<f32>| {
                quantize(
                    &Tensor4::new([1, 1, 1, values.len()], Layout::Nhwc, values).unwrap(),
                    &p,
                )
                .unwrap()
            };

            let zero = dequantize(&q(vec![0.0])).unwrap().data()[0];
            if zero.to_bits() != 0f32.to_bits() {
                failures.push(format!("{tag}: zero -> {zero}"));
            }

            let codes: Vec<u8> = (mode.lo()..=mode.hi()).map(|v| mode.byte(v)).collect();
            let back: Vec<f32> = codes
                .iter()
                .map(|&c| p.dequantize_value(mode.value(c)) as f32)
                .collect();
            if q(back).data != codes {
                failures.push(format!("{tag}: not idempotent"));
            }

            let wide = range.with_zero();
            let mut rs: Vec<f32> = (0..10_000)
                .map(|_| rng.gen_range(wide.min..=wide.max) as f32)
                .collect();
            rs.sort_by(f32::total_cmp);
            let qs = q(rs.clone());
            if qs
                .data
                .windows(2)
                .any(|w| mode.value(w[0]) > mode.value(w[1]))
            {
                failures.push(format!("{tag}: not monotone"));
            }
            let deq = dequantize(&qs).unwrap();
            let worst = rs
                .iter()
                .zip(deq.data())
                .map(|(&r, &d)| (r as f64 - d as f64).abs())
                .fold(0f64, f64::max);
            let slack = 4.0 * f32::EPSILON as f64 * wide.min.abs().max(wide.max.abs());
            if worst > p.alpha / 2.0 + slack {
                failures.push(format!(
                    "{tag}: round-trip error {:.3} alpha exceeds alpha/2",
                    worst / p.alpha
                ));
            }
            worst_ratio.push(worst / p.alpha);
        }
    }
    let max_ratio = worst_ratio.iter().fold(0f64, |m, &v| m.max(v));
    if failures.is_empty() {
        outcome(
            true,
            format!("6 mode combinations; worst round trip {max_ratio:.3} alpha"),
        )
    } else {
        outcome(false, failures.join("; "))
    }
}

fn criterion_4() -> Outcome {
    let mut problems = Vec::new();
    for mode in MODES {
        let lut = exact_lut(mode);
        let mut wrong = 0;
        for a in mode.lo()..=mode.hi() {
            for b in mode.lo()..=mode.hi() {
                let i = stitch_index(mode.byte(a), mode.byte(b)) as usize;
                wrong += (lut.values()[i] != a * b) as usize;
            }
        }
        if wrong != 0 || lut.entries().len() != LUT_ENTRIES {
            problems.push(format!("{}: {wrong} wrong products", mode.name()));
        }
        let dir = tempfile::tempdir().unwrap();
        let (h, r) = (dir.path().join("t.axm"), dir.path().join("t.raw"));
        save_lut(&lut, &h).unwrap();
        save_raw_lut(&lut, &r).unwrap();
        let (hs, rs) = (
            std::fs::metadata(&h).unwrap().len(),
            std::fs::metadata(&r).unwrap().len(),
        );
        if (hs, rs) != (131_088, 131_072) {
            problems.push(format!("{}: sizes {hs}/{rs}", mode.name()));
        }
        let reread = load_lut(&h).unwrap();
        if reread != lut
            || encode_lut(&reread) != std::fs::read(&h).unwrap()
            || load_raw_lut(&r, mode).unwrap() != lut
        {
            problems.push(format!("{}: file round trip differs", mode.name()));
        }
    }
    outcome(
        problems.is_empty(),
        if problems.is_empty() {
            "2 × 65,536 products exact; files 131,088 / 131,072 bytes, byte-identical round trip"
                .to_string()
        } else {
            problems.join("; ")
        },
    )
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let g = ConvGeometry::new((1, 1), (1, 1), Padding::Same);
    let input = random_tensor(&mut rng, [24, 12, 12, 8], Layout::Nhwc, -1.0, 2.0);
    let filters = random_tensor(&mut rng, [3, 3, 8, 16], Layout::Hwcn, -0.5, 0.5);
    let lut = random_lut(Signedness::Signed, &mut rng);
    let (ri, rf) = (
        tensor_min_max(&input).unwrap(),
        tensor_min_max(&filters).unwrap(),
    );
    let mut outputs = Vec::new();
    for workers in [1, 2, 8] {
        for chunk_size in [1, 7, 64] {
            let cfg = ConvConfig {
                workers,
                chunk_size,
                ..ConvConfig::with_geometry(g)
            };
            outputs.push(
                axconv2d_profiled(&input, &filters, ri, rf, &lut, &cfg)
                    .unwrap()
                    .0,
            );
        }
    }
    let conv_same = outputs.windows(2).all(|w| bits_equal(&w[0], &w[1]));

    let spec = ResNetSpec::resnet8(8);
    let model = approx_model(
        &pretrained(&spec, 5).unwrap(),
        truncated_lut(Signedness::Unsigned, 3).unwrap(),
    );
    let data = synth_cifar(48, 55).unwrap();
    let graph_runs: Vec<Tensor4> = [1, 2, 8]
        .iter()
        .map(|&workers| {
            let opts = RunOptions {
                workers,
                ..RunOptions::default()
            };
            run_traced(&model, &data.images, &opts).unwrap().0
        })
        .collect();
    let graph_same = graph_runs.windows(2).all(|w| bits_equal(&w[0], &w[1]));
    outcome(
        conv_same && graph_same,
        format!("9 conv runs identical: {conv_same}; 3 network runs identical: {graph_same}"),
    )
}

fn approx_model(g: &LayerGraph, lut: axemu::MultLut) -> LayerGraph {
    transform(g, &AxSettings::new(Arc::new(lut), "table"))
        .unwrap()
        .0
}

fn criterion_6() -> Outcome {
    let spec = ResNetSpec::resnet8(8);
    let g = pretrained(&spec, 6).unwrap();
    let data = synth_cifar(16, 66).unwrap();
    let mut details = Vec::new();
    let mut pass = true;
    for mode in MODES {
        let (ax, report) =
            transform(&g, &AxSettings::new(Arc::new(exact_lut(mode)), "exact")).unwrap();
        pass &= report.replaced_count == 7 && report.inserted_min_max == 14;
        let checks = compare_layers(&g, &ax, &data.images, &RunOptions::default()).unwrap();
        let within = checks.iter().filter(|c| c.within_bound).count();
        let worst = checks.iter().fold(0f64, |m, c| m.max(c.max_bound_ratio));
        pass &= checks.len() == 7 && within == 7;
        details.push(format!(
            "{}: replaced {}, inserted {}, {within}/{} layers within bound (worst error/bound {worst:.3})",
            mode.name(),
            report.replaced_count,
            report.inserted_min_max,
            checks.len()
        ));
    }
    outcome(pass, details.join("; "))
}

fn criterion_7() -> Outcome {
    let data = synth_cifar(1000, 77).unwrap();
    let lut = exact_lut(Signedness::Unsigned);
    let mut macs = Vec::new();
    let mut times = Vec::new();
    let mut phase_sums = Vec::new();
    for blocks in [1, 2, 4] {
        let spec = ResNetSpec {
            blocks: [blocks; 3],
            ..ResNetSpec::resnet8(16)
        };
        let model = approx_model(&axemu::graph::resnet_style(&spec, 7).unwrap(), lut.clone());
        let r = bench(|| Ok(model), &data, &BenchConfig::default())
            .unwrap()
            .report;
        macs.push(r.mac_count as f64);
        times.push(r.t_comp);
        phase_sums.push(r.phases.iter().map(|p| p.percent).sum::<f64>());
    }
    let (_, _, r2) = linear_fit(&macs, &times);

    // Same workload on both engines.
    let spec = ResNetSpec::resnet8(16);
    let model = approx_model(&axemu::graph::resnet_style(&spec, 7).unwrap(), lut);
    let subset = data.slice(0, 100).unwrap();
    let run = |engine, workers| {
        let cfg = BenchConfig {
            engine,
            workers,
            warmup_images: 1,
            ..BenchConfig::default()
        };
        bench(|| Ok(model.clone()), &subset, &cfg).unwrap()
    };
    let direct = run(Engine::Direct, 1);
    let gemm = run(Engine::Gemm, 8);
    let speedup = direct.report.t_comp / gemm.report.t_comp;
    let same = bits_equal(&direct.output, &gemm.output);
    let sums_ok = phase_sums.iter().all(|s| (s - 100.0).abs() <= 0.5);
    let cores = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1);
    let ratios: Vec<String> = macs.iter().map(|m| format!("{:.2}", m / macs[0])).collect();
    outcome(
        r2 >= 0.95 && speedup >= 5.0 && same && sums_ok,
        format!(
            "MAC ratios 1:{}:{} -> t_comp {:.2}/{:.2}/{:.2} s, R² = {r2:.4} (min 0.95); gemm(8 workers) {speedup:.1}× faster than direct(1) on 100 images (min 5×, {cores} core(s), outputs identical: {same}); phase shares sum to {:.2}%",
            ratios[1], ratios[2], times[0], times[1], times[2], phase_sums[0]
        ),
    )
}

fn criterion_8() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    save_cifar10(&synth_cifar(1000, 88).unwrap(), d.join("test.bin")).unwrap();
    save_model(
        &pretrained(&ResNetSpec::resnet8(16), 8).unwrap(),
        d.join("net.toml"),
    )
    .unwrap();
    save_lut(&exact_lut(Signedness::Unsigned), d.join("exact.axm")).unwrap();
    save_lut(
        &truncated_lut(Signedness::Unsigned, 6).unwrap(),
        d.join("t6.axm"),
    )
    .unwrap();

    let data = load_cifar10(d.join("test.bin")).unwrap();
    let float = load_model(d.join("net.toml"), None).unwrap();
    for table in ["exact", "t6"] {
        let lut = Arc::new(load_lut(d.join(format!("{table}.axm"))).unwrap());
        let (ax, _) = transform(&float, &AxSettings::new(lut, format!("{table}.axm"))).unwrap();
        save_model(&ax, d.join(format!("ax_{table}.toml"))).unwrap();
    }
    let cfg = BenchConfig::default();
    let reference = bench(|| load_model(d.join("net.toml"), None), &data, &cfg).unwrap();
    let exact = bench(|| load_model(d.join("ax_exact.toml"), None), &data, &cfg).unwrap();
    let rough = bench(|| load_model(d.join("ax_t6.toml"), None), &data, &cfg).unwrap();
    let a_exact = agreement(&exact.predictions, &reference.predictions);
    let a_rough = agreement(&rough.predictions, &reference.predictions);
    let accuracy = agreement(&top1(&reference.output), &data.labels);
    let t = start.elapsed();
    outcome(
        t < Duration::from_secs(300) && a_exact >= 0.99 && a_rough < a_exact,
        format!(
            "{:.1} s (limit 300 s); top-1 agreement exact {:.1}% (min 99%), truncated(6) {:.1}% (must be lower); float accuracy on labels {:.1}%",
            t.as_secs_f64(),
            100.0 * a_exact,
            100.0 * a_rough,
            100.0 * accuracy
        ),
    )
}

/// Phase timers on versus off over the same run.
fn instrumentation_overhead() -> Outcome {
    let data = synth_cifar(100, 9).unwrap();
    let model = approx_model(
        &axemu::graph::resnet_style(&ResNetSpec::resnet8(16), 9).unwrap(),
        exact_lut(Signedness::Unsigned),
    );
    let run = |on: bool| {
        set_phase_timing(on);
        let t = bench(|| Ok(model.clone()), &data, &BenchConfig::default())
            .unwrap()
            .report
            .t_comp;
        set_phase_timing(true);
        t
    };
    // Alternate the two settings so load changes hit both alike.
    let (mut off, mut on) = (f64::INFINITY, f64::INFINITY);
    for _ in 0..5 {
        off = off.min(run(false));
        on = on.min(run(true));
    }
    let overhead = on / off - 1.0;
    outcome(
        overhead < 0.05,
        format!(
            "{:.3} s with timers vs {off:.3} s without: {:+.2}% (limit 5%)",
            on,
            100.0 * overhead
        ),
    )
}

fn main() {
    let criteria: [Criterion; 9] = [
        (
            "1 oracle equivalence (gemm vs direct, 100 random instances)",
            criterion_1,
        ),
        (
            "2 regrouping correctness (exact table vs f64 reference)",
            criterion_2,
        ),
        ("3 quantizer suite", criterion_3),
        ("4 table suite", criterion_4),
        ("5 determinism across workers and chunk sizes", criterion_5),
        (
            "6 graph transform on a 7-convolution residual network",
            criterion_6,
        ),
        ("7 linear scaling and engine speedup", criterion_7),
        ("8 end-to-end smoke on 1000 images", criterion_8),
        ("- phase timer overhead", instrumentation_overhead),
    ];
    let mut unexpected = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let o = check();
        let known = KNOWN_FAILURES.iter().find(|(n, _)| *n == i + 1);
        println!(
            "{} [{name}] {} ({:.1} s)",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            t.elapsed().as_secs_f64()
        );
        if !o.pass {
            match known {
                Some((_, why)) => println!("     known failure: {why}"),
                None => unexpected += 1,
            }
        }
    }
    if unexpected > 0 {
        println!("{unexpected} unexpected failure(s)");
        std::process::exit(1);
    }
}
