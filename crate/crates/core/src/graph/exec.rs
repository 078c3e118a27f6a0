use std::time::Duration;

use crate::axconv::{self, quantization_error_bound, ConvConfig, Engine};
use crate::error::{AxError, Result};
use crate::profile::{Phase, PhaseTimes, Stopwatch};
use crate::tensor::{output_shape, tensor_min_max, ConvGeometry, Layout, Range, Tensor4};

use super::{filter_tensor, AxConvAttrs, FilterSource, LayerGraph, NodeKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RunOptions {
    pub engine: Engine,
    /// Worker threads for approximate layers; `0` uses the global pool.
    pub workers: usize,
    /// Keep every node's output in the trace.
    pub keep_all: bool,
}

#[derive(Debug, Clone, Default)]
pub struct RunTrace {
    /// Wall time of each node, in graph order.
    pub node_times: Vec<Duration>,
    pub phases: PhaseTimes,
    /// Lookup multiply-accumulates performed by approximate layers.
    pub macs: u64,
    /// Every node's output when `keep_all` was set.
    pub outputs: Vec<Tensor4>,
}

/// Evaluates the graph on one batch and returns the last node's output.
pub fn run(g: &LayerGraph, batch: &Tensor4) -> Result<Tensor4> {
    run_traced(g, batch, &RunOptions::default()).map(|(t, _)| t)
}

pub fn run_traced(
    g: &LayerGraph,
    batch: &Tensor4,
    opts: &RunOptions,
) -> Result<(Tensor4, RunTrace)> {
    g.validate()?;
    let n = g.len();
    // Values are dropped once their last consumer has run.
    let mut last_use = vec![0usize; n];
    for (id, node) in g.nodes().iter().enumerate() {
        for &i in &node.inputs {
            last_use[i] = id;
        }
    }
    let mut values: Vec<Option<Tensor4>> = vec![None; n];
    let mut trace = RunTrace {
        node_times: Vec::with_capacity(n),
        ..RunTrace::default()
    };

    for (id, node) in g.nodes().iter().enumerate() {
        let args: Vec<&Tensor4> = node
            .inputs
            .iter()
            .map(|&i| values[i].as_ref().expect("input evaluated"))
            .collect();
        let sw = Stopwatch::phase();
        let out = eval(&node.kind, &args, batch, opts, &mut trace).map_err(|e| {
            AxError::Graph(format!("node {:?} ({}): {e}", node.name, node.kind.name()))
        })?;
        let dt = sw.elapsed();
        trace.node_times.push(dt);
        match node.kind {
            NodeKind::AxConv2D(_) => {}
            NodeKind::Min | NodeKind::Max => trace.phases.add(Phase::QuantDequantMinMax, dt),
            _ => trace.phases.add(Phase::Im2ColsGemmOther, dt),
        }
        values[id] = Some(out);
        if !opts.keep_all {
            for &i in &node.inputs {
                if last_use[i] == id {
                    values[i] = None;
                }
            }
        }
    }
    let result = values[n - 1].take().expect("output evaluated");
    if opts.keep_all {
        trace.outputs = values
            .into_iter()
            .map(|v| v.unwrap_or_else(|| result.clone()))
            .collect();
    }
    Ok((result, trace))
}

fn scalar(t: &Tensor4) -> Result<f64> {
    match t.data() {
        [v] => Ok(*v as f64),
        _ => Err(AxError::Shape(format!(
            "expected a scalar, got shape {:?}",
            t.shape()
        ))),
    }
}

fn eval(
    kind: &NodeKind,
    args: &[&Tensor4],
    batch: &Tensor4,
    opts: &RunOptions,
    trace: &mut RunTrace,
) -> Result<Tensor4> {
    match kind {
        NodeKind::Input { shape } => {
            let [_, h, w, c] = batch.shape();
            if batch.layout() != Layout::Nhwc || [h, w, c] != *shape {
                return Err(AxError::Shape(format!(
                    "batch {:?} does not match input images {shape:?}",
                    batch.shape()
                )));
            }
            Ok(batch.clone())
        }
        NodeKind::Conv2D {
            filters,
            bias,
            geometry,
        } => {
            let dynamic;
            let f = match filters {
                FilterSource::Const(f) => f,
                FilterSource::Dynamic(shape) => {
                    dynamic = filter_tensor(*shape, args[1].data().to_vec())?;
                    &dynamic
                }
            };
            let mut out = float_conv(args[0], f, geometry)?;
            add_bias(&mut out, bias.as_deref())?;
            Ok(out)
        }
        NodeKind::AxConv2D(attrs) => {
            let range = Range::new(scalar(args[1])?, scalar(args[2])?)?;
            let (mut out, stats) = ax_forward(attrs, args[0], range, opts)?;
            trace.macs += stats.macs;
            trace.phases.merge(&stats.times);
            add_bias(&mut out, attrs.bias.as_deref())?;
            Ok(out)
        }
        NodeKind::Min => {
            let r = tensor_min_max(args[0])?;
            Tensor4::new([1, 1, 1, 1], Layout::Nhwc, vec![r.min as f32])
        }
        NodeKind::Max => {
            let r = tensor_min_max(args[0])?;
            Tensor4::new([1, 1, 1, 1], Layout::Nhwc, vec![r.max as f32])
        }
        NodeKind::ReLU => {
            let mut out = args[0].clone();
            out.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
            Ok(out)
        }
        NodeKind::MaxPool { window, strides } => pool(args[0], *window, *strides, true),
        NodeKind::AvgPool { window, strides } => pool(args[0], *window, *strides, false),
        NodeKind::Add => {
            let (a, b) = (args[0], args[1]);
            if a.shape() != b.shape() {
                return Err(AxError::Shape(format!(
                    "cannot add {:?} and {:?}",
                    a.shape(),
                    b.shape()
                )));
            }
            let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
            Tensor4::new(a.shape(), Layout::Nhwc, data)
        }
        NodeKind::Dense {
            weights,
            bias,
            units,
        } => dense(args[0], weights, bias, *units),
        NodeKind::Flatten => {
            let [n, h, w, c] = args[0].shape();
            args[0].clone().reshape([n, 1, 1, h * w * c], Layout::Nhwc)
        }
        NodeKind::Softmax => {
            let mut out = args[0].clone();
            let c = out.shape()[3].max(1);
            for row in out.data_mut().chunks_exact_mut(c) {
                let m = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
                let mut sum = 0f32;
                for v in row.iter_mut() {
                    *v = (*v - m).exp();
                    sum += *v;
                }
                row.iter_mut().for_each(|v| *v /= sum);
            }
            Ok(out)
        }
    }
}

fn ax_forward(
    attrs: &AxConvAttrs,
    input: &Tensor4,
    range: Range,
    opts: &RunOptions,
) -> Result<(Tensor4, axconv::ConvStats)> {
    let cfg = ConvConfig {
        geometry: attrs.geometry,
        chunk_size: attrs.chunk_size,
        accumulator: attrs.accumulator,
        round: attrs.round,
        workers: opts.workers,
        ..ConvConfig::default()
    };
    match opts.engine {
        Engine::Gemm => axconv::axconv2d_profiled(
            input,
            &attrs.filters,
            range,
            attrs.filter_range,
            &attrs.lut,
            &cfg,
        ),
        Engine::Direct => {
            let sw = Stopwatch::phase();
            let out = axconv::direct_conv(
                input,
                &attrs.filters,
                range,
                attrs.filter_range,
                &attrs.lut,
                &cfg,
            )?;
            let [n, oh, ow, cout] = out.shape();
            let [kh, kw, cin, _] = attrs.filters.shape();
            let mut stats = axconv::ConvStats {
                macs: (n * oh * ow * kh * kw * cin * cout) as u64,
                chunks: 1,
                ..Default::default()
            };
            stats.times.add(Phase::LutLookup, sw.elapsed());
            Ok((out, stats))
        }
    }
}

fn add_bias(t: &mut Tensor4, bias: Option<&[f32]>) -> Result<()> {
    let Some(bias) = bias else { return Ok(()) };
    let c = t.shape()[3];
    if bias.len() != c {
        return Err(AxError::Shape(format!(
            "bias of {} for {c} channels",
            bias.len()
        )));
    }
    for row in t.data_mut().chunks_exact_mut(c.max(1)) {
        row.iter_mut().zip(bias).for_each(|(v, b)| *v += b);
    }
    Ok(())
}

/// Accurate float convolution (`f32` accumulation, output channels innermost).
pub(crate) fn float_conv(
    input: &Tensor4,
    filters: &Tensor4,
    geometry: &ConvGeometry,
) -> Result<Tensor4> {
    if input.layout() != Layout::Nhwc || filters.layout() != Layout::Hwcn {
        return Err(AxError::Shape(
            "convolution needs NHWC input and HWCN filters".into(),
        ));
    }
    let shape = output_shape(input.shape(), filters.shape(), geometry)?;
    let [_, ih, iw, cin] = input.shape();
    let [kh, kw, _, cout] = filters.shape();
    let place = geometry.place(ih, iw, kh, kw)?;
    let (x, f) = (input.data(), filters.data());
    let mut out = vec![0f32; shape.iter().product()];
    let per_image = place.out_h * place.out_w * cout;
    crate::parallel::for_each_block(&mut out, per_image, |b, img| {
        for (pos, acc) in img.chunks_exact_mut(cout.max(1)).enumerate() {
            let (oy, ox) = (pos / place.out_w, pos % place.out_w);
            for ky in 0..kh {
                for kx in 0..kw {
                    let Some((y, xx)) = place.source(oy, ox, ky, kx, ih, iw) else {
                        continue;
                    };
                    let src = &x[((b * ih + y) * iw + xx) * cin..][..cin];
                    for (ci, &v) in src.iter().enumerate() {
                        let frow = &f[((ky * kw + kx) * cin + ci) * cout..][..cout];
                        for (a, &w) in acc.iter_mut().zip(frow) {
                            *a += v * w;
                        }
                    }
                }
            }
        }
    });
    Tensor4::new(shape, Layout::Nhwc, out)
}

fn pool(
    input: &Tensor4,
    window: (usize, usize),
    strides: (usize, usize),
    max: bool,
) -> Result<Tensor4> {
    let [n, h, w, c] = input.shape();
    if window.0 == 0
        || window.1 == 0
        || strides.0 == 0
        || strides.1 == 0
        || window.0 > h
        || window.1 > w
    {
        return Err(AxError::Geometry(format!(
            "pool window {window:?} stride {strides:?} on {h}x{w}"
        )));
    }
    let (oh, ow) = (
        (h - window.0) / strides.0 + 1,
        (w - window.1) / strides.1 + 1,
    );
    let area = (window.0 * window.1) as f32;
    Tensor4::from_fn([n, oh, ow, c], Layout::Nhwc, |[b, y, x, ch]| {
        let mut acc = if max { f32::NEG_INFINITY } else { 0.0 };
        for dy in 0..window.0 {
            for dx in 0..window.1 {
                let v = input.at([b, y * strides.0 + dy, x * strides.1 + dx, ch]);
                if max {
                    acc = acc.max(v);
                } else {
                    acc += v;
                }
            }
        }
        if max {
            acc
        } else {
            acc / area
        }
    })
}

fn dense(input: &Tensor4, weights: &[f32], bias: &[f32], units: usize) -> Result<Tensor4> {
    let [n, h, w, c] = input.shape();
    let k = h * w * c;
    if weights.len() != k * units || bias.len() != units {
        return Err(AxError::Shape(format!(
            "dense layer of {} weights and {} biases cannot map {k} inputs to {units} units",
            weights.len(),
            bias.len()
        )));
    }
    let mut out = Vec::with_capacity(n * units);
    for row in input.data().chunks_exact(k.max(1)) {
        let mut acc = bias.to_vec();
        for (&v, wrow) in row.iter().zip(weights.chunks_exact(units)) {
            acc.iter_mut().zip(wrow).for_each(|(a, &wv)| *a += v * wv);
        }
        out.extend(acc);
    }
    Tensor4::new([n, 1, 1, units], Layout::Nhwc, out)
}

/// How far one approximate layer strays from its accurate counterpart.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerCheck {
    pub name: String,
    /// Largest `|approximate - accurate|` over the layer's outputs.
    pub max_abs_error: f64,
    /// Largest ratio of error to the first-order quantization bound.
    pub max_bound_ratio: f64,
    pub within_bound: bool,
}

/// Feeds each `Conv2D` of `accurate` the activation the accurate graph
/// produced for it, runs the matching `AxConv2D` of `approximate` on the
/// same activation, and compares both against the quantization bound.
pub fn compare_layers(
    accurate: &LayerGraph,
    approximate: &LayerGraph,
    batch: &Tensor4,
    opts: &RunOptions,
) -> Result<Vec<LayerCheck>> {
    let keep = RunOptions {
        keep_all: true,
        ..*opts
    };
    let (_, trace) = run_traced(accurate, batch, &keep)?;
    let mut checks = Vec::new();
    for node in accurate.nodes() {
        let NodeKind::Conv2D {
            filters: FilterSource::Const(filters),
            geometry,
            ..
        } = &node.kind
        else {
            continue;
        };
        let ax = approximate
            .find(&node.name)
            .map(|i| &approximate.nodes()[i].kind)
            .and_then(|k| match k {
                NodeKind::AxConv2D(a) => Some(a),
                _ => None,
            })
            .ok_or_else(|| AxError::Graph(format!("no AxConv2D named {:?}", node.name)))?;
        let input = &trace.outputs[node.inputs[0]];
        let range = tensor_min_max(input)?;
        let exact = float_conv(input, filters, geometry)?;
        let (approx, _) = ax_forward(ax, input, range, opts)?;
        let bound = quantization_error_bound(
            input,
            filters,
            range,
            ax.filter_range,
            geometry,
            ax.lut.mode(),
            ax.round,
        )?;
        let mut check = LayerCheck {
            name: node.name.clone(),
            max_abs_error: 0.0,
            max_bound_ratio: 0.0,
            within_bound: true,
        };
        for ((a, e), b) in approx.data().iter().zip(exact.data()).zip(bound.data()) {
            let err = (*a as f64 - *e as f64).abs();
            // f32 rounding of both results and of the accurate accumulation.
            let slack = 1e-3 * *b as f64 + 1e-5 * e.abs() as f64 + 1e-6;
            check.max_abs_error = check.max_abs_error.max(err);
            check.max_bound_ratio = check.max_bound_ratio.max(err / (*b as f64 + slack));
            check.within_bound &= err <= *b as f64 + slack;
        }
        checks.push(check);
    }
    Ok(checks)
}
