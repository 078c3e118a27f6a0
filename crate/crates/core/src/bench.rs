//! Batch inference with `t_init + t_comp` timing.
//!
//! `t_init` runs from before the model is loaded until a warmup pass over
//! the first images has finished. `t_comp` covers every batch of the data
//! set afterwards.

use crate::axconv::Engine;
use crate::error::{AxError, Result};
use crate::formats::{Cifar10Batch, LayerTiming, RunReport};
use crate::graph::{run_traced, LayerGraph, NodeKind, RunOptions};
use crate::profile::{PhaseTimes, Stopwatch};
use crate::synth::top1;
use crate::tensor::Tensor4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BenchConfig {
    pub engine: Engine,
    /// `0` uses the global pool.
    pub workers: usize,
    pub batch_size: usize,
    /// Images in the warmup pass; at least one is always used.
    pub warmup_images: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            engine: Engine::Gemm,
            workers: 0,
            batch_size: 1000,
            warmup_images: 64,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchResult {
    pub report: RunReport,
    /// Final-node output for every image, in data set order.
    pub output: Tensor4,
    pub predictions: Vec<u8>,
}

/// Loads a model with `load` and runs it over `data` in batches.
pub fn bench(
    load: impl FnOnce() -> Result<LayerGraph>,
    data: &Cifar10Batch,
    cfg: &BenchConfig,
) -> Result<BenchResult> {
    if data.is_empty() {
        return Err(AxError::EmptyTensor);
    }
    if cfg.batch_size == 0 {
        return Err(AxError::InvalidParams("batch size must be positive".into()));
    }
    let opts = RunOptions {
        engine: cfg.engine,
        workers: cfg.workers,
        keep_all: false,
    };

    let init = Stopwatch::start();
    let g = load()?;
    let warm = data
        .images
        .batch_slice(0, cfg.warmup_images.clamp(1, data.len()))?;
    run_traced(&g, &warm, &opts)?;
    let t_init = init.elapsed().as_secs_f64();

    let comp = Stopwatch::start();
    let mut parts = Vec::new();
    let mut phases = PhaseTimes::default();
    let mut node_secs = vec![0f64; g.len()];
    let mut macs = 0;
    let mut batches = 0;
    for start in (0..data.len()).step_by(cfg.batch_size) {
        let images = data
            .images
            .batch_slice(start, (start + cfg.batch_size).min(data.len()))?;
        let (out, trace) = run_traced(&g, &images, &opts)?;
        phases.merge(&trace.phases);
        for (s, t) in node_secs.iter_mut().zip(&trace.node_times) {
            *s += t.as_secs_f64();
        }
        macs += trace.macs;
        batches += 1;
        parts.push(out);
    }
    let t_comp = comp.elapsed().as_secs_f64();

    let mut luts: Vec<&str> = Vec::new();
    for n in g.nodes() {
        if let NodeKind::AxConv2D(a) = &n.kind {
            if !luts.contains(&a.lut_ref.as_str()) {
                luts.push(&a.lut_ref);
            }
        }
    }

    let output = Tensor4::concat_batch(&parts)?;
    let mut report = RunReport {
        engine: match cfg.engine {
            Engine::Direct => "direct",
            Engine::Gemm => "gemm",
        }
        .into(),
        workers: cfg.workers,
        images: data.len(),
        batches,
        t_init,
        t_comp,
        mac_count: macs,
        lut: luts.join(","),
        layers: g
            .nodes()
            .iter()
            .zip(node_secs)
            .map(|(n, seconds)| LayerTiming {
                name: n.name.clone(),
                kind: n.kind.name().into(),
                seconds,
            })
            .collect(),
        ..RunReport::default()
    };
    report.set_phases(&phases);
    Ok(BenchResult {
        report,
        predictions: top1(&output),
        output,
    })
}

/// Least-squares line through `(xs, ys)`: slope, intercept and R².
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len().min(ys.len()) as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 {
        1.0
    } else {
        sxy * sxy / (sxx * syy)
    };
    (slope, my - slope * mx, r2)
}
