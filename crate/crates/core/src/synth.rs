//! Deterministic stand-ins for CIFAR-10 data and a trained classifier.
//!
//! Images of class `c` are stripes at angle `c·18°` tinted with the class
//! colour, under random phase, contrast and pixel noise. The classifier is a
//! [`resnet_style`] network with random convolutions whose dense head is
//! fitted by ridge regression on pooled features of a separate sample.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{AxError, Result};
use crate::formats::{decode_cifar10, Cifar10Batch, CIFAR_RECORD};
use crate::graph::builders::set_dense;
use crate::graph::{resnet_style, run, LayerGraph, NodeKind, ResNetSpec};
use crate::tensor::Tensor4;

pub const CLASSES: usize = 10;

const PALETTE: [[f64; 3]; CLASSES] = [
    [0.85, 0.25, 0.20],
    [0.20, 0.70, 0.25],
    [0.20, 0.35, 0.85],
    [0.85, 0.80, 0.20],
    [0.70, 0.25, 0.75],
    [0.20, 0.75, 0.75],
    [0.90, 0.55, 0.20],
    [0.50, 0.50, 0.50],
    [0.55, 0.35, 0.20],
    [0.40, 0.80, 0.50],
];

/// Encodes `n` synthetic images in the CIFAR-10 binary layout.
pub fn synth_cifar_bytes(n: usize, seed: u64) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n * CIFAR_RECORD);
    for _ in 0..n {
        let label = rng.gen_range(0..CLASSES);
        let theta = label as f64 * PI / CLASSES as f64;
        let (c, s) = (theta.cos(), theta.sin());
        let freq = 2.0 + (label % 3) as f64;
        let phase: f64 = rng.gen_range(0.0..2.0 * PI);
        let contrast: f64 = rng.gen_range(0.25..0.5);
        let tint: [f64; 3] =
            std::array::from_fn(|ch| PALETTE[label][ch] + rng.gen_range(-0.1..0.1));
        out.push(label as u8);
        let mut planes = [[0u8; 1024]; 3];
        for y in 0..32 {
            for x in 0..32 {
                let t = 2.0 * PI * freq * (x as f64 * c + y as f64 * s) / 32.0 + phase;
                let stripe = 1.0 - contrast + contrast * t.sin();
                for (ch, plane) in planes.iter_mut().enumerate() {
                    let v = tint[ch] * stripe + rng.gen_range(-0.08..0.08);
                    plane[y * 32 + x] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
                }
            }
        }
        for plane in &planes {
            out.extend_from_slice(plane);
        }
    }
    out
}

pub fn synth_cifar(n: usize, seed: u64) -> Result<Cifar10Batch> {
    decode_cifar10(&synth_cifar_bytes(n, seed))
}

/// The graph up to and including the node named `name`.
fn prefix(g: &LayerGraph, name: &str) -> Result<LayerGraph> {
    let id = g
        .find(name)
        .ok_or_else(|| AxError::Graph(format!("no node {name:?}")))?;
    LayerGraph::from_nodes(g.nodes()[..=id].to_vec())
}

/// Refits the `Dense` node `head` of `g` by ridge regression from the
/// features feeding it to one-hot labels. Returns training accuracy.
pub fn fit_head(g: &mut LayerGraph, head: &str, data: &Cifar10Batch, ridge: f64) -> Result<f64> {
    let id = g
        .find(head)
        .ok_or_else(|| AxError::Graph(format!("no node {head:?}")))?;
    let (feed, units) = match &g.nodes()[id].kind {
        NodeKind::Dense { units, .. } => (g.nodes()[id].inputs[0], *units),
        _ => return Err(AxError::Graph(format!("{head:?} is not Dense"))),
    };
    let features = prefix(g, &g.nodes()[feed].name.clone())?;
    let mut rows: Vec<f32> = Vec::new();
    for start in (0..data.len()).step_by(250) {
        let part = data
            .images
            .batch_slice(start, (start + 250).min(data.len()))?;
        rows.extend_from_slice(run(&features, &part)?.data());
    }
    let d = rows.len() / data.len().max(1);
    if d == 0 {
        return Err(AxError::EmptyTensor);
    }

    // Normal equations over [features, 1].
    let dim = d + 1;
    let mut a = vec![0f64; dim * dim];
    let mut b = vec![0f64; dim * units];
    let mut x = vec![1f64; dim];
    for (row, &label) in rows.chunks_exact(d).zip(&data.labels) {
        for (xi, &r) in x.iter_mut().zip(row) {
            *xi = r as f64;
        }
        for i in 0..dim {
            for j in 0..dim {
                a[i * dim + j] += x[i] * x[j];
            }
            b[i * units + label as usize] += x[i];
        }
    }
    for i in 0..d {
        a[i * dim + i] += ridge * data.len() as f64;
    }
    let w = solve_spd(&a, &b, dim, units)?;
    let weights = w[..d * units].iter().map(|&v| v as f32).collect();
    let bias = w[d * units..].iter().map(|&v| v as f32).collect();
    set_dense(g, head, weights, bias)?;

    let scores = prefix(g, head)?;
    let mut correct = 0;
    for start in (0..data.len()).step_by(250) {
        let end = (start + 250).min(data.len());
        let out = run(&scores, &data.images.batch_slice(start, end)?)?;
        correct += top1(&out)
            .iter()
            .zip(&data.labels[start..end])
            .filter(|(p, l)| p == l)
            .count();
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Solves `A X = B` for symmetric positive definite `A` by Cholesky.
fn solve_spd(a: &[f64], b: &[f64], n: usize, m: usize) -> Result<Vec<f64>> {
    let mut l = vec![0f64; n * n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = a[i * n + j] - (0..j).map(|k| l[i * n + k] * l[j * n + k]).sum::<f64>();
            if i == j {
                if s <= 0.0 {
                    return Err(AxError::InvalidParams(
                        "ridge system is not positive definite".into(),
                    ));
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    let mut x = b.to_vec();
    for c in 0..m {
        for i in 0..n {
            let s: f64 = (0..i).map(|k| l[i * n + k] * x[k * m + c]).sum();
            x[i * m + c] = (x[i * m + c] - s) / l[i * n + i];
        }
        for i in (0..n).rev() {
            let s: f64 = (i + 1..n).map(|k| l[k * n + i] * x[k * m + c]).sum();
            x[i * m + c] = (x[i * m + c] - s) / l[i * n + i];
        }
    }
    Ok(x)
}

/// Index of the largest value of each image's output, first on ties.
pub fn top1(out: &Tensor4) -> Vec<u8> {
    let n = out.shape()[0];
    let per = out.len() / n.max(1);
    out.data()
        .chunks_exact(per.max(1))
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f32::NEG_INFINITY), |best, (i, &v)| {
                    if v > best.1 {
                        (i, v)
                    } else {
                        best
                    }
                })
                .0 as u8
        })
        .collect()
}

/// Fraction of positions where `a` and `b` agree.
pub fn agreement(a: &[u8], b: &[u8]) -> f64 {
    if a.is_empty() {
        return 1.0;
    }
    a.iter().zip(b).filter(|(x, y)| x == y).count() as f64 / a.len().max(b.len()) as f64
}

/// Seed of the sample the head of [`pretrained`] is fitted on.
pub const TRAIN_SEED: u64 = 0x7EA1;

/// [`resnet_style`] network with its head fitted to [`synth_cifar`] data.
pub fn pretrained(spec: &ResNetSpec, seed: u64) -> Result<LayerGraph> {
    let mut g = resnet_style(spec, seed)?;
    let train = synth_cifar(2000, TRAIN_SEED ^ seed)?;
    fit_head(&mut g, "logits", &train, 1e-4)?;
    Ok(g)
}
