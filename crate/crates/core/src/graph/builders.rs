//! Small graphs used by tests, benchmarks and the demo.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::tensor::{ConvGeometry, Padding};

use super::{filter_tensor, FilterSource, LayerGraph, NodeId, NodeKind};

fn gaussian(rng: &mut impl Rng) -> f32 {
    // Box-Muller
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    ((-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()) as f32
}

fn conv_node(
    rng: &mut impl Rng,
    kh: usize,
    cin: usize,
    cout: usize,
    gain: f32,
) -> Result<NodeKind> {
    let std = gain * (2.0 / (kh * kh * cin) as f32).sqrt();
    let filters = filter_tensor(
        [kh, kh, cin, cout],
        (0..kh * kh * cin * cout)
            .map(|_| std * gaussian(rng))
            .collect(),
    )?;
    let bias = (0..cout).map(|_| 0.05 * gaussian(rng)).collect();
    Ok(NodeKind::Conv2D {
        filters: FilterSource::Const(filters),
        bias: Some(bias),
        geometry: ConvGeometry::new((1, 1), (1, 1), Padding::Same),
    })
}

/// Input → 3×3 Conv2D → ReLU on 32×32×3 images.
pub fn fig1_single_conv(filters: usize, seed: u64) -> Result<LayerGraph> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = LayerGraph::new();
    let x = g.push("input", NodeKind::Input { shape: [32, 32, 3] }, &[])?;
    let c = g.push("conv", conv_node(&mut rng, 3, 3, filters, 1.0)?, &[x])?;
    g.push("relu", NodeKind::ReLU, &[c])?;
    Ok(g)
}

/// Shape of a residual CIFAR-style network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ResNetSpec {
    /// Channels of every convolution.
    pub width: usize,
    /// Residual blocks (two convolutions each) per stage; stages are
    /// separated by 2×2 max pooling.
    pub blocks: [usize; 3],
    pub classes: usize,
    pub image: [usize; 3],
}

impl ResNetSpec {
    /// Seven convolutions: the stem plus one block in each of three stages.
    pub fn resnet8(width: usize) -> Self {
        Self {
            width,
            blocks: [1, 1, 1],
            classes: 10,
            image: [32, 32, 3],
        }
    }

    pub fn conv_layers(&self) -> usize {
        1 + 2 * self.blocks.iter().sum::<usize>()
    }

    /// Multiply-accumulates of all convolutions for one image.
    pub fn conv_macs(&self) -> u64 {
        let [h, w, c] = self.image;
        let k = 9;
        let mut macs = (h * w * k * c * self.width) as u64;
        for (s, &b) in self.blocks.iter().enumerate() {
            let area = (h >> s) * (w >> s);
            macs += (2 * b * area * k * self.width * self.width) as u64;
        }
        macs
    }
}

/// Randomly initialized residual network whose last node is a softmax over
/// `spec.classes`.
pub fn resnet_style(spec: &ResNetSpec, seed: u64) -> Result<LayerGraph> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = LayerGraph::new();
    let w = spec.width;
    let x = g.push("input", NodeKind::Input { shape: spec.image }, &[])?;
    let stem = g.push(
        "conv0",
        conv_node(&mut rng, 3, spec.image[2], w, 1.0)?,
        &[x],
    )?;
    let mut cur: NodeId = g.push("relu0", NodeKind::ReLU, &[stem])?;
    let mut side = (spec.image[0], spec.image[1]);
    let mut layer = 1;
    for (s, &blocks) in spec.blocks.iter().enumerate() {
        if s > 0 {
            cur = g.push(
                format!("pool{s}"),
                NodeKind::MaxPool {
                    window: (2, 2),
                    strides: (2, 2),
                },
                &[cur],
            )?;
            side = (side.0 / 2, side.1 / 2);
        }
        for b in 0..blocks {
            let tag = format!("s{s}b{b}");
            let c1 = g.push(
                format!("conv{layer}"),
                conv_node(&mut rng, 3, w, w, 1.0)?,
                &[cur],
            )?;
            let r1 = g.push(format!("{tag}/relu"), NodeKind::ReLU, &[c1])?;
            let c2 = g.push(
                format!("conv{}", layer + 1),
                conv_node(&mut rng, 3, w, w, 0.5)?,
                &[r1],
            )?;
            let sum = g.push(format!("{tag}/add"), NodeKind::Add, &[cur, c2])?;
            cur = g.push(format!("{tag}/out"), NodeKind::ReLU, &[sum])?;
            layer += 2;
        }
    }
    let gap = g.push(
        "gap",
        NodeKind::AvgPool {
            window: side,
            strides: side,
        },
        &[cur],
    )?;
    let flat = g.push("flatten", NodeKind::Flatten, &[gap])?;
    let std = (1.0 / w as f32).sqrt();
    let weights = (0..w * spec.classes)
        .map(|_| std * gaussian(&mut rng))
        .collect();
    let logits = g.push(
        "logits",
        NodeKind::Dense {
            weights,
            bias: vec![0.0; spec.classes],
            units: spec.classes,
        },
        &[flat],
    )?;
    g.push("softmax", NodeKind::Softmax, &[logits])?;
    Ok(g)
}

/// Replaces the weights of the graph's `Dense` node named `name`.
pub(crate) fn set_dense(
    g: &mut LayerGraph,
    name: &str,
    weights: Vec<f32>,
    bias: Vec<f32>,
) -> Result<()> {
    let id = g
        .find(name)
        .ok_or_else(|| crate::error::AxError::Graph(format!("no node {name:?}")))?;
    match &mut g.nodes[id].kind {
        NodeKind::Dense {
            weights: w,
            bias: b,
            units,
        } if w.len() == weights.len() && bias.len() == *units => {
            *w = weights;
            *b = bias;
            Ok(())
        }
        _ => Err(crate::error::AxError::Graph(format!(
            "{name:?} is not a matching Dense node"
        ))),
    }
}
