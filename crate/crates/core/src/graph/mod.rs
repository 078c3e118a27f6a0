//! Inference graphs and the pass that swaps accurate convolutions for
//! approximate ones.
//!
//! The rewrite turns every `Conv2D` node into an `AxConv2D` node fed by a
//! `Min` and a `Max` node over the convolution's data input, so input ranges
//! are measured on every batch. Filter ranges are constant and folded into
//! the new node.

pub(crate) mod builders;
mod exec;

use std::sync::Arc;

pub use builders::{fig1_single_conv, resnet_style, ResNetSpec};
pub use exec::{compare_layers, run, run_traced, LayerCheck, RunOptions, RunTrace};

use crate::axconv::Accumulator;
use crate::axmult::MultLut;
use crate::error::{AxError, Result};
use crate::quantizer::RoundMode;
use crate::tensor::{tensor_min_max, ConvGeometry, Layout, Range, Tensor4};

pub type NodeId = usize;

/// Where a `Conv2D` gets its filters.
#[derive(Debug, Clone, PartialEq)]
pub enum FilterSource {
    /// HWCN weights stored with the node.
    Const(Tensor4),
    /// Produced at run time by the node's second input, reinterpreted with
    /// this HWCN shape.
    Dynamic([usize; 4]),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AxConvAttrs {
    pub filters: Tensor4,
    pub bias: Option<Vec<f32>>,
    pub geometry: ConvGeometry,
    /// Filter range, folded at transform time.
    pub filter_range: Range,
    pub lut: Arc<MultLut>,
    /// Name the table is saved and loaded under.
    pub lut_ref: String,
    pub round: RoundMode,
    pub accumulator: Accumulator,
    pub chunk_size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum NodeKind {
    /// Height, width, channels of one image; the batch extent is free.
    Input {
        shape: [usize; 3],
    },
    Conv2D {
        filters: FilterSource,
        bias: Option<Vec<f32>>,
        geometry: ConvGeometry,
    },
    /// Inputs: data, batch minimum, batch maximum.
    AxConv2D(Box<AxConvAttrs>),
    Min,
    Max,
    ReLU,
    MaxPool {
        window: (usize, usize),
        strides: (usize, usize),
    },
    AvgPool {
        window: (usize, usize),
        strides: (usize, usize),
    },
    Add,
    /// `weights` is `[inputs, units]` row-major.
    Dense {
        weights: Vec<f32>,
        bias: Vec<f32>,
        units: usize,
    },
    Flatten,
    Softmax,
}

impl NodeKind {
    pub fn name(&self) -> &'static str {
        match self {
            NodeKind::Input { .. } => "Input",
            NodeKind::Conv2D { .. } => "Conv2D",
            NodeKind::AxConv2D(_) => "AxConv2D",
            NodeKind::Min => "Min",
            NodeKind::Max => "Max",
            NodeKind::ReLU => "ReLU",
            NodeKind::MaxPool { .. } => "MaxPool",
            NodeKind::AvgPool { .. } => "AvgPool",
            NodeKind::Add => "Add",
            NodeKind::Dense { .. } => "Dense",
            NodeKind::Flatten => "Flatten",
            NodeKind::Softmax => "Softmax",
        }
    }

    fn arity(&self) -> std::ops::RangeInclusive<usize> {
        match self {
            NodeKind::Input { .. } => 0..=0,
            NodeKind::Conv2D {
                filters: FilterSource::Const(_),
                ..
            } => 1..=1,
            NodeKind::Conv2D {
                filters: FilterSource::Dynamic(_),
                ..
            } => 2..=2,
            NodeKind::AxConv2D(_) => 3..=3,
            NodeKind::Add => 2..=2,
            _ => 1..=1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub name: String,
    pub kind: NodeKind,
    pub inputs: Vec<NodeId>,
}

/// Nodes in topological order; the last node is the output.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LayerGraph {
    nodes: Vec<Node>,
}

impl LayerGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_nodes(nodes: Vec<Node>) -> Result<Self> {
        let g = Self { nodes };
        g.validate()?;
        Ok(g)
    }

    /// Appends a node and returns its id. Inputs must already exist.
    pub fn push(
        &mut self,
        name: impl Into<String>,
        kind: NodeKind,
        inputs: &[NodeId],
    ) -> Result<NodeId> {
        let id = self.nodes.len();
        let node = Node {
            name: name.into(),
            kind,
            inputs: inputs.to_vec(),
        };
        check_node(id, &node, &self.nodes)?;
        self.nodes.push(node);
        Ok(id)
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn find(&self, name: &str) -> Option<NodeId> {
        self.nodes.iter().position(|n| n.name == name)
    }

    pub fn count(&self, kind: &str) -> usize {
        self.nodes.iter().filter(|n| n.kind.name() == kind).count()
    }

    pub fn input_shape(&self) -> Option<[usize; 3]> {
        self.nodes.iter().find_map(|n| match n.kind {
            NodeKind::Input { shape } => Some(shape),
            _ => None,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(AxError::Graph("graph has no nodes".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for (id, node) in self.nodes.iter().enumerate() {
            if !seen.insert(node.name.as_str()) {
                return Err(AxError::Graph(format!(
                    "duplicate node name {:?}",
                    node.name
                )));
            }
            check_node(id, node, &self.nodes[..id])?;
        }
        if self.count("Input") != 1 {
            return Err(AxError::Graph("graph needs exactly one Input node".into()));
        }
        Ok(())
    }
}

fn check_node(id: NodeId, node: &Node, before: &[Node]) -> Result<()> {
    if !node.kind.arity().contains(&node.inputs.len()) {
        return Err(AxError::Graph(format!(
            "{} node {:?} takes {:?} inputs, has {}",
            node.kind.name(),
            node.name,
            node.kind.arity(),
            node.inputs.len()
        )));
    }
    if let Some(&bad) = node.inputs.iter().find(|&&i| i >= id) {
        return Err(AxError::Graph(format!(
            "node {:?} reads node {bad}, which does not precede it",
            node.name
        )));
    }
    if let NodeKind::AxConv2D(_) = node.kind {
        let (lo, hi) = (&before[node.inputs[1]], &before[node.inputs[2]]);
        if lo.kind != NodeKind::Min || hi.kind != NodeKind::Max {
            return Err(AxError::Graph(format!(
                "AxConv2D {:?} must read a Min and a Max node, got {} and {}",
                node.name,
                lo.kind.name(),
                hi.kind.name()
            )));
        }
    }
    Ok(())
}

/// Settings given to every approximate layer the rewrite creates.
#[derive(Debug, Clone)]
pub struct AxSettings {
    pub lut: Arc<MultLut>,
    pub lut_ref: String,
    pub round: RoundMode,
    pub accumulator: Accumulator,
    pub chunk_size: usize,
}

impl AxSettings {
    pub fn new(lut: Arc<MultLut>, lut_ref: impl Into<String>) -> Self {
        Self {
            lut,
            lut_ref: lut_ref.into(),
            round: RoundMode::default(),
            accumulator: Accumulator::default(),
            chunk_size: crate::axconv::DEFAULT_CHUNK,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TransformReport {
    pub replaced_count: usize,
    pub inserted_min_max: usize,
    /// Kinds of the nodes left as they were, sorted and deduplicated.
    pub untouched_kinds: Vec<String>,
}

impl std::fmt::Display for TransformReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} layer{} replaced, {} range nodes inserted",
            self.replaced_count,
            if self.replaced_count == 1 { "" } else { "s" },
            self.inserted_min_max
        )
    }
}

/// Replaces every `Conv2D` with an `AxConv2D` fed by new `Min`/`Max` nodes.
pub fn transform(g: &LayerGraph, settings: &AxSettings) -> Result<(LayerGraph, TransformReport)> {
    g.validate()?;
    let mut out = LayerGraph::new();
    let mut remap = Vec::with_capacity(g.len());
    let mut report = TransformReport::default();
    let mut untouched = std::collections::BTreeSet::new();
    let taken: std::collections::HashSet<&str> = g.nodes.iter().map(|n| n.name.as_str()).collect();
    let fresh = |base: String| {
        let mut name = base.clone();
        let mut i = 1;
        while taken.contains(name.as_str()) {
            name = format!("{base}_{i}");
            i += 1;
        }
        name
    };

    for node in &g.nodes {
        let inputs: Vec<NodeId> = node.inputs.iter().map(|&i| remap[i]).collect();
        let id = match &node.kind {
            NodeKind::Conv2D {
                filters,
                bias,
                geometry,
            } => {
                let FilterSource::Const(filters) = filters else {
                    return Err(AxError::Graph(format!(
                        "Conv2D {:?} has non-constant filters",
                        node.name
                    )));
                };
                let filter_range = tensor_min_max(filters)?;
                let lo = out.push(fresh(format!("{}/min", node.name)), NodeKind::Min, &inputs)?;
                let hi = out.push(fresh(format!("{}/max", node.name)), NodeKind::Max, &inputs)?;
                report.replaced_count += 1;
                report.inserted_min_max += 2;
                let attrs = AxConvAttrs {
                    filters: filters.clone(),
                    bias: bias.clone(),
                    geometry: *geometry,
                    filter_range,
                    lut: settings.lut.clone(),
                    lut_ref: settings.lut_ref.clone(),
                    round: settings.round,
                    accumulator: settings.accumulator,
                    chunk_size: settings.chunk_size,
                };
                out.push(
                    node.name.clone(),
                    NodeKind::AxConv2D(Box::new(attrs)),
                    &[inputs[0], lo, hi],
                )?
            }
            kind => {
                untouched.insert(kind.name().to_string());
                out.push(node.name.clone(), kind.clone(), &inputs)?
            }
        };
        remap.push(id);
    }
    report.untouched_kinds = untouched.into_iter().collect();
    Ok((out, report))
}

pub(crate) fn filter_tensor(shape: [usize; 4], data: Vec<f32>) -> Result<Tensor4> {
    Tensor4::new(shape, Layout::Hwcn, data)
}
