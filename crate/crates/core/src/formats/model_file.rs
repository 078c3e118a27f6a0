//! Model files: a TOML document describing the nodes, and a sidecar blob of
//! little-endian `f32` weights that the document points into.
//!
//! ```toml
//! format = "axemu-model/1"
//! weights = "net.bin"            # relative to the document
//!
//! [[node]]
//! name = "input"
//! kind = "Input"
//! shape = [32, 32, 3]
//!
//! [[node]]
//! name = "conv0"
//! kind = "Conv2D"
//! inputs = ["input"]
//! filters = { shape = [3, 3, 3, 16], offset = 0 }   # HWCN, byte offset
//! bias = { shape = [16], offset = 1728 }
//! strides = [1, 1]
//! dilations = [1, 1]
//! padding = "same"                # "valid", "same" or [top, bottom, left, right]
//! ```
//!
//! `AxConv2D` nodes list `[data, min, max]` as inputs and add `filter_range`,
//! `lut` (a table file, relative to the document), `round`, `accumulator`
//! and `chunk_size`. Pools carry `window` and `strides`; `Dense` carries
//! `units`, `weights` (`[inputs, units]`) and `bias`. A `Conv2D` whose
//! filters come from its second input gives `filter_shape` instead of
//! `filters`.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::axconv::Accumulator;
use crate::axmult::MultLut;
use crate::error::{AxError, Result};
use crate::graph::{AxConvAttrs, FilterSource, LayerGraph, Node, NodeKind};
use crate::quantizer::RoundMode;
use crate::tensor::{ConvGeometry, Layout, Padding, Range, Tensor4};

use super::{read_file, write_file};

pub const MODEL_FORMAT: &str = "axemu-model/1";

/// Supplies the table named by an `AxConv2D` node.
pub type LutResolver<'a> = dyn FnMut(&str) -> Result<Arc<MultLut>> + 'a;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDoc {
    format: String,
    weights: String,
    #[serde(default, rename = "node")]
    nodes: Vec<NodeDoc>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Blob {
    shape: Vec<usize>,
    offset: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum PaddingDoc {
    Named(String),
    Explicit([usize; 4]),
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeDoc {
    name: String,
    kind: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    inputs: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    shape: Option<[usize; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    filters: Option<Blob>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    filter_shape: Option<[usize; 4]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bias: Option<Blob>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    weights: Option<Blob>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    units: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    strides: Option<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dilations: Option<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    padding: Option<PaddingDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    window: Option<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    filter_range: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lut: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    round: Option<RoundMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    accumulator: Option<Accumulator>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    chunk_size: Option<usize>,
}

fn malformed(reason: impl Into<String>) -> AxError {
    AxError::Format {
        what: "model file".into(),
        reason: reason.into(),
    }
}

struct BlobWriter(Vec<u8>);

impl BlobWriter {
    fn put(&mut self, shape: &[usize], values: &[f32]) -> Blob {
        let offset = self.0.len() as u64;
        for v in values {
            self.0.extend_from_slice(&v.to_le_bytes());
        }
        Blob {
            shape: shape.to_vec(),
            offset,
        }
    }
}

fn geometry_doc(doc: &mut NodeDoc, g: &ConvGeometry) {
    doc.strides = Some([g.strides.0, g.strides.1]);
    doc.dilations = Some([g.dilations.0, g.dilations.1]);
    doc.padding = Some(match g.padding {
        Padding::Valid => PaddingDoc::Named("valid".into()),
        Padding::Same => PaddingDoc::Named("same".into()),
        Padding::Explicit {
            top,
            bottom,
            left,
            right,
        } => PaddingDoc::Explicit([top, bottom, left, right]),
    });
}

/// Writes `g` to `path` and its weights next to it with a `.bin` extension.
pub fn save_model(g: &LayerGraph, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    g.validate()?;
    let blob_path = path.with_extension("bin");
    let mut blob = BlobWriter(Vec::new());
    let mut nodes = Vec::with_capacity(g.len());
    for node in g.nodes() {
        let mut doc = NodeDoc {
            name: node.name.clone(),
            kind: node.kind.name().into(),
            inputs: node
                .inputs
                .iter()
                .map(|&i| g.nodes()[i].name.clone())
                .collect(),
            ..NodeDoc::default()
        };
        match &node.kind {
            NodeKind::Input { shape } => doc.shape = Some(*shape),
            NodeKind::Conv2D {
                filters,
                bias,
                geometry,
            } => {
                match filters {
                    FilterSource::Const(f) => doc.filters = Some(blob.put(&f.shape(), f.data())),
                    FilterSource::Dynamic(shape) => doc.filter_shape = Some(*shape),
                }
                doc.bias = bias.as_ref().map(|b| blob.put(&[b.len()], b));
                geometry_doc(&mut doc, geometry);
            }
            NodeKind::AxConv2D(a) => {
                doc.filters = Some(blob.put(&a.filters.shape(), a.filters.data()));
                doc.bias = a.bias.as_ref().map(|b| blob.put(&[b.len()], b));
                geometry_doc(&mut doc, &a.geometry);
                doc.filter_range = Some([a.filter_range.min, a.filter_range.max]);
                doc.lut = Some(a.lut_ref.clone());
                doc.round = Some(a.round);
                doc.accumulator = Some(a.accumulator);
                doc.chunk_size = Some(a.chunk_size);
            }
            NodeKind::MaxPool { window, strides } | NodeKind::AvgPool { window, strides } => {
                doc.window = Some([window.0, window.1]);
                doc.strides = Some([strides.0, strides.1]);
            }
            NodeKind::Dense {
                weights,
                bias,
                units,
            } => {
                doc.units = Some(*units);
                doc.weights = Some(blob.put(&[weights.len() / units.max(&1), *units], weights));
                doc.bias = Some(blob.put(&[bias.len()], bias));
            }
            NodeKind::Min
            | NodeKind::Max
            | NodeKind::ReLU
            | NodeKind::Add
            | NodeKind::Flatten
            | NodeKind::Softmax => {}
        }
        nodes.push(doc);
    }
    let doc = ModelDoc {
        format: MODEL_FORMAT.into(),
        weights: blob_path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .ok_or_else(|| malformed("model path has no file name"))?,
        nodes,
    };
    let text = toml::to_string(&doc).map_err(|e| malformed(e.to_string()))?;
    write_file(&blob_path, &blob.0)?;
    write_file(path, text.as_bytes())
}

struct BlobReader<'a> {
    bytes: &'a [u8],
}

impl BlobReader<'_> {
    fn get(&self, blob: &Blob, what: &str) -> Result<Vec<f32>> {
        let count: usize = blob.shape.iter().product();
        let start = blob.offset as usize;
        let end = start + 4 * count;
        if end > self.bytes.len() || !blob.offset.is_multiple_of(4) {
            return Err(AxError::Size {
                what: format!("weights of {what} at byte {}", blob.offset),
                expected: end as u64,
                actual: self.bytes.len() as u64,
            });
        }
        Ok(self.bytes[start..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

fn need<T>(v: Option<T>, node: &str, field: &str) -> Result<T> {
    v.ok_or_else(|| malformed(format!("node {node:?} lacks {field}")))
}

fn parse_geometry(doc: &NodeDoc) -> Result<ConvGeometry> {
    let s = doc.strides.unwrap_or([1, 1]);
    let d = doc.dilations.unwrap_or([1, 1]);
    let padding = match &doc.padding {
        None => Padding::Valid,
        Some(PaddingDoc::Named(n)) if n.eq_ignore_ascii_case("valid") => Padding::Valid,
        Some(PaddingDoc::Named(n)) if n.eq_ignore_ascii_case("same") => Padding::Same,
        Some(PaddingDoc::Named(n)) => return Err(malformed(format!("unknown padding {n:?}"))),
        Some(PaddingDoc::Explicit([top, bottom, left, right])) => Padding::Explicit {
            top: *top,
            bottom: *bottom,
            left: *left,
            right: *right,
        },
    };
    let g = ConvGeometry::new((s[0], s[1]), (d[0], d[1]), padding);
    g.validate()?;
    Ok(g)
}

fn filters4(blob: &Blob, reader: &BlobReader, name: &str) -> Result<Tensor4> {
    let shape: [usize; 4] = blob
        .shape
        .as_slice()
        .try_into()
        .map_err(|_| malformed(format!("filters of {name:?} need 4 extents")))?;
    Tensor4::new(shape, Layout::Hwcn, reader.get(blob, name)?)
}

/// Reads a model, asking `resolve_lut` for the table behind each
/// `AxConv2D` node's `lut` reference.
pub fn load_model_with(
    path: impl AsRef<Path>,
    resolve_lut: &mut LutResolver,
) -> Result<LayerGraph> {
    let path = path.as_ref();
    let text = String::from_utf8(read_file(path)?).map_err(|e| malformed(e.to_string()))?;
    let doc: ModelDoc = toml::from_str(&text).map_err(|e| malformed(e.to_string()))?;
    if doc.format != MODEL_FORMAT {
        return Err(malformed(format!(
            "format {:?}, expected {MODEL_FORMAT:?}",
            doc.format
        )));
    }
    let blob_bytes = read_file(&path.parent().unwrap_or(Path::new("")).join(&doc.weights))?;
    let reader = BlobReader { bytes: &blob_bytes };
    let mut ids = HashMap::new();
    let mut nodes = Vec::with_capacity(doc.nodes.len());
    for (id, nd) in doc.nodes.iter().enumerate() {
        let name = nd.name.as_str();
        let inputs = nd
            .inputs
            .iter()
            .map(|i| {
                ids.get(i.as_str()).copied().ok_or_else(|| {
                    malformed(format!("node {name:?} reads unknown or later node {i:?}"))
                })
            })
            .collect::<Result<Vec<usize>>>()?;
        let bias = |reader: &BlobReader| -> Result<Option<Vec<f32>>> {
            nd.bias.as_ref().map(|b| reader.get(b, name)).transpose()
        };
        let kind = match nd.kind.as_str() {
            "Input" => NodeKind::Input {
                shape: need(nd.shape, name, "shape")?,
            },
            "Conv2D" => {
                let filters = match (&nd.filters, nd.filter_shape) {
                    (Some(b), None) => FilterSource::Const(filters4(b, &reader, name)?),
                    (None, Some(shape)) => FilterSource::Dynamic(shape),
                    _ => {
                        return Err(malformed(format!(
                            "Conv2D {name:?} needs exactly one of filters, filter_shape"
                        )))
                    }
                };
                NodeKind::Conv2D {
                    filters,
                    bias: bias(&reader)?,
                    geometry: parse_geometry(nd)?,
                }
            }
            "AxConv2D" => {
                let lut_ref = need(nd.lut.clone(), name, "lut")?;
                let [lo, hi] = need(nd.filter_range, name, "filter_range")?;
                NodeKind::AxConv2D(Box::new(AxConvAttrs {
                    filters: filters4(need(nd.filters.as_ref(), name, "filters")?, &reader, name)?,
                    bias: bias(&reader)?,
                    geometry: parse_geometry(nd)?,
                    filter_range: Range::new(lo, hi)?,
                    lut: resolve_lut(&lut_ref)?,
                    lut_ref,
                    round: nd.round.unwrap_or_default(),
                    accumulator: nd.accumulator.unwrap_or_default(),
                    chunk_size: nd.chunk_size.unwrap_or(crate::axconv::DEFAULT_CHUNK),
                }))
            }
            "MaxPool" | "AvgPool" => {
                let w = need(nd.window, name, "window")?;
                let s = nd.strides.unwrap_or(w);
                let (window, strides) = ((w[0], w[1]), (s[0], s[1]));
                if nd.kind == "MaxPool" {
                    NodeKind::MaxPool { window, strides }
                } else {
                    NodeKind::AvgPool { window, strides }
                }
            }
            "Dense" => NodeKind::Dense {
                units: need(nd.units, name, "units")?,
                weights: reader.get(need(nd.weights.as_ref(), name, "weights")?, name)?,
                bias: reader.get(need(nd.bias.as_ref(), name, "bias")?, name)?,
            },
            "Min" => NodeKind::Min,
            "Max" => NodeKind::Max,
            "ReLU" => NodeKind::ReLU,
            "Add" => NodeKind::Add,
            "Flatten" => NodeKind::Flatten,
            "Softmax" => NodeKind::Softmax,
            other => {
                return Err(malformed(format!(
                    "node {name:?} has unsupported kind {other:?}"
                )))
            }
        };
        if ids.insert(name, id).is_some() {
            return Err(malformed(format!("duplicate node name {name:?}")));
        }
        nodes.push(Node {
            name: nd.name.clone(),
            kind,
            inputs,
        });
    }
    LayerGraph::from_nodes(nodes)
}

/// Reads a model. With `lut`, every approximate layer uses that table;
/// otherwise each `lut` reference is loaded as a table file relative to the
/// model document.
pub fn load_model(path: impl AsRef<Path>, lut: Option<Arc<MultLut>>) -> Result<LayerGraph> {
    let path = path.as_ref();
    let base: PathBuf = path.parent().unwrap_or(Path::new("")).to_path_buf();
    let mut cache: HashMap<String, Arc<MultLut>> = HashMap::new();
    let mut resolve = |r: &str| -> Result<Arc<MultLut>> {
        if let Some(l) = &lut {
            return Ok(l.clone());
        }
        if let Some(l) = cache.get(r) {
            return Ok(l.clone());
        }
        let l = Arc::new(super::load_lut(base.join(r))?);
        cache.insert(r.to_string(), l.clone());
        Ok(l)
    };
    load_model_with(path, &mut resolve)
}
