//! Emulation of DNN accelerators whose multipliers are approximate 8-bit
//! circuits given as truth tables.
//!
//! - [`tensor`]: NHWC/HWCN tensors, ranges, convolution geometry
//! - [`quantizer`]: affine 8-bit quantization
//! - [`axmult`]: 256×256 multiplier truth tables
//! - [`axconv`]: reference and image-to-columns/GEMM approximate convolution
//! - [`graph`]: layer graphs and the Conv2D → AxConv2D rewrite
//! - [`formats`]: on-disk tensors, tables, models, CIFAR-10 batches, reports
//! - [`synth`]: synthetic CIFAR-format data and a fitted classifier
//! - [`bench`]: t_init/t_comp benchmark harness

pub mod axconv;
pub mod axmult;
pub mod bench;
pub mod error;
pub mod formats;
pub mod graph;
pub mod parallel;
pub mod profile;
pub mod quantizer;
pub mod synth;
pub mod tensor;

pub use axconv::{axconv2d, direct_conv, Accumulator, ConvConfig, Engine};
pub use axmult::{error_stats, exact_lut, truncated_lut, LutErrorStats, MultLut};
pub use error::{AxError, Result};
pub use graph::{LayerGraph, NodeKind, TransformReport};
pub use quantizer::{
    compute_coeffs, dequantize, quantize, QuantParams, QuantTensor, RoundMode, Signedness,
};
pub use tensor::{output_shape, tensor_min_max, ConvGeometry, Layout, Padding, Range, Tensor4};
