//! Dense 4D tensors, their two layouts, and convolution geometry.

use serde::{Deserialize, Serialize};

use crate::error::{AxError, Result};

/// Memory layout of a [`Tensor4`]. The last extent changes fastest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Layout {
    /// Batch × Height × Width × Channels (images, activations).
    Nhwc,
    /// Height × Width × Channels × Count (convolution filters).
    Hwcn,
}

impl Layout {
    pub fn to_byte(self) -> u8 {
        match self {
            Layout::Nhwc => 0,
            Layout::Hwcn => 1,
        }
    }

    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(Layout::Nhwc),
            1 => Some(Layout::Hwcn),
            _ => None,
        }
    }
}

pub type Shape4 = [usize; 4];

fn checked_len(shape: &Shape4) -> Result<usize> {
    shape
        .iter()
        .try_fold(1usize, |acc, &e| acc.checked_mul(e))
        .ok_or_else(|| AxError::Shape(format!("extents {shape:?} overflow the element count")))
}

/// Dense tensor of `f32` with four extents.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4 {
    shape: Shape4,
    layout: Layout,
    data: Vec<f32>,
}

impl Tensor4 {
    pub fn new(shape: Shape4, layout: Layout, data: Vec<f32>) -> Result<Self> {
        let len = checked_len(&shape)?;
        if data.len() != len {
            return Err(AxError::Shape(format!(
                "{} values do not fill shape {shape:?} ({len} elements)",
                data.len()
            )));
        }
        Ok(Self {
            shape,
            layout,
            data,
        })
    }

    pub fn zeros(shape: Shape4, layout: Layout) -> Result<Self> {
        let len = checked_len(&shape)?;
        Ok(Self {
            shape,
            layout,
            data: vec![0.0; len],
        })
    }

    pub fn from_fn(
        shape: Shape4,
        layout: Layout,
        mut f: impl FnMut(Shape4) -> f32,
    ) -> Result<Self> {
        let mut t = Self::zeros(shape, layout)?;
        for off in 0..t.data.len() {
            t.data[off] = f(t.unflatten(off));
        }
        Ok(t)
    }

    pub fn shape(&self) -> Shape4 {
        self.shape
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Flat offset of a 4D index.
    #[inline]
    pub fn flatten(&self, idx: Shape4) -> usize {
        let [_, b, c, d] = self.shape;
        ((idx[0] * b + idx[1]) * c + idx[2]) * d + idx[3]
    }

    /// 4D index of a flat offset.
    #[inline]
    pub fn unflatten(&self, mut off: usize) -> Shape4 {
        let [_, b, c, d] = self.shape;
        let i3 = off % d;
        off /= d;
        let i2 = off % c;
        off /= c;
        let i1 = off % b;
        [off / b, i1, i2, i3]
    }

    #[inline]
    pub fn at(&self, idx: Shape4) -> f32 {
        self.data[self.flatten(idx)]
    }

    /// Same data, new extents with the same element count.
    pub fn reshape(self, shape: Shape4, layout: Layout) -> Result<Self> {
        Self::new(shape, layout, self.data)
    }

    /// Images `start..end` of an NHWC tensor.
    pub fn batch_slice(&self, start: usize, end: usize) -> Result<Self> {
        if self.layout != Layout::Nhwc || start > end || end > self.shape[0] {
            return Err(AxError::Shape(format!(
                "cannot take images {start}..{end} of {:?} {:?}",
                self.layout, self.shape
            )));
        }
        let per = self.shape[1] * self.shape[2] * self.shape[3];
        Self::new(
            [end - start, self.shape[1], self.shape[2], self.shape[3]],
            Layout::Nhwc,
            self.data[start * per..end * per].to_vec(),
        )
    }

    /// Concatenates NHWC tensors along the batch axis.
    pub fn concat_batch(parts: &[Tensor4]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| AxError::Shape("nothing to concatenate".into()))?;
        let [_, h, w, c] = first.shape;
        let mut n = 0;
        let mut data = Vec::new();
        for p in parts {
            if p.layout != Layout::Nhwc || p.shape[1..] != [h, w, c] {
                return Err(AxError::Shape(format!(
                    "cannot concatenate {:?} with {:?}",
                    p.shape, first.shape
                )));
            }
            n += p.shape[0];
            data.extend_from_slice(&p.data);
        }
        Self::new([n, h, w, c], Layout::Nhwc, data)
    }
}

/// Closed real interval observed over a tensor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

impl Range {
    pub fn new(min: f64, max: f64) -> Result<Self> {
        if !min.is_finite() || !max.is_finite() || min > max {
            return Err(AxError::InvalidRange { min, max });
        }
        Ok(Self { min, max })
    }

    /// Smallest interval containing both this range and zero.
    pub fn with_zero(self) -> Self {
        Self {
            min: self.min.min(0.0),
            max: self.max.max(0.0),
        }
    }
}

/// Exact elementwise minimum and maximum. NaN and infinities are rejected.
pub fn tensor_min_max(t: &Tensor4) -> Result<Range> {
    min_max(t.data())
}

pub fn min_max(values: &[f32]) -> Result<Range> {
    if values.is_empty() {
        return Err(AxError::EmptyTensor);
    }
    let mut lo = f32::INFINITY;
    let mut hi = f32::NEG_INFINITY;
    for (offset, &v) in values.iter().enumerate() {
        if !v.is_finite() {
            return Err(AxError::NonFinite {
                value: v as f64,
                offset,
            });
        }
        lo = lo.min(v);
        hi = hi.max(v);
    }
    Range::new(lo as f64, hi as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Padding {
    Valid,
    /// Output extent is `ceil(in / stride)`; odd padding puts the extra cell
    /// on the bottom/right.
    Same,
    Explicit {
        top: usize,
        bottom: usize,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvGeometry {
    pub strides: (usize, usize),
    pub dilations: (usize, usize),
    pub padding: Padding,
}

impl Default for ConvGeometry {
    fn default() -> Self {
        Self {
            strides: (1, 1),
            dilations: (1, 1),
            padding: Padding::Valid,
        }
    }
}

/// Concrete window placement for one (input, kernel) pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Placement {
    pub out_h: usize,
    pub out_w: usize,
    pub pad_top: usize,
    pub pad_left: usize,
    pub stride_h: usize,
    pub stride_w: usize,
    pub dil_h: usize,
    pub dil_w: usize,
}

fn axis(
    input: usize,
    kernel: usize,
    stride: usize,
    dilation: usize,
    pad: Option<(usize, usize)>,
    name: &str,
) -> Result<(usize, usize)> {
    if kernel == 0 {
        return Err(AxError::Geometry(format!("zero kernel {name}")));
    }
    let extent = (kernel - 1) * dilation + 1;
    let (before, after) = match pad {
        Some(p) => p,
        None => {
            // Same
            let out = input.div_ceil(stride);
            let needed = (out.saturating_sub(1) * stride + extent).saturating_sub(input);
            (needed / 2, needed - needed / 2)
        }
    };
    let padded = input + before + after;
    if padded < extent {
        return Err(AxError::Geometry(format!(
            "dilated kernel {name} {extent} exceeds padded input {padded}"
        )));
    }
    Ok(((padded - extent) / stride + 1, before))
}

impl ConvGeometry {
    pub fn new(strides: (usize, usize), dilations: (usize, usize), padding: Padding) -> Self {
        Self {
            strides,
            dilations,
            padding,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.strides.0 == 0 || self.strides.1 == 0 {
            return Err(AxError::Geometry(format!(
                "strides {:?} must be positive",
                self.strides
            )));
        }
        if self.dilations.0 == 0 || self.dilations.1 == 0 {
            return Err(AxError::Geometry(format!(
                "dilations {:?} must be positive",
                self.dilations
            )));
        }
        Ok(())
    }

    /// Output extents and leading padding for an `in_h × in_w` image under a
    /// `kh × kw` kernel.
    pub fn place(&self, in_h: usize, in_w: usize, kh: usize, kw: usize) -> Result<Placement> {
        self.validate()?;
        let (pad_h, pad_w) = match self.padding {
            Padding::Valid => (Some((0, 0)), Some((0, 0))),
            Padding::Same => (None, None),
            Padding::Explicit {
                top,
                bottom,
                left,
                right,
            } => (Some((top, bottom)), Some((left, right))),
        };
        let (out_h, pad_top) = axis(in_h, kh, self.strides.0, self.dilations.0, pad_h, "height")?;
        let (out_w, pad_left) = axis(in_w, kw, self.strides.1, self.dilations.1, pad_w, "width")?;
        Ok(Placement {
            out_h,
            out_w,
            pad_top,
            pad_left,
            stride_h: self.strides.0,
            stride_w: self.strides.1,
            dil_h: self.dilations.0,
            dil_w: self.dilations.1,
        })
    }
}

impl Placement {
    /// Input row/column sampled by output `(oy, ox)` at kernel tap `(ky, kx)`,
    /// or `None` when the tap falls into padding.
    #[inline]
    pub fn source(
        &self,
        oy: usize,
        ox: usize,
        ky: usize,
        kx: usize,
        in_h: usize,
        in_w: usize,
    ) -> Option<(usize, usize)> {
        let y = (oy * self.stride_h + ky * self.dil_h).checked_sub(self.pad_top)?;
        let x = (ox * self.stride_w + kx * self.dil_w).checked_sub(self.pad_left)?;
        (y < in_h && x < in_w).then_some((y, x))
    }
}

/// NHWC output shape of convolving `input_shape` (NHWC) with `filter_shape`
/// (HWCN).
pub fn output_shape(
    input_shape: Shape4,
    filter_shape: Shape4,
    geometry: &ConvGeometry,
) -> Result<Shape4> {
    let [n, h, w, c] = input_shape;
    let [kh, kw, fc, count] = filter_shape;
    if fc != c {
        return Err(AxError::Shape(format!(
            "filter expects {fc} input channels, input has {c}"
        )));
    }
    let p = geometry.place(h, w, kh, kw)?;
    Ok([n, p.out_h, p.out_w, count])
}
