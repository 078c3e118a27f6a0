use crate::error::{AxError, Result};
use crate::parallel;
use crate::quantizer::QuantParams;
use crate::tensor::{ConvGeometry, Layout, Tensor4};

/// Quantized patch matrix of one chunk.
///
/// Row `r` is the window of output position `r` (image-major, then row,
/// then column), flattened in `(ky, kx, channel)` order. Taps that fall in
/// padding hold the zero-point code.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchMatrix {
    pub rows: usize,
    /// Patch length `K = kh * kw * cin`.
    pub cols: usize,
    /// `rows * cols` raw code bytes.
    pub codes: Vec<u8>,
    /// Integer sum of each row's codes, padding taps included.
    pub patch_sums: Vec<i32>,
}

impl PatchMatrix {
    pub fn row(&self, r: usize) -> &[u8] {
        &self.codes[r * self.cols..(r + 1) * self.cols]
    }
}

/// Rows per parallel work item.
const ROW_BLOCK: usize = 32;

/// Builds the quantized patch matrix of an NHWC `chunk` for a `kh × kw`
/// kernel.
pub fn im2cols(
    chunk: &Tensor4,
    p1: &QuantParams,
    geometry: &ConvGeometry,
    kh: usize,
    kw: usize,
) -> Result<PatchMatrix> {
    if chunk.layout() != Layout::Nhwc {
        return Err(AxError::Shape("image-to-columns input must be NHWC".into()));
    }
    p1.validate()?;
    let [n, ih, iw, cin] = chunk.shape();
    let place = geometry.place(ih, iw, kh, kw)?;
    let rows = n * place.out_h * place.out_w;
    if rows == 0 {
        return Err(AxError::Geometry("no output positions".into()));
    }
    let k = kh * kw * cin;
    let data = chunk.data();
    let pad = p1.mode.byte(p1.beta);
    let mut codes = vec![pad; rows * k];
    let mut patch_sums = vec![0i32; rows];
    // Quantizing every input value once is cheaper than once per tap when
    // windows overlap.
    let quantized: Vec<u8> = if place.stride_h < kh || place.stride_w < kw {
        data.iter().map(|&v| p1.quantize_byte(v)).collect()
    } else {
        Vec::new()
    };
    let code_at = |off: usize| -> u8 {
        if quantized.is_empty() {
            p1.quantize_byte(data[off])
        } else {
            quantized[off]
        }
    };
    let per_image = place.out_h * place.out_w;
    parallel::for_each_block2(
        &mut codes,
        ROW_BLOCK * k,
        &mut patch_sums,
        ROW_BLOCK,
        |bi, block, sums| {
            for (j, (row, sum)) in block.chunks_exact_mut(k).zip(sums.iter_mut()).enumerate() {
                let r = bi * ROW_BLOCK + j;
                let (img, pos) = (r / per_image, r % per_image);
                let (oy, ox) = (pos / place.out_w, pos % place.out_w);
                for ky in 0..kh {
                    for kx in 0..kw {
                        if let Some((y, x)) = place.source(oy, ox, ky, kx, ih, iw) {
                            let src = ((img * ih + y) * iw + x) * cin;
                            let dst = (ky * kw + kx) * cin;
                            for c in 0..cin {
                                row[dst + c] = code_at(src + c);
                            }
                        }
                    }
                }
                *sum = row.iter().map(|&b| p1.mode.value(b)).sum();
            }
        },
    );
    Ok(PatchMatrix {
        rows,
        cols: k,
        codes,
        patch_sums,
    })
}
