use crate::axmult::MultLut;
use crate::error::{AxError, Result};
use crate::parallel;
use crate::profile::{Phase, PhaseTimes, Stopwatch};
use crate::quantizer::{quantize, QuantParams};
use crate::tensor::{Layout, Tensor4};

use super::{check_modes, dequantize_total, Accumulator, ConvConfig};

/// Longest patch whose code sums are guaranteed to fit in `i32`.
pub const MAX_PATCH_LEN: usize = 1 << 23;

/// Taps summed in `i32` before spilling into the 64-bit total; 2^15
/// products of magnitude < 2^16 cannot overflow.
const STRIP: usize = 1 << 15;

/// Quantized filter matrix, `K` rows by `Cout` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantFilters {
    pub kh: usize,
    pub kw: usize,
    pub k: usize,
    pub cout: usize,
    /// Row-major `K × Cout` raw code bytes (the HWCN order of the filters).
    pub codes: Vec<u8>,
    /// Integer sum of each column's codes.
    pub filter_sums: Vec<i32>,
    pub params: QuantParams,
}

impl QuantFilters {
    pub fn from_tensor(filters: &Tensor4, p2: &QuantParams) -> Result<Self> {
        if filters.layout() != Layout::Hwcn {
            return Err(AxError::Shape("filters must be HWCN".into()));
        }
        let [kh, kw, cin, cout] = filters.shape();
        let k = kh * kw * cin;
        if k > MAX_PATCH_LEN {
            return Err(AxError::Shape(format!(
                "patch length {k} exceeds {MAX_PATCH_LEN}"
            )));
        }
        let q = quantize(filters, p2)?;
        let mut filter_sums = vec![0i32; cout];
        for row in q.data.chunks_exact(cout.max(1)) {
            for (s, &b) in filter_sums.iter_mut().zip(row) {
                *s += p2.mode.value(b);
            }
        }
        Ok(Self {
            kh,
            kw,
            k,
            cout,
            codes: q.data,
            filter_sums,
            params: *p2,
        })
    }
}

/// Lookup GEMM of one chunk with the dequantizing correction, returning the
/// `rows × Cout` real outputs.
pub fn approx_gemm(
    mp: &super::PatchMatrix,
    qf: &QuantFilters,
    p1: &QuantParams,
    p2: &QuantParams,
    lut: &MultLut,
    cfg: &ConvConfig,
) -> Result<Vec<f32>> {
    let mut out = vec![0f32; mp.rows * qf.cout];
    let mut times = PhaseTimes::default();
    parallel::with_workers(cfg.workers, || {
        approx_gemm_profiled(mp, qf, p1, p2, lut, cfg, &mut out, &mut times)
    })?;
    Ok(out)
}

/// [`approx_gemm`] writing into `out`, charging time to `times` and
/// returning the number of multiply-accumulates.
#[allow(clippy::too_many_arguments)]
pub fn approx_gemm_profiled(
    mp: &super::PatchMatrix,
    qf: &QuantFilters,
    p1: &QuantParams,
    p2: &QuantParams,
    lut: &MultLut,
    cfg: &ConvConfig,
    out: &mut [f32],
    times: &mut PhaseTimes,
) -> Result<u64> {
    check_modes(lut, p1, p2)?;
    if mp.cols != qf.k {
        return Err(AxError::Shape(format!(
            "patch length {} does not match filter length {}",
            mp.cols, qf.k
        )));
    }
    let (rows, k, cout) = (mp.rows, qf.k, qf.cout);
    if out.len() != rows * cout {
        return Err(AxError::Shape(format!(
            "output buffer holds {} values, need {}",
            out.len(),
            rows * cout
        )));
    }

    let sw = Stopwatch::phase();
    let mut totals = vec![0i64; rows * cout];
    lookup_sums(mp, qf, lut, cfg, &mut totals);
    times.add(Phase::LutLookup, sw.elapsed());

    let sw = Stopwatch::phase();
    let tile_rows = cfg.tile_rows;
    let (b1, b2) = (p1.beta as i64, p2.beta as i64);
    let scale = p1.alpha * p2.alpha;
    let constant = k as i64 * b1 * b2;
    parallel::for_each_block2(
        out,
        tile_rows * cout,
        &mut totals,
        tile_rows * cout,
        |bi, dst, acc| {
            let r0 = bi * tile_rows;
            for (j, (orow, arow)) in dst
                .chunks_exact_mut(cout.max(1))
                .zip(acc.chunks_exact(cout.max(1)))
                .enumerate()
            {
                let sp = b2 * mp.patch_sums[r0 + j] as i64;
                for ((o, &a), &sf) in orow.iter_mut().zip(arow).zip(&qf.filter_sums) {
                    *o = dequantize_total(scale, a - sp - b1 * sf as i64 + constant);
                }
            }
        },
    );
    times.add(Phase::QuantDequantMinMax, sw.elapsed());

    Ok((rows * k * cout) as u64)
}

/// Products of one column tile for taps `k0..k1`, indexed by
/// `(tap - k0, input code, column)`.
struct Gathered<'a> {
    values: &'a [i32],
    width: usize,
    k0: usize,
    k1: usize,
}

impl Gathered<'_> {
    #[inline(always)]
    fn fold(&self, patch: &[u8], acc: &mut [i32], add: impl Fn(i32, i32) -> i32 + Copy) {
        match self.width {
            8 => self.fold_fixed::<8>(patch, acc, add),
            16 => self.fold_fixed::<16>(patch, acc, add),
            32 => self.fold_fixed::<32>(patch, acc, add),
            64 => self.fold_fixed::<64>(patch, acc, add),
            w => {
                for (t, &code) in patch[self.k0..self.k1].iter().enumerate() {
                    let g = &self.values[(t * 256 + code as usize) * w..][..w];
                    for (s, &v) in acc.iter_mut().zip(g) {
                        *s = add(*s, v);
                    }
                }
            }
        }
    }

    /// [`Self::fold`] with the accumulators held in registers.
    #[inline(always)]
    fn fold_fixed<const W: usize>(
        &self,
        patch: &[u8],
        acc: &mut [i32],
        add: impl Fn(i32, i32) -> i32,
    ) {
        let mut local: [i32; W] = acc.try_into().unwrap();
        let rows: &[[i32; W]] = as_rows(self.values);
        for (t, &code) in patch[self.k0..self.k1].iter().enumerate() {
            let g = &rows[t * 256 + code as usize];
            for (s, &v) in local.iter_mut().zip(g) {
                *s = add(*s, v);
            }
        }
        acc.copy_from_slice(&local);
    }
}

fn as_rows<const W: usize>(values: &[i32]) -> &[[i32; W]] {
    let (rows, rest) = values.as_chunks::<W>();
    debug_assert!(rest.is_empty());
    rows
}

/// Bytes of gathered table rows built per tap block.
const GATHER_BUDGET: usize = 1 << 20;

/// Fills `totals` (`rows × Cout`) with the per-output sums of lookup
/// products, under the configured accumulator model.
///
/// For each column tile and block of taps, the products `lut(a, f[k][c])`
/// are gathered once into a `256 × width` table per tap, so every patch row
/// adds one contiguous table row per tap. Each output still folds in its
/// taps strictly in order.
fn lookup_sums(
    mp: &super::PatchMatrix,
    qf: &QuantFilters,
    lut: &MultLut,
    cfg: &ConvConfig,
    totals: &mut [i64],
) {
    let (k, cout) = (qf.k, qf.cout);
    let tile_rows = cfg.tile_rows;
    let table = lut.values();
    let mode = cfg.accumulator;
    let mut running = match mode {
        Accumulator::Exact64 => Vec::new(),
        _ => vec![0i32; totals.len()],
    };
    let mut gathered = Vec::new();
    for c0 in (0..cout).step_by(cfg.tile_cols) {
        let width = (c0 + cfg.tile_cols).min(cout) - c0;
        let block = (GATHER_BUDGET / (256 * width * 4)).clamp(1, STRIP);
        for k0 in (0..k).step_by(block) {
            let k1 = (k0 + block).min(k);
            gathered.resize((k1 - k0) * 256 * width, 0i32);
            parallel::for_each_block(&mut gathered, 256 * width, |t, rows| {
                let frow = &qf.codes[(k0 + t) * cout + c0..][..width];
                for (code, dst) in rows.chunks_exact_mut(width).enumerate() {
                    let lrow = &table[code << 8..][..256];
                    for (d, &b) in dst.iter_mut().zip(frow) {
                        *d = lrow[b as usize];
                    }
                }
            });
            let view = Gathered {
                values: &gathered,
                width,
                k0,
                k1,
            };
            match mode {
                Accumulator::Exact64 => {
                    parallel::for_each_block(totals, tile_rows * cout, |bi, out| {
                        let mut acc = vec![0i32; width];
                        for (j, orow) in out.chunks_exact_mut(cout).enumerate() {
                            acc.iter_mut().for_each(|v| *v = 0);
                            // A block never exceeds STRIP taps, so the i32 sum is exact.
                            view.fold(mp.row(bi * tile_rows + j), &mut acc, i32::wrapping_add);
                            for (o, &v) in orow[c0..c0 + width].iter_mut().zip(&acc) {
                                *o += v as i64;
                            }
                        }
                    })
                }
                Accumulator::Wrap32 => {
                    parallel::for_each_block(&mut running, tile_rows * cout, |bi, out| {
                        for (j, orow) in out.chunks_exact_mut(cout).enumerate() {
                            view.fold(
                                mp.row(bi * tile_rows + j),
                                &mut orow[c0..c0 + width],
                                i32::wrapping_add,
                            );
                        }
                    })
                }
                Accumulator::Saturate32 => {
                    parallel::for_each_block(&mut running, tile_rows * cout, |bi, out| {
                        for (j, orow) in out.chunks_exact_mut(cout).enumerate() {
                            view.fold(
                                mp.row(bi * tile_rows + j),
                                &mut orow[c0..c0 + width],
                                i32::saturating_add,
                            );
                        }
                    })
                }
            }
        }
    }
    if mode != Accumulator::Exact64 {
        for (t, &r) in totals.iter_mut().zip(&running) {
            *t = r as i64;
        }
    }
}
