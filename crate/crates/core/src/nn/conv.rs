//! Convolution and transposed convolution through explicit column
//! matrices. Samples are processed in fixed-size chunks with one GEMM per
//! chunk, and chunk partials combine in chunk order, so batch parallelism
//! cannot perturb results.

use ndarray::parallel::prelude::*;
use ndarray::{s, Array1, Array2, Array4, ArrayView3, ArrayViewMut3, Axis};

use crate::error::{Error, Result};
use crate::tensor::PAR_CHUNK;

/// Lowers a chunk of (C, H, W) samples into one (C*k*k, b*Ho*Wo) column
/// matrix; sample `n` owns the column block `n*Ho*Wo..(n+1)*Ho*Wo`.
/// Out-of-range taps stay zero (zero padding).
#[allow(clippy::too_many_arguments)]
fn im2col_chunk(
    xc: &ndarray::ArrayView4<f32>,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
    col: &mut Array2<f32>,
) {
    let (b, c, h, w) = xc.dim();
    let hw_out = ho * wo;
    let total = b * hw_out;
    debug_assert_eq!(col.dim(), (c * k * k, total));
    let cs = col.as_slice_mut().expect("contiguous col");
    for n in 0..b {
        let x = xc.index_axis(Axis(0), n);
        let xs = x.as_slice().expect("contiguous input");
        let col_off = n * hw_out;
        for ci in 0..c {
            let xbase = ci * h * w;
            for ky in 0..k {
                for kx in 0..k {
                    let row_base = ((ci * k + ky) * k + kx) * total + col_off;
                    for oy in 0..ho {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        let dst = row_base + oy * wo;
                        if iy < 0 || iy >= h as isize {
                            cs[dst..dst + wo].fill(0.0);
                            continue;
                        }
                        let src = xbase + iy as usize * w;
                        // interior span covers every ox whose tap is in range
                        for ox in 0..wo {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            cs[dst + ox] = if ix >= 0 && ix < w as isize {
                                xs[src + ix as usize]
                            } else {
                                0.0
                            };
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of the per-sample part of [`im2col_chunk`]: scatter-adds one
/// sample's (C*k*k, Ho*Wo) contiguous column block into (C, H, W).
fn col2im_add(
    out: &mut ArrayViewMut3<f32>,
    col: &[f32],
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
) {
    let (c, h, w) = out.dim();
    let os = out.as_slice_mut().expect("contiguous output");
    for ci in 0..c {
        let obase = ci * h * w;
        for ky in 0..k {
            for kx in 0..k {
                let row_base = ((ci * k + ky) * k + kx) * (ho * wo);
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = obase + iy as usize * w;
                    let src = row_base + oy * wo;
                    for ox in 0..wo {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            os[dst + ix as usize] += col[src + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Copies a (b, C, H*W) chunk into channel-major (C, b*H*W) GEMM layout.
fn gather_channel_major(xc: &ndarray::ArrayView4<f32>, out: &mut Array2<f32>) {
    let (b, c, h, w) = xc.dim();
    let hw = h * w;
    let total = b * hw;
    debug_assert_eq!(out.dim(), (c, total));
    let os = out.as_slice_mut().expect("contiguous");
    for n in 0..b {
        let x = xc.index_axis(Axis(0), n);
        let xs = x.as_slice().expect("contiguous");
        for ci in 0..c {
            let dst = ci * total + n * hw;
            os[dst..dst + hw].copy_from_slice(&xs[ci * hw..(ci + 1) * hw]);
        }
    }
}

/// Inverse of [`gather_channel_major`]: writes (C, b*H*W) back into the
/// (b, C, H, W) chunk, adding `bias` per channel when given.
fn scatter_channel_major(
    src: &Array2<f32>,
    yc: &mut ndarray::ArrayViewMut4<f32>,
    bias: Option<&Array1<f32>>,
) {
    let (b, c, h, w) = yc.dim();
    let hw = h * w;
    let total = b * hw;
    debug_assert_eq!(src.dim(), (c, total));
    let ss = src.as_slice().expect("contiguous");
    for n in 0..b {
        let mut y = yc.index_axis_mut(Axis(0), n);
        let ys = y.as_slice_mut().expect("contiguous");
        for ci in 0..c {
            let sbase = ci * total + n * hw;
            let dbase = ci * hw;
            match bias {
                Some(bv) => {
                    let bc = bv[ci];
                    for i in 0..hw {
                        ys[dbase + i] = ss[sbase + i] + bc;
                    }
                }
                None => ys[dbase..dbase + hw].copy_from_slice(&ss[sbase..sbase + hw]),
            }
        }
    }
}

fn conv_out_extent(input: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    let padded = input + 2 * pad;
    if padded < k {
        return Err(Error::shape(format!(
            "kernel {k} larger than padded input {padded}"
        )));
    }
    Ok((padded - k) / stride + 1)
}

/// Standard 2-D convolution; weight layout (out, in, k, k).
pub struct Conv2d {
    pub w: Array4<f32>,
    pub b: Array1<f32>,
    pub gw: Array4<f32>,
    pub gb: Array1<f32>,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    cache_x: Option<ConvCache>,
}

/// What the backward pass can rely on: the full input (parameter and input
/// gradients) or just its shape (input gradients only, for frozen nets).
enum ConvCache {
    Full(Array4<f32>),
    Shape((usize, usize, usize, usize)),
}

impl Conv2d {
    pub fn new(in_ch: usize, out_ch: usize, kernel: usize, stride: usize, pad: usize) -> Self {
        Conv2d {
            w: Array4::zeros((out_ch, in_ch, kernel, kernel)),
            b: Array1::zeros(out_ch),
            gw: Array4::zeros((out_ch, in_ch, kernel, kernel)),
            gb: Array1::zeros(out_ch),
            kernel,
            stride,
            pad,
            cache_x: None,
        }
    }

    pub fn out_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        Ok((
            conv_out_extent(h, self.kernel, self.stride, self.pad)?,
            conv_out_extent(w, self.kernel, self.stride, self.pad)?,
        ))
    }

    pub fn forward_ref(&self, x: &Array4<f32>) -> Result<Array4<f32>> {
        let (n, ci, h, w) = x.dim();
        let (co, wci, k, _) = self.w.dim();
        if ci != wci {
            return Err(Error::shape(format!(
                "conv expects {wci} input channels, got {ci}"
            )));
        }
        let (ho, wo) = self.out_hw(h, w)?;
        let w2 = self
            .w
            .view()
            .into_shape_with_order((co, wci * k * k))
            .expect("standard layout");
        let mut y = Array4::<f32>::zeros((n, co, ho, wo));
        let bias = &self.b;
        y.axis_chunks_iter_mut(Axis(0), PAR_CHUNK)
            .into_par_iter()
            .zip(x.axis_chunks_iter(Axis(0), PAR_CHUNK).into_par_iter())
            .for_each(|(mut yc, xc)| {
                let b = xc.dim().0;
                let mut col = Array2::<f32>::zeros((wci * k * k, b * ho * wo));
                im2col_chunk(&xc, k, self.stride, self.pad, ho, wo, &mut col);
                let out = w2.dot(&col);
                scatter_channel_major(&out, &mut yc.view_mut(), Some(bias));
            });
        Ok(y)
    }

    pub fn forward(&mut self, x: Array4<f32>, cache: bool) -> Result<Array4<f32>> {
        let y = self.forward_ref(&x)?;
        self.cache_x = if cache { Some(ConvCache::Full(x)) } else { None };
        Ok(y)
    }

    /// Forward for a frozen net: remembers only the input shape.
    pub fn forward_shape_cached(&mut self, x: Array4<f32>) -> Result<Array4<f32>> {
        let y = self.forward_ref(&x)?;
        self.cache_x = Some(ConvCache::Shape(x.dim()));
        Ok(y)
    }

    pub fn backward(&mut self, dy: Array4<f32>, frozen: bool) -> Result<Array4<f32>> {
        let cache = self
            .cache_x
            .take()
            .ok_or_else(|| Error::validation("conv backward without cached forward"))?;
        let (x, dims) = match cache {
            ConvCache::Full(x) => {
                let d = x.dim();
                (Some(x), d)
            }
            ConvCache::Shape(d) => {
                if !frozen {
                    return Err(Error::validation(
                        "conv backward needs the cached input unless frozen",
                    ));
                }
                (None, d)
            }
        };
        let (n, ci, h, w) = dims;
        let (co, _, k, _) = self.w.dim();
        let (ho, wo) = self.out_hw(h, w)?;
        if dy.dim() != (n, co, ho, wo) {
            return Err(Error::shape(format!(
                "conv backward got {:?}, expected {:?}",
                dy.dim(),
                (n, co, ho, wo)
            )));
        }
        let cikk = ci * k * k;
        let w2 = self
            .w
            .view()
            .into_shape_with_order((co, cikk))
            .expect("standard layout");

        let x_store;
        let x = match x {
            Some(x) => {
                x_store = x;
                Some(&x_store)
            }
            None => None,
        };
        let mut dx = Array4::<f32>::zeros((n, ci, h, w));
        // (dx, optional (dw, db)) partials per fixed chunk, combined in order
        let x_chunks: Vec<Option<ndarray::ArrayView4<f32>>> = match x {
            Some(x) => x
                .axis_chunks_iter(Axis(0), PAR_CHUNK)
                .map(Some)
                .collect(),
            None => dy
                .axis_chunks_iter(Axis(0), PAR_CHUNK)
                .map(|_| None)
                .collect(),
        };
        let partials: Vec<Option<(Array2<f32>, Array1<f32>)>> = dx
            .axis_chunks_iter_mut(Axis(0), PAR_CHUNK)
            .into_par_iter()
            .zip(dy.axis_chunks_iter(Axis(0), PAR_CHUNK).into_par_iter())
            .zip(x_chunks.into_par_iter())
            .map(|((mut dxc, dyc), xc)| {
                let b = dyc.dim().0;
                let hw = ho * wo;
                let total = b * hw;
                let mut dy2 = Array2::<f32>::zeros((co, total));
                gather_channel_major(&dyc, &mut dy2);
                // dx via one GEMM then per-sample scatter
                let dcol = w2.t().dot(&dy2);
                let dsl = dcol.as_slice().expect("contiguous");
                let mut scratch = vec![0f32; cikk * hw];
                for ni in 0..b {
                    for r in 0..cikk {
                        let src = r * total + ni * hw;
                        scratch[r * hw..(r + 1) * hw].copy_from_slice(&dsl[src..src + hw]);
                    }
                    col2im_add(
                        &mut dxc.index_axis_mut(Axis(0), ni),
                        &scratch,
                        k,
                        self.stride,
                        self.pad,
                        ho,
                        wo,
                    );
                }
                match (frozen, xc) {
                    (false, Some(xc)) => {
                        let mut col = Array2::<f32>::zeros((cikk, total));
                        im2col_chunk(&xc, k, self.stride, self.pad, ho, wo, &mut col);
                        let dw = dy2.dot(&col.t());
                        let db = dy2.sum_axis(Axis(1));
                        Some((dw, db))
                    }
                    _ => None,
                }
            })
            .collect();

        if !frozen {
            let mut gw2 = self
                .gw
                .view_mut()
                .into_shape_with_order((co, cikk))
                .expect("standard layout");
            for p in partials.into_iter().flatten() {
                gw2 += &p.0;
                self.gb += &p.1;
            }
        }
        Ok(dx)
    }
}

/// Transposed (fractionally strided) convolution; weight layout
/// (in, out, k, k). Forward is the adjoint of a convolution's forward, so
/// the output extent is `(in - 1) * stride - 2 * pad + k`.
pub struct ConvTranspose2d {
    pub w: Array4<f32>,
    pub b: Array1<f32>,
    pub gw: Array4<f32>,
    pub gb: Array1<f32>,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    cache_x: Option<ConvCache>,
}

impl ConvTranspose2d {
    pub fn new(in_ch: usize, out_ch: usize, kernel: usize, stride: usize, pad: usize) -> Self {
        ConvTranspose2d {
            w: Array4::zeros((in_ch, out_ch, kernel, kernel)),
            b: Array1::zeros(out_ch),
            gw: Array4::zeros((in_ch, out_ch, kernel, kernel)),
            gb: Array1::zeros(out_ch),
            kernel,
            stride,
            pad,
            cache_x: None,
        }
    }

    pub fn out_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let grow = |v: usize| -> Result<usize> {
            let expanded = (v - 1) * self.stride + self.kernel;
            if expanded < 2 * self.pad + 1 {
                return Err(Error::shape("transposed conv output collapses".to_string()));
            }
            Ok(expanded - 2 * self.pad)
        };
        Ok((grow(h)?, grow(w)?))
    }

    pub fn forward_ref(&self, x: &Array4<f32>) -> Result<Array4<f32>> {
        let (n, ci, hi, wi) = x.dim();
        let (wci, co, k, _) = self.w.dim();
        if ci != wci {
            return Err(Error::shape(format!(
                "transposed conv expects {wci} input channels, got {ci}"
            )));
        }
        let (ho, wo) = self.out_hw(hi, wi)?;
        debug_assert_eq!(conv_out_extent(ho, k, self.stride, self.pad)?, hi);
        let cokk = co * k * k;
        let w2 = self
            .w
            .view()
            .into_shape_with_order((ci, cokk))
            .expect("standard layout");
        let mut y = Array4::<f32>::zeros((n, co, ho, wo));
        let bias = &self.b;
        y.axis_chunks_iter_mut(Axis(0), PAR_CHUNK)
            .into_par_iter()
            .zip(x.axis_chunks_iter(Axis(0), PAR_CHUNK).into_par_iter())
            .for_each(|(mut yc, xc)| {
                let b = xc.dim().0;
                let hw = hi * wi;
                let total = b * hw;
                let mut x2 = Array2::<f32>::zeros((ci, total));
                gather_channel_major(&xc, &mut x2);
                let dcol = w2.t().dot(&x2);
                let dsl = dcol.as_slice().expect("contiguous");
                let mut scratch = vec![0f32; cokk * hw];
                for ni in 0..b {
                    for r in 0..cokk {
                        let src = r * total + ni * hw;
                        scratch[r * hw..(r + 1) * hw].copy_from_slice(&dsl[src..src + hw]);
                    }
                    let mut yi = yc.index_axis_mut(Axis(0), ni);
                    col2im_add(&mut yi, &scratch, k, self.stride, self.pad, hi, wi);
                }
                for ni in 0..b {
                    let mut yi = yc.index_axis_mut(Axis(0), ni);
                    for (c, bv) in bias.iter().enumerate() {
                        yi.slice_mut(s![c, .., ..]).mapv_inplace(|v| v + bv);
                    }
                }
            });
        Ok(y)
    }

    pub fn forward(&mut self, x: Array4<f32>, cache: bool) -> Result<Array4<f32>> {
        let y = self.forward_ref(&x)?;
        self.cache_x = if cache { Some(ConvCache::Full(x)) } else { None };
        Ok(y)
    }

    /// Forward for a frozen net: remembers only the input shape.
    pub fn forward_shape_cached(&mut self, x: Array4<f32>) -> Result<Array4<f32>> {
        let y = self.forward_ref(&x)?;
        self.cache_x = Some(ConvCache::Shape(x.dim()));
        Ok(y)
    }

    pub fn backward(&mut self, dy: Array4<f32>, frozen: bool) -> Result<Array4<f32>> {
        let cache = self
            .cache_x
            .take()
            .ok_or_else(|| Error::validation("transposed conv backward without forward"))?;
        let (x, dims) = match cache {
            ConvCache::Full(x) => {
                let d = x.dim();
                (Some(x), d)
            }
            ConvCache::Shape(d) => {
                if !frozen {
                    return Err(Error::validation(
                        "transposed conv backward needs the cached input unless frozen",
                    ));
                }
                (None, d)
            }
        };
        let (n, ci, hi, wi) = dims;
        let (_, co, k, _) = self.w.dim();
        let (ho, wo) = self.out_hw(hi, wi)?;
        if dy.dim() != (n, co, ho, wo) {
            return Err(Error::shape(format!(
                "transposed conv backward got {:?}, expected {:?}",
                dy.dim(),
                (n, co, ho, wo)
            )));
        }
        let cokk = co * k * k;
        let w2 = self
            .w
            .view()
            .into_shape_with_order((ci, cokk))
            .expect("standard layout");

        let x_store;
        let x = match x {
            Some(x) => {
                x_store = x;
                Some(&x_store)
            }
            None => None,
        };
        let mut dx = Array4::<f32>::zeros((n, ci, hi, wi));
        let x_chunks: Vec<Option<ndarray::ArrayView4<f32>>> = match x {
            Some(x) => x
                .axis_chunks_iter(Axis(0), PAR_CHUNK)
                .map(Some)
                .collect(),
            None => dy
                .axis_chunks_iter(Axis(0), PAR_CHUNK)
                .map(|_| None)
                .collect(),
        };
        let partials: Vec<Option<(Array2<f32>, Array1<f32>)>> = dx
            .axis_chunks_iter_mut(Axis(0), PAR_CHUNK)
            .into_par_iter()
            .zip(dy.axis_chunks_iter(Axis(0), PAR_CHUNK).into_par_iter())
            .zip(x_chunks.into_par_iter())
            .map(|((mut dxc, dyc), xc)| {
                let b = dyc.dim().0;
                let hw = hi * wi;
                let total = b * hw;
                let mut dcolhat = Array2::<f32>::zeros((cokk, total));
                im2col_chunk(&dyc, k, self.stride, self.pad, hi, wi, &mut dcolhat);
                let dx2 = w2.dot(&dcolhat);
                scatter_channel_major(&dx2, &mut dxc.view_mut(), None);
                match (frozen, xc) {
                    (false, Some(xc)) => {
                        let mut x2 = Array2::<f32>::zeros((ci, total));
                        gather_channel_major(&xc, &mut x2);
                        let dw = x2.dot(&dcolhat.t());
                        let mut db = Array1::<f32>::zeros(co);
                        for ni in 0..b {
                            let dyi = dyc.index_axis(Axis(0), ni);
                            for c in 0..co {
                                db[c] += dyi.index_axis(Axis(0), c).sum();
                            }
                        }
                        Some((dw, db))
                    }
                    _ => None,
                }
            })
            .collect();

        if !frozen {
            let mut gw2 = self
                .gw
                .view_mut()
                .into_shape_with_order((ci, cokk))
                .expect("standard layout");
            for p in partials.into_iter().flatten() {
                gw2 += &p.0;
                self.gb += &p.1;
            }
        }
        Ok(dx)
    }
}

// keep the per-sample helpers referenced by unit tests below
#[allow(dead_code)]
fn im2col_single(
    x: &ArrayView3<f32>,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
) -> Array2<f32> {
    let (c, _h, _w) = x.dim();
    let x4 = x.view().insert_axis(Axis(0));
    let mut col = Array2::<f32>::zeros((c * k * k, ho * wo));
    im2col_chunk(&x4, k, stride, pad, ho, wo, &mut col);
    col
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunked_matches_single_sample_lowering() {
        let mut rng = crate::rng::seed_rng(3);
        let mut x = Array4::<f32>::zeros((5, 2, 6, 6));
        crate::rng::fill_standard_normal(&mut rng, x.as_slice_mut().unwrap());
        let (k, s, p, ho, wo) = (3, 1, 1, 6, 6);
        let mut chunk_col = Array2::<f32>::zeros((2 * k * k, 5 * ho * wo));
        im2col_chunk(&x.view(), k, s, p, ho, wo, &mut chunk_col);
        for n in 0..5 {
            let single = im2col_single(&x.index_axis(Axis(0), n), k, s, p, ho, wo);
            for r in 0..2 * k * k {
                for c in 0..ho * wo {
                    assert_eq!(single[[r, c]], chunk_col[[r, n * ho * wo + c]]);
                }
            }
        }
    }
}
