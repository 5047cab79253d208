//! Batch normalization over (N, H, W) per channel. Statistics accumulate
//! in f64 over fixed chunks (combined in chunk order), and the transform
//! runs as a single fused pass that emits both the normalized cache and
//! the scaled output.

use ndarray::parallel::prelude::*;
use ndarray::{Array1, Array4, Axis};

use crate::error::{Error, Result};
use crate::tensor::PAR_CHUNK;

enum BnCache {
    /// Batch-statistics forward: normalized activations and inverse std.
    Train { xhat: Array4<f32>, inv_std: Array1<f32> },
    /// Running-statistics forward (frozen scorer): per-channel slope.
    Affine { scale: Array1<f32> },
}

pub struct BatchNorm2d {
    pub gamma: Array1<f32>,
    pub beta: Array1<f32>,
    pub g_gamma: Array1<f32>,
    pub g_beta: Array1<f32>,
    pub running_mean: Array1<f32>,
    pub running_var: Array1<f32>,
    pub eps: f32,
    pub momentum: f32,
    cache: Option<BnCache>,
}

impl BatchNorm2d {
    pub fn new(channels: usize) -> Self {
        BatchNorm2d {
            gamma: Array1::ones(channels),
            beta: Array1::zeros(channels),
            g_gamma: Array1::zeros(channels),
            g_beta: Array1::zeros(channels),
            running_mean: Array1::zeros(channels),
            running_var: Array1::ones(channels),
            eps: 1e-5,
            momentum: 0.1,
            cache: None,
        }
    }

    fn check_channels(&self, c: usize) -> Result<()> {
        if c != self.gamma.len() {
            return Err(Error::shape(format!(
                "batch norm over {} channels got {c}",
                self.gamma.len()
            )));
        }
        Ok(())
    }

    /// Training-mode forward with batch statistics. Running statistics move
    /// only when `track_stats` is set (a frozen scorer must not drift).
    pub fn forward_train(&mut self, x: Array4<f32>, track_stats: bool) -> Result<Array4<f32>> {
        let (n, c, h, w) = x.dim();
        self.check_channels(c)?;
        let m = (n * h * w) as f64;
        if m < 2.0 {
            return Err(Error::validation(
                "batch norm needs at least 2 values per channel",
            ));
        }
        let hw = h * w;

        // one pass: per-channel sum and sum of squares, fixed-chunk order
        let partials: Vec<(Array1<f64>, Array1<f64>)> = x
            .axis_chunks_iter(Axis(0), PAR_CHUNK)
            .into_par_iter()
            .map(|xc| {
                let mut s = Array1::<f64>::zeros(c);
                let mut sq = Array1::<f64>::zeros(c);
                for i in 0..xc.dim().0 {
                    let sample = xc.index_axis(Axis(0), i);
                    let vals = sample.as_slice().expect("contiguous");
                    for ch in 0..c {
                        let mut a = 0.0f64;
                        let mut b = 0.0f64;
                        for &v in &vals[ch * hw..(ch + 1) * hw] {
                            let v = v as f64;
                            a += v;
                            b += v * v;
                        }
                        s[ch] += a;
                        sq[ch] += b;
                    }
                }
                (s, sq)
            })
            .collect();
        let mut sum = Array1::<f64>::zeros(c);
        let mut sumsq = Array1::<f64>::zeros(c);
        for (s, sq) in partials {
            sum += &s;
            sumsq += &sq;
        }
        let mean64 = &sum / m;
        let var64 = &sumsq / m - mean64.mapv(|v| v * v);
        let var64 = var64.mapv(|v| v.max(0.0));
        let mean = mean64.mapv(|v| v as f32);
        let inv_std = var64.mapv(|v| (1.0 / (v + self.eps as f64).sqrt()) as f32);

        if track_stats {
            let mom = self.momentum as f64;
            let unbias = m / (m - 1.0);
            for ch in 0..c {
                let rm = self.running_mean[ch] as f64;
                let rv = self.running_var[ch] as f64;
                self.running_mean[ch] = ((1.0 - mom) * rm + mom * mean64[ch]) as f32;
                self.running_var[ch] = ((1.0 - mom) * rv + mom * var64[ch] * unbias) as f32;
            }
        }

        // fused transform: y (in place of x) and the xhat cache in one pass
        let mut y = x;
        let mut xhat = Array4::<f32>::zeros((n, c, h, w));
        {
            let mean = &mean;
            let inv_std = &inv_std;
            let gamma = &self.gamma;
            let beta = &self.beta;
            y.axis_chunks_iter_mut(Axis(0), PAR_CHUNK)
                .into_par_iter()
                .zip(xhat.axis_chunks_iter_mut(Axis(0), PAR_CHUNK).into_par_iter())
                .for_each(|(mut yc, mut xhc)| {
                    for i in 0..yc.dim().0 {
                        let mut ys = yc.index_axis_mut(Axis(0), i);
                        let ys = ys.as_slice_mut().expect("contiguous");
                        let mut xs = xhc.index_axis_mut(Axis(0), i);
                        let xs = xs.as_slice_mut().expect("contiguous");
                        for ch in 0..c {
                            let (mu, is) = (mean[ch], inv_std[ch]);
                            let (g, b) = (gamma[ch], beta[ch]);
                            for idx in ch * hw..(ch + 1) * hw {
                                let xh = (ys[idx] - mu) * is;
                                xs[idx] = xh;
                                ys[idx] = g * xh + b;
                            }
                        }
                    }
                });
        }
        self.cache = Some(BnCache::Train { xhat, inv_std });
        Ok(y)
    }

    /// Running-statistics forward that still participates in backward as a
    /// fixed affine map; for frozen scorers inside someone else's update.
    pub fn forward_affine(&mut self, x: Array4<f32>) -> Result<Array4<f32>> {
        let c = x.dim().1;
        self.check_channels(c)?;
        let scale = Array1::from_shape_fn(c, |ch| {
            self.gamma[ch] / (self.running_var[ch] + self.eps).sqrt()
        });
        let mut y = x;
        for ch in 0..c {
            let s = scale[ch];
            let shift = self.beta[ch] - self.running_mean[ch] * s;
            let mut lane = y.index_axis_mut(Axis(1), ch);
            lane.mapv_inplace(|v| s * v + shift);
        }
        self.cache = Some(BnCache::Affine { scale });
        Ok(y)
    }

    /// Evaluation-mode forward with running statistics; pure.
    pub fn forward_eval(&self, x: &Array4<f32>) -> Result<Array4<f32>> {
        let c = x.dim().1;
        self.check_channels(c)?;
        let mut y = x.clone();
        for ch in 0..c {
            let mu = self.running_mean[ch];
            let is = 1.0 / (self.running_var[ch] + self.eps).sqrt();
            let g = self.gamma[ch];
            let b = self.beta[ch];
            let mut lane = y.index_axis_mut(Axis(1), ch);
            lane.mapv_inplace(|v| g * (v - mu) * is + b);
        }
        Ok(y)
    }

    pub fn backward(&mut self, dy: Array4<f32>, frozen: bool) -> Result<Array4<f32>> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| Error::validation("batch norm backward without forward"))?;
        let (xhat, inv_std) = match cache {
            BnCache::Train { xhat, inv_std } => (xhat, inv_std),
            BnCache::Affine { scale } => {
                if !frozen {
                    return Err(Error::validation(
                        "affine batch-norm backward is only valid for frozen networks",
                    ));
                }
                let mut dx = dy;
                let c = scale.len();
                for ch in 0..c {
                    let s = scale[ch];
                    let mut lane = dx.index_axis_mut(Axis(1), ch);
                    lane.mapv_inplace(|v| v * s);
                }
                return Ok(dx);
            }
        };
        let (n, c, h, w) = xhat.dim();
        if dy.dim() != (n, c, h, w) {
            return Err(Error::shape("batch norm backward shape mismatch".to_string()));
        }
        let m = (n * h * w) as f64;
        let hw = h * w;

        // per-channel sums of dy and dy * xhat, chunk-ordered
        let partials: Vec<(Array1<f64>, Array1<f64>)> = dy
            .axis_chunks_iter(Axis(0), PAR_CHUNK)
            .into_par_iter()
            .zip(xhat.axis_chunks_iter(Axis(0), PAR_CHUNK).into_par_iter())
            .map(|(dyc, xhc)| {
                let mut s_dy = Array1::<f64>::zeros(c);
                let mut s_dyx = Array1::<f64>::zeros(c);
                for i in 0..dyc.dim().0 {
                    let dsample = dyc.index_axis(Axis(0), i);
                    let ds = dsample.as_slice().expect("contiguous");
                    let xsample = xhc.index_axis(Axis(0), i);
                    let xs = xsample.as_slice().expect("contiguous");
                    for ch in 0..c {
                        let mut a = 0.0f64;
                        let mut b = 0.0f64;
                        for idx in ch * hw..(ch + 1) * hw {
                            a += ds[idx] as f64;
                            b += (ds[idx] * xs[idx]) as f64;
                        }
                        s_dy[ch] += a;
                        s_dyx[ch] += b;
                    }
                }
                (s_dy, s_dyx)
            })
            .collect();
        let mut sum_dy = Array1::<f64>::zeros(c);
        let mut sum_dy_xhat = Array1::<f64>::zeros(c);
        for (a, b) in partials {
            sum_dy += &a;
            sum_dy_xhat += &b;
        }

        if !frozen {
            for ch in 0..c {
                self.g_beta[ch] += sum_dy[ch] as f32;
                self.g_gamma[ch] += sum_dy_xhat[ch] as f32;
            }
        }

        // dx = gamma * inv_std / m * (m * dy - sum_dy - xhat * sum_dy_xhat)
        let mut dx = dy;
        {
            let gamma = &self.gamma;
            let inv_std = &inv_std;
            let sum_dy = &sum_dy;
            let sum_dy_xhat = &sum_dy_xhat;
            dx.axis_chunks_iter_mut(Axis(0), PAR_CHUNK)
                .into_par_iter()
                .zip(xhat.axis_chunks_iter(Axis(0), PAR_CHUNK).into_par_iter())
                .for_each(|(mut dxc, xhc)| {
                    for i in 0..dxc.dim().0 {
                        let mut dsample = dxc.index_axis_mut(Axis(0), i);
                        let ds = dsample.as_slice_mut().expect("contiguous");
                        let xsample = xhc.index_axis(Axis(0), i);
                        let xs = xsample.as_slice().expect("contiguous");
                        for ch in 0..c {
                            let scale = ((gamma[ch] * inv_std[ch]) as f64 / m) as f32;
                            let sd = sum_dy[ch] as f32;
                            let sdx = sum_dy_xhat[ch] as f32;
                            let mf = m as f32;
                            for idx in ch * hw..(ch + 1) * hw {
                                ds[idx] = scale * (mf * ds[idx] - sd - xs[idx] * sdx);
                            }
                        }
                    }
                });
        }
        Ok(dx)
    }
}
