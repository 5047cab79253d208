//! Fully connected layer; weight layout (out, in).

use ndarray::{Array1, Array2, Axis};

use crate::error::{Error, Result};

pub struct Linear {
    pub w: Array2<f32>,
    pub b: Array1<f32>,
    pub gw: Array2<f32>,
    pub gb: Array1<f32>,
    cache_x: Option<LinearCache>,
}

enum LinearCache {
    Full(Array2<f32>),
    Shape((usize, usize)),
}

impl Linear {
    pub fn new(in_dim: usize, out_dim: usize) -> Self {
        Linear {
            w: Array2::zeros((out_dim, in_dim)),
            b: Array1::zeros(out_dim),
            gw: Array2::zeros((out_dim, in_dim)),
            gb: Array1::zeros(out_dim),
            cache_x: None,
        }
    }

    pub fn forward_ref(&self, x: &Array2<f32>) -> Result<Array2<f32>> {
        if x.ncols() != self.w.ncols() {
            return Err(Error::shape(format!(
                "linear expects {} features, got {}",
                self.w.ncols(),
                x.ncols()
            )));
        }
        let mut y = x.dot(&self.w.t());
        y += &self.b;
        Ok(y)
    }

    pub fn forward(&mut self, x: Array2<f32>, cache: bool) -> Result<Array2<f32>> {
        let y = self.forward_ref(&x)?;
        self.cache_x = if cache { Some(LinearCache::Full(x)) } else { None };
        Ok(y)
    }

    /// Forward for a frozen net: remembers only the input shape.
    pub fn forward_shape_cached(&mut self, x: Array2<f32>) -> Result<Array2<f32>> {
        let y = self.forward_ref(&x)?;
        self.cache_x = Some(LinearCache::Shape(x.dim()));
        Ok(y)
    }

    pub fn backward(&mut self, dy: Array2<f32>, frozen: bool) -> Result<Array2<f32>> {
        let cache = self
            .cache_x
            .take()
            .ok_or_else(|| Error::validation("linear backward without forward"))?;
        let (x, dims) = match cache {
            LinearCache::Full(x) => {
                let d = x.dim();
                (Some(x), d)
            }
            LinearCache::Shape(d) => {
                if !frozen {
                    return Err(Error::validation(
                        "linear backward needs the cached input unless frozen",
                    ));
                }
                (None, d)
            }
        };
        if dy.dim() != (dims.0, self.w.nrows()) {
            return Err(Error::shape("linear backward shape mismatch"));
        }
        if let (false, Some(x)) = (frozen, x) {
            self.gw += &dy.t().dot(&x);
            self.gb += &dy.sum_axis(Axis(0));
        }
        Ok(dy.dot(&self.w))
    }
}
