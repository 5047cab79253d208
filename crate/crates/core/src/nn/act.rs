//! Elementwise activations. ReLU variants cache a one-byte sign mask;
//! tanh/sigmoid cache their (small) outputs.

use super::Feature;
use crate::error::{Error, Result};

fn values_mut(x: &mut Feature) -> &mut [f32] {
    match x {
        Feature::Flat(a) => a.as_slice_mut().expect("contiguous"),
        Feature::Map(a) => a.as_slice_mut().expect("contiguous"),
    }
}

#[derive(Default)]
pub struct Relu {
    mask: Option<Vec<u8>>,
}

impl Relu {
    pub fn forward(&mut self, mut x: Feature, cache: bool) -> Feature {
        let vals = values_mut(&mut x);
        if cache {
            let mut mask = vec![0u8; vals.len()];
            for (v, m) in vals.iter_mut().zip(mask.iter_mut()) {
                if *v > 0.0 {
                    *m = 1;
                } else {
                    *v = 0.0;
                }
            }
            self.mask = Some(mask);
        } else {
            for v in vals.iter_mut() {
                if !(*v > 0.0) {
                    *v = 0.0;
                }
            }
        }
        x
    }

    pub fn backward(&mut self, mut dy: Feature) -> Result<Feature> {
        let mask = self
            .mask
            .take()
            .ok_or_else(|| Error::validation("relu backward without forward"))?;
        let vals = values_mut(&mut dy);
        if vals.len() != mask.len() {
            return Err(Error::shape("relu backward shape mismatch".to_string()));
        }
        for (v, m) in vals.iter_mut().zip(mask.iter()) {
            if *m == 0 {
                *v = 0.0;
            }
        }
        Ok(dy)
    }
}

pub struct LeakyRelu {
    pub slope: f32,
    mask: Option<Vec<u8>>,
}

impl LeakyRelu {
    pub fn new(slope: f32) -> Self {
        LeakyRelu { slope, mask: None }
    }

    pub fn forward(&mut self, mut x: Feature, cache: bool) -> Feature {
        let a = self.slope;
        let vals = values_mut(&mut x);
        if cache {
            let mut mask = vec![0u8; vals.len()];
            for (v, m) in vals.iter_mut().zip(mask.iter_mut()) {
                if *v > 0.0 {
                    *m = 1;
                } else {
                    *v *= a;
                }
            }
            self.mask = Some(mask);
        } else {
            for v in vals.iter_mut() {
                if !(*v > 0.0) {
                    *v *= a;
                }
            }
        }
        x
    }

    pub fn backward(&mut self, mut dy: Feature) -> Result<Feature> {
        let mask = self
            .mask
            .take()
            .ok_or_else(|| Error::validation("leaky relu backward without forward"))?;
        let a = self.slope;
        let vals = values_mut(&mut dy);
        if vals.len() != mask.len() {
            return Err(Error::shape("leaky relu backward shape mismatch".to_string()));
        }
        for (v, m) in vals.iter_mut().zip(mask.iter()) {
            if *m == 0 {
                *v *= a;
            }
        }
        Ok(dy)
    }
}

#[derive(Default)]
pub struct TanhAct {
    cache_y: Option<Feature>,
}

impl TanhAct {
    pub fn forward(&mut self, mut x: Feature, cache: bool) -> Feature {
        for v in values_mut(&mut x) {
            *v = v.tanh();
        }
        if cache {
            self.cache_y = Some(x.clone());
        }
        x
    }

    pub fn backward(&mut self, mut dy: Feature) -> Result<Feature> {
        let y = self
            .cache_y
            .take()
            .ok_or_else(|| Error::validation("tanh backward without forward"))?;
        dy.zip_values(&y, |d, yv| d * (1.0 - yv * yv))?;
        Ok(dy)
    }
}

#[derive(Default)]
pub struct SigmoidAct {
    cache_y: Option<Feature>,
}

impl SigmoidAct {
    pub fn forward(&mut self, mut x: Feature, cache: bool) -> Feature {
        for v in values_mut(&mut x) {
            *v = 1.0 / (1.0 + (-*v).exp());
        }
        if cache {
            self.cache_y = Some(x.clone());
        }
        x
    }

    pub fn backward(&mut self, mut dy: Feature) -> Result<Feature> {
        let y = self
            .cache_y
            .take()
            .ok_or_else(|| Error::validation("sigmoid backward without forward"))?;
        dy.zip_values(&y, |d, yv| d * yv * (1.0 - yv))?;
        Ok(dy)
    }
}
