//! Minimal deterministic network stack: convolution / transposed
//! convolution via explicit im2col GEMMs, batch normalization, the handful
//! of activations the architectures need, SGD-with-momentum and an
//! adaptive-moment optimizer.
//!
//! Determinism contract: given identical parameters, inputs and rng state,
//! every forward and backward pass produces bit-identical results for any
//! worker count. Batch work is split into fixed-size chunks
//! ([`crate::tensor::PAR_CHUNK`]) and partial reductions are combined in
//! chunk order, never in completion order.

mod act;
mod conv;
mod linear;
mod net;
mod norm;
mod opt;
mod serial;
mod spec;

pub use act::{LeakyRelu, Relu, SigmoidAct, TanhAct};
pub use conv::{Conv2d, ConvTranspose2d};
pub use linear::Linear;
pub use net::{build_network, sample_latent, ForwardMode, Layer, Net};
pub use norm::BatchNorm2d;
pub use opt::{cosine_lr, Adam, SgdMomentum};
pub use net::{classifier_scores_eval, generate_images, generate_images_eval};
pub use serial::{blobs_from_entries, entries_from_blobs, read_archive, write_archive, TensorEntry};
pub use spec::{ClassifierArch, InputShape, LayerSpec, NetworkSpec, Role, SymShape};

use ndarray::{Array2, Array4};

use crate::error::{Error, Result};

/// Data flowing between layers: either a flat (batch, features) matrix or a
/// (batch, channels, height, width) map.
#[derive(Debug, Clone, PartialEq)]
pub enum Feature {
    Flat(Array2<f32>),
    Map(Array4<f32>),
}

impl Feature {
    pub fn batch(&self) -> usize {
        match self {
            Feature::Flat(a) => a.nrows(),
            Feature::Map(a) => a.dim().0,
        }
    }

    pub fn into_flat(self) -> Result<Array2<f32>> {
        match self {
            Feature::Flat(a) => Ok(a),
            Feature::Map(a) => Err(Error::shape(format!(
                "expected flat features, got a {:?} map",
                a.dim()
            ))),
        }
    }

    pub fn into_map(self) -> Result<Array4<f32>> {
        match self {
            Feature::Map(a) => Ok(a),
            Feature::Flat(a) => Err(Error::shape(format!(
                "expected a feature map, got a flat {:?} matrix",
                a.dim()
            ))),
        }
    }

    fn map_values(&mut self, f: impl Fn(f32) -> f32 + Sync) {
        match self {
            Feature::Flat(a) => a.mapv_inplace(f),
            Feature::Map(a) => a.mapv_inplace(f),
        }
    }

    /// `self[i] = f(self[i], other[i])` elementwise; shapes must agree.
    fn zip_values(&mut self, other: &Feature, f: impl Fn(f32, f32) -> f32) -> Result<()> {
        match (self, other) {
            (Feature::Flat(a), Feature::Flat(b)) if a.dim() == b.dim() => {
                a.zip_mut_with(b, |x, &y| *x = f(*x, y));
                Ok(())
            }
            (Feature::Map(a), Feature::Map(b)) if a.dim() == b.dim() => {
                a.zip_mut_with(b, |x, &y| *x = f(*x, y));
                Ok(())
            }
            _ => Err(Error::shape("feature shape mismatch in zip".to_string())),
        }
    }

    /// `self += scale * other`; used to merge input gradients coming from
    /// several downstream heads.
    pub fn scaled_add(&mut self, scale: f32, other: &Feature) -> Result<()> {
        self.zip_values(other, |a, b| a + scale * b)
    }

    pub fn all_finite(&self) -> bool {
        match self {
            Feature::Flat(a) => a.iter().all(|v| v.is_finite()),
            Feature::Map(a) => a.iter().all(|v| v.is_finite()),
        }
    }
}
