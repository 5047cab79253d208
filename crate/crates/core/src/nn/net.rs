//! Layer dispatch, the sequential [`Net`] container, parameter
//! initialization and latent sampling.

use ndarray::{Array2, Array4};

use super::act::{LeakyRelu, Relu, SigmoidAct, TanhAct};
use super::conv::{Conv2d, ConvTranspose2d};
use super::linear::Linear;
use super::norm::BatchNorm2d;
use super::serial::TensorEntry;
use super::spec::{InputShape, LayerSpec, NetworkSpec, SymShape};
use super::Feature;
use crate::error::{Error, Result};
use crate::rng::{fill_standard_normal, Rng};

pub enum Layer {
    Conv(Conv2d),
    Deconv(ConvTranspose2d),
    Bn(BatchNorm2d),
    Linear(Linear),
    Relu(Relu),
    Leaky(LeakyRelu),
    Tanh(TanhAct),
    Sigmoid(SigmoidAct),
    Flatten { cached: Option<(usize, usize, usize)> },
    Reshape { c: usize, h: usize, w: usize },
}

/// How a caching forward pass treats normalization and weight layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForwardMode {
    /// Batch-statistics normalization; caches support parameter gradients.
    Train { track_stats: bool },
    /// Running-statistics (affine) normalization for a frozen scorer;
    /// caches support input gradients only.
    FrozenEval,
}

impl Layer {
    fn forward(&mut self, x: Feature, mode: ForwardMode) -> Result<Feature> {
        let cache = true;
        match self {
            Layer::Conv(l) => match mode {
                ForwardMode::Train { .. } => Ok(Feature::Map(l.forward(x.into_map()?, cache)?)),
                ForwardMode::FrozenEval => Ok(Feature::Map(l.forward_shape_cached(x.into_map()?)?)),
            },
            Layer::Deconv(l) => match mode {
                ForwardMode::Train { .. } => Ok(Feature::Map(l.forward(x.into_map()?, cache)?)),
                ForwardMode::FrozenEval => Ok(Feature::Map(l.forward_shape_cached(x.into_map()?)?)),
            },
            Layer::Bn(l) => match mode {
                ForwardMode::Train { track_stats } => {
                    Ok(Feature::Map(l.forward_train(x.into_map()?, track_stats)?))
                }
                ForwardMode::FrozenEval => Ok(Feature::Map(l.forward_affine(x.into_map()?)?)),
            },
            Layer::Linear(l) => match mode {
                ForwardMode::Train { .. } => Ok(Feature::Flat(l.forward(x.into_flat()?, cache)?)),
                ForwardMode::FrozenEval => Ok(Feature::Flat(l.forward_shape_cached(x.into_flat()?)?)),
            },
            Layer::Relu(l) => Ok(l.forward(x, cache)),
            Layer::Leaky(l) => Ok(l.forward(x, cache)),
            Layer::Tanh(l) => Ok(l.forward(x, cache)),
            Layer::Sigmoid(l) => Ok(l.forward(x, cache)),
            Layer::Flatten { cached } => {
                let map = x.into_map()?;
                let (n, c, h, w) = map.dim();
                if cache {
                    *cached = Some((c, h, w));
                }
                let flat = map
                    .into_shape_with_order((n, c * h * w))
                    .map_err(|e| Error::shape(e.to_string()))?;
                Ok(Feature::Flat(flat))
            }
            Layer::Reshape { c, h, w } => {
                let flat = x.into_flat()?;
                let n = flat.nrows();
                let map = flat
                    .into_shape_with_order((n, *c, *h, *w))
                    .map_err(|e| Error::shape(e.to_string()))?;
                Ok(Feature::Map(map))
            }
        }
    }

    fn forward_eval(&self, x: Feature) -> Result<Feature> {
        match self {
            Layer::Conv(l) => Ok(Feature::Map(l.forward_ref(&x.into_map()?)?)),
            Layer::Deconv(l) => Ok(Feature::Map(l.forward_ref(&x.into_map()?)?)),
            Layer::Bn(l) => Ok(Feature::Map(l.forward_eval(&x.into_map()?)?)),
            Layer::Linear(l) => Ok(Feature::Flat(l.forward_ref(&x.into_flat()?)?)),
            Layer::Relu(_) => {
                let mut x = x;
                x.map_values(|v| v.max(0.0));
                Ok(x)
            }
            Layer::Leaky(l) => {
                let mut x = x;
                let a = l.slope;
                x.map_values(move |v| if v > 0.0 { v } else { a * v });
                Ok(x)
            }
            Layer::Tanh(_) => {
                let mut x = x;
                x.map_values(|v| v.tanh());
                Ok(x)
            }
            Layer::Sigmoid(_) => {
                let mut x = x;
                x.map_values(|v| 1.0 / (1.0 + (-v).exp()));
                Ok(x)
            }
            Layer::Flatten { .. } => {
                let map = x.into_map()?;
                let (n, c, h, w) = map.dim();
                Ok(Feature::Flat(
                    map.into_shape_with_order((n, c * h * w))
                        .map_err(|e| Error::shape(e.to_string()))?,
                ))
            }
            Layer::Reshape { c, h, w } => {
                let flat = x.into_flat()?;
                let n = flat.nrows();
                Ok(Feature::Map(
                    flat.into_shape_with_order((n, *c, *h, *w))
                        .map_err(|e| Error::shape(e.to_string()))?,
                ))
            }
        }
    }

    fn backward(&mut self, dy: Feature, frozen: bool) -> Result<Feature> {
        match self {
            Layer::Conv(l) => Ok(Feature::Map(l.backward(dy.into_map()?, frozen)?)),
            Layer::Deconv(l) => Ok(Feature::Map(l.backward(dy.into_map()?, frozen)?)),
            Layer::Bn(l) => Ok(Feature::Map(l.backward(dy.into_map()?, frozen)?)),
            Layer::Linear(l) => Ok(Feature::Flat(l.backward(dy.into_flat()?, frozen)?)),
            Layer::Relu(l) => l.backward(dy),
            Layer::Leaky(l) => l.backward(dy),
            Layer::Tanh(l) => l.backward(dy),
            Layer::Sigmoid(l) => l.backward(dy),
            Layer::Flatten { cached } => {
                let (c, h, w) = cached
                    .take()
                    .ok_or_else(|| Error::validation("flatten backward without forward"))?;
                let flat = dy.into_flat()?;
                let n = flat.nrows();
                Ok(Feature::Map(
                    flat.into_shape_with_order((n, c, h, w))
                        .map_err(|e| Error::shape(e.to_string()))?,
                ))
            }
            Layer::Reshape { .. } => {
                let map = dy.into_map()?;
                let (n, c, h, w) = map.dim();
                Ok(Feature::Flat(
                    map.into_shape_with_order((n, c * h * w))
                        .map_err(|e| Error::shape(e.to_string()))?,
                ))
            }
        }
    }

    fn visit_params(&mut self, f: &mut dyn FnMut(&mut [f32], &mut [f32])) {
        match self {
            Layer::Conv(l) => {
                f(
                    l.w.as_slice_mut().expect("contiguous"),
                    l.gw.as_slice_mut().expect("contiguous"),
                );
                f(
                    l.b.as_slice_mut().expect("contiguous"),
                    l.gb.as_slice_mut().expect("contiguous"),
                );
            }
            Layer::Deconv(l) => {
                f(
                    l.w.as_slice_mut().expect("contiguous"),
                    l.gw.as_slice_mut().expect("contiguous"),
                );
                f(
                    l.b.as_slice_mut().expect("contiguous"),
                    l.gb.as_slice_mut().expect("contiguous"),
                );
            }
            Layer::Bn(l) => {
                f(
                    l.gamma.as_slice_mut().expect("contiguous"),
                    l.g_gamma.as_slice_mut().expect("contiguous"),
                );
                f(
                    l.beta.as_slice_mut().expect("contiguous"),
                    l.g_beta.as_slice_mut().expect("contiguous"),
                );
            }
            Layer::Linear(l) => {
                f(
                    l.w.as_slice_mut().expect("contiguous"),
                    l.gw.as_slice_mut().expect("contiguous"),
                );
                f(
                    l.b.as_slice_mut().expect("contiguous"),
                    l.gb.as_slice_mut().expect("contiguous"),
                );
            }
            _ => {}
        }
    }

    /// Named tensors to persist: parameters plus batch-norm running stats.
    fn tensors(&self, idx: usize, out: &mut Vec<TensorEntry>) {
        let name = |field: &str| format!("layer{idx}.{field}");
        match self {
            Layer::Conv(l) => {
                out.push(TensorEntry::from_array4(name("w"), &l.w));
                out.push(TensorEntry::from_array1(name("b"), &l.b));
            }
            Layer::Deconv(l) => {
                out.push(TensorEntry::from_array4(name("w"), &l.w));
                out.push(TensorEntry::from_array1(name("b"), &l.b));
            }
            Layer::Bn(l) => {
                out.push(TensorEntry::from_array1(name("gamma"), &l.gamma));
                out.push(TensorEntry::from_array1(name("beta"), &l.beta));
                out.push(TensorEntry::from_array1(name("running_mean"), &l.running_mean));
                out.push(TensorEntry::from_array1(name("running_var"), &l.running_var));
            }
            Layer::Linear(l) => {
                out.push(TensorEntry::from_array2(name("w"), &l.w));
                out.push(TensorEntry::from_array1(name("b"), &l.b));
            }
            _ => {}
        }
    }

    fn load_tensors(
        &mut self,
        idx: usize,
        lookup: &mut dyn FnMut(&str) -> Result<TensorEntry>,
    ) -> Result<()> {
        let name = |field: &str| format!("layer{idx}.{field}");
        match self {
            Layer::Conv(l) => {
                lookup(&name("w"))?.into_array4_like(&mut l.w)?;
                lookup(&name("b"))?.into_array1_like(&mut l.b)?;
            }
            Layer::Deconv(l) => {
                lookup(&name("w"))?.into_array4_like(&mut l.w)?;
                lookup(&name("b"))?.into_array1_like(&mut l.b)?;
            }
            Layer::Bn(l) => {
                lookup(&name("gamma"))?.into_array1_like(&mut l.gamma)?;
                lookup(&name("beta"))?.into_array1_like(&mut l.beta)?;
                lookup(&name("running_mean"))?.into_array1_like(&mut l.running_mean)?;
                lookup(&name("running_var"))?.into_array1_like(&mut l.running_var)?;
            }
            Layer::Linear(l) => {
                lookup(&name("w"))?.into_array2_like(&mut l.w)?;
                lookup(&name("b"))?.into_array1_like(&mut l.b)?;
            }
            _ => {}
        }
        Ok(())
    }
}

/// A sequential network plus its spec. `frozen` turns off parameter-gradient
/// accumulation (input gradients still flow), used when the network serves
/// as a fixed scorer inside someone else's update.
pub struct Net {
    pub spec: NetworkSpec,
    layers: Vec<Layer>,
    pub frozen: bool,
}

impl Net {
    pub fn forward_train(&mut self, x: Feature, track_stats: bool) -> Result<Feature> {
        self.forward_mode(x, ForwardMode::Train { track_stats })
    }

    /// Frozen-scorer forward: running-stats normalization, caches only what
    /// input-gradient backward needs. The net must already be frozen.
    pub fn forward_frozen(&mut self, x: Feature) -> Result<Feature> {
        debug_assert!(self.frozen, "forward_frozen on an unfrozen net");
        self.forward_mode(x, ForwardMode::FrozenEval)
    }

    pub fn forward_mode(&mut self, x: Feature, mode: ForwardMode) -> Result<Feature> {
        let mut cur = x;
        for layer in &mut self.layers {
            cur = layer.forward(cur, mode)?;
        }
        Ok(cur)
    }

    /// Pure evaluation-mode forward (running batch-norm stats, no caching);
    /// safe to call concurrently on disjoint inputs.
    pub fn forward_eval(&self, x: Feature) -> Result<Feature> {
        let mut cur = x;
        for layer in &self.layers {
            cur = layer.forward_eval(cur)?;
        }
        Ok(cur)
    }

    pub fn backward(&mut self, dy: Feature) -> Result<Feature> {
        let mut cur = dy;
        let frozen = self.frozen;
        for layer in self.layers.iter_mut().rev() {
            cur = layer.backward(cur, frozen)?;
        }
        Ok(cur)
    }

    pub fn zero_grads(&mut self) {
        self.visit_params(&mut |_w, g| {
            for v in g.iter_mut() {
                *v = 0.0;
            }
        });
    }

    pub fn visit_params(&mut self, f: &mut dyn FnMut(&mut [f32], &mut [f32])) {
        for layer in &mut self.layers {
            layer.visit_params(f);
        }
    }

    pub fn param_count(&mut self) -> usize {
        let mut count = 0;
        self.visit_params(&mut |w, _| count += w.len());
        count
    }

    pub fn grads_all_finite(&mut self) -> bool {
        let mut ok = true;
        self.visit_params(&mut |_w, g| ok &= g.iter().all(|v| v.is_finite()));
        ok
    }

    pub fn export_tensors(&self, prefix: &str) -> Vec<TensorEntry> {
        let mut out = Vec::new();
        for (idx, layer) in self.layers.iter().enumerate() {
            layer.tensors(idx, &mut out);
        }
        for e in &mut out {
            e.name = format!("{prefix}.{}", e.name);
        }
        out
    }

    pub fn import_tensors(&mut self, prefix: &str, entries: &[TensorEntry]) -> Result<()> {
        let mut find = |name: &str| -> Result<TensorEntry> {
            let full = format!("{prefix}.{name}");
            entries
                .iter()
                .find(|e| e.name == full)
                .cloned()
                .ok_or_else(|| Error::format(format!("missing tensor `{full}`")))
        };
        for (idx, layer) in self.layers.iter_mut().enumerate() {
            layer.load_tensors(idx, &mut find)?;
        }
        Ok(())
    }
}

/// Instantiates a validated spec; conv/linear weights draw from
/// normal(0, 0.02), batch-norm scales from normal(1, 0.02).
pub fn build_network(spec: &NetworkSpec, rng: &mut Rng) -> Result<Net> {
    let mut shape = spec.validate().map(|_| match spec.input {
        InputShape::Latent(m) => SymShape::Flat(m),
        InputShape::Image { c, h, w } => SymShape::Map { c, h, w },
    })?;
    let mut layers = Vec::with_capacity(spec.plan.len());
    let mut init = |slice: &mut [f32], mean: f32| {
        fill_standard_normal(rng, slice);
        for v in slice.iter_mut() {
            *v = mean + 0.02 * *v;
        }
    };
    for ls in &spec.plan {
        let layer = match (*ls, shape) {
            (LayerSpec::Conv { out, k, s, p }, SymShape::Map { c, .. }) => {
                let mut l = Conv2d::new(c, out, k, s, p);
                init(l.w.as_slice_mut().unwrap(), 0.0);
                Layer::Conv(l)
            }
            (LayerSpec::Deconv { out, k, s, p }, SymShape::Map { c, .. }) => {
                let mut l = ConvTranspose2d::new(c, out, k, s, p);
                init(l.w.as_slice_mut().unwrap(), 0.0);
                Layer::Deconv(l)
            }
            (LayerSpec::Bn, SymShape::Map { c, .. }) => {
                let mut l = BatchNorm2d::new(c);
                init(l.gamma.as_slice_mut().unwrap(), 1.0);
                Layer::Bn(l)
            }
            (LayerSpec::Linear { out }, SymShape::Flat(d)) => {
                let mut l = Linear::new(d, out);
                init(l.w.as_slice_mut().unwrap(), 0.0);
                Layer::Linear(l)
            }
            (LayerSpec::Relu, _) => Layer::Relu(Relu::default()),
            (LayerSpec::Leaky { slope }, _) => Layer::Leaky(LeakyRelu::new(slope)),
            (LayerSpec::Tanh, _) => Layer::Tanh(TanhAct::default()),
            (LayerSpec::Sigmoid, _) => Layer::Sigmoid(SigmoidAct::default()),
            (LayerSpec::Flatten, _) => Layer::Flatten { cached: None },
            (LayerSpec::Reshape { c, h, w }, _) => Layer::Reshape { c, h, w },
            (ls, _) => {
                return Err(Error::validation(format!(
                    "layer {ls} incompatible with propagated shape"
                )))
            }
        };
        shape = match step_shape_checked(shape, ls) {
            Some(s) => s,
            None => return Err(Error::validation("shape propagation failed")),
        };
        layers.push(layer);
    }
    Ok(Net {
        spec: spec.clone(),
        layers,
        frozen: false,
    })
}

fn step_shape_checked(shape: SymShape, ls: &LayerSpec) -> Option<SymShape> {
    // validate() already proved the plan consistent; recompute shapes the
    // same way for construction.
    fn conv_extent(v: usize, k: usize, s: usize, p: usize) -> usize {
        (v + 2 * p - k) / s + 1
    }
    Some(match (shape, *ls) {
        (SymShape::Map { h, w, .. }, LayerSpec::Conv { out, k, s, p }) => SymShape::Map {
            c: out,
            h: conv_extent(h, k, s, p),
            w: conv_extent(w, k, s, p),
        },
        (SymShape::Map { h, w, .. }, LayerSpec::Deconv { out, k, s, p }) => SymShape::Map {
            c: out,
            h: (h - 1) * s + k - 2 * p,
            w: (w - 1) * s + k - 2 * p,
        },
        (s, LayerSpec::Bn) => s,
        (s, LayerSpec::Relu | LayerSpec::Leaky { .. } | LayerSpec::Tanh | LayerSpec::Sigmoid) => s,
        (SymShape::Map { c, h, w }, LayerSpec::Flatten) => SymShape::Flat(c * h * w),
        (SymShape::Flat(_), LayerSpec::Reshape { c, h, w }) => SymShape::Map { c, h, w },
        (SymShape::Flat(_), LayerSpec::Linear { out }) => SymShape::Flat(out),
        _ => return None,
    })
}

/// (batch, m) latent matrix of i.i.d. standard normal draws.
pub fn sample_latent(batch: usize, m: usize, rng: &mut Rng) -> Result<Array2<f32>> {
    if batch == 0 || m == 0 {
        return Err(Error::validation(
            "latent batch and dimension must be positive",
        ));
    }
    let mut z = Array2::<f32>::zeros((batch, m));
    fill_standard_normal(rng, z.as_slice_mut().expect("contiguous"));
    Ok(z)
}

/// Convenience: latent batch straight into a generator image batch.
pub fn generate_images(
    gen: &mut Net,
    batch: usize,
    rng: &mut Rng,
    track_stats: bool,
) -> Result<Array4<f32>> {
    let m = match gen.spec.input {
        InputShape::Latent(m) => m,
        _ => return Err(Error::validation("generator input must be latent")),
    };
    let z = sample_latent(batch, m, rng)?;
    gen.forward_train(Feature::Flat(z), track_stats)?.into_map()
}

/// Evaluation-mode sampling (running stats, no caches); for metrics.
pub fn generate_images_eval(gen: &Net, batch: usize, rng: &mut Rng) -> Result<Array4<f32>> {
    let m = match gen.spec.input {
        InputShape::Latent(m) => m,
        _ => return Err(Error::validation("generator input must be latent")),
    };
    let z = sample_latent(batch, m, rng)?;
    gen.forward_eval(Feature::Flat(z))?.into_map()
}

/// Raw (N, K) classifier scores in evaluation mode.
pub fn classifier_scores_eval(net: &Net, images: &Array4<f32>) -> Result<Array2<f32>> {
    net.forward_eval(Feature::Map(images.clone()))?.into_flat()
}
