//! Backward-pass oracles for the network stack: every structured layer is
//! compared against a direct nested-loop reference implementation (f64),
//! and whole networks get a coarse directional finite-difference sanity
//! check plus the architecture range/determinism invariants.

use mex_core::nn::{
    build_network, sample_latent, BatchNorm2d, Conv2d, ConvTranspose2d, Feature, InputShape,
    LayerSpec, Net, NetworkSpec, Role,
};
use mex_core::rng::{fill_standard_normal, seed_rng};
use ndarray::{Array1, Array2, Array4};
use rand::Rng as _;

fn randn4(dims: (usize, usize, usize, usize), seed: u64) -> Array4<f32> {
    let mut rng = seed_rng(seed);
    let mut a = Array4::<f32>::zeros(dims);
    fill_standard_normal(&mut rng, a.as_slice_mut().unwrap());
    a
}

fn assert_close(actual: &[f32], reference: &[f64], tol: f64, what: &str) {
    assert_eq!(actual.len(), reference.len(), "{what}: length mismatch");
    for (i, (&a, &r)) in actual.iter().zip(reference.iter()).enumerate() {
        let denom = r.abs().max(1.0);
        assert!(
            ((a as f64) - r).abs() / denom < tol,
            "{what}[{i}]: {a} vs reference {r}"
        );
    }
}

// ---------------------------------------------------------------- conv ----

struct ConvRef {
    y: Vec<f64>,
    dx: Vec<f64>,
    dw: Vec<f64>,
    db: Vec<f64>,
}

#[allow(clippy::too_many_arguments)]
fn conv_reference(
    x: &Array4<f32>,
    w: &Array4<f32>,
    b: &Array1<f32>,
    dy: &Array4<f32>,
    stride: usize,
    pad: usize,
) -> ConvRef {
    let (n, ci, h, wd) = x.dim();
    let (co, _, k, _) = w.dim();
    let (ho, wo) = (dy.dim().2, dy.dim().3);
    let mut y = vec![0f64; n * co * ho * wo];
    let mut dx = vec![0f64; n * ci * h * wd];
    let mut dw = vec![0f64; co * ci * k * k];
    let mut db = vec![0f64; co];
    for ni in 0..n {
        for oc in 0..co {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = b[oc] as f64;
                    let g = dy[[ni, oc, oy, ox]] as f64;
                    db[oc] += g;
                    for ic in 0..ci {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                let (iy, ix) = (iy as usize, ix as usize);
                                let xv = x[[ni, ic, iy, ix]] as f64;
                                let wv = w[[oc, ic, ky, kx]] as f64;
                                acc += xv * wv;
                                dx[((ni * ci + ic) * h + iy) * wd + ix] += g * wv;
                                dw[((oc * ci + ic) * k + ky) * k + kx] += g * xv;
                            }
                        }
                    }
                    y[((ni * co + oc) * ho + oy) * wo + ox] = acc;
                }
            }
        }
    }
    ConvRef { y, dx, dw, db }
}

#[test]
fn conv2d_matches_direct_reference() {
    for (stride, pad, seed) in [(1usize, 1usize, 1u64), (2, 1, 2), (1, 0, 3)] {
        let (n, ci, co, h, k) = (5, 3, 4, 6, 3);
        let x = randn4((n, ci, h, h), seed);
        let mut layer = Conv2d::new(ci, co, k, stride, pad);
        layer.w = randn4((co, ci, k, k), seed + 10);
        let mut rng = seed_rng(seed + 20);
        fill_standard_normal(&mut rng, layer.b.as_slice_mut().unwrap());

        let y = layer.forward(x.clone(), true).unwrap();
        let dy = randn4(y.dim(), seed + 30);
        let reference = conv_reference(&x, &layer.w, &layer.b, &dy, stride, pad);
        assert_close(y.as_slice().unwrap(), &reference.y, 1e-4, "conv y");

        let dx = layer.backward(dy, false).unwrap();
        assert_close(dx.as_slice().unwrap(), &reference.dx, 1e-4, "conv dx");
        assert_close(layer.gw.as_slice().unwrap(), &reference.dw, 1e-4, "conv dw");
        assert_close(layer.gb.as_slice().unwrap(), &reference.db, 1e-4, "conv db");
    }
}

// -------------------------------------------------------------- deconv ----

fn deconv_reference(
    x: &Array4<f32>,
    w: &Array4<f32>,
    b: &Array1<f32>,
    dy: &Array4<f32>,
    stride: usize,
    pad: usize,
) -> ConvRef {
    let (n, ci, hi, wi) = x.dim();
    let (_, co, k, _) = w.dim();
    let (ho, wo) = (dy.dim().2, dy.dim().3);
    let mut y = vec![0f64; n * co * ho * wo];
    let mut dx = vec![0f64; n * ci * hi * wi];
    let mut dw = vec![0f64; ci * co * k * k];
    let mut db = vec![0f64; co];
    for ni in 0..n {
        for ic in 0..ci {
            for iy in 0..hi {
                for ix in 0..wi {
                    let xv = x[[ni, ic, iy, ix]] as f64;
                    for oc in 0..co {
                        for ky in 0..k {
                            for kx in 0..k {
                                let oy = (iy * stride + ky) as isize - pad as isize;
                                let ox = (ix * stride + kx) as isize - pad as isize;
                                if oy < 0 || ox < 0 || oy >= ho as isize || ox >= wo as isize {
                                    continue;
                                }
                                let (oy, ox) = (oy as usize, ox as usize);
                                let wv = w[[ic, oc, ky, kx]] as f64;
                                let g = dy[[ni, oc, oy, ox]] as f64;
                                y[((ni * co + oc) * ho + oy) * wo + ox] += xv * wv;
                                dx[((ni * ci + ic) * hi + iy) * wi + ix] += g * wv;
                                dw[((ic * co + oc) * k + ky) * k + kx] += g * xv;
                            }
                        }
                    }
                }
            }
        }
    }
    for ni in 0..n {
        for oc in 0..co {
            for oy in 0..ho {
                for ox in 0..wo {
                    y[((ni * co + oc) * ho + oy) * wo + ox] += b[oc] as f64;
                    db[oc] += dy[[ni, oc, oy, ox]] as f64;
                }
            }
        }
    }
    ConvRef { y, dx, dw, db }
}

#[test]
fn conv_transpose2d_matches_direct_reference() {
    for (stride, pad, seed) in [(2usize, 1usize, 4u64), (1, 0, 5)] {
        let (n, ci, co, hi, k) = (4, 4, 3, 3, 4);
        let x = randn4((n, ci, hi, hi), seed);
        let mut layer = ConvTranspose2d::new(ci, co, k, stride, pad);
        layer.w = randn4((ci, co, k, k), seed + 10);
        let mut rng = seed_rng(seed + 20);
        fill_standard_normal(&mut rng, layer.b.as_slice_mut().unwrap());

        let y = layer.forward(x.clone(), true).unwrap();
        let (ho, wo) = layer.out_hw(hi, hi).unwrap();
        assert_eq!(y.dim(), (n, co, ho, wo));
        let dy = randn4(y.dim(), seed + 30);
        let reference = deconv_reference(&x, &layer.w, &layer.b, &dy, stride, pad);
        assert_close(y.as_slice().unwrap(), &reference.y, 1e-4, "deconv y");

        let dx = layer.backward(dy, false).unwrap();
        assert_close(dx.as_slice().unwrap(), &reference.dx, 1e-4, "deconv dx");
        assert_close(layer.gw.as_slice().unwrap(), &reference.dw, 1e-4, "deconv dw");
        assert_close(layer.gb.as_slice().unwrap(), &reference.db, 1e-4, "deconv db");
    }
}

// ------------------------------------------------------------------ bn ----

#[test]
fn batch_norm_matches_direct_reference() {
    let (n, c, h) = (6, 3, 4);
    let x = randn4((n, c, h, h), 7);
    let mut layer = BatchNorm2d::new(c);
    let mut rng = seed_rng(17);
    fill_standard_normal(&mut rng, layer.gamma.as_slice_mut().unwrap());
    layer.gamma.mapv_inplace(|v| 1.0 + 0.1 * v);
    fill_standard_normal(&mut rng, layer.beta.as_slice_mut().unwrap());

    let y = layer.forward_train(x.clone(), false).unwrap();
    let dy = randn4(y.dim(), 27);

    // f64 reference
    let m = (n * h * h) as f64;
    let mut y_ref = vec![0f64; n * c * h * h];
    let mut dx_ref = vec![0f64; n * c * h * h];
    let mut dgamma = vec![0f64; c];
    let mut dbeta = vec![0f64; c];
    for ch in 0..c {
        let vals: Vec<f64> = (0..n)
            .flat_map(|ni| {
                let x = &x;
                (0..h).flat_map(move |yy| (0..h).map(move |xx| x[[ni, ch, yy, xx]] as f64))
            })
            .collect();
        let mean = vals.iter().sum::<f64>() / m;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / m;
        let inv = 1.0 / (var + layer.eps as f64).sqrt();
        let g = layer.gamma[ch] as f64;
        let b = layer.beta[ch] as f64;
        let mut xhat = vec![0f64; n * h * h];
        let mut dys = vec![0f64; n * h * h];
        let mut idx = 0;
        for ni in 0..n {
            for yy in 0..h {
                for xx in 0..h {
                    xhat[idx] = (x[[ni, ch, yy, xx]] as f64 - mean) * inv;
                    dys[idx] = dy[[ni, ch, yy, xx]] as f64;
                    y_ref[((ni * c + ch) * h + yy) * h + xx] = g * xhat[idx] + b;
                    idx += 1;
                }
            }
        }
        let sum_dy: f64 = dys.iter().sum();
        let sum_dy_xhat: f64 = dys.iter().zip(xhat.iter()).map(|(a, b)| a * b).sum();
        dbeta[ch] = sum_dy;
        dgamma[ch] = sum_dy_xhat;
        let mut idx = 0;
        for ni in 0..n {
            for yy in 0..h {
                for xx in 0..h {
                    let v = m * dys[idx] - sum_dy - xhat[idx] * sum_dy_xhat;
                    dx_ref[((ni * c + ch) * h + yy) * h + xx] = g * inv / m * v;
                    idx += 1;
                }
            }
        }
    }
    assert_close(y.as_slice().unwrap(), &y_ref, 1e-3, "bn y");
    let dx = layer.backward(dy, false).unwrap();
    assert_close(dx.as_slice().unwrap(), &dx_ref, 1e-3, "bn dx");
    assert_close(layer.g_gamma.as_slice().unwrap(), &dgamma, 1e-3, "bn dgamma");
    assert_close(layer.g_beta.as_slice().unwrap(), &dbeta, 1e-3, "bn dbeta");
}

// --------------------------------------------- whole-network fd sanity ----

/// Coarse directional finite-difference check through a conv+bn+relu stack.
/// f32 forward noise and activation kinks cap the attainable precision, so
/// this is a structural sanity bound; the layer oracles above are exact.
#[test]
fn composed_network_directional_derivative_sanity() {
    let spec = NetworkSpec {
        role: Role::Clone,
        input: InputShape::Image { c: 2, h: 8, w: 8 },
        plan: vec![
            LayerSpec::Conv { out: 4, k: 3, s: 1, p: 1 },
            LayerSpec::Bn,
            LayerSpec::Relu,
            LayerSpec::Conv { out: 6, k: 3, s: 2, p: 1 },
            LayerSpec::Bn,
            LayerSpec::Leaky { slope: 0.2 },
            LayerSpec::Flatten,
            LayerSpec::Linear { out: 3 },
        ],
    };
    let mut rng = seed_rng(91);
    let mut net = build_network(&spec, &mut rng).unwrap();
    let x = randn4((5, 2, 8, 8), 92);
    let mut w = vec![0f32; 5 * 3];
    fill_standard_normal(&mut rng, &mut w);

    let functional = |net: &mut Net, x: &Array4<f32>| -> f64 {
        let y = net
            .forward_train(Feature::Map(x.clone()), false)
            .unwrap()
            .into_flat()
            .unwrap();
        y.iter()
            .zip(w.iter())
            .map(|(&a, &b)| a as f64 * b as f64)
            .sum()
    };

    net.zero_grads();
    let y = net.forward_train(Feature::Map(x.clone()), false).unwrap().into_flat().unwrap();
    let mut dy = Array2::<f32>::zeros(y.dim());
    dy.as_slice_mut().unwrap().copy_from_slice(&w);
    let grad = net
        .backward(Feature::Flat(dy))
        .unwrap()
        .into_map()
        .unwrap();

    let mut ok = 0;
    for trial in 0..5u64 {
        let mut dir = randn4((5, 2, 8, 8), 100 + trial);
        let norm = dir.iter().map(|v| v * v).sum::<f32>().sqrt();
        dir.mapv_inplace(|v| v / norm);
        let eps = 2e-2f32;
        let mut xp = x.clone();
        xp.zip_mut_with(&dir, |a, &d| *a += eps * d);
        let mut xm = x.clone();
        xm.zip_mut_with(&dir, |a, &d| *a -= eps * d);
        let fd = (functional(&mut net, &xp) - functional(&mut net, &xm)) / (2.0 * eps as f64);
        let analytic: f64 = grad
            .iter()
            .zip(dir.iter())
            .map(|(&g, &d)| g as f64 * d as f64)
            .sum();
        let denom = analytic.abs().max(fd.abs()).max(1e-2);
        if (fd - analytic).abs() / denom < 5e-2 {
            ok += 1;
        }
    }
    assert!(ok >= 4, "directional derivatives disagreed in {} of 5 trials", 5 - ok);
}

// ------------------------------------------------- architecture checks ----

#[test]
fn generator_range_holds_even_for_extreme_latents() {
    let mut rng = seed_rng(9);
    let spec = NetworkSpec::generator_32(16, 16, 1);
    let mut gen = build_network(&spec, &mut rng).unwrap();
    for scale in [1.0f32, 6.0, -6.0] {
        let z = Array2::from_elem((4, 16), scale);
        let out = gen
            .forward_train(Feature::Flat(z), false)
            .unwrap()
            .into_map()
            .unwrap();
        assert_eq!(out.dim(), (4, 1, 32, 32));
        assert!(out.iter().all(|v| (-1.0..=1.0).contains(v)));
    }
}

#[test]
fn discriminator_outputs_live_in_unit_interval() {
    let mut rng = seed_rng(10);
    let spec = NetworkSpec::discriminator_32(1, 8);
    let mut dis = build_network(&spec, &mut rng).unwrap();
    let x = randn4((4, 1, 32, 32), 11);
    let p = dis
        .forward_train(Feature::Map(x), false)
        .unwrap()
        .into_flat()
        .unwrap();
    assert_eq!(p.dim(), (4, 1));
    assert!(p.iter().all(|v| (0.0..=1.0).contains(v) && v.is_finite()));
}

#[test]
fn clone_scores_are_finite_with_expected_shape() {
    let mut rng = seed_rng(12);
    let spec = NetworkSpec::classifier_32(Role::Clone, 1, 10, mex_core::nn::ClassifierArch::Small);
    let mut net = build_network(&spec, &mut rng).unwrap();
    let x = randn4((4, 1, 32, 32), 13);
    let scores = net
        .forward_train(Feature::Map(x), true)
        .unwrap()
        .into_flat()
        .unwrap();
    assert_eq!(scores.dim(), (4, 10));
    assert!(scores.iter().all(|v| v.is_finite()));
}

#[test]
fn eval_forward_is_deterministic_and_pure() {
    let mut rng = seed_rng(14);
    let spec = NetworkSpec::classifier_32(Role::Victim, 1, 10, mex_core::nn::ClassifierArch::Small);
    let net = build_network(&spec, &mut rng).unwrap();
    let x = randn4((3, 1, 32, 32), 15);
    let a = net.forward_eval(Feature::Map(x.clone())).unwrap().into_flat().unwrap();
    let b = net.forward_eval(Feature::Map(x)).unwrap().into_flat().unwrap();
    let bits = |m: &Array2<f32>| m.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
}

#[test]
fn gradients_finite_after_one_backward_on_random_data() {
    let mut rng = seed_rng(16);
    for spec in [
        NetworkSpec::generator_32(16, 16, 1),
        NetworkSpec::discriminator_32(1, 8),
        NetworkSpec::classifier_32(Role::Clone, 1, 10, mex_core::nn::ClassifierArch::Small),
    ] {
        let mut net = build_network(&spec, &mut rng).unwrap();
        let x = match spec.input {
            InputShape::Latent(m) => Feature::Flat(sample_latent(4, m, &mut rng).unwrap()),
            InputShape::Image { c, h, w } => Feature::Map(randn4((4, c, h, w), rng.gen())),
        };
        net.zero_grads();
        let y = net.forward_train(x, false).unwrap();
        let dy = match y {
            Feature::Flat(a) => Feature::Flat(Array2::from_elem(a.dim(), 0.5f32)),
            Feature::Map(a) => Feature::Map(Array4::from_elem(a.dim(), 0.5f32)),
        };
        net.backward(dy).unwrap();
        assert!(net.grads_all_finite(), "{:?} produced non-finite grads", spec.role);
    }
}

#[test]
fn parallel_chunking_does_not_change_results() {
    // same forward under a 1-thread pool and the default pool, bit-compared
    let spec = NetworkSpec {
        role: Role::Clone,
        input: InputShape::Image { c: 2, h: 8, w: 8 },
        plan: vec![
            LayerSpec::Conv { out: 4, k: 3, s: 1, p: 1 },
            LayerSpec::Bn,
            LayerSpec::Relu,
            LayerSpec::Flatten,
            LayerSpec::Linear { out: 3 },
        ],
    };
    let x = randn4((37, 2, 8, 8), 41);
    let run = |threads: Option<usize>| -> Vec<u32> {
        let mut rng = seed_rng(55);
        let mut net = build_network(&spec, &mut rng).unwrap();
        let go = |net: &mut Net| {
            net.forward_train(Feature::Map(x.clone()), false)
                .unwrap()
                .into_flat()
                .unwrap()
                .iter()
                .map(|v| v.to_bits())
                .collect::<Vec<u32>>()
        };
        match threads {
            Some(t) => rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build()
                .unwrap()
                .install(|| go(&mut net)),
            None => go(&mut net),
        }
    };
    assert_eq!(run(Some(1)), run(None));
}
