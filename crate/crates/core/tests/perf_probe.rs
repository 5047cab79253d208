//! Manual performance probes (`-- --ignored --nocapture`).

use std::time::Instant;

use mex_core::nn::{build_network, Feature, NetworkSpec, Role};
use mex_core::rng::{fill_standard_normal, seed_rng};
use ndarray::{Array2, Array4};

fn time<F: FnMut()>(label: &str, iters: usize, mut f: F) {
    // warmup
    f();
    let t0 = Instant::now();
    for _ in 0..iters {
        f();
    }
    let dt = t0.elapsed().as_secs_f64() / iters as f64;
    println!("{label}: {:.1} ms", dt * 1e3);
}

#[test]
#[ignore]
fn layer_timings() {
    let mut rng = seed_rng(1);
    let batch = 128;

    // clone forward+backward
    let spec = NetworkSpec::classifier_32(Role::Clone, 1, 10, mex_core::nn::ClassifierArch::Small);
    let mut clone = build_network(&spec, &mut rng).unwrap();
    let mut x = Array4::<f32>::zeros((batch, 1, 32, 32));
    fill_standard_normal(&mut rng, x.as_slice_mut().unwrap());
    let dy = Array2::<f32>::from_elem((batch, 10), 0.01);
    time("clone fwd(train)", 5, || {
        let _ = clone.forward_train(Feature::Map(x.clone()), true).unwrap();
    });
    time("clone fwd+bwd", 5, || {
        clone.zero_grads();
        let _ = clone.forward_train(Feature::Map(x.clone()), true).unwrap();
        let _ = clone.backward(Feature::Flat(dy.clone())).unwrap();
    });
    time("clone fwd(eval)", 5, || {
        let _ = clone.forward_eval(Feature::Map(x.clone())).unwrap();
    });

    // generator forward+backward
    let gspec = NetworkSpec::generator_32(100, 64, 1);
    let mut gen = build_network(&gspec, &mut rng).unwrap();
    let mut z = Array2::<f32>::zeros((batch, 100));
    fill_standard_normal(&mut rng, z.as_slice_mut().unwrap());
    let gdy = Array4::<f32>::from_elem((batch, 1, 32, 32), 0.01);
    time("gen fwd(train)", 5, || {
        let _ = gen.forward_train(Feature::Flat(z.clone()), true).unwrap();
    });
    time("gen fwd+bwd", 5, || {
        gen.zero_grads();
        let _ = gen.forward_train(Feature::Flat(z.clone()), true).unwrap();
        let _ = gen.backward(Feature::Map(gdy.clone())).unwrap();
    });

    // discriminator forward+backward
    let dspec = NetworkSpec::discriminator_32(1, 16);
    let mut dis = build_network(&dspec, &mut rng).unwrap();
    let ddy = Array2::<f32>::from_elem((batch, 1), 0.01);
    time("disc fwd+bwd", 5, || {
        dis.zero_grads();
        let _ = dis.forward_train(Feature::Map(x.clone()), true).unwrap();
        let _ = dis.backward(Feature::Flat(ddy.clone())).unwrap();
    });

    // raw GEMM reference point: clone conv2-like shapes
    let a = Array2::<f32>::from_elem((32, 144), 0.5);
    let b = Array2::<f32>::from_elem((144, 16 * 256), 0.5);
    time("gemm 32x144x4096", 20, || {
        let _ = a.dot(&b);
    });
    let a = Array2::<f32>::from_elem((64, 288), 0.5);
    let b = Array2::<f32>::from_elem((288, 16 * 64), 0.5);
    time("gemm 64x288x1024", 20, || {
        let _ = a.dot(&b);
    });
}
