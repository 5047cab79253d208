//! Manual diagnostics for the extraction dynamics (`--ignored --nocapture`).

use mex_core::attack::{AttackConfig, AttackEnv, AttackMode, AttackRun};
use mex_core::data::{pattern_dataset, ImageSet};
use mex_core::nn::{ClassifierArch, NetworkSpec, Role};
use mex_core::oracle::{hard_label_query, train_victim, QueryLedger, VictimTrainOpts};
use mex_core::synth::{default_variants, generate_corpus, ShapeImageSpec, VariantSpec};
use ndarray::Axis;

fn histogram(labels: &[usize], k: usize) -> Vec<usize> {
    let mut h = vec![0usize; k];
    for &l in labels {
        h[l] += 1;
    }
    h
}

fn entropy_norm(h: &[usize]) -> f64 {
    let n: usize = h.iter().sum();
    if n == 0 {
        return 0.0;
    }
    let mut e = 0.0;
    for &c in h {
        if c > 0 {
            let p = c as f64 / n as f64;
            e -= p * p.ln();
        }
    }
    e / (h.len() as f64).ln()
}

#[test]
#[ignore]
fn victim_labels_on_proxy_and_gan() {
    let train = pattern_dataset(20_000, 1001);
    let spec = NetworkSpec::classifier_32(Role::Victim, 1, 10, ClassifierArch::Small);
    let mut rng = mex_core::rng::seed_rng(2002);
    let victim = train_victim(
        &train,
        &spec,
        &VictimTrainOpts {
            target_accuracy: 0.97,
            epochs_cap: 12,
            ..Default::default()
        },
        &mut rng,
    )
    .unwrap();
    println!("victim holdout acc {:.4}", victim.train_accuracy);

    let mut ledger = QueryLedger::unlimited();
    let mut show = |name: &str, images: &ndarray::Array4<f32>| {
        let labels = hard_label_query(&victim, images, &mut ledger, "diag").unwrap();
        let h = histogram(&labels, 10);
        println!("{name}: {h:?} entropy {:.3}", entropy_norm(&h));
    };

    // the corpus default variants
    for (name, spec) in [
        ("large(20,50)x50", ShapeImageSpec::large(true)),
        ("small(5,10)x50", ShapeImageSpec::small(true)),
    ] {
        let variants = vec![VariantSpec { name: name.into(), spec, fraction: 1.0 }];
        let (imgs, _) = generate_corpus(&variants, 512, 31).unwrap();
        let set = ImageSet::from_rasters(&imgs).unwrap();
        show(name, &set.images);
    }
    // sparser variants: fewer, larger shapes
    for (name, num, min, max) in [
        ("sparse 3 shapes (24,64)", 3usize, 24usize, 64usize),
        ("sparse 1 shape (30,70)", 1, 30, 70),
        ("sparse 8 shapes (12,40)", 8, 12, 40),
    ] {
        let spec = ShapeImageSpec {
            num_shapes: num,
            min_size: min,
            max_size: max,
            ..ShapeImageSpec::large(true)
        };
        let variants = vec![VariantSpec { name: name.into(), spec, fraction: 1.0 }];
        let (imgs, _) = generate_corpus(&variants, 512, 37).unwrap();
        let set = ImageSet::from_rasters(&imgs).unwrap();
        show(name, &set.images);
    }

    // untrained generator samples
    let gspec = NetworkSpec::generator_32(100, 64, 1);
    let gen = mex_core::nn::build_network(&gspec, &mut rng).unwrap();
    let fresh = mex_core::nn::generate_images_eval(&gen, 512, &mut rng).unwrap();
    show("untrained generator", &fresh);

    // real pattern images for reference
    let test = pattern_dataset(512, 881);
    show("true patterns", &test.images);
}

#[test]
#[ignore]
fn gan_pretraining_health() {
    let train = pattern_dataset(20_000, 1001);
    let spec = NetworkSpec::classifier_32(Role::Victim, 1, 10, ClassifierArch::Small);
    let mut rng = mex_core::rng::seed_rng(2002);
    let victim = train_victim(
        &train,
        &spec,
        &VictimTrainOpts {
            target_accuracy: 0.97,
            epochs_cap: 12,
            ..Default::default()
        },
        &mut rng,
    )
    .unwrap();
    let (images, _) = generate_corpus(&default_variants(true), 10_000, 4242).unwrap();
    let proxy = ImageSet::from_rasters(&images).unwrap();
    let test = pattern_dataset(1_000, 9009);

    let cfg = AttackConfig {
        seed: 21,
        mode: AttackMode::Hard,
        n_c: 2_000,
        n_q: 0,
        n_g: 0,
        batch_size: 128,
        pretrain_epochs: 8,
        init_epochs: 20,
        retrain_epochs: 0,
        gan_d_every: 3,
        latent_dim: 100,
        generator_base: 64,
        discriminator_base: 16,
        ..AttackConfig::default()
    };
    let mut run = AttackRun::new(
        cfg,
        AttackEnv {
            victim: &victim,
            proxy: &proxy,
            test_set: Some(&test),
        },
    )
    .unwrap();
    run.pretrain_gan().unwrap();
    // loss trajectory every 50 steps
    for (i, row) in run.history.rows.iter().enumerate() {
        if i % 50 == 0 {
            println!(
                "pretrain step {i}: L_G {:?} L_D {:?}",
                row.loss_g, row.loss_d
            );
        }
    }
    // victim histogram over train-mode and eval-mode generator samples
    let mut ledger = QueryLedger::unlimited();
    let eval_imgs = mex_core::nn::generate_images_eval(&run.gen, 512, &mut run.rng).unwrap();
    let labels = hard_label_query(&victim, &eval_imgs, &mut ledger, "diag").unwrap();
    let h = histogram(&labels, 10);
    println!("pretrained G (eval mode): {h:?} entropy {:.3}", entropy_norm(&h));
    println!(
        "pretrained G pixel stats: mean {:.3} sd {:.3}",
        eval_imgs.mean().unwrap(),
        eval_imgs.std(0.0)
    );
    let proxy_mean = proxy.images.slice(ndarray::s![..512, .., .., ..]).mean().unwrap();
    println!("proxy pixel mean {proxy_mean:.3}");

    // init clone on mixed batches, then inspect
    run.init_clone().unwrap();
    let acc = mex_core::evalkit::clone_accuracy(&run.clone_net, &test).unwrap();
    println!("init clone acc {acc:.4}");
    // clone label spread on patterns
    let scores = run
        .clone_net
        .forward_eval(mex_core::nn::Feature::Map(test.images.slice(ndarray::s![..512, .., .., ..]).to_owned()))
        .unwrap()
        .into_flat()
        .unwrap();
    let preds = mex_core::tensor::argmax_rows(&scores.view());
    let h = histogram(&preds, 10);
    println!("init clone predictions on patterns: {h:?} entropy {:.3}", entropy_norm(&h));
    let g_imgs = mex_core::nn::generate_images_eval(&run.gen, 512, &mut run.rng).unwrap();
    let g_scores = run
        .clone_net
        .forward_eval(mex_core::nn::Feature::Map(g_imgs.clone()))
        .unwrap()
        .into_flat()
        .unwrap();
    let g_preds = mex_core::tensor::argmax_rows(&g_scores.view());
    let h = histogram(&g_preds, 10);
    println!("init clone on G samples: {h:?} entropy {:.3}", entropy_norm(&h));
    let v_labels = hard_label_query(&victim, &g_imgs, &mut ledger, "diag").unwrap();
    let agree = g_preds
        .iter()
        .zip(v_labels.iter())
        .filter(|(a, b)| a == b)
        .count() as f64
        / 512.0;
    println!("clone/victim agreement on G samples: {agree:.3}");

    // does diversity refinement spread the generator across classes?
    run.cfg.n_g = 250;
    for round in 0..4 {
        run.refine_generator().unwrap();
        let g_imgs = mex_core::nn::generate_images_eval(&run.gen, 512, &mut run.rng).unwrap();
        let v = hard_label_query(&victim, &g_imgs, &mut ledger, "diag").unwrap();
        let hv = histogram(&v, 10);
        let g_scores = run
            .clone_net
            .forward_eval(mex_core::nn::Feature::Map(g_imgs))
            .unwrap()
            .into_flat()
            .unwrap();
        let hc = histogram(&mex_core::tensor::argmax_rows(&g_scores.view()), 10);
        println!(
            "after refine {}: victim {hv:?} ent {:.3} | clone {hc:?} ent {:.3}",
            (round + 1) * 250,
            entropy_norm(&hv),
            entropy_norm(&hc)
        );
        let last = run.history.rows.last().unwrap();
        println!("  last refine row: L_G {:?} L_D {:?}", last.loss_g, last.loss_d);
    }
    let _ = Axis(0);
}
