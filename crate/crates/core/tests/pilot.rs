//! Manual desk-scale pilot (`-- --ignored --nocapture`): reduced-budget
//! extraction against a trained pattern victim, with and without the
//! diversity objective, printing the accuracy/entropy trajectory.

use mex_core::attack::{run_attack, AttackConfig, AttackEnv, AttackMode};
use mex_core::data::{pattern_dataset, ImageSet};
use mex_core::nn::{ClassifierArch, NetworkSpec, Role};
use mex_core::oracle::{train_victim, VictimTrainOpts};
use mex_core::synth::{generate_corpus, ShapeImageSpec, VariantSpec};

fn desk_config(lambda: f64, n_q: u64) -> AttackConfig {
    AttackConfig {
        seed: 21,
        mode: AttackMode::Hard,
        lambda_div: lambda,
        n_c: 2_000,
        n_q,
        n_g: 120,
        batch_size: 128,
        pretrain_epochs: 8,
        init_epochs: 40,
        retrain_epochs: 40,
        gan_d_every: 3,
        eval_every: 25,
        hist_samples: 512,
        latent_dim: 100,
        generator_base: 64,
        discriminator_base: 16,
        ..AttackConfig::default()
    }
}

#[test]
#[ignore]
fn pilot_with_and_without_diversity() {
    let train = pattern_dataset(20_000, 1001);
    let test = pattern_dataset(2_000, 9009);
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
    println!("victim holdout accuracy: {:.4}", victim.train_accuracy);
    let variants = vec![
        VariantSpec { name: "large".into(), spec: ShapeImageSpec::large(true), fraction: 0.3 },
        VariantSpec { name: "small".into(), spec: ShapeImageSpec::small(true), fraction: 0.3 },
        VariantSpec { name: "sparse".into(), spec: ShapeImageSpec::sparse(true), fraction: 0.4 },
    ];
    let (images, _) = generate_corpus(&variants, 10_000, 4242).unwrap();
    let proxy = ImageSet::from_rasters(&images).unwrap();

    for lambda in [500.0, 0.0] {
        let cfg = desk_config(lambda, 100_000);
        let t0 = std::time::Instant::now();
        let out = run_attack(
            &cfg,
            AttackEnv {
                victim: &victim,
                proxy: &proxy,
                test_set: Some(&test),
            },
            None,
            None,
        )
        .unwrap();
        println!(
            "lambda={lambda}: {:.1}s, final ledger {}",
            t0.elapsed().as_secs_f64(),
            out.ledger.used()
        );
        for row in &out.history.rows {
            if let Some(acc) = row.clone_accuracy {
                println!(
                    "  q={:>7} phase={:<13} acc={:.4} ent={:.3}",
                    row.queries_used,
                    row.phase,
                    acc,
                    row.hist_entropy.unwrap_or(f64::NAN)
                );
            }
        }
        println!(
            "lambda={lambda}: best acc {:?}, last entropy {:?}",
            out.history.best_accuracy(),
            out.history.last_entropy()
        );
    }
}
