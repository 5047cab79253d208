//! Victim training on the pattern dataset: the target-accuracy contract.

use mex_core::data::pattern_dataset;
use mex_core::nn::{ClassifierArch, NetworkSpec, Role};
use mex_core::oracle::{train_victim, VictimTrainOpts};

#[test]
fn victim_reaches_95_percent_on_patterns() {
    let data = pattern_dataset(6_000, 1001);
    let spec = NetworkSpec::classifier_32(Role::Victim, 1, 10, ClassifierArch::Small);
    let opts = VictimTrainOpts {
        target_accuracy: 0.95,
        epochs_cap: 12,
        ..Default::default()
    };
    let mut rng = mex_core::rng::seed_rng(2002);
    let t0 = std::time::Instant::now();
    let victim = train_victim(&data, &spec, &opts, &mut rng).unwrap();
    println!(
        "victim: acc {:.4} after {} epochs in {:.1}s",
        victim.train_accuracy,
        victim.epochs_trained,
        t0.elapsed().as_secs_f64()
    );
    assert!(
        victim.train_accuracy >= 0.95 && !victim.target_shortfall,
        "victim accuracy {} below target",
        victim.train_accuracy
    );
    // the held-out split is internal; double check on a disjoint seed
    let fresh = pattern_dataset(1_000, 777);
    let acc = mex_core::evalkit::clone_accuracy(&victim.net, &fresh).unwrap();
    println!("victim on fresh test set: {acc:.4}");
    assert!(acc >= 0.93, "fresh-set accuracy {acc} too low");
}
