//! The data-dependent acceptance checks run on synthetic keystroke data.
//! The surrogate is not the benchmark, so only coarse properties are asserted;
//! the full PASS/FAIL lines are printed for inspection with `--nocapture`.

mod common;

use keyunloc::synth::{generate, SynthConfig};

fn surrogate() -> keyunloc::dataset::Dataset {
    generate(&SynthConfig {
        seed: 41,
        ..Default::default()
    })
    .unwrap()
}

#[test]
fn surrogate_cluster_count_recovery() {
    let o = common::cluster_count_recovery(&surrogate(), 10, 5);
    println!("{}", o.line("1", "cluster-count recovery (synthetic)"));
    assert!(o.pass, "{}", o.detail);
}

#[test]
fn surrogate_quantile_directionality() {
    let o = common::quantile_directionality(&surrogate(), 6, 5);
    println!("{}", o.line("2", "quantile-transform directionality (synthetic)"));
    assert!(o.pass, "{}", o.detail);
}

#[test]
fn surrogate_accuracy_bands() {
    let o = common::accuracy_bands(&surrogate(), 6, 5);
    println!("{}", o.line("3", "identification accuracy bands (synthetic)"));
    assert!(o.detail.contains("t-SNE+NN@50") && !o.detail.contains("NaN"), "{}", o.detail);
}

#[test]
fn surrogate_multi_user_trend() {
    let o = common::multi_user_trend(&surrogate(), 3, 5);
    println!("{}", o.line("4", "multi-user degradation trend (synthetic)"));
    assert!(o.detail.contains("pca/unloc") && !o.detail.contains("NaN"), "{}", o.detail);
}
