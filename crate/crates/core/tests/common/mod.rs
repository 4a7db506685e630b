#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use keyunloc::cluster::ClusterMethod;
use keyunloc::dataset::{Dataset, SplitMode};
use keyunloc::pipeline::experiment::{CellAggregate, TableMetric};
use keyunloc::pipeline::{run_experiment, Classifier, DimsRule, ExperimentGrid, SampleSize};
use keyunloc::reduce::ReducerKind;

pub struct Outcome {
    pub pass: bool,
    pub detail: String,
}

impl Outcome {
    pub fn line(&self, id: &str, name: &str) -> String {
        format!("{} {id} {name}: {}", if self.pass { "PASS" } else { "FAIL" }, self.detail)
    }
}

/// The CMU benchmark CSV: `KEYUNLOC_CMU_CSV`, else `data/DSL-StrongPasswordData.csv`
/// under the workspace root.
pub fn cmu_path() -> Option<PathBuf> {
    if let Ok(p) = std::env::var("KEYUNLOC_CMU_CSV") {
        return Some(PathBuf::from(p)).filter(|p| p.is_file());
    }
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/DSL-StrongPasswordData.csv");
    p.is_file().then_some(p)
}

fn grid(name: &str) -> ExperimentGrid {
    ExperimentGrid {
        name: name.into(),
        sample_sizes: vec![SampleSize::Fixed(50)],
        n_users: vec![4],
        session_modes: vec![SplitMode::Random],
        use_quantile: vec![true],
        cluster_methods: vec![ClusterMethod::Xmeans],
        reducers: vec![ReducerKind::Pca],
        classifiers: Vec::new(),
        dims: DimsRule::Fixed(2),
        trials: 20,
        metric: TableMetric::ClusterCount,
        ..Default::default()
    }
}

fn find<'a>(aggs: &'a [CellAggregate], pred: impl Fn(&CellAggregate) -> bool) -> Option<&'a CellAggregate> {
    aggs.iter().find(|a| pred(a))
}

fn within(elapsed: Duration, limit_s: u64) -> (bool, String) {
    (elapsed.as_secs() <= limit_s, format!("{:.1}s of {limit_s}s", elapsed.as_secs_f64()))
}

/// 4 users, 50 samples, Q + PCA + X-means: k = 4 in ≥ 80% of trials and mean ARI ≥ 0.75.
pub fn cluster_count_recovery(ds: &Dataset, trials: usize, seed: u64) -> Outcome {
    let t = Instant::now();
    let g = ExperimentGrid { trials, ..grid("recovery") };
    let r = match run_experiment(ds, &g, seed) {
        Ok(r) => r,
        Err(e) => return Outcome { pass: false, detail: e.to_string() },
    };
    let a = &r.aggregates[0];
    let k_ok = a.k_correct.unwrap_or(0.0);
    let ari = a.mean_ari.unwrap_or(f64::NAN);
    let (fast, time) = within(t.elapsed(), 120);
    Outcome {
        pass: k_ok >= 0.8 && ari >= 0.75 && fast,
        detail: format!(
            "k = 4 in {:.0}% of {} trials (need ≥ 80%), mean ARI {ari:.3} (need ≥ 0.75), {time}",
            100.0 * k_ok,
            a.trials_run
        ),
    }
}

/// Paired raw vs quantile trials: mean ARI with the transform is higher for every reducer.
pub fn quantile_directionality(ds: &Dataset, trials: usize, seed: u64) -> Outcome {
    let t = Instant::now();
    let g = ExperimentGrid {
        trials,
        use_quantile: vec![false, true],
        reducers: vec![ReducerKind::Pca, ReducerKind::Kpca, ReducerKind::Tsne],
        ..grid("directionality")
    };
    let r = match run_experiment(ds, &g, seed) {
        Ok(r) => r,
        Err(e) => return Outcome { pass: false, detail: e.to_string() },
    };
    let mut pass = true;
    let mut parts = Vec::new();
    for red in &g.reducers {
        let ari = |q: bool| {
            find(&r.aggregates, |a| a.reducer == *red && a.quantile == q)
                .and_then(|a| a.mean_ari)
                .unwrap_or(f64::NAN)
        };
        let (raw, qt) = (ari(false), ari(true));
        pass &= qt > raw;
        parts.push(format!("{} raw {raw:.3} vs Q {qt:.3}", red.name()));
    }
    let (fast, time) = within(t.elapsed(), 300);
    Outcome {
        pass: pass && fast,
        detail: format!("{}, {time}", parts.join("; ")),
    }
}

/// Accuracy bands at sample size 50 and the UNLOC-over-PCA advantage at size 10.
pub fn accuracy_bands(ds: &Dataset, trials: usize, seed: u64) -> Outcome {
    let t = Instant::now();
    let g = ExperimentGrid {
        trials,
        sample_sizes: vec![SampleSize::Fixed(50), SampleSize::Fixed(10)],
        reducers: vec![ReducerKind::Pca, ReducerKind::Tsne],
        classifiers: vec![Classifier::NnReduced, Classifier::UnlocNn],
        metric: TableMetric::Accuracy,
        ..grid("bands")
    };
    let r = match run_experiment(ds, &g, seed) {
        Ok(r) => r,
        Err(e) => return Outcome { pass: false, detail: e.to_string() },
    };
    let acc = |size: &str, red: ReducerKind, cls: Classifier| {
        100.0
            * find(&r.aggregates, |a| a.sample_size == size && a.reducer == red && a.classifier == Some(cls))
                .and_then(|a| a.mean_accuracy)
                .unwrap_or(f64::NAN)
    };
    let checks = [
        ("PCA+NN@50", acc("50", ReducerKind::Pca, Classifier::NnReduced), 94.04),
        ("UNLOC/PCA@50", acc("50", ReducerKind::Pca, Classifier::UnlocNn), 93.81),
        ("t-SNE+NN@50", acc("50", ReducerKind::Tsne, Classifier::NnReduced), 98.87),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, got, target) in checks {
        pass &= (got - target).abs() <= 6.0;
        parts.push(format!("{name} {got:.2} (band {target}±6)"));
    }
    let unloc10 = acc("10", ReducerKind::Pca, Classifier::UnlocNn);
    let nn10 = acc("10", ReducerKind::Pca, Classifier::NnReduced);
    pass &= unloc10 > nn10;
    parts.push(format!("@10 UNLOC/PCA {unloc10:.2} vs PCA+NN {nn10:.2}"));
    let (fast, time) = within(t.elapsed(), 600);
    Outcome {
        pass: pass && fast,
        detail: format!("{}, {time}", parts.join("; ")),
    }
}

/// Intra-session accuracy does not rise from 3 to 6 users in any method column.
pub fn multi_user_trend(ds: &Dataset, trials: usize, seed: u64) -> Outcome {
    let t = Instant::now();
    let mut g = match ExperimentGrid::preset("table5") {
        Ok(g) => g,
        Err(e) => return Outcome { pass: false, detail: e.to_string() },
    };
    g.session_modes = vec![SplitMode::Intra];
    g.trials = trials;
    let r = match run_experiment(ds, &g, seed) {
        Ok(r) => r,
        Err(e) => return Outcome { pass: false, detail: e.to_string() },
    };
    let mut columns: BTreeMap<String, Vec<(usize, f64)>> = BTreeMap::new();
    for a in &r.aggregates {
        let key = format!("{}/{}", a.reducer.name(), a.classifier.map_or("-", |c| c.name()));
        columns.entry(key).or_default().push((a.n_users, 100.0 * a.mean_accuracy.unwrap_or(f64::NAN)));
    }
    let mut pass = true;
    let mut parts = Vec::new();
    for (key, mut v) in columns {
        v.sort_by_key(|x| x.0);
        let ok = v.windows(2).all(|w| w[1].1 <= w[0].1);
        pass &= ok;
        let seq: Vec<String> = v.iter().map(|(_, a)| format!("{a:.1}")).collect();
        parts.push(format!("{key} [{}]{}", seq.join(" "), if ok { "" } else { " rises" }));
    }
    let (fast, time) = within(t.elapsed(), 900);
    Outcome {
        pass: pass && fast,
        detail: format!("{}, {time}", parts.join("; ")),
    }
}
