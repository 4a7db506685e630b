//! Monte-Carlo experiment grid: select users, subsample, filter outliers,
//! split, train, identify, score.

use std::collections::BTreeMap;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cluster::ClusterMethod;
use crate::dataset::{remove_outliers, select_users, split, subsample_per_user, Dataset, SplitMode, SplitSpec};
use crate::error::{Error, Result};
use crate::reduce::ReducerKind;
use crate::rng::{derive_seed, rng_from};

use super::{evaluate, train, Classifier, PipelineConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleSize {
    Fixed(usize),
    /// Drawn uniformly from the inclusive range for every trial.
    Random(usize, usize),
}

impl SampleSize {
    pub fn label(self) -> String {
        match self {
            SampleSize::Fixed(n) => n.to_string(),
            SampleSize::Random(a, b) => format!("{a}-{b}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DimsRule {
    Fixed(usize),
    /// Reduced dimension chosen by the number of users; unlisted counts use
    /// the largest listed value not above them.
    ByUsers(BTreeMap<usize, usize>),
}

impl DimsRule {
    pub fn dims_for(&self, n_users: usize) -> usize {
        match self {
            DimsRule::Fixed(d) => *d,
            DimsRule::ByUsers(m) => m
                .range(..=n_users)
                .next_back()
                .or_else(|| m.iter().next())
                .map_or(2, |(_, &d)| d),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableMetric {
    Accuracy,
    /// Most frequent estimated k and mean ARI.
    ClusterCount,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentGrid {
    pub name: String,
    pub sample_sizes: Vec<SampleSize>,
    pub n_users: Vec<usize>,
    pub session_modes: Vec<SplitMode>,
    pub use_quantile: Vec<bool>,
    pub cluster_methods: Vec<ClusterMethod>,
    pub reducers: Vec<ReducerKind>,
    /// Empty: clustering is scored but nothing is identified.
    pub classifiers: Vec<Classifier>,
    /// Applies to PCA and kernel PCA; t-SNE always embeds in 2 dimensions.
    pub dims: DimsRule,
    pub trials: usize,
    pub train_fraction: f64,
    /// Tukey fence multiplier for per-user outlier removal, applied to each
    /// selected user's full pool before subsampling; `None` disables it.
    pub outlier_k: Option<f64>,
    pub metric: TableMetric,
    /// Hyperparameters shared by every cell; the grid overrides the reducer
    /// kind, dimension, cluster method, quantile flag, and seed.
    pub base: PipelineConfig,
}

impl Default for ExperimentGrid {
    fn default() -> Self {
        Self {
            name: "custom".into(),
            sample_sizes: vec![SampleSize::Fixed(50)],
            n_users: vec![4],
            session_modes: vec![SplitMode::Random],
            use_quantile: vec![true],
            cluster_methods: vec![ClusterMethod::Xmeans],
            reducers: vec![ReducerKind::Pca],
            classifiers: vec![Classifier::NnReduced, Classifier::UnlocNn],
            dims: DimsRule::Fixed(2),
            trials: 20,
            train_fraction: 0.8,
            outlier_k: Some(1.5),
            metric: TableMetric::Accuracy,
            base: PipelineConfig::default(),
        }
    }
}

impl ExperimentGrid {
    pub fn validate(&self) -> Result<()> {
        let empty = [
            ("sample_sizes", self.sample_sizes.is_empty()),
            ("n_users", self.n_users.is_empty()),
            ("session_modes", self.session_modes.is_empty()),
            ("use_quantile", self.use_quantile.is_empty()),
            ("cluster_methods", self.cluster_methods.is_empty()),
            ("reducers", self.reducers.is_empty()),
        ];
        if let Some((name, _)) = empty.iter().find(|(_, e)| *e) {
            return Err(Error::Config(format!("experiment grid has no {name}")));
        }
        if self.trials == 0 {
            return Err(Error::Config("trials must be ≥ 1".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config(format!("train fraction must lie in (0, 1), got {}", self.train_fraction)));
        }
        for s in &self.sample_sizes {
            match *s {
                SampleSize::Fixed(n) if n < 2 => return Err(Error::Config(format!("sample size {n} is below 2"))),
                SampleSize::Random(a, b) if a < 2 || a > b => {
                    return Err(Error::Config(format!("sample size range {a}-{b} is invalid")))
                }
                _ => {}
            }
        }
        if self.n_users.contains(&0) {
            return Err(Error::Config("n_users must be ≥ 1".into()));
        }
        self.base.validate()
    }

    /// Number of aggregate cells.
    pub fn cell_count(&self) -> usize {
        self.sample_sizes.len()
            * self.n_users.len()
            * self.session_modes.len()
            * self.use_quantile.len()
            * self.cluster_methods.len()
            * self.reducers.len()
            * self.classifiers.len().max(1)
    }

    pub fn preset(name: &str) -> Result<Self> {
        let fixed = |v: &[usize]| v.iter().map(|&n| SampleSize::Fixed(n)).collect::<Vec<_>>();
        let all_reducers = vec![ReducerKind::Pca, ReducerKind::Kpca, ReducerKind::Tsne];
        let both = vec![Classifier::NnReduced, Classifier::UnlocNn];
        let g = match name {
            "table1" => Self {
                name: name.into(),
                sample_sizes: fixed(&[50, 40, 30, 20]),
                use_quantile: vec![false, true],
                cluster_methods: vec![ClusterMethod::Dbscan, ClusterMethod::Gmm, ClusterMethod::Xmeans],
                reducers: all_reducers,
                classifiers: Vec::new(),
                metric: TableMetric::ClusterCount,
                ..Default::default()
            },
            "table3" | "table4" => Self {
                name: name.into(),
                sample_sizes: fixed(&[50, 40, 30, 20, 10]),
                reducers: all_reducers,
                classifiers: both,
                ..Default::default()
            },
            "table5" => Self {
                name: name.into(),
                sample_sizes: vec![SampleSize::Random(10, 50)],
                n_users: vec![3, 4, 5, 6],
                session_modes: vec![SplitMode::Intra, SplitMode::Inter],
                reducers: all_reducers,
                classifiers: both,
                dims: DimsRule::ByUsers([(3, 2), (4, 3), (5, 4), (6, 4)].into_iter().collect()),
                trials: 10,
                ..Default::default()
            },
            other => {
                return Err(Error::Config(format!(
                    "unknown preset {other}; expected table1, table3, table4, or table5"
                )))
            }
        };
        Ok(g)
    }
}

/// One trained model scored with one classifier (or clustering only).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub sample_size: String,
    pub n_users: usize,
    pub session_mode: SplitMode,
    pub quantile: bool,
    pub cluster: ClusterMethod,
    pub reducer: ReducerKind,
    pub dims: usize,
    pub classifier: Option<Classifier>,
    pub trial: usize,
    pub seed: u64,
    /// Resolved per-user sample count.
    pub samples_per_user: Option<usize>,
    pub users: String,
    pub outliers_removed: Option<usize>,
    pub n_train: Option<usize>,
    pub n_test: Option<usize>,
    pub k: Option<usize>,
    pub k_mismatch: Option<bool>,
    pub ari: Option<f64>,
    pub accuracy: Option<f64>,
    pub skipped: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellAggregate {
    pub sample_size: String,
    pub n_users: usize,
    pub session_mode: SplitMode,
    pub quantile: bool,
    pub cluster: ClusterMethod,
    pub reducer: ReducerKind,
    pub dims: usize,
    pub classifier: Option<Classifier>,
    pub trials_run: usize,
    pub trials_skipped: usize,
    pub mean_accuracy: Option<f64>,
    pub sd_accuracy: Option<f64>,
    pub mean_ari: Option<f64>,
    pub sd_ari: Option<f64>,
    pub mean_k: Option<f64>,
    pub modal_k: Option<usize>,
    /// Share of trials whose estimated k equals the number of users.
    pub k_correct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub grid: ExperimentGrid,
    pub seed: u64,
    pub records: Vec<TrialRecord>,
    pub aggregates: Vec<CellAggregate>,
}

impl ExperimentReport {
    pub fn skipped(&self) -> usize {
        self.records.iter().filter(|r| r.skipped.is_some()).count()
    }
}

#[derive(Debug, Clone, Copy)]
struct Unit {
    size_idx: usize,
    users_idx: usize,
    mode_idx: usize,
    quantile: bool,
    cluster: ClusterMethod,
    reducer: ReducerKind,
    trial: usize,
}

struct Prepared {
    per_user: usize,
    users: Vec<String>,
    removed: usize,
    train: Dataset,
    test: Dataset,
}

fn prepare(ds: &Dataset, grid: &ExperimentGrid, u: &Unit, data_seed: u64) -> Result<Prepared> {
    let n_users = grid.n_users[u.users_idx];
    let picked = select_users(ds, n_users, derive_seed(data_seed, &[0]))?;
    // filtering the whole pool first keeps the requested sample size exact
    let (pool, removed) = match grid.outlier_k {
        Some(k) => {
            let f = remove_outliers(&picked, k)?;
            (f.dataset, f.removed)
        }
        None => (picked, 0),
    };
    let per_user = match grid.sample_sizes[u.size_idx] {
        SampleSize::Fixed(n) => n,
        SampleSize::Random(a, b) => rng_from(derive_seed(data_seed, &[1])).random_range(a..=b),
    };
    let sub = subsample_per_user(&pool, per_user, derive_seed(data_seed, &[2]))?;
    let spec = SplitSpec::new(grid.train_fraction, grid.session_modes[u.mode_idx], derive_seed(data_seed, &[3]));
    let (train, test) = split(&sub, &spec)?;
    Ok(Prepared {
        per_user,
        users: sub.users(),
        removed,
        train,
        test,
    })
}

fn run_unit(ds: &Dataset, grid: &ExperimentGrid, seed: u64, u: &Unit) -> Vec<TrialRecord> {
    let n_users = grid.n_users[u.users_idx];
    let dims = if u.reducer == ReducerKind::Tsne { 2 } else { grid.dims.dims_for(n_users) };
    // the data seed ignores method choices, so methods are compared on the same samples
    let data_seed = derive_seed(seed, &[u.size_idx as u64, u.users_idx as u64, u.mode_idx as u64, u.trial as u64]);
    let classifiers: Vec<Option<Classifier>> = if grid.classifiers.is_empty() {
        vec![None]
    } else {
        grid.classifiers.iter().copied().map(Some).collect()
    };
    let blank = |classifier: Option<Classifier>| TrialRecord {
        sample_size: grid.sample_sizes[u.size_idx].label(),
        n_users,
        session_mode: grid.session_modes[u.mode_idx],
        quantile: u.quantile,
        cluster: u.cluster,
        reducer: u.reducer,
        dims,
        classifier,
        trial: u.trial,
        seed: data_seed,
        samples_per_user: None,
        users: String::new(),
        outliers_removed: None,
        n_train: None,
        n_test: None,
        k: None,
        k_mismatch: None,
        ari: None,
        accuracy: None,
        skipped: None,
    };
    let skip_all = |reason: String| -> Vec<TrialRecord> {
        log::warn!(
            "skipped: size {} users {} {:?} {} {} trial {}: {reason}",
            grid.sample_sizes[u.size_idx].label(),
            n_users,
            grid.session_modes[u.mode_idx],
            u.cluster.name(),
            u.reducer.name(),
            u.trial
        );
        classifiers
            .iter()
            .map(|&c| TrialRecord {
                skipped: Some(reason.clone()),
                ..blank(c)
            })
            .collect()
    };

    let prep = match prepare(ds, grid, u, data_seed) {
        Ok(p) => p,
        Err(e) => return skip_all(format!("data: {e}")),
    };
    let mut cfg = grid.base.clone();
    cfg.use_quantile = u.quantile;
    cfg.reducer.kind = u.reducer;
    cfg.reducer.out_dims = dims;
    cfg.cluster.method = u.cluster;
    cfg.seed = derive_seed(data_seed, &[4]);
    let model = match train(&prep.train, &cfg) {
        Ok(m) => m,
        Err(e) => return skip_all(e.to_string()),
    };
    let ari = model.training_ari().ok();
    let filled = |c: Option<Classifier>| TrialRecord {
        samples_per_user: Some(prep.per_user),
        users: prep.users.join(";"),
        outliers_removed: Some(prep.removed),
        n_train: Some(prep.train.len()),
        n_test: Some(prep.test.len()),
        k: Some(model.k()),
        k_mismatch: Some(model.k() != n_users),
        ari,
        ..blank(c)
    };
    classifiers
        .iter()
        .map(|&c| match c {
            None => filled(None),
            Some(cl) => match evaluate(&model, &prep.test, cl) {
                Ok(acc) => TrialRecord {
                    accuracy: Some(acc),
                    ..filled(c)
                },
                Err(e) => {
                    log::warn!("identification with {} failed in trial {}: {e}", cl.name(), u.trial);
                    TrialRecord {
                        skipped: Some(format!("identify: {e}")),
                        ..filled(c)
                    }
                }
            },
        })
        .collect()
}

fn mean_sd(v: &[f64]) -> (Option<f64>, Option<f64>) {
    if v.is_empty() {
        return (None, None);
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let sd = if v.len() > 1 {
        (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (Some(m), Some(sd))
}

fn aggregate(records: &[TrialRecord]) -> Vec<CellAggregate> {
    let mut cells: Vec<(CellAggregate, Vec<&TrialRecord>)> = Vec::new();
    for r in records {
        let key = CellAggregate {
            sample_size: r.sample_size.clone(),
            n_users: r.n_users,
            session_mode: r.session_mode,
            quantile: r.quantile,
            cluster: r.cluster,
            reducer: r.reducer,
            dims: r.dims,
            classifier: r.classifier,
            trials_run: 0,
            trials_skipped: 0,
            mean_accuracy: None,
            sd_accuracy: None,
            mean_ari: None,
            sd_ari: None,
            mean_k: None,
            modal_k: None,
            k_correct: None,
        };
        match cells.iter_mut().find(|(c, _)| *c == key) {
            Some((_, v)) => v.push(r),
            None => cells.push((key, vec![r])),
        }
    }
    cells
        .into_iter()
        .map(|(mut c, rs)| {
            let ok: Vec<&&TrialRecord> = rs.iter().filter(|r| r.skipped.is_none()).collect();
            c.trials_run = ok.len();
            c.trials_skipped = rs.len() - ok.len();
            let acc: Vec<f64> = ok.iter().filter_map(|r| r.accuracy).collect();
            (c.mean_accuracy, c.sd_accuracy) = mean_sd(&acc);
            let ari: Vec<f64> = ok.iter().filter_map(|r| r.ari).collect();
            (c.mean_ari, c.sd_ari) = mean_sd(&ari);
            let ks: Vec<usize> = ok.iter().filter_map(|r| r.k).collect();
            if !ks.is_empty() {
                c.mean_k = Some(ks.iter().sum::<usize>() as f64 / ks.len() as f64);
                let mut freq: BTreeMap<usize, usize> = BTreeMap::new();
                for &k in &ks {
                    *freq.entry(k).or_default() += 1;
                }
                let top = freq.values().copied().max().unwrap_or(0);
                c.modal_k = freq.iter().find(|(_, &n)| n == top).map(|(&k, _)| k);
                c.k_correct = Some(ks.iter().filter(|&&k| k == c.n_users).count() as f64 / ks.len() as f64);
            }
            c
        })
        .collect()
}

/// Runs every cell of the grid for every trial. Trials run in parallel on the
/// current rayon pool; the report does not depend on the pool size.
pub fn run_experiment(ds: &Dataset, grid: &ExperimentGrid, seed: u64) -> Result<ExperimentReport> {
    grid.validate()?;
    let mut units = Vec::new();
    for size_idx in 0..grid.sample_sizes.len() {
        for users_idx in 0..grid.n_users.len() {
            for mode_idx in 0..grid.session_modes.len() {
                for &quantile in &grid.use_quantile {
                    for &cluster in &grid.cluster_methods {
                        for &reducer in &grid.reducers {
                            for trial in 0..grid.trials {
                                units.push(Unit {
                                    size_idx,
                                    users_idx,
                                    mode_idx,
                                    quantile,
                                    cluster,
                                    reducer,
                                    trial,
                                });
                            }
                        }
                    }
                }
            }
        }
    }
    let records: Vec<TrialRecord> = units
        .par_iter()
        .map(|u| run_unit(ds, grid, seed, u))
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect();
    let aggregates = aggregate(&records);
    Ok(ExperimentReport {
        grid: grid.clone(),
        seed,
        records,
        aggregates,
    })
}
