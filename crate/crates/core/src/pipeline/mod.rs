//! Training (quantile transform, reduction, clustering, templates) and
//! identification of new samples, plus the experiment harness.

pub mod experiment;
pub mod report;

use std::collections::HashMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::assignment::max_weight_assignment;
use crate::cluster::{run_clustering, ClusterConfig, ClusterResult};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::metrics::{adjusted_rand_index, build_template, known_known_scores, test_scores, CrossDistanceMatrix, UserSamples, UserTemplate};
use crate::qtransform::{default_n_quantiles, fit_quantile, QuantileModel};
use crate::reduce::{embed_tsne, fit_reducer, ReducedFeatures, ReducerConfig, ReducerKind, ReducerModel};
use crate::rng::derive_seed;
use crate::stats::squared_euclidean;
use crate::unloc::{localize, UnlocConfig};

pub use experiment::{run_experiment, DimsRule, ExperimentGrid, ExperimentReport, SampleSize, TrialRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Classifier {
    /// k-NN on the sample's reduced coordinates.
    #[serde(rename = "nn")]
    NnReduced,
    /// k-NN on the location found by ordinal unfolding.
    #[serde(rename = "unloc")]
    UnlocNn,
}

impl Classifier {
    pub fn name(self) -> &'static str {
        match self {
            Classifier::NnReduced => "nn",
            Classifier::UnlocNn => "unloc",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub use_quantile: bool,
    /// `None` means `min(1000, training rows)`.
    pub n_quantiles: Option<usize>,
    pub reducer: ReducerConfig,
    pub cluster: ClusterConfig,
    pub classifier: Classifier,
    pub knn_k: usize,
    pub unloc: UnlocConfig,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            use_quantile: true,
            n_quantiles: None,
            reducer: ReducerConfig::default(),
            cluster: ClusterConfig::default(),
            classifier: Classifier::UnlocNn,
            knn_k: 1,
            unloc: UnlocConfig::default(),
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.knn_k == 0 {
            return Err(Error::Config("knn_k must be ≥ 1".into()));
        }
        if self.reducer.out_dims == 0 {
            return Err(Error::Config("reduced dimension must be ≥ 1".into()));
        }
        if self.n_quantiles == Some(0) {
            return Err(Error::Config("n_quantiles must be ≥ 1".into()));
        }
        if self.unloc.restarts == 0 {
            return Err(Error::Config("UNLOC restarts must be ≥ 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub config: PipelineConfig,
    pub feature_names: Vec<String>,
    pub quantile: Option<QuantileModel>,
    pub reducer: ReducerModel,
    /// Training rows in the reduced space.
    pub reduced: ReducedFeatures,
    /// Training rows after the quantile transform (raw when it is disabled).
    pub train_features: DMatrix<f64>,
    /// One template per cluster, named `cluster<j>`.
    pub templates: Vec<UserTemplate>,
    /// Template-vs-cluster block of the cross-distance matrix.
    pub known_known: DMatrix<f64>,
    pub clusters: ClusterResult,
    /// True users of the training rows. Only used for scoring.
    pub train_users: Vec<String>,
    /// Cluster → user by maximum-overlap one-to-one matching on the training
    /// rows; `None` for clusters left without a user.
    pub cluster_users: Vec<Option<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: i64,
    pub user: Option<String>,
    /// Location in the reduced space used for the neighbour vote.
    pub coords: Vec<f64>,
    /// Unfolding objective; only for UNLOC.
    pub residual: Option<f64>,
    pub ambiguous: bool,
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn cluster_name(j: usize) -> String {
    format!("cluster{j}")
}

/// Maps clusters to users by maximum overlap, one-to-one.
pub fn match_clusters_to_users(labels: &[i64], users: &[String], k: usize) -> Vec<Option<String>> {
    let mut names: Vec<String> = users.to_vec();
    names.sort();
    names.dedup();
    let col: HashMap<&str, usize> = names.iter().enumerate().map(|(i, u)| (u.as_str(), i)).collect();
    let mut counts = vec![vec![0i64; names.len()]; k];
    for (&l, u) in labels.iter().zip(users) {
        if l >= 0 {
            counts[l as usize][col[u.as_str()]] += 1;
        }
    }
    max_weight_assignment(&counts)
        .into_iter()
        .map(|c| c.map(|j| names[j].clone()))
        .collect()
}

pub fn train(ds: &Dataset, cfg: &PipelineConfig) -> Result<TrainedModel> {
    cfg.validate()?;
    if ds.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    let raw = ds.to_matrix();
    let (quantile, features) = if cfg.use_quantile {
        let nq = cfg.n_quantiles.unwrap_or_else(|| default_n_quantiles(raw.nrows()));
        let q = fit_quantile(&raw, nq).map_err(|e| e.in_stage("quantile transform"))?;
        let f = q.apply(&raw).map_err(|e| e.in_stage("quantile transform"))?;
        (Some(q), f)
    } else {
        (None, raw)
    };
    let (reducer, coords) =
        fit_reducer(&cfg.reducer, &features, derive_seed(cfg.seed, &[1])).map_err(|e| e.in_stage("reduction"))?;
    let clusters =
        run_clustering(&cfg.cluster, &coords, derive_seed(cfg.seed, &[2])).map_err(|e| e.in_stage("clustering"))?;
    if clusters.k == 0 {
        return Err(Error::Config(format!(
            "{} found no clusters (every point is noise); loosen eps or min_samples",
            clusters.method.name()
        ))
        .in_stage("clustering"));
    }

    let feature_rows = rows_of(&features);
    let mut groups: Vec<UserSamples> = (0..clusters.k)
        .map(|j| UserSamples {
            user_id: cluster_name(j),
            rows: Vec::new(),
        })
        .collect();
    for (row, &l) in feature_rows.iter().zip(&clusters.labels) {
        if l >= 0 {
            groups[l as usize].rows.push(row.clone());
        }
    }
    let templates = groups
        .iter()
        .map(|g| build_template(g.user_id.clone(), &g.rows))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| e.in_stage("templates"))?;
    let known_known = known_known_scores(&templates, &groups).map_err(|e| e.in_stage("templates"))?;

    let train_users = ds.labels();
    let cluster_users = match_clusters_to_users(&clusters.labels, &train_users, clusters.k);
    let ids = ds.samples.iter().map(|s| s.id()).collect();
    Ok(TrainedModel {
        config: cfg.clone(),
        feature_names: ds.feature_names.clone(),
        quantile,
        reducer,
        reduced: ReducedFeatures::new(coords, ids)?,
        train_features: features,
        templates,
        known_known,
        clusters,
        train_users,
        cluster_users,
    })
}

impl TrainedModel {
    pub fn k(&self) -> usize {
        self.clusters.k
    }

    pub fn feature_count(&self) -> usize {
        self.feature_names.len()
    }

    /// ARI between the training clusters and the true users.
    pub fn training_ari(&self) -> Result<f64> {
        adjusted_rand_index(&self.clusters.labels, &self.train_users)
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k()];
        for &l in &self.clusters.labels {
            if l >= 0 {
                sizes[l as usize] += 1;
            }
        }
        sizes
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn transform(&self, raw: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if raw.ncols() != self.feature_count() {
            return Err(Error::DimensionMismatch {
                expected: self.feature_count(),
                actual: raw.ncols(),
            });
        }
        match &self.quantile {
            Some(q) => q.apply(raw),
            None => Ok(raw.clone()),
        }
    }

    /// Cross-distance matrix of one (already transformed) sample.
    pub fn cross_distances(&self, features: &[f64]) -> Result<CrossDistanceMatrix> {
        Ok(CrossDistanceMatrix {
            known_known: self.known_known.clone(),
            known_test: test_scores(&self.templates, features)?,
            user_order: self.templates.iter().map(|t| t.user_id.clone()).collect(),
        })
    }

    /// Majority vote among the `knn_k` nearest labelled training points in
    /// `reference` (row `i` is training row `i`); a tied vote goes to the tied
    /// label with the closest member.
    fn knn(&self, reference: &DMatrix<f64>, x: &[f64]) -> i64 {
        let mut d: Vec<(f64, usize)> = (0..reference.nrows())
            .filter(|&i| self.clusters.labels[i] >= 0)
            .map(|i| {
                let row: Vec<f64> = reference.row(i).iter().copied().collect();
                (squared_euclidean(x, &row), i)
            })
            .collect();
        d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let take = self.config.knn_k.min(d.len());
        let mut votes: HashMap<i64, usize> = HashMap::new();
        for &(_, i) in &d[..take] {
            *votes.entry(self.clusters.labels[i]).or_default() += 1;
        }
        let top = votes.values().copied().max().unwrap_or(0);
        d[..take]
            .iter()
            .map(|&(_, i)| self.clusters.labels[i])
            .find(|l| votes[l] == top)
            .unwrap_or(-1)
    }

    fn predict_at(&self, reference: &DMatrix<f64>, coords: Vec<f64>, residual: Option<f64>, ambiguous: bool) -> Prediction {
        let label = self.knn(reference, &coords);
        Prediction {
            label,
            user: (label >= 0).then(|| self.cluster_users[label as usize].clone()).flatten(),
            coords,
            residual,
            ambiguous,
        }
    }

    /// Classifies raw feature rows with the configured classifier.
    pub fn identify_batch(&self, raw: &DMatrix<f64>) -> Result<Vec<Prediction>> {
        self.identify_batch_with(raw, self.config.classifier)
    }

    pub fn identify_batch_with(&self, raw: &DMatrix<f64>, classifier: Classifier) -> Result<Vec<Prediction>> {
        let features = self.transform(raw)?;
        if features.nrows() == 0 {
            return Ok(Vec::new());
        }
        match classifier {
            Classifier::NnReduced => {
                let (reference, coords) = self.reduced_coords(&features)?;
                Ok(rows_of(&coords)
                    .into_iter()
                    .map(|c| self.predict_at(&reference, c, None, false))
                    .collect())
            }
            Classifier::UnlocNn => rows_of(&features).iter().map(|r| self.unloc_one(r)).collect(),
        }
    }

    pub fn identify(&self, raw: &[f64]) -> Result<Prediction> {
        let m = DMatrix::from_row_slice(1, raw.len(), raw);
        Ok(self.identify_batch(&m)?.remove(0))
    }

    /// Training and new-row coordinates in the reduced space. t-SNE has no
    /// out-of-sample map, so new rows are embedded jointly with the training
    /// rows and both parts of that embedding are returned.
    fn reduced_coords(&self, features: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        if self.reducer.kind() != ReducerKind::Tsne {
            return Ok((self.reduced.coords.clone(), self.reducer.apply(features)?));
        }
        let n = self.train_features.nrows();
        let joint = DMatrix::from_fn(n + features.nrows(), features.ncols(), |i, c| {
            if i < n {
                self.train_features[(i, c)]
            } else {
                features[(i - n, c)]
            }
        });
        let out = embed_tsne(&self.config.reducer, &joint, derive_seed(self.config.seed, &[1]))?;
        Ok((out.coords.rows(0, n).into_owned(), out.coords.rows(n, features.nrows()).into_owned()))
    }

    fn unloc_one(&self, features: &[f64]) -> Result<Prediction> {
        let cross = self.cross_distances(features)?;
        let anchors = &self.clusters.centroids;
        if self.k() == 1 {
            let c: Vec<f64> = anchors.row(0).iter().copied().collect();
            return Ok(self.predict_at(&self.reduced.coords, c, Some(0.0), true));
        }
        match localize(&cross, anchors, &self.config.unloc, derive_seed(self.config.seed, &[3])) {
            Ok(est) => Ok(self.predict_at(&self.reduced.coords, est.coords, Some(est.residual), est.ambiguous)),
            Err(e) => {
                // fall back to the anchor whose template is closest
                log::warn!("localisation failed ({e}); using the nearest template's anchor");
                let j = nearest_index(&cross.known_test);
                let c: Vec<f64> = anchors.row(j).iter().copied().collect();
                Ok(self.predict_at(&self.reduced.coords, c, None, true))
            }
        }
    }
}

fn nearest_index(v: &DVector<f64>) -> usize {
    (0..v.len()).min_by(|&a, &b| v[a].total_cmp(&v[b])).unwrap_or(0)
}

/// Accuracy of predictions against true users; a prediction without a
/// matched user counts as wrong.
pub fn score_predictions(preds: &[Prediction], truth: &[String]) -> Result<f64> {
    if preds.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            expected: truth.len(),
            actual: preds.len(),
        });
    }
    if preds.is_empty() {
        return Err(Error::InvalidArgument("no predictions to score".into()));
    }
    let hits = preds
        .iter()
        .zip(truth)
        .filter(|(p, t)| p.user.as_deref() == Some(t.as_str()))
        .count();
    Ok(hits as f64 / preds.len() as f64)
}

pub fn evaluate(model: &TrainedModel, test: &Dataset, classifier: Classifier) -> Result<f64> {
    let preds = model.identify_batch_with(&test.to_matrix(), classifier)?;
    score_predictions(&preds, &test.labels())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::ClusterMethod;
    use crate::dataset::{split, SplitMode, SplitSpec};
    use crate::synth::{generate, SynthConfig};

    fn four_users() -> Dataset {
        let ds = generate(&SynthConfig { users: 4, sessions: 2, reps_per_session: 25, seed: 5, ..Default::default() }).unwrap();
        ds
    }

    #[test]
    fn training_sample_identifies_itself() {
        let ds = four_users();
        for reducer in [ReducerKind::Pca, ReducerKind::Kpca] {
            let cfg = PipelineConfig {
                reducer: ReducerConfig { kind: reducer, ..Default::default() },
                ..Default::default()
            };
            let model = train(&ds, &cfg).unwrap();
            let raw = ds.to_matrix();
            for i in [0usize, 37, 120] {
                let row: Vec<f64> = raw.row(i).iter().copied().collect();
                let p = model.identify_batch_with(&DMatrix::from_row_slice(1, row.len(), &row), Classifier::NnReduced).unwrap();
                assert_eq!(p[0].label, model.clusters.labels[i]);
            }
        }
    }

    #[test]
    fn single_user_gives_one_cluster() {
        let ds = generate(&SynthConfig { users: 1, sessions: 2, reps_per_session: 30, pause_rate: 0.0, seed: 1, ..Default::default() }).unwrap();
        let cfg = PipelineConfig {
            cluster: ClusterConfig { method: ClusterMethod::Dbscan, ..Default::default() },
            ..Default::default()
        };
        let model = train(&ds, &cfg).unwrap();
        assert_eq!(model.k(), 1);
    }

    #[test]
    fn both_classifiers_score_same_test_set() {
        let ds = four_users();
        let (tr, te) = split(&ds, &SplitSpec::new(0.8, SplitMode::Random, 3)).unwrap();
        let model = train(&tr, &PipelineConfig::default()).unwrap();
        for c in [Classifier::NnReduced, Classifier::UnlocNn] {
            let acc = evaluate(&model, &te, c).unwrap();
            assert!((0.0..=1.0).contains(&acc));
        }
    }

    #[test]
    fn feature_mismatch_is_an_error() {
        let ds = four_users();
        let model = train(&ds, &PipelineConfig::default()).unwrap();
        assert!(matches!(
            model.identify_batch(&DMatrix::zeros(1, 5)),
            Err(Error::DimensionMismatch { expected: 31, actual: 5 })
        ));
    }

    #[test]
    fn hungarian_matching_prefers_overlap() {
        let labels = [0, 0, 1, 1, 1, -1];
        let users: Vec<String> = ["b", "b", "a", "a", "b", "a"].iter().map(|s| s.to_string()).collect();
        let m = match_clusters_to_users(&labels, &users, 2);
        assert_eq!(m, vec![Some("b".to_string()), Some("a".to_string())]);
    }
}
