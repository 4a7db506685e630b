//! Cluster-count estimation in the reduced space: DBSCAN, GMM with BIC
//! model selection, and X-means.

pub mod dbscan;
pub mod gmm;
pub mod kmeans;
pub mod xmeans;

use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::derive_seed;

pub use dbscan::{dbscan_labels, default_eps, DEFAULT_MIN_SAMPLES};
pub use gmm::{gmm_fit, GmmConfig, GmmFit, GmmModel};
pub use xmeans::{region_bic, xmeans_fit};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClusterMethod {
    Dbscan,
    Gmm,
    Xmeans,
}

impl ClusterMethod {
    pub fn name(self) -> &'static str {
        match self {
            ClusterMethod::Dbscan => "dbscan",
            ClusterMethod::Gmm => "gmm",
            ClusterMethod::Xmeans => "xmeans",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterConfig {
    pub method: ClusterMethod,
    /// `None` picks eps from the k-distance curve.
    pub eps: Option<f64>,
    pub min_samples: usize,
    pub k_min: usize,
    /// Upper end of the GMM candidate range and the X-means cap.
    pub k_max: usize,
    pub gmm: GmmConfig,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            method: ClusterMethod::Xmeans,
            eps: None,
            min_samples: DEFAULT_MIN_SAMPLES,
            k_min: 1,
            k_max: 10,
            gmm: GmmConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub k: usize,
    pub bic: Option<f64>,
    pub loglik: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClusterDiagnostics {
    pub candidates: Vec<CandidateScore>,
    pub eps: Option<f64>,
    pub min_samples: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterResult {
    /// `−1` marks DBSCAN noise.
    pub labels: Vec<i64>,
    pub k: usize,
    /// `k × dims`; row `j` is the mean of the points labelled `j`.
    pub centroids: DMatrix<f64>,
    pub method: ClusterMethod,
    pub diagnostics: ClusterDiagnostics,
}

impl ClusterResult {
    /// Renumbers the non-negative labels to `0..k` in order of first
    /// appearance and computes the member means.
    pub fn from_labels(
        points: &[Vec<f64>],
        raw: &[i64],
        method: ClusterMethod,
        diagnostics: ClusterDiagnostics,
    ) -> Self {
        let dims = points.first().map_or(0, Vec::len);
        let mut map = std::collections::HashMap::new();
        let labels: Vec<i64> = raw
            .iter()
            .map(|&l| {
                if l < 0 {
                    -1
                } else {
                    let next = map.len() as i64;
                    *map.entry(l).or_insert(next)
                }
            })
            .collect();
        let k = map.len();
        let mut centroids = DMatrix::zeros(k, dims);
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            if l >= 0 {
                let l = l as usize;
                counts[l] += 1;
                for c in 0..dims {
                    centroids[(l, c)] += p[c];
                }
            }
        }
        for (j, &cnt) in counts.iter().enumerate() {
            for c in 0..dims {
                centroids[(j, c)] /= cnt as f64;
            }
        }
        Self {
            labels,
            k,
            centroids,
            method,
            diagnostics,
        }
    }

    pub fn centroid_rows(&self) -> Vec<Vec<f64>> {
        self.centroids.row_iter().map(|r| r.iter().copied().collect()).collect()
    }

    pub fn to_csv_string(&self, ids: &[String]) -> String {
        let mut out = String::from("id,label\n");
        for (id, l) in ids.iter().zip(&self.labels) {
            out.push_str(&format!("{id},{l}\n"));
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>, ids: &[String]) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv_string(ids)).map_err(|e| Error::io(path, e))
    }
}

/// `−2·loglik + ln(n)·q`.
pub fn bic(loglik: f64, n: usize, q: usize) -> Result<f64> {
    if n == 0 || q == 0 {
        return Err(Error::InvalidArgument(format!("BIC needs n ≥ 1 and q ≥ 1, got n = {n}, q = {q}")));
    }
    Ok(-2.0 * loglik + (n as f64).ln() * q as f64)
}

fn rows_of(x: &DMatrix<f64>) -> Vec<Vec<f64>> {
    x.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub fn dbscan(x: &DMatrix<f64>, eps: f64, min_samples: usize) -> Result<ClusterResult> {
    if !(eps > 0.0) || min_samples == 0 {
        return Err(Error::InvalidArgument(format!(
            "DBSCAN needs eps > 0 and min_samples ≥ 1, got eps = {eps}, min_samples = {min_samples}"
        )));
    }
    let points = rows_of(x);
    let labels = dbscan_labels(&points, eps, min_samples);
    let diag = ClusterDiagnostics {
        eps: Some(eps),
        min_samples: Some(min_samples),
        ..Default::default()
    };
    Ok(ClusterResult::from_labels(&points, &labels, ClusterMethod::Dbscan, diag))
}

/// Fits every `k` in `ks` and keeps the smallest BIC. Failed fits are recorded
/// in the diagnostics and skipped.
pub fn gmm_select(x: &DMatrix<f64>, ks: &[usize], seed: u64, cfg: &GmmConfig) -> Result<ClusterResult> {
    let n = x.nrows();
    let d = x.ncols();
    if ks.is_empty() || ks.iter().any(|&k| k == 0 || k > n) {
        return Err(Error::InvalidArgument(format!("GMM candidate range {ks:?} is invalid for {n} points")));
    }
    let fits: Vec<(usize, Result<GmmFit>)> = ks
        .par_iter()
        .map(|&k| (k, gmm_fit(x, k, derive_seed(seed, &[k as u64]), cfg)))
        .collect();
    let mut candidates = Vec::with_capacity(fits.len());
    let mut best: Option<(f64, &GmmFit)> = None;
    for (k, fit) in &fits {
        match fit {
            Ok(f) => {
                let score = bic(f.loglik, n, GmmModel::parameter_count(*k, d))?;
                candidates.push(CandidateScore {
                    k: *k,
                    bic: Some(score),
                    loglik: Some(f.loglik),
                    error: None,
                });
                if best.is_none_or(|(b, _)| score < b) {
                    best = Some((score, f));
                }
            }
            Err(e) => candidates.push(CandidateScore {
                k: *k,
                bic: None,
                loglik: None,
                error: Some(e.to_string()),
            }),
        }
    }
    let (_, fit) = best.ok_or_else(|| Error::Numerical("every GMM candidate failed".into()))?;
    let labels: Vec<i64> = GmmModel::hard_labels(&fit.responsibilities)
        .into_iter()
        .map(|l| l as i64)
        .collect();
    let diag = ClusterDiagnostics {
        candidates,
        ..Default::default()
    };
    Ok(ClusterResult::from_labels(&rows_of(x), &labels, ClusterMethod::Gmm, diag))
}

pub fn xmeans(x: &DMatrix<f64>, k_max: usize, seed: u64) -> Result<ClusterResult> {
    if k_max == 0 || x.nrows() == 0 {
        return Err(Error::InvalidArgument("X-means needs k_max ≥ 1 and at least one point".into()));
    }
    let points = rows_of(x);
    let fit = xmeans_fit(&points, k_max, seed);
    let labels: Vec<i64> = fit.labels.iter().map(|&l| l as i64).collect();
    let diag = ClusterDiagnostics {
        candidates: fit
            .round_bic
            .iter()
            .map(|&(k, b)| CandidateScore {
                k,
                bic: Some(b),
                loglik: None,
                error: None,
            })
            .collect(),
        ..Default::default()
    };
    Ok(ClusterResult::from_labels(&points, &labels, ClusterMethod::Xmeans, diag))
}

pub fn run_clustering(cfg: &ClusterConfig, x: &DMatrix<f64>, seed: u64) -> Result<ClusterResult> {
    match cfg.method {
        ClusterMethod::Dbscan => {
            let eps = cfg
                .eps
                .unwrap_or_else(|| default_eps(&rows_of(x), cfg.min_samples));
            dbscan(x, eps, cfg.min_samples)
        }
        ClusterMethod::Gmm => {
            let hi = cfg.k_max.min(x.nrows());
            let lo = cfg.k_min.max(1);
            if lo > hi {
                return Err(Error::InvalidArgument(format!(
                    "GMM candidate range {lo}..={hi} is empty"
                )));
            }
            let ks: Vec<usize> = (lo..=hi).collect();
            gmm_select(x, &ks, seed, &cfg.gmm)
        }
        ClusterMethod::Xmeans => xmeans(x, cfg.k_max, seed),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;
    use rand_distr::{Distribution, Normal};

    fn blob_matrix(centres: &[(f64, f64)], per: usize, seed: u64) -> (DMatrix<f64>, Vec<usize>) {
        let mut rng = rng_from(seed);
        let nd = Normal::new(0.0, 1.0).unwrap();
        let mut v = Vec::new();
        let mut truth = Vec::new();
        for (b, c) in centres.iter().enumerate() {
            for _ in 0..per {
                v.push(c.0 + nd.sample(&mut rng));
                v.push(c.1 + nd.sample(&mut rng));
                truth.push(b);
            }
        }
        (DMatrix::from_row_slice(truth.len(), 2, &v), truth)
    }

    #[test]
    fn bic_values() {
        assert!((bic(-100.0, 100, 5).unwrap() - 223.0259).abs() < 1e-4);
        assert!(bic(-100.0, 100, 0).is_err());
        let a = bic(-7.0, 30, 4).unwrap();
        let b = bic(-7.0, 30, 8).unwrap();
        assert!((b - a - 30f64.ln() * 4.0).abs() < 1e-12);
    }

    #[test]
    fn gmm_select_single_blob() {
        let (x, _) = blob_matrix(&[(0.0, 0.0)], 200, 1);
        let r = gmm_select(&x, &[1, 2, 3, 4, 5], 3, &GmmConfig::default()).unwrap();
        assert_eq!(r.k, 1);
        assert_eq!(r.diagnostics.candidates.len(), 5);
    }

    #[test]
    fn gmm_select_singleton_range() {
        let (x, _) = blob_matrix(&[(0.0, 0.0)], 60, 2);
        let r = gmm_select(&x, &[3], 0, &GmmConfig::default()).unwrap();
        assert_eq!(r.k, 3);
    }

    #[test]
    fn all_methods_on_four_blobs() {
        // normal blobs truncated at 2 sd, so DBSCAN has no far tail points to call noise
        let mut rng = rng_from(4);
        let nd = Normal::new(0.0, 1.0).unwrap();
        let mut v = Vec::new();
        let mut truth = Vec::new();
        for (b, c) in [(0.0, 0.0), (15.0, 0.0), (0.0, 15.0), (15.0, 15.0)].iter().enumerate() {
            for _ in 0..50 {
                for centre in [c.0, c.1] {
                    let z = loop {
                        let z: f64 = nd.sample(&mut rng);
                        if z.abs() <= 2.0 {
                            break z;
                        }
                    };
                    v.push(centre + z);
                }
                truth.push(b);
            }
        }
        let x = DMatrix::from_row_slice(truth.len(), 2, &v);
        for method in [ClusterMethod::Dbscan, ClusterMethod::Gmm, ClusterMethod::Xmeans] {
            let cfg = ClusterConfig { method, ..Default::default() };
            let r = run_clustering(&cfg, &x, 5).unwrap();
            let ari = crate::metrics::adjusted_rand_index(&r.labels, &truth).unwrap();
            assert_eq!(r.k, 4, "{method:?}");
            assert!(ari == 1.0, "{method:?}: ARI {ari}");
        }
    }

    #[test]
    fn centroids_are_member_means_and_deterministic() {
        let (x, _) = blob_matrix(&[(0.0, 0.0), (8.0, 3.0), (2.0, 9.0)], 40, 6);
        for method in [ClusterMethod::Dbscan, ClusterMethod::Gmm, ClusterMethod::Xmeans] {
            let cfg = ClusterConfig { method, ..Default::default() };
            let a = run_clustering(&cfg, &x, 8).unwrap();
            let b = run_clustering(&cfg, &x, 8).unwrap();
            assert_eq!(a, b);
            for j in 0..a.k {
                let members: Vec<usize> = (0..x.nrows()).filter(|&i| a.labels[i] == j as i64).collect();
                for c in 0..2 {
                    let m = members.iter().map(|&i| x[(i, c)]).sum::<f64>() / members.len() as f64;
                    assert!((a.centroids[(j, c)] - m).abs() < 1e-9);
                }
            }
            assert!(a.labels.iter().all(|&l| l == -1 || (0..a.k as i64).contains(&l)));
        }
    }
}
