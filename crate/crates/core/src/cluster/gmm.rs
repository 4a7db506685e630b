//! Full-covariance Gaussian mixtures fitted by EM.
//!
//! Covariances are constrained to have every eigenvalue ≥ [`COVARIANCE_FLOOR`].
//! The M-step enforces this by flooring the eigenvalues of the weighted scatter
//! matrix, which is the exact constrained maximiser, so the log-likelihood never
//! decreases between iterations.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::sym_eigen_desc;
use crate::rng::{derive_seed, rng_from};

use super::kmeans::{kmeans, lloyd};

pub const COVARIANCE_FLOOR: f64 = 1e-6;
pub const COLLAPSE_WEIGHT: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GmmConfig {
    pub max_iter: usize,
    /// Stop when the log-likelihood gain falls below `tol · max(1, |ll|)`.
    pub tol: f64,
    /// Independent k-means initialisations; the best final likelihood wins.
    pub n_init: usize,
    /// Re-initialisations allowed after a component collapses.
    pub restarts: usize,
}

impl Default for GmmConfig {
    fn default() -> Self {
        Self {
            max_iter: 500,
            tol: 1e-10,
            n_init: 3,
            restarts: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmModel {
    pub weights: Vec<f64>,
    pub means: Vec<DVector<f64>>,
    pub covariances: Vec<DMatrix<f64>>,
}

#[derive(Debug, Clone)]
pub struct GmmFit {
    pub model: GmmModel,
    pub loglik: f64,
    /// Log-likelihood of the parameters entering each E-step.
    pub loglik_trace: Vec<f64>,
    /// `n × k` posterior responsibilities of the final model.
    pub responsibilities: DMatrix<f64>,
}

impl GmmModel {
    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn dims(&self) -> usize {
        self.means.first().map_or(0, |m| m.len())
    }

    /// `k·(d + d(d+1)/2) + (k − 1)` free parameters.
    pub fn parameter_count(k: usize, d: usize) -> usize {
        k * (d + d * (d + 1) / 2) + (k - 1)
    }

    /// Per-point log-likelihood and responsibilities.
    pub fn e_step(&self, x: &DMatrix<f64>) -> Result<(f64, DMatrix<f64>)> {
        let (n, d) = x.shape();
        let k = self.k();
        let ln2pi = (2.0 * std::f64::consts::PI).ln();
        let mut logp = DMatrix::zeros(n, k);
        for j in 0..k {
            let chol = Cholesky::<f64, Dyn>::new(self.covariances[j].clone())
                .ok_or_else(|| Error::Numerical("covariance is not positive definite".into()))?;
            let logdet = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
            let lw = self.weights[j].ln();
            for i in 0..n {
                let diff = DVector::from_iterator(d, (0..d).map(|c| x[(i, c)] - self.means[j][c]));
                let z = chol.l().solve_lower_triangular(&diff).expect("non-singular factor");
                let maha = z.norm_squared();
                logp[(i, j)] = lw - 0.5 * (d as f64 * ln2pi + logdet + maha);
            }
        }
        let mut total = 0.0;
        let mut resp = DMatrix::zeros(n, k);
        for i in 0..n {
            let mx = (0..k).map(|j| logp[(i, j)]).fold(f64::NEG_INFINITY, f64::max);
            let s: f64 = (0..k).map(|j| (logp[(i, j)] - mx).exp()).sum();
            let lse = mx + s.ln();
            total += lse;
            for j in 0..k {
                resp[(i, j)] = (logp[(i, j)] - lse).exp();
            }
        }
        Ok((total, resp))
    }

    /// Hard labels by maximum responsibility; ties go to the lower index.
    pub fn hard_labels(resp: &DMatrix<f64>) -> Vec<usize> {
        resp.row_iter()
            .map(|r| {
                let mut best = 0;
                for j in 1..r.len() {
                    if r[j] > r[best] {
                        best = j;
                    }
                }
                best
            })
            .collect()
    }
}

fn floor_eigenvalues(s: &DMatrix<f64>) -> DMatrix<f64> {
    let (vals, vecs) = sym_eigen_desc(s);
    let clamped = DMatrix::from_diagonal(&DVector::from_iterator(
        vals.len(),
        vals.iter().map(|&v| v.max(COVARIANCE_FLOOR)),
    ));
    let m = &vecs * clamped * vecs.transpose();
    (&m + m.transpose()) * 0.5
}

fn m_step(x: &DMatrix<f64>, resp: &DMatrix<f64>) -> std::result::Result<GmmModel, usize> {
    let (n, d) = x.shape();
    let k = resp.ncols();
    let mut weights = Vec::with_capacity(k);
    let mut means = Vec::with_capacity(k);
    let mut covariances = Vec::with_capacity(k);
    for j in 0..k {
        let nk: f64 = resp.column(j).sum();
        let w = nk / n as f64;
        if w < COLLAPSE_WEIGHT {
            return Err(j);
        }
        let mut mu = DVector::zeros(d);
        for i in 0..n {
            for c in 0..d {
                mu[c] += resp[(i, j)] * x[(i, c)];
            }
        }
        mu /= nk;
        let mut s = DMatrix::zeros(d, d);
        for i in 0..n {
            let r = resp[(i, j)];
            for a in 0..d {
                let da = x[(i, a)] - mu[a];
                for b in 0..d {
                    s[(a, b)] += r * da * (x[(i, b)] - mu[b]);
                }
            }
        }
        s /= nk;
        weights.push(w);
        means.push(mu);
        covariances.push(floor_eigenvalues(&s));
    }
    Ok(GmmModel {
        weights,
        means,
        covariances,
    })
}

fn rows_of(x: &DMatrix<f64>) -> Vec<Vec<f64>> {
    x.row_iter().map(|r| r.iter().copied().collect()).collect()
}

enum Attempt {
    Done(GmmFit),
    Collapsed,
}

fn fit_once(x: &DMatrix<f64>, k: usize, cfg: &GmmConfig, seed: u64) -> Result<Attempt> {
    let n = x.nrows();
    let points = rows_of(x);
    let mut rng = rng_from(seed);
    let init = if k == 1 {
        lloyd(&points, vec![points[0].clone()], 1)
    } else {
        kmeans(&points, k, 1, &mut rng)
    };
    let mut resp = DMatrix::zeros(n, k);
    for (i, &l) in init.labels.iter().enumerate() {
        resp[(i, l)] = 1.0;
    }
    let mut model = match m_step(x, &resp) {
        Ok(m) => m,
        Err(_) => return Ok(Attempt::Collapsed),
    };
    let mut trace = Vec::new();
    for _ in 0..cfg.max_iter {
        let (ll, r) = model.e_step(x)?;
        let converged = trace
            .last()
            .is_some_and(|&prev: &f64| (ll - prev).abs() < cfg.tol * ll.abs().max(1.0));
        trace.push(ll);
        resp = r;
        if converged {
            break;
        }
        model = match m_step(x, &resp) {
            Ok(m) => m,
            Err(_) => return Ok(Attempt::Collapsed),
        };
    }
    let (loglik, responsibilities) = model.e_step(x)?;
    Ok(Attempt::Done(GmmFit {
        model,
        loglik,
        loglik_trace: trace,
        responsibilities,
    }))
}

/// EM for a `k`-component full-covariance mixture.
pub fn gmm_fit(x: &DMatrix<f64>, k: usize, seed: u64, cfg: &GmmConfig) -> Result<GmmFit> {
    let n = x.nrows();
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!(
            "GMM needs 1 ≤ k ≤ n, got k = {k}, n = {n}"
        )));
    }
    let mut best: Option<GmmFit> = None;
    for init in 0..cfg.n_init.max(1) {
        let mut attempt = 0;
        loop {
            let s = derive_seed(seed, &[init as u64, attempt as u64]);
            match fit_once(x, k, cfg, s)? {
                Attempt::Done(fit) => {
                    if best.as_ref().is_none_or(|b| fit.loglik > b.loglik) {
                        best = Some(fit);
                    }
                    break;
                }
                Attempt::Collapsed if attempt < cfg.restarts => attempt += 1,
                Attempt::Collapsed => break,
            }
        }
    }
    best.ok_or_else(|| {
        Error::Numerical(format!(
            "GMM with k = {k} collapsed after {} restarts",
            cfg.restarts
        ))
    })
}
