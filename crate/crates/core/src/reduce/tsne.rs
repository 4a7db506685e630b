//! Exact t-SNE: perplexity-calibrated Gaussian affinities in the input space,
//! Student-t affinities in the embedding, and KL-divergence descent with
//! momentum, per-parameter gains, and early exaggeration.

use nalgebra::DMatrix;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_from;

const ENTROPY_TOL: f64 = 1e-5;
const MAX_SEARCH_STEPS: usize = 500;
const P_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TsneConfig {
    pub out_dims: usize,
    pub perplexity: f64,
    pub iterations: usize,
    /// `None` means `n / 12`.
    pub learning_rate: Option<f64>,
    pub early_exaggeration: f64,
    pub exaggeration_iters: usize,
}

impl Default for TsneConfig {
    fn default() -> Self {
        Self {
            out_dims: 2,
            perplexity: 30.0,
            iterations: 1000,
            learning_rate: None,
            early_exaggeration: 12.0,
            exaggeration_iters: 250,
        }
    }
}

impl TsneConfig {
    /// The configured perplexity clamped to `(n − 1) / 3`.
    pub fn clamped_perplexity(&self, n: usize) -> f64 {
        self.perplexity.min((n as f64 - 1.0) / 3.0)
    }

    pub fn learning_rate_for(&self, n: usize) -> f64 {
        self.learning_rate.unwrap_or(n as f64 / 12.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TsneOutput {
    pub coords: DMatrix<f64>,
    pub kl_initial: f64,
    pub kl_final: f64,
    pub perplexity: f64,
    pub learning_rate: f64,
}

/// Row-conditional affinities `p_{j|i}` and the Shannon entropy (nats) each
/// row reached. `dist2` holds squared input distances.
pub fn conditional_affinities(dist2: &DMatrix<f64>, perplexity: f64) -> (DMatrix<f64>, Vec<f64>) {
    let n = dist2.nrows();
    let target = perplexity.ln();
    let mut p = DMatrix::zeros(n, n);
    let mut entropies = Vec::with_capacity(n);
    let mut row = vec![0.0; n];
    for i in 0..n {
        let dmin = (0..n)
            .filter(|&j| j != i)
            .map(|j| dist2[(i, j)])
            .fold(f64::INFINITY, f64::min);
        let eval = |beta: f64, row: &mut [f64]| -> f64 {
            let mut sum = 0.0;
            let mut weighted = 0.0;
            for j in 0..n {
                if j == i {
                    row[j] = 0.0;
                    continue;
                }
                let d = dist2[(i, j)] - dmin;
                let v = (-beta * d).exp();
                row[j] = v;
                sum += v;
                weighted += d * v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
            sum.ln() + beta * weighted / sum
        };
        let mut beta = 1.0;
        let mut lo = 0.0;
        let mut hi = f64::INFINITY;
        let mut h = eval(beta, &mut row);
        for _ in 0..MAX_SEARCH_STEPS {
            let diff = h - target;
            if diff.abs() < ENTROPY_TOL {
                break;
            }
            if diff > 0.0 {
                lo = beta;
                beta = if hi.is_finite() { 0.5 * (beta + hi) } else { beta * 2.0 };
            } else {
                hi = beta;
                beta = 0.5 * (beta + lo);
            }
            h = eval(beta, &mut row);
        }
        entropies.push(h);
        for j in 0..n {
            p[(i, j)] = row[j];
        }
    }
    (p, entropies)
}

pub fn squared_distances(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let mut d = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let v: f64 = (0..m.ncols()).map(|c| (m[(i, c)] - m[(j, c)]).powi(2)).sum();
            d[(i, j)] = v;
            d[(j, i)] = v;
        }
    }
    d
}

/// Symmetrised joint affinities `(p_{j|i} + p_{i|j}) / 2n`.
pub fn joint_affinities(m: &DMatrix<f64>, perplexity: f64) -> DMatrix<f64> {
    let (cond, _) = conditional_affinities(&squared_distances(m), perplexity);
    let n = m.nrows() as f64;
    let mut p = (&cond + cond.transpose()) / (2.0 * n);
    for v in p.iter_mut() {
        *v = v.max(P_FLOOR);
    }
    for i in 0..m.nrows() {
        p[(i, i)] = 0.0;
    }
    p
}

fn student_t(y: &DMatrix<f64>) -> (DMatrix<f64>, f64) {
    let n = y.nrows();
    let mut num = DMatrix::zeros(n, n);
    let mut total = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let d2: f64 = (0..y.ncols()).map(|c| (y[(i, c)] - y[(j, c)]).powi(2)).sum();
            let v = 1.0 / (1.0 + d2);
            num[(i, j)] = v;
            num[(j, i)] = v;
            total += 2.0 * v;
        }
    }
    (num, total)
}

fn kl_divergence(p: &DMatrix<f64>, y: &DMatrix<f64>) -> f64 {
    let (num, total) = student_t(y);
    let n = p.nrows();
    let mut kl = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let pij = p[(i, j)];
                let qij = (num[(i, j)] / total).max(P_FLOOR);
                kl += pij * (pij / qij).ln();
            }
        }
    }
    kl
}

pub fn tsne_embed(m: &DMatrix<f64>, cfg: &TsneConfig, seed: u64) -> Result<TsneOutput> {
    let n = m.nrows();
    if !(2..=3).contains(&cfg.out_dims) {
        return Err(Error::InvalidArgument(format!(
            "t-SNE output dimension must be 2 or 3, got {}",
            cfg.out_dims
        )));
    }
    if cfg.perplexity < 1.0 || (n as f64) < 3.0 * cfg.perplexity || n < 4 {
        return Err(Error::InvalidArgument(format!(
            "perplexity {} is infeasible for {n} rows (need rows ≥ 3·perplexity and perplexity ≥ 1)",
            cfg.perplexity
        )));
    }
    let p = joint_affinities(m, cfg.perplexity);
    let lr = cfg.learning_rate_for(n);
    let dims = cfg.out_dims;

    let mut rng = rng_from(seed);
    let normal = Normal::new(0.0, 1e-4).expect("valid normal");
    let mut y = DMatrix::from_fn(n, dims, |_, _| normal.sample(&mut rng));
    let kl_initial = kl_divergence(&p, &y);

    let mut update = DMatrix::<f64>::zeros(n, dims);
    let mut gains = DMatrix::<f64>::from_element(n, dims, 1.0);
    let mut grad = DMatrix::<f64>::zeros(n, dims);
    for iter in 0..cfg.iterations {
        let exaggerate = iter < cfg.exaggeration_iters;
        let scale = if exaggerate { cfg.early_exaggeration } else { 1.0 };
        let momentum = if exaggerate { 0.5 } else { 0.8 };
        let (num, total) = student_t(&y);
        grad.fill(0.0);
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let q = (num[(i, j)] / total).max(P_FLOOR);
                let w = 4.0 * (scale * p[(i, j)] - q) * num[(i, j)];
                for c in 0..dims {
                    grad[(i, c)] += w * (y[(i, c)] - y[(j, c)]);
                }
            }
        }
        for idx in 0..n * dims {
            let g = grad[idx];
            let u = update[idx];
            gains[idx] = if (g > 0.0) != (u > 0.0) {
                gains[idx] + 0.2
            } else {
                (gains[idx] * 0.8).max(0.01)
            };
            update[idx] = momentum * u - lr * gains[idx] * g;
            y[idx] += update[idx];
        }
        for c in 0..dims {
            let mean = y.column(c).sum() / n as f64;
            y.column_mut(c).add_scalar_mut(-mean);
        }
    }
    let kl_final = kl_divergence(&p, &y);
    if !y.iter().all(|v| v.is_finite()) {
        return Err(Error::Numerical("t-SNE produced non-finite coordinates".into()));
    }
    Ok(TsneOutput {
        coords: y,
        kl_initial,
        kl_final,
        perplexity: cfg.perplexity,
        learning_rate: lr,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;
    use rand::Rng;

    fn noisy_points(n: usize, d: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = rng_from(seed);
        DMatrix::from_fn(n, d, |_, _| rng.random::<f64>())
    }

    #[test]
    fn entropy_hits_target() {
        let m = noisy_points(60, 5, 3);
        for perp in [5.0, 10.0, 19.0] {
            let (p, h) = conditional_affinities(&squared_distances(&m), perp);
            for (i, hi) in h.iter().enumerate() {
                assert!((hi - perp.ln()).abs() <= 1e-4, "row {i}: {hi} vs {}", perp.ln());
                assert!((p.row(i).sum() - 1.0).abs() < 1e-9);
                assert_eq!(p[(i, i)], 0.0);
            }
        }
    }

    #[test]
    fn joint_is_symmetric_and_normalised() {
        let m = noisy_points(30, 3, 1);
        let p = joint_affinities(&m, 5.0);
        assert!((p.clone() - p.transpose()).abs().max() < 1e-15);
        assert!((p.sum() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn descent_reduces_kl_and_is_deterministic() {
        let m = noisy_points(40, 4, 9);
        let cfg = TsneConfig { perplexity: 8.0, iterations: 300, ..Default::default() };
        let a = tsne_embed(&m, &cfg, 11).unwrap();
        let b = tsne_embed(&m, &cfg, 11).unwrap();
        assert!(a.kl_final <= a.kl_initial);
        assert_eq!(a.coords, b.coords);
    }

    #[test]
    fn duplicated_rows_land_together() {
        let base = noisy_points(20, 6, 5);
        let mut m = DMatrix::zeros(40, 6);
        for i in 0..20 {
            for c in 0..6 {
                m[(2 * i, c)] = base[(i, c)];
                m[(2 * i + 1, c)] = base[(i, c)];
            }
        }
        let cfg = TsneConfig { perplexity: 5.0, iterations: 500, ..Default::default() };
        let out = tsne_embed(&m, &cfg, 2).unwrap();
        let y = &out.coords;
        let dist = |i: usize, j: usize| ((y[(i, 0)] - y[(j, 0)]).powi(2) + (y[(i, 1)] - y[(j, 1)]).powi(2)).sqrt();
        let mut all = Vec::new();
        for i in 0..40 {
            for j in i + 1..40 {
                all.push(dist(i, j));
            }
        }
        let med = crate::stats::median(&all);
        for i in 0..20 {
            assert!(dist(2 * i, 2 * i + 1) < med, "pair {i}");
        }
    }

    #[test]
    fn infeasible_perplexity() {
        let m = noisy_points(20, 3, 0);
        let cfg = TsneConfig { perplexity: 30.0, ..Default::default() };
        assert!(tsne_embed(&m, &cfg, 0).is_err());
        let cfg = TsneConfig { out_dims: 1, perplexity: 3.0, ..Default::default() };
        assert!(tsne_embed(&m, &cfg, 0).is_err());
    }
}
