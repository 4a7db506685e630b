//! X-means: grow k from 1 by testing a 2-way split of every region and keeping
//! the splits that improve a BIC computed on that region alone.
//!
//! Each cluster is scored as an axis-aligned Gaussian with its own per-dimension
//! variances. A single shared isotropic variance cannot accept the first split
//! of four blobs on a square: halving one axis gains at most `R·ln 2`, which the
//! mixing term takes back exactly.
//!
//! A rejected 2-way split gets one level of lookahead: each half is split
//! again and the region is replaced by up to four clusters when that beats the
//! parent. Several well-separated groups on a ring otherwise stall at k = 1,
//! because cutting the ring in half barely narrows either half.

use crate::rng::{derive_seed, rng_from};

use super::kmeans::{kmeans, lloyd};

const RELATIVE_VARIANCE_FLOOR: f64 = 1e-6;
const MAX_ROUNDS: usize = 64;
const SPLIT_INITS: usize = 3;

/// Hard-assignment BIC (lower is better) of the clusters in `groups`, each an
/// axis-aligned Gaussian. Per-dimension variances are floored at `floor[d]`.
pub fn region_bic(groups: &[Vec<&[f64]>], floor: &[f64]) -> f64 {
    let dims = floor.len();
    let r: usize = groups.iter().map(Vec::len).sum();
    let rf = r as f64;
    let ln2pi = (2.0 * std::f64::consts::PI).ln();
    let mut ll = 0.0;
    let mut k = 0usize;
    for g in groups.iter().filter(|g| !g.is_empty()) {
        k += 1;
        let nf = g.len() as f64;
        ll += nf * (nf / rf).ln();
        for d in 0..dims {
            let mean = g.iter().map(|p| p[d]).sum::<f64>() / nf;
            let var = (g.iter().map(|p| (p[d] - mean).powi(2)).sum::<f64>() / nf).max(floor[d]);
            ll -= nf / 2.0 * (ln2pi + var.ln() + 1.0);
        }
    }
    let params = (k as f64 - 1.0) + 2.0 * dims as f64 * k as f64;
    -2.0 * ll + params * rf.ln()
}

fn variance_floor(points: &[Vec<f64>]) -> Vec<f64> {
    let n = points.len() as f64;
    let dims = points[0].len();
    (0..dims)
        .map(|d| {
            let mean = points.iter().map(|p| p[d]).sum::<f64>() / n;
            let var = points.iter().map(|p| (p[d] - mean).powi(2)).sum::<f64>() / n;
            (RELATIVE_VARIANCE_FLOOR * var).max(f64::MIN_POSITIVE)
        })
        .collect()
}

fn grouped<'a>(points: &'a [Vec<f64>], labels: &[usize], k: usize) -> Vec<Vec<&'a [f64]>> {
    let mut groups = vec![Vec::new(); k];
    for (p, &l) in points.iter().zip(labels) {
        groups[l].push(p.as_slice());
    }
    groups
}

#[derive(Debug, Clone)]
pub struct XmeansFit {
    pub labels: Vec<usize>,
    pub centers: Vec<Vec<f64>>,
    /// `(k, BIC of the whole data set)` after each round, starting with k = 1.
    pub round_bic: Vec<(usize, f64)>,
}

pub fn xmeans_fit(points: &[Vec<f64>], k_max: usize, seed: u64) -> XmeansFit {
    let n = points.len();
    let dims = points[0].len();
    let mean: Vec<f64> = (0..dims)
        .map(|c| points.iter().map(|p| p[c]).sum::<f64>() / n as f64)
        .collect();
    let floor = variance_floor(points);
    let min_child = dims + 1;
    let mut fit = lloyd(points, vec![mean], 1);
    let mut round_bic = vec![(1, region_bic(&grouped(points, &fit.labels, 1), &floor))];

    for round in 0..MAX_ROUNDS {
        let k = fit.centers.len();
        if k >= k_max {
            break;
        }
        // (improvement, cluster, replacement centres)
        let mut gains: Vec<(f64, usize, Vec<Vec<f64>>)> = Vec::new();
        for j in 0..k {
            let region: Vec<Vec<f64>> = points
                .iter()
                .zip(&fit.labels)
                .filter(|&(_, &l)| l == j)
                .map(|(p, _)| p.clone())
                .collect();
            if region.len() < 2 * min_child {
                continue;
            }
            let parent = region_bic(&[region.iter().map(Vec::as_slice).collect()], &floor);
            let mut rng = rng_from(derive_seed(seed, &[round as u64, j as u64]));
            let child = kmeans(&region, 2, SPLIT_INITS, &mut rng);
            let halves = grouped(&region, &child.labels, 2);
            if halves.iter().any(|h| h.len() < min_child) {
                continue;
            }
            let split = region_bic(&halves, &floor);
            if split < parent {
                gains.push((parent - split, j, child.centers));
                continue;
            }
            if k_max - k < 3 {
                continue;
            }
            let mut groups: Vec<Vec<&[f64]>> = Vec::new();
            let mut centres = Vec::new();
            for (h, half) in halves.iter().enumerate() {
                let owned: Vec<Vec<f64>> = half.iter().map(|p| p.to_vec()).collect();
                let sub = (owned.len() >= 2 * min_child)
                    .then(|| kmeans(&owned, 2, SPLIT_INITS, &mut rng))
                    .filter(|sub| {
                        let first = sub.labels.iter().filter(|&&l| l == 0).count();
                        first.min(owned.len() - first) >= min_child
                    });
                match sub {
                    Some(sub) => {
                        for q in 0..2 {
                            groups.push(half.iter().zip(&sub.labels).filter(|&(_, &l)| l == q).map(|(p, _)| *p).collect());
                        }
                        centres.extend(sub.centers);
                    }
                    None => {
                        groups.push(half.clone());
                        centres.push(child.centers[h].clone());
                    }
                }
            }
            let deeper = region_bic(&groups, &floor);
            if centres.len() > 2 && deeper < parent {
                gains.push((parent - deeper, j, centres));
            }
        }
        if gains.is_empty() {
            break;
        }
        gains.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let mut split_of: Vec<Option<Vec<Vec<f64>>>> = vec![None; k];
        let mut room = k_max - k;
        for (_, j, c) in gains {
            if c.len() - 1 <= room {
                room -= c.len() - 1;
                split_of[j] = Some(c);
            }
        }
        let mut centers = Vec::with_capacity(k_max);
        for (j, s) in split_of.into_iter().enumerate() {
            match s {
                Some(c) => centers.extend(c),
                None => centers.push(fit.centers[j].clone()),
            }
        }
        fit = lloyd(points, centers, 300);
        let k = fit.centers.len();
        round_bic.push((k, region_bic(&grouped(points, &fit.labels, k), &floor)));
    }
    XmeansFit {
        labels: fit.labels,
        centers: fit.centers,
        round_bic,
    }
}
