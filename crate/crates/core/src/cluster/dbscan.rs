use std::cmp::Ordering;
use std::collections::VecDeque;

use crate::stats::{euclidean, quantile_sorted};

pub const DEFAULT_MIN_SAMPLES: usize = 5;
const EPS_PERCENTILE: f64 = 0.9;

/// Density clustering with Euclidean neighbourhoods. A point's neighbourhood
/// includes itself; it is a core point when that neighbourhood holds at least
/// `min_samples` points.
///
/// Core points are grouped by connectivity, which does not depend on input
/// order. Border points join the cluster of their nearest core neighbour
/// (ties broken by the neighbour's coordinates), so the partition is
/// order-independent as well. Noise gets label −1.
pub fn dbscan_labels(points: &[Vec<f64>], eps: f64, min_samples: usize) -> Vec<i64> {
    let n = points.len();
    let neighbours: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| euclidean(&points[i], &points[j]) <= eps)
                .collect()
        })
        .collect();
    let core: Vec<bool> = neighbours.iter().map(|nb| nb.len() >= min_samples.max(1)).collect();

    let mut labels = vec![-1i64; n];
    let mut next = 0i64;
    for start in 0..n {
        if !core[start] || labels[start] >= 0 {
            continue;
        }
        labels[start] = next;
        let mut queue = VecDeque::from([start]);
        while let Some(p) = queue.pop_front() {
            for &q in &neighbours[p] {
                if core[q] && labels[q] < 0 {
                    labels[q] = next;
                    queue.push_back(q);
                }
            }
        }
        next += 1;
    }

    for i in 0..n {
        if core[i] {
            continue;
        }
        let best = neighbours[i]
            .iter()
            .copied()
            .filter(|&j| core[j])
            .min_by(|&a, &b| {
                euclidean(&points[i], &points[a])
                    .total_cmp(&euclidean(&points[i], &points[b]))
                    .then_with(|| lexicographic(&points[a], &points[b]))
            });
        if let Some(j) = best {
            labels[i] = labels[j];
        }
    }
    labels
}

fn lexicographic(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// 90th percentile of every point's distance to its `min_samples`-th nearest
/// other point; floored at the smallest positive `f64`.
pub fn default_eps(points: &[Vec<f64>], min_samples: usize) -> f64 {
    let n = points.len();
    if n < 2 {
        return 1.0;
    }
    let k = min_samples.clamp(1, n - 1);
    let mut kth: Vec<f64> = points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut d: Vec<f64> = points
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, q)| euclidean(p, q))
                .collect();
            d.sort_by(f64::total_cmp);
            d[k - 1]
        })
        .collect();
    kth.sort_by(f64::total_cmp);
    quantile_sorted(&kth, EPS_PERCENTILE).max(f64::MIN_POSITIVE)
}
