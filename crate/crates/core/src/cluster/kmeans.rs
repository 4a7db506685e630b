//! Lloyd's k-means with k-means++ seeding; building block for GMM
//! initialisation and X-means.

use rand::Rng as _;

use crate::rng::Rng;
use crate::stats::squared_euclidean;

pub fn kmeans_pp_init(points: &[Vec<f64>], k: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centers = Vec::with_capacity(k);
    centers.push(points[rng.random_range(0..n)].clone());
    let mut d2: Vec<f64> = points.iter().map(|p| squared_euclidean(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let c = points[pick].clone();
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(squared_euclidean(p, &c));
        }
        centers.push(c);
    }
    centers
}

pub fn nearest(p: &[f64], centers: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (j, c) in centers.iter().enumerate() {
        let d = squared_euclidean(p, c);
        if d < best_d {
            best_d = d;
            best = j;
        }
    }
    best
}

#[derive(Debug, Clone)]
pub struct KMeansFit {
    pub labels: Vec<usize>,
    pub centers: Vec<Vec<f64>>,
    pub sse: f64,
}

/// Lloyd iterations from the given centres. Empty clusters keep their
/// previous centre.
pub fn lloyd(points: &[Vec<f64>], mut centers: Vec<Vec<f64>>, max_iter: usize) -> KMeansFit {
    let dims = points.first().map_or(0, Vec::len);
    let k = centers.len();
    let mut labels: Vec<usize> = points.iter().map(|p| nearest(p, &centers)).collect();
    for _ in 0..max_iter {
        let mut sums = vec![vec![0.0; dims]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(p) {
                *s += v;
            }
        }
        for j in 0..k {
            if counts[j] > 0 {
                centers[j] = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            }
        }
        let next: Vec<usize> = points.iter().map(|p| nearest(p, &centers)).collect();
        if next == labels {
            break;
        }
        labels = next;
    }
    let sse = points
        .iter()
        .zip(&labels)
        .map(|(p, &l)| squared_euclidean(p, &centers[l]))
        .sum();
    KMeansFit { labels, centers, sse }
}

/// Best-of-`n_init` k-means by within-cluster sum of squares.
pub fn kmeans(points: &[Vec<f64>], k: usize, n_init: usize, rng: &mut Rng) -> KMeansFit {
    let mut best: Option<KMeansFit> = None;
    for _ in 0..n_init.max(1) {
        let fit = lloyd(points, kmeans_pp_init(points, k, rng), 300);
        if best.as_ref().is_none_or(|b| fit.sse < b.sse) {
            best = Some(fit);
        }
    }
    best.expect("at least one k-means run")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;

    #[test]
    fn two_obvious_groups() {
        let pts: Vec<Vec<f64>> = (0..10)
            .map(|i| if i < 5 { vec![i as f64 * 0.01, 0.0] } else { vec![10.0 + i as f64 * 0.01, 0.0] })
            .collect();
        let fit = kmeans(&pts, 2, 3, &mut rng_from(4));
        assert_eq!(fit.labels[0..5].iter().collect::<std::collections::HashSet<_>>().len(), 1);
        assert_ne!(fit.labels[0], fit.labels[9]);
    }
}
