//! Ordinal unfolding-based localisation.
//!
//! Entities are the `N` anchors (one per known user, in `user_order`) plus the
//! target at index `N`. Reference `r` is user `r`'s template: its distance to
//! anchor `i` is `known_known[(i, r)]` and to the target `known_test[r]`.
//! Only the order of these distances is used. Borda scores turn the order into
//! proxies, a monotone map fitted on anchor pairs (whose reduced-space
//! distances are known) turns proxies into distances, and the target is placed
//! where its distances to the anchors best match.

use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::CrossDistanceMatrix;
use crate::optim::NelderMead;
use crate::rng::rng_from;
use crate::stats::euclidean;

pub const DEFAULT_TIE_TOL: f64 = 1e-9;
pub const DEFAULT_RESTARTS: usize = 8;
const MIN_SLOPE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MapKind {
    Affine,
    Isotonic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapScope {
    Global,
    PerReference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnlocConfig {
    pub restarts: usize,
    pub tie_tol: f64,
    pub map_kind: MapKind,
    pub map_scope: MapScope,
}

impl Default for UnlocConfig {
    fn default() -> Self {
        Self {
            restarts: DEFAULT_RESTARTS,
            tie_tol: DEFAULT_TIE_TOL,
            map_kind: MapKind::Affine,
            map_scope: MapScope::Global,
        }
    }
}

/// `(i, j, sign)`: sign −1 means `i` is closer to the reference than `j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Comparison {
    pub i: usize,
    pub j: usize,
    pub sign: i8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrdinalData {
    /// Anchors `0..n_anchors`, then the target.
    pub n_entities: usize,
    /// `comparisons[r]` lists every unordered pair `i < j` once.
    pub comparisons: Vec<Vec<Comparison>>,
}

impl OrdinalData {
    pub fn n_anchors(&self) -> usize {
        self.n_entities - 1
    }

    /// Sign of `(i, j)` under reference `r`, reading a stored `(j, i, s)` as `−s`.
    pub fn sign(&self, r: usize, i: usize, j: usize) -> Option<i8> {
        self.comparisons[r].iter().find_map(|c| {
            if c.i == i && c.j == j {
                Some(c.sign)
            } else if c.i == j && c.j == i {
                Some(-c.sign)
            } else {
                None
            }
        })
    }
}

/// Distances from reference `r` to every entity.
pub fn reference_distances(d: &CrossDistanceMatrix, r: usize) -> Vec<f64> {
    let n = d.n_known();
    let mut v: Vec<f64> = (0..n).map(|i| d.known_known[(i, r)]).collect();
    v.push(d.known_test[r]);
    v
}

/// Compares the distances of every pair of entities from one reference.
pub fn compare_distances(dist: &[f64], tie_tol: f64) -> Vec<Comparison> {
    let n = dist.len();
    let mut out = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            let diff = dist[i] - dist[j];
            let sign = if diff.abs() <= tie_tol {
                0
            } else if diff < 0.0 {
                -1
            } else {
                1
            };
            out.push(Comparison { i, j, sign });
        }
    }
    out
}

pub fn ordinal_comparisons(d: &CrossDistanceMatrix, tie_tol: f64) -> Result<OrdinalData> {
    let n = d.n_known();
    if d.known_known.shape() != (n, n) || d.known_test.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: d.known_test.len(),
        });
    }
    if !d.known_known.iter().chain(d.known_test.iter()).all(|v| v.is_finite()) {
        return Err(Error::Numerical("cross-distance matrix has non-finite entries".into()));
    }
    Ok(OrdinalData {
        n_entities: n + 1,
        comparisons: (0..n).map(|r| compare_distances(&reference_distances(d, r), tie_tol)).collect(),
    })
}

/// Borda scores: for each entity, comparisons it loses (is farther) minus
/// comparisons it wins, mapped affinely from `[−(E−1), E−1]` onto `[0, 1]`.
/// Higher means farther from the reference; all ties give 0.5 everywhere.
pub fn borda_scores(n_entities: usize, comparisons: &[Comparison]) -> Vec<f64> {
    let mut net = vec![0i64; n_entities];
    for c in comparisons {
        // sign −1: i closer than j
        net[c.i] += c.sign as i64;
        net[c.j] -= c.sign as i64;
    }
    let span = (n_entities.max(2) - 1) as f64;
    net.iter().map(|&s| (s as f64 + span) / (2.0 * span)).collect()
}

pub fn rank_aggregate(o: &OrdinalData, r: usize) -> Vec<f64> {
    borda_scores(o.n_entities, &o.comparisons[r])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum MapParams {
    /// `distance = slope · proxy + intercept`; `clamped` marks a non-positive
    /// least-squares slope that was raised to a small positive value.
    Affine { slope: f64, intercept: f64, clamped: bool },
    /// Non-decreasing piecewise-linear interpolant through the knots, constant
    /// beyond the ends.
    Isotonic { proxies: Vec<f64>, distances: Vec<f64> },
}

impl MapParams {
    pub fn apply(&self, proxy: f64) -> f64 {
        let v = match self {
            MapParams::Affine { slope, intercept, .. } => slope * proxy + intercept,
            MapParams::Isotonic { proxies, distances } => interpolate(proxies, distances, proxy),
        };
        v.max(0.0)
    }
}

fn interpolate(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    if x <= xs[0] {
        return ys[0];
    }
    let last = xs.len() - 1;
    if x >= xs[last] {
        return ys[last];
    }
    let hi = xs.partition_point(|&k| k <= x);
    let lo = hi - 1;
    let t = (x - xs[lo]) / (xs[hi] - xs[lo]);
    ys[lo] + t * (ys[hi] - ys[lo])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceMap {
    pub scope: MapScope,
    /// One entry for a global map, one per reference otherwise.
    pub params: Vec<MapParams>,
}

impl DistanceMap {
    pub fn apply(&self, reference: usize, proxy: f64) -> f64 {
        match self.scope {
            MapScope::Global => self.params[0].apply(proxy),
            MapScope::PerReference => self.params[reference].apply(proxy),
        }
    }

    pub fn any_clamped(&self) -> bool {
        self.params
            .iter()
            .any(|p| matches!(p, MapParams::Affine { clamped: true, .. }))
    }
}

/// Least-squares `distance ≈ slope · proxy + intercept` with slope > 0.
pub fn fit_affine(pairs: &[(f64, f64)]) -> Result<MapParams> {
    let mut sorted = pairs.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let first = sorted.first().map(|p| p.0);
    if sorted.iter().all(|p| Some(p.0) == first) {
        return Err(Error::InvalidArgument(
            "distance map needs at least 2 distinct proxy values".into(),
        ));
    }
    let n = sorted.len() as f64;
    let mx = sorted.iter().map(|p| p.0).sum::<f64>() / n;
    let my = sorted.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = sorted.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = sorted.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let raw = sxy / sxx;
    let clamped = !(raw > 0.0);
    let slope = if clamped { MIN_SLOPE } else { raw };
    Ok(MapParams::Affine {
        slope,
        intercept: my - slope * mx,
        clamped,
    })
}

/// Pool-adjacent-violators fit of distance on proxy, non-decreasing.
pub fn fit_isotonic(pairs: &[(f64, f64)]) -> Result<MapParams> {
    let mut sorted = pairs.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    // collapse equal proxies first: (x, sum y, count)
    let mut blocks: Vec<(f64, f64, f64)> = Vec::new();
    for &(x, y) in &sorted {
        match blocks.last_mut() {
            Some(b) if b.0 == x => {
                b.1 += y;
                b.2 += 1.0;
            }
            _ => blocks.push((x, y, 1.0)),
        }
    }
    if blocks.len() < 2 {
        return Err(Error::InvalidArgument(
            "distance map needs at least 2 distinct proxy values".into(),
        ));
    }
    // each pooled block: (first x index, last x index, sum y, weight)
    let mut pooled: Vec<(usize, usize, f64, f64)> = Vec::new();
    for (idx, &(_, sy, w)) in blocks.iter().enumerate() {
        pooled.push((idx, idx, sy, w));
        while pooled.len() >= 2 {
            let b = pooled[pooled.len() - 1];
            let a = pooled[pooled.len() - 2];
            if a.2 / a.3 <= b.2 / b.3 {
                break;
            }
            pooled.pop();
            let top = pooled.last_mut().expect("two blocks");
            *top = (a.0, b.1, a.2 + b.2, a.3 + b.3);
        }
    }
    let mut fitted = vec![0.0; blocks.len()];
    for &(lo, hi, sy, w) in &pooled {
        for f in &mut fitted[lo..=hi] {
            *f = sy / w;
        }
    }
    Ok(MapParams::Isotonic {
        proxies: blocks.iter().map(|b| b.0).collect(),
        distances: fitted,
    })
}

/// Fits the proxy→distance map on anchor pairs. `proxies[r][i]` is anchor
/// `i`'s score under reference `r`; `anchor_dists` holds the reduced-space
/// distances between anchors. Self pairs (distance 0) are included.
pub fn fit_distance_map(
    proxies: &[Vec<f64>],
    anchor_dists: &DMatrix<f64>,
    kind: MapKind,
    scope: MapScope,
) -> Result<DistanceMap> {
    let n = anchor_dists.nrows();
    if proxies.len() != n || proxies.iter().any(|p| p.len() < n) {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: proxies.len(),
        });
    }
    let fit = |pairs: &[(f64, f64)]| match kind {
        MapKind::Affine => fit_affine(pairs),
        MapKind::Isotonic => fit_isotonic(pairs),
    };
    let pairs_for = |r: usize| -> Vec<(f64, f64)> { (0..n).map(|i| (proxies[r][i], anchor_dists[(r, i)])).collect() };
    let params = match scope {
        MapScope::Global => {
            let pooled: Vec<(f64, f64)> = (0..n).flat_map(pairs_for).collect();
            vec![fit(&pooled)?]
        }
        MapScope::PerReference => (0..n).map(|r| fit(&pairs_for(r))).collect::<Result<_>>()?,
    };
    Ok(DistanceMap { scope, params })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizationEstimate {
    pub coords: Vec<f64>,
    /// Unfolding objective at `coords`.
    pub residual: f64,
    pub restarts_used: usize,
    /// Fewer than `dims + 1` anchors, or anchors not affinely spanning the
    /// space: mirror-image solutions may fit equally well.
    pub ambiguous: bool,
    /// Final objective reached from each start, in start order.
    pub start_residuals: Vec<f64>,
}

/// `Σ_m (‖x − C_m‖ − d̂_m)²`.
pub fn unfolding_objective(anchors: &[Vec<f64>], est: &[f64], x: &[f64]) -> f64 {
    anchors
        .iter()
        .zip(est)
        .map(|(c, &d)| (euclidean(x, c) - d).powi(2))
        .sum()
}

fn affinely_spanning(anchors: &[Vec<f64>], dims: usize) -> bool {
    if anchors.len() < dims + 1 {
        return false;
    }
    let base = &anchors[0];
    let m = DMatrix::from_fn(anchors.len() - 1, dims, |r, c| anchors[r + 1][c] - base[c]);
    let sv = m.singular_values();
    let top = sv.iter().copied().fold(0.0, f64::max);
    top > 0.0 && sv.iter().filter(|&&s| s > 1e-9 * top).count() >= dims
}

/// Linearised multilateration: subtracting the first anchor's circle equation
/// from the others leaves a linear least-squares problem in `x`. Exact for
/// exact distances; `None` when the anchors do not span the space.
fn linear_start(pts: &[Vec<f64>], est: &[f64]) -> Option<Vec<f64>> {
    let dims = pts[0].len();
    if !affinely_spanning(pts, dims) {
        return None;
    }
    let (c0, d0) = (&pts[0], est[0]);
    let n0: f64 = c0.iter().map(|v| v * v).sum();
    let a = DMatrix::from_fn(pts.len() - 1, dims, |r, c| 2.0 * (pts[r + 1][c] - c0[c]));
    let b = nalgebra::DVector::from_fn(pts.len() - 1, |r, _| {
        let nr: f64 = pts[r + 1].iter().map(|v| v * v).sum();
        nr - n0 - est[r + 1].powi(2) + d0 * d0
    });
    let x = a.svd(true, true).solve(&b, 1e-12).ok()?;
    x.iter().all(|v| v.is_finite()).then(|| x.iter().copied().collect())
}

/// Multi-start local minimisation of the unfolding objective. Starts are every
/// anchor, the anchor centroid, the linearised multilateration solution when
/// the anchors span the space, then random points in the anchors' bounding
/// box until `restarts` starts are used. Anchors are processed in
/// lexicographic order, so their input order does not matter.
pub fn unfold(anchors: &DMatrix<f64>, est_dists: &[f64], restarts: usize, seed: u64) -> Result<LocalizationEstimate> {
    let k = anchors.nrows();
    let dims = anchors.ncols();
    if k == 0 || dims == 0 {
        return Err(Error::InvalidArgument("unfolding needs at least one anchor and one dimension".into()));
    }
    if est_dists.len() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            actual: est_dists.len(),
        });
    }
    if est_dists.iter().any(|&d| !(d >= 0.0) || !d.is_finite()) {
        return Err(Error::InvalidArgument("estimated distances must be finite and ≥ 0".into()));
    }
    let mut pairs: Vec<(Vec<f64>, f64)> = (0..k)
        .map(|i| (anchors.row(i).iter().copied().collect(), est_dists[i]))
        .collect();
    pairs.sort_by(|a, b| {
        a.0.iter()
            .zip(&b.0)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.1.total_cmp(&b.1))
    });
    let pts: Vec<Vec<f64>> = pairs.iter().map(|p| p.0.clone()).collect();
    let est: Vec<f64> = pairs.iter().map(|p| p.1).collect();

    let lo: Vec<f64> = (0..dims).map(|c| pts.iter().map(|p| p[c]).fold(f64::INFINITY, f64::min)).collect();
    let hi: Vec<f64> = (0..dims).map(|c| pts.iter().map(|p| p[c]).fold(f64::NEG_INFINITY, f64::max)).collect();
    let diameter = lo.iter().zip(&hi).map(|(a, b)| b - a).fold(0.0, f64::max);
    let scale = [diameter, est.iter().copied().fold(0.0, f64::max), 1e-6]
        .into_iter()
        .fold(0.0, f64::max);

    let mut starts: Vec<Vec<f64>> = pts.clone();
    starts.push((0..dims).map(|c| pts.iter().map(|p| p[c]).sum::<f64>() / k as f64).collect());
    starts.extend(linear_start(&pts, &est));
    let mut rng = rng_from(seed);
    while starts.len() < restarts {
        starts.push((0..dims).map(|c| lo[c] + (hi[c] - lo[c]) * rng.random::<f64>()).collect());
    }

    let objective = |x: &[f64]| unfolding_objective(&pts, &est, x);
    let coarse = NelderMead {
        step: 0.1 * scale,
        x_tol: 1e-12 * scale,
        ..Default::default()
    };
    let fine = NelderMead {
        step: 1e-3 * scale,
        ..coarse
    };
    let results: Vec<(Vec<f64>, f64)> = starts
        .iter()
        .map(|s| {
            let m = coarse.minimize(objective, s);
            let m2 = fine.minimize(objective, &m.x);
            if m2.value <= m.value {
                (m2.x, m2.value)
            } else {
                (m.x, m.value)
            }
        })
        .collect();
    let best = (0..results.len())
        .min_by(|&a, &b| results[a].1.total_cmp(&results[b].1).then(a.cmp(&b)))
        .expect("at least one start");
    Ok(LocalizationEstimate {
        coords: results[best].0.clone(),
        residual: results[best].1.max(0.0),
        restarts_used: starts.len(),
        ambiguous: !affinely_spanning(&pts, dims),
        start_residuals: results.iter().map(|r| r.1).collect(),
    })
}

/// Everything computed for one localisation, for debugging.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizationTrace {
    pub ordinal: OrdinalData,
    /// `proxies[r]` over all entities, target last.
    pub proxies: Vec<Vec<f64>>,
    pub map: DistanceMap,
    pub estimated_distances: Vec<f64>,
    pub estimate: LocalizationEstimate,
}

impl LocalizationTrace {
    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

pub fn anchor_distances(anchors: &DMatrix<f64>) -> DMatrix<f64> {
    let rows: Vec<Vec<f64>> = anchors.row_iter().map(|r| r.iter().copied().collect()).collect();
    DMatrix::from_fn(rows.len(), rows.len(), |i, j| euclidean(&rows[i], &rows[j]))
}

/// Full chain: comparisons, proxies, distance map, unfolding. Row `i` of
/// `anchors` belongs to `d.user_order[i]`.
pub fn localize_traced(
    d: &CrossDistanceMatrix,
    anchors: &DMatrix<f64>,
    cfg: &UnlocConfig,
    seed: u64,
) -> Result<LocalizationTrace> {
    let n = d.n_known();
    if anchors.nrows() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: anchors.nrows(),
        });
    }
    let ordinal = ordinal_comparisons(d, cfg.tie_tol)?;
    let proxies: Vec<Vec<f64>> = (0..n).map(|r| rank_aggregate(&ordinal, r)).collect();
    let map = fit_distance_map(&proxies, &anchor_distances(anchors), cfg.map_kind, cfg.map_scope)?;
    let estimated_distances: Vec<f64> = (0..n).map(|r| map.apply(r, proxies[r][n])).collect();
    let estimate = unfold(anchors, &estimated_distances, cfg.restarts, seed)?;
    Ok(LocalizationTrace {
        ordinal,
        proxies,
        map,
        estimated_distances,
        estimate,
    })
}

pub fn localize(d: &CrossDistanceMatrix, anchors: &DMatrix<f64>, cfg: &UnlocConfig, seed: u64) -> Result<LocalizationEstimate> {
    localize_traced(d, anchors, cfg, seed).map(|t| t.estimate)
}
