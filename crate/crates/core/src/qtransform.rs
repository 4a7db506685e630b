//! Per-feature quantile transform onto the uniform distribution.
//!
//! Each feature keeps `n_quantiles` knots `(value, probability)` taken at evenly
//! spaced probability levels of its training distribution. Applying the model
//! interpolates linearly between knots; runs of equal knot values resolve to the
//! midpoint of their probability range, so ties land on their midrank and a
//! constant feature maps to 0.5. Values outside the training range clamp to 0
//! or 1.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::quantile_sorted;

pub const DEFAULT_MAX_QUANTILES: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureKnots {
    /// Non-decreasing knot inputs.
    pub values: Vec<f64>,
    /// Strictly increasing probabilities from 0 to 1.
    pub probs: Vec<f64>,
}

impl FeatureKnots {
    pub fn transform(&self, x: f64) -> f64 {
        let v = &self.values;
        let last = v.len() - 1;
        if x < v[0] {
            return 0.0;
        }
        if x > v[last] {
            return 1.0;
        }
        0.5 * (self.interp_upper(x) + self.interp_lower(x))
    }

    /// Interpolation that resolves a run of equal knots to its last knot.
    fn interp_upper(&self, x: f64) -> f64 {
        let v = &self.values;
        // first index with value > x
        let hi = v.partition_point(|&k| k <= x);
        if hi == v.len() {
            return self.probs[v.len() - 1];
        }
        let lo = hi - 1;
        self.lerp(lo, hi, x)
    }

    /// Interpolation that resolves a run of equal knots to its first knot.
    fn interp_lower(&self, x: f64) -> f64 {
        let v = &self.values;
        // first index with value >= x
        let hi = v.partition_point(|&k| k < x);
        if hi == 0 {
            return self.probs[0];
        }
        if v[hi] == x {
            return self.probs[hi];
        }
        self.lerp(hi - 1, hi, x)
    }

    fn lerp(&self, lo: usize, hi: usize, x: f64) -> f64 {
        let (x0, x1) = (self.values[lo], self.values[hi]);
        let (p0, p1) = (self.probs[lo], self.probs[hi]);
        if x1 == x0 {
            return p1;
        }
        p0 + (p1 - p0) * (x - x0) / (x1 - x0)
    }

    /// Input value at probability `p`, by interpolating along the knots.
    pub fn value_at(&self, p: f64) -> f64 {
        let p = p.clamp(0.0, 1.0);
        let hi = self.probs.partition_point(|&q| q < p).min(self.probs.len() - 1);
        if hi == 0 || self.probs[hi] == p {
            return self.values[hi];
        }
        let lo = hi - 1;
        let t = (p - self.probs[lo]) / (self.probs[hi] - self.probs[lo]);
        self.values[lo] + t * (self.values[hi] - self.values[lo])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileModel {
    pub n_quantiles: usize,
    pub feature_count: usize,
    pub features: Vec<FeatureKnots>,
}

/// `min(1000, rows)`.
pub fn default_n_quantiles(rows: usize) -> usize {
    DEFAULT_MAX_QUANTILES.min(rows)
}

/// Fits one knot set per column of `train` (rows are samples).
pub fn fit_quantile(train: &DMatrix<f64>, n_quantiles: usize) -> Result<QuantileModel> {
    let rows = train.nrows();
    if rows < 2 {
        return Err(Error::InvalidArgument(format!(
            "quantile transform needs at least 2 training rows, got {rows}"
        )));
    }
    if n_quantiles < 2 {
        return Err(Error::InvalidArgument(format!(
            "n_quantiles must be at least 2, got {n_quantiles}"
        )));
    }
    let nq = if n_quantiles > rows {
        log::warn!("n_quantiles {n_quantiles} exceeds training rows {rows}; clamping");
        rows
    } else {
        n_quantiles
    };
    let probs: Vec<f64> = (0..nq).map(|i| i as f64 / (nq - 1) as f64).collect();
    let features = train
        .column_iter()
        .map(|col| {
            let mut sorted: Vec<f64> = col.iter().copied().collect();
            sorted.sort_by(f64::total_cmp);
            let mut values: Vec<f64> = probs.iter().map(|&p| quantile_sorted(&sorted, p)).collect();
            // Guard against rounding producing a tiny decrease between knots.
            for i in 1..values.len() {
                if values[i] < values[i - 1] {
                    values[i] = values[i - 1];
                }
            }
            FeatureKnots {
                values,
                probs: probs.clone(),
            }
        })
        .collect();
    Ok(QuantileModel {
        n_quantiles: nq,
        feature_count: train.ncols(),
        features,
    })
}

impl QuantileModel {
    pub fn apply(&self, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if m.ncols() != self.feature_count {
            return Err(Error::DimensionMismatch {
                expected: self.feature_count,
                actual: m.ncols(),
            });
        }
        Ok(DMatrix::from_fn(m.nrows(), m.ncols(), |r, c| {
            self.features[c].transform(m[(r, c)])
        }))
    }

    pub fn apply_row(&self, row: &[f64]) -> Result<Vec<f64>> {
        if row.len() != self.feature_count {
            return Err(Error::DimensionMismatch {
                expected: self.feature_count,
                actual: row.len(),
            });
        }
        Ok(row
            .iter()
            .zip(&self.features)
            .map(|(&x, k)| k.transform(x))
            .collect())
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Free-function form of [`QuantileModel::apply`].
pub fn apply_quantile(model: &QuantileModel, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    model.apply(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn column(values: &[f64]) -> DMatrix<f64> {
        DMatrix::from_column_slice(values.len(), 1, values)
    }

    /// One-sample Kolmogorov–Smirnov statistic against U(0, 1).
    fn ks_uniform(values: &[f64]) -> f64 {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len() as f64;
        v.iter()
            .enumerate()
            .map(|(i, &x)| {
                let lo = x - i as f64 / n;
                let hi = (i + 1) as f64 / n - x;
                lo.max(hi)
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn median_knot_of_one_to_hundred() {
        let vals: Vec<f64> = (1..=100).map(f64::from).collect();
        let m = fit_quantile(&column(&vals), 100).unwrap();
        assert!((m.features[0].value_at(0.5) - 50.5).abs() < 1e-9);
        let odd = fit_quantile(&column(&vals), 99).unwrap();
        assert_eq!(odd.features[0].probs[49], 0.5);
        assert!((odd.features[0].values[49] - 50.5).abs() < 1e-9);
    }

    #[test]
    fn constant_feature_maps_to_half() {
        let m = fit_quantile(&column(&[3.0; 10]), 10).unwrap();
        assert!(m.features[0].values.iter().all(|&v| v == 3.0));
        assert_eq!(m.features[0].transform(3.0), 0.5);
        assert_eq!(m.features[0].transform(2.0), 0.0);
        assert_eq!(m.features[0].transform(4.0), 1.0);
    }

    #[test]
    fn clamps_n_quantiles_to_rows() {
        let m = fit_quantile(&column(&[1.0, 2.0, 3.0]), 1000).unwrap();
        assert_eq!(m.n_quantiles, 3);
    }

    #[test]
    fn rejects_tiny_inputs() {
        assert!(fit_quantile(&column(&[1.0]), 10).is_err());
        assert!(fit_quantile(&column(&[1.0, 2.0]), 1).is_err());
    }

    #[test]
    fn boundaries_and_clamping() {
        let vals = [0.3, 0.1, 0.7, 0.2, 0.9, 0.5];
        let m = fit_quantile(&column(&vals), 6).unwrap();
        let k = &m.features[0];
        assert_eq!(k.transform(0.1), 0.0);
        assert_eq!(k.transform(0.9), 1.0);
        assert_eq!(k.transform(5.0), 1.0);
        assert_eq!(k.transform(-5.0), 0.0);
    }

    #[test]
    fn self_application_is_uniform() {
        // deterministic, skewed, distinct values
        let vals: Vec<f64> = (0..250).map(|i| ((i * 37 % 250) as f64 / 25.0).exp()).collect();
        let m = fit_quantile(&column(&vals), default_n_quantiles(vals.len())).unwrap();
        let t = m.apply(&column(&vals)).unwrap();
        let ks = ks_uniform(t.as_slice());
        assert!(ks <= 0.05, "KS = {ks}");
    }

    #[test]
    fn width_mismatch() {
        let m = fit_quantile(&DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]), 2).unwrap();
        assert!(matches!(
            m.apply(&column(&[1.0, 2.0])),
            Err(Error::DimensionMismatch { expected: 2, actual: 1 })
        ));
    }

    #[test]
    fn json_round_trip() {
        let m = fit_quantile(&DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 3.0, 4.0, 0.5, 7.0]), 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("q.json");
        m.save_json(&p).unwrap();
        assert_eq!(QuantileModel::load_json(&p).unwrap(), m);
    }

    proptest! {
        #[test]
        fn monotone_bounded_rank_preserving(
            train in prop::collection::vec(-50.0f64..50.0, 2..80),
            probes in prop::collection::vec(-80.0f64..80.0, 2..40),
            nq in 2usize..120,
        ) {
            let m = fit_quantile(&column(&train), nq).unwrap();
            let k = &m.features[0];
            let mut sorted = probes.clone();
            sorted.sort_by(f64::total_cmp);
            let mapped: Vec<f64> = sorted.iter().map(|&x| k.transform(x)).collect();
            for w in mapped.windows(2) {
                prop_assert!(w[0] <= w[1] + 1e-15);
            }
            prop_assert!(mapped.iter().all(|&y| (0.0..=1.0).contains(&y)));

            // exact rank preservation on training values when every row is a knot
            let full = fit_quantile(&column(&train), train.len()).unwrap();
            let mut distinct = train.clone();
            distinct.sort_by(f64::total_cmp);
            distinct.dedup();
            let images: Vec<f64> = distinct.iter().map(|&x| full.features[0].transform(x)).collect();
            for w in images.windows(2) {
                prop_assert!(w[0] < w[1]);
            }
        }

        #[test]
        fn deterministic_fit(train in prop::collection::vec(0.0f64..1.0, 2..50)) {
            let a = fit_quantile(&column(&train), 10).unwrap();
            let b = fit_quantile(&column(&train), 10).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
