use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{center_rows, column_means, sym_eigen_desc};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: DVector<f64>,
    /// `out_dims × features`; rows are orthonormal principal axes.
    pub components: DMatrix<f64>,
    /// Retained covariance eigenvalues, descending.
    pub eigenvalues: Vec<f64>,
    /// Every covariance eigenvalue, descending.
    pub all_eigenvalues: Vec<f64>,
}

/// Principal axes of the sample covariance (n − 1 denominator).
pub fn pca_fit(m: &DMatrix<f64>, out_dims: usize) -> Result<PcaModel> {
    let (n, d) = m.shape();
    if n < 2 {
        return Err(Error::InvalidArgument(format!("PCA needs at least 2 rows, got {n}")));
    }
    if out_dims == 0 || out_dims > d {
        return Err(Error::InvalidArgument(format!(
            "PCA output dimension {out_dims} must lie in 1..={d}"
        )));
    }
    let mean = column_means(m);
    let centered = center_rows(m, &mean);
    let cov = centered.transpose() * &centered / (n - 1) as f64;
    let (values, vectors) = sym_eigen_desc(&cov);
    let components = vectors.columns(0, out_dims).transpose();
    Ok(PcaModel {
        mean,
        components,
        eigenvalues: values[..out_dims].to_vec(),
        all_eigenvalues: values,
    })
}

impl PcaModel {
    pub fn feature_count(&self) -> usize {
        self.mean.len()
    }

    pub fn out_dims(&self) -> usize {
        self.components.nrows()
    }

    /// `(m − mean) · componentsᵀ`.
    pub fn apply(&self, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if m.ncols() != self.feature_count() {
            return Err(Error::DimensionMismatch {
                expected: self.feature_count(),
                actual: m.ncols(),
            });
        }
        Ok(center_rows(m, &self.mean) * self.components.transpose())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::euclidean;
    use crate::linalg::row_vec;

    #[test]
    fn three_point_closed_form() {
        // {(0,0),(1,0),(0,1)}: covariance [[1/3, -1/6], [-1/6, 1/3]]
        // eigenvalues 1/3 ± 1/6 with eigenvectors (1,-1)/√2 and (1,1)/√2.
        let m = DMatrix::from_row_slice(3, 2, &[0.0, 0.0, 1.0, 0.0, 0.0, 1.0]);
        let (a, b, c): (f64, f64, f64) = (1.0 / 3.0, -1.0 / 6.0, 1.0 / 3.0);
        let tr = a + c;
        let det = a * c - b * b;
        let disc = (tr * tr / 4.0 - det).sqrt();
        let (l1, l2) = (tr / 2.0 + disc, tr / 2.0 - disc);
        let p = pca_fit(&m, 2).unwrap();
        assert!((p.eigenvalues[0] - l1).abs() < 1e-12);
        assert!((p.eigenvalues[1] - l2).abs() < 1e-12);
        // eigenvector for l1 solves (a − l1) x + b y = 0
        let v1 = (b, l1 - a);
        let norm = (v1.0 * v1.0 + v1.1 * v1.1).sqrt();
        let (ex, ey) = (v1.0 / norm, v1.1 / norm);
        let dot = p.components[(0, 0)] * ex + p.components[(0, 1)] * ey;
        assert!((dot.abs() - 1.0).abs() < 1e-12);
        // sign convention: largest-magnitude entry positive
        let row0 = [p.components[(0, 0)], p.components[(0, 1)]];
        let big = if row0[0].abs() >= row0[1].abs() - 1e-12 { row0[0] } else { row0[1] };
        assert!(big > 0.0);
    }

    #[test]
    fn rank_one_line_preserves_distances() {
        let xs = [-2.0, -0.5, 0.0, 1.0, 3.5, 4.0];
        let m = DMatrix::from_fn(xs.len(), 2, |r, c| if c == 0 { xs[r] } else { 2.0 * xs[r] });
        let p = pca_fit(&m, 1).unwrap();
        let s = p.apply(&m).unwrap();
        for i in 0..xs.len() {
            for j in 0..xs.len() {
                let orig = euclidean(&row_vec(&m, i), &row_vec(&m, j));
                let proj = (s[(i, 0)] - s[(j, 0)]).abs();
                assert!((orig - proj).abs() <= 1e-9 * orig.max(1.0));
            }
        }
    }

    #[test]
    fn full_basis_is_isometry() {
        let m = DMatrix::from_row_slice(4, 3, &[1.0, 2.0, 0.5, -1.0, 0.0, 2.0, 3.0, 1.0, 1.0, 0.0, -2.0, 4.0]);
        let p = pca_fit(&m, 3).unwrap();
        let s = p.apply(&m).unwrap();
        let recon = &s * &p.components;
        let centered = center_rows(&m, &p.mean);
        assert!((recon - centered).abs().max() <= 1e-9);
    }

    #[test]
    fn apply_mean_goes_to_origin() {
        let m = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 3.0, 5.0, 2.0, 0.0]);
        let p = pca_fit(&m, 1).unwrap();
        let mean_row = DMatrix::from_row_slice(1, 2, p.mean.as_slice());
        assert!(p.apply(&mean_row).unwrap()[(0, 0)].abs() < 1e-12);
        assert_eq!(p.apply(&mean_row).unwrap().shape(), (1, 1));
        assert!(pca_fit(&m, 3).is_err());
        assert!(p.apply(&DMatrix::zeros(1, 3)).is_err());
    }
}
