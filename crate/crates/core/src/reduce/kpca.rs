use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::sym_eigen_desc;
use crate::stats::{median, squared_euclidean};

/// Eigenvalues at or below `EIG_TOL_PER_ROW · n` count as zero.
const EIG_TOL_PER_ROW: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KpcaModel {
    pub train: DMatrix<f64>,
    pub gamma: f64,
    /// Retained eigenvalues of the centered kernel matrix, descending.
    pub eigenvalues: Vec<f64>,
    /// Unit eigenvectors of the centered kernel matrix (`n × out_dims`).
    pub eigenvectors: DMatrix<f64>,
    /// Column means of the uncentered training kernel.
    pub kernel_col_means: DVector<f64>,
    pub kernel_mean: f64,
}

pub fn rbf_kernel(a: &DMatrix<f64>, b: &DMatrix<f64>, gamma: f64) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), b.nrows(), |i, j| {
        let d2: f64 = (0..a.ncols()).map(|c| (a[(i, c)] - b[(j, c)]).powi(2)).sum();
        (-gamma * d2).exp()
    })
}

/// `1 / median pairwise squared distance`; falls back to 1 when the median is zero.
pub fn median_gamma(m: &DMatrix<f64>) -> f64 {
    let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
    let mut d2 = Vec::with_capacity(rows.len() * rows.len() / 2);
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            d2.push(squared_euclidean(&rows[i], &rows[j]));
        }
    }
    if d2.is_empty() {
        return 1.0;
    }
    let med = median(&d2);
    if med > 0.0 {
        1.0 / med
    } else {
        1.0
    }
}

/// Double-centres a square kernel matrix.
pub fn center_kernel(k: &DMatrix<f64>) -> DMatrix<f64> {
    let n = k.nrows() as f64;
    let col: Vec<f64> = k.column_iter().map(|c| c.sum() / n).collect();
    let row: Vec<f64> = k.row_iter().map(|r| r.sum() / n).collect();
    let all = col.iter().sum::<f64>() / n;
    DMatrix::from_fn(k.nrows(), k.ncols(), |i, j| k[(i, j)] - row[i] - col[j] + all)
}

pub fn kpca_fit(m: &DMatrix<f64>, out_dims: usize, gamma: f64) -> Result<KpcaModel> {
    let n = m.nrows();
    if n < 2 {
        return Err(Error::InvalidArgument(format!("kernel PCA needs at least 2 rows, got {n}")));
    }
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::InvalidArgument(format!("RBF gamma must be positive, got {gamma}")));
    }
    if out_dims == 0 {
        return Err(Error::InvalidArgument("kernel PCA output dimension must be ≥ 1".into()));
    }
    let k = rbf_kernel(m, m, gamma);
    let kc = center_kernel(&k);
    let (values, vectors) = sym_eigen_desc(&kc);
    let tol = EIG_TOL_PER_ROW * n as f64;
    let usable = values.iter().take_while(|&&v| v > tol).count();
    if usable < out_dims {
        return Err(Error::InsufficientRank {
            requested: out_dims,
            usable,
        });
    }
    let col_means = DVector::from_iterator(n, k.column_iter().map(|c| c.sum() / n as f64));
    let kernel_mean = col_means.sum() / n as f64;
    Ok(KpcaModel {
        train: m.clone(),
        gamma,
        eigenvalues: values[..out_dims].to_vec(),
        eigenvectors: vectors.columns(0, out_dims).into_owned(),
        kernel_col_means: col_means,
        kernel_mean,
    })
}

impl KpcaModel {
    pub fn out_dims(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Training-set embedding: eigenvectors scaled by √eigenvalue.
    pub fn training_embedding(&self) -> DMatrix<f64> {
        let mut e = self.eigenvectors.clone();
        for (j, &l) in self.eigenvalues.iter().enumerate() {
            e.column_mut(j).scale_mut(l.sqrt());
        }
        e
    }

    /// Projects new rows through the centered cross-kernel against the
    /// training rows.
    pub fn apply(&self, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if m.ncols() != self.train.ncols() {
            return Err(Error::DimensionMismatch {
                expected: self.train.ncols(),
                actual: m.ncols(),
            });
        }
        let n = self.train.nrows() as f64;
        let k = rbf_kernel(m, &self.train, self.gamma);
        let row_means: Vec<f64> = k.row_iter().map(|r| r.sum() / n).collect();
        let kc = DMatrix::from_fn(k.nrows(), k.ncols(), |i, j| {
            k[(i, j)] - self.kernel_col_means[j] - row_means[i] + self.kernel_mean
        });
        let mut alphas = self.eigenvectors.clone();
        for (j, &l) in self.eigenvalues.iter().enumerate() {
            alphas.column_mut(j).scale_mut(1.0 / l.sqrt());
        }
        Ok(kc * alphas)
    }
}
