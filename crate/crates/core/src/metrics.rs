//! User templates, the scaled Manhattan score, cross-distance matrices, and
//! evaluation metrics (adjusted Rand index, identification accuracy).

use std::collections::HashMap;
use std::hash::Hash;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floor applied to per-feature mean absolute deviations.
pub const MAD_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserTemplate {
    pub user_id: String,
    pub mean: Vec<f64>,
    /// Mean absolute deviation per feature, floored at [`MAD_FLOOR`].
    pub mad: Vec<f64>,
    pub n_samples: usize,
}

impl UserTemplate {
    pub fn feature_count(&self) -> usize {
        self.mean.len()
    }
}

pub fn build_template(user_id: impl Into<String>, samples: &[Vec<f64>]) -> Result<UserTemplate> {
    let user_id = user_id.into();
    let first = samples.first().ok_or_else(|| {
        Error::InvalidArgument(format!("cannot build a template for {user_id} from zero samples"))
    })?;
    let width = first.len();
    if let Some(bad) = samples.iter().find(|s| s.len() != width) {
        return Err(Error::DimensionMismatch {
            expected: width,
            actual: bad.len(),
        });
    }
    let n = samples.len() as f64;
    let mean: Vec<f64> = (0..width)
        .map(|f| samples.iter().map(|s| s[f]).sum::<f64>() / n)
        .collect();
    let mad: Vec<f64> = (0..width)
        .map(|f| {
            let d = samples.iter().map(|s| (s[f] - mean[f]).abs()).sum::<f64>() / n;
            d.max(MAD_FLOOR)
        })
        .collect();
    Ok(UserTemplate {
        user_id,
        mean,
        mad,
        n_samples: samples.len(),
    })
}

/// `(1/l) Σ |f_i − m_i| / σ_i` over the `l` features.
pub fn scaled_manhattan(t: &UserTemplate, f: &[f64]) -> Result<f64> {
    if f.len() != t.feature_count() {
        return Err(Error::DimensionMismatch {
            expected: t.feature_count(),
            actual: f.len(),
        });
    }
    let sum: f64 = f
        .iter()
        .zip(&t.mean)
        .zip(&t.mad)
        .map(|((x, m), s)| (x - m).abs() / s)
        .sum();
    Ok(sum / f.len() as f64)
}

/// Training samples belonging to one known user (or cluster).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserSamples {
    pub user_id: String,
    pub rows: Vec<Vec<f64>>,
}

/// Scores between known users (`known_known[(l, m)]`: user `l`'s training
/// samples scored against template `m`, averaged) and from the test sample to
/// each template (`known_test[m]`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossDistanceMatrix {
    pub known_known: DMatrix<f64>,
    pub known_test: DVector<f64>,
    pub user_order: Vec<String>,
}

/// The known-user block alone; it does not depend on the test sample.
pub fn known_known_scores(templates: &[UserTemplate], train: &[UserSamples]) -> Result<DMatrix<f64>> {
    let by_user: HashMap<&str, &UserSamples> =
        train.iter().map(|g| (g.user_id.as_str(), g)).collect();
    for g in train {
        if !templates.iter().any(|t| t.user_id == g.user_id) {
            return Err(Error::InvalidArgument(format!(
                "user {} has training samples but no template",
                g.user_id
            )));
        }
    }
    let n = templates.len();
    let mut d = DMatrix::zeros(n, n);
    for (l, tl) in templates.iter().enumerate() {
        let group = by_user.get(tl.user_id.as_str()).ok_or_else(|| {
            Error::InvalidArgument(format!("template {} has no training samples", tl.user_id))
        })?;
        if group.rows.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "template {} has no training samples",
                tl.user_id
            )));
        }
        for (m, tm) in templates.iter().enumerate() {
            let mut acc = 0.0;
            for row in &group.rows {
                acc += scaled_manhattan(tm, row)?;
            }
            d[(l, m)] = acc / group.rows.len() as f64;
        }
    }
    Ok(d)
}

pub fn test_scores(templates: &[UserTemplate], test_sample: &[f64]) -> Result<DVector<f64>> {
    let v = templates
        .iter()
        .map(|t| scaled_manhattan(t, test_sample))
        .collect::<Result<Vec<_>>>()?;
    Ok(DVector::from_vec(v))
}

pub fn cross_distances(
    templates: &[UserTemplate],
    train: &[UserSamples],
    test_sample: &[f64],
) -> Result<CrossDistanceMatrix> {
    Ok(CrossDistanceMatrix {
        known_known: known_known_scores(templates, train)?,
        known_test: test_scores(templates, test_sample)?,
        user_order: templates.iter().map(|t| t.user_id.clone()).collect(),
    })
}

impl CrossDistanceMatrix {
    pub fn n_known(&self) -> usize {
        self.user_order.len()
    }

    /// CSV with user-id row and column headers and a final `test` column.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("user");
        for u in &self.user_order {
            out.push(',');
            out.push_str(u);
        }
        out.push_str(",test\n");
        for (l, u) in self.user_order.iter().enumerate() {
            out.push_str(u);
            for m in 0..self.n_known() {
                out.push_str(&format!(",{}", self.known_known[(l, m)]));
            }
            out.push_str(&format!(",{}\n", self.known_test[l]));
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv_string()).map_err(|e| Error::io(path, e))
    }
}

fn comb2(n: u64) -> i128 {
    let n = n as i128;
    n * (n - 1) / 2
}

fn encode<T: Hash + Eq>(labels: &[T]) -> (Vec<usize>, usize) {
    let mut ids: HashMap<&T, usize> = HashMap::new();
    let codes = labels
        .iter()
        .map(|l| {
            let next = ids.len();
            *ids.entry(l).or_insert(next)
        })
        .collect();
    (codes, ids.len())
}

/// Hubert–Arabie adjusted Rand index from the contingency table.
///
/// Evaluated in integer arithmetic up to the final division. Returns 1 when
/// both partitions are the same trivial partition (all singletons or one
/// block), where the chance-corrected ratio is 0/0.
pub fn adjusted_rand_index<A: Hash + Eq, B: Hash + Eq>(a: &[A], b: &[B]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    if a.len() < 2 {
        return Err(Error::InvalidArgument(
            "adjusted Rand index needs at least two labels".into(),
        ));
    }
    let (ca, ka) = encode(a);
    let (cb, kb) = encode(b);
    let mut table = vec![0u64; ka * kb];
    let mut rows = vec![0u64; ka];
    let mut cols = vec![0u64; kb];
    for (&i, &j) in ca.iter().zip(&cb) {
        table[i * kb + j] += 1;
        rows[i] += 1;
        cols[j] += 1;
    }
    let index: i128 = table.iter().map(|&n| comb2(n)).sum();
    let sa: i128 = rows.iter().map(|&n| comb2(n)).sum();
    let sb: i128 = cols.iter().map(|&n| comb2(n)).sum();
    let total = comb2(a.len() as u64);
    let num = 2 * (total * index - sa * sb);
    let den = total * (sa + sb) - 2 * sa * sb;
    if den == 0 {
        return Ok(1.0);
    }
    Ok(num as f64 / den as f64)
}

/// Fraction of positions where `pred` equals `truth`.
pub fn identification_accuracy<T: PartialEq>(pred: &[T], truth: &[T]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            expected: truth.len(),
            actual: pred.len(),
        });
    }
    if pred.is_empty() {
        return Err(Error::InvalidArgument("accuracy over zero predictions".into()));
    }
    let hits = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / pred.len() as f64)
}
