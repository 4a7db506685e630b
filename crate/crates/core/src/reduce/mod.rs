//! Dimensionality reduction: PCA, RBF kernel PCA, and t-SNE.

pub mod kpca;
pub mod pca;
pub mod tsne;

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use kpca::{kpca_fit, median_gamma, KpcaModel};
pub use pca::{pca_fit, PcaModel};
pub use tsne::{tsne_embed, TsneConfig, TsneOutput};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReducerKind {
    Pca,
    Kpca,
    Tsne,
}

impl ReducerKind {
    pub fn name(self) -> &'static str {
        match self {
            ReducerKind::Pca => "pca",
            ReducerKind::Kpca => "kpca",
            ReducerKind::Tsne => "tsne",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReducerConfig {
    pub kind: ReducerKind,
    pub out_dims: usize,
    /// RBF width; `None` selects the median heuristic.
    pub gamma: Option<f64>,
    pub tsne: TsneConfig,
}

impl Default for ReducerConfig {
    fn default() -> Self {
        Self {
            kind: ReducerKind::Pca,
            out_dims: 2,
            gamma: None,
            tsne: TsneConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TsneModel {
    pub config: TsneConfig,
    pub seed: u64,
    pub kl_initial: f64,
    pub kl_final: f64,
    pub embedding: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ReducerModel {
    Pca(PcaModel),
    Kpca(KpcaModel),
    Tsne(TsneModel),
}

impl ReducerModel {
    pub fn kind(&self) -> ReducerKind {
        match self {
            ReducerModel::Pca(_) => ReducerKind::Pca,
            ReducerModel::Kpca(_) => ReducerKind::Kpca,
            ReducerModel::Tsne(_) => ReducerKind::Tsne,
        }
    }

    pub fn out_dims(&self) -> usize {
        match self {
            ReducerModel::Pca(p) => p.out_dims(),
            ReducerModel::Kpca(k) => k.out_dims(),
            ReducerModel::Tsne(t) => t.embedding.ncols(),
        }
    }

    /// Out-of-sample projection. t-SNE learns no mapping and returns an error;
    /// re-embed jointly instead.
    pub fn apply(&self, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        match self {
            ReducerModel::Pca(p) => p.apply(m),
            ReducerModel::Kpca(k) => k.apply(m),
            ReducerModel::Tsne(_) => Err(Error::InvalidArgument(
                "t-SNE has no out-of-sample mapping; embed training and new rows jointly".into(),
            )),
        }
    }
}

/// Coordinates in the reduced space; `ids[i]` names row `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReducedFeatures {
    pub coords: DMatrix<f64>,
    pub ids: Vec<String>,
}

impl ReducedFeatures {
    pub fn new(coords: DMatrix<f64>, ids: Vec<String>) -> Result<Self> {
        if coords.nrows() != ids.len() {
            return Err(Error::DimensionMismatch {
                expected: ids.len(),
                actual: coords.nrows(),
            });
        }
        if !coords.iter().all(|v| v.is_finite()) {
            return Err(Error::Numerical("non-finite reduced coordinates".into()));
        }
        Ok(Self { coords, ids })
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("id");
        for d in 1..=self.coords.ncols() {
            out.push_str(&format!(",dim{d}"));
        }
        out.push('\n');
        for (i, id) in self.ids.iter().enumerate() {
            out.push_str(id);
            for d in 0..self.coords.ncols() {
                out.push_str(&format!(",{}", self.coords[(i, d)]));
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv_string()).map_err(|e| Error::io(path, e))
    }
}

/// Fits the configured reducer on `m` and returns the model with the training
/// coordinates. t-SNE perplexity is clamped to `(n − 1) / 3`.
pub fn fit_reducer(cfg: &ReducerConfig, m: &DMatrix<f64>, seed: u64) -> Result<(ReducerModel, DMatrix<f64>)> {
    match cfg.kind {
        ReducerKind::Pca => {
            let p = pca_fit(m, cfg.out_dims)?;
            let coords = p.apply(m)?;
            Ok((ReducerModel::Pca(p), coords))
        }
        ReducerKind::Kpca => {
            let gamma = cfg.gamma.unwrap_or_else(|| median_gamma(m));
            let k = kpca_fit(m, cfg.out_dims, gamma)?;
            let coords = k.training_embedding();
            Ok((ReducerModel::Kpca(k), coords))
        }
        ReducerKind::Tsne => {
            let out = embed_tsne(cfg, m, seed)?;
            let coords = out.coords.clone();
            Ok((
                ReducerModel::Tsne(TsneModel {
                    config: TsneConfig {
                        perplexity: out.perplexity,
                        learning_rate: Some(out.learning_rate),
                        ..tsne_config(cfg)
                    },
                    seed,
                    kl_initial: out.kl_initial,
                    kl_final: out.kl_final,
                    embedding: out.coords,
                }),
                coords,
            ))
        }
    }
}

fn tsne_config(cfg: &ReducerConfig) -> TsneConfig {
    TsneConfig {
        out_dims: cfg.out_dims.clamp(2, 3),
        ..cfg.tsne
    }
}

/// t-SNE with the configured settings and perplexity clamped for `m`'s size.
pub fn embed_tsne(cfg: &ReducerConfig, m: &DMatrix<f64>, seed: u64) -> Result<TsneOutput> {
    let mut tc = tsne_config(cfg);
    tc.perplexity = tc.clamped_perplexity(m.nrows());
    tsne_embed(m, &tc, seed)
}
