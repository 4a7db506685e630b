//! Experiment output: per-trial CSV, aggregate JSON, and a text table.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};

use super::experiment::{CellAggregate, ExperimentReport, TableMetric};

#[derive(Serialize)]
struct ConfigEcho<'a> {
    seed: u64,
    grid: &'a super::ExperimentGrid,
}

impl ExperimentReport {
    fn config_line(&self) -> Result<String> {
        Ok(serde_json::to_string(&ConfigEcho {
            seed: self.seed,
            grid: &self.grid,
        })?)
    }

    /// One row per trial and classifier, preceded by a `# config:` line.
    pub fn to_csv_string(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.records {
            w.serialize(r)?;
        }
        let body = w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let body = String::from_utf8(body).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        Ok(format!("# config: {}\n{}", self.config_line()?, body))
    }

    pub fn to_json_string(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Out<'a> {
            seed: u64,
            grid: &'a super::ExperimentGrid,
            skipped: usize,
            aggregates: &'a [CellAggregate],
        }
        Ok(serde_json::to_string_pretty(&Out {
            seed: self.seed,
            grid: &self.grid,
            skipped: self.skipped(),
            aggregates: &self.aggregates,
        })?)
    }

    /// Rows are (users, sample size), grouped by clustering method for the
    /// cluster-count metric; columns are the remaining method choices that
    /// vary across the grid.
    pub fn render_table(&self) -> String {
        let g = &self.grid;
        let cluster_rows = g.metric == TableMetric::ClusterCount && g.cluster_methods.len() > 1;
        let vary_cluster = g.cluster_methods.len() > 1 && !cluster_rows;
        let vary_q = g.use_quantile.len() > 1;
        let vary_red = g.reducers.len() > 1;
        let vary_cls = g.classifiers.len() > 1;
        let vary_mode = g.session_modes.len() > 1;
        let col_key = |a: &CellAggregate| {
            let mut parts = Vec::new();
            if vary_cluster {
                parts.push(a.cluster.name().to_string());
            }
            if vary_red {
                parts.push(a.reducer.name().to_string());
            }
            if vary_cls {
                parts.push(a.classifier.map_or("-", |c| c.name()).to_string());
            }
            if vary_q {
                parts.push(if a.quantile { "Q" } else { "raw" }.to_string());
            }
            if vary_mode {
                parts.push(format!("{:?}", a.session_mode).to_lowercase());
            }
            if parts.is_empty() {
                parts.push(match g.metric {
                    TableMetric::Accuracy => "accuracy".into(),
                    TableMetric::ClusterCount => "K | ARI".into(),
                });
            }
            parts.join("/")
        };
        let row_key = |a: &CellAggregate| {
            let mut r = String::new();
            if cluster_rows {
                r.push_str(&format!("{:<7} ", a.cluster.name()));
            }
            r.push_str(&format!("users {:>2}  n {:<6}", a.n_users, a.sample_size));
            if g.reducers.iter().any(|k| *k != crate::reduce::ReducerKind::Tsne) && matches!(g.dims, super::DimsRule::ByUsers(_)) {
                r.push_str(&format!(" dims {}", g.dims.dims_for(a.n_users)));
            }
            if !vary_mode {
                r.push_str(&format!(" {:?}", a.session_mode).to_lowercase());
            }
            r
        };
        let mut cols: Vec<String> = Vec::new();
        let mut rows: Vec<String> = Vec::new();
        for a in &self.aggregates {
            let c = col_key(a);
            if !cols.contains(&c) {
                cols.push(c);
            }
            let r = row_key(a);
            if !rows.contains(&r) {
                rows.push(r);
            }
        }
        let cell = |a: &CellAggregate| -> String {
            if a.trials_run == 0 {
                return "skipped".into();
            }
            match g.metric {
                TableMetric::Accuracy => match a.mean_accuracy {
                    Some(m) => format!("{:.2}", 100.0 * m),
                    None => "-".into(),
                },
                TableMetric::ClusterCount => format!(
                    "{} | {:.2}",
                    a.modal_k.map_or("-".into(), |k| k.to_string()),
                    a.mean_ari.unwrap_or(f64::NAN)
                ),
            }
        };
        let mut grid_cells = vec![vec![String::from("-"); cols.len()]; rows.len()];
        for a in &self.aggregates {
            let ri = rows.iter().position(|r| *r == row_key(a)).expect("row present");
            let ci = cols.iter().position(|c| *c == col_key(a)).expect("column present");
            grid_cells[ri][ci] = cell(a);
        }
        let row_w = rows.iter().map(|r| r.len()).max().unwrap_or(0);
        let widths: Vec<usize> = cols
            .iter()
            .enumerate()
            .map(|(ci, c)| grid_cells.iter().map(|r| r[ci].chars().count()).max().unwrap_or(0).max(c.chars().count()))
            .collect();

        let mut out = format!("{} (seed {}, {} trials per cell", g.name, self.seed, g.trials);
        if g.reducers.contains(&crate::reduce::ReducerKind::Tsne) {
            out.push_str("; t-SNE embeds in 2 dimensions");
        }
        out.push_str(")\n");
        out.push_str(&format!("{:row_w$}", ""));
        for (c, w) in cols.iter().zip(&widths) {
            out.push_str(&format!("  {c:>w$}"));
        }
        out.push('\n');
        for (r, cells) in rows.iter().zip(&grid_cells) {
            out.push_str(&format!("{r:row_w$}"));
            for (v, w) in cells.iter().zip(&widths) {
                out.push_str(&format!("  {v:>w$}"));
            }
            out.push('\n');
        }
        let skipped = self.skipped();
        if skipped > 0 {
            out.push_str(&format!("{skipped} trial records skipped\n"));
        }
        out
    }

    /// Writes `<stem>_trials.csv`, `<stem>.json`, and `<stem>.txt` into `dir`.
    pub fn write_all(&self, dir: impl AsRef<Path>, stem: &str) -> Result<Vec<PathBuf>> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let table = format!("# config: {}\n{}", self.config_line()?, self.render_table());
        let files = [
            (dir.join(format!("{stem}_trials.csv")), self.to_csv_string()?),
            (dir.join(format!("{stem}.json")), self.to_json_string()?),
            (dir.join(format!("{stem}.txt")), table),
        ];
        for (p, body) in &files {
            fs::write(p, body).map_err(|e| Error::io(p, e))?;
        }
        Ok(files.into_iter().map(|(p, _)| p).collect())
    }
}
