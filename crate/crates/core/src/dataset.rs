//! Fixed-text keystroke datasets: loading, user selection, outlier filtering,
//! and train/test splitting.
//!
//! Two CSV dialects are supported. The CMU benchmark layout has a fixed
//! `subject,sessionIndex,rep` prefix followed by timing columns; MOBIKEY and
//! generic files carry an arbitrary header whose user, session, optional
//! repetition, and timing columns are named through a [`ColumnMap`].

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_from;
use crate::stats::{quantile_sorted, sorted_copy};

const CMU_PREFIX: [&str; 3] = ["subject", "sessionIndex", "rep"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeystrokeSample {
    pub user_id: String,
    pub session: u32,
    pub rep: u32,
    pub features: Vec<f64>,
}

impl KeystrokeSample {
    pub fn id(&self) -> String {
        format!("{}:{}:{}", self.user_id, self.session, self.rep)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Cmu,
    Mobikey,
    Generic,
}

/// Role → column-name mapping for MOBIKEY-style and generic files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMap {
    pub user: String,
    pub session: String,
    /// When absent, repetitions are numbered by row order within each
    /// (user, session) pair.
    pub rep: Option<String>,
    pub timings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub samples: Vec<KeystrokeSample>,
    pub feature_names: Vec<String>,
    pub source: Source,
}

impl Dataset {
    /// Builds a dataset after checking feature widths, finiteness, and
    /// uniqueness of (user, session, rep).
    pub fn new(
        samples: Vec<KeystrokeSample>,
        feature_names: Vec<String>,
        source: Source,
    ) -> Result<Self> {
        let width = feature_names.len();
        let mut seen = HashSet::with_capacity(samples.len());
        for (i, s) in samples.iter().enumerate() {
            if s.features.len() != width {
                return Err(Error::DimensionMismatch {
                    expected: width,
                    actual: s.features.len(),
                });
            }
            if let Some(bad) = s.features.iter().position(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "sample {i} ({}) has a non-finite value in feature {}",
                    s.id(),
                    feature_names[bad]
                )));
            }
            if !seen.insert((s.user_id.as_str(), s.session, s.rep)) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate (user, session, rep) triple {}",
                    s.id()
                )));
            }
        }
        Ok(Self {
            samples,
            feature_names,
            source,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn feature_count(&self) -> usize {
        self.feature_names.len()
    }

    /// Distinct user ids in order of first appearance.
    pub fn users(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        self.samples
            .iter()
            .filter(|s| seen.insert(s.user_id.as_str()))
            .map(|s| s.user_id.clone())
            .collect()
    }

    /// Sample indices per user, users in first-appearance order.
    pub fn indices_by_user(&self) -> Vec<(String, Vec<usize>)> {
        let mut order: Vec<String> = Vec::new();
        let mut map: HashMap<&str, Vec<usize>> = HashMap::new();
        for (i, s) in self.samples.iter().enumerate() {
            let entry = map.entry(s.user_id.as_str()).or_insert_with(|| {
                order.push(s.user_id.clone());
                Vec::new()
            });
            entry.push(i);
        }
        order
            .into_iter()
            .map(|u| {
                let idx = map.remove(u.as_str()).unwrap_or_default();
                (u, idx)
            })
            .collect()
    }

    pub fn user_counts(&self) -> Vec<(String, usize)> {
        self.indices_by_user()
            .into_iter()
            .map(|(u, idx)| (u, idx.len()))
            .collect()
    }

    /// Samples as matrix rows.
    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.len(), self.feature_count(), |r, c| {
            self.samples[r].features[c]
        })
    }

    pub fn labels(&self) -> Vec<String> {
        self.samples.iter().map(|s| s.user_id.clone()).collect()
    }

    fn subset(&self, keep: &[usize]) -> Dataset {
        Dataset {
            samples: keep.iter().map(|&i| self.samples[i].clone()).collect(),
            feature_names: self.feature_names.clone(),
            source: self.source,
        }
    }

    /// Writes the dataset back out in its loading dialect. CMU datasets ignore
    /// `map`; MOBIKEY/generic datasets require it to name the output columns.
    pub fn write_csv(&self, path: impl AsRef<Path>, map: Option<&ColumnMap>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(file);
        match (self.source, map) {
            (Source::Cmu, _) => {
                let mut header: Vec<&str> = CMU_PREFIX.to_vec();
                header.extend(self.feature_names.iter().map(String::as_str));
                w.write_record(&header)?;
                for s in &self.samples {
                    let mut rec = vec![s.user_id.clone(), s.session.to_string(), s.rep.to_string()];
                    rec.extend(s.features.iter().map(|v| v.to_string()));
                    w.write_record(&rec)?;
                }
            }
            (_, Some(map)) => {
                if map.timings != self.feature_names {
                    return Err(Error::Config(
                        "column map timings do not match the dataset's feature names".into(),
                    ));
                }
                let mut header = vec![map.user.clone(), map.session.clone()];
                if let Some(rep) = &map.rep {
                    header.push(rep.clone());
                }
                header.extend(map.timings.iter().cloned());
                w.write_record(&header)?;
                for s in &self.samples {
                    let mut rec = vec![s.user_id.clone(), s.session.to_string()];
                    if map.rep.is_some() {
                        rec.push(s.rep.to_string());
                    }
                    rec.extend(s.features.iter().map(|v| v.to_string()));
                    w.write_record(&rec)?;
                }
            }
            (_, None) => {
                return Err(Error::Config(
                    "writing a non-CMU dataset requires a column map".into(),
                ))
            }
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

fn open_reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file))
}

fn parse_field<T: std::str::FromStr>(raw: &str, row: usize, column: &str) -> Result<T> {
    raw.parse::<T>().map_err(|_| Error::Parse {
        row,
        message: format!("column {column:?}: cannot parse {raw:?}"),
    })
}

fn parse_timing(raw: &str, row: usize, column: &str) -> Result<f64> {
    let v: f64 = parse_field(raw, row, column)?;
    if !v.is_finite() {
        return Err(Error::Parse {
            row,
            message: format!("column {column:?}: non-finite timing {raw:?}"),
        });
    }
    Ok(v)
}

/// Loads a CMU-benchmark CSV. Row numbers in errors are 1-based file lines
/// (the header is line 1).
pub fn load_cmu(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let mut rdr = open_reader(path)?;
    let header = rdr.headers()?.clone();
    if header.len() < 4 || header.iter().take(3).ne(CMU_PREFIX.iter().copied()) {
        return Err(Error::Parse {
            row: 1,
            message: format!(
                "expected header to start with {} followed by timing columns",
                CMU_PREFIX.join(",")
            ),
        });
    }
    let feature_names: Vec<String> = header.iter().skip(3).map(str::to_owned).collect();
    let mut samples = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 2;
        let rec = rec?;
        if rec.len() != header.len() {
            return Err(Error::Parse {
                row,
                message: format!("expected {} columns, found {}", header.len(), rec.len()),
            });
        }
        let features = rec
            .iter()
            .skip(3)
            .zip(&feature_names)
            .map(|(raw, name)| parse_timing(raw, row, name))
            .collect::<Result<Vec<_>>>()?;
        samples.push(KeystrokeSample {
            user_id: rec[0].to_owned(),
            session: parse_field(&rec[1], row, "sessionIndex")?,
            rep: parse_field(&rec[2], row, "rep")?,
            features,
        });
    }
    Dataset::new(samples, feature_names, Source::Cmu)
}

/// Loads a MOBIKEY-style CSV, keeping only the mapped timing columns.
pub fn load_mobikey(path: impl AsRef<Path>, map: &ColumnMap) -> Result<Dataset> {
    load_mapped(path.as_ref(), map, Source::Mobikey)
}

/// Same as [`load_mobikey`] but tags the result as generic.
pub fn load_generic(path: impl AsRef<Path>, map: &ColumnMap) -> Result<Dataset> {
    load_mapped(path.as_ref(), map, Source::Generic)
}

fn load_mapped(path: &Path, map: &ColumnMap, source: Source) -> Result<Dataset> {
    if map.timings.is_empty() {
        return Err(Error::Config("column map names no timing columns".into()));
    }
    let mut rdr = open_reader(path)?;
    let header = rdr.headers()?.clone();
    let find = |name: &str| -> Result<usize> {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Config(format!("mapped column {name:?} not found in header")))
    };
    let user_col = find(&map.user)?;
    let session_col = find(&map.session)?;
    let rep_col = map.rep.as_deref().map(find).transpose()?;
    let timing_cols = map
        .timings
        .iter()
        .map(|t| find(t))
        .collect::<Result<Vec<_>>>()?;

    let mut next_rep: HashMap<(String, u32), u32> = HashMap::new();
    let mut samples = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 2;
        let rec = rec?;
        if rec.len() != header.len() {
            return Err(Error::Parse {
                row,
                message: format!("expected {} columns, found {}", header.len(), rec.len()),
            });
        }
        let user_id = rec[user_col].to_owned();
        let session: u32 = parse_field(&rec[session_col], row, &map.session)?;
        let counter = next_rep.entry((user_id.clone(), session)).or_insert(0);
        *counter += 1;
        let rep = match rep_col {
            Some(c) => parse_field(&rec[c], row, map.rep.as_deref().unwrap_or("rep"))?,
            None => *counter,
        };
        let features = timing_cols
            .iter()
            .zip(&map.timings)
            .map(|(&c, name)| parse_timing(&rec[c], row, name))
            .collect::<Result<Vec<_>>>()?;
        samples.push(KeystrokeSample {
            user_id,
            session,
            rep,
            features,
        });
    }
    Dataset::new(samples, map.timings.clone(), source)
}

/// Keeps all samples of `n_users` users drawn uniformly without replacement.
/// Sample order is preserved.
pub fn select_users(ds: &Dataset, n_users: usize, seed: u64) -> Result<Dataset> {
    let users = ds.users();
    if n_users > users.len() {
        return Err(Error::InvalidArgument(format!(
            "requested {n_users} users but the dataset has {}",
            users.len()
        )));
    }
    if n_users == users.len() {
        return Ok(ds.clone());
    }
    let mut rng = rng_from(seed);
    let chosen: HashSet<&str> = rand::seq::index::sample(&mut rng, users.len(), n_users)
        .into_iter()
        .map(|i| users[i].as_str())
        .collect();
    let keep: Vec<usize> = (0..ds.len())
        .filter(|&i| chosen.contains(ds.samples[i].user_id.as_str()))
        .collect();
    Ok(ds.subset(&keep))
}

/// Draws `per_user` samples uniformly without replacement from every user's
/// samples (across all sessions). Sample order is preserved.
pub fn subsample_per_user(ds: &Dataset, per_user: usize, seed: u64) -> Result<Dataset> {
    let mut rng = rng_from(seed);
    let mut keep = Vec::new();
    for (user, idx) in ds.indices_by_user() {
        if idx.len() < per_user {
            return Err(Error::InvalidArgument(format!(
                "user {user} has {} samples, fewer than the requested {per_user}",
                idx.len()
            )));
        }
        let mut picked: Vec<usize> = rand::seq::index::sample(&mut rng, idx.len(), per_user)
            .into_iter()
            .map(|j| idx[j])
            .collect();
        picked.sort_unstable();
        keep.extend(picked);
    }
    keep.sort_unstable();
    Ok(ds.subset(&keep))
}

#[derive(Debug, Clone)]
pub struct OutlierFiltered {
    pub dataset: Dataset,
    pub removed: usize,
    /// Users whose samples would all have been removed; they are kept unfiltered.
    pub flagged_users: Vec<String>,
}

/// Per-user, per-feature Tukey fences `[Q1 − k·IQR, Q3 + k·IQR]`.
///
/// A sample is dropped when any feature falls outside its user's fence.
/// Features with zero IQR impose no constraint. Filtering is repeated until
/// nothing more is removed, so the result is a fixed point and a second call
/// with the same `k` is a no-op.
pub fn remove_outliers(ds: &Dataset, k: f64) -> Result<OutlierFiltered> {
    if ds.is_empty() {
        return Err(Error::InvalidArgument("outlier removal on an empty dataset".into()));
    }
    if k.is_nan() || k <= 0.0 {
        return Err(Error::InvalidArgument(format!("fence multiplier must be > 0, got {k}")));
    }
    let mut keep_all = Vec::new();
    let mut flagged = Vec::new();
    for (user, idx) in ds.indices_by_user() {
        let mut current = idx.clone();
        loop {
            let kept = tukey_pass(ds, &current, k);
            if kept.len() == current.len() {
                break;
            }
            current = kept;
            if current.is_empty() {
                break;
            }
        }
        if current.is_empty() {
            log::warn!("outlier filter would remove every sample of user {user}; keeping it unfiltered");
            flagged.push(user);
            keep_all.extend(idx);
        } else {
            keep_all.extend(current);
        }
    }
    keep_all.sort_unstable();
    let removed = ds.len() - keep_all.len();
    Ok(OutlierFiltered {
        dataset: ds.subset(&keep_all),
        removed,
        flagged_users: flagged,
    })
}

fn tukey_pass(ds: &Dataset, idx: &[usize], k: f64) -> Vec<usize> {
    let width = ds.feature_count();
    let fences: Vec<Option<(f64, f64)>> = (0..width)
        .map(|f| {
            let col: Vec<f64> = idx.iter().map(|&i| ds.samples[i].features[f]).collect();
            let sorted = sorted_copy(&col);
            let q1 = quantile_sorted(&sorted, 0.25);
            let q3 = quantile_sorted(&sorted, 0.75);
            let iqr = q3 - q1;
            (iqr > 0.0).then(|| (q1 - k * iqr, q3 + k * iqr))
        })
        .collect();
    idx.iter()
        .copied()
        .filter(|&i| {
            ds.samples[i]
                .features
                .iter()
                .zip(&fences)
                .all(|(v, fence)| fence.is_none_or(|(lo, hi)| *v >= lo && *v <= hi))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitMode {
    /// Every test sample's session also contributes training samples.
    Intra,
    /// Test sessions are disjoint from training sessions.
    Inter,
    Random,
}

/// Which sessions go to training in inter-session splits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SessionOrder {
    /// Earliest sessions train, latest sessions test.
    #[default]
    Chronological,
    /// Session order is shuffled per user before cutting.
    Shuffled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub mode: SplitMode,
    pub seed: u64,
    #[serde(default)]
    pub session_order: SessionOrder,
}

impl SplitSpec {
    pub fn new(train_fraction: f64, mode: SplitMode, seed: u64) -> Self {
        Self {
            train_fraction,
            mode,
            seed,
            session_order: SessionOrder::default(),
        }
    }
}

/// Splits every user's samples into train and test.
///
/// Random and intra-session splits put exactly `⌈fraction·n⌉` samples of each
/// user into training. Inter-session splits cut at a session boundary, choosing
/// the cut whose training count is closest to `⌈fraction·n⌉` while leaving both
/// sides nonempty.
pub fn split(ds: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset)> {
    let f = spec.train_fraction;
    if !(f > 0.0 && f < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "train fraction must lie in (0, 1), got {f}"
        )));
    }
    let mut rng = rng_from(spec.seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (user, idx) in ds.indices_by_user() {
        let n = idx.len();
        if n < 2 {
            return Err(Error::InvalidArgument(format!(
                "user {user} has {n} sample(s); at least 2 are needed to split"
            )));
        }
        let n_train = (f * n as f64).ceil() as usize;
        if spec.mode != SplitMode::Inter && n_train >= n {
            return Err(Error::InvalidArgument(format!(
                "train fraction {f} leaves no test samples for user {user} ({n} samples)"
            )));
        }
        let (tr, te) = match spec.mode {
            SplitMode::Random => {
                let mut shuffled = idx.clone();
                shuffled.shuffle(&mut rng);
                let te = shuffled.split_off(n_train);
                (shuffled, te)
            }
            SplitMode::Intra => intra_split(ds, &idx, n_train, &mut rng),
            SplitMode::Inter => inter_split(ds, &user, &idx, n_train, spec.session_order, &mut rng)?,
        };
        train.extend(tr);
        test.extend(te);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((ds.subset(&train), ds.subset(&test)))
}

fn by_session(ds: &Dataset, idx: &[usize]) -> BTreeMap<u32, Vec<usize>> {
    let mut m: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for &i in idx {
        m.entry(ds.samples[i].session).or_default().push(i);
    }
    m
}

/// Stratified by session: each session gets a training share proportional to
/// its size (largest remainder), at least one training sample per session.
fn intra_split(
    ds: &Dataset,
    idx: &[usize],
    n_train: usize,
    rng: &mut crate::rng::Rng,
) -> (Vec<usize>, Vec<usize>) {
    let sessions = by_session(ds, idx);
    let n = idx.len() as f64;
    let groups: Vec<Vec<usize>> = sessions.into_values().collect();
    let exact: Vec<f64> = groups
        .iter()
        .map(|g| n_train as f64 * g.len() as f64 / n)
        .collect();
    let mut alloc: Vec<usize> = groups
        .iter()
        .zip(&exact)
        .map(|(g, e)| (e.floor() as usize).clamp(1, g.len()))
        .collect();
    let mut total: usize = alloc.iter().sum();
    // Raise sessions with the largest remainders, then lower those with the smallest.
    let mut order: Vec<usize> = (0..groups.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    while total < n_train {
        let Some(&s) = order.iter().find(|&&s| alloc[s] < groups[s].len()) else {
            break;
        };
        alloc[s] += 1;
        total += 1;
        order.retain(|&x| x != s);
        order.push(s);
    }
    while total > n_train {
        let Some(&s) = order.iter().rev().find(|&&s| alloc[s] > 1) else {
            break;
        };
        alloc[s] -= 1;
        total -= 1;
        order.retain(|&x| x != s);
        order.push(s);
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (g, &a) in groups.into_iter().zip(&alloc) {
        let mut g = g;
        g.shuffle(rng);
        let rest = g.split_off(a);
        train.extend(g);
        test.extend(rest);
    }
    (train, test)
}

fn inter_split(
    ds: &Dataset,
    user: &str,
    idx: &[usize],
    n_train: usize,
    order: SessionOrder,
    rng: &mut crate::rng::Rng,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let sessions = by_session(ds, idx);
    if sessions.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "inter-session split needs at least two sessions; user {user} has {}",
            sessions.len()
        )));
    }
    let mut groups: Vec<Vec<usize>> = sessions.into_values().collect();
    if order == SessionOrder::Shuffled {
        groups.shuffle(rng);
    }
    let mut best_cut = 1;
    let mut best_gap = usize::MAX;
    let mut cum = 0;
    for cut in 1..groups.len() {
        cum += groups[cut - 1].len();
        let gap = cum.abs_diff(n_train);
        if gap < best_gap {
            best_gap = gap;
            best_cut = cut;
        }
    }
    let train = groups[..best_cut].concat();
    let test = groups[best_cut..].concat();
    Ok((train, test))
}

/// Sessions present per user (for reporting).
pub fn sessions_of(ds: &Dataset) -> BTreeSet<u32> {
    ds.samples.iter().map(|s| s.session).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn sample(user: &str, session: u32, rep: u32, features: Vec<f64>) -> KeystrokeSample {
        KeystrokeSample {
            user_id: user.into(),
            session,
            rep,
            features,
        }
    }

    fn grid(users: usize, sessions: u32, reps: u32) -> Dataset {
        let mut samples = Vec::new();
        for u in 0..users {
            for s in 1..=sessions {
                for r in 1..=reps {
                    let x = (u * 1000 + s as usize * 10 + r as usize) as f64;
                    samples.push(sample(&format!("s{u:03}"), s, r, vec![x, x * 0.5]));
                }
            }
        }
        Dataset::new(samples, vec!["a".into(), "b".into()], Source::Cmu).unwrap()
    }

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn cmu_header_only_is_empty() {
        let f = write_tmp("subject,sessionIndex,rep,H.period,DD.period.t\n");
        let ds = load_cmu(f.path()).unwrap();
        assert!(ds.is_empty());
        assert_eq!(ds.feature_names, vec!["H.period", "DD.period.t"]);
    }

    #[test]
    fn cmu_text_in_timing_names_row() {
        let f = write_tmp(
            "subject,sessionIndex,rep,H.period,DD.period.t\ns002,1,1,0.1,0.2\ns002,1,2,abc,0.3\n",
        );
        match load_cmu(f.path()) {
            Err(Error::Parse { row, message }) => {
                assert_eq!(row, 3);
                assert!(message.contains("abc"));
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn cmu_wrong_column_count() {
        let f = write_tmp("subject,sessionIndex,rep,H.period\ns002,1,1,0.1,0.9\n");
        assert!(matches!(load_cmu(f.path()), Err(Error::Parse { row: 2, .. })));
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(
            load_cmu("/definitely/not/here.csv"),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn duplicate_triple_rejected() {
        let f = write_tmp("subject,sessionIndex,rep,H.period\ns002,1,1,0.1\ns002,1,1,0.2\n");
        assert!(load_cmu(f.path()).is_err());
    }

    #[test]
    fn mobikey_maps_columns_and_numbers_reps() {
        let mut text = String::from("uid,sess,ud1,ud2,accel\n");
        for s in 1..=3 {
            for r in 0..20 {
                text.push_str(&format!("u7,{s},{}.5,0.25,9.8\n", r));
            }
        }
        let f = write_tmp(&text);
        let map = ColumnMap {
            user: "uid".into(),
            session: "sess".into(),
            rep: None,
            timings: vec!["ud1".into(), "ud2".into()],
        };
        let ds = load_mobikey(f.path(), &map).unwrap();
        assert_eq!(ds.len(), 60);
        assert_eq!(ds.feature_count(), 2);
        assert_eq!(ds.source, Source::Mobikey);
        assert_eq!(ds.samples[59].rep, 20);
    }

    #[test]
    fn mobikey_missing_column_named() {
        let f = write_tmp("uid,sess,ud1\nu1,1,0.3\n");
        let map = ColumnMap {
            user: "uid".into(),
            session: "sess".into(),
            rep: None,
            timings: vec!["ud9".into()],
        };
        match load_mobikey(f.path(), &map) {
            Err(Error::Config(msg)) => assert!(msg.contains("ud9")),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn select_all_users_is_identity() {
        let ds = grid(5, 2, 3);
        assert_eq!(select_users(&ds, 5, 1).unwrap(), ds);
    }

    #[test]
    fn select_users_deterministic_and_complete() {
        let ds = grid(10, 2, 4);
        let a = select_users(&ds, 4, 99).unwrap();
        let b = select_users(&ds, 4, 99).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.users().len(), 4);
        assert_eq!(a.len(), 4 * 8);
        assert!(select_users(&ds, 11, 0).is_err());
    }

    #[test]
    fn identical_samples_nothing_removed() {
        let samples = (1..=10).map(|r| sample("u", 1, r, vec![0.2, 0.3])).collect();
        let ds = Dataset::new(samples, vec!["a".into(), "b".into()], Source::Generic).unwrap();
        let out = remove_outliers(&ds, 1.5).unwrap();
        assert_eq!(out.removed, 0);
        assert_eq!(out.dataset, ds);
    }

    #[test]
    fn spike_sample_removed() {
        // Feature values 1.0..=1.9 plus one sample at 10x the median.
        let mut samples: Vec<_> = (0..10)
            .map(|r| sample("u", 1, r + 1, vec![1.0 + 0.1 * r as f64]))
            .collect();
        samples.push(sample("u", 1, 11, vec![15.0]));
        let ds = Dataset::new(samples, vec!["a".into()], Source::Generic).unwrap();
        // Q1 = 1.25, Q3 = 1.75 over the 11 values (type 7): upper fence 2.5.
        let out = remove_outliers(&ds, 1.5).unwrap();
        assert_eq!(out.removed, 1);
        assert!(out.dataset.samples.iter().all(|s| s.rep != 11));
    }

    #[test]
    fn infinite_fence_keeps_everything() {
        let ds = grid(3, 2, 5);
        assert_eq!(remove_outliers(&ds, f64::INFINITY).unwrap().dataset, ds);
    }

    #[test]
    fn split_forty_ten() {
        let ds = grid(4, 5, 10);
        let (tr, te) = split(&ds, &SplitSpec::new(0.8, SplitMode::Random, 3)).unwrap();
        for (_, c) in tr.user_counts() {
            assert_eq!(c, 40);
        }
        for (_, c) in te.user_counts() {
            assert_eq!(c, 10);
        }
    }

    #[test]
    fn split_rounding_to_everything_errors() {
        let ds = grid(2, 1, 3);
        assert!(split(&ds, &SplitSpec::new(0.9, SplitMode::Random, 0)).is_err());
    }

    #[test]
    fn inter_session_disjoint_and_chronological() {
        let ds = grid(3, 8, 50);
        let (tr, te) = split(&ds, &SplitSpec::new(0.8, SplitMode::Inter, 0)).unwrap();
        let trs = sessions_of(&tr);
        let tes = sessions_of(&te);
        assert!(trs.is_disjoint(&tes));
        assert_eq!(trs.iter().max().unwrap() + 1, *tes.iter().min().unwrap());
        assert_eq!(tr.user_counts()[0].1, 300);
    }

    #[test]
    fn inter_session_single_session_errors() {
        let ds = grid(2, 1, 10);
        assert!(split(&ds, &SplitSpec::new(0.8, SplitMode::Inter, 0)).is_err());
    }

    #[test]
    fn intra_session_test_sessions_covered() {
        let ds = grid(2, 8, 6);
        let sub = subsample_per_user(&ds, 20, 5).unwrap();
        let (tr, te) = split(&sub, &SplitSpec::new(0.8, SplitMode::Intra, 1)).unwrap();
        for (u, c) in tr.user_counts() {
            assert_eq!(c, 16, "user {u}");
        }
        for user in te.users() {
            let trs: BTreeSet<u32> = tr.samples.iter().filter(|s| s.user_id == user).map(|s| s.session).collect();
            assert!(te
                .samples
                .iter()
                .filter(|s| s.user_id == user)
                .all(|s| trs.contains(&s.session)));
        }
    }
}
