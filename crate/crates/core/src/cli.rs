//! Command-line front end.
//!
//! Settings resolve in one order: built-in defaults, then the experiment
//! preset, then the `--config` file, then flags. The config file is a JSON
//! object with flat keys. Keys named like a flag (`reducer`, `n_users`,
//! `no_quantile`, ...) behave exactly like that flag; any other key is a dotted
//! path into the resolved config, e.g. `pipeline.reducer.tsne.perplexity`.

use std::fmt;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::dataset::{load_cmu, load_generic, load_mobikey, select_users, subsample_per_user, ColumnMap, Dataset, Source};
use crate::error::Error;
use crate::pipeline::{score_predictions, train, ExperimentGrid, PipelineConfig, TrainedModel};
use crate::rng::derive_seed;
use crate::synth::{generate, SynthConfig};

#[derive(Debug, Parser)]
#[command(name = "keyunloc", version, about = "Keystroke-dynamics user identification in a reduced feature space")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load a dataset, print a summary, and write a normalized CSV copy.
    Ingest(Common),
    /// Fit the training pipeline and write the model.
    Train(Common),
    /// Label samples with a trained model.
    Identify {
        #[command(flatten)]
        common: Common,
        /// Model JSON written by `train`.
        #[arg(long)]
        model: PathBuf,
    },
    /// Run a Monte-Carlo experiment grid.
    Experiment {
        #[command(flatten)]
        common: Common,
        /// table1, table3, table4, or table5.
        #[arg(long)]
        preset: Option<String>,
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Write a synthetic dataset in the CMU layout.
    Synth {
        #[arg(long, default_value_t = 51)]
        users: usize,
        #[arg(long, default_value_t = 8)]
        sessions: u32,
        #[arg(long, default_value_t = 50)]
        reps: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output CSV file.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args, Default)]
pub struct Common {
    /// Input CSV.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, value_parser = ["cmu", "mobikey", "generic"])]
    pub format: Option<String>,
    /// JSON file of flat settings; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads for experiment trials.
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long, value_parser = ["pca", "kpca", "tsne"])]
    pub reducer: Option<String>,
    #[arg(long, value_parser = ["dbscan", "gmm", "xmeans"])]
    pub cluster: Option<String>,
    #[arg(long, value_parser = ["nn", "unloc"])]
    pub classifier: Option<String>,
    #[arg(long)]
    pub no_quantile: bool,
    #[arg(long)]
    pub dims: Option<usize>,
    /// Samples per user: a count, or `lo-hi` for a random count per trial.
    #[arg(long)]
    pub sample_size: Option<String>,
    #[arg(long)]
    pub n_users: Option<usize>,
    #[arg(long, value_parser = ["intra", "inter", "random"])]
    pub session_mode: Option<String>,
    #[arg(long)]
    pub knn_k: Option<usize>,
    /// Column holding the user id (MOBIKEY and generic files).
    #[arg(long)]
    pub user_col: Option<String>,
    #[arg(long)]
    pub session_col: Option<String>,
    #[arg(long)]
    pub rep_col: Option<String>,
    /// Comma-separated timing columns.
    #[arg(long, value_delimiter = ',')]
    pub timing_cols: Option<Vec<String>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Cmu,
    Mobikey,
    Generic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub path: Option<PathBuf>,
    pub format: Format,
    pub map: Option<ColumnMap>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub jobs: Option<usize>,
    pub data: DataConfig,
    /// Per-user sample count and user count applied before training.
    pub sample_size: Option<usize>,
    pub n_users: Option<usize>,
    pub pipeline: PipelineConfig,
    pub experiment: ExperimentGrid,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("out"),
            jobs: None,
            data: DataConfig {
                path: None,
                format: Format::Cmu,
                map: None,
            },
            sample_size: None,
            n_users: None,
            pipeline: PipelineConfig::default(),
            experiment: ExperimentGrid::default(),
        }
    }
}

#[derive(Debug)]
pub enum CliError {
    /// Bad invocation; exit code 2.
    Usage(String),
    Run(Error),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage: {m}"),
            CliError::Run(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Run(e)
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Run(_) => 1,
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Sections that are filled key by key from flags; their fields are checked
/// when the config is deserialized.
const OPEN_SECTIONS: [&str; 1] = ["data.map"];

fn set_path(root: &mut Value, key: &str, value: Value) -> CliResult<()> {
    let parts: Vec<&str> = key.split('.').collect();
    let open = OPEN_SECTIONS.iter().any(|s| key.strip_prefix(s).is_some_and(|r| r.starts_with('.')));
    let mut cur = root;
    for (i, part) in parts.iter().enumerate() {
        // optional sections start out null and accept any field
        let fresh = cur.is_null();
        if fresh {
            *cur = Value::Object(Map::new());
        }
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| CliError::Usage(format!("config key {key:?}: {} is not a section", parts[..i].join("."))))?;
        if i + 1 == parts.len() {
            if !fresh && !open && !obj.contains_key(*part) && !obj.is_empty() {
                return Err(CliError::Usage(format!("unknown config key {key:?}")));
            }
            obj.insert((*part).to_owned(), value);
            return Ok(());
        }
        cur = obj
            .get_mut(*part)
            .ok_or_else(|| CliError::Usage(format!("unknown config key {key:?}")))?;
    }
    Ok(())
}

fn parse_sample_size(v: &Value) -> CliResult<(Option<usize>, Value)> {
    let bad = || CliError::Usage(format!("sample size must be a count or lo-hi, got {v}"));
    match v {
        Value::Number(n) => {
            let n = n.as_u64().ok_or_else(bad)? as usize;
            Ok((Some(n), json!([{ "fixed": n }])))
        }
        Value::String(s) => match s.split_once('-') {
            Some((a, b)) => {
                let a: usize = a.trim().parse().map_err(|_| bad())?;
                let b: usize = b.trim().parse().map_err(|_| bad())?;
                Ok((None, json!([{ "random": [a, b] }])))
            }
            None => {
                let n: usize = s.trim().parse().map_err(|_| bad())?;
                Ok((Some(n), json!([{ "fixed": n }])))
            }
        },
        _ => Err(bad()),
    }
}

/// Applies one setting, expanding flag-named keys into the paths they drive.
fn apply_setting(root: &mut Value, key: &str, value: Value) -> CliResult<()> {
    let key = key.replace('-', "_");
    match key.as_str() {
        "format" => set_path(root, "data.format", value),
        "data" | "path" => set_path(root, "data.path", value),
        "reducer" => {
            set_path(root, "pipeline.reducer.kind", value.clone())?;
            set_path(root, "experiment.reducers", json!([value]))
        }
        "cluster" => {
            set_path(root, "pipeline.cluster.method", value.clone())?;
            set_path(root, "experiment.cluster_methods", json!([value]))
        }
        "classifier" => {
            set_path(root, "pipeline.classifier", value.clone())?;
            set_path(root, "experiment.classifiers", json!([value]))
        }
        "no_quantile" => {
            let raw = value
                .as_bool()
                .ok_or_else(|| CliError::Usage("no_quantile must be true or false".into()))?;
            set_path(root, "pipeline.use_quantile", json!(!raw))?;
            set_path(root, "experiment.use_quantile", json!([!raw]))
        }
        "dims" => {
            set_path(root, "pipeline.reducer.out_dims", value.clone())?;
            set_path(root, "experiment.dims", json!({ "fixed": value }))
        }
        "sample_size" => {
            let (fixed, grid) = parse_sample_size(&value)?;
            set_path(root, "sample_size", json!(fixed))?;
            set_path(root, "experiment.sample_sizes", grid)
        }
        "n_users" => {
            set_path(root, "n_users", value.clone())?;
            set_path(root, "experiment.n_users", json!([value]))
        }
        "session_mode" => set_path(root, "experiment.session_modes", json!([value])),
        "knn_k" => set_path(root, "pipeline.knn_k", value),
        "trials" => set_path(root, "experiment.trials", value),
        "user_col" => set_path(root, "data.map.user", value),
        "session_col" => set_path(root, "data.map.session", value),
        "rep_col" => set_path(root, "data.map.rep", value),
        "timing_cols" => {
            let v = match value {
                Value::String(s) => json!(s.split(',').map(str::trim).collect::<Vec<_>>()),
                other => other,
            };
            set_path(root, "data.map.timings", v)
        }
        _ => set_path(root, &key, value),
    }
}

fn read_config_file(path: &Path) -> CliResult<Map<String, Value>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    match serde_json::from_str::<Value>(&text).map_err(Error::from)? {
        Value::Object(m) => Ok(m),
        _ => Err(CliError::Usage(format!("{} must hold a JSON object", path.display()))),
    }
}

fn flag_settings(c: &Common) -> Vec<(&'static str, Value)> {
    let mut s = Vec::new();
    let mut push = |k: &'static str, v: Option<Value>| {
        if let Some(v) = v {
            s.push((k, v));
        }
    };
    push("data", c.data.as_ref().map(|p| json!(p)));
    push("format", c.format.as_ref().map(|v| json!(v)));
    push("out", c.out.as_ref().map(|p| json!(p)));
    push("seed", c.seed.map(|v| json!(v)));
    push("jobs", c.jobs.map(|v| json!(v)));
    push("reducer", c.reducer.as_ref().map(|v| json!(v)));
    push("cluster", c.cluster.as_ref().map(|v| json!(v)));
    push("classifier", c.classifier.as_ref().map(|v| json!(v)));
    push("no_quantile", c.no_quantile.then(|| json!(true)));
    push("dims", c.dims.map(|v| json!(v)));
    push("sample_size", c.sample_size.as_ref().map(|v| json!(v)));
    push("n_users", c.n_users.map(|v| json!(v)));
    push("session_mode", c.session_mode.as_ref().map(|v| json!(v)));
    push("knn_k", c.knn_k.map(|v| json!(v)));
    push("user_col", c.user_col.as_ref().map(|v| json!(v)));
    push("session_col", c.session_col.as_ref().map(|v| json!(v)));
    push("rep_col", c.rep_col.as_ref().map(|v| json!(v)));
    push("timing_cols", c.timing_cols.as_ref().map(|v| json!(v)));
    s
}

/// Resolves defaults, preset, config file, and flags into one config.
pub fn resolve(common: &Common, preset: Option<&str>, extra: &[(&'static str, Value)]) -> CliResult<RunConfig> {
    let file = match &common.config {
        Some(p) => read_config_file(p)?,
        None => Map::new(),
    };
    let preset = preset
        .map(str::to_owned)
        .or_else(|| file.get("preset").and_then(Value::as_str).map(str::to_owned));
    let mut base = RunConfig::default();
    if let Some(p) = &preset {
        base.experiment = ExperimentGrid::preset(p).map_err(|e| CliError::Usage(e.to_string()))?;
        if p == "table4" {
            base.data.format = Format::Mobikey;
        }
    }
    let mut root = serde_json::to_value(&base).map_err(Error::from)?;
    for (k, v) in file {
        if k != "preset" {
            apply_setting(&mut root, &k, v)?;
        }
    }
    for (k, v) in flag_settings(common).into_iter().chain(extra.iter().cloned()) {
        apply_setting(&mut root, k, v)?;
    }
    let mut cfg: RunConfig = serde_json::from_value(root).map_err(|e| CliError::Usage(format!("invalid configuration: {e}")))?;
    cfg.pipeline.seed = cfg.seed;
    cfg.experiment.base = PipelineConfig {
        seed: cfg.seed,
        ..cfg.pipeline.clone()
    };
    Ok(cfg)
}

fn load_dataset(cfg: &DataConfig) -> CliResult<Dataset> {
    let path = cfg
        .path
        .as_ref()
        .ok_or_else(|| CliError::Usage("no input file; pass --data <csv>".into()))?;
    match (cfg.format, &cfg.map) {
        (Format::Cmu, _) => Ok(load_cmu(path)?),
        (Format::Mobikey, Some(m)) => Ok(load_mobikey(path, m)?),
        (Format::Generic, Some(m)) => Ok(load_generic(path, m)?),
        (f, None) => Err(CliError::Usage(format!(
            "{f:?} files need a column mapping: --user-col, --session-col, --timing-cols (and optionally --rep-col)"
        )
        .to_lowercase())),
    }
}

fn create_out(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Run(Error::io(dir, e)))
}

fn write_file(path: &Path, body: &str) -> CliResult<()> {
    std::fs::write(path, body).map_err(|e| CliError::Run(Error::io(path, e)))
}

fn config_comment(cfg: &RunConfig) -> CliResult<String> {
    Ok(format!("# config: {}\n", serde_json::to_string(cfg).map_err(Error::from)?))
}

/// Dataset summary in the form `51 users, 400 samples/user, 31 features`.
pub fn summarize(ds: &Dataset) -> String {
    let counts = ds.user_counts();
    let min = counts.iter().map(|c| c.1).min().unwrap_or(0);
    let max = counts.iter().map(|c| c.1).max().unwrap_or(0);
    let per_user = if min == max { min.to_string() } else { format!("{min}-{max}") };
    format!("{} users, {per_user} samples/user, {} features", counts.len(), ds.feature_count())
}

fn cmd_ingest(common: &Common) -> CliResult<String> {
    let cfg = resolve(common, None, &[])?;
    let ds = load_dataset(&cfg.data)?;
    let mut out = summarize(&ds);
    out.push('\n');
    for (user, n) in ds.user_counts() {
        out.push_str(&format!("  {user}: {n}\n"));
    }
    create_out(&cfg.out)?;
    let cache = cfg.out.join("dataset.csv");
    let normalized = Dataset {
        source: Source::Cmu,
        ..ds
    };
    normalized.write_csv(&cache, None)?;
    out.push_str(&format!("wrote {}\n", cache.display()));
    Ok(out)
}

fn training_subset(cfg: &RunConfig, ds: Dataset) -> CliResult<Dataset> {
    let ds = match cfg.n_users {
        Some(n) => select_users(&ds, n, derive_seed(cfg.seed, &[10]))?,
        None => ds,
    };
    Ok(match cfg.sample_size {
        Some(n) => subsample_per_user(&ds, n, derive_seed(cfg.seed, &[11]))?,
        None => ds,
    })
}

fn cmd_train(common: &Common) -> CliResult<String> {
    let cfg = resolve(common, None, &[])?;
    cfg.pipeline.validate()?;
    let ds = training_subset(&cfg, load_dataset(&cfg.data)?)?;
    let model = train(&ds, &cfg.pipeline)?;
    create_out(&cfg.out)?;
    let model_path = cfg.out.join("model.json");
    model.save_json(&model_path)?;

    let mut s = String::new();
    s.push_str(&format!("training data: {}\n", summarize(&ds)));
    if !cfg.pipeline.use_quantile {
        s.push_str("feature mode: raw features (no quantile transform)\n");
    } else {
        s.push_str("feature mode: quantile-transformed\n");
    }
    s.push_str(&format!(
        "reducer: {} ({} dims), clustering: {}\n",
        cfg.pipeline.reducer.kind.name(),
        model.reducer.out_dims(),
        cfg.pipeline.cluster.method.name()
    ));
    s.push_str(&format!("estimated N = {}\n", model.k()));
    for (j, (size, user)) in model.cluster_sizes().iter().zip(&model.cluster_users).enumerate() {
        s.push_str(&format!("  cluster {j}: {size} samples, user {}\n", user.as_deref().unwrap_or("-")));
    }
    if let Ok(ari) = model.training_ari() {
        s.push_str(&format!("training ARI vs user labels: {ari:.4}\n"));
    }
    let cands = &model.clusters.diagnostics.candidates;
    if !cands.is_empty() {
        s.push_str("BIC table:\n  k  bic\n");
        for c in cands {
            let v = match (c.bic, &c.error) {
                (Some(b), _) => format!("{b:.3}"),
                (None, Some(e)) => format!("failed: {e}"),
                (None, None) => "-".into(),
            };
            s.push_str(&format!("  {:<2} {v}\n", c.k));
        }
    }
    if let Some(eps) = model.clusters.diagnostics.eps {
        s.push_str(&format!("DBSCAN eps = {eps:.6}\n"));
    }
    s.push_str(&format!("wrote {}\n", model_path.display()));
    write_file(&cfg.out.join("train_summary.txt"), &format!("{}{s}", config_comment(&cfg)?))?;
    Ok(s)
}

fn cmd_identify(common: &Common, model_path: &Path) -> CliResult<String> {
    let cfg = resolve(common, None, &[])?;
    let model = TrainedModel::load_json(model_path)?;
    let ds = load_dataset(&cfg.data)?;
    if !ds.is_empty() && ds.feature_count() != model.feature_count() {
        return Err(CliError::Run(Error::DimensionMismatch {
            expected: model.feature_count(),
            actual: ds.feature_count(),
        }));
    }
    let classifier = if common.classifier.is_some() {
        cfg.pipeline.classifier
    } else {
        model.config.classifier
    };
    let preds = if ds.is_empty() {
        Vec::new()
    } else {
        model.identify_batch_with(&ds.to_matrix(), classifier)?
    };
    create_out(&cfg.out)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["id", "cluster", "user", "residual"]).map_err(Error::from)?;
    for (s, p) in ds.samples.iter().zip(&preds) {
        w.write_record([
            s.id(),
            p.label.to_string(),
            p.user.clone().unwrap_or_default(),
            p.residual.map_or(String::new(), |r| r.to_string()),
        ])
        .map_err(Error::from)?;
    }
    let body = String::from_utf8(w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))?)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let path = cfg.out.join("predictions.csv");
    let echo = json!({ "model": model_path, "classifier": classifier, "run": cfg });
    write_file(&path, &format!("# config: {echo}\n{body}"))?;
    let mut s = format!("{} samples labelled with {}\n", preds.len(), classifier.name());
    if !preds.is_empty() {
        let acc = score_predictions(&preds, &ds.labels())?;
        s.push_str(&format!("accuracy against file labels: {:.2}%\n", 100.0 * acc));
    }
    s.push_str(&format!("wrote {}\n", path.display()));
    Ok(s)
}

fn cmd_experiment(common: &Common, preset: Option<&str>, trials: Option<usize>) -> CliResult<String> {
    let extra: Vec<(&'static str, Value)> = trials.map(|t| ("trials", json!(t))).into_iter().collect();
    let cfg = resolve(common, preset, &extra)?;
    cfg.experiment.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let ds = load_dataset(&cfg.data)?;
    let run = || crate::pipeline::run_experiment(&ds, &cfg.experiment, cfg.seed);
    let report = match cfg.jobs {
        Some(j) => rayon::ThreadPoolBuilder::new()
            .num_threads(j.max(1))
            .build()
            .map_err(|e| CliError::Usage(format!("cannot start {j} workers: {e}")))?
            .install(run)?,
        None => run()?,
    };
    create_out(&cfg.out)?;
    let files = report.write_all(&cfg.out, &cfg.experiment.name)?;
    let mut s = report.render_table();
    s.push_str(&format!("{} skipped\n", report.skipped()));
    for f in files {
        s.push_str(&format!("wrote {}\n", f.display()));
    }
    Ok(s)
}

fn cmd_synth(users: usize, sessions: u32, reps: u32, seed: u64, out: &Path) -> CliResult<String> {
    let ds = generate(&SynthConfig {
        users,
        sessions,
        reps_per_session: reps,
        seed,
        ..Default::default()
    })?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_out(parent)?;
    }
    ds.write_csv(out, None)?;
    Ok(format!("{}\nwrote {}\n", summarize(&ds), out.display()))
}

/// Runs a parsed command and returns the text for standard output.
pub fn run(cli: Cli) -> CliResult<String> {
    match cli.command {
        Command::Ingest(c) => cmd_ingest(&c),
        Command::Train(c) => cmd_train(&c),
        Command::Identify { common, model } => cmd_identify(&common, &model),
        Command::Experiment { common, preset, trials } => cmd_experiment(&common, preset.as_deref(), trials),
        Command::Synth {
            users,
            sessions,
            reps,
            seed,
            out,
        } => cmd_synth(users, sessions, reps, seed, &out),
    }
}

/// Parses `args`, runs, and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(text) => {
            print!("{text}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
