//! Command-line front end: `generate`, `train`, `eval`, `predict` and
//! `gradcheck`.
//!
//! Settings come from an optional TOML file (`--config`) with keys such as
//! `model.state_dim = 32` or `train.max_steps = 500`; flags override file
//! values. Exit codes: 0 success, 1 usage error, 2 data or config error,
//! 3 numerical failure.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use log::info;
use serde::{Deserialize, Serialize};

use crate::autodiff::checkpoint::CheckpointError;
use crate::datagen::{gen_dataset, read_dataset, write_dataset, GeneratorConfig, Sample};
use crate::metrics::{config_hash, evaluate, EvalReport, ModelReport};
use crate::model::{ModelConfig, ModelError, Target};
use crate::training::{
    gradcheck_config, history_csv, load_model, model_gradcheck, predict, predict_mc, save_model, train_with,
    Normalizer, TrainConfig, TrainError, TrainEvent, TrainedModel,
};

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

/// Largest relative gradient error `gradcheck` accepts.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(anyhow::Error),
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Numerical(_) => EXIT_NUMERICAL,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Numerical(m) => f.write_str(m),
            CliError::Data(e) => write!(f, "{e}"),
        }
    }
}

impl<E: Into<anyhow::Error>> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError::Data(e.into())
    }
}

fn train_error(e: TrainError) -> CliError {
    match e {
        TrainError::DivergedLoss { step, .. } => CliError::Numerical(format!("loss became non-finite at step {step}")),
        other => CliError::Data(other.into()),
    }
}

#[derive(Debug, Parser)]
#[command(name = "dwnet", version, about = "Path delay/jitter prediction with a heterogeneous graph network")]
pub struct Cli {
    /// TOML settings file; flags take precedence over its values.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with exact queueing labels.
    Generate(GenerateArgs),
    /// Train one model for one target.
    Train(TrainArgs),
    /// Evaluate checkpoints on named datasets and write a report.
    Eval(EvalArgs),
    /// Print per-path predictions for a dataset.
    Predict(PredictArgs),
    /// Compare analytic and finite-difference gradients of the full model.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    pub count: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub nodes: Option<usize>,
    #[arg(long)]
    pub extra_edge_prob: Option<f64>,
    #[arg(long)]
    pub intensity: Option<f64>,
    #[arg(long)]
    pub pair_fraction: Option<f64>,
    /// Comma-separated capacity choices, e.g. `10,25,40`.
    #[arg(long, value_delimiter = ',')]
    pub capacities: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub val: Option<PathBuf>,
    #[arg(long)]
    pub target: Option<Target>,
    /// Disable the secondary path state (comparator without it).
    #[arg(long)]
    pub baseline: bool,
    /// Output directory for checkpoints, history and the effective config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub l2: Option<f64>,
    #[arg(long)]
    pub eval_every: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub state_dim: Option<usize>,
    #[arg(long)]
    pub rounds: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub readout_hidden: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// `name=path` or a bare path (named after the file stem); repeatable.
    #[arg(long = "checkpoint", required = true)]
    pub checkpoints: Vec<String>,
    /// `name=path` or a bare path; repeatable.
    #[arg(long = "data", required = true)]
    pub datasets: Vec<String>,
    /// Output directory for report.json, report.txt and report.csv.
    #[arg(long)]
    pub report: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Number of dropout samples; 1 means a single eval-mode pass.
    #[arg(long, default_value_t = 1)]
    pub mc: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Write the CSV here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-6)]
    pub eps: f64,
    /// Number of sampled parameter coordinates.
    #[arg(long, default_value_t = 256)]
    pub coords: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataPaths {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val: Option<PathBuf>,
}

/// Everything a run can be configured with.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    pub data: DataPaths,
    pub generator: GeneratorConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

/// A parsed settings file and whether it set any `model.*` key.
#[derive(Debug, Clone, Default)]
pub struct LoadedConfig {
    pub run: RunConfig,
    pub has_model_section: bool,
}

pub fn load_config(path: Option<&Path>) -> Result<LoadedConfig, CliError> {
    let Some(path) = path else { return Ok(LoadedConfig::default()) };
    let text = fs::read_to_string(path).map_err(|e| anyhow::anyhow!("config {}: {e}", path.display()))?;
    let table: toml::Table = text.parse().map_err(|e| anyhow::anyhow!("config {}: {e}", path.display()))?;
    let has_model_section = table.contains_key("model");
    let run: RunConfig = table.try_into().map_err(|e| anyhow::anyhow!("config {}: {e}", path.display()))?;
    Ok(LoadedConfig { run, has_model_section })
}

fn write_effective_config(dir: &Path, config: &RunConfig) -> Result<(), CliError> {
    let text = toml::to_string(config).map_err(|e| anyhow::anyhow!("serializing config: {e}"))?;
    let path = dir.join("effective_config.toml");
    fs::write(&path, text).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
    Ok(())
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| anyhow::anyhow!("{}: {e}", dir.display()))?;
    Ok(())
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
    Ok(())
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code. Errors are reported on standard error.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    let loaded = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::Generate(a) => cmd_generate(loaded.run, a),
        Command::Train(a) => cmd_train(loaded.run, a),
        Command::Eval(a) => cmd_eval(loaded, a),
        Command::Predict(a) => cmd_predict(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
    }
}

fn cmd_generate(mut config: RunConfig, a: GenerateArgs) -> Result<(), CliError> {
    let g = &mut config.generator;
    if let Some(v) = a.seed {
        g.seed = v;
    }
    if let Some(v) = a.nodes {
        g.node_count = v;
    }
    if let Some(v) = a.extra_edge_prob {
        g.extra_edge_prob = v;
    }
    if let Some(v) = a.intensity {
        g.traffic_intensity = v;
    }
    if let Some(v) = a.pair_fraction {
        g.pair_fraction = v;
    }
    if let Some(v) = a.capacities {
        g.capacity_choices = v;
    }
    let out = a.out.or_else(|| config.output.clone()).ok_or_else(|| CliError::Usage("--out is required".into()))?;
    config.output = Some(out.clone());
    config.generator.validate()?;
    let samples = gen_dataset(&config.generator, a.count)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    write_dataset(&samples, &out)?;
    let sidecar = PathBuf::from(format!("{}.config.toml", out.display()));
    let text = toml::to_string(&config).map_err(|e| anyhow::anyhow!("serializing config: {e}"))?;
    write_file(&sidecar, &text)?;

    let paths: usize = samples.iter().map(|s| s.routing.n_paths()).sum();
    let mean_paths = if samples.is_empty() { 0.0 } else { paths as f64 / samples.len() as f64 };
    let max_util = samples.iter().map(Sample::max_utilization).fold(0.0, f64::max);
    println!(
        "wrote {} samples to {} (mean {:.2} paths/sample, max utilization {:.4})",
        samples.len(),
        out.display(),
        mean_paths,
        max_util
    );
    Ok(())
}

fn apply_train_flags(config: &mut RunConfig, a: &TrainArgs) {
    let (m, t) = (&mut config.model, &mut config.train);
    if let Some(v) = a.target {
        m.target = v;
    }
    if a.baseline {
        m.secondary_enabled = false;
    }
    if let Some(v) = a.state_dim {
        m.state_dim = v;
    }
    if let Some(v) = a.rounds {
        m.rounds = v;
    }
    if let Some(v) = a.lambda {
        m.lambda = v;
    }
    if let Some(v) = a.readout_hidden {
        m.readout_hidden = v;
    }
    if let Some(v) = a.dropout {
        m.dropout_p = v;
    }
    if let Some(v) = a.max_steps {
        t.max_steps = v;
    }
    if let Some(v) = a.batch_size {
        t.batch_size = v;
    }
    if let Some(v) = a.learning_rate {
        t.learning_rate = v;
    }
    if let Some(v) = a.l2 {
        t.l2_coeff = v;
    }
    if let Some(v) = a.eval_every {
        t.eval_every = v;
    }
    if let Some(v) = a.seed {
        t.seed = v;
    }
    if let Some(v) = &a.data {
        config.data.train = Some(v.clone());
    }
    if let Some(v) = &a.val {
        config.data.val = Some(v.clone());
    }
    if let Some(v) = &a.out {
        config.output = Some(v.clone());
    }
}

fn cmd_train(mut config: RunConfig, a: TrainArgs) -> Result<(), CliError> {
    apply_train_flags(&mut config, &a);
    let data = config.data.train.clone().ok_or_else(|| CliError::Usage("--data is required".into()))?;
    let val = config.data.val.clone().ok_or_else(|| CliError::Usage("--val is required".into()))?;
    let out = config.output.clone().ok_or_else(|| CliError::Usage("--out is required".into()))?;
    config.model.validate()?;
    config.train.validate().map_err(train_error)?;
    let train_set = read_dataset(&data)?;
    let val_set = read_dataset(&val)?;
    create_dir(&out)?;
    write_effective_config(&out, &config)?;

    let latest_path = out.join("checkpoint_latest.json");
    let best_path = out.join("checkpoint_best.json");
    let history_path = out.join("history.csv");
    let mut rows = Vec::new();
    let result = train_with(&train_set, &val_set, &config.model, &config.train, |event| {
        let TrainEvent::Evaluated { row, latest, improved } = event;
        info!(
            "step {} train_loss {:.6} val_mape {:.4} val_mae {:.6e} val_pcc {:.4}",
            row.step, row.train_loss, row.val_mape, row.val_mae, row.val_pcc
        );
        rows.push(row.clone());
        save_model(&latest_path, latest)?;
        if improved {
            save_model(&best_path, latest)?;
        }
        fs::write(&history_path, history_csv(&rows))
            .map_err(|source| CheckpointError::Io { path: history_path.clone(), source })?;
        Ok(())
    });
    let outcome = match result {
        Ok(o) => o,
        Err(TrainError::DivergedLoss { step, last_good }) => {
            let normalizer = Normalizer::fit(&train_set, config.model.target).map_err(train_error)?;
            let model = TrainedModel { config: config.model.clone(), params: *last_good, normalizer };
            save_model(&out.join("checkpoint_last_good.json"), &model).map_err(train_error)?;
            return Err(CliError::Numerical(format!(
                "loss became non-finite at step {step}; last good parameters saved to {}",
                out.join("checkpoint_last_good.json").display()
            )));
        }
        Err(e) => return Err(train_error(e)),
    };
    save_model(&latest_path, &outcome.latest).map_err(train_error)?;
    if outcome.best.is_none() {
        save_model(&best_path, &outcome.latest).map_err(train_error)?;
    }
    write_file(&history_path, &history_csv(&outcome.history))?;
    match (outcome.history.last(), &outcome.best) {
        (Some(last), Some((best_step, _))) => println!(
            "trained {} steps; final val MAPE {:.4}; best val MAPE at step {}; outputs in {}",
            last.step,
            last.val_mape,
            best_step,
            out.display()
        ),
        _ => println!("no training steps; initial parameters saved in {}", out.display()),
    }
    Ok(())
}

/// Splits `name=path`; a bare path is named after its file stem.
pub fn parse_named(spec: &str) -> (String, PathBuf) {
    match spec.split_once('=') {
        Some((name, path)) if !name.is_empty() => (name.to_string(), PathBuf::from(path)),
        _ => {
            let path = PathBuf::from(spec);
            let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| spec.to_string());
            (name, path)
        }
    }
}

/// Seconds since the epoch, or `SOURCE_DATE_EPOCH` when set.
fn report_timestamp() -> u64 {
    std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .unwrap_or_else(|| SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0))
}

fn cmd_eval(loaded: LoadedConfig, a: EvalArgs) -> Result<(), CliError> {
    let datasets = a
        .datasets
        .iter()
        .map(|spec| {
            let (name, path) = parse_named(spec);
            Ok((name, read_dataset(&path)?))
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let mut models = Vec::new();
    for spec in &a.checkpoints {
        let (name, path) = parse_named(spec);
        let model = load_model(&path).map_err(train_error)?;
        if loaded.has_model_section && loaded.run.model != model.config {
            return Err(CliError::Data(
                ModelError::ConfigMismatch(format!(
                    "checkpoint {} was trained with a different model config than the --config file",
                    path.display()
                ))
                .into(),
            ));
        }
        let entries = evaluate(&model, &datasets)?;
        models.push(ModelReport {
            model_id: name,
            checkpoint: path.display().to_string(),
            config_hash: config_hash(&model.config),
            secondary_enabled: model.config.secondary_enabled,
            entries,
        });
    }
    let report = EvalReport::new(models, report_timestamp());
    create_dir(&a.report)?;
    write_file(&a.report.join("report.json"), &report.to_json())?;
    write_file(&a.report.join("report.txt"), &report.to_text())?;
    write_file(&a.report.join("report.csv"), &report.to_csv())?;
    write_effective_config(&a.report, &loaded.run)?;
    print!("{}", report.to_text());
    Ok(())
}

fn cmd_predict(a: PredictArgs) -> Result<(), CliError> {
    if a.mc == 0 {
        return Err(CliError::Usage("--mc must be at least 1".into()));
    }
    let model = load_model(&a.checkpoint).map_err(train_error)?;
    let samples = read_dataset(&a.data)?;
    let target = model.config.target;
    let mut out = String::from("sample,path,src,dst,prediction,std,label\n");
    let rows: Vec<Vec<(f64, f64)>> = if a.mc == 1 {
        predict(&model, &samples).map_err(train_error)?.into_iter().map(|p| p.into_iter().map(|v| (v, 0.0)).collect()).collect()
    } else {
        predict_mc(&model, &samples, a.mc, a.seed)
            .map_err(train_error)?
            .into_iter()
            .map(|p| p.into_iter().map(|e| (e.mean, e.std)).collect())
            .collect()
    };
    for (i, (s, preds)) in samples.iter().zip(&rows).enumerate() {
        for ((p, path), (mean, std)) in s.routing.paths().iter().enumerate().zip(preds) {
            let label = s.labels.get(target)[p];
            let _ = writeln!(out, "{i},{p},{},{},{mean},{std},{label}", path.src, path.dst);
        }
    }
    match a.out {
        Some(path) => write_file(&path, &out)?,
        None => print!("{out}"),
    }
    Ok(())
}

fn cmd_gradcheck(a: GradcheckArgs) -> Result<(), CliError> {
    if !(a.eps.is_finite() && a.eps > 0.0) {
        return Err(CliError::Usage(format!("--eps must be a positive number, got {}", a.eps)));
    }
    if a.coords == 0 {
        return Err(CliError::Usage("--coords must be at least 1".into()));
    }
    let report = model_gradcheck(&gradcheck_config(), a.seed, a.eps, a.coords).map_err(train_error)?;
    println!(
        "max relative error {:.3e} over {} coordinates (worst coordinate {}: analytic {:.6e}, numeric {:.6e})",
        report.max_rel_error, report.checked, report.worst_coord, report.worst_analytic, report.worst_numeric
    );
    if report.max_rel_error.is_nan() || report.max_rel_error >= GRADCHECK_TOLERANCE {
        return Err(CliError::Numerical(format!(
            "gradient check failed: {:.3e} >= {GRADCHECK_TOLERANCE:e}",
            report.max_rel_error
        )));
    }
    Ok(())
}
