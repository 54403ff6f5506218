//! `prognost` command line: each subcommand is one pipeline stage, and stages
//! exchange data only through CSV and model files.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, ErrorClass, Result};
use crate::eval::{self, Space, SplitTag};
use crate::fixture::{self, FixtureKind};
use crate::ingest::{self, Aggregation, SnapshotSeries};
use crate::model::{self, LossMode};
use crate::preprocess::{self, Direction};
use crate::train::{self, GradCheckConfig, TrainConfig};

/// Block errors above this fail `grad-check`.
pub const GRAD_CHECK_FAIL_THRESHOLD: f64 = 1e-4;

#[derive(Debug, Parser)]
#[command(name = "prognost", about = "LSTM vibration forecasting for bearing fault prognostics")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a `timestamp,value` series from an IMS directory or a CSV column
    Ingest(IngestArgs),
    /// Fill short gaps and replace outliers
    Preprocess(PreprocessArgs),
    /// Scale, window, split and train a model
    Train(TrainArgs),
    /// Write metrics and an actual-versus-predicted trace
    Evaluate(EvaluateArgs),
    /// Predict the value following one window
    Predict(PredictArgs),
    /// Compare BPTT gradients with central finite differences
    GradCheck(GradCheckArgs),
    /// Write a deterministic synthetic series
    GenFixture(GenFixtureArgs),
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("source").required(true).args(["ims_dir", "csv"])))]
pub struct IngestArgs {
    /// IMS test directory with one file per snapshot
    #[arg(long, value_name = "DIR")]
    pub ims_dir: Option<PathBuf>,
    /// Number of columns in each IMS file
    #[arg(long, value_name = "N", default_value_t = 4)]
    pub channels: usize,
    /// Zero-based IMS column to aggregate
    #[arg(long, value_name = "C", default_value_t = 0)]
    pub channel: usize,
    /// Snapshot reduction: rms, mean_abs or peak
    #[arg(long, value_name = "METHOD", default_value = "rms")]
    pub agg: String,
    /// Comma-separated input file
    #[arg(long, value_name = "FILE", conflicts_with_all = ["ims_dir"])]
    pub csv: Option<PathBuf>,
    /// Zero-based CSV column holding the values
    #[arg(long, value_name = "V", default_value_t = 0)]
    pub value_col: usize,
    /// Zero-based CSV column holding timestamps (row index when omitted)
    #[arg(long, value_name = "T")]
    pub ts_col: Option<usize>,
    /// Output series CSV
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    /// Input series CSV
    #[arg(long = "in", value_name = "FILE")]
    pub input: PathBuf,
    /// Output series CSV
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Odd centered window for the rolling median
    #[arg(long, value_name = "N", default_value_t = preprocess::DEFAULT_OUTLIER_WINDOW)]
    pub outlier_window: usize,
    /// Replace points more than K median absolute deviations away
    #[arg(long, value_name = "K", default_value_t = preprocess::DEFAULT_OUTLIER_K)]
    pub outlier_k: f64,
    /// Longest run of missing values to interpolate
    #[arg(long, value_name = "N", default_value_t = preprocess::DEFAULT_MAX_GAP)]
    pub max_gap: usize,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Clean series CSV
    #[arg(long = "in", value_name = "FILE")]
    pub input: PathBuf,
    /// `key = value` config file; flags below override it
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Initialization seed
    #[arg(long, value_name = "S")]
    pub seed: Option<u64>,
    /// Hidden sizes per layer, e.g. 128,64
    #[arg(long, value_name = "LIST")]
    pub hidden_dims: Option<String>,
    /// Adam learning rate
    #[arg(long, value_name = "LR")]
    pub learning_rate: Option<f64>,
    /// Windows per optimizer step
    #[arg(long, value_name = "N")]
    pub batch_size: Option<usize>,
    /// Passes over the training windows
    #[arg(long, value_name = "N")]
    pub epochs: Option<usize>,
    /// Input window length
    #[arg(long, value_name = "W")]
    pub window: Option<usize>,
    /// Loss: mse or bce
    #[arg(long, value_name = "MODE")]
    pub loss_mode: Option<String>,
    /// Global gradient-norm clip
    #[arg(long, value_name = "NORM")]
    pub clip_norm: Option<f64>,
    /// Fraction of windows used for training
    #[arg(long, value_name = "R")]
    pub train_ratio: Option<f64>,
    /// Output model file
    #[arg(long, value_name = "FILE")]
    pub model_out: PathBuf,
    /// Output per-epoch report CSV
    #[arg(long, value_name = "FILE")]
    pub report_out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Model file written by `train`
    #[arg(long, value_name = "FILE")]
    pub model: PathBuf,
    /// Clean series CSV
    #[arg(long = "in", value_name = "FILE")]
    pub input: PathBuf,
    /// Output metrics CSV
    #[arg(long, value_name = "FILE")]
    pub metrics_out: PathBuf,
    /// Output trace CSV
    #[arg(long, value_name = "FILE")]
    pub trace_out: PathBuf,
    /// Report in scaled or original units
    #[arg(long, value_name = "SPACE", default_value = "scaled")]
    pub space: String,
    /// Fraction of windows treated as training data
    #[arg(long, value_name = "R", default_value_t = preprocess::DEFAULT_TRAIN_RATIO)]
    pub train_ratio: f64,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Model file
    #[arg(long, value_name = "FILE")]
    pub model: PathBuf,
    /// Comma-separated window values
    #[arg(long, value_name = "LIST", allow_hyphen_values = true)]
    pub window: String,
    /// Units of the window and the printed value
    #[arg(long, value_name = "SPACE", default_value = "scaled")]
    pub space: String,
}

#[derive(Debug, Args)]
pub struct GradCheckArgs {
    /// Hidden sizes per layer
    #[arg(long, value_name = "LIST", default_value = "4,3")]
    pub dims: String,
    /// Seed for parameters and probe data
    #[arg(long, value_name = "S", default_value_t = 7)]
    pub seed: u64,
    /// Finite-difference step
    #[arg(long, value_name = "EPS", default_value_t = 1e-6)]
    pub eps: f64,
    /// Window length of the probe
    #[arg(long, value_name = "W", default_value_t = 5)]
    pub window: usize,
    /// Windows in the probe batch
    #[arg(long, value_name = "N", default_value_t = 2)]
    pub batch: usize,
    /// mse, bce or both
    #[arg(long, value_name = "MODE", default_value = "both")]
    pub loss: String,
}

#[derive(Debug, Args)]
pub struct GenFixtureArgs {
    /// sine or degradation
    #[arg(long, value_name = "KIND")]
    pub kind: String,
    /// Number of points
    #[arg(long, value_name = "N")]
    pub n: usize,
    /// Noise seed for the degradation fixture
    #[arg(long, value_name = "S", default_value_t = 0)]
    pub seed: u64,
    /// Output series CSV
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

/// Run with process arguments (including the program name) and return the
/// exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_with(argv, &mut stdout.lock(), &mut stderr.lock())
}

pub fn run_with<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{text}");
                    0
                }
                _ => {
                    let _ = write!(err, "{text}");
                    ErrorClass::Usage.exit_code()
                }
            };
        }
    };
    match dispatch(cli.command, out, err) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.class().exit_code()
        }
    }
}

fn parse_list(text: &str, what: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("invalid {what} value {t:?}")))
        })
        .collect()
}

fn dataset_label(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "series".into())
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn dispatch(cmd: Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    match cmd {
        Command::Ingest(a) => ingest_cmd(a, err),
        Command::Preprocess(a) => preprocess_cmd(a, err),
        Command::Train(a) => train_cmd(a, err),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Predict(a) => predict_cmd(a, out),
        Command::GradCheck(a) => grad_check_cmd(a, out),
        Command::GenFixture(a) => {
            let kind: FixtureKind = a.kind.parse()?;
            fixture::generate(kind, a.n, a.seed)?.write_csv(&a.out)?;
            Ok(0)
        }
    }
}

fn ingest_cmd(a: IngestArgs, err: &mut dyn Write) -> Result<i32> {
    let series = match (&a.ims_dir, &a.csv) {
        (Some(dir), _) => {
            let agg: Aggregation = a.agg.parse()?;
            let (series, scan) = ingest::ingest_ims(dir, a.channels, a.channel, agg)?;
            for name in &scan.skipped {
                let _ = writeln!(err, "skipped {name}");
            }
            series
        }
        (None, Some(csv)) => ingest::load_csv_series(csv, a.value_col, a.ts_col)?,
        (None, None) => return Err(Error::Config("one of --ims-dir or --csv is required".into())),
    };
    series.write_csv(&a.out)?;
    Ok(0)
}

fn preprocess_cmd(a: PreprocessArgs, err: &mut dyn Write) -> Result<i32> {
    let raw = SnapshotSeries::read_csv(&a.input)?;
    let filled = preprocess::fill_missing(&raw, a.max_gap)?;
    let (clean, replaced) = preprocess::remove_outliers(&filled, a.outlier_window, a.outlier_k)?;
    let _ = writeln!(
        err,
        "{} points, {} dropped at the edges, {} outliers replaced",
        clean.len(),
        raw.len() - filled.len(),
        replaced.len()
    );
    clean.write_csv(&a.out)?;
    Ok(0)
}

fn train_config(a: &TrainArgs) -> Result<TrainConfig> {
    let mut cfg = match &a.config {
        Some(path) => TrainConfig::from_file(path)?,
        None => TrainConfig::default(),
    };
    let overrides: [(&str, Option<String>); 9] = [
        ("hidden_dims", a.hidden_dims.clone()),
        ("learning_rate", a.learning_rate.map(|v| v.to_string())),
        ("batch_size", a.batch_size.map(|v| v.to_string())),
        ("epochs", a.epochs.map(|v| v.to_string())),
        ("window", a.window.map(|v| v.to_string())),
        ("loss_mode", a.loss_mode.clone()),
        ("seed", a.seed.map(|v| v.to_string())),
        ("clip_norm", a.clip_norm.map(|v| v.to_string())),
        ("train_ratio", a.train_ratio.map(|v| v.to_string())),
    ];
    for (key, value) in overrides {
        if let Some(v) = value {
            cfg.set(key, &v)?;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn train_cmd(a: TrainArgs, err: &mut dyn Write) -> Result<i32> {
    let cfg = train_config(&a)?;
    let series = SnapshotSeries::read_csv(&a.input)?;
    let (split, scaler) = preprocess::prepare_split(&series, cfg.window, cfg.train_ratio)?;
    let (mut model, mut report) = train::train(&split, &cfg)?;
    model.set_scaler(Some(scaler));
    model::save_model(&model, &a.model_out)?;
    report.model_path = Some(a.model_out.clone());
    report.write_csv(&a.report_out)?;
    if let Some(last) = report.epochs.last() {
        let _ = writeln!(
            err,
            "trained {} epochs in {:.1?}: train loss {}, test rmse {}",
            last.epoch, report.wall_time, last.train_loss, last.test_rmse
        );
    }
    Ok(0)
}

fn evaluate_cmd(a: EvaluateArgs) -> Result<i32> {
    let space: Space = a.space.parse()?;
    let model = model::load_model(&a.model)?;
    let scaler = *model
        .scaler()
        .ok_or_else(|| Error::Validation("model file carries no scaler line".into()))?;
    let window = model
        .window()
        .ok_or_else(|| Error::Validation("model file carries no window line".into()))?;
    let series = SnapshotSeries::read_csv(&a.input)?;
    let scaled = preprocess::apply_scaler(&scaler, &series.values(), Direction::Forward).values;
    let ds = preprocess::make_windows(&series.with_values(&scaled)?, window)?;
    let split = preprocess::split_train_test(&ds, a.train_ratio)?;
    let trace = eval::split_trace(&model, &split, Some(&scaler), space)?;
    trace.write_csv(&a.trace_out)?;

    let label = dataset_label(&a.input);
    let persistence = eval::persistence_trace(&split.test, Some(&scaler), space, SplitTag::Test)?;
    let rows = vec![
        (format!("{label}/train"), trace.subset(SplitTag::Train).metrics()?),
        (format!("{label}/test"), trace.subset(SplitTag::Test).metrics()?),
        (format!("{label}/test_persistence"), persistence.metrics()?),
    ];
    write_file(&a.metrics_out, &eval::metrics_to_csv(&rows))?;
    Ok(0)
}

fn predict_cmd(a: PredictArgs, out: &mut dyn Write) -> Result<i32> {
    let space: Space = a.space.parse()?;
    let model = model::load_model(&a.model)?;
    let mut window = parse_list(&a.window, "window")?;
    let scaler = match space {
        Space::Scaled => None,
        Space::Original => Some(
            *model
                .scaler()
                .ok_or_else(|| Error::Validation("model file carries no scaler line".into()))?,
        ),
    };
    if let Some(s) = &scaler {
        window = preprocess::apply_scaler(s, &window, Direction::Forward).values;
    }
    let mut y = model::predict(&model, &window)?;
    if let Some(s) = &scaler {
        y = s.inverse(y);
    }
    let _ = writeln!(out, "{y}");
    Ok(0)
}

fn grad_check_cmd(a: GradCheckArgs, out: &mut dyn Write) -> Result<i32> {
    let modes = match a.loss.as_str() {
        "both" => vec![LossMode::Mse, LossMode::Bce],
        other => vec![other.parse()?],
    };
    let dims = train::parse_dims(&a.dims)?;
    let mut failed = false;
    for loss_mode in modes {
        let report = train::grad_check(&GradCheckConfig {
            hidden_dims: dims.clone(),
            window: a.window,
            batch: a.batch,
            seed: a.seed,
            eps: a.eps,
            loss_mode,
        })?;
        for b in &report.blocks {
            let _ = writeln!(
                out,
                "{} {} max_rel_error {:e} at ({},{}) analytic {:e} numeric {:e}",
                loss_mode.as_str(),
                b.block,
                b.max_rel_error,
                b.worst_row,
                b.worst_col,
                b.analytic,
                b.numeric
            );
        }
        let worst = report.max_rel_error();
        let _ = writeln!(out, "{} max_rel_error {:e}", loss_mode.as_str(), worst);
        failed |= !(worst <= GRAD_CHECK_FAIL_THRESHOLD);
    }
    Ok(if failed { ErrorClass::Numeric.exit_code() } else { 0 })
}
