//! `anomstream` command-line driver.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 numeric divergence.

use anomstream::ingest::{synthetic_stream, write_csv, IngestError};
use anomstream::metrics::{MetricReport, DEFAULT_FPR_MAX};
use anomstream::pipeline::{evaluate_log, run, Mode, PipelineError, RunConfig};
use anomstream::threshold::{adaptive_threshold, ks_statistic, pp_points, ThresholdError};
use clap::{Args, Parser, Subcommand};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use thiserror::Error;

#[derive(Parser, Debug)]
#[command(name = "anomstream", version)]
#[command(about = "Online network anomaly detection with adaptive thresholds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Bootstrap on the first round, replay the stream, evaluate on the test part
    Run(RunArgs),
    /// Fit the best distribution to a CSV column and report its quantile
    Fit(FitArgs),
    /// Score an alert or verdict log against a truth CSV
    Eval(EvalArgs),
    /// Write a synthetic labeled stream as CSV
    Synth(SynthArgs),
}

#[derive(Args, Debug)]
struct ConfigArgs {
    /// Run configuration (TOML); defaults apply when omitted
    #[arg(long)]
    config: Option<PathBuf>,

    /// Random seed; overrides the config file
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    common: ConfigArgs,

    /// adaptive, fixed_threshold, scorer_only, initial_only or offline
    #[arg(long)]
    mode: Option<Mode>,

    /// Feature CSV; overrides the config file
    #[arg(long)]
    csv: Option<PathBuf>,

    /// Column-role schema for the feature CSV
    #[arg(long)]
    dataset_schema: Option<PathBuf>,

    /// Output directory for the alert log, trajectories and reports
    #[arg(long, default_value = "anomstream-out")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct FitArgs {
    /// CSV file holding the sample
    csv: PathBuf,

    /// Column to fit
    #[arg(long)]
    column: String,

    /// Lower-tail probability of the reported quantile
    #[arg(long, default_value_t = 0.98, allow_negative_numbers = true)]
    percentile: f64,

    /// Directory for the P-P plot data (`pp.csv`)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Alert or verdict log with `index`, `label` and optionally `score`
    log: PathBuf,

    /// Truth CSV with `label` and optionally `index`
    truth: PathBuf,

    /// Upper false-positive rate of the partial AUC
    #[arg(long, default_value_t = DEFAULT_FPR_MAX)]
    fpr_max: f64,

    /// Directory for `eval.csv`
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[command(flatten)]
    common: ConfigArgs,

    /// Number of records; overrides the config file
    #[arg(long)]
    n: Option<usize>,

    /// Output directory for `stream.csv`
    #[arg(long, default_value = "anomstream-out")]
    out: PathBuf,
}

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Threshold(#[from] ThresholdError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("{0}")]
    Data(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Pipeline(e) if e.is_numeric_divergence() => 3,
            CliError::Pipeline(PipelineError::Config(_)) => 1,
            CliError::Threshold(ThresholdError::InvalidPercentile(_)) => 1,
            CliError::Threshold(ThresholdError::NonFinite) => 3,
            _ => 2,
        }
    }
}

fn load_config(args: &ConfigArgs) -> Result<RunConfig, CliError> {
    let mut config = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if args.seed.is_some() {
        config.seed = args.seed;
    }
    if config.seed.is_none() {
        return Err(CliError::Usage("a seed is required: pass --seed or set `seed` in the config".into()));
    }
    Ok(config)
}

fn cmd_run(args: RunArgs) -> Result<(), CliError> {
    let mut config = load_config(&args.common)?;
    if let Some(mode) = args.mode {
        config.mode = mode;
    }
    if let Some(csv) = args.csv {
        config.data.csv = Some(csv);
    }
    if let Some(schema) = args.dataset_schema {
        config.data.schema = Some(schema);
    }
    log::info!("mode {}, seed {}", config.mode, config.seed.unwrap_or_default());
    let output = run(&config)?;
    let mut written = output.write_artifacts(&args.out)?;
    std::fs::write(args.out.join("config.toml"), config.to_toml()).map_err(PipelineError::from)?;
    written.push("config.toml".into());
    println!("wrote {} to {}", written.join(", "), args.out.display());
    if let Some(text) = output.metrics_text() {
        print!("{text}");
    }
    Ok(())
}

fn read_column(path: &Path, column: &str) -> Result<Vec<f64>, CliError> {
    if !path.exists() {
        return Err(IngestError::MissingFile(path.to_path_buf()).into());
    }
    let mut reader = csv::Reader::from_path(path).map_err(IngestError::from)?;
    let idx = reader
        .headers()
        .map_err(IngestError::from)?
        .iter()
        .position(|h| h.trim() == column)
        .ok_or_else(|| IngestError::SchemaMismatch(format!("{}: no column {column:?}", path.display())))?;
    let mut values = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(IngestError::from)?;
        let cell = record.get(idx).unwrap_or("").trim();
        let v: f64 = cell
            .parse()
            .map_err(|_| CliError::Data(format!("row {}: {column} value {cell:?} is not numeric", row + 1)))?;
        values.push(v);
    }
    Ok(values)
}

fn cmd_fit(args: FitArgs) -> Result<(), CliError> {
    let values = read_column(&args.csv, &args.column)?;
    let (threshold, fit) = adaptive_threshold(&values, args.percentile)?;
    let ks = ks_statistic(&values, &fit)?;
    println!("n = {}", values.len());
    println!("family = {}", fit.family);
    println!("location = {}", fit.location);
    println!("scale = {}", fit.scale);
    println!("ks = {ks}");
    println!("percentile = {}", args.percentile);
    println!("threshold = {threshold}");
    if let Some(dir) = args.out {
        let mut body = String::from("x,model_cdf,empirical_cdf\n");
        for (x, model, empirical) in pp_points(&values, &fit) {
            let _ = writeln!(body, "{x},{model},{empirical}");
        }
        std::fs::create_dir_all(&dir).map_err(IngestError::from)?;
        std::fs::write(dir.join("pp.csv"), body).map_err(IngestError::from)?;
        println!("wrote pp.csv to {}", dir.display());
    }
    Ok(())
}

fn pct(x: f64) -> String {
    if x.is_finite() {
        format!("{:.2}", 100.0 * x)
    } else {
        "nan".into()
    }
}

/// Percentage row in the column order Acc, Pre, Rec, F1, FAR, MDR, SPAUC.
fn table_row(m: &MetricReport) -> String {
    [m.accuracy, m.precision_macro, m.recall_macro, m.f1_macro, m.far, m.mdr, m.spauc]
        .iter()
        .map(|&x| pct(x))
        .collect::<Vec<_>>()
        .join(",")
}

const TABLE_HEADER: &str = "acc,pre,rec,f1,far,mdr,spauc";

fn cmd_eval(args: EvalArgs) -> Result<(), CliError> {
    let report = evaluate_log(&args.log, &args.truth, args.fpr_max)?;
    let row = table_row(&report);
    println!("{TABLE_HEADER}");
    println!("{row}");
    if let Some(dir) = args.out {
        std::fs::create_dir_all(&dir).map_err(IngestError::from)?;
        std::fs::write(dir.join("eval.csv"), format!("{TABLE_HEADER}\n{row}\n")).map_err(IngestError::from)?;
    }
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> Result<(), CliError> {
    let config = load_config(&args.common)?;
    let mut spec = config.data.synthetic.clone();
    if let Some(n) = args.n {
        spec.n = n;
    }
    let records = synthetic_stream(&spec, config.seed.unwrap_or_default());
    std::fs::create_dir_all(&args.out).map_err(IngestError::from)?;
    let path = args.out.join("stream.csv");
    write_csv(&path, &records)?;
    let schema = "default_role = \"feature\"\n\n[columns]\nindex = \"ignore\"\nlabel = \"label\"\n";
    std::fs::write(args.out.join("schema.toml"), schema).map_err(IngestError::from)?;
    println!("wrote {} records to {}", records.len(), path.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Synth(a) => cmd_synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
