//! Command-line front-end. Every flag overrides the matching key of the
//! `--config` file; a missing config means the reference defaults.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tumornet::pipeline::{self, FeatureMode, RunConfig, StandardizeScope};
use tumornet::{Error, Result};

#[derive(Parser)]
#[command(
    name = "tumornet",
    version,
    about = "Brain tumor classifier: features, cross-validation, evaluation"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory of the run.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Folds trained concurrently.
    #[arg(long, global = true)]
    parallel_folds: Option<usize>,
    #[arg(long, global = true, value_parser = ["shipped", "regenerated"])]
    feature_mode: Option<String>,
    #[arg(long, global = true, value_parser = ["global", "per-fold"])]
    standardize: Option<String>,
    /// Directory of scans.
    #[arg(long, global = true)]
    image_dir: Option<PathBuf>,
    /// Feature/label table.
    #[arg(long, global = true)]
    features_table: Option<PathBuf>,
    /// Replace an earlier run in the output directory.
    #[arg(long, global = true)]
    overwrite: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Compute the 13 features of every image in a directory.
    ExtractFeatures {
        /// Destination table.
        #[arg(long)]
        table: PathBuf,
        /// Table to copy labels from (id and label columns).
        #[arg(long)]
        labels: Option<PathBuf>,
    },
    /// Run the full k-fold cross-validation.
    RunCv,
    /// Train a single fold of the cross-validation.
    TrainFold {
        /// 1-based fold index.
        #[arg(long)]
        fold: usize,
    },
    /// Evaluate a saved checkpoint on the configured dataset.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Restrict to the validation ids of a fold's split.json.
        #[arg(long)]
        split: Option<PathBuf>,
    },
    /// Rebuild the report files from the fold metrics in `--out`.
    Report,
}

fn resolve(c: &Common) -> Result<RunConfig> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p).map_err(|e| match e {
            Error::Io { context, source } => Error::Config(format!("{context}: {source}")),
            e => e,
        })?,
        None => RunConfig::default(),
    };
    if let Some(v) = c.seed {
        cfg.seed = v;
    }
    if let Some(v) = &c.out {
        cfg.out_dir = v.clone();
    }
    if let Some(v) = c.parallel_folds {
        cfg.parallel_folds = v;
    }
    if let Some(v) = &c.feature_mode {
        cfg.feature_mode = v.parse::<FeatureMode>()?;
    }
    if let Some(v) = &c.standardize {
        cfg.standardize = v.parse::<StandardizeScope>()?;
    }
    if let Some(v) = &c.image_dir {
        cfg.image_dir = v.clone();
    }
    if let Some(v) = &c.features_table {
        cfg.features_table = v.clone();
    }
    cfg.overwrite |= c.overwrite;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = resolve(&cli.common)?;
    match cli.command {
        Command::ExtractFeatures { table, labels } => {
            let labels = labels.map(|p| pipeline::read_labels(&p, &cfg.schema)).transpose()?;
            let s = pipeline::extract_features_cmd(
                &cfg.image_dir,
                &table,
                &cfg.features,
                &cfg.schema.image_extensions,
                labels.as_ref(),
            )?;
            println!("processed {} failed {}", s.processed, s.failed);
        }
        Command::RunCv => {
            let report = pipeline::run_cv(&cfg)?;
            print!("{}", report.to_csv());
        }
        Command::TrainFold { fold } => {
            let m = pipeline::train_fold_cmd(&cfg, fold)?;
            println!("{}", serde_json::to_string_pretty(&m)?);
        }
        Command::Evaluate { checkpoint, split } => {
            let ids = split.map(|p| pipeline::read_split(&p)).transpose()?.map(|s| s.val_ids);
            let m = pipeline::evaluate_cmd(&checkpoint, &cfg, ids.as_deref())?;
            println!("{}", serde_json::to_string_pretty(&m)?);
        }
        Command::Report => {
            let report = pipeline::report_cmd(&cfg.out_dir)?;
            print!("{}", report.to_csv());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
