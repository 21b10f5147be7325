//! End-to-end experiment: load, balance, standardize, split, train every
//! fold, report. Also the batch feature extractor, single-checkpoint
//! evaluation and report assembly behind the command-line subcommands.
//!
//! Output layout of a run:
//!
//! ```text
//! <out>/run.toml            resolved configuration
//! <out>/manifest.csv        id,label,fold of the preprocessed dataset
//! <out>/fold_<i>/history.jsonl, model.ckpt, metrics.json, split.json
//! <out>/report.csv, report.json, plotdata.csv
//! ```

use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{
    self, apply_scaler_to_dataset, balance_classes, load_dataset, load_dataset_with, standardize_features,
    stratified_kfold, Dataset, DatasetSchema, FoldSplit, ScalerParams,
};
use crate::error::{Error, Result};
use crate::features::{extract_feature_vector, FeatureConfig};
use crate::metrics::{aggregate, CvReport, FoldMetrics};
use crate::model::{load_checkpoint, save_checkpoint, ModelSpec};
use crate::rng;
use crate::training::{evaluate_samples, train_fold_with, EpochRecord, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureMode {
    /// Use the feature columns of the table.
    Shipped,
    /// Recompute the features from the scans.
    Regenerated,
}

impl std::str::FromStr for FeatureMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shipped" => Ok(FeatureMode::Shipped),
            "regenerated" => Ok(FeatureMode::Regenerated),
            _ => Err(Error::Config(format!(
                "feature mode must be shipped or regenerated, got `{s}`"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StandardizeScope {
    /// Fit on the whole (balanced) dataset before splitting.
    Global,
    /// Fit on each fold's training part, apply to its validation part.
    PerFold,
}

impl std::str::FromStr for StandardizeScope {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "global" => Ok(StandardizeScope::Global),
            "per-fold" => Ok(StandardizeScope::PerFold),
            _ => Err(Error::Config(format!(
                "standardize must be global or per-fold, got `{s}`"
            ))),
        }
    }
}

/// Everything a run needs. Every field has a default; the defaults follow
/// the reference protocol (balanced classes, global standardization,
/// 10 folds, Adam at 1e-3, batch 32, up to 100 epochs, early stopping with
/// min delta 1e-4 and patience 5).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub image_dir: PathBuf,
    pub features_table: PathBuf,
    pub out_dir: PathBuf,
    /// Master seed of every random stream; replaces `train.seed`.
    pub seed: u64,
    pub feature_mode: FeatureMode,
    pub balance: bool,
    pub standardize: StandardizeScope,
    /// Fit and apply the global scaler before balancing instead of after.
    pub standardize_first: bool,
    pub folds: usize,
    pub parallel_folds: usize,
    /// Replace the outputs of an earlier run in `out_dir` instead of refusing.
    pub overwrite: bool,
    /// Start every fold from these weights instead of a random init.
    pub init_checkpoint: Option<PathBuf>,
    pub schema: DatasetSchema,
    pub features: FeatureConfig,
    pub model: ModelSpec,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            image_dir: PathBuf::from("data/images"),
            features_table: PathBuf::from("data/features.csv"),
            out_dir: PathBuf::from("runs/cv"),
            seed: 42,
            feature_mode: FeatureMode::Shipped,
            balance: true,
            standardize: StandardizeScope::Global,
            standardize_first: false,
            folds: 10,
            parallel_folds: 1,
            overwrite: false,
            init_checkpoint: None,
            schema: DatasetSchema::default(),
            features: FeatureConfig::default(),
            model: ModelSpec::default(),
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        RunConfig::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::Config(format!("folds must be at least 2, got {}", self.folds)));
        }
        if self.standardize_first && self.standardize == StandardizeScope::PerFold {
            return Err(Error::Config("standardize_first needs global standardization".into()));
        }
        if self.parallel_folds == 0 {
            return Err(Error::Config("parallel_folds must be at least 1".into()));
        }
        let (h, w, _) = self.model.image_input_shape;
        if self.schema.image_size != (h, w) {
            return Err(Error::Config(format!(
                "scans are {:?} but the model expects {h}x{w}",
                self.schema.image_size
            )));
        }
        self.model.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.train.validate()
    }
}

/// The dataset after loading and preprocessing, with its folds.
pub struct Prepared {
    pub dataset: Dataset,
    pub folds: Vec<FoldSplit>,
    /// Set for global standardization.
    pub scaler: Option<ScalerParams>,
}

fn load(cfg: &RunConfig) -> Result<Dataset> {
    match cfg.feature_mode {
        FeatureMode::Shipped => load_dataset(&cfg.image_dir, &cfg.features_table, &cfg.schema),
        FeatureMode::Regenerated => {
            let fc = FeatureConfig {
                image_size: Some(cfg.schema.image_size),
                ..cfg.features.clone()
            };
            load_dataset_with(&cfg.image_dir, &cfg.features_table, &cfg.schema, |img| {
                extract_feature_vector(img, &fc)
            })
        }
    }
}

/// Loads the data, balances it, standardizes it (global scope) and splits
/// it into stratified folds.
pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    let mut ds = load(cfg)?;
    log::info!("loaded {} samples, class counts {:?}", ds.len(), ds.class_counts());
    let mut scaler = None;
    let global = cfg.standardize == StandardizeScope::Global;
    if global && cfg.standardize_first {
        let (d, s) = standardize_features(&ds)?;
        (ds, scaler) = (d, Some(s));
    }
    if cfg.balance {
        ds = balance_classes(&ds, rng::derive_seed(cfg.seed, "balance", 0))?;
        log::info!("balanced to {} samples, class counts {:?}", ds.len(), ds.class_counts());
    }
    if global && !cfg.standardize_first {
        let (d, s) = standardize_features(&ds)?;
        (ds, scaler) = (d, Some(s));
    }
    let folds = stratified_kfold(&ds, cfg.folds, rng::derive_seed(cfg.seed, "split", 0))?;
    Ok(Prepared {
        dataset: ds,
        folds,
        scaler,
    })
}

fn write_file(path: &Path, body: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, body).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))
}

pub fn fold_dir(out: &Path, fold: usize) -> PathBuf {
    out.join(format!("fold_{fold}"))
}

/// Refuses to reuse an output directory holding an earlier run unless
/// `overwrite` is set, in which case the earlier outputs are removed.
fn claim_out_dir(cfg: &RunConfig) -> Result<()> {
    let out = &cfg.out_dir;
    let marker = out.join("run.toml");
    if marker.exists() {
        if !cfg.overwrite {
            return Err(Error::Config(format!(
                "{} already holds a run; pass --overwrite to replace it",
                out.display()
            )));
        }
        let entries = std::fs::read_dir(out).map_err(|e| Error::io(format!("listing {}", out.display()), e))?;
        for entry in entries.flatten() {
            let path = entry.path();
            let name = entry.file_name().to_string_lossy().into_owned();
            let ours = name.starts_with("fold_")
                || matches!(
                    name.as_str(),
                    "run.toml" | "manifest.csv" | "report.csv" | "report.json" | "plotdata.csv"
                );
            if !ours {
                continue;
            }
            let res = if path.is_dir() {
                std::fs::remove_dir_all(&path)
            } else {
                std::fs::remove_file(&path)
            };
            res.map_err(|e| Error::io(format!("removing {}", path.display()), e))?;
        }
    }
    create_dir(out)?;
    write_file(&marker, cfg.to_toml())
}

fn checkpoint_metadata(cfg: &RunConfig, fold: usize, best_epoch: usize) -> serde_json::Value {
    serde_json::json!({
        "fold": fold,
        "best_epoch": best_epoch,
        "feature_mode": cfg.feature_mode,
        "features": cfg.features,
        "schema": cfg.schema,
        "standardize": cfg.standardize,
        "seed": cfg.seed,
    })
}

/// Trains one fold and writes its directory. Returns its validation metrics.
pub fn run_fold(cfg: &RunConfig, prepared: &Prepared, fold: &FoldSplit) -> Result<FoldMetrics> {
    let i = fold.fold_index;
    let dir = fold_dir(&cfg.out_dir, i);
    create_dir(&dir)?;
    write_file(&dir.join("split.json"), serde_json::to_string_pretty(fold)?)?;

    let (ds, scaler) = match prepared.scaler {
        Some(s) => (prepared.dataset.clone(), s),
        None => {
            let train = prepared.dataset.select(&fold.train_ids)?;
            let s = ScalerParams::fit(train.samples().iter().map(|x| &x.features))?;
            (apply_scaler_to_dataset(&prepared.dataset, &s)?, s)
        }
    };

    let mut train_cfg = cfg.train.clone();
    train_cfg.seed = cfg.seed;
    let history_path = dir.join("history.jsonl");
    let mut history_file = std::io::BufWriter::new(
        std::fs::File::create(&history_path)
            .map_err(|e| Error::io(format!("writing {}", history_path.display()), e))?,
    );
    let init = match &cfg.init_checkpoint {
        Some(p) => Some(load_checkpoint(p)?.model.snapshot()),
        None => None,
    };
    let (trained, _history) = train_fold_with(
        &cfg.model,
        fold,
        &ds,
        &train_cfg,
        init.as_deref(),
        |h: &[EpochRecord]| {
            let rec = h.last().expect("hook sees at least one epoch");
            serde_json::to_writer(&mut history_file, rec)?;
            writeln!(history_file)
                .and_then(|_| history_file.flush())
                .map_err(|e| Error::io("writing history", e))
        },
    )?;

    save_checkpoint(
        &dir.join("model.ckpt"),
        &trained.model,
        &scaler,
        checkpoint_metadata(cfg, i, trained.best_epoch),
    )?;
    write_file(
        &dir.join("metrics.json"),
        serde_json::to_string_pretty(&trained.val_metrics)?,
    )?;
    log::info!(
        "fold {i}: best epoch {} val_loss {:.6} accuracy {:.4} auc {:.4}",
        trained.best_epoch,
        trained.best_val_loss,
        trained.val_metrics.accuracy,
        trained.val_metrics.auc
    );
    Ok(trained.val_metrics)
}

/// Runs the whole cross-validation protocol and writes every output.
pub fn run_cv(cfg: &RunConfig) -> Result<CvReport> {
    cfg.validate()?;
    log::info!("resolved configuration:\n{}", cfg.to_toml());
    let prepared = prepare(cfg)?;
    claim_out_dir(cfg)?;
    data::write_manifest(&cfg.out_dir.join("manifest.csv"), &prepared.dataset, &prepared.folds)?;

    let run = |fold: &FoldSplit| {
        run_fold(cfg, &prepared, fold).map_err(|e| Error::Fold {
            fold: fold.fold_index,
            source: Box::new(e),
        })
    };
    let results: Vec<Result<FoldMetrics>> = if cfg.parallel_folds > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.parallel_folds)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        pool.install(|| prepared.folds.par_iter().map(run).collect())
    } else {
        let mut out = Vec::new();
        for f in &prepared.folds {
            let r = run(f);
            let failed = r.is_err();
            out.push(r);
            if failed {
                break;
            }
        }
        out
    };
    let per_fold = results.into_iter().collect::<Result<Vec<_>>>()?;
    let report = aggregate(&per_fold)?;
    report.write_to(&cfg.out_dir)?;
    Ok(report)
}

/// Trains a single fold (1-based) of the configured protocol.
pub fn train_fold_cmd(cfg: &RunConfig, fold: usize) -> Result<FoldMetrics> {
    cfg.validate()?;
    if fold == 0 || fold > cfg.folds {
        return Err(Error::Config(format!("fold must be in 1..={}, got {fold}", cfg.folds)));
    }
    let dir = fold_dir(&cfg.out_dir, fold);
    if dir.join("metrics.json").exists() && !cfg.overwrite {
        return Err(Error::Config(format!(
            "{} already holds a trained fold; pass --overwrite to replace it",
            dir.display()
        )));
    }
    create_dir(&cfg.out_dir)?;
    let prepared = prepare(cfg)?;
    run_fold(cfg, &prepared, &prepared.folds[fold - 1]).map_err(|e| Error::Fold {
        fold,
        source: Box::new(e),
    })
}

/// Rebuilds the report files from the `fold_*/metrics.json` files in `out`.
pub fn report_cmd(out: &Path) -> Result<CvReport> {
    let mut per_fold = Vec::new();
    let entries = std::fs::read_dir(out).map_err(|e| Error::io(format!("listing {}", out.display()), e))?;
    for entry in entries.flatten() {
        let path = entry.path().join("metrics.json");
        let is_fold = entry.file_name().to_string_lossy().starts_with("fold_");
        if is_fold && path.exists() {
            let text =
                std::fs::read_to_string(&path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
            per_fold.push(serde_json::from_str::<FoldMetrics>(&text)?);
        }
    }
    per_fold.sort_by_key(|f| f.fold);
    let report = aggregate(&per_fold)?;
    report.write_to(out)?;
    Ok(report)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ExtractSummary {
    pub processed: usize,
    pub failed: usize,
}

/// Computes the feature vector of every image in `image_dir` and writes a
/// feature table sorted by id. Unreadable images are logged and counted.
/// With `labels`, a label column is filled from the map.
pub fn extract_features_cmd(
    image_dir: &Path,
    out_table: &Path,
    cfg: &FeatureConfig,
    extensions: &[String],
    labels: Option<&HashMap<String, u8>>,
) -> Result<ExtractSummary> {
    let index = data::index_images(image_dir, extensions)?;
    let mut files: Vec<(String, PathBuf)> = index
        .into_iter()
        .flat_map(|(id, paths)| paths.into_iter().map(move |p| (id.clone(), p)))
        .collect();
    files.sort();
    let results: Vec<_> = files
        .par_iter()
        .map(|(id, path)| {
            let r = data::read_gray_image(path).and_then(|img| extract_feature_vector(&img, cfg));
            (id, path, r)
        })
        .collect();
    let mut rows = Vec::new();
    let mut summary = ExtractSummary::default();
    for (id, path, r) in results {
        match r {
            Ok(fv) => {
                summary.processed += 1;
                rows.push((id.clone(), labels.and_then(|m| m.get(id).copied()), fv));
            }
            Err(e) => {
                summary.failed += 1;
                log::warn!("skipping {}: {e}", path.display());
            }
        }
    }
    data::write_feature_table(out_table, &rows)?;
    Ok(summary)
}

/// Reads an `id,label` mapping from any table with those columns.
pub fn read_labels(table: &Path, schema: &DatasetSchema) -> Result<HashMap<String, u8>> {
    let mut rdr = csv::Reader::from_path(table)?;
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("{} has no column `{name}`", table.display())))
    };
    let (ic, lc) = (col(&schema.id_column)?, col(&schema.label_column)?);
    let mut map = HashMap::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let label = match rec.get(lc).map(str::trim) {
            Some("0") => 0,
            Some("1") => 1,
            other => {
                return Err(Error::Parse {
                    row: row + 1,
                    column: schema.label_column.clone(),
                    msg: format!("label must be 0 or 1, got {other:?}"),
                })
            }
        };
        map.insert(rec.get(ic).unwrap_or_default().trim().to_string(), label);
    }
    Ok(map)
}

/// Evaluates a saved model on the configured dataset, optionally restricted
/// to `ids`. Features are prepared the way the checkpoint's run prepared
/// them: same feature mode, same scaler.
pub fn evaluate_cmd(checkpoint: &Path, cfg: &RunConfig, ids: Option<&[String]>) -> Result<FoldMetrics> {
    let ckpt = load_checkpoint(checkpoint)?;
    let spec = ckpt.model.spec();
    let (h, w, _) = spec.image_input_shape;
    if cfg.schema.image_size != (h, w) {
        return Err(Error::Evaluation(format!(
            "checkpoint expects {h}x{w} scans, dataset schema declares {:?}",
            cfg.schema.image_size
        )));
    }
    let mut run_cfg = cfg.clone();
    let meta = &ckpt.metadata;
    if let Some(mode) = meta
        .get("feature_mode")
        .and_then(|v| serde_json::from_value(v.clone()).ok())
    {
        run_cfg.feature_mode = mode;
    }
    if let Some(fc) = meta
        .get("features")
        .and_then(|v| serde_json::from_value(v.clone()).ok())
    {
        run_cfg.features = fc;
    }
    let fold = meta.get("fold").and_then(|v| v.as_u64()).unwrap_or(0) as usize;

    let ds = load(&run_cfg).map_err(|e| Error::Evaluation(e.to_string()))?;
    let ds = match ids {
        Some(ids) => ds.select(ids)?,
        None => ds,
    };
    if ds.is_empty() {
        return Err(Error::Evaluation("dataset is empty".into()));
    }
    let ds = apply_scaler_to_dataset(&ds, &ckpt.scaler)?;
    let samples: Vec<_> = ds.samples().iter().collect();
    evaluate_samples(&ckpt.model, &samples, cfg.train.batch_size, fold)
}

/// Validation ids stored in a fold's `split.json`.
pub fn read_split(path: &Path) -> Result<FoldSplit> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    Ok(serde_json::from_str(&text)?)
}
