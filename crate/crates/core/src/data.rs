//! Dataset ingestion and preprocessing: loading scans plus their feature
//! table, dropping majority-class samples to balance the labels, feature
//! standardization and stratified k-fold partitioning.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::ops::{Index, IndexMut};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::GrayImage;
use crate::rng::Rng;

pub const NUM_FEATURES: usize = 13;

/// The thirteen texture features, in canonical column order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Feature {
    Mean,
    Variance,
    StandardDeviation,
    Skewness,
    Kurtosis,
    Entropy,
    Contrast,
    Energy,
    Dissimilarity,
    Correlation,
    Coarseness,
    Asm,
    Homogeneity,
}

impl Feature {
    pub const ALL: [Feature; NUM_FEATURES] = [
        Feature::Mean,
        Feature::Variance,
        Feature::StandardDeviation,
        Feature::Skewness,
        Feature::Kurtosis,
        Feature::Entropy,
        Feature::Contrast,
        Feature::Energy,
        Feature::Dissimilarity,
        Feature::Correlation,
        Feature::Coarseness,
        Feature::Asm,
        Feature::Homogeneity,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Column name used in feature tables.
    pub fn name(self) -> &'static str {
        match self {
            Feature::Mean => "mean",
            Feature::Variance => "variance",
            Feature::StandardDeviation => "standard_deviation",
            Feature::Skewness => "skewness",
            Feature::Kurtosis => "kurtosis",
            Feature::Entropy => "entropy",
            Feature::Contrast => "contrast",
            Feature::Energy => "energy",
            Feature::Dissimilarity => "dissimilarity",
            Feature::Correlation => "correlation",
            Feature::Coarseness => "coarseness",
            Feature::Asm => "asm",
            Feature::Homogeneity => "homogeneity",
        }
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector([f64; NUM_FEATURES]);

impl FeatureVector {
    pub fn new(values: [f64; NUM_FEATURES]) -> Self {
        FeatureVector(values)
    }

    pub fn zeros() -> Self {
        FeatureVector([0.0; NUM_FEATURES])
    }

    pub fn as_array(&self) -> &[f64; NUM_FEATURES] {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl Index<Feature> for FeatureVector {
    type Output = f64;
    fn index(&self, f: Feature) -> &f64 {
        &self.0[f.index()]
    }
}

impl IndexMut<Feature> for FeatureVector {
    fn index_mut(&mut self, f: Feature) -> &mut f64 {
        &mut self.0[f.index()]
    }
}

/// One labeled scan. Label 0 is healthy, 1 is ill.
#[derive(Clone, Debug)]
pub struct Sample {
    pub id: String,
    pub image: Arc<GrayImage>,
    pub features: FeatureVector,
    pub label: u8,
}

#[derive(Clone, Debug, Default)]
pub struct Dataset {
    samples: Vec<Sample>,
    class_counts: [usize; 2],
}

impl Dataset {
    /// Validates labels, feature finiteness and id uniqueness.
    pub fn new(samples: Vec<Sample>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(samples.len());
        let mut class_counts = [0usize; 2];
        for s in &samples {
            if s.label > 1 {
                return Err(Error::Schema(format!("sample `{}` has label {}", s.id, s.label)));
            }
            if !s.features.is_finite() {
                return Err(Error::Schema(format!("sample `{}` has non-finite features", s.id)));
            }
            if !seen.insert(s.id.as_str()) {
                return Err(Error::Schema(format!("duplicate id `{}`", s.id)));
            }
            class_counts[usize::from(s.label)] += 1;
        }
        Ok(Dataset { samples, class_counts })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// `[healthy, ill]`.
    pub fn class_counts(&self) -> [usize; 2] {
        self.class_counts
    }

    pub fn index_of(&self) -> HashMap<&str, usize> {
        self.samples
            .iter()
            .enumerate()
            .map(|(i, s)| (s.id.as_str(), i))
            .collect()
    }

    /// Samples with the given ids, in the order given.
    pub fn select(&self, ids: &[String]) -> Result<Dataset> {
        let index = self.index_of();
        let samples = ids
            .iter()
            .map(|id| {
                index
                    .get(id.as_str())
                    .map(|&i| self.samples[i].clone())
                    .ok_or_else(|| Error::Schema(format!("unknown id `{id}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(samples)
    }

    pub fn with_features(&self, features: Vec<FeatureVector>) -> Result<Dataset> {
        if features.len() != self.len() {
            return Err(Error::shape("feature rows", self.len(), features.len()));
        }
        let samples = self
            .samples
            .iter()
            .zip(features)
            .map(|(s, f)| Sample {
                features: f,
                ..s.clone()
            })
            .collect();
        Dataset::new(samples)
    }
}

/// Where the columns and scans live. The defaults are the canonical
/// column names: `id`, `label` and the thirteen [`Feature::name`]s.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSchema {
    pub id_column: String,
    pub label_column: String,
    /// Table column holding each feature, in canonical order.
    pub feature_columns: Vec<String>,
    pub image_extensions: Vec<String>,
    /// `(height, width)` every scan must have.
    pub image_size: (usize, usize),
}

impl Default for DatasetSchema {
    fn default() -> Self {
        DatasetSchema {
            id_column: "id".into(),
            label_column: "label".into(),
            feature_columns: Feature::ALL.iter().map(|f| f.name().to_string()).collect(),
            image_extensions: vec!["png".into(), "jpg".into(), "jpeg".into()],
            image_size: (240, 240),
        }
    }
}

impl DatasetSchema {
    /// Column names of the public Kaggle "Brain Tumor" table
    /// (`Image`, `Class`, `Mean`, ..., `Coarseness`).
    pub fn kaggle() -> Self {
        DatasetSchema {
            id_column: "Image".into(),
            label_column: "Class".into(),
            feature_columns: [
                "Mean",
                "Variance",
                "Standard Deviation",
                "Skewness",
                "Kurtosis",
                "Entropy",
                "Contrast",
                "Energy",
                "Dissimilarity",
                "Correlation",
                "Coarseness",
                "ASM",
                "Homogeneity",
            ]
            .iter()
            .map(|s| s.to_string())
            .collect(),
            ..DatasetSchema::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.feature_columns.len() != NUM_FEATURES {
            return Err(Error::Schema(format!(
                "schema names {} feature columns, expected {NUM_FEATURES}",
                self.feature_columns.len()
            )));
        }
        Ok(())
    }
}

struct TableRow {
    id: String,
    label: u8,
    features: Option<FeatureVector>,
}

fn read_table(path: &Path, schema: &DatasetSchema, with_features: bool) -> Result<Vec<TableRow>> {
    schema.validate()?;
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(format!("reading {}", path.display()), io),
            other => Error::Schema(format!("{}: {other:?}", path.display())),
        })?;
    let headers = rdr.headers()?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("{} has no column `{name}`", path.display())))
    };
    let id_col = column(&schema.id_column)?;
    let label_col = column(&schema.label_column)?;
    let feature_cols = if with_features {
        schema
            .feature_columns
            .iter()
            .map(|c| column(c))
            .collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };

    let mut rows = Vec::new();
    let mut seen = HashSet::new();
    for (i, record) in rdr.records().enumerate() {
        let row = i + 1;
        let record = record?;
        let cell = |col: usize, name: &str| {
            record.get(col).filter(|s| !s.is_empty()).ok_or_else(|| Error::Parse {
                row,
                column: name.to_string(),
                msg: "missing value".into(),
            })
        };
        let id = cell(id_col, &schema.id_column)?.to_string();
        if !seen.insert(id.clone()) {
            return Err(Error::Schema(format!("duplicate id `{id}` at row {row}")));
        }
        let label = match cell(label_col, &schema.label_column)? {
            "0" => 0,
            "1" => 1,
            other => {
                return Err(Error::Parse {
                    row,
                    column: schema.label_column.clone(),
                    msg: format!("label must be 0 or 1, got `{other}`"),
                })
            }
        };
        let features = if with_features {
            let mut v = [0.0; NUM_FEATURES];
            for (slot, (&col, name)) in v.iter_mut().zip(feature_cols.iter().zip(&schema.feature_columns)) {
                let raw = cell(col, name)?;
                *slot = raw
                    .parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| Error::Parse {
                        row,
                        column: name.clone(),
                        msg: format!("`{raw}` is not a finite number"),
                    })?;
            }
            Some(FeatureVector(v))
        } else {
            None
        };
        rows.push(TableRow { id, label, features });
    }
    Ok(rows)
}

/// Maps file stems to the image files in `dir` carrying one of `extensions`.
pub fn index_images(dir: &Path, extensions: &[String]) -> Result<HashMap<String, Vec<PathBuf>>> {
    let mut index: HashMap<String, Vec<PathBuf>> = HashMap::new();
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(format!("listing {}", dir.display()), e))?;
    for entry in entries {
        let path = entry
            .map_err(|e| Error::io(format!("listing {}", dir.display()), e))?
            .path();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase());
        let stem = path.file_stem().and_then(|s| s.to_str());
        if let (Some(ext), Some(stem)) = (ext, stem) {
            if path.is_file() && extensions.iter().any(|x| x.eq_ignore_ascii_case(&ext)) {
                index.entry(stem.to_string()).or_default().push(path);
            }
        }
    }
    for paths in index.values_mut() {
        paths.sort();
    }
    Ok(index)
}

/// Decodes an image file and converts it to grayscale luminance.
pub fn read_gray_image(path: &Path) -> Result<GrayImage> {
    let img = image::open(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    let rgb = img.to_rgb8();
    GrayImage::from_rgb8(rgb.width() as usize, rgb.height() as usize, rgb.as_raw())
}

fn attach_images(rows: Vec<TableRow>, image_dir: &Path, schema: &DatasetSchema) -> Result<Vec<(TableRow, GrayImage)>> {
    let index = index_images(image_dir, &schema.image_extensions)?;
    let paths = rows
        .iter()
        .map(|r| match index.get(&r.id).map(Vec::as_slice) {
            Some([p]) => Ok(p.clone()),
            Some(many) if many.len() > 1 => Err(Error::Schema(format!(
                "id `{}` matches {} image files",
                r.id,
                many.len()
            ))),
            _ => Err(Error::MissingImage {
                id: r.id.clone(),
                dir: image_dir.to_path_buf(),
            }),
        })
        .collect::<Result<Vec<_>>>()?;
    let (h, w) = schema.image_size;
    let images = paths
        .par_iter()
        .zip(rows.par_iter())
        .map(|(p, r)| {
            let img = read_gray_image(p)?;
            if img.height() != h || img.width() != w {
                return Err(Error::Schema(format!(
                    "image for `{}` is {}x{}, expected {h}x{w}",
                    r.id,
                    img.height(),
                    img.width()
                )));
            }
            Ok(img)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(rows.into_iter().zip(images).collect())
}

/// Loads the feature table and the scan of every row. Row order is kept.
pub fn load_dataset(image_dir: &Path, features_table: &Path, schema: &DatasetSchema) -> Result<Dataset> {
    let rows = read_table(features_table, schema, true)?;
    let samples = attach_images(rows, image_dir, schema)?
        .into_iter()
        .map(|(r, img)| Sample {
            id: r.id,
            image: Arc::new(img),
            features: r.features.expect("feature columns were read"),
            label: r.label,
        })
        .collect();
    Dataset::new(samples)
}

/// Like [`load_dataset`], but only the id and label columns are read; every
/// sample gets the feature vector returned by `extract` for its scan.
pub fn load_dataset_with<F>(
    image_dir: &Path,
    labels_table: &Path,
    schema: &DatasetSchema,
    extract: F,
) -> Result<Dataset>
where
    F: Fn(&GrayImage) -> Result<FeatureVector> + Sync,
{
    let rows = read_table(labels_table, schema, false)?;
    let pairs = attach_images(rows, image_dir, schema)?;
    let features = pairs
        .par_iter()
        .map(|(r, img)| extract(img).map_err(|e| Error::Schema(format!("features of `{}`: {e}", r.id))))
        .collect::<Result<Vec<_>>>()?;
    let samples = pairs
        .into_iter()
        .zip(features)
        .map(|((r, img), features)| Sample {
            id: r.id,
            image: Arc::new(img),
            features,
            label: r.label,
        })
        .collect();
    Dataset::new(samples)
}

/// Randomly drops majority-class samples until both classes have the
/// minority count. Survivors keep their original order.
pub fn balance_classes(ds: &Dataset, seed: u64) -> Result<Dataset> {
    let [healthy, ill] = ds.class_counts();
    if healthy == 0 || ill == 0 {
        return Err(Error::Balance(format!(
            "both classes need samples, have {healthy} healthy and {ill} ill"
        )));
    }
    if healthy == ill {
        return Ok(ds.clone());
    }
    let (major, keep) = if healthy > ill { (0u8, ill) } else { (1u8, healthy) };
    let major_positions: Vec<usize> = ds
        .samples
        .iter()
        .enumerate()
        .filter(|(_, s)| s.label == major)
        .map(|(i, _)| i)
        .collect();
    let mut rng = Rng::seed_from_u64(seed);
    let kept: HashSet<usize> = rand::seq::index::sample(&mut rng, major_positions.len(), keep)
        .into_iter()
        .map(|k| major_positions[k])
        .collect();
    let samples = ds
        .samples
        .iter()
        .enumerate()
        .filter(|(i, s)| s.label != major || kept.contains(i))
        .map(|(_, s)| s.clone())
        .collect();
    Dataset::new(samples)
}

/// Per-feature location and scale (population standard deviation).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalerParams {
    pub mean: [f64; NUM_FEATURES],
    pub std: [f64; NUM_FEATURES],
}

impl ScalerParams {
    pub fn identity() -> Self {
        ScalerParams {
            mean: [0.0; NUM_FEATURES],
            std: [1.0; NUM_FEATURES],
        }
    }

    pub fn fit<'a>(rows: impl IntoIterator<Item = &'a FeatureVector>) -> Result<Self> {
        let rows: Vec<&FeatureVector> = rows.into_iter().collect();
        if rows.is_empty() {
            return Err(Error::Standardize {
                feature: Feature::Mean.name().into(),
                msg: "no samples".into(),
            });
        }
        let n = rows.len() as f64;
        let mut params = ScalerParams::identity();
        for f in Feature::ALL {
            let i = f.index();
            let mean = rows.iter().map(|r| r.0[i]).sum::<f64>() / n;
            let var = rows.iter().map(|r| (r.0[i] - mean).powi(2)).sum::<f64>() / n;
            let std = var.sqrt();
            if !std.is_finite() || std <= 0.0 {
                return Err(Error::Standardize {
                    feature: f.name().into(),
                    msg: format!("column has zero variance (every value is {mean})"),
                });
            }
            params.mean[i] = mean;
            params.std[i] = std;
        }
        Ok(params)
    }
}

pub fn apply_scaler(features: &FeatureVector, params: &ScalerParams) -> FeatureVector {
    let mut out = [0.0; NUM_FEATURES];
    for (i, o) in out.iter_mut().enumerate() {
        *o = (features.0[i] - params.mean[i]) / params.std[i];
    }
    FeatureVector(out)
}

pub fn apply_scaler_to_dataset(ds: &Dataset, params: &ScalerParams) -> Result<Dataset> {
    let features = ds.samples.iter().map(|s| apply_scaler(&s.features, params)).collect();
    ds.with_features(features)
}

/// Rescales every feature column to zero mean and unit population variance.
pub fn standardize_features(ds: &Dataset) -> Result<(Dataset, ScalerParams)> {
    let params = ScalerParams::fit(ds.samples.iter().map(|s| &s.features))?;
    Ok((apply_scaler_to_dataset(ds, &params)?, params))
}

/// One cross-validation fold. `fold_index` is 1-based.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub fold_index: usize,
    pub train_ids: Vec<String>,
    pub val_ids: Vec<String>,
}

/// Shuffles each class with the seeded generator, then deals its samples
/// round-robin over the folds. The dealing position carries over from one
/// class to the next, so fold sizes differ by at most one as well.
/// Ids inside each split follow dataset order.
pub fn stratified_kfold(ds: &Dataset, k: usize, seed: u64) -> Result<Vec<FoldSplit>> {
    if k < 2 {
        return Err(Error::Partition(format!("k must be at least 2, got {k}")));
    }
    let counts = ds.class_counts();
    for (label, &c) in counts.iter().enumerate() {
        if c < k {
            return Err(Error::Partition(format!(
                "class {label} has {c} samples, fewer than k = {k}"
            )));
        }
    }
    let mut rng = Rng::seed_from_u64(seed);
    let mut fold_of = vec![0usize; ds.len()];
    let mut next = 0usize;
    for label in 0..2u8 {
        let mut members: Vec<usize> = ds
            .samples
            .iter()
            .enumerate()
            .filter(|(_, s)| s.label == label)
            .map(|(i, _)| i)
            .collect();
        members.shuffle(&mut rng);
        for i in members {
            fold_of[i] = next;
            next = (next + 1) % k;
        }
    }
    Ok((0..k)
        .map(|f| {
            let (val, train): (Vec<_>, Vec<_>) = ds.samples.iter().zip(&fold_of).partition(|(_, &fold)| fold == f);
            FoldSplit {
                fold_index: f + 1,
                train_ids: train.into_iter().map(|(s, _)| s.id.clone()).collect(),
                val_ids: val.into_iter().map(|(s, _)| s.id.clone()).collect(),
            }
        })
        .collect())
}

/// Writes `id,label,fold` for every sample (fold is the 1-based fold whose
/// validation set holds the sample, empty if none).
pub fn write_manifest(path: &Path, ds: &Dataset, folds: &[FoldSplit]) -> Result<()> {
    let mut fold_of: HashMap<&str, usize> = HashMap::new();
    for f in folds {
        for id in &f.val_ids {
            fold_of.insert(id.as_str(), f.fold_index);
        }
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["id", "label", "fold"])?;
    for s in ds.samples() {
        let fold = fold_of.get(s.id.as_str()).map(|f| f.to_string()).unwrap_or_default();
        w.write_record([s.id.as_str(), &s.label.to_string(), &fold])?;
    }
    w.flush()
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    Ok(())
}

/// Writes a feature table in the canonical layout (`id`, optional `label`,
/// then the thirteen features).
pub fn write_feature_table(path: &Path, rows: &[(String, Option<u8>, FeatureVector)]) -> Result<()> {
    let with_labels = rows.iter().any(|r| r.1.is_some());
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["id"];
    if with_labels {
        header.push("label");
    }
    header.extend(Feature::ALL.iter().map(|f| f.name()));
    w.write_record(&header)?;
    for (id, label, fv) in rows {
        let mut rec = vec![id.clone()];
        if with_labels {
            rec.push(label.map(|l| l.to_string()).unwrap_or_default());
        }
        // `{:?}` prints the shortest string that parses back to the same f64.
        rec.extend(fv.0.iter().map(|v| format!("{v:?}")));
        w.write_record(&rec)?;
    }
    w.flush()
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    Ok(())
}
