//! Synthetic scans for smoke runs: "ill" images carry a bright disc on a
//! noisy dark background, "healthy" images are background only.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::Rng as _;
use rayon::prelude::*;

use crate::data::{Dataset, DatasetSchema, Sample};
use crate::error::{Error, Result};
use crate::features::{extract_feature_vector, FeatureConfig, GrayImage};
use crate::rng;

/// Integer-valued image so it survives an 8-bit PNG round trip unchanged.
fn render(size: usize, ill: bool, rng: &mut rng::Rng) -> GrayImage {
    let noise: Vec<f64> = (0..size * size).map(|_| rng.gen_range(0.0..40.0)).collect();
    let disc = ill.then(|| {
        let r = rng.gen_range(size as f64 / 8.0..size as f64 / 5.0);
        let margin = r + 1.0;
        let cy = rng.gen_range(margin..size as f64 - margin);
        let cx = rng.gen_range(margin..size as f64 - margin);
        (cy, cx, r)
    });
    GrayImage::from_fn(size, size, |y, x| {
        let mut v = noise[y * size + x];
        if let Some((cy, cx, r)) = disc {
            let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
            v += 200.0 * (-d2 / (r * r)).exp();
        }
        v.round().clamp(0.0, 255.0)
    })
}

/// `n_per_class` healthy and `n_per_class` ill images, interleaved, with ids
/// `scan_0000`, `scan_0001`, ...
pub fn blob_images(n_per_class: usize, size: usize, seed: u64) -> Vec<(String, u8, GrayImage)> {
    let mut rng = rng::stream(seed, "synthetic", 0);
    (0..2 * n_per_class)
        .map(|i| {
            let label = (i % 2) as u8;
            (format!("scan_{i:04}"), label, render(size, label == 1, &mut rng))
        })
        .collect()
}

/// Feature settings for `size x size` scans: the largest Tamura window
/// (up to 32 pixels) that leaves at least half of each axis as valid centers.
pub fn feature_config_for(size: usize) -> FeatureConfig {
    let mut max_k = 5;
    while max_k > 1 && size < 1 << (max_k + 2) {
        max_k -= 1;
    }
    FeatureConfig {
        tamura_max_k: max_k,
        image_size: Some((size, size)),
        ..FeatureConfig::default()
    }
}

/// In-memory dataset with regenerated features.
pub fn blob_dataset(n_per_class: usize, size: usize, seed: u64) -> Result<Dataset> {
    let cfg = feature_config_for(size);
    let samples = blob_images(n_per_class, size, seed)
        .into_par_iter()
        .map(|(id, label, img)| {
            Ok(Sample {
                features: extract_feature_vector(&img, &cfg)?,
                id,
                image: Arc::new(img),
                label,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(samples)
}

/// Paths of a corpus written by [`write_blob_corpus`].
pub struct Corpus {
    pub image_dir: PathBuf,
    pub labels_table: PathBuf,
    pub schema: DatasetSchema,
}

/// Writes the images as PNG under `dir/images` and an `id,label` table at
/// `dir/labels.csv`.
pub fn write_blob_corpus(dir: &Path, n_per_class: usize, size: usize, seed: u64) -> Result<Corpus> {
    let image_dir = dir.join("images");
    std::fs::create_dir_all(&image_dir).map_err(|e| Error::io(format!("creating {}", image_dir.display()), e))?;
    let images = blob_images(n_per_class, size, seed);
    images.par_iter().try_for_each(|(id, _, img)| {
        let bytes: Vec<u8> = img.pixels().iter().map(|&v| v as u8).collect();
        let path = image_dir.join(format!("{id}.png"));
        image::GrayImage::from_raw(size as u32, size as u32, bytes)
            .expect("buffer matches dimensions")
            .save(&path)
            .map_err(|e| Error::Image {
                path: path.clone(),
                msg: e.to_string(),
            })
    })?;
    let labels_table = dir.join("labels.csv");
    let mut w = csv::Writer::from_path(&labels_table)?;
    w.write_record(["id", "label"])?;
    for (id, label, _) in &images {
        w.write_record([id.as_str(), &label.to_string()])?;
    }
    w.flush()
        .map_err(|e| Error::io(format!("writing {}", labels_table.display()), e))?;
    Ok(Corpus {
        image_dir,
        labels_table,
        schema: DatasetSchema {
            image_size: (size, size),
            ..DatasetSchema::default()
        },
    })
}
