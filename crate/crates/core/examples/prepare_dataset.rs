//! Loading and preprocessing: reads a scan directory plus feature table,
//! balances the classes, standardizes the features and deals stratified
//! folds, then writes the audit manifest.
//!
//! ```text
//! cargo run --release --example prepare_dataset -- <image-dir> <features.csv> [kaggle]
//! ```
//!
//! Without arguments an unbalanced synthetic corpus is generated first.

use std::path::PathBuf;

use tumornet::data::{
    balance_classes, load_dataset, load_dataset_with, standardize_features, stratified_kfold, write_manifest,
    DatasetSchema,
};
use tumornet::features::extract_feature_vector;
use tumornet::synthetic::{feature_config_for, write_blob_corpus};

fn main() -> tumornet::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let out = PathBuf::from("target/prepare_dataset");
    let raw = if args.len() >= 2 {
        let schema = if args.get(2).map(String::as_str) == Some("kaggle") {
            DatasetSchema::kaggle()
        } else {
            DatasetSchema::default()
        };
        load_dataset(args[0].as_ref(), args[1].as_ref(), &schema)?
    } else {
        let corpus = write_blob_corpus(&out.join("corpus"), 30, 32, 1)?;
        // Drop a third of the ill scans so balancing has work to do.
        let text = std::fs::read_to_string(&corpus.labels_table).unwrap_or_default();
        let kept: Vec<&str> = text
            .lines()
            .enumerate()
            .filter(|(i, line)| *i == 0 || !(line.ends_with(",1") && i % 3 == 0))
            .map(|(_, l)| l)
            .collect();
        let labels = out.join("labels.csv");
        std::fs::write(&labels, kept.join("\n")).expect("write labels");
        let fc = feature_config_for(32);
        load_dataset_with(&corpus.image_dir, &labels, &corpus.schema, |img| {
            extract_feature_vector(img, &fc)
        })?
    };
    println!("loaded {} samples, class counts {:?}", raw.len(), raw.class_counts());

    let balanced = balance_classes(&raw, 42)?;
    println!(
        "balanced: {} samples, class counts {:?}",
        balanced.len(),
        balanced.class_counts()
    );

    let (ds, scaler) = standardize_features(&balanced)?;
    println!("feature means {:?}", scaler.mean.map(|v| (v * 1e3).round() / 1e3));
    println!("feature stds  {:?}", scaler.std.map(|v| (v * 1e3).round() / 1e3));

    let folds = stratified_kfold(&ds, 5, 42)?;
    for f in &folds {
        println!(
            "fold {}: {} train, {} validation",
            f.fold_index,
            f.train_ids.len(),
            f.val_ids.len()
        );
    }
    std::fs::create_dir_all(&out).expect("create output directory");
    write_manifest(&out.join("manifest.csv"), &ds, &folds)?;
    println!("manifest written to {}", out.join("manifest.csv").display());
    Ok(())
}
