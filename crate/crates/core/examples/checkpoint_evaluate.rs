//! Saves a trained fold model with its feature scaler, reloads it and scores
//! held-out scans with the reloaded copy.
//!
//! ```text
//! cargo run --release --example checkpoint_evaluate
//! ```

use tumornet::data::{apply_scaler_to_dataset, standardize_features, stratified_kfold};
use tumornet::model::{load_checkpoint, save_checkpoint, ModelSpec};
use tumornet::synthetic::blob_dataset;
use tumornet::training::{evaluate_samples, train_fold, TrainConfig};

fn main() -> tumornet::Result<()> {
    let size = 32;
    let (train_ds, scaler) = standardize_features(&blob_dataset(40, size, 1)?)?;
    let folds = stratified_kfold(&train_ds, 4, 3)?;
    let cfg = TrainConfig {
        max_epochs: 20,
        ..TrainConfig::default()
    };
    let (trained, _) = train_fold(&ModelSpec::reduced(size), &folds[0], &train_ds, &cfg)?;

    let path = std::path::Path::new("target/checkpoint_evaluate.ckpt");
    save_checkpoint(path, &trained.model, &scaler, serde_json::json!({ "fold": 1 }))?;
    let ckpt = load_checkpoint(path)?;
    println!(
        "reloaded {} parameters from {}",
        ckpt.model.parameter_count(),
        path.display()
    );

    // Fresh scans from another seed, scaled with the stored training statistics.
    let fresh = apply_scaler_to_dataset(&blob_dataset(25, size, 99)?, &ckpt.scaler)?;
    let samples: Vec<_> = fresh.samples().iter().collect();
    let m = evaluate_samples(&ckpt.model, &samples, 32, 0)?;
    println!(
        "held-out scans: accuracy {:.3}, AUC {:.3}, loss {:.4}",
        m.accuracy, m.auc, m.loss
    );
    Ok(())
}
