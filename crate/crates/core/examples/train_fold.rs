//! Trains one cross-validation fold on synthetic scans and prints the
//! per-epoch history and the validation metrics of the restored weights.
//!
//! ```text
//! cargo run --release --example train_fold
//! ```

use tumornet::data::{standardize_features, stratified_kfold};
use tumornet::model::ModelSpec;
use tumornet::synthetic::blob_dataset;
use tumornet::training::{train_fold, TrainConfig};

fn main() -> tumornet::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let size = 48;
    let (ds, _) = standardize_features(&blob_dataset(60, size, 3)?)?;
    let folds = stratified_kfold(&ds, 4, 11)?;
    let cfg = TrainConfig {
        max_epochs: 30,
        seed: 5,
        ..TrainConfig::default()
    };
    let (trained, history) = train_fold(&ModelSpec::reduced(size), &folds[0], &ds, &cfg)?;
    println!("epoch  train_loss  val_loss  val_acc");
    for r in &history {
        println!(
            "{:>5}  {:>10.5}  {:>8.5}  {:>7.3}",
            r.epoch, r.train_loss, r.val_loss, r.val_accuracy
        );
    }
    println!(
        "stopped after {} epochs; restored epoch {}",
        history.len(),
        trained.best_epoch
    );
    println!("{:#?}", trained.val_metrics);
    Ok(())
}
