//! Classification metrics and the cross-validation report table from
//! made-up fold predictions.
//!
//! ```text
//! cargo run --example metrics_report
//! ```

use tumornet::metrics::{aggregate, confusion, FoldMetrics};
use tumornet::training::binary_cross_entropy;

fn main() -> tumornet::Result<()> {
    let labels = [1, 1, 1, 0, 0, 0, 1, 0];
    let folds = [
        [0.95, 0.80, 0.40, 0.10, 0.30, 0.05, 0.70, 0.20],
        [0.90, 0.85, 0.75, 0.15, 0.60, 0.10, 0.65, 0.25],
        [0.99, 0.97, 0.92, 0.02, 0.04, 0.01, 0.88, 0.03],
    ];
    let mut per_fold = Vec::new();
    for (i, scores) in folds.iter().enumerate() {
        let preds: Vec<u8> = scores.iter().map(|&p| u8::from(p >= 0.5)).collect();
        println!("fold {}: {:?}", i + 1, confusion(&labels, &preds)?);
        let loss = binary_cross_entropy(&labels, scores)?;
        per_fold.push(FoldMetrics::compute(i + 1, &labels, &preds, scores, loss)?);
    }
    let report = aggregate(&per_fold)?;
    print!("\n{}", report.to_csv());
    print!("\nplot data:\n{}", report.plot_data());
    Ok(())
}
