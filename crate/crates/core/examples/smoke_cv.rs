//! Full cross-validation on a synthetic corpus: writes 200 PNG scans, then
//! runs the complete pipeline (regenerated features, balancing, global
//! standardization, 3 folds, reduced network) and prints the report.
//!
//! ```text
//! cargo run --release --example smoke_cv [-- <out-dir>]
//! ```

use std::path::PathBuf;
use std::time::Instant;

use tumornet::model::ModelSpec;
use tumornet::pipeline::{run_cv, FeatureMode, RunConfig};
use tumornet::synthetic::{feature_config_for, write_blob_corpus};

fn main() -> tumornet::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let out: PathBuf = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| "target/smoke_cv".into());
    let size = 64;
    let corpus = write_blob_corpus(&out.join("corpus"), 100, size, 7)?;

    let cfg = RunConfig {
        image_dir: corpus.image_dir,
        features_table: corpus.labels_table,
        schema: corpus.schema,
        out_dir: out.join("run"),
        overwrite: true,
        feature_mode: FeatureMode::Regenerated,
        features: feature_config_for(size),
        folds: 3,
        model: ModelSpec::reduced(size),
        ..RunConfig::default()
    };
    let start = Instant::now();
    let report = run_cv(&cfg)?;
    print!("{}", report.to_csv());
    println!(
        "finished in {:.1?}; outputs in {}",
        start.elapsed(),
        cfg.out_dir.display()
    );
    Ok(())
}
