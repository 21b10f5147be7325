mod common;

use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;

use tumornet::features::FeatureConfig;
use tumornet::metrics::{CvReport, FoldMetrics};
use tumornet::model::ModelSpec;
use tumornet::pipeline::{
    evaluate_cmd, extract_features_cmd, read_split, report_cmd, run_cv, FeatureMode, RunConfig, StandardizeScope,
};
use tumornet::synthetic::{feature_config_for, write_blob_corpus};
use tumornet::training::TrainConfig;
use tumornet::Error;

const SIZE: usize = 32;

fn scratch(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("pipeline").join(name);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn small_config(root: &Path) -> RunConfig {
    let corpus = write_blob_corpus(&root.join("corpus"), 30, SIZE, 4).unwrap();
    RunConfig {
        image_dir: corpus.image_dir,
        features_table: corpus.labels_table,
        schema: corpus.schema,
        out_dir: root.join("run"),
        feature_mode: FeatureMode::Regenerated,
        features: feature_config_for(SIZE),
        folds: 2,
        model: ModelSpec::reduced(SIZE),
        train: TrainConfig {
            max_epochs: 15,
            batch_size: 8,
            ..TrainConfig::default()
        },
        ..RunConfig::default()
    }
}

/// One completed run shared by the read-only tests.
fn completed() -> &'static (RunConfig, CvReport) {
    static RUN: OnceLock<(RunConfig, CvReport)> = OnceLock::new();
    RUN.get_or_init(|| {
        let cfg = small_config(&scratch("completed"));
        let report = run_cv(&cfg).unwrap();
        (cfg, report)
    })
}

fn stored_metrics(out: &Path, fold: usize) -> FoldMetrics {
    let text = std::fs::read_to_string(out.join(format!("fold_{fold}/metrics.json"))).unwrap();
    serde_json::from_str(&text).unwrap()
}

#[test]
fn run_writes_the_documented_layout() {
    let (cfg, report) = completed();
    let out = &cfg.out_dir;
    for f in ["run.toml", "manifest.csv", "report.csv", "report.json", "plotdata.csv"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    for fold in 1..=2 {
        let dir = out.join(format!("fold_{fold}"));
        for f in ["history.jsonl", "model.ckpt", "metrics.json", "split.json"] {
            assert!(dir.join(f).is_file(), "fold_{fold}/{f}");
        }
        let history = std::fs::read_to_string(dir.join("history.jsonl")).unwrap();
        let first: serde_json::Value = serde_json::from_str(history.lines().next().unwrap()).unwrap();
        assert_eq!(first["epoch"], 1);
        assert!(first["val_accuracy"].is_number());
        assert_eq!(stored_metrics(out, fold), report.folds[fold - 1]);
    }
    assert!(report.averages.accuracy >= 0.9, "{report:?}");
    let stored = RunConfig::load(&out.join("run.toml")).unwrap();
    assert_eq!(&stored, cfg);
}

#[test]
fn report_rebuild_matches_the_run() {
    let (cfg, report) = completed();
    let copy = scratch("rebuild");
    for fold in 1..=2 {
        let dir = copy.join(format!("fold_{fold}"));
        std::fs::create_dir_all(&dir).unwrap();
        std::fs::copy(
            cfg.out_dir.join(format!("fold_{fold}/metrics.json")),
            dir.join("metrics.json"),
        )
        .unwrap();
    }
    let rebuilt = report_cmd(&copy).unwrap();
    assert_eq!(&rebuilt, report);
    assert_eq!(
        std::fs::read(copy.join("report.csv")).unwrap(),
        std::fs::read(cfg.out_dir.join("report.csv")).unwrap()
    );
}

#[test]
fn checkpoint_reproduces_its_fold_metrics() {
    let (cfg, _) = completed();
    for fold in 1..=2 {
        let dir = cfg.out_dir.join(format!("fold_{fold}"));
        let split = read_split(&dir.join("split.json")).unwrap();
        let m = evaluate_cmd(&dir.join("model.ckpt"), cfg, Some(&split.val_ids)).unwrap();
        let want = stored_metrics(&cfg.out_dir, fold);
        assert_eq!(m.fold, fold);
        for (a, b) in [
            (m.accuracy, want.accuracy),
            (m.auc, want.auc),
            (m.loss, want.loss),
            (m.precision, want.precision),
            (m.recall, want.recall),
            (m.f1, want.f1),
        ] {
            assert!((a - b).abs() <= 1e-6, "{m:?} vs {want:?}");
        }
    }
}

#[test]
fn perfect_fold_model_classifies_the_whole_smoke_set() {
    let (cfg, report) = completed();
    let fold = report
        .folds
        .iter()
        .find(|f| f.accuracy == 1.0)
        .expect("a fold solved its validation split");
    let ckpt = cfg.out_dir.join(format!("fold_{}/model.ckpt", fold.fold));
    let m = evaluate_cmd(&ckpt, cfg, None).unwrap();
    assert_eq!(m.accuracy, 1.0);
}

#[test]
fn evaluation_errors() {
    let (cfg, _) = completed();
    let ckpt = cfg.out_dir.join("fold_1/model.ckpt");
    let err = evaluate_cmd(&ckpt, cfg, Some(&[])).unwrap_err();
    assert!(matches!(err, Error::Evaluation(_)), "{err:?}");

    let mut other = cfg.clone();
    other.schema.image_size = (64, 64);
    assert!(matches!(evaluate_cmd(&ckpt, &other, None), Err(Error::Evaluation(_))));
}

#[test]
fn rerun_refuses_then_overwrites_identically() {
    let root = scratch("rerun");
    let mut cfg = small_config(&root);
    cfg.train.max_epochs = 2;
    cfg.standardize = StandardizeScope::PerFold;
    let first = run_cv(&cfg).unwrap();
    let bytes = std::fs::read(cfg.out_dir.join("report.csv")).unwrap();
    let ckpt = std::fs::read(cfg.out_dir.join("fold_2/model.ckpt")).unwrap();

    let err = run_cv(&cfg).unwrap_err();
    assert!(matches!(err, Error::Config(_)));
    assert_eq!(err.exit_code(), 1);

    cfg.overwrite = true;
    let second = run_cv(&cfg).unwrap();
    assert_eq!(first, second);
    assert_eq!(std::fs::read(cfg.out_dir.join("report.csv")).unwrap(), bytes);
    assert_eq!(std::fs::read(cfg.out_dir.join("fold_2/model.ckpt")).unwrap(), ckpt);
}

#[test]
fn parallel_folds_match_sequential_folds() {
    let root = scratch("parallel");
    let mut cfg = small_config(&root);
    cfg.train.max_epochs = 2;
    let sequential = run_cv(&cfg).unwrap();
    cfg.out_dir = root.join("run_parallel");
    cfg.parallel_folds = 2;
    assert_eq!(run_cv(&cfg).unwrap(), sequential);
}

fn tiny_feature_config() -> FeatureConfig {
    FeatureConfig {
        tamura_max_k: 2,
        image_size: Some((16, 16)),
        ..FeatureConfig::default()
    }
}

fn write_images(dir: &Path, n: usize) {
    std::fs::create_dir_all(dir).unwrap();
    for i in 0..n {
        image::GrayImage::from_fn(16, 16, |x, y| {
            image::Luma([((x * 13 + y * 7 + i as u32 * 31) % 256) as u8])
        })
        .save(dir.join(format!("img_{i}.png")))
        .unwrap();
    }
}

fn exts() -> Vec<String> {
    vec!["png".into(), "jpg".into()]
}

#[test]
fn extract_features_cases() {
    let root = scratch("extract");

    let five = root.join("five");
    write_images(&five, 5);
    let table = root.join("five.csv");
    let s = extract_features_cmd(&five, &table, &tiny_feature_config(), &exts(), None).unwrap();
    assert_eq!((s.processed, s.failed), (5, 0));
    let text = std::fs::read_to_string(&table).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap();
    assert!(header.starts_with("id,mean,variance,"));
    assert_eq!(header.split(',').count(), 14);
    assert_eq!(lines.count(), 5);

    let empty = root.join("empty");
    std::fs::create_dir_all(&empty).unwrap();
    let table = root.join("empty.csv");
    let s = extract_features_cmd(&empty, &table, &tiny_feature_config(), &exts(), None).unwrap();
    assert_eq!((s.processed, s.failed), (0, 0));
    assert_eq!(std::fs::read_to_string(&table).unwrap().lines().count(), 1);

    let mixed = root.join("mixed");
    write_images(&mixed, 4);
    std::fs::write(mixed.join("broken.png"), b"\x89PNG garbage").unwrap();
    let table = root.join("mixed.csv");
    let s = extract_features_cmd(&mixed, &table, &tiny_feature_config(), &exts(), None).unwrap();
    assert_eq!((s.processed, s.failed), (4, 1));
    assert_eq!(std::fs::read_to_string(&table).unwrap().lines().count(), 5);
}

#[test]
fn extracted_table_feeds_shipped_mode() {
    let root = scratch("extract_then_load");
    let corpus = write_blob_corpus(&root.join("corpus"), 6, SIZE, 2).unwrap();
    let labels = tumornet::pipeline::read_labels(&corpus.labels_table, &corpus.schema).unwrap();
    let table = root.join("features.csv");
    let fc = feature_config_for(SIZE);
    extract_features_cmd(
        &corpus.image_dir,
        &table,
        &fc,
        &corpus.schema.image_extensions,
        Some(&labels),
    )
    .unwrap();

    let shipped = tumornet::data::load_dataset(&corpus.image_dir, &table, &corpus.schema).unwrap();
    let regenerated = tumornet::synthetic::blob_dataset(6, SIZE, 2).unwrap();
    assert_eq!(shipped.len(), regenerated.len());
    for s in regenerated.samples() {
        let i = shipped.index_of()[s.id.as_str()];
        let t = &shipped.samples()[i];
        assert_eq!(t.label, s.label);
        assert_eq!(t.features, s.features);
    }
}

fn cli() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_tumornet"));
    c.env("RUST_LOG", "warn");
    c
}

#[test]
fn cli_exit_codes() {
    let root = scratch("cli");
    let code = |c: &mut Command| c.output().unwrap().status.code().unwrap();

    assert_eq!(code(cli().arg("no-such-command")), 1);
    assert_eq!(code(cli().args(["run-cv", "--feature-mode", "guessed"])), 1);
    assert_eq!(
        code(cli().args(["run-cv", "--config"]).arg(root.join("missing.toml"))),
        1
    );
    std::fs::write(root.join("bad.toml"), "folds = 1\n").unwrap();
    assert_eq!(code(cli().args(["run-cv", "--config"]).arg(root.join("bad.toml"))), 1);
    assert_eq!(code(cli().args(["train-fold", "--fold", "11"])), 1);

    let missing = root.join("nowhere");
    let r = cli()
        .args(["run-cv", "--image-dir"])
        .arg(&missing)
        .arg("--features-table")
        .arg(missing.join("t.csv"))
        .arg("--out")
        .arg(root.join("out"))
        .output()
        .unwrap();
    assert_eq!(r.status.code(), Some(2));
    assert_eq!(
        code(cli().args(["evaluate", "--checkpoint"]).arg(root.join("none.ckpt"))),
        2
    );
}

#[test]
fn cli_runs_extract_and_cv_from_a_config_file() {
    let root = scratch("cli_run");
    let mut cfg = small_config(&root);
    cfg.train.max_epochs = 2;
    let config = root.join("run.toml");
    std::fs::write(&config, cfg.to_toml()).unwrap();

    let out = cli()
        .args(["run-cv", "--seed", "9", "--standardize", "per-fold", "--config"])
        .arg(&config)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.starts_with("CV Fold,Accuracy,AUC,Loss,Precision,Recall,F1-Score"));
    let used = RunConfig::load(&cfg.out_dir.join("run.toml")).unwrap();
    assert_eq!(used.seed, 9);
    assert_eq!(used.standardize, StandardizeScope::PerFold);

    let out = cli().args(["report", "--out"]).arg(&cfg.out_dir).output().unwrap();
    assert!(out.status.success());
    assert_eq!(String::from_utf8(out.stdout).unwrap(), stdout);

    let table = root.join("features.csv");
    let out = cli()
        .args(["extract-features", "--config"])
        .arg(&config)
        .arg("--table")
        .arg(&table)
        .arg("--labels")
        .arg(&cfg.features_table)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(String::from_utf8(out.stdout).unwrap().trim(), "processed 60 failed 0");
}
