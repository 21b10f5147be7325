mod common;

use std::path::Path;

use proptest::prelude::*;
use tumornet::data::{
    balance_classes, load_dataset, standardize_features, stratified_kfold, write_manifest, DatasetSchema, Feature,
};
use tumornet::Error;

const SIZE: usize = 6;

fn schema() -> DatasetSchema {
    DatasetSchema {
        image_size: (SIZE, SIZE),
        ..DatasetSchema::default()
    }
}

fn write_png(dir: &Path, name: &str, value: u8) {
    image::GrayImage::from_pixel(SIZE as u32, SIZE as u32, image::Luma([value]))
        .save(dir.join(name))
        .unwrap();
}

fn header() -> String {
    let mut cols = vec!["id".to_string(), "label".to_string()];
    cols.extend(Feature::ALL.iter().map(|f| f.name().to_string()));
    cols.join(",")
}

fn row(id: &str, label: &str, base: f64) -> String {
    let mut cells = vec![id.to_string(), label.to_string()];
    cells.extend((0..13).map(|i| (base + i as f64).to_string()));
    cells.join(",")
}

fn write_table(path: &Path, rows: &[String]) {
    let mut text = header();
    for r in rows {
        text.push('\n');
        text.push_str(r);
    }
    text.push('\n');
    std::fs::write(path, text).unwrap();
}

#[test]
fn loads_rows_in_table_order() {
    let dir = tempfile::tempdir().unwrap();
    write_png(dir.path(), "b.png", 10);
    write_png(dir.path(), "a.png", 200);
    let rgb = image::RgbImage::from_pixel(SIZE as u32, SIZE as u32, image::Rgb([255, 0, 0]));
    rgb.save(dir.path().join("c.png")).unwrap();
    let table = dir.path().join("t.csv");
    write_table(&table, &[row("b", "0", 1.0), row("a", "1", 2.0), row("c", "1", 3.0)]);

    let ds = load_dataset(dir.path(), &table, &schema()).unwrap();
    let ids: Vec<_> = ds.samples().iter().map(|s| s.id.as_str()).collect();
    assert_eq!(ids, ["b", "a", "c"]);
    assert_eq!(ds.class_counts(), [1, 2]);
    assert_eq!(ds.samples()[0].image.get(0, 0), 10.0);
    assert_eq!(ds.samples()[1].features[Feature::Variance], 3.0);
    common::assert_close(ds.samples()[2].image.get(3, 3), 0.299 * 255.0, 1e-9, "luminance");
}

#[test]
fn empty_table_gives_empty_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let table = dir.path().join("t.csv");
    write_table(&table, &[]);
    let ds = load_dataset(dir.path(), &table, &schema()).unwrap();
    assert!(ds.is_empty());
}

#[test]
fn missing_image_names_the_id() {
    let dir = tempfile::tempdir().unwrap();
    write_png(dir.path(), "a.png", 1);
    let table = dir.path().join("t.csv");
    write_table(&table, &[row("a", "0", 0.0), row("img_999", "1", 0.0)]);
    let err = load_dataset(dir.path(), &table, &schema()).unwrap_err();
    assert!(
        matches!(&err, Error::MissingImage { id, .. } if id == "img_999"),
        "{err:?}"
    );
    assert!(err.to_string().contains("img_999"));
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn bad_cells_report_row_and_column() {
    let dir = tempfile::tempdir().unwrap();
    write_png(dir.path(), "a.png", 1);
    write_png(dir.path(), "b.png", 1);
    let table = dir.path().join("t.csv");
    let mut bad = row("b", "1", 0.0);
    bad = bad.replacen(",5,", ",oops,", 1);
    write_table(&table, &[row("a", "0", 0.0), bad]);
    match load_dataset(dir.path(), &table, &schema()).unwrap_err() {
        Error::Parse { row, column, .. } => {
            assert_eq!(row, 2);
            assert_eq!(column, "entropy");
        }
        e => panic!("unexpected {e:?}"),
    }

    write_table(&table, &[row("a", "2", 0.0)]);
    assert!(matches!(
        load_dataset(dir.path(), &table, &schema()),
        Err(Error::Parse { row: 1, .. })
    ));

    write_table(&table, &[row("a", "0", 0.0), row("a", "1", 0.0)]);
    assert!(matches!(
        load_dataset(dir.path(), &table, &schema()),
        Err(Error::Schema(_))
    ));
}

#[test]
fn wrong_image_size_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    image::GrayImage::new(5, 6).save(dir.path().join("a.png")).unwrap();
    let table = dir.path().join("t.csv");
    write_table(&table, &[row("a", "0", 0.0)]);
    assert!(load_dataset(dir.path(), &table, &schema()).is_err());
}

#[test]
fn kaggle_column_names_are_accepted() {
    let dir = tempfile::tempdir().unwrap();
    write_png(dir.path(), "Image1.jpg", 1);
    let k = DatasetSchema {
        image_size: (SIZE, SIZE),
        ..DatasetSchema::kaggle()
    };
    let mut text = format!("{},{}", k.id_column, k.label_column);
    for c in &k.feature_columns {
        text.push(',');
        text.push_str(c);
    }
    text.push_str("\nImage1,1");
    for i in 0..13 {
        text.push_str(&format!(",{i}.5"));
    }
    let table = dir.path().join("bt.csv");
    std::fs::write(&table, text).unwrap();
    let ds = load_dataset(dir.path(), &table, &k).unwrap();
    assert_eq!(ds.samples()[0].features[Feature::Coarseness], 10.5);
}

#[test]
fn manifest_lists_every_sample_once() {
    let labels: Vec<u8> = (0..30).map(|i| (i % 3 == 0) as u8).collect();
    let ds = common::toy_dataset(&labels, 1);
    let folds = stratified_kfold(&ds, 5, 9).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.csv");
    write_manifest(&path, &ds, &folds).unwrap();
    let text = std::fs::read_to_string(path).unwrap();
    let lines: Vec<_> = text.lines().collect();
    assert_eq!(lines[0], "id,label,fold");
    assert_eq!(lines.len(), 31);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn balancing_keeps_the_minority(n0 in 1usize..40, n1 in 1usize..40, seed: u64) {
        let labels: Vec<u8> = (0..n0).map(|_| 0).chain((0..n1).map(|_| 1)).collect();
        let ds = common::toy_dataset(&labels, seed);
        let b = balance_classes(&ds, seed).unwrap();
        let m = n0.min(n1);
        prop_assert_eq!(b.class_counts(), [m, m]);
        let minority = (n1 < n0) as u8;
        let kept: Vec<_> = b.samples().iter().filter(|s| s.label == minority).map(|s| s.id.clone()).collect();
        let orig: Vec<_> = ds.samples().iter().filter(|s| s.label == minority).map(|s| s.id.clone()).collect();
        prop_assert_eq!(kept, orig);
        let again = balance_classes(&ds, seed).unwrap();
        prop_assert!(b.samples().iter().zip(again.samples()).all(|(x, y)| x.id == y.id));
    }

    #[test]
    fn standardized_columns_are_unit(n in 3usize..60, seed: u64) {
        let labels: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
        let ds = common::toy_dataset(&labels, seed);
        let (z, _) = standardize_features(&ds).unwrap();
        for f in Feature::ALL {
            let col: Vec<f64> = z.samples().iter().map(|s| s.features[f]).collect();
            let mean = col.iter().sum::<f64>() / n as f64;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            prop_assert!(mean.abs() <= 1e-8);
            prop_assert!((var - 1.0).abs() <= 1e-8);
        }
    }
}
