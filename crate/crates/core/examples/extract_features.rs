//! The thirteen texture features of one scan.
//!
//! ```text
//! cargo run --release --example extract_features -- scan.png
//! ```
//!
//! Without an argument a synthetic 240x240 scan with a bright lesion is used.

use tumornet::data::{read_gray_image, Feature};
use tumornet::features::{extract_feature_vector, FeatureConfig, GrayImage};

fn main() -> tumornet::Result<()> {
    let image = match std::env::args().nth(1) {
        Some(path) => read_gray_image(path.as_ref())?,
        None => GrayImage::from_fn(240, 240, |y, x| {
            let d2 = (y as f64 - 90.0).powi(2) + (x as f64 - 140.0).powi(2);
            let texture = ((x * 7 + y * 13) % 23) as f64;
            (30.0 + texture + 180.0 * (-d2 / 900.0).exp()).round()
        }),
    };
    // Accept any size; the pipeline itself insists on the configured one.
    let cfg = FeatureConfig {
        image_size: None,
        ..FeatureConfig::default()
    };
    let v = extract_feature_vector(&image, &cfg)?;
    println!("{}x{} scan", image.width(), image.height());
    for f in Feature::ALL {
        println!("{:>20}  {:.6}", f.name(), v[f]);
    }
    Ok(())
}
