//! The building blocks behind the texture features on small hand-made
//! images: quantization, a co-occurrence matrix, its Haralick statistics,
//! and Tamura coarseness on fine versus coarse patterns.
//!
//! ```text
//! cargo run --example texture_primitives
//! ```

use tumornet::features::{compute_glcm, first_order, glcm_features, quantize, tamura_coarseness, GrayImage, Offset};

fn main() -> tumornet::Result<()> {
    #[rustfmt::skip]
    let img = GrayImage::new(4, 4, vec![
        0.0, 0.0, 255.0, 255.0,
        0.0, 0.0, 255.0, 255.0,
        0.0, 128.0, 128.0, 255.0,
        128.0, 128.0, 255.0, 255.0,
    ])?;
    let q = quantize(&img, 4)?;
    println!("quantized to 4 levels:");
    for y in 0..q.height() {
        let row: Vec<String> = (0..q.width()).map(|x| q.get(y, x).to_string()).collect();
        println!("  {}", row.join(" "));
    }

    let g = compute_glcm(&q, Offset::new(0, 1))?;
    println!("horizontal co-occurrence matrix:");
    for i in 0..g.levels() {
        let row: Vec<String> = (0..g.levels()).map(|j| format!("{:.3}", g.get(i, j))).collect();
        println!("  {}", row.join(" "));
    }
    println!("{:#?}", glcm_features(&g)?);
    println!("{:#?}", first_order(&img)?);

    let fine = GrayImage::from_fn(64, 64, |y, x| if (x + y) % 2 == 0 { 0.0 } else { 255.0 });
    let coarse = GrayImage::from_fn(64, 64, |y, x| if (x / 8 + y / 8) % 2 == 0 { 0.0 } else { 255.0 });
    println!("coarseness, 1-pixel checkerboard: {}", tamura_coarseness(&fine, 4)?);
    println!("coarseness, 8-pixel checkerboard: {}", tamura_coarseness(&coarse, 4)?);
    Ok(())
}
