//! The full-size multimodal network: shape of each stage and a forward pass
//! on random inputs.
//!
//! ```text
//! cargo run --release --example model_shapes
//! ```

use tumornet::model::{build_model, predict_class, Batch, ModelSpec};
use tumornet::nn::Tensor;

fn main() -> tumornet::Result<()> {
    let spec = ModelSpec::default();
    let model = build_model(&spec, 0)?;
    let (h, w, c) = spec.image_input_shape;
    println!("input: scan {h}x{w}x{c}, {} tabular features", spec.tabular_inputs);
    println!(
        "image head output: {:?} ({} values)",
        spec.image_head_output_shape(1),
        spec.image_feature_len()
    );
    println!("tabular head output: {}", spec.tabular_output_len());
    println!("fused representation: {}", spec.fused_len());
    println!("classifier: {:?} -> {}", spec.classifier.widths, spec.output_classes);
    println!(
        "parameters (including normalization buffers): {}",
        model.parameter_count()
    );

    let b = 2;
    let images = Tensor::from_vec(
        [b, c, h, w],
        (0..b * c * h * w).map(|i| (i % 251) as f64 / 251.0).collect(),
    )?;
    let features = Tensor::matrix(
        b,
        spec.tabular_inputs,
        (0..b * spec.tabular_inputs).map(|i| (i as f64).sin()).collect(),
    )?;
    let probs = model.forward(&Batch::new(images, features, None)?)?;
    for (row, class) in probs.data().chunks(2).zip(predict_class(&probs)) {
        println!("p(healthy) {:.4}  p(ill) {:.4}  -> class {class}", row[0], row[1]);
    }
    Ok(())
}
