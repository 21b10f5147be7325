//! The two-head network: a DenseNet image branch and an MLP tabular branch,
//! concatenated, normalized and classified by a small ReLU MLP ending in a
//! two-way softmax (index 0 = healthy, 1 = ill).

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{Sample, ScalerParams, NUM_FEATURES};
use crate::error::{Error, Result};
use crate::nn::{AvgPool2d, BatchNorm, Conv2d, Layer, LayerNorm, Linear, MaxPool2d, Param, Relu, Sequential, Tensor};
use crate::rng::{self, Rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DenseNetConfig {
    /// Filters of the 7x7 stride-2 stem convolution.
    pub initial_features: usize,
    pub growth_rate: usize,
    /// Layers per dense block; transitions sit between consecutive blocks.
    pub block_layers: Vec<usize>,
    /// Channel reduction applied by each transition.
    pub compression: f64,
    /// Bottleneck width as a multiple of the growth rate.
    pub bottleneck_factor: usize,
}

impl Default for DenseNetConfig {
    /// DenseNet-121.
    fn default() -> Self {
        DenseNetConfig {
            initial_features: 64,
            growth_rate: 32,
            block_layers: vec![6, 12, 24, 16],
            compression: 0.5,
            bottleneck_factor: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpConfig {
    /// Hidden layer widths, each followed by ReLU.
    pub widths: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FusionNorm {
    /// Batch statistics while training, running statistics at inference.
    Batch,
    /// Per-sample normalization over the fused vector.
    Layer,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    /// `(height, width, channels)`.
    pub image_input_shape: (usize, usize, usize),
    pub image_head: DenseNetConfig,
    pub tabular_inputs: usize,
    pub tabular_head: MlpConfig,
    pub fusion: FusionNorm,
    pub classifier: MlpConfig,
    pub output_classes: usize,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            image_input_shape: (240, 240, 3),
            image_head: DenseNetConfig::default(),
            tabular_inputs: NUM_FEATURES,
            tabular_head: MlpConfig { widths: vec![64, 32] },
            fusion: FusionNorm::Batch,
            classifier: MlpConfig { widths: vec![256, 64] },
            output_classes: 2,
        }
    }
}

impl ModelSpec {
    /// A desk-scale variant for tests and smoke runs: same topology, tiny widths.
    pub fn reduced(size: usize) -> Self {
        ModelSpec {
            image_input_shape: (size, size, 3),
            image_head: DenseNetConfig {
                initial_features: 8,
                growth_rate: 4,
                block_layers: vec![2, 2],
                compression: 0.5,
                bottleneck_factor: 2,
            },
            tabular_inputs: NUM_FEATURES,
            tabular_head: MlpConfig { widths: vec![16, 8] },
            fusion: FusionNorm::Batch,
            classifier: MlpConfig { widths: vec![16, 8] },
            output_classes: 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Build(m));
        if self.output_classes != 2 {
            return bad(format!("output layer must have 2 classes, got {}", self.output_classes));
        }
        if self.tabular_inputs != NUM_FEATURES {
            return bad(format!(
                "tabular input width must be {NUM_FEATURES}, got {}",
                self.tabular_inputs
            ));
        }
        let (h, w, c) = self.image_input_shape;
        if h == 0 || w == 0 || c == 0 {
            return bad(format!("image input shape {h}x{w}x{c} has an empty axis"));
        }
        let d = &self.image_head;
        if d.block_layers.is_empty() || d.block_layers.contains(&0) {
            return bad("every dense block needs at least one layer".into());
        }
        if d.initial_features == 0 || d.growth_rate == 0 || d.bottleneck_factor == 0 {
            return bad("dense net widths must be positive".into());
        }
        if !(d.compression > 0.0 && d.compression <= 1.0) {
            return bad(format!("compression {} outside (0, 1]", d.compression));
        }
        if self.tabular_head.widths.contains(&0) || self.classifier.widths.contains(&0) {
            return bad("MLP widths must be positive".into());
        }
        let [_, ch, oh, ow] = self.image_head_output_shape(1);
        if ch == 0 || oh == 0 || ow == 0 {
            return bad(format!(
                "a {h}x{w} input is too small for {} dense blocks",
                d.block_layers.len()
            ));
        }
        Ok(())
    }

    /// `[batch, channels, height, width]` leaving the image head.
    pub fn image_head_output_shape(&self, batch: usize) -> [usize; 4] {
        let (h, w, _) = self.image_input_shape;
        let d = &self.image_head;
        let conv = |x: usize| (x + 6).saturating_sub(7) / 2 + 1;
        let pool = |x: usize| (x + 2).saturating_sub(3) / 2 + 1;
        let (mut h, mut w) = (pool(conv(h)), pool(conv(w)));
        let mut c = d.initial_features;
        for (i, &layers) in d.block_layers.iter().enumerate() {
            c += layers * d.growth_rate;
            if i + 1 < d.block_layers.len() {
                c = transition_channels(c, d.compression);
                h /= 2;
                w /= 2;
            }
        }
        [batch, c, h, w]
    }

    pub fn image_feature_len(&self) -> usize {
        let [_, c, h, w] = self.image_head_output_shape(1);
        c * h * w
    }

    pub fn tabular_output_len(&self) -> usize {
        self.tabular_head.widths.last().copied().unwrap_or(self.tabular_inputs)
    }

    pub fn fused_len(&self) -> usize {
        self.image_feature_len() + self.tabular_output_len()
    }
}

fn transition_channels(c: usize, compression: f64) -> usize {
    ((c as f64 * compression).floor() as usize).max(1)
}

/// Each layer sees the channel concatenation of the block input and every
/// earlier layer's output, and contributes `growth_rate` new channels.
struct DenseBlock {
    layers: Vec<Sequential>,
}

impl DenseBlock {
    fn new(name: &str, in_channels: usize, cfg: &DenseNetConfig, n: usize, rng: &mut Rng) -> Self {
        let bottleneck = cfg.bottleneck_factor * cfg.growth_rate;
        let layers = (0..n)
            .map(|i| {
                let c = in_channels + i * cfg.growth_rate;
                let p = format!("{name}.layer{}", i + 1);
                Sequential::new()
                    .with(BatchNorm::new(&format!("{p}.norm1"), c))
                    .with(Relu::new())
                    .with(Conv2d::new(&format!("{p}.conv1"), c, bottleneck, 1, 1, 0, rng))
                    .with(BatchNorm::new(&format!("{p}.norm2"), bottleneck))
                    .with(Relu::new())
                    .with(Conv2d::new(
                        &format!("{p}.conv2"),
                        bottleneck,
                        cfg.growth_rate,
                        3,
                        1,
                        1,
                        rng,
                    ))
            })
            .collect();
        DenseBlock { layers }
    }
}

impl Layer for DenseBlock {
    fn forward(&mut self, x: &Tensor) -> Tensor {
        let mut feats = x.clone();
        for l in &mut self.layers {
            let y = l.forward(&feats);
            feats = Tensor::concat_channels(&[&feats, &y]).expect("dense block concat");
        }
        feats
    }

    fn infer(&self, x: &Tensor) -> Tensor {
        let mut feats = x.clone();
        for l in &self.layers {
            let y = l.infer(&feats);
            feats = Tensor::concat_channels(&[&feats, &y]).expect("dense block concat");
        }
        feats
    }

    fn backward(&mut self, dy: &Tensor) -> Tensor {
        let mut g = dy.clone();
        for l in self.layers.iter_mut().rev() {
            let (mut before, own) = g.split_channels(g.channels() - l.output_shape(g.shape())[1]);
            before.add_assign(&l.backward(&own));
            g = before;
        }
        g
    }

    fn output_shape(&self, input: [usize; 4]) -> [usize; 4] {
        let mut s = input;
        for l in &self.layers {
            s[1] += l.output_shape(s)[1];
        }
        s
    }

    fn params(&self) -> Vec<&Param> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }
}

fn build_densenet(spec: &ModelSpec, rng: &mut Rng) -> Sequential {
    let d = &spec.image_head;
    let (_, _, in_c) = spec.image_input_shape;
    let mut net = Sequential::new()
        .with(Conv2d::new("image.stem.conv", in_c, d.initial_features, 7, 2, 3, rng))
        .with(BatchNorm::new("image.stem.norm", d.initial_features))
        .with(Relu::new())
        .with(MaxPool2d::new(3, 2, 1));
    let mut c = d.initial_features;
    for (i, &n) in d.block_layers.iter().enumerate() {
        let name = format!("image.block{}", i + 1);
        net.push(DenseBlock::new(&name, c, d, n, rng));
        c += n * d.growth_rate;
        if i + 1 < d.block_layers.len() {
            let out = transition_channels(c, d.compression);
            let t = format!("image.transition{}", i + 1);
            net.push(BatchNorm::new(&format!("{t}.norm"), c));
            net.push(Relu::new());
            net.push(Conv2d::new(&format!("{t}.conv"), c, out, 1, 1, 0, rng));
            net.push(AvgPool2d::new(2));
            c = out;
        }
    }
    net.push(BatchNorm::new("image.final_norm", c));
    net.push(Relu::new());
    net
}

fn build_mlp(name: &str, inputs: usize, widths: &[usize], rng: &mut Rng) -> Sequential {
    let mut net = Sequential::new();
    let mut prev = inputs;
    for (i, &w) in widths.iter().enumerate() {
        net.push(Linear::new(&format!("{name}.fc{}", i + 1), prev, w, rng));
        net.push(Relu::new());
        prev = w;
    }
    net
}

/// Image and tabular inputs of a mini-batch. Images are `[b, c, h, w]`
/// scaled to `[0, 1]`; features are `[b, 13, 1, 1]`.
#[derive(Clone, Debug)]
pub struct Batch {
    pub images: Tensor,
    pub features: Tensor,
    pub labels: Option<Vec<u8>>,
}

impl Batch {
    pub fn new(images: Tensor, features: Tensor, labels: Option<Vec<u8>>) -> Result<Self> {
        if features.batch() != images.batch() {
            return Err(Error::shape("batch size of features", images.batch(), features.batch()));
        }
        if let Some(l) = &labels {
            if l.len() != images.batch() {
                return Err(Error::shape("batch size of labels", images.batch(), l.len()));
            }
        }
        Ok(Batch {
            images,
            features,
            labels,
        })
    }

    /// Stacks samples; the grayscale scan is replicated over the input channels.
    pub fn from_samples(samples: &[&Sample], spec: &ModelSpec) -> Result<Self> {
        let (h, w, c) = spec.image_input_shape;
        let mut images = Vec::with_capacity(samples.len() * c * h * w);
        let mut features = Vec::with_capacity(samples.len() * NUM_FEATURES);
        for s in samples {
            if s.image.height() != h {
                return Err(Error::shape(format!("image height of `{}`", s.id), h, s.image.height()));
            }
            if s.image.width() != w {
                return Err(Error::shape(format!("image width of `{}`", s.id), w, s.image.width()));
            }
            for _ in 0..c {
                images.extend(s.image.pixels().iter().map(|v| v / 255.0));
            }
            features.extend_from_slice(s.features.as_array());
        }
        let n = samples.len();
        Batch::new(
            Tensor::from_vec([n, c, h, w], images)?,
            Tensor::matrix(n, NUM_FEATURES, features)?,
            Some(samples.iter().map(|s| s.label).collect()),
        )
    }

    pub fn len(&self) -> usize {
        self.images.batch()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub struct Model {
    spec: ModelSpec,
    image_head: Sequential,
    tabular_head: Sequential,
    fusion: Box<dyn Layer>,
    classifier: Sequential,
    probs: Option<Tensor>,
}

/// Builds a freshly initialized model. Initialization draws from the
/// `init` stream of `seed`.
pub fn build_model(spec: &ModelSpec, seed: u64) -> Result<Model> {
    spec.validate()?;
    let mut rng = rng::stream(seed, "init", 0);
    let image_head = build_densenet(spec, &mut rng);
    let tabular_head = build_mlp("tabular", spec.tabular_inputs, &spec.tabular_head.widths, &mut rng);
    let fused = spec.fused_len();
    let fusion: Box<dyn Layer> = match spec.fusion {
        FusionNorm::Batch => Box::new(BatchNorm::new("fusion.norm", fused)),
        FusionNorm::Layer => Box::new(LayerNorm::new("fusion.norm", fused)),
    };
    let mut classifier = build_mlp("classifier", fused, &spec.classifier.widths, &mut rng);
    let last = spec.classifier.widths.last().copied().unwrap_or(fused);
    classifier.push(Linear::new("classifier.out", last, spec.output_classes, &mut rng));

    let head = image_head.output_shape([
        1,
        spec.image_input_shape.2,
        spec.image_input_shape.0,
        spec.image_input_shape.1,
    ]);
    if head != spec.image_head_output_shape(1) {
        return Err(Error::Build(format!(
            "image head produces {head:?}, expected {:?}",
            spec.image_head_output_shape(1)
        )));
    }
    if *spec == ModelSpec::default() && head != [1, 1024, 7, 7] {
        return Err(Error::Build(format!(
            "default image head must emit 7x7x1024, got {head:?}"
        )));
    }
    Ok(Model {
        spec: spec.clone(),
        image_head,
        tabular_head,
        fusion,
        classifier,
        probs: None,
    })
}

fn softmax_rows(logits: &Tensor) -> Tensor {
    let k = logits.sample_len();
    let mut p = logits.clone().flatten();
    for row in p.data_mut().chunks_mut(k) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        row.iter_mut().for_each(|v| *v /= s);
    }
    p
}

impl Model {
    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    fn check(&self, batch: &Batch) -> Result<()> {
        let (h, w, c) = self.spec.image_input_shape;
        let [n, bc, bh, bw] = batch.images.shape();
        for (dim, want, got) in [
            ("image channels", c, bc),
            ("image height", h, bh),
            ("image width", w, bw),
        ] {
            if want != got {
                return Err(Error::shape(dim, want, got));
            }
        }
        if batch.features.sample_len() != self.spec.tabular_inputs {
            return Err(Error::shape(
                "tabular features",
                self.spec.tabular_inputs,
                batch.features.sample_len(),
            ));
        }
        if batch.features.batch() != n {
            return Err(Error::shape("batch size of features", n, batch.features.batch()));
        }
        if n == 0 {
            return Err(Error::shape("batch size", 1, 0));
        }
        Ok(())
    }

    /// Output of the image head, `[b, channels, h, w]`, in inference mode.
    pub fn image_features(&self, images: &Tensor) -> Tensor {
        self.image_head.infer(images)
    }

    /// Inference-mode class probabilities, `[b, 2]`. Read-only; safe to call
    /// from several threads.
    pub fn forward(&self, batch: &Batch) -> Result<Tensor> {
        self.check(batch)?;
        let img = self.image_head.infer(&batch.images).flatten();
        let tab = self.tabular_head.infer(&batch.features);
        let fused = Tensor::concat_channels(&[&img, &tab])?;
        let h = self.fusion.infer(&fused);
        Ok(softmax_rows(&self.classifier.infer(&h)))
    }

    /// Training-mode forward pass (batch statistics, caches for backward).
    pub fn forward_train(&mut self, batch: &Batch) -> Result<Tensor> {
        self.check(batch)?;
        let img = self.image_head.forward(&batch.images).flatten();
        let tab = self.tabular_head.forward(&batch.features);
        let fused = Tensor::concat_channels(&[&img, &tab])?;
        let h = self.fusion.forward(&fused);
        let p = softmax_rows(&self.classifier.forward(&h));
        self.probs = Some(p.clone());
        Ok(p)
    }

    /// Backpropagates `d loss / d probabilities` from the last
    /// [`Model::forward_train`], accumulating parameter gradients.
    pub fn backward(&mut self, dprobs: &Tensor) -> Result<()> {
        let p = self
            .probs
            .as_ref()
            .ok_or_else(|| Error::Contract("backward without a training forward pass".into()))?;
        if p.shape() != dprobs.shape() {
            return Err(Error::shape(
                "probability gradient",
                p.data().len(),
                dprobs.data().len(),
            ));
        }
        let k = p.sample_len();
        let mut dz = dprobs.clone();
        for (g, pr) in dz.data_mut().chunks_mut(k).zip(p.data().chunks(k)) {
            let dot: f64 = g.iter().zip(pr).map(|(a, b)| a * b).sum();
            for (gj, pj) in g.iter_mut().zip(pr) {
                *gj = pj * (*gj - dot);
            }
        }
        let dh = self.classifier.backward(&dz);
        let dfused = self.fusion.backward(&dh);
        let img_len = self.spec.image_feature_len();
        let (dimg, dtab) = dfused.split_channels(img_len);
        self.tabular_head.backward(&dtab);
        let head_shape = self.spec.image_head_output_shape(dimg.batch());
        self.image_head.backward(&dimg.reshape(head_shape)?);
        Ok(())
    }

    /// Every parameter and buffer in a fixed order.
    pub fn state(&self) -> Vec<&Param> {
        let mut v = self.image_head.params();
        v.extend(self.tabular_head.params());
        v.extend(self.fusion.params());
        v.extend(self.classifier.params());
        v
    }

    pub fn state_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.image_head.params_mut();
        v.extend(self.tabular_head.params_mut());
        v.extend(self.fusion.params_mut());
        v.extend(self.classifier.params_mut());
        v
    }

    pub fn parameter_count(&self) -> usize {
        self.state().iter().filter(|p| p.trainable).map(|p| p.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in self.state_mut() {
            p.zero_grad();
        }
    }

    /// Copy of every parameter and buffer value.
    pub fn snapshot(&self) -> Vec<Vec<f64>> {
        self.state().iter().map(|p| p.value.clone()).collect()
    }

    pub fn restore(&mut self, snapshot: &[Vec<f64>]) -> Result<()> {
        let mut state = self.state_mut();
        if state.len() != snapshot.len() {
            return Err(Error::shape("snapshot tensors", state.len(), snapshot.len()));
        }
        for (p, v) in state.iter_mut().zip(snapshot) {
            if p.len() != v.len() {
                return Err(Error::shape(p.name.clone(), p.len(), v.len()));
            }
            p.value.copy_from_slice(v);
        }
        Ok(())
    }
}

/// `argmax` per row; an exact 0.5/0.5 tie predicts ill (1).
pub fn predict_class(probabilities: &Tensor) -> Vec<u8> {
    probabilities
        .data()
        .chunks(probabilities.sample_len())
        .map(|r| u8::from(r[1] >= r[0]))
        .collect()
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"TUMORNET";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    version: u32,
    spec: ModelSpec,
    scaler: ScalerParams,
    metadata: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

/// A model restored from disk together with what it was saved with.
pub struct Checkpoint {
    pub model: Model,
    pub scaler: ScalerParams,
    pub metadata: serde_json::Value,
}

/// Writes `magic | version | header length | JSON header | f64 LE blobs`.
pub fn save_checkpoint(path: &Path, model: &Model, scaler: &ScalerParams, metadata: serde_json::Value) -> Result<()> {
    let state = model.state();
    let header = CheckpointHeader {
        version: CHECKPOINT_VERSION,
        spec: model.spec.clone(),
        scaler: *scaler,
        metadata,
        tensors: state
            .iter()
            .map(|p| TensorEntry {
                name: p.name.clone(),
                shape: p.shape.clone(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let io = |e| Error::io(format!("writing {}", path.display()), e);
    let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    out.write_all(CHECKPOINT_MAGIC).map_err(io)?;
    out.write_all(&CHECKPOINT_VERSION.to_le_bytes()).map_err(io)?;
    out.write_all(&(json.len() as u64).to_le_bytes()).map_err(io)?;
    out.write_all(&json).map_err(io)?;
    for p in state {
        for v in &p.value {
            out.write_all(&v.to_le_bytes()).map_err(io)?;
        }
    }
    out.flush().map_err(io)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let io = |e| Error::io(format!("reading {}", path.display()), e);
    let mut f = std::io::BufReader::new(std::fs::File::open(path).map_err(io)?);
    let mut magic = [0u8; 8];
    f.read_exact(&mut magic).map_err(io)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint(format!("{} is not a checkpoint", path.display())));
    }
    let mut word = [0u8; 4];
    f.read_exact(&mut word).map_err(io)?;
    let version = u32::from_le_bytes(word);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
    }
    let mut len = [0u8; 8];
    f.read_exact(&mut len).map_err(io)?;
    let mut json = vec![0u8; u64::from_le_bytes(len) as usize];
    f.read_exact(&mut json).map_err(io)?;
    let header: CheckpointHeader = serde_json::from_slice(&json)?;

    let mut model = build_model(&header.spec, 0)?;
    let mut state = model.state_mut();
    if state.len() != header.tensors.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint holds {} tensors, spec builds {}",
            header.tensors.len(),
            state.len()
        )));
    }
    let mut buf = [0u8; 8];
    for (p, entry) in state.iter_mut().zip(&header.tensors) {
        if p.name != entry.name || p.shape != entry.shape {
            return Err(Error::Checkpoint(format!(
                "tensor `{}` {:?} does not match `{}` {:?}",
                entry.name, entry.shape, p.name, p.shape
            )));
        }
        for v in p.value.iter_mut() {
            f.read_exact(&mut buf).map_err(io)?;
            *v = f64::from_le_bytes(buf);
        }
    }
    Ok(Checkpoint {
        model,
        scaler: header.scaler,
        metadata: header.metadata,
    })
}
