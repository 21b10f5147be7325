use rand::Rng as _;
use rayon::prelude::*;

use super::ops::{col2im, im2col, matmul, Window};
use super::{Param, Tensor};
use crate::rng::Rng;

/// A differentiable layer.
///
/// `forward` runs in training mode and remembers what `backward` needs;
/// `backward` takes the gradient of the loss with respect to the last
/// output, adds parameter gradients into [`Param::grad`] and returns the
/// gradient with respect to the last input.
pub trait Layer: Send + Sync {
    fn forward(&mut self, x: &Tensor) -> Tensor;
    fn infer(&self, x: &Tensor) -> Tensor;
    fn backward(&mut self, dy: &Tensor) -> Tensor;
    fn output_shape(&self, input: [usize; 4]) -> [usize; 4];
    fn params(&self) -> Vec<&Param> {
        Vec::new()
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        Vec::new()
    }
}

fn uniform(rng: &mut Rng, n: usize, limit: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-limit..limit)).collect()
}

pub struct Conv2d {
    in_channels: usize,
    out_channels: usize,
    win: Window,
    weight: Param,
    x: Option<Tensor>,
}

impl Conv2d {
    /// Bias-free convolution, He-uniform initialized.
    pub fn new(
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut Rng,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        let limit = (6.0 / fan_in as f64).sqrt();
        Conv2d {
            in_channels,
            out_channels,
            win: Window { kernel, stride, pad },
            weight: Param::trainable(
                format!("{name}.weight"),
                vec![out_channels, in_channels, kernel, kernel],
                uniform(rng, out_channels * fan_in, limit),
            ),
            x: None,
        }
    }

    fn is_pointwise(&self) -> bool {
        self.win
            == Window {
                kernel: 1,
                stride: 1,
                pad: 0,
            }
    }

    fn patches<'a>(&self, xs: &'a [f64], h: usize, w: usize) -> std::borrow::Cow<'a, [f64]> {
        if self.is_pointwise() {
            std::borrow::Cow::Borrowed(xs)
        } else {
            let Window { kernel, stride, pad } = self.win;
            std::borrow::Cow::Owned(im2col(xs, self.in_channels, h, w, kernel, stride, pad))
        }
    }

    fn run(&self, x: &Tensor) -> Tensor {
        let [n, c, h, w] = x.shape();
        assert_eq!(c, self.in_channels, "{}: input channels", self.weight.name);
        let [_, o, oh, ow] = self.output_shape(x.shape());
        let k = c * self.win.kernel * self.win.kernel;
        let p = oh * ow;
        let mut y = Tensor::zeros([n, o, oh, ow]);
        y.data_mut().par_chunks_mut(o * p).enumerate().for_each(|(i, out)| {
            let col = self.patches(x.sample(i), h, w);
            matmul(o, k, p, &self.weight.value, false, &col, false, 0.0, out);
        });
        y
    }
}

impl Layer for Conv2d {
    fn forward(&mut self, x: &Tensor) -> Tensor {
        let y = self.run(x);
        self.x = Some(x.clone());
        y
    }

    fn infer(&self, x: &Tensor) -> Tensor {
        self.run(x)
    }

    fn backward(&mut self, dy: &Tensor) -> Tensor {
        let x = self.x.as_ref().expect("conv backward before forward");
        let [n, c, h, w] = x.shape();
        let [_, o, oh, ow] = dy.shape();
        let k = c * self.win.kernel * self.win.kernel;
        let p = oh * ow;
        let Window { kernel, stride, pad } = self.win;
        let per_sample: Vec<(Vec<f64>, Vec<f64>)> = (0..n)
            .into_par_iter()
            .map(|i| {
                let col = self.patches(x.sample(i), h, w);
                let g = dy.sample(i);
                let mut dw = vec![0.0; o * k];
                matmul(o, p, k, g, false, &col, true, 0.0, &mut dw);
                let mut dcol = vec![0.0; k * p];
                matmul(k, o, p, &self.weight.value, true, g, false, 0.0, &mut dcol);
                let dx = if self.is_pointwise() {
                    dcol
                } else {
                    let mut dx = vec![0.0; c * h * w];
                    col2im(&dcol, &mut dx, c, h, w, kernel, stride, pad);
                    dx
                };
                (dx, dw)
            })
            .collect();
        let mut dx = Vec::with_capacity(n * c * h * w);
        for (dxi, dwi) in per_sample {
            dx.extend_from_slice(&dxi);
            for (g, d) in self.weight.grad.iter_mut().zip(&dwi) {
                *g += d;
            }
        }
        Tensor::from_vec([n, c, h, w], dx).expect("conv input gradient shape")
    }

    fn output_shape(&self, [n, _, h, w]: [usize; 4]) -> [usize; 4] {
        [n, self.out_channels, self.win.out_len(h), self.win.out_len(w)]
    }

    fn params(&self) -> Vec<&Param> {
        vec![&self.weight]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight]
    }
}

#[derive(Default)]
pub struct Relu {
    y: Option<Tensor>,
}

impl Relu {
    pub fn new() -> Self {
        Relu::default()
    }
}

impl Layer for Relu {
    fn forward(&mut self, x: &Tensor) -> Tensor {
        let y = self.infer(x);
        self.y = Some(y.clone());
        y
    }

    fn infer(&self, x: &Tensor) -> Tensor {
        let mut y = x.clone();
        y.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
        y
    }

    fn backward(&mut self, dy: &Tensor) -> Tensor {
        let y = self.y.as_ref().expect("relu backward before forward");
        let mut dx = dy.clone();
        for (d, &v) in dx.data_mut().iter_mut().zip(y.data()) {
            if v <= 0.0 {
                *d = 0.0;
            }
        }
        dx
    }

    fn output_shape(&self, input: [usize; 4]) -> [usize; 4] {
        input
    }
}

/// Max pooling; padded positions never win.
pub struct MaxPool2d {
    win: Window,
    cache: Option<([usize; 4], Vec<usize>)>,
}

impl MaxPool2d {
    pub fn new(kernel: usize, stride: usize, pad: usize) -> Self {
        MaxPool2d {
            win: Window { kernel, stride, pad },
            cache: None,
        }
    }

    fn run(&self, x: &Tensor) -> (Tensor, Vec<usize>) {
        let [n, c, h, w] = x.shape();
        let [_, _, oh, ow] = self.output_shape(x.shape());
        let Window { kernel, stride, pad } = self.win;
        let mut y = Tensor::zeros([n, c, oh, ow]);
        let mut arg = vec![0usize; n * c * oh * ow];
        let xd = x.data();
        y.data_mut()
            .par_chunks_mut(oh * ow)
            .zip(arg.par_chunks_mut(oh * ow))
            .enumerate()
            .for_each(|(plane, (out, idx))| {
                let base = plane * h * w;
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut best = f64::NEG_INFINITY;
                        let mut best_i = usize::MAX;
                        for ky in 0..kernel {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..kernel {
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                let j = base + iy as usize * w + ix as usize;
                                if best_i == usize::MAX || xd[j] > best {
                                    best = xd[j];
                                    best_i = j;
                                }
                            }
                        }
                        out[oy * ow + ox] = best;
                        idx[oy * ow + ox] = best_i;
                    }
                }
            });
        (y, arg)
    }
}

impl Layer for MaxPool2d {
    fn forward(&mut self, x: &Tensor) -> Tensor {
        let (y, arg) = self.run(x);
        self.cache = Some((x.shape(), arg));
        y
    }

    fn infer(&self, x: &Tensor) -> Tensor {
        self.run(x).0
    }

    fn backward(&mut self, dy: &Tensor) -> Tensor {
        let (shape, arg) = self.cache.as_ref().expect("maxpool backward before forward");
        let mut dx = Tensor::zeros(*shape);
        let d = dx.data_mut();
        for (&g, &j) in dy.data().iter().zip(arg) {
            d[j] += g;
        }
        dx
    }

    fn output_shape(&self, [n, c, h, w]: [usize; 4]) -> [usize; 4] {
        [n, c, self.win.out_len(h), self.win.out_len(w)]
    }
}

/// Non-overlapping average pooling (`stride == kernel`, no padding); trailing
/// rows and columns that do not fill a window are dropped.
pub struct AvgPool2d {
    kernel: usize,
    input: Option<[usize; 4]>,
}

impl AvgPool2d {
    pub fn new(kernel: usize) -> Self {
        AvgPool2d { kernel, input: None }
    }
}

impl Layer for AvgPool2d {
    fn forward(&mut self, x: &Tensor) -> Tensor {
        self.input = Some(x.shape());
        self.infer(x)
    }

    fn infer(&self, x: &Tensor) -> Tensor {
        let [n, c, h, w] = x.shape();
        let k = self.kernel;
        let (oh, ow) = (h / k, w / k);
        let scale = 1.0 / (k * k) as f64;
        let mut y = Tensor::zeros([n, c, oh, ow]);
        let xd = x.data();
        y.data_mut()
            .par_chunks_mut(oh * ow)
            .enumerate()
            .for_each(|(plane, out)| {
                let src = &xd[plane * h * w..(plane + 1) * h * w];
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut s = 0.0;
                        for ky in 0..k {
                            for kx in 0..k {
                                s += src[(oy * k + ky) * w + ox * k + kx];
                            }
                        }
                        out[oy * ow + ox] = s * scale;
                    }
                }
            });
        y
    }

    fn backward(&mut self, dy: &Tensor) -> Tensor {
        let shape = self.input.expect("avgpool backward before forward");
        let [_, _, h, w] = shape;
        let [_, _, oh, ow] = dy.shape();
        let k = self.kernel;
        let scale = 1.0 / (k * k) as f64;
        let mut dx = Tensor::zeros(shape);
        dx.data_mut()
            .par_chunks_mut(h * w)
            .zip(dy.data().par_chunks(oh * ow))
            .for_each(|(d, g)| {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let v = g[oy * ow + ox] * scale;
                        for ky in 0..k {
                            for kx in 0..k {
                                d[(oy * k + ky) * w + ox * k + kx] += v;
                            }
                        }
                    }
                }
            });
        dx
    }

    fn output_shape(&self, [n, c, h, w]: [usize; 4]) -> [usize; 4] {
        [n, c, h / self.kernel, w / self.kernel]
    }
}

/// Batch normalization over every axis except channels. On `[n, f, 1, 1]`
/// inputs this is ordinary feature-wise batch normalization.
pub struct BatchNorm {
    eps: f64,
    momentum: f64,
    gamma: Param,
    beta: Param,
    running_mean: Param,
    running_var: Param,
    cache: Option<(Tensor, Vec<f64>)>,
}

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

impl BatchNorm {
    pub fn new(name: &str, channels: usize) -> Self {
        BatchNorm {
            eps: BN_EPS,
            momentum: BN_MOMENTUM,
            gamma: Param::trainable(format!("{name}.gamma"), vec![channels], vec![1.0; channels]),
            beta: Param::trainable(format!("{name}.beta"), vec![channels], vec![0.0; channels]),
            running_mean: Param::buffer(format!("{name}.running_mean"), vec![channels], vec![0.0; channels]),
            running_var: Param::buffer(format!("{name}.running_var"), vec![channels], vec![1.0; channels]),
            cache: None,
        }
    }

    fn channels(&self) -> usize {
        self.gamma.len()
    }

    fn normalize(&self, x: &Tensor, mean: &[f64], inv_std: &[f64]) -> (Tensor, Tensor) {
        let [_, c, h, w] = x.shape();
        let hw = h * w;
        let mut xhat = x.clone();
        xhat.data_mut().par_chunks_mut(c * hw).for_each(|s| {
            for ch in 0..c {
                for v in &mut s[ch * hw..(ch + 1) * hw] {
                    *v = (*v - mean[ch]) * inv_std[ch];
                }
            }
        });
        let mut y = xhat.clone();
        let (g, b) = (&self.gamma.value, &self.beta.value);
        y.data_mut().par_chunks_mut(c * hw).for_each(|s| {
            for ch in 0..c {
                for v in &mut s[ch * hw..(ch + 1) * hw] {
                    *v = g[ch] * *v + b[ch];
                }
            }
        });
        (xhat, y)
    }
}

/// Per-channel `(sum_a, sum_a*b)` over batch and spatial axes.
fn channel_sums(a: &Tensor, b: Option<&Tensor>) -> (Vec<f64>, Vec<f64>) {
    let [n, c, h, w] = a.shape();
    let hw = h * w;
    (0..c)
        .into_par_iter()
        .map(|ch| {
            let (mut s, mut sp) = (0.0, 0.0);
            for i in 0..n {
                let off = i * c * hw + ch * hw;
                let av = &a.data()[off..off + hw];
                s += av.iter().sum::<f64>();
                if let Some(b) = b {
                    let bv = &b.data()[off..off + hw];
                    sp += av.iter().zip(bv).map(|(x, y)| x * y).sum::<f64>();
                }
            }
            (s, sp)
        })
        .unzip()
}

impl Layer for BatchNorm {
    fn forward(&mut self, x: &Tensor) -> Tensor {
        let [n, c, h, w] = x.shape();
        assert_eq!(c, self.channels(), "{}: channels", self.gamma.name);
        let m = (n * h * w) as f64;
        let (sums, _) = channel_sums(x, None);
        let mean: Vec<f64> = sums.iter().map(|s| s / m).collect();
        let hw = h * w;
        let var: Vec<f64> = (0..c)
            .into_par_iter()
            .map(|ch| {
                let mut s = 0.0;
                for i in 0..n {
                    let off = i * c * hw + ch * hw;
                    s += x.data()[off..off + hw]
                        .iter()
                        .map(|v| (v - mean[ch]).powi(2))
                        .sum::<f64>();
                }
                s / m
            })
            .collect();
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        let (xhat, y) = self.normalize(x, &mean, &inv_std);

        let unbias = if m > 1.0 { m / (m - 1.0) } else { 1.0 };
        let mo = self.momentum;
        for ch in 0..c {
            let rm = &mut self.running_mean.value[ch];
            *rm = (1.0 - mo) * *rm + mo * mean[ch];
            let rv = &mut self.running_var.value[ch];
            *rv = (1.0 - mo) * *rv + mo * var[ch] * unbias;
        }
        self.cache = Some((xhat, inv_std));
        y
    }

    fn infer(&self, x: &Tensor) -> Tensor {
        assert_eq!(x.channels(), self.channels(), "{}: channels", self.gamma.name);
        let inv_std: Vec<f64> = self
            .running_var
            .value
            .iter()
            .map(|v| 1.0 / (v + self.eps).sqrt())
            .collect();
        self.normalize(x, &self.running_mean.value, &inv_std).1
    }

    fn backward(&mut self, dy: &Tensor) -> Tensor {
        let (xhat, inv_std) = self.cache.as_ref().expect("batchnorm backward before forward");
        let [n, c, h, w] = dy.shape();
        let m = (n * h * w) as f64;
        let (sum_dy, sum_dy_xhat) = channel_sums(dy, Some(xhat));
        for ch in 0..c {
            self.gamma.grad[ch] += sum_dy_xhat[ch];
            self.beta.grad[ch] += sum_dy[ch];
        }
        let hw = h * w;
        let g = &self.gamma.value;
        let mut dx = dy.clone();
        dx.data_mut()
            .par_chunks_mut(c * hw)
            .zip(xhat.data().par_chunks(c * hw))
            .for_each(|(d, xh)| {
                for ch in 0..c {
                    let k = g[ch] * inv_std[ch] / m;
                    for j in ch * hw..(ch + 1) * hw {
                        d[j] = k * (m * d[j] - sum_dy[ch] - xh[j] * sum_dy_xhat[ch]);
                    }
                }
            });
        dx
    }

    fn output_shape(&self, input: [usize; 4]) -> [usize; 4] {
        input
    }

    fn params(&self) -> Vec<&Param> {
        vec![&self.gamma, &self.beta, &self.running_mean, &self.running_var]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![
            &mut self.gamma,
            &mut self.beta,
            &mut self.running_mean,
            &mut self.running_var,
        ]
    }
}

/// Normalizes each sample over all of its features, then applies a
/// per-feature affine map. Identical in training and inference.
pub struct LayerNorm {
    eps: f64,
    gamma: Param,
    beta: Param,
    cache: Option<(Tensor, Vec<f64>)>,
}

impl LayerNorm {
    pub fn new(name: &str, features: usize) -> Self {
        LayerNorm {
            eps: BN_EPS,
            gamma: Param::trainable(format!("{name}.gamma"), vec![features], vec![1.0; features]),
            beta: Param::trainable(format!("{name}.beta"), vec![features], vec![0.0; features]),
            cache: None,
        }
    }

    fn run(&self, x: &Tensor) -> (Tensor, Tensor, Vec<f64>) {
        let f = x.sample_len();
        assert_eq!(f, self.gamma.len(), "{}: features", self.gamma.name);
        let mut xhat = x.clone();
        let inv_std: Vec<f64> = xhat
            .data_mut()
            .par_chunks_mut(f)
            .map(|s| {
                let mean = s.iter().sum::<f64>() / f as f64;
                let var = s.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / f as f64;
                let inv = 1.0 / (var + self.eps).sqrt();
                s.iter_mut().for_each(|v| *v = (*v - mean) * inv);
                inv
            })
            .collect();
        let mut y = xhat.clone();
        y.data_mut().par_chunks_mut(f).for_each(|s| {
            for (j, v) in s.iter_mut().enumerate() {
                *v = self.gamma.value[j] * *v + self.beta.value[j];
            }
        });
        (xhat, y, inv_std)
    }
}

impl Layer for LayerNorm {
    fn forward(&mut self, x: &Tensor) -> Tensor {
        let (xhat, y, inv_std) = self.run(x);
        self.cache = Some((xhat, inv_std));
        y
    }

    fn infer(&self, x: &Tensor) -> Tensor {
        self.run(x).1
    }

    fn backward(&mut self, dy: &Tensor) -> Tensor {
        let (xhat, inv_std) = self.cache.as_ref().expect("layernorm backward before forward");
        let f = dy.sample_len();
        for (g, xh) in dy.data().chunks(f).zip(xhat.data().chunks(f)) {
            for j in 0..f {
                self.gamma.grad[j] += g[j] * xh[j];
                self.beta.grad[j] += g[j];
            }
        }
        let gamma = &self.gamma.value;
        let mut dx = dy.clone();
        dx.data_mut()
            .par_chunks_mut(f)
            .zip(xhat.data().par_chunks(f))
            .zip(inv_std.par_iter())
            .for_each(|((d, xh), &inv)| {
                let mut s = 0.0;
                let mut sx = 0.0;
                for j in 0..f {
                    let g = d[j] * gamma[j];
                    s += g;
                    sx += g * xh[j];
                }
                let fl = f as f64;
                for j in 0..f {
                    let g = d[j] * gamma[j];
                    d[j] = inv / fl * (fl * g - s - xh[j] * sx);
                }
            });
        dx
    }

    fn output_shape(&self, input: [usize; 4]) -> [usize; 4] {
        input
    }

    fn params(&self) -> Vec<&Param> {
        vec![&self.gamma, &self.beta]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.gamma, &mut self.beta]
    }
}

/// Fully connected layer on `[n, in, 1, 1]` inputs, Glorot-uniform weights
/// and zero bias.
pub struct Linear {
    in_features: usize,
    out_features: usize,
    weight: Param,
    bias: Param,
    x: Option<Tensor>,
}

impl Linear {
    pub fn new(name: &str, in_features: usize, out_features: usize, rng: &mut Rng) -> Self {
        let limit = (6.0 / (in_features + out_features) as f64).sqrt();
        Linear {
            in_features,
            out_features,
            weight: Param::trainable(
                format!("{name}.weight"),
                vec![out_features, in_features],
                uniform(rng, in_features * out_features, limit),
            ),
            bias: Param::trainable(format!("{name}.bias"), vec![out_features], vec![0.0; out_features]),
            x: None,
        }
    }

    fn run(&self, x: &Tensor) -> Tensor {
        let n = x.batch();
        assert_eq!(x.sample_len(), self.in_features, "{}: input width", self.weight.name);
        let mut y = vec![0.0; n * self.out_features];
        let (i, o) = (self.in_features, self.out_features);
        matmul(n, i, o, x.data(), false, &self.weight.value, true, 0.0, &mut y);
        for row in y.chunks_mut(o) {
            for (v, b) in row.iter_mut().zip(&self.bias.value) {
                *v += b;
            }
        }
        Tensor::matrix(n, o, y).expect("linear output shape")
    }
}

impl Layer for Linear {
    fn forward(&mut self, x: &Tensor) -> Tensor {
        let y = self.run(x);
        self.x = Some(x.clone());
        y
    }

    fn infer(&self, x: &Tensor) -> Tensor {
        self.run(x)
    }

    fn backward(&mut self, dy: &Tensor) -> Tensor {
        let x = self.x.as_ref().expect("linear backward before forward");
        let n = x.batch();
        let (i, o) = (self.in_features, self.out_features);
        matmul(o, n, i, dy.data(), true, x.data(), false, 1.0, &mut self.weight.grad);
        for row in dy.data().chunks(o) {
            for (g, d) in self.bias.grad.iter_mut().zip(row) {
                *g += d;
            }
        }
        let mut dx = vec![0.0; n * i];
        matmul(n, o, i, dy.data(), false, &self.weight.value, false, 0.0, &mut dx);
        Tensor::from_vec(x.shape(), dx).expect("linear input gradient shape")
    }

    fn output_shape(&self, [n, ..]: [usize; 4]) -> [usize; 4] {
        [n, self.out_features, 1, 1]
    }

    fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }
}

#[derive(Default)]
pub struct Sequential {
    layers: Vec<Box<dyn Layer>>,
}

impl Sequential {
    pub fn new() -> Self {
        Sequential::default()
    }

    pub fn push(&mut self, layer: impl Layer + 'static) {
        self.layers.push(Box::new(layer));
    }

    pub fn with(mut self, layer: impl Layer + 'static) -> Self {
        self.push(layer);
        self
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }
}

impl Layer for Sequential {
    fn forward(&mut self, x: &Tensor) -> Tensor {
        let mut h = x.clone();
        for l in &mut self.layers {
            h = l.forward(&h);
        }
        h
    }

    fn infer(&self, x: &Tensor) -> Tensor {
        let mut h = x.clone();
        for l in &self.layers {
            h = l.infer(&h);
        }
        h
    }

    fn backward(&mut self, dy: &Tensor) -> Tensor {
        let mut g = dy.clone();
        for l in self.layers.iter_mut().rev() {
            g = l.backward(&g);
        }
        g
    }

    fn output_shape(&self, input: [usize; 4]) -> [usize; 4] {
        self.layers.iter().fold(input, |s, l| l.output_shape(s))
    }

    fn params(&self) -> Vec<&Param> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng() -> Rng {
        Rng::seed_from_u64(11)
    }

    fn random(shape: [usize; 4], seed: u64) -> Tensor {
        let mut r = Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Checks d<y, probe>/dx and d<y, probe>/dθ against central differences.
    fn grad_check(layer: &mut dyn Layer, x: &Tensor) {
        let y = layer.forward(x);
        let probe = random(y.shape(), 99);
        let objective = |l: &mut dyn Layer, x: &Tensor| -> f64 {
            l.forward(x).data().iter().zip(probe.data()).map(|(a, b)| a * b).sum()
        };
        for p in layer.params_mut() {
            p.zero_grad();
        }
        layer.forward(x);
        let dx = layer.backward(&probe);
        let h = 1e-5;
        for j in 0..x.data().len() {
            let mut xp = x.clone();
            xp.data_mut()[j] += h;
            let mut xm = x.clone();
            xm.data_mut()[j] -= h;
            let fd = (objective(layer, &xp) - objective(layer, &xm)) / (2.0 * h);
            assert!(
                (fd - dx.data()[j]).abs() < 1e-6 * (1.0 + fd.abs()),
                "dx[{j}]: {fd} vs {}",
                dx.data()[j]
            );
        }
        let n_params = layer.params().len();
        for pi in 0..n_params {
            if !layer.params()[pi].trainable {
                continue;
            }
            let len = layer.params()[pi].len();
            for j in 0..len.min(12) {
                let analytic = layer.params()[pi].grad[j];
                layer.params_mut()[pi].value[j] += h;
                let fp = objective(layer, x);
                layer.params_mut()[pi].value[j] -= 2.0 * h;
                let fm = objective(layer, x);
                layer.params_mut()[pi].value[j] += h;
                let fd = (fp - fm) / (2.0 * h);
                assert!(
                    (fd - analytic).abs() < 1e-6 * (1.0 + fd.abs()),
                    "param {pi}[{j}]: {fd} vs {analytic}"
                );
            }
        }
    }

    #[test]
    fn conv_gradients() {
        let mut c = Conv2d::new("c", 2, 3, 3, 2, 1, &mut rng());
        grad_check(&mut c, &random([2, 2, 5, 6], 1));
        let mut p = Conv2d::new("p", 3, 2, 1, 1, 0, &mut rng());
        grad_check(&mut p, &random([2, 3, 3, 3], 2));
    }

    #[test]
    fn conv_matches_direct_sum() {
        let c = Conv2d::new("c", 2, 2, 3, 1, 1, &mut rng());
        let x = random([1, 2, 4, 4], 3);
        let y = c.infer(&x);
        let wv = &c.weight.value;
        for o in 0..2 {
            for oy in 0..4isize {
                for ox in 0..4isize {
                    let mut s = 0.0;
                    for ci in 0..2 {
                        for ky in 0..3isize {
                            for kx in 0..3isize {
                                let (iy, ix) = (oy + ky - 1, ox + kx - 1);
                                if (0..4).contains(&iy) && (0..4).contains(&ix) {
                                    s += wv[((o * 2 + ci) * 3 + ky as usize) * 3 + kx as usize]
                                        * x.data()[ci * 16 + iy as usize * 4 + ix as usize];
                                }
                            }
                        }
                    }
                    let got = y.data()[o * 16 + oy as usize * 4 + ox as usize];
                    assert!((s - got).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn pooling_gradients() {
        grad_check(&mut MaxPool2d::new(3, 2, 1), &random([2, 2, 5, 5], 4));
        grad_check(&mut AvgPool2d::new(2), &random([2, 2, 5, 4], 5));
    }

    #[test]
    fn norm_gradients() {
        grad_check(&mut BatchNorm::new("bn", 3), &random([4, 3, 2, 2], 6));
        grad_check(&mut BatchNorm::new("bn1d", 5), &random([6, 5, 1, 1], 7));
        grad_check(&mut LayerNorm::new("ln", 5), &random([3, 5, 1, 1], 8));
    }

    #[test]
    fn linear_and_relu_gradients() {
        grad_check(&mut Linear::new("fc", 4, 3, &mut rng()), &random([5, 4, 1, 1], 9));
        grad_check(&mut Relu::new(), &random([2, 3, 2, 2], 10));
    }

    #[test]
    fn batchnorm_train_normalizes_and_tracks_running_stats() {
        let mut bn = BatchNorm::new("bn", 2);
        let x = random([8, 2, 3, 3], 12);
        let y = bn.forward(&x);
        let (s, _) = channel_sums(&y, None);
        assert!(s.iter().all(|v| v.abs() < 1e-9));
        assert!(bn.running_mean.value.iter().any(|v| *v != 0.0));
        assert_eq!(bn.infer(&x).shape(), x.shape());
    }

    #[test]
    fn pool_shapes() {
        assert_eq!(MaxPool2d::new(3, 2, 1).output_shape([1, 64, 120, 120]), [1, 64, 60, 60]);
        assert_eq!(AvgPool2d::new(2).output_shape([1, 512, 15, 15]), [1, 512, 7, 7]);
        let mut r = rng();
        assert_eq!(
            Conv2d::new("s", 3, 64, 7, 2, 3, &mut r).output_shape([1, 3, 240, 240]),
            [1, 64, 120, 120]
        );
    }
}
