//! Brute-force reference implementations shared by the integration tests
//! and the acceptance suite. Each one follows the textbook definition
//! directly and shares no code with the library.
#![allow(dead_code, clippy::needless_range_loop)]

use std::collections::HashSet;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tumornet::data::{Dataset, FeatureVector, Sample};
use tumornet::features::GrayImage;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random image with integer intensities in `[0, 255]`.
pub fn random_image(rng: &mut ChaCha8Rng, width: usize, height: usize) -> GrayImage {
    let pixels = (0..width * height).map(|_| rng.gen_range(0..=255u32) as f64).collect();
    GrayImage::new(width, height, pixels).unwrap()
}

/// Random image whose intensities take only a few distinct values, so that
/// co-occurrence matrices are sparse and Tamura ties are common.
pub fn random_blocky_image(rng: &mut ChaCha8Rng, width: usize, height: usize) -> GrayImage {
    let palette: Vec<f64> = (0..rng.gen_range(1..=3))
        .map(|_| rng.gen_range(0..=255u32) as f64)
        .collect();
    let pixels = (0..width * height)
        .map(|_| palette[rng.gen_range(0..palette.len())])
        .collect();
    GrayImage::new(width, height, pixels).unwrap()
}

pub fn pixels(img: &GrayImage) -> Vec<f64> {
    let mut out = Vec::new();
    for y in 0..img.height() {
        for x in 0..img.width() {
            out.push(img.get(y, x));
        }
    }
    out
}

/// mean, variance, std, skewness, kurtosis with population moments.
pub fn first_order(xs: &[f64]) -> [f64; 5] {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let mut m2 = 0.0;
    let mut m3 = 0.0;
    let mut m4 = 0.0;
    for &x in xs {
        let d = x - mean;
        m2 += d * d;
        m3 += d * d * d;
        m4 += d * d * d * d;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    let sd = m2.sqrt();
    if sd == 0.0 {
        return [mean, 0.0, 0.0, 0.0, 0.0];
    }
    [mean, m2, sd, m3 / (sd * sd * sd), m4 / (m2 * m2)]
}

pub fn quantize(v: f64, levels: usize) -> usize {
    ((v * levels as f64 / 256.0).floor() as usize).min(levels - 1)
}

/// Symmetric normalized co-occurrence matrix by direct pair enumeration.
pub fn glcm(img: &GrayImage, levels: usize, dy: isize, dx: isize) -> Vec<Vec<f64>> {
    let mut counts = vec![vec![0u64; levels]; levels];
    let (h, w) = (img.height() as isize, img.width() as isize);
    for y in 0..h {
        for x in 0..w {
            let (y2, x2) = (y + dy, x + dx);
            if y2 < 0 || y2 >= h || x2 < 0 || x2 >= w {
                continue;
            }
            let i = quantize(img.get(y as usize, x as usize), levels);
            let j = quantize(img.get(y2 as usize, x2 as usize), levels);
            counts[i][j] += 1;
            counts[j][i] += 1;
        }
    }
    let total: u64 = counts.iter().flatten().sum();
    counts
        .iter()
        .map(|row| row.iter().map(|&c| c as f64 / total as f64).collect())
        .collect()
}

/// entropy, contrast, energy, dissimilarity, correlation, asm, homogeneity.
pub fn haralick(p: &[Vec<f64>]) -> [f64; 7] {
    let l = p.len();
    let (mut mu_i, mut mu_j) = (0.0, 0.0);
    for i in 0..l {
        for j in 0..l {
            mu_i += i as f64 * p[i][j];
            mu_j += j as f64 * p[i][j];
        }
    }
    let (mut var_i, mut var_j) = (0.0, 0.0);
    let (mut entropy, mut contrast, mut dissim, mut cov, mut asm, mut homog) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    for i in 0..l {
        for j in 0..l {
            let v = p[i][j];
            let d = i as f64 - j as f64;
            var_i += (i as f64 - mu_i).powi(2) * v;
            var_j += (j as f64 - mu_j).powi(2) * v;
            cov += (i as f64 - mu_i) * (j as f64 - mu_j) * v;
            if v > 0.0 {
                entropy -= v * v.ln();
            }
            contrast += d * d * v;
            dissim += d.abs() * v;
            asm += v * v;
            homog += v / (1.0 + d * d);
        }
    }
    let sd = var_i.sqrt() * var_j.sqrt();
    let corr = if sd < 1e-12 { 1.0 } else { cov / sd };
    [entropy, contrast, asm.sqrt(), dissim, corr, asm, homog]
}

/// Tamura coarseness in exact integer arithmetic: every window mean is
/// compared as a sum scaled by a power of four. Requires integer pixels.
pub fn tamura(img: &GrayImage, max_k: u32) -> f64 {
    let (h, w) = (img.height() as i64, img.width() as i64);
    let px = |y: i64, x: i64| img.get(y as usize, x as usize) as i64;
    let window_sum = |y0: i64, y1: i64, x0: i64, x1: i64| {
        let mut s = 0i64;
        for y in y0..y1 {
            for x in x0..x1 {
                s += px(y, x);
            }
        }
        s
    };
    let reach = 1i64 << max_k;
    let mut total = 0.0;
    let mut count = 0usize;
    for y in reach..=h - reach {
        for x in reach..=w - reach {
            // E_k * 4^max_k, exact.
            let mut best_k = 1;
            let mut best = -1i64;
            for k in 1..=max_k {
                let half = 1i64 << (k - 1);
                let size = 2 * half;
                let horiz = window_sum(y - half, y + half, x, x + size) - window_sum(y - half, y + half, x - size, x);
                let vert = window_sum(y, y + size, x - half, x + half) - window_sum(y - size, y, x - half, x + half);
                let e = horiz.abs().max(vert.abs()) << (2 * (max_k - k));
                if e > best {
                    best = e;
                    best_k = k;
                }
            }
            total += (1u64 << best_k) as f64;
            count += 1;
        }
    }
    total / count as f64
}

/// All thirteen features in canonical order, GLCM statistics averaged over
/// the 0°, 45°, 90° and 135° neighbours at distance one.
pub fn feature_vector(img: &GrayImage, levels: usize, max_k: u32) -> [f64; 13] {
    let fo = first_order(&pixels(img));
    let mut h = [0.0; 7];
    for (dy, dx) in [(0, 1), (-1, 1), (-1, 0), (-1, -1)] {
        let f = haralick(&glcm(img, levels, dy, dx));
        for (a, b) in h.iter_mut().zip(f) {
            *a += b / 4.0;
        }
    }
    let [entropy, contrast, energy, dissim, corr, asm, homog] = h;
    [
        fo[0],
        fo[1],
        fo[2],
        fo[3],
        fo[4],
        entropy,
        contrast,
        energy,
        dissim,
        corr,
        tamura(img, max_k),
        asm,
        homog,
    ]
}

/// Mean binary cross-entropy on the ill-class probability, clamped to
/// `[1e-7, 1 - 1e-7]`.
pub fn bce(labels: &[u8], probs: &[f64]) -> f64 {
    let mut s = 0.0;
    for (&y, &p) in labels.iter().zip(probs) {
        let p = p.clamp(1e-7, 1.0 - 1e-7);
        s += if y == 1 { -p.ln() } else { -(1.0 - p).ln() };
    }
    s / labels.len() as f64
}

/// Fraction of (positive, negative) pairs ranked correctly, ties counting half.
pub fn pairwise_auc(labels: &[u8], scores: &[f64]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &yi) in labels.iter().enumerate() {
        for (j, &yj) in labels.iter().enumerate() {
            if yi == 1 && yj == 0 {
                pairs += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
    }
    wins / pairs
}

/// tp, tn, fp, fn by recount.
pub fn recount(labels: &[u8], preds: &[u8]) -> [usize; 4] {
    let c = |y: u8, p: u8| labels.iter().zip(preds).filter(|&(&a, &b)| a == y && b == p).count();
    [c(1, 1), c(0, 0), c(0, 1), c(1, 0)]
}

/// Dataset of `labels.len()` samples with 1x1 blank images and random features.
pub fn toy_dataset(labels: &[u8], seed: u64) -> Dataset {
    let mut r = rng(seed);
    let image = Arc::new(GrayImage::filled(1, 1, 0.0));
    let samples = labels
        .iter()
        .enumerate()
        .map(|(i, &label)| Sample {
            id: format!("s{i:05}"),
            image: image.clone(),
            features: FeatureVector::new(std::array::from_fn(|_| r.gen_range(-5.0..5.0))),
            label,
        })
        .collect();
    Dataset::new(samples).unwrap()
}

pub fn unique(ids: &[String]) -> HashSet<&str> {
    ids.iter().map(String::as_str).collect()
}

pub fn assert_close(actual: f64, expected: f64, tol: f64, what: &str) {
    assert!(
        (actual - expected).abs() <= tol,
        "{what}: got {actual}, expected {expected} (tolerance {tol})"
    );
}

/// Random inputs shaped for `spec`, labels alternating 0, 1, 0, ...
pub fn random_batch(spec: &tumornet::model::ModelSpec, n: usize, seed: u64) -> tumornet::model::Batch {
    use tumornet::nn::Tensor;
    let mut r = rng(seed);
    let (h, w, c) = spec.image_input_shape;
    let images = (0..n * c * h * w).map(|_| r.gen_range(0.0..1.0)).collect();
    let feats = (0..n * 13).map(|_| r.gen_range(-2.0..2.0)).collect();
    tumornet::model::Batch::new(
        Tensor::from_vec([n, c, h, w], images).unwrap(),
        Tensor::matrix(n, 13, feats).unwrap(),
        Some((0..n).map(|i| (i % 2) as u8).collect()),
    )
    .unwrap()
}
