//! Texture features computed from grayscale scans.
//!
//! Five first-order statistics of the intensity histogram, seven statistics
//! of the gray-level co-occurrence matrix (averaged over four directions) and
//! Tamura coarseness, assembled into a [`FeatureVector`] in canonical order.

mod first_order;
mod glcm;
mod tamura;

pub use first_order::{first_order, FirstOrder};
pub use glcm::{compute_glcm, glcm_features, quantize, Glcm, GlcmFeatures, Offset, QuantizedImage, STANDARD_OFFSETS};
pub use tamura::tamura_coarseness;

use serde::{Deserialize, Serialize};

use crate::data::{Feature, FeatureVector};
use crate::error::{Error, Result};

/// Row-major grayscale intensity grid, values nominally in `[0, 255]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::shape("image pixels", width * height, pixels.len()));
        }
        Ok(GrayImage { width, height, pixels })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(y, x));
            }
        }
        GrayImage { width, height, pixels }
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        GrayImage {
            width,
            height,
            pixels: vec![value; width * height],
        }
    }

    /// ITU-R BT.601 luminance of an interleaved RGB buffer.
    pub fn from_rgb8(width: usize, height: usize, rgb: &[u8]) -> Result<Self> {
        if rgb.len() != width * height * 3 {
            return Err(Error::shape("rgb buffer", width * height * 3, rgb.len()));
        }
        let pixels = rgb
            .chunks_exact(3)
            .map(|p| {
                // The weights sum to one, so gray pixels keep their value exactly.
                if p[0] == p[1] && p[1] == p[2] {
                    f64::from(p[0])
                } else {
                    0.299 * f64::from(p[0]) + 0.587 * f64::from(p[1]) + 0.114 * f64::from(p[2])
                }
            })
            .collect();
        Ok(GrayImage { width, height, pixels })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    /// Gray levels used to quantize the image before building co-occurrence matrices.
    pub levels: usize,
    /// Pixel distance of the four co-occurrence offsets.
    pub distance: usize,
    /// Largest Tamura window exponent (windows up to `2^max_k` pixels).
    pub tamura_max_k: u32,
    /// Required `(height, width)` of input images, if any.
    pub image_size: Option<(usize, usize)>,
    /// Which entropy is reported. Only the co-occurrence entropy is
    /// implemented; the field is recorded in run metadata.
    pub entropy: String,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            levels: 32,
            distance: 1,
            tamura_max_k: 5,
            image_size: Some((240, 240)),
            entropy: "glcm".to_string(),
        }
    }
}

/// Computes all thirteen features of `image`.
pub fn extract_feature_vector(image: &GrayImage, cfg: &FeatureConfig) -> Result<FeatureVector> {
    if let Some((h, w)) = cfg.image_size {
        if image.height() != h {
            return Err(Error::shape("image height", h, image.height()));
        }
        if image.width() != w {
            return Err(Error::shape("image width", w, image.width()));
        }
    }
    if cfg.entropy != "glcm" {
        return Err(Error::Parameter(format!(
            "unsupported entropy kind `{}` (only `glcm`)",
            cfg.entropy
        )));
    }
    if cfg.distance == 0 {
        return Err(Error::Parameter("co-occurrence distance must be >= 1".into()));
    }

    let fo = first_order(image)?;
    let q = quantize(image, cfg.levels)?;
    let d = cfg.distance as isize;
    let mut avg = GlcmFeatures::default();
    for off in STANDARD_OFFSETS {
        let g = compute_glcm(&q, Offset::new(off.dy * d, off.dx * d))?;
        avg.accumulate(&glcm_features(&g)?);
    }
    avg.scale(1.0 / STANDARD_OFFSETS.len() as f64);
    let coarseness = tamura_coarseness(image, cfg.tamura_max_k)?;

    let mut v = FeatureVector::zeros();
    v[Feature::Mean] = fo.mean;
    v[Feature::Variance] = fo.variance;
    v[Feature::StandardDeviation] = fo.standard_deviation;
    v[Feature::Skewness] = fo.skewness;
    v[Feature::Kurtosis] = fo.kurtosis;
    v[Feature::Entropy] = avg.entropy;
    v[Feature::Contrast] = avg.contrast;
    v[Feature::Energy] = avg.energy;
    v[Feature::Dissimilarity] = avg.dissimilarity;
    v[Feature::Correlation] = avg.correlation;
    v[Feature::Coarseness] = coarseness;
    v[Feature::Asm] = avg.asm;
    v[Feature::Homogeneity] = avg.homogeneity;
    Ok(v)
}
