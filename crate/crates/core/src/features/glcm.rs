//! Gray-level co-occurrence matrices and the Haralick statistics drawn from them.

use crate::error::{Error, Result};

use super::GrayImage;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QuantizedImage {
    width: usize,
    height: usize,
    levels: usize,
    cells: Vec<u16>,
}

impl QuantizedImage {
    pub fn new(width: usize, height: usize, levels: usize, cells: Vec<u16>) -> Result<Self> {
        if cells.len() != width * height {
            return Err(Error::shape("quantized cells", width * height, cells.len()));
        }
        if levels < 2 || levels > usize::from(u16::MAX) {
            return Err(Error::Parameter(format!("levels must be in [2, 65535], got {levels}")));
        }
        if let Some(&c) = cells.iter().find(|&&c| usize::from(c) >= levels) {
            return Err(Error::Parameter(format!(
                "cell value {c} out of range for {levels} levels"
            )));
        }
        Ok(QuantizedImage {
            width,
            height,
            levels,
            cells,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn cells(&self) -> &[u16] {
        &self.cells
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> usize {
        usize::from(self.cells[y * self.width + x])
    }
}

/// Maps `[0, 255]` intensities onto `levels` bins: `floor(v * levels / 256)`,
/// clamped to `[0, levels - 1]`.
pub fn quantize(image: &GrayImage, levels: usize) -> Result<QuantizedImage> {
    if levels < 2 || levels > usize::from(u16::MAX) {
        return Err(Error::Parameter(format!("levels must be in [2, 65535], got {levels}")));
    }
    let top = (levels - 1) as f64;
    let cells = image
        .pixels()
        .iter()
        .map(|&v| (v * levels as f64 / 256.0).floor().clamp(0.0, top) as u16)
        .collect();
    Ok(QuantizedImage {
        width: image.width(),
        height: image.height(),
        levels,
        cells,
    })
}

/// Pixel displacement `(dy, dx)`; a pair is `(p, p + offset)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Offset {
    pub dy: isize,
    pub dx: isize,
}

impl Offset {
    pub const fn new(dy: isize, dx: isize) -> Self {
        Offset { dy, dx }
    }
}

/// 0°, 45°, 90° and 135° at distance one.
pub const STANDARD_OFFSETS: [Offset; 4] = [
    Offset::new(0, 1),
    Offset::new(-1, 1),
    Offset::new(-1, 0),
    Offset::new(-1, -1),
];

/// Normalized, symmetric co-occurrence matrix, stored row-major `levels x levels`.
#[derive(Clone, Debug, PartialEq)]
pub struct Glcm {
    levels: usize,
    offset: Offset,
    p: Vec<f64>,
}

impl Glcm {
    /// Wraps an arbitrary matrix. No invariants are checked here;
    /// [`glcm_features`] rejects matrices that are not normalized.
    pub fn from_raw(levels: usize, offset: Offset, p: Vec<f64>) -> Result<Self> {
        if p.len() != levels * levels {
            return Err(Error::shape("glcm entries", levels * levels, p.len()));
        }
        Ok(Glcm { levels, offset, p })
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn offset(&self) -> Offset {
        self.offset
    }

    pub fn entries(&self) -> &[f64] {
        &self.p
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.p[i * self.levels + j]
    }
}

pub fn compute_glcm(q: &QuantizedImage, offset: Offset) -> Result<Glcm> {
    if offset.dy == 0 && offset.dx == 0 {
        return Err(Error::Parameter("co-occurrence offset must be non-zero".into()));
    }
    let (h, w) = (q.height() as isize, q.width() as isize);
    if offset.dy.abs() >= h || offset.dx.abs() >= w {
        return Err(Error::Parameter(format!(
            "offset ({}, {}) does not fit in a {}x{} image",
            offset.dy, offset.dx, h, w
        )));
    }
    let l = q.levels();
    let mut counts = vec![0u64; l * l];
    let y0 = (-offset.dy).max(0);
    let y1 = h - offset.dy.max(0);
    let x0 = (-offset.dx).max(0);
    let x1 = w - offset.dx.max(0);
    for y in y0..y1 {
        for x in x0..x1 {
            let i = q.get(y as usize, x as usize);
            let j = q.get((y + offset.dy) as usize, (x + offset.dx) as usize);
            counts[i * l + j] += 1;
            counts[j * l + i] += 1;
        }
    }
    let total: u64 = counts.iter().sum();
    let p = counts.iter().map(|&c| c as f64 / total as f64).collect();
    Ok(Glcm { levels: l, offset, p })
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GlcmFeatures {
    pub entropy: f64,
    pub contrast: f64,
    pub energy: f64,
    pub dissimilarity: f64,
    pub correlation: f64,
    pub asm: f64,
    pub homogeneity: f64,
}

impl GlcmFeatures {
    pub(crate) fn accumulate(&mut self, o: &GlcmFeatures) {
        self.entropy += o.entropy;
        self.contrast += o.contrast;
        self.energy += o.energy;
        self.dissimilarity += o.dissimilarity;
        self.correlation += o.correlation;
        self.asm += o.asm;
        self.homogeneity += o.homogeneity;
    }

    pub(crate) fn scale(&mut self, s: f64) {
        self.entropy *= s;
        self.contrast *= s;
        self.energy *= s;
        self.dissimilarity *= s;
        self.correlation *= s;
        self.asm *= s;
        self.homogeneity *= s;
    }
}

/// Entropy uses the natural log with `0 ln 0 = 0`. Correlation is defined as
/// 1 when the marginal spread vanishes (`sigma_x * sigma_y < 1e-12`).
pub fn glcm_features(g: &Glcm) -> Result<GlcmFeatures> {
    let l = g.levels();
    let mut sum = 0.0;
    for &v in g.entries() {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(Error::Contract(format!("glcm entry {v} is not a probability")));
        }
        sum += v;
    }
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Contract(format!("glcm entries sum to {sum}, not 1")));
    }

    let mut f = GlcmFeatures::default();
    let (mut mu_x, mut mu_y) = (0.0, 0.0);
    for i in 0..l {
        for j in 0..l {
            let p = g.get(i, j);
            if p == 0.0 {
                continue;
            }
            let d = i as f64 - j as f64;
            f.contrast += d * d * p;
            f.dissimilarity += d.abs() * p;
            f.homogeneity += p / (1.0 + d * d);
            f.asm += p * p;
            f.entropy -= p * p.ln();
            mu_x += i as f64 * p;
            mu_y += j as f64 * p;
        }
    }
    let (mut var_x, mut var_y, mut cov) = (0.0, 0.0, 0.0);
    for i in 0..l {
        for j in 0..l {
            let p = g.get(i, j);
            if p == 0.0 {
                continue;
            }
            let (dx, dy) = (i as f64 - mu_x, j as f64 - mu_y);
            var_x += dx * dx * p;
            var_y += dy * dy * p;
            cov += dx * dy * p;
        }
    }
    let spread = var_x.sqrt() * var_y.sqrt();
    f.correlation = if spread < 1e-12 { 1.0 } else { cov / spread };
    f.energy = f.asm.sqrt();
    Ok(f)
}
