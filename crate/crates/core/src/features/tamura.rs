//! Tamura coarseness.

use crate::error::{Error, Result};

use super::GrayImage;

/// Two window-difference responses closer than this (in intensity units)
/// count as a tie. Summed-area tables reorder the additions of a direct
/// window mean, so bit-exact ties cannot be relied on.
pub(crate) const TIE_TOLERANCE: f64 = 1e-9;

struct SummedArea {
    stride: usize,
    s: Vec<f64>,
}

impl SummedArea {
    fn new(img: &GrayImage) -> Self {
        let (h, w) = (img.height(), img.width());
        let stride = w + 1;
        let mut s = vec![0.0; (h + 1) * stride];
        for y in 0..h {
            let mut row = 0.0;
            for x in 0..w {
                row += img.get(y, x);
                s[(y + 1) * stride + x + 1] = s[y * stride + x + 1] + row;
            }
        }
        SummedArea { stride, s }
    }

    /// Mean over rows `[y0, y1)` and columns `[x0, x1)`.
    #[inline]
    fn mean(&self, y0: usize, x0: usize, y1: usize, x1: usize) -> f64 {
        let st = self.stride;
        let sum = self.s[y1 * st + x1] - self.s[y0 * st + x1] - self.s[y1 * st + x0] + self.s[y0 * st + x0];
        sum / ((y1 - y0) * (x1 - x0)) as f64
    }
}

/// Mean over valid pixels of `2^k*`, where `k*` maximizes the larger of the
/// horizontal and vertical differences between the two `2^k x 2^k` window
/// means on either side of the pixel. Ties go to the smallest `k`.
///
/// Pixels whose windows would leave the image for any `k <= max_k` are
/// excluded, which requires both dimensions to be at least `2^(max_k + 1)`.
pub fn tamura_coarseness(image: &GrayImage, max_k: u32) -> Result<f64> {
    if max_k == 0 || max_k > 16 {
        return Err(Error::Parameter(format!(
            "tamura max_k must be in [1, 16], got {max_k}"
        )));
    }
    let reach = 1usize << max_k;
    let (h, w) = (image.height(), image.width());
    if h < 2 * reach || w < 2 * reach {
        return Err(Error::Parameter(format!(
            "a {h}x{w} image is too small for tamura max_k = {max_k} (needs {0}x{0})",
            2 * reach
        )));
    }
    let sat = SummedArea::new(image);
    let mut total = 0.0;
    let mut count = 0usize;
    for y in reach..=h - reach {
        for x in reach..=w - reach {
            let mut best_e = f64::NEG_INFINITY;
            let mut best_k = 1;
            for k in 1..=max_k {
                let half = 1usize << (k - 1);
                let size = 2 * half;
                // Windows just right/left of x, and just below/above y.
                let right = sat.mean(y - half, x, y + half, x + size);
                let left = sat.mean(y - half, x - size, y + half, x);
                let below = sat.mean(y, x - half, y + size, x + half);
                let above = sat.mean(y - size, x - half, y, x + half);
                let e = (right - left).abs().max((below - above).abs());
                if e > best_e + TIE_TOLERANCE {
                    best_e = e;
                    best_k = k;
                }
            }
            total += (1u64 << best_k) as f64;
            count += 1;
        }
    }
    Ok(total / count as f64)
}
