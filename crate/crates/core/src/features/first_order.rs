use crate::error::{Error, Result};

use super::GrayImage;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FirstOrder {
    pub mean: f64,
    pub variance: f64,
    pub standard_deviation: f64,
    pub skewness: f64,
    /// Pearson (non-excess) kurtosis: a normal distribution scores 3.
    pub kurtosis: f64,
}

/// Intensity-histogram moments with the population (divide by N)
/// convention. A constant image has zero skewness and kurtosis.
pub fn first_order(image: &GrayImage) -> Result<FirstOrder> {
    let px = image.pixels();
    if px.is_empty() {
        return Err(Error::Parameter("first-order statistics of an empty image".into()));
    }
    let n = px.len() as f64;
    let mean = px.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &x in px {
        let d = x - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    let variance = m2 / n;
    let sd = variance.sqrt();
    let (skewness, kurtosis) = if sd == 0.0 {
        (0.0, 0.0)
    } else {
        (m3 / n / (variance * sd), m4 / n / (variance * variance))
    };
    Ok(FirstOrder {
        mean,
        variance,
        standard_deviation: sd,
        skewness,
        kurtosis,
    })
}
