//! Image and point-set metrics used for evaluation.

use crate::error::{shape_err, Result};
use crate::raster::Image;

pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(shape_err(format!(
            "{}x{}x{} vs {}x{}x{}",
            a.width, a.height, a.channels, b.width, b.height, b.channels
        )));
    }
    let n = a.data.len().max(1) as f64;
    Ok(a.data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / n)
}

/// Peak signal-to-noise ratio in dB for images in `[0, 1]`; infinite for
/// identical images.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    let m = mse(a, b)?;
    Ok(if m == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * m.log10()
    })
}

/// For each query point, the label of the nearest reference point
/// (brute force; ties go to the lower index).
pub fn nearest_labels(queries: &[[f64; 3]], reference: &[[f64; 3]], labels: &[u8]) -> Vec<u8> {
    queries
        .iter()
        .map(|q| {
            let mut best = (f64::INFINITY, 0u8);
            for (p, l) in reference.iter().zip(labels) {
                let d = (0..3).map(|a| (p[a] - q[a]).powi(2)).sum::<f64>();
                if d < best.0 {
                    best = (d, *l);
                }
            }
            best.1
        })
        .collect()
}
