//! Turning rendered channels into displayable RGB images.

use std::str::FromStr;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::deformation::{apply_deformation, DeformationField};
use crate::error::{Error, Result};
use crate::raster::{render, Camera, Image, RenderOptions};
use crate::scene::GaussianSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Channels {
    Color,
    FeaturePca,
    Alpha,
}

impl FromStr for Channels {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "color" => Ok(Self::Color),
            "feature-pca" => Ok(Self::FeaturePca),
            "alpha" => Ok(Self::Alpha),
            other => Err(Error::InvalidArgument(format!(
                "unknown channels '{other}' (expected color, feature-pca or alpha)"
            ))),
        }
    }
}

/// Projects every pixel's feature onto the top three principal components
/// of this image's features and rescales each component to `[0, 1]` by its
/// range. Eigenvector signs are fixed so the largest-magnitude entry is
/// positive. Images with fewer than three channels leave the missing
/// components at zero.
pub fn feature_pca_rgb(features: &Image) -> Image {
    let (w, h, c) = (features.width, features.height, features.channels);
    let n = w * h;
    let mut out = Image::zeros(w, h, 3);
    if n == 0 || c == 0 {
        return out;
    }
    let mut mean = vec![0.0; c];
    for px in features.data.chunks_exact(c) {
        mean.iter_mut().zip(px).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut cov = DMatrix::<f64>::zeros(c, c);
    for px in features.data.chunks_exact(c) {
        for i in 0..c {
            let di = px[i] - mean[i];
            for j in i..c {
                cov[(i, j)] += di * (px[j] - mean[j]);
            }
        }
    }
    for i in 0..c {
        for j in 0..i {
            cov[(i, j)] = cov[(j, i)];
        }
    }
    let eig = SymmetricEigen::new(cov / n as f64);
    let mut order: Vec<usize> = (0..c).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .total_cmp(&eig.eigenvalues[a])
            .then(a.cmp(&b))
    });
    let k = c.min(3);
    let mut axes: Vec<Vec<f64>> = order[..k]
        .iter()
        .map(|&j| eig.eigenvectors.column(j).iter().copied().collect())
        .collect();
    for axis in &mut axes {
        let big = axis
            .iter()
            .copied()
            .fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
        if big < 0.0 {
            axis.iter_mut().for_each(|v| *v = -*v);
        }
    }
    let mut proj = vec![[0.0; 3]; n];
    for (p, px) in proj.iter_mut().zip(features.data.chunks_exact(c)) {
        for (a, axis) in axes.iter().enumerate() {
            p[a] = axis
                .iter()
                .zip(px)
                .zip(&mean)
                .map(|((e, v), m)| e * (v - m))
                .sum();
        }
    }
    for a in 0..k {
        let lo = proj.iter().map(|p| p[a]).fold(f64::INFINITY, f64::min);
        let hi = proj.iter().map(|p| p[a]).fold(f64::NEG_INFINITY, f64::max);
        let span = hi - lo;
        for (i, p) in proj.iter().enumerate() {
            out.data[3 * i + a] = if span > 1e-12 {
                (p[a] - lo) / span
            } else {
                0.5
            };
        }
    }
    out
}

/// Grey RGB image from a single-channel one.
pub fn gray_to_rgb(img: &Image) -> Image {
    let data = img.data.iter().flat_map(|v| [*v, *v, *v]).collect();
    Image::from_data(img.width, img.height, 3, data).expect("three channels per pixel")
}

/// Renders the scene deformed to `t` and returns the requested channels as
/// an RGB image. Shared by the command line and the service so both
/// produce identical bytes.
pub fn render_view(
    gaussians: &GaussianSet,
    field: &DeformationField,
    camera: &Camera,
    t: f64,
    channels: Channels,
    options: &RenderOptions,
) -> Result<Image> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::TimeOutOfRange(t));
    }
    let scene = apply_deformation(gaussians, field, t)?;
    let out = render(&scene, camera, options);
    Ok(match channels {
        Channels::Color => out.color,
        Channels::FeaturePca => feature_pca_rgb(&out.feature),
        Channels::Alpha => gray_to_rgb(&out.alpha),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pca_of_two_feature_values() {
        // Left half f = (1, 0, 0, 0), right half f = (0, 1, 0, 0): one
        // principal direction separates them.
        let mut img = Image::zeros(4, 2, 4);
        for y in 0..2 {
            for x in 0..4 {
                img.pixel_mut(x, y)[if x < 2 { 0 } else { 1 }] = 1.0;
            }
        }
        let rgb = feature_pca_rgb(&img);
        let left = rgb.pixel(0, 0)[0];
        let right = rgb.pixel(3, 1)[0];
        assert!((left - right).abs() == 1.0);
        assert_eq!(rgb.pixel(0, 0), rgb.pixel(1, 1));
        assert!(rgb.data.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn pca_is_deterministic_and_handles_constant() {
        let img = Image::from_data(3, 1, 2, vec![0.5, 0.5, 0.5, 0.5, 0.5, 0.5]).unwrap();
        let rgb = feature_pca_rgb(&img);
        assert!(rgb
            .data
            .chunks(3)
            .all(|p| p[0] == 0.5 && p[1] == 0.5 && p[2] == 0.0));
        let img = Image::from_data(3, 1, 2, vec![0.0, 1.0, 2.0, 0.5, -1.0, 0.3]).unwrap();
        assert_eq!(feature_pca_rgb(&img), feature_pca_rgb(&img));
    }

    #[test]
    fn channels_parse() {
        assert_eq!(
            "feature-pca".parse::<Channels>().unwrap(),
            Channels::FeaturePca
        );
        assert!("depth".parse::<Channels>().is_err());
    }
}
