#![allow(dead_code)]

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use semsplat::raster::Camera;
use semsplat::scene::{logit, GaussianSet};

/// Camera three units in front of the origin, looking at it.
pub fn front_camera(width: usize, height: usize) -> Camera {
    Camera::look_at(
        Vector3::new(0.3, -3.0, 0.4),
        Vector3::zeros(),
        Vector3::z(),
        45.0,
        width,
        height,
    )
    .unwrap()
}

/// Random Gaussians clustered around the origin, sized to cover a few
/// pixels to a sizeable fraction of a 64-pixel image.
pub fn random_scene(n: usize, feature_dim: usize, seed: u64) -> GaussianSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut u = |lo: f64, hi: f64| rng.random_range(lo..hi);
    let mut positions = Vec::new();
    let mut rotations = Vec::new();
    let mut log_scales = Vec::new();
    let mut opacity = Vec::new();
    let mut colors = Vec::new();
    let mut features = Vec::new();
    for _ in 0..n {
        positions.extend([u(-0.8, 0.8), u(-0.8, 0.8), u(-0.8, 0.8)]);
        rotations.extend([u(-1.0, 1.0), u(-1.0, 1.0), u(-1.0, 1.0), u(-1.0, 1.0)]);
        log_scales.extend([u(-3.5, -1.8), u(-3.5, -1.8), u(-3.5, -1.8)]);
        opacity.push(logit(u(0.05, 0.999)));
        colors.extend([u(-3.0, 3.0), u(-3.0, 3.0), u(-3.0, 3.0)]);
        for _ in 0..feature_dim {
            features.push(u(-1.0, 1.0));
        }
    }
    GaussianSet::from_parts(
        positions,
        rotations,
        log_scales,
        opacity,
        colors,
        features,
        feature_dim,
    )
    .unwrap()
}

/// Two same-colored Gaussians side by side, with ground-truth features that
/// switch from one unit vector to another halfway across the image. The
/// color target is the model's own render, so only the feature term has a
/// residual.
pub fn split_feature_scene() -> (
    GaussianSet,
    Camera,
    semsplat::raster::Image,
    semsplat::raster::Image,
) {
    use semsplat::raster::{render, Image, RenderOptions};
    let c = 4;
    let mut features = vec![0.0; 2 * c];
    features[0] = 0.6;
    features[1] = 0.4;
    features[c] = 0.3;
    features[c + 1] = 0.7;
    let g = GaussianSet::from_parts(
        vec![-0.25, 0.0, 0.0, 0.25, 0.0, 0.0],
        vec![1.0, 0.0, 0.0, 0.0, 0.9, 0.1, 0.2, 0.0],
        vec![-1.6, -1.8, -1.7, -1.7, -1.6, -1.8],
        vec![logit(0.8), logit(0.7)],
        vec![0.4, -0.2, 1.0, 0.4, -0.2, 1.0],
        features,
        c,
    )
    .unwrap();
    let cam = front_camera(32, 32);
    let color = render(&g, &cam, &RenderOptions::default()).color;
    let mut target = Image::zeros(32, 32, c);
    for y in 0..32 {
        for x in 0..32 {
            target.pixel_mut(x, y)[if x < 16 { 0 } else { 1 }] = 1.0;
        }
    }
    (g, cam, color, target)
}
