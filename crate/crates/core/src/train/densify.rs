use nalgebra::Vector3;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::raster::{Camera, RenderGradients};
use crate::scene::{logit, quat_to_rotation, GaussianSet};

/// Scale divisor applied to the two children of a split.
pub const SPLIT_SCALE_DIVISOR: f64 = 1.6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensifyConfig {
    pub interval: usize,
    /// Threshold on the mean screen-space position-gradient norm.
    pub grad_threshold: f64,
    /// Gaussians with activated opacity below this are removed.
    pub prune_opacity: f64,
    pub start_iteration: usize,
    /// Last iteration at which density control runs; `None` means half the
    /// total iteration count.
    pub stop_iteration: Option<usize>,
    /// Gaussians with largest scale above `percent_dense · extent` are
    /// split, smaller ones cloned.
    pub percent_dense: f64,
    /// No growth beyond this many Gaussians (pruning still applies).
    pub max_gaussians: usize,
    /// Every this many iterations inside the density-control window,
    /// opacities are clamped down to `reset_opacity`. `0` disables.
    #[serde(default)]
    pub opacity_reset_interval: usize,
    #[serde(default = "default_reset_opacity")]
    pub reset_opacity: f64,
}

fn default_reset_opacity() -> f64 {
    0.01
}

impl Default for DensifyConfig {
    fn default() -> Self {
        Self {
            interval: 100,
            grad_threshold: 2e-4,
            prune_opacity: 0.005,
            start_iteration: 500,
            stop_iteration: None,
            percent_dense: 0.01,
            max_gaussians: 1_000_000,
            opacity_reset_interval: 3_000,
            reset_opacity: default_reset_opacity(),
        }
    }
}

/// Clamps every activated opacity to at most `max_opacity`. Returns how
/// many Gaussians were lowered.
pub fn reset_opacity(gaussians: &mut GaussianSet, max_opacity: f64) -> usize {
    let cap = logit(max_opacity);
    let mut lowered = 0;
    for l in &mut gaussians.opacity_logits {
        if *l > cap {
            *l = cap;
            lowered += 1;
        }
    }
    lowered
}

/// Running sums of screen-space gradient norms since the last densify.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DensifyStats {
    pub grad_sum: Vec<f64>,
    pub count: Vec<u32>,
}

impl DensifyStats {
    pub fn new(n: usize) -> Self {
        Self {
            grad_sum: vec![0.0; n],
            count: vec![0; n],
        }
    }

    pub fn accumulate(&mut self, grads: &RenderGradients) {
        for (i, vis) in grads.visible.iter().enumerate() {
            if *vis {
                self.grad_sum[i] += grads.screen_grad_norm[i];
                self.count[i] += 1;
            }
        }
    }

    pub fn mean(&self, i: usize) -> f64 {
        if self.count[i] == 0 {
            0.0
        } else {
            self.grad_sum[i] / self.count[i] as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensifyOutcome {
    pub gaussians: GaussianSet,
    /// For each output Gaussian, the input Gaussian it continues (`None` for
    /// newly created children), used to carry optimizer state across.
    pub sources: Vec<Option<usize>>,
    pub cloned: usize,
    pub split: usize,
    pub pruned: usize,
}

/// Radius of the camera rig: 1.1 × the largest distance of a camera centre
/// from their mean (1.0 for a single camera).
pub fn scene_extent(cameras: &[Camera]) -> f64 {
    if cameras.len() < 2 {
        return 1.0;
    }
    let centres: Vec<Vector3<f64>> = cameras.iter().map(Camera::center).collect();
    let mean = centres.iter().sum::<Vector3<f64>>() / centres.len() as f64;
    let r = centres
        .iter()
        .map(|c| (c - mean).norm())
        .fold(0.0, f64::max);
    if r > 0.0 {
        1.1 * r
    } else {
        1.0
    }
}

/// A sample from the Gaussian's own distribution, `R·S·ε`, `ε ~ N(0, I)`.
fn sample_offset<R: Rng + ?Sized>(g: &GaussianSet, i: usize, rng: &mut R) -> Vector3<f64> {
    let eps = Vector3::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
    match quat_to_rotation(&g.rotation(i)) {
        Ok(r) => r * g.scale(i).component_mul(&eps),
        Err(_) => g.scale(i).component_mul(&eps),
    }
}

/// Adaptive density control. High-gradient Gaussians are cloned (small:
/// the copy is displaced by a sample from the original) or split (large:
/// replaced by two children sampled from the original, scales divided by
/// [`SPLIT_SCALE_DIVISOR`]); then every Gaussian with opacity below the
/// prune threshold is removed. Children inherit color and feature. The
/// statistics are reset to the new size.
pub fn densify_and_prune<R: Rng + ?Sized>(
    gaussians: &GaussianSet,
    stats: &mut DensifyStats,
    config: &DensifyConfig,
    extent: f64,
    rng: &mut R,
) -> DensifyOutcome {
    let n = gaussians.len();
    let size_limit = config.percent_dense * extent;
    let mut grown = GaussianSet::empty(gaussians.feature_dim());
    let mut sources = Vec::with_capacity(n);
    let (mut cloned, mut split) = (0, 0);
    let mut budget = config.max_gaussians.saturating_sub(n);
    let mut children = Vec::new();
    for i in 0..n {
        let hot =
            stats.count.get(i).is_some_and(|c| *c > 0) && stats.mean(i) >= config.grad_threshold;
        let large = gaussians.scale(i).max() > size_limit;
        if !hot || budget == 0 {
            grown.push_from(gaussians, i);
            sources.push(Some(i));
            continue;
        }
        budget -= 1;
        if large {
            // The original is replaced by two children.
            split += 1;
            for _ in 0..2 {
                let mut child = gaussians.subset(&[i]);
                let offset = sample_offset(gaussians, i, rng);
                for a in 0..3 {
                    child.positions[a] += offset[a];
                    child.log_scales[a] -= SPLIT_SCALE_DIVISOR.ln();
                }
                children.push(child);
            }
        } else {
            cloned += 1;
            grown.push_from(gaussians, i);
            sources.push(Some(i));
            let mut child = gaussians.subset(&[i]);
            let offset = sample_offset(gaussians, i, rng);
            for a in 0..3 {
                child.positions[a] += offset[a];
            }
            children.push(child);
        }
    }
    for child in &children {
        grown.push_from(child, 0);
        sources.push(None);
    }

    let keep: Vec<usize> = (0..grown.len())
        .filter(|&i| grown.opacity(i) >= config.prune_opacity)
        .collect();
    let pruned = grown.len() - keep.len();
    let gaussians = grown.subset(&keep);
    let sources = keep.iter().map(|&i| sources[i]).collect();
    *stats = DensifyStats::new(gaussians.len());
    DensifyOutcome {
        gaussians,
        sources,
        cloned,
        split,
        pruned,
    }
}
