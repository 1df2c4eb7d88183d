//! Semantic selection over per-Gaussian features.
//!
//! Queries resolve to a set of Gaussian ids: by cosine similarity against a
//! query vector, by clicking a pixel (the dominant Gaussian's feature becomes
//! the query), or by collecting every Gaussian with a large contribution
//! weight over a pixel set. Selections are made on canonical Gaussians and
//! stay valid at every time; masks are rendered by deforming the subset.

use serde::{Deserialize, Serialize};

use crate::deformation::{apply_deformation, DeformationField};
use crate::error::{shape_err, Error, Result};
use crate::raster::{contribution_weights_many, render, Camera, RenderOptions};
use crate::scene::GaussianSet;

/// Default granularity threshold.
pub const DEFAULT_THETA: f64 = 0.7;
/// Default subset-alpha threshold for masks.
pub const DEFAULT_MASK_ALPHA: f64 = 0.5;
/// Features at or below this norm are never selected by similarity.
pub const MIN_FEATURE_NORM: f64 = 1e-12;

/// Binary `height × width` mask, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|b| **b).count()
    }

    fn check_shape(&self, other: &Mask) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(shape_err(format!(
                "mask {}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        Ok(())
    }

    /// Intersection over union; two empty masks score 1.
    pub fn iou(&self, other: &Mask) -> Result<f64> {
        self.check_shape(other)?;
        let (mut inter, mut union) = (0usize, 0usize);
        for (a, b) in self.data.iter().zip(&other.data) {
            inter += usize::from(*a && *b);
            union += usize::from(*a || *b);
        }
        Ok(if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        })
    }

    pub fn or(&self, other: &Mask) -> Result<Mask> {
        self.check_shape(other)?;
        Ok(Mask {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| *a || *b)
                .collect(),
        })
    }
}

/// How a selection is specified.
#[derive(Debug, Clone, PartialEq)]
pub enum QueryMode {
    Embedding(Vec<f64>),
    Click {
        camera: Camera,
        time: f64,
        pixel: (usize, usize),
    },
    PixelSet {
        camera: Camera,
        time: f64,
        pixels: Vec<(usize, usize)>,
        weight_threshold: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionQuery {
    pub mode: QueryMode,
    /// Cosine-similarity cutoff in `[-1, 1]`; unused for pixel sets.
    pub theta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    /// Sorted, unique.
    pub gaussian_ids: Vec<usize>,
    /// The query vector that was compared against each feature. For pixel
    /// sets this is the mean feature of the selection.
    pub query_feature: Vec<f64>,
    /// One score per id: cosine similarity, or the largest contribution
    /// weight for pixel sets.
    pub scores: Vec<f64>,
}

impl SelectionResult {
    pub fn len(&self) -> usize {
        self.gaussian_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussian_ids.is_empty()
    }
}

fn check_theta(theta: f64) -> Result<()> {
    if !(-1.0..=1.0).contains(&theta) {
        return Err(Error::InvalidArgument(format!(
            "theta {theta} outside [-1, 1]"
        )));
    }
    Ok(())
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Cosine similarity of every Gaussian's feature with `q`; `None` for
/// features too small to have a direction.
pub fn cosine_similarities(gaussians: &GaussianSet, q: &[f64]) -> Result<Vec<Option<f64>>> {
    if q.len() != gaussians.feature_dim() {
        return Err(Error::DimensionMismatch {
            expected: gaussians.feature_dim(),
            found: q.len(),
        });
    }
    let qn = norm(q);
    if qn <= MIN_FEATURE_NORM || !qn.is_finite() {
        return Err(Error::ZeroQuery);
    }
    Ok((0..gaussians.len())
        .map(|i| {
            let f = gaussians.feature(i);
            let fnorm = norm(f);
            (fnorm > MIN_FEATURE_NORM).then(|| {
                let dot: f64 = f.iter().zip(q).map(|(a, b)| a * b).sum();
                (dot / (fnorm * qn)).clamp(-1.0, 1.0)
            })
        })
        .collect())
}

/// Every Gaussian whose feature has cosine similarity `≥ theta` with `q`.
pub fn select_by_embedding(
    gaussians: &GaussianSet,
    q: &[f64],
    theta: f64,
) -> Result<SelectionResult> {
    check_theta(theta)?;
    let sims = cosine_similarities(gaussians, q)?;
    let mut out = SelectionResult {
        gaussian_ids: Vec::new(),
        query_feature: q.to_vec(),
        scores: Vec::new(),
    };
    for (i, s) in sims.into_iter().enumerate() {
        if let Some(s) = s.filter(|s| *s >= theta) {
            out.gaussian_ids.push(i);
            out.scores.push(s);
        }
    }
    Ok(out)
}

/// Resolves `pixel` at time `t` to the Gaussian with the largest
/// contribution weight and queries with its canonical feature.
pub fn select_by_click(
    gaussians: &GaussianSet,
    field: &DeformationField,
    camera: &Camera,
    t: f64,
    pixel: (usize, usize),
    theta: f64,
) -> Result<SelectionResult> {
    check_theta(theta)?;
    let deformed = apply_deformation(gaussians, field, t)?;
    let weights = contribution_weights_many(&deformed, camera, &[pixel])?.remove(0);
    let top = weights.first().ok_or(Error::EmptyPixel {
        x: pixel.0,
        y: pixel.1,
    })?;
    let q = gaussians.feature(top.gaussian_id).to_vec();
    let mut result = select_by_embedding(gaussians, &q, theta)?;
    // The clicked Gaussian always belongs to its own selection, even if
    // its similarity rounds just below θ = 1.
    if let Err(pos) = result.gaussian_ids.binary_search(&top.gaussian_id) {
        result.gaussian_ids.insert(pos, top.gaussian_id);
        result.scores.insert(pos, 1.0);
    }
    Ok(result)
}

/// Union over `pixels` of Gaussians contributing at least
/// `weight_threshold` under deformation at `t`.
pub fn select_by_pixels(
    gaussians: &GaussianSet,
    field: &DeformationField,
    camera: &Camera,
    t: f64,
    pixels: &[(usize, usize)],
    weight_threshold: f64,
) -> Result<SelectionResult> {
    if pixels.is_empty() {
        return Err(Error::InvalidArgument("pixel set is empty".into()));
    }
    let deformed = apply_deformation(gaussians, field, t)?;
    let lists = contribution_weights_many(&deformed, camera, pixels)?;
    let mut best = vec![f64::NEG_INFINITY; gaussians.len()];
    for c in lists.iter().flatten() {
        if c.weight >= weight_threshold {
            best[c.gaussian_id] = best[c.gaussian_id].max(c.weight);
        }
    }
    let c = gaussians.feature_dim();
    let mut out = SelectionResult {
        gaussian_ids: Vec::new(),
        query_feature: vec![0.0; c],
        scores: Vec::new(),
    };
    for (i, w) in best.into_iter().enumerate() {
        if w.is_finite() {
            out.gaussian_ids.push(i);
            out.scores.push(w);
            for (q, f) in out.query_feature.iter_mut().zip(gaussians.feature(i)) {
                *q += f;
            }
        }
    }
    if !out.is_empty() {
        let n = out.len() as f64;
        out.query_feature.iter_mut().for_each(|q| *q /= n);
    }
    Ok(out)
}

/// Dispatches on [`QueryMode`].
pub fn select(
    gaussians: &GaussianSet,
    field: &DeformationField,
    query: &SelectionQuery,
) -> Result<SelectionResult> {
    match &query.mode {
        QueryMode::Embedding(q) => select_by_embedding(gaussians, q, query.theta),
        QueryMode::Click {
            camera,
            time,
            pixel,
        } => select_by_click(gaussians, field, camera, *time, *pixel, query.theta),
        QueryMode::PixelSet {
            camera,
            time,
            pixels,
            weight_threshold,
        } => select_by_pixels(gaussians, field, camera, *time, pixels, *weight_threshold),
    }
}

/// Renders only the selected Gaussians, deformed to `t`, and thresholds
/// their accumulated alpha.
pub fn render_segmentation_mask(
    gaussians: &GaussianSet,
    field: &DeformationField,
    ids: &[usize],
    camera: &Camera,
    t: f64,
    alpha_threshold: f64,
) -> Result<Mask> {
    if let Some(&bad) = ids.iter().find(|&&i| i >= gaussians.len()) {
        return Err(Error::InvalidArgument(format!(
            "selection id {bad} out of range for {} Gaussians",
            gaussians.len()
        )));
    }
    if ids.is_empty() {
        return Ok(Mask::empty(camera.width, camera.height));
    }
    let subset = apply_deformation(&gaussians.subset(ids), field, t)?;
    let out = render(&subset, camera, &RenderOptions::default());
    Ok(Mask {
        width: camera.width,
        height: camera.height,
        data: out
            .alpha
            .data
            .iter()
            .map(|a| *a >= alpha_threshold)
            .collect(),
    })
}

/// Mean per-frame IoU.
pub fn miou(pred: &[Mask], gt: &[Mask]) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(shape_err(format!(
            "{} predicted masks vs {} ground truth",
            pred.len(),
            gt.len()
        )));
    }
    if pred.is_empty() {
        return Err(shape_err("no masks to compare"));
    }
    let mut sum = 0.0;
    for (p, g) in pred.iter().zip(gt) {
        sum += p.iou(g)?;
    }
    Ok(sum / pred.len() as f64)
}
