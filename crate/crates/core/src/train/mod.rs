//! Joint optimization of Gaussians and the deformation field.
//!
//! The first `warmup_iterations` steps fit the canonical Gaussians with the
//! field frozen at the identity. Afterwards every step renders the scene
//! deformed to a jittered frame time and backpropagates through both the
//! rasterizer and the field.

mod densify;
mod gradcheck;
mod loss;

pub use densify::{
    densify_and_prune, reset_opacity, scene_extent, DensifyConfig, DensifyOutcome, DensifyStats,
    SPLIT_SCALE_DIVISOR,
};
pub use gradcheck::{gradcheck, gradcheck_with, GradcheckProblem, GradcheckReport, GroupError};
pub use loss::{reconstruction_loss, LossOutput};

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::deformation::{
    apply_deformation, ast_time, deformation_backward, AstConfig, DeformationField,
    FourierEncodingConfig,
};
use crate::error::{Error, Result};
use crate::io::{Checkpoint, Frame};
use crate::optimizer::{adam_step, exp_lr, AdamState, GaussianLr, GaussianOptimizer, LrSchedule};
use crate::raster::{render, render_backward, Camera, Image, RenderOptions};
use crate::scene::{GaussianGrads, GaussianSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F64,
    /// Parameters are rounded to `f32` after every step.
    F32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub total_iterations: usize,
    pub warmup_iterations: usize,
    pub feature_loss_weight: f64,
    pub deformation_lr: LrSchedule,
    pub gaussian_lr: GaussianLr,
    #[serde(skip)]
    pub ast: AstConfig,
    pub densify: DensifyConfig,
    pub seed: u64,
    pub snapshot_interval: Option<usize>,
    pub background: [f64; 3],
    /// For frames with an alpha channel, composite target and render over a
    /// fresh uniformly random background color every step.
    #[serde(default = "default_true")]
    pub random_background: bool,
    pub precision: Precision,
    pub mlp_depth: usize,
    pub mlp_width: usize,
    #[serde(skip)]
    pub encoding: FourierEncodingConfig,
}

fn default_true() -> bool {
    true
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::new(40_000, 3_000)
    }
}

impl TrainConfig {
    /// Defaults with both learning-rate schedules spanning `total` steps.
    pub fn new(total: usize, warmup: usize) -> Self {
        Self {
            total_iterations: total,
            warmup_iterations: warmup,
            feature_loss_weight: 1.0,
            deformation_lr: LrSchedule::deformation(total as u64),
            gaussian_lr: GaussianLr::with_total_steps(total as u64),
            ast: AstConfig::default(),
            densify: DensifyConfig {
                opacity_reset_interval: warmup,
                ..DensifyConfig::default()
            },
            seed: 0,
            snapshot_interval: None,
            background: [0.0; 3],
            random_background: true,
            precision: Precision::F64,
            mlp_depth: 8,
            mlp_width: 256,
            encoding: FourierEncodingConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.warmup_iterations >= self.total_iterations {
            return Err(Error::InvalidArgument(format!(
                "warmup ({}) must be below total iterations ({})",
                self.warmup_iterations, self.total_iterations
            )));
        }
        if !(self.feature_loss_weight >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "feature loss weight {} must be ≥ 0",
                self.feature_loss_weight
            )));
        }
        LrSchedule::new(
            self.deformation_lr.lr_start,
            self.deformation_lr.lr_end,
            self.deformation_lr.total_steps,
        )?;
        Ok(())
    }

    fn densify_stop(&self) -> usize {
        self.densify
            .stop_iteration
            .unwrap_or(self.total_iterations / 2)
    }

    pub fn render_options(&self) -> RenderOptions {
        RenderOptions {
            background: self.background,
            ..Default::default()
        }
    }
}

/// Loss and gradients of one frame with respect to the canonical Gaussians
/// and (when deforming) the field parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameGradients {
    pub loss: f64,
    pub color_loss: f64,
    pub feature_loss: f64,
    pub gaussians: GaussianGrads,
    pub field: Option<Vec<f64>>,
    pub screen_grad_norm: Vec<f64>,
    pub visible: Vec<bool>,
}

/// `color + (1 − alpha) · background` for color composited over black.
fn over_background(color: &Image, alpha: &Image, background: [f64; 3]) -> Image {
    let mut out = color.clone();
    for (px, a) in out.data.chunks_exact_mut(3).zip(&alpha.data) {
        for (v, b) in px.iter_mut().zip(background) {
            *v += (1.0 - a) * b;
        }
    }
    out
}

/// Scene at time `t`, or the canonical scene when `field` is `None`.
fn posed(gaussians: &GaussianSet, field: Option<&DeformationField>, t: f64) -> Result<GaussianSet> {
    match field {
        Some(f) => apply_deformation(gaussians, f, t),
        None => Ok(gaussians.clone()),
    }
}

/// Reconstruction loss of `gaussians` (deformed by `field` to `t`, if given)
/// against one frame.
pub fn frame_loss(
    gaussians: &GaussianSet,
    field: Option<&DeformationField>,
    camera: &Camera,
    t: f64,
    image: &Image,
    features: Option<&Image>,
    feature_weight: f64,
    options: &RenderOptions,
) -> Result<f64> {
    let scene = posed(gaussians, field, t)?;
    let out = render(&scene, camera, options);
    Ok(reconstruction_loss(&out, image, features, feature_weight)?.loss)
}

/// [`frame_loss`] together with its analytic gradients.
pub fn frame_gradients(
    gaussians: &GaussianSet,
    field: Option<&DeformationField>,
    camera: &Camera,
    t: f64,
    image: &Image,
    features: Option<&Image>,
    feature_weight: f64,
    options: &RenderOptions,
) -> Result<FrameGradients> {
    let scene = posed(gaussians, field, t)?;
    let out = render(&scene, camera, options);
    let loss = reconstruction_loss(&out, image, features, feature_weight)?;
    let grad_alpha = Image::zeros(camera.width, camera.height, 1);
    let rg = render_backward(
        &scene,
        camera,
        options,
        &loss.grad_color,
        &loss.grad_feature,
        &grad_alpha,
    )?;
    let mut grads = rg.gaussians;
    let field_grads = match field {
        None => None,
        Some(f) => {
            let back = deformation_backward(
                gaussians,
                f,
                t,
                &grads.positions,
                &grads.rotations,
                &grads.log_scales,
            );
            for (g, extra) in grads.positions.iter_mut().zip(&back.position_grads) {
                *g += extra;
            }
            Some(back.param_grads)
        }
    };
    Ok(FrameGradients {
        loss: loss.loss,
        color_loss: loss.color_loss,
        feature_loss: loss.feature_loss,
        gaussians: grads,
        field: field_grads,
        screen_grad_norm: rg.screen_grad_norm,
        visible: rg.visible,
    })
}

/// Outcome of one training step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub iteration: usize,
    pub frame: usize,
    /// Frame time after jitter.
    pub time: f64,
    pub loss: f64,
    pub color_loss: f64,
    pub feature_loss: f64,
    pub num_gaussians: usize,
    pub lr_position: f64,
    pub lr_deformation: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensifyEvent {
    pub iteration: usize,
    pub cloned: usize,
    pub split: usize,
    pub pruned: usize,
    pub num_gaussians: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainReport {
    pub steps: Vec<StepRecord>,
    pub densify: Vec<DensifyEvent>,
    /// `(iteration, Gaussians lowered)` for each opacity reset.
    #[serde(default)]
    pub opacity_resets: Vec<(usize, usize)>,
    pub warmup_seconds: f64,
    pub joint_seconds: f64,
}

impl TrainReport {
    pub fn losses(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.loss).collect()
    }

    /// Mean loss over the records with `lo ≤ iteration < hi`.
    pub fn mean_loss(&self, lo: usize, hi: usize) -> f64 {
        let sel: Vec<f64> = self
            .steps
            .iter()
            .filter(|s| (lo..hi).contains(&s.iteration))
            .map(|s| s.loss)
            .collect();
        sel.iter().sum::<f64>() / sel.len().max(1) as f64
    }
}

/// Training state: parameters, optimizer moments, RNG and statistics.
pub struct Trainer {
    pub gaussians: GaussianSet,
    pub field: DeformationField,
    pub config: TrainConfig,
    pub iteration: usize,
    pub report: TrainReport,
    gaussian_opt: GaussianOptimizer,
    field_opt: AdamState,
    stats: DensifyStats,
    extent: f64,
    rng: ChaCha8Rng,
}

impl Trainer {
    /// Starts from `gaussians` with a freshly initialized field of the
    /// configured architecture.
    pub fn new(gaussians: GaussianSet, config: TrainConfig, extent: f64) -> Result<Self> {
        let field = DeformationField::new(
            config.encoding,
            config.mlp_depth,
            config.mlp_width,
            config.seed ^ 0x5eed,
        )?;
        Self::with_field(gaussians, field, config, extent)
    }

    pub fn with_field(
        gaussians: GaussianSet,
        field: DeformationField,
        config: TrainConfig,
        extent: f64,
    ) -> Result<Self> {
        config.validate()?;
        let mut t = Self {
            gaussian_opt: GaussianOptimizer::new(&gaussians, config.gaussian_lr),
            field_opt: AdamState::new(field.num_params()),
            stats: DensifyStats::new(gaussians.len()),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            extent,
            iteration: 0,
            report: TrainReport::default(),
            gaussians,
            field,
            config,
        };
        if t.config.precision == Precision::F32 {
            t.round_params();
        }
        Ok(t)
    }

    pub fn in_warmup(&self) -> bool {
        self.iteration < self.config.warmup_iterations
    }

    fn round_params(&mut self) {
        self.gaussians.round_to_f32();
        self.field
            .params_mut()
            .iter_mut()
            .for_each(|p| *p = *p as f32 as f64);
    }

    /// One optimization step on a uniformly sampled frame.
    pub fn train_step(&mut self, frames: &[Frame]) -> Result<StepRecord> {
        if frames.is_empty() {
            return Err(Error::InvalidArgument("no training frames".into()));
        }
        let it = self.iteration;
        let warm = self.in_warmup();
        let k = self.rng.random_range(0..frames.len());
        let frame = &frames[k];
        let (t, field) = if warm {
            (frame.time, None)
        } else {
            (
                ast_time(frame.time, it, &self.config.ast, &mut self.rng),
                Some(&self.field),
            )
        };
        let mut options = self.config.render_options();
        let composited;
        let target = match &frame.alpha {
            None => &frame.image,
            Some(alpha) => {
                if self.config.random_background {
                    options.background = std::array::from_fn(|_| self.rng.random::<f64>());
                }
                composited = over_background(&frame.image, alpha, options.background);
                &composited
            }
        };
        let fg = frame_gradients(
            &self.gaussians,
            field,
            &frame.camera,
            t,
            target,
            frame.features.as_ref(),
            self.config.feature_loss_weight,
            &options,
        )?;
        if !fg.loss.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "non-finite loss at iteration {it}"
            )));
        }

        self.gaussian_opt
            .step(&mut self.gaussians, &fg.gaussians, it as u64)?;
        let lr_deformation = exp_lr(&self.config.deformation_lr, it as u64);
        if let Some(g) = &fg.field {
            adam_step(
                &mut self.field_opt,
                self.field.params_mut(),
                g,
                lr_deformation,
            )?;
        }
        if self.config.precision == Precision::F32 {
            self.round_params();
        }

        for (i, vis) in fg.visible.iter().enumerate() {
            if *vis {
                self.stats.grad_sum[i] += fg.screen_grad_norm[i];
                self.stats.count[i] += 1;
            }
        }
        let record = StepRecord {
            iteration: it,
            frame: k,
            time: t,
            loss: fg.loss,
            color_loss: fg.color_loss,
            feature_loss: fg.feature_loss,
            num_gaussians: self.gaussians.len(),
            lr_position: exp_lr(&self.config.gaussian_lr.positions, it as u64),
            lr_deformation: if warm { 0.0 } else { lr_deformation },
        };
        self.report.steps.push(record);
        self.iteration += 1;

        let d = self.config.densify;
        if d.interval > 0
            && self.iteration >= d.start_iteration
            && self.iteration <= self.config.densify_stop()
            && self.iteration % d.interval == 0
        {
            self.densify();
        }
        if d.opacity_reset_interval > 0
            && self.iteration < self.config.densify_stop()
            && self.iteration % d.opacity_reset_interval == 0
        {
            let lowered = reset_opacity(&mut self.gaussians, d.reset_opacity);
            let state = &mut self.gaussian_opt.states[3];
            state.m.fill(0.0);
            state.v.fill(0.0);
            self.report.opacity_resets.push((self.iteration, lowered));
        }
        Ok(record)
    }

    fn densify(&mut self) {
        let out = densify_and_prune(
            &self.gaussians,
            &mut self.stats,
            &self.config.densify,
            self.extent,
            &mut self.rng,
        );
        self.gaussian_opt
            .remap(&out.sources, self.gaussians.feature_dim());
        self.gaussians = out.gaussians;
        self.report.densify.push(DensifyEvent {
            iteration: self.iteration,
            cloned: out.cloned,
            split: out.split,
            pruned: out.pruned,
            num_gaussians: self.gaussians.len(),
        });
    }

    /// Runs to `total_iterations`, calling `on_step` after every step.
    pub fn run<F>(&mut self, frames: &[Frame], mut on_step: F) -> Result<()>
    where
        F: FnMut(&Trainer, &StepRecord) -> Result<()>,
    {
        while self.iteration < self.config.total_iterations {
            let start = Instant::now();
            let warm = self.in_warmup();
            let rec = self.train_step(frames)?;
            let dt = start.elapsed().as_secs_f64();
            if warm {
                self.report.warmup_seconds += dt;
            } else {
                self.report.joint_seconds += dt;
            }
            on_step(self, &rec)?;
        }
        Ok(())
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            gaussians: self.gaussians.clone(),
            field: self.field.clone(),
            iteration: self.iteration as u64,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::Camera;
    use crate::scene::{init_random, Aabb};
    use nalgebra::Vector3;

    fn small_config(total: usize, warmup: usize) -> TrainConfig {
        TrainConfig {
            mlp_depth: 2,
            mlp_width: 8,
            encoding: FourierEncodingConfig {
                bands_position: 3,
                bands_time: 2,
                include_input: true,
            },
            densify: DensifyConfig {
                start_iteration: 4,
                interval: 4,
                ..Default::default()
            },
            ..TrainConfig::new(total, warmup)
        }
    }

    fn frames_from(g: &GaussianSet, field: &DeformationField, n: usize) -> Vec<Frame> {
        (0..n)
            .map(|k| {
                let t = k as f64 / (n.max(2) - 1) as f64;
                let az = 30.0 * k as f64;
                let cam = Camera::look_at(
                    Vector3::new(
                        3.0 * az.to_radians().sin(),
                        -3.0 * az.to_radians().cos(),
                        0.5,
                    ),
                    Vector3::zeros(),
                    Vector3::z(),
                    45.0,
                    16,
                    16,
                )
                .unwrap();
                let scene = apply_deformation(g, field, t).unwrap();
                let out = render(&scene, &cam, &RenderOptions::default());
                Frame {
                    image: out.color,
                    alpha: None,
                    features: Some(out.feature),
                    camera: cam,
                    time: t,
                }
            })
            .collect()
    }

    fn target_scene() -> (GaussianSet, DeformationField, Vec<Frame>) {
        let g = init_random(20, Aabb::new([-0.5; 3], [0.5; 3]), 3, 11).unwrap();
        let cfg = small_config(10, 2);
        let mut f = DeformationField::new(cfg.encoding, 2, 8, 1).unwrap();
        f.set_constant_translation([0.1, 0.0, 0.0]);
        let frames = frames_from(&g, &f, 4);
        (g, f, frames)
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::new(100, 100).validate().is_err());
        let mut c = TrainConfig::new(100, 10);
        c.feature_loss_weight = -1.0;
        assert!(c.validate().is_err());
        assert!(TrainConfig::default().validate().is_ok());
    }

    #[test]
    fn warmup_freezes_field() {
        let (g, _, frames) = target_scene();
        let start = init_random(20, Aabb::new([-0.5; 3], [0.5; 3]), 3, 12).unwrap();
        let _ = g;
        let mut tr = Trainer::new(start, small_config(12, 6), 1.0).unwrap();
        tr.field.randomize_heads(0.01, 4);
        let before: Vec<u64> = tr.field.params().iter().map(|p| p.to_bits()).collect();
        let gaussians_before = tr.gaussians.clone();
        for _ in 0..6 {
            tr.train_step(&frames).unwrap();
            let now: Vec<u64> = tr.field.params().iter().map(|p| p.to_bits()).collect();
            assert_eq!(now, before);
        }
        assert_ne!(tr.gaussians.positions, gaussians_before.positions);
        tr.train_step(&frames).unwrap();
        let now: Vec<u64> = tr.field.params().iter().map(|p| p.to_bits()).collect();
        assert_ne!(now, before);
    }

    #[test]
    fn zero_residual_means_no_update() {
        let (g, _, _) = target_scene();
        let cfg = TrainConfig {
            feature_loss_weight: 0.0,
            densify: DensifyConfig {
                interval: 0,
                ..Default::default()
            },
            ..small_config(10, 0)
        };
        let identity = DeformationField::new(cfg.encoding, 2, 8, 9).unwrap();
        let frames = frames_from(&g, &identity, 3);
        let mut tr = Trainer::with_field(g.clone(), identity.clone(), cfg, 1.0).unwrap();
        for _ in 0..3 {
            let rec = tr.train_step(&frames).unwrap();
            assert_eq!(rec.color_loss, 0.0);
        }
        assert_eq!(tr.gaussians, g);
        assert_eq!(tr.field, identity);
    }

    #[test]
    fn alpha_frames_fit_under_random_backgrounds() {
        let (g, _, _) = target_scene();
        let cfg = small_config(10, 0);
        let identity = DeformationField::new(cfg.encoding, 2, 8, 9).unwrap();
        let mut frames = frames_from(&g, &identity, 3);
        for f in &mut frames {
            let scene = apply_deformation(&g, &identity, f.time).unwrap();
            f.alpha = Some(render(&scene, &f.camera, &RenderOptions::default()).alpha);
        }
        // Same color over black, but half the coverage: only a background
        // that varies can tell the two apart.
        let mut faded = frames.clone();
        for f in &mut faded {
            f.alpha
                .as_mut()
                .unwrap()
                .data
                .iter_mut()
                .for_each(|a| *a *= 0.5);
        }
        for seed in 0..4 {
            let cfg = TrainConfig {
                seed,
                ..cfg.clone()
            };
            let mut exact =
                Trainer::with_field(g.clone(), identity.clone(), cfg.clone(), 1.0).unwrap();
            let mut wrong = Trainer::with_field(g.clone(), identity.clone(), cfg, 1.0).unwrap();
            assert!(exact.train_step(&frames).unwrap().color_loss < 1e-12);
            assert!(wrong.train_step(&faded).unwrap().color_loss > 1e-4);
        }
    }

    #[test]
    fn deterministic_losses() {
        let (_, _, frames) = target_scene();
        let run = || {
            let start = init_random(20, Aabb::new([-0.5; 3], [0.5; 3]), 3, 12).unwrap();
            let mut tr = Trainer::new(start, small_config(12, 3), 1.0).unwrap();
            tr.run(&frames, |_, _| Ok(())).unwrap();
            (tr.report.losses(), tr.gaussians)
        };
        let (a, ga) = run();
        let (b, gb) = run();
        assert_eq!(a.len(), 12);
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_eq!(ga, gb);
    }

    #[test]
    fn f32_precision_rounds() {
        let (_, _, frames) = target_scene();
        let start = init_random(20, Aabb::new([-0.5; 3], [0.5; 3]), 3, 12).unwrap();
        let cfg = TrainConfig {
            precision: Precision::F32,
            ..small_config(6, 2)
        };
        let mut tr = Trainer::new(start, cfg, 1.0).unwrap();
        tr.run(&frames, |_, _| Ok(())).unwrap();
        assert!(tr
            .gaussians
            .positions
            .iter()
            .all(|p| *p as f32 as f64 == *p));
        assert!(tr.field.params().iter().all(|p| *p as f32 as f64 == *p));
    }

    #[test]
    fn densify_keeps_invariants() {
        let (_, _, frames) = target_scene();
        let start = init_random(20, Aabb::new([-0.5; 3], [0.5; 3]), 3, 12).unwrap();
        let cfg = TrainConfig {
            densify: DensifyConfig {
                start_iteration: 2,
                interval: 2,
                grad_threshold: 0.0,
                stop_iteration: Some(6),
                ..Default::default()
            },
            ..small_config(8, 2)
        };
        let mut tr = Trainer::new(start, cfg, 1.0).unwrap();
        tr.run(&frames, |_, _| Ok(())).unwrap();
        assert!(!tr.report.densify.is_empty());
        assert!(tr.gaussians.len() > 20);
        assert_eq!(tr.gaussians.feature_dim(), 3);
        assert!(tr.gaussians.is_finite());
        let g = &tr.gaussians;
        assert_eq!(g.positions.len(), 3 * g.len());
        assert_eq!(g.rotations.len(), 4 * g.len());
        assert_eq!(g.features.len(), 3 * g.len());
    }
}
