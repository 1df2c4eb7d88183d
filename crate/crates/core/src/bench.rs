//! Render-throughput measurement.

use std::time::Instant;

use serde::Serialize;

use crate::deformation::{apply_deformation, DeformationField};
use crate::error::Result;
use crate::raster::{render, render_brute_force, Camera, Orbit, RenderOptions};
use crate::scene::GaussianSet;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub num_gaussians: usize,
    pub feature_dim: usize,
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    /// Parameter storage in MB at 4 bytes per value, field included.
    pub memory_mb: f64,
    /// Mean time per frame for deformation plus rendering.
    pub ms_per_frame: f64,
    pub fps: f64,
}

impl BenchReport {
    /// Markdown table with one row.
    pub fn to_table(&self) -> String {
        format!(
            "| Gaussians (K) | Resolution | Memory (MB) | Render (ms/frame) | FPS |\n\
             |---|---|---|---|---|\n\
             | {:.1} | {}x{} | {:.2} | {:.2} | {:.2} |\n",
            self.num_gaussians as f64 / 1000.0,
            self.width,
            self.height,
            self.memory_mb,
            self.ms_per_frame,
            self.fps
        )
    }
}

pub fn memory_mb(gaussians: &GaussianSet, field: &DeformationField) -> f64 {
    let values = gaussians.len() * (14 + gaussians.feature_dim()) + field.num_params();
    (values * 4) as f64 / (1024.0 * 1024.0)
}

/// Cameras orbiting `target` at `radius`, one per frame, with time running
/// from 0 to 1 over the sequence.
pub fn orbit_sequence(
    frames: usize,
    radius: f64,
    width: usize,
    height: usize,
) -> Result<Vec<(Camera, f64)>> {
    (0..frames)
        .map(|k| {
            let t = if frames > 1 {
                k as f64 / (frames - 1) as f64
            } else {
                0.0
            };
            let cam = Camera::orbit(
                &Orbit {
                    azimuth_deg: 360.0 * k as f64 / frames.max(1) as f64,
                    elevation_deg: 20.0,
                    radius,
                    target: [0.0; 3],
                    fov_y_deg: 45.0,
                },
                width,
                height,
            )?;
            Ok((cam, t))
        })
        .collect()
}

/// Deforms and renders every `(camera, t)` and reports the mean cost.
pub fn bench_render(
    gaussians: &GaussianSet,
    field: &DeformationField,
    views: &[(Camera, f64)],
    options: &RenderOptions,
) -> Result<BenchReport> {
    let start = Instant::now();
    for (cam, t) in views {
        let scene = apply_deformation(gaussians, field, *t)?;
        std::hint::black_box(render(&scene, cam, options));
    }
    let secs = start.elapsed().as_secs_f64();
    let frames = views.len().max(1);
    let ms = 1000.0 * secs / frames as f64;
    let (width, height) = views.first().map_or((0, 0), |(c, _)| (c.width, c.height));
    Ok(BenchReport {
        num_gaussians: gaussians.len(),
        feature_dim: gaussians.feature_dim(),
        width,
        height,
        frames: views.len(),
        memory_mb: memory_mb(gaussians, field),
        ms_per_frame: ms,
        fps: if ms > 0.0 { 1000.0 / ms } else { f64::INFINITY },
    })
}

/// Wall-clock seconds of one tiled and one brute-force render of the same
/// frame, in that order.
pub fn time_tiled_vs_brute(
    gaussians: &GaussianSet,
    camera: &Camera,
    options: &RenderOptions,
) -> (f64, f64) {
    let t0 = Instant::now();
    std::hint::black_box(render(gaussians, camera, options));
    let tiled = t0.elapsed().as_secs_f64();
    let t1 = Instant::now();
    std::hint::black_box(render_brute_force(gaussians, camera, options));
    (tiled, t1.elapsed().as_secs_f64())
}
