//! Differentiable splatting rasterizer.
//!
//! Splats are depth-sorted once per frame and composited front to back.
//! The tiled path bins splats into 16×16-pixel tiles; the brute-force path
//! evaluates every splat at every pixel and serves as the reference oracle.
//! Both apply the same alpha clamp, skip threshold and termination rule.

mod backward;
mod camera;
mod project;
mod render;

pub use backward::{render_backward, RenderGradients};
pub use camera::{Camera, Orbit, DEFAULT_NEAR};
pub use project::{
    project_backward, project_gaussian, GeometryGrad, Projection, Splat2D, SplatGrad, ALPHA_MAX,
    ALPHA_MIN, LOW_PASS, TRANSMITTANCE_MIN,
};
pub use render::{
    contribution_weights, contribution_weights_many, render, render_brute_force, Contribution,
    RenderOptions, RenderOutput,
};

use crate::error::{shape_err, Result};

/// Dense `height × width × channels` image, row-major, channel-last.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        }
    }

    pub fn from_data(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(shape_err(format!(
                "image data has {} values, expected {width}x{height}x{channels}",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [f64] {
        let i = (y * self.width + x) * self.channels;
        &mut self.data[i..i + self.channels]
    }

    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub fn max_abs_diff(&self, other: &Image) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}
