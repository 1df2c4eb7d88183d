use nalgebra::{Matrix2, Vector2};
use rayon::prelude::*;

use super::camera::Camera;
use super::project::{
    project_backward, project_set, SplatGrad, ALPHA_MAX, ALPHA_MIN, TRANSMITTANCE_MIN,
};
use super::render::{activated_colors, bin_splats, tile_pixels, RenderOptions};
use super::Image;
use crate::error::{shape_err, Result};
use crate::scene::{GaussianGrads, GaussianSet};

#[derive(Debug, Clone, PartialEq)]
pub struct RenderGradients {
    pub gaussians: GaussianGrads,
    /// Norm of `∂L/∂μ` in normalized device units (pixel gradient scaled by
    /// half the image size), zero for Gaussians that were not visible.
    pub screen_grad_norm: Vec<f64>,
    pub visible: Vec<bool>,
}

/// Per-splat accumulator layout: mean (2), conic a/b/c (3), opacity (1),
/// color (3), feature (C).
const HEAD: usize = 9;

struct Hit {
    slot: usize,
    alpha: f64,
    falloff: f64,
    dx: f64,
    dy: f64,
    t_before: f64,
    clamped: bool,
}

/// Gradients of a scalar loss with respect to every Gaussian parameter,
/// given the loss gradients on the rendered color, feature and alpha images.
/// The forward pass is recomputed. Per-tile partial sums are reduced in
/// tile order, so the result is identical with and without `parallel`.
pub fn render_backward(
    gaussians: &GaussianSet,
    camera: &Camera,
    options: &RenderOptions,
    grad_color: &Image,
    grad_feature: &Image,
    grad_alpha: &Image,
) -> Result<RenderGradients> {
    let fdim = gaussians.feature_dim();
    let (w, h) = (camera.width, camera.height);
    for (name, img, ch) in [
        ("color", grad_color, 3),
        ("feature", grad_feature, fdim),
        ("alpha", grad_alpha, 1),
    ] {
        if img.width != w || img.height != h || img.channels != ch {
            return Err(shape_err(format!(
                "{name} gradient is {}x{}x{}, expected {w}x{h}x{ch}",
                img.width, img.height, img.channels
            )));
        }
    }
    let n = gaussians.len();
    let mut out = RenderGradients {
        gaussians: GaussianGrads::zeros_like(gaussians),
        screen_grad_norm: vec![0.0; n],
        visible: vec![false; n],
    };
    let splats = project_set(gaussians, camera, true);
    if splats.is_empty() {
        return Ok(out);
    }
    let colors = activated_colors(gaussians);
    let bins = bin_splats(&splats, camera);
    let stride = HEAD + fdim;
    let bg = options.background;

    let tile_grads = |tile: usize| -> Vec<f64> {
        let list = &bins.lists[tile];
        let mut acc = vec![0.0; stride * list.len()];
        if list.is_empty() {
            return acc;
        }
        let (xs, ys) = tile_pixels(camera, tile, bins.tiles_x);
        let mut hits: Vec<Hit> = Vec::new();
        let mut suffix_f = vec![0.0; fdim];
        for y in ys {
            for x in xs.clone() {
                let (px, py) = (x as f64, y as f64);
                hits.clear();
                let mut t = 1.0;
                for (slot, &k) in list.iter().enumerate() {
                    let s = &splats[k as usize];
                    let (raw, falloff, dx, dy) = s.eval(px, py);
                    if raw < ALPHA_MIN {
                        continue;
                    }
                    let alpha = raw.min(ALPHA_MAX);
                    hits.push(Hit {
                        slot,
                        alpha,
                        falloff,
                        dx,
                        dy,
                        t_before: t,
                        clamped: raw > ALPHA_MAX,
                    });
                    t *= 1.0 - alpha;
                    if t < TRANSMITTANCE_MIN {
                        break;
                    }
                }
                if hits.is_empty() {
                    continue;
                }
                let gc = grad_color.pixel(x, y);
                let gf = grad_feature.pixel(x, y);
                let ga = grad_alpha.data[y * w + x];

                // Contribution of everything behind splat i (incl. background).
                let mut suffix_c = [t * bg[0], t * bg[1], t * bg[2]];
                suffix_f.iter_mut().for_each(|v| *v = 0.0);
                let mut suffix_a = 0.0;
                for hit in hits.iter().rev() {
                    let s = &splats[list[hit.slot] as usize];
                    let id = s.gaussian_id;
                    let weight = hit.t_before * hit.alpha;
                    let a = &mut acc[stride * hit.slot..stride * (hit.slot + 1)];
                    let c = &colors[id];
                    let f = gaussians.feature(id);
                    let inv = 1.0 / (1.0 - hit.alpha);

                    let mut g_alpha = ga * (hit.t_before - suffix_a * inv);
                    for k in 0..3 {
                        a[6 + k] += weight * gc[k];
                        g_alpha += gc[k] * (hit.t_before * c[k] - suffix_c[k] * inv);
                        suffix_c[k] += weight * c[k];
                    }
                    for k in 0..fdim {
                        a[HEAD + k] += weight * gf[k];
                        g_alpha += gf[k] * (hit.t_before * f[k] - suffix_f[k] * inv);
                        suffix_f[k] += weight * f[k];
                    }
                    suffix_a += weight;

                    if hit.clamped || g_alpha == 0.0 {
                        continue;
                    }
                    // α = σ · exp(−q/2), q = dᵀ M d, d = p − μ.
                    a[5] += g_alpha * hit.falloff;
                    let g_q = -0.5 * g_alpha * hit.alpha;
                    let (dx, dy) = (hit.dx, hit.dy);
                    let m = &s.conic;
                    a[0] -= g_q * 2.0 * (m[(0, 0)] * dx + m[(0, 1)] * dy);
                    a[1] -= g_q * 2.0 * (m[(0, 1)] * dx + m[(1, 1)] * dy);
                    a[2] += g_q * dx * dx;
                    a[3] += g_q * 2.0 * dx * dy;
                    a[4] += g_q * dy * dy;
                }
            }
        }
        acc
    };

    let ntiles = bins.lists.len();
    let partials: Vec<Vec<f64>> = if options.parallel {
        (0..ntiles).into_par_iter().map(tile_grads).collect()
    } else {
        (0..ntiles).map(tile_grads).collect()
    };

    let mut per_splat = vec![0.0; stride * splats.len()];
    for (tile, part) in partials.iter().enumerate() {
        for (slot, &k) in bins.lists[tile].iter().enumerate() {
            let dst = &mut per_splat[stride * k as usize..stride * (k as usize + 1)];
            for (d, s) in dst
                .iter_mut()
                .zip(&part[stride * slot..stride * (slot + 1)])
            {
                *d += s;
            }
        }
    }

    let half = Vector2::new(0.5 * w as f64, 0.5 * h as f64);
    let geometry: Vec<_> = {
        let one = |k: usize| {
            let s = &splats[k];
            let a = &per_splat[stride * k..stride * (k + 1)];
            let grad = SplatGrad {
                mean: Vector2::new(a[0], a[1]),
                conic: Matrix2::new(a[2], 0.5 * a[3], 0.5 * a[3], a[4]),
                opacity: a[5],
            };
            let id = s.gaussian_id;
            project_backward(
                &gaussians.position(id),
                &gaussians.rotation(id),
                &gaussians.log_scale(id),
                s.opacity,
                camera,
                &grad,
            )
        };
        if options.parallel {
            (0..splats.len()).into_par_iter().map(one).collect()
        } else {
            (0..splats.len()).map(one).collect()
        }
    };

    let g = &mut out.gaussians;
    for (k, (s, geo)) in splats.iter().zip(&geometry).enumerate() {
        let id = s.gaussian_id;
        let a = &per_splat[stride * k..stride * (k + 1)];
        g.positions[3 * id..3 * id + 3].copy_from_slice(geo.position.as_slice());
        g.rotations[4 * id..4 * id + 4].copy_from_slice(geo.rotation.as_slice());
        g.log_scales[3 * id..3 * id + 3].copy_from_slice(geo.log_scale.as_slice());
        g.opacity_logits[id] = geo.opacity_logit;
        let c = &colors[id];
        for ch in 0..3 {
            g.color_logits[3 * id + ch] = a[6 + ch] * c[ch] * (1.0 - c[ch]);
        }
        g.features[fdim * id..fdim * (id + 1)].copy_from_slice(&a[HEAD..]);
        out.screen_grad_norm[id] = Vector2::new(a[0], a[1]).component_mul(&half).norm();
        out.visible[id] = true;
    }
    Ok(out)
}
