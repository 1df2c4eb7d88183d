use rayon::prelude::*;

use super::camera::Camera;
use super::project::{project_set, Splat2D, ALPHA_MAX, ALPHA_MIN, TRANSMITTANCE_MIN};
use super::Image;
use crate::error::{Error, Result};
use crate::scene::GaussianSet;

pub(crate) const TILE: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderOptions {
    /// Color behind all splats; the feature background is always zero.
    pub background: [f64; 3],
    /// Record the `k` largest per-pixel contribution weights.
    pub contributions_top_k: Option<usize>,
    /// Spread tiles over the rayon pool. Results are identical either way.
    pub parallel: bool,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            background: [0.0; 3],
            contributions_top_k: None,
            parallel: true,
        }
    }
}

/// One Gaussian's share `T_i α_i` of a pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Contribution {
    pub gaussian_id: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    pub color: Image,
    pub feature: Image,
    /// Accumulated `Σ T_i α_i`.
    pub alpha: Image,
    /// Per pixel (row-major), descending by weight, truncated to top-k.
    pub contributions: Option<Vec<Vec<Contribution>>>,
}

impl RenderOutput {
    fn blank(cam: &Camera, feature_dim: usize, background: [f64; 3], contributions: bool) -> Self {
        let mut color = Image::zeros(cam.width, cam.height, 3);
        for px in color.data.chunks_exact_mut(3) {
            px.copy_from_slice(&background);
        }
        Self {
            color,
            feature: Image::zeros(cam.width, cam.height, feature_dim),
            alpha: Image::zeros(cam.width, cam.height, 1),
            contributions: contributions.then(|| vec![Vec::new(); cam.num_pixels()]),
        }
    }
}

/// Activated per-Gaussian colors, indexed by Gaussian id.
pub(crate) fn activated_colors(g: &GaussianSet) -> Vec<[f64; 3]> {
    (0..g.len()).map(|i| g.color(i).into()).collect()
}

/// Splats grouped per tile, each list in global depth order.
pub(crate) struct TileBins {
    pub tiles_x: usize,
    pub lists: Vec<Vec<u32>>,
}

pub(crate) fn bin_splats(splats: &[Splat2D], cam: &Camera) -> TileBins {
    let tiles_x = cam.width.div_ceil(TILE);
    let tiles_y = cam.height.div_ceil(TILE);
    let mut lists = vec![Vec::new(); tiles_x * tiles_y];
    let max_x = (cam.width - 1) as f64;
    let max_y = (cam.height - 1) as f64;
    for (k, s) in splats.iter().enumerate() {
        let x0 = (s.mean.x - s.radius).ceil().max(0.0);
        let x1 = (s.mean.x + s.radius).floor().min(max_x);
        let y0 = (s.mean.y - s.radius).ceil().max(0.0);
        let y1 = (s.mean.y + s.radius).floor().min(max_y);
        if x0 > x1 || y0 > y1 {
            continue;
        }
        let (tx0, tx1) = (x0 as usize / TILE, x1 as usize / TILE);
        let (ty0, ty1) = (y0 as usize / TILE, y1 as usize / TILE);
        for ty in ty0..=ty1 {
            for tx in tx0..=tx1 {
                lists[ty * tiles_x + tx].push(k as u32);
            }
        }
    }
    TileBins { tiles_x, lists }
}

pub(crate) fn tile_pixels(
    cam: &Camera,
    tile: usize,
    tiles_x: usize,
) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
    let (tx, ty) = (tile % tiles_x, tile / tiles_x);
    (
        tx * TILE..((tx + 1) * TILE).min(cam.width),
        ty * TILE..((ty + 1) * TILE).min(cam.height),
    )
}

struct TileResult {
    color: Vec<f64>,
    feature: Vec<f64>,
    alpha: Vec<f64>,
    contributions: Vec<Vec<Contribution>>,
}

/// Front-to-back compositing of the depth-ordered `splats` at one pixel.
/// Writes premultiplied color/feature sums (no background) and returns
/// `(Σ T_i α_i, final T)`.
#[inline]
fn composite<'a>(
    px: f64,
    py: f64,
    splats: impl Iterator<Item = &'a Splat2D>,
    colors: &[[f64; 3]],
    gaussians: &GaussianSet,
    color: &mut [f64],
    feature: &mut [f64],
    mut record: Option<&mut Vec<Contribution>>,
) -> (f64, f64) {
    let mut t = 1.0;
    let mut acc = 0.0;
    for s in splats {
        let (alpha, ..) = s.eval(px, py);
        if alpha < ALPHA_MIN {
            continue;
        }
        let alpha = alpha.min(ALPHA_MAX);
        let w = t * alpha;
        let c = &colors[s.gaussian_id];
        for k in 0..3 {
            color[k] += w * c[k];
        }
        for (f, v) in feature.iter_mut().zip(gaussians.feature(s.gaussian_id)) {
            *f += w * v;
        }
        acc += w;
        if let Some(rec) = record.as_deref_mut() {
            rec.push(Contribution {
                gaussian_id: s.gaussian_id,
                weight: w,
            });
        }
        t *= 1.0 - alpha;
        if t < TRANSMITTANCE_MIN {
            break;
        }
    }
    (acc, t)
}

fn sort_contributions(list: &mut Vec<Contribution>, top_k: usize) {
    list.sort_by(|a, b| {
        b.weight
            .total_cmp(&a.weight)
            .then(a.gaussian_id.cmp(&b.gaussian_id))
    });
    list.truncate(top_k);
}

/// Tiled forward renderer.
pub fn render(gaussians: &GaussianSet, camera: &Camera, options: &RenderOptions) -> RenderOutput {
    let fdim = gaussians.feature_dim();
    let mut out = RenderOutput::blank(
        camera,
        fdim,
        options.background,
        options.contributions_top_k.is_some(),
    );
    let splats = project_set(gaussians, camera, true);
    if splats.is_empty() {
        return out;
    }
    let colors = activated_colors(gaussians);
    let bins = bin_splats(&splats, camera);
    let top_k = options.contributions_top_k;

    let render_tile = |tile: usize| -> TileResult {
        let (xs, ys) = tile_pixels(camera, tile, bins.tiles_x);
        let n = xs.len() * ys.len();
        let mut res = TileResult {
            color: vec![0.0; 3 * n],
            feature: vec![0.0; fdim * n],
            alpha: vec![0.0; n],
            contributions: if top_k.is_some() {
                vec![Vec::new(); n]
            } else {
                Vec::new()
            },
        };
        let list = &bins.lists[tile];
        if list.is_empty() {
            for p in 0..n {
                res.color[3 * p..3 * p + 3].copy_from_slice(&options.background);
            }
            return res;
        }
        let mut p = 0;
        for y in ys.clone() {
            for x in xs.clone() {
                let record = top_k.map(|_| &mut res.contributions[p]);
                let (acc, t) = composite(
                    x as f64,
                    y as f64,
                    list.iter().map(|&k| &splats[k as usize]),
                    &colors,
                    gaussians,
                    &mut res.color[3 * p..3 * p + 3],
                    &mut res.feature[fdim * p..fdim * (p + 1)],
                    record,
                );
                for k in 0..3 {
                    res.color[3 * p + k] += t * options.background[k];
                }
                res.alpha[p] = acc;
                if let Some(k) = top_k {
                    sort_contributions(&mut res.contributions[p], k);
                }
                p += 1;
            }
        }
        res
    };

    let ntiles = bins.lists.len();
    let results: Vec<TileResult> = if options.parallel {
        (0..ntiles).into_par_iter().map(render_tile).collect()
    } else {
        (0..ntiles).map(render_tile).collect()
    };

    for (tile, mut res) in results.into_iter().enumerate() {
        let (xs, ys) = tile_pixels(camera, tile, bins.tiles_x);
        let mut p = 0;
        for y in ys {
            for x in xs.clone() {
                out.color
                    .pixel_mut(x, y)
                    .copy_from_slice(&res.color[3 * p..3 * p + 3]);
                out.feature
                    .pixel_mut(x, y)
                    .copy_from_slice(&res.feature[fdim * p..fdim * (p + 1)]);
                out.alpha.data[y * camera.width + x] = res.alpha[p];
                if let Some(c) = out.contributions.as_mut() {
                    c[y * camera.width + x] = std::mem::take(&mut res.contributions[p]);
                }
                p += 1;
            }
        }
    }
    out
}

/// Reference renderer: for every pixel, walks every depth-sorted splat
/// (only depth-culled) with no tiling or footprint test. Rows are spread
/// over the rayon pool when `options.parallel` is set.
pub fn render_brute_force(
    gaussians: &GaussianSet,
    camera: &Camera,
    options: &RenderOptions,
) -> RenderOutput {
    let fdim = gaussians.feature_dim();
    let splats = project_set(gaussians, camera, false);
    let colors = activated_colors(gaussians);
    let (w, h) = (camera.width, camera.height);
    let top_k = options.contributions_top_k;

    let render_row = |y: usize| {
        let mut color = vec![0.0; 3 * w];
        let mut feature = vec![0.0; fdim * w];
        let mut alpha = vec![0.0; w];
        let mut contribs = vec![Vec::new(); if top_k.is_some() { w } else { 0 }];
        for x in 0..w {
            let mut t = 1.0;
            for s in &splats {
                let (a, ..) = s.eval(x as f64, y as f64);
                if a < ALPHA_MIN {
                    continue;
                }
                let a = a.min(ALPHA_MAX);
                let weight = t * a;
                for k in 0..3 {
                    color[3 * x + k] += weight * colors[s.gaussian_id][k];
                }
                for (k, v) in gaussians.feature(s.gaussian_id).iter().enumerate() {
                    feature[fdim * x + k] += weight * v;
                }
                alpha[x] += weight;
                if top_k.is_some() {
                    contribs[x].push(Contribution {
                        gaussian_id: s.gaussian_id,
                        weight,
                    });
                }
                t *= 1.0 - a;
                if t < TRANSMITTANCE_MIN {
                    break;
                }
            }
            for k in 0..3 {
                color[3 * x + k] += t * options.background[k];
            }
            if let Some(k) = top_k {
                sort_contributions(&mut contribs[x], k);
            }
        }
        (color, feature, alpha, contribs)
    };

    let rows: Vec<_> = if options.parallel {
        (0..h).into_par_iter().map(render_row).collect()
    } else {
        (0..h).map(render_row).collect()
    };

    let mut out = RenderOutput::blank(camera, fdim, options.background, top_k.is_some());
    for (y, (color, feature, alpha, contribs)) in rows.into_iter().enumerate() {
        let row = y * w;
        out.color.data[3 * row..3 * (row + w)].copy_from_slice(&color);
        out.feature.data[fdim * row..fdim * (row + w)].copy_from_slice(&feature);
        out.alpha.data[row..row + w].copy_from_slice(&alpha);
        if let Some(c) = out.contributions.as_mut() {
            for (x, list) in contribs.into_iter().enumerate() {
                c[row + x] = list;
            }
        }
    }
    out
}

/// Descending list of `(id, T_i α_i)` for every Gaussian composited at
/// `pixel`, in agreement with [`render`]'s ordering and thresholds.
pub fn contribution_weights(
    gaussians: &GaussianSet,
    camera: &Camera,
    pixel: (usize, usize),
) -> Result<Vec<Contribution>> {
    Ok(contribution_weights_many(gaussians, camera, &[pixel])?.remove(0))
}

/// [`contribution_weights`] for several pixels, projecting the scene once.
pub fn contribution_weights_many(
    gaussians: &GaussianSet,
    camera: &Camera,
    pixels: &[(usize, usize)],
) -> Result<Vec<Vec<Contribution>>> {
    for &(x, y) in pixels {
        if x >= camera.width || y >= camera.height {
            return Err(Error::PixelOutOfBounds {
                x,
                y,
                width: camera.width,
                height: camera.height,
            });
        }
    }
    let splats = project_set(gaussians, camera, true);
    let colors = activated_colors(gaussians);
    let mut color = [0.0; 3];
    let mut feature = vec![0.0; gaussians.feature_dim()];
    Ok(pixels
        .iter()
        .map(|&(x, y)| {
            let mut list = Vec::new();
            composite(
                x as f64,
                y as f64,
                splats.iter(),
                &colors,
                gaussians,
                &mut color,
                &mut feature,
                Some(&mut list),
            );
            sort_contributions(&mut list, usize::MAX);
            list
        })
        .collect())
}
