//! Gaussian scene representation.
//!
//! Every learnable quantity is stored in an unconstrained domain so an
//! optimizer step can never leave the valid set:
//!
//! | field            | stored as              | activated as                 |
//! |------------------|------------------------|------------------------------|
//! | position         | world coordinates      | identity                     |
//! | rotation         | unnormalized `(w,x,y,z)` | `q / ‖q‖`                  |
//! | scale            | `ln s`                 | `exp`                        |
//! | opacity          | `logit σ`              | `sigmoid`                    |
//! | color            | `logit c`              | `sigmoid` (per channel)      |
//! | semantic feature | raw `C`-vector         | identity                     |

use nalgebra::{Matrix3, Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{shape_err, Error, Result};

/// Quaternions at or below this norm cannot define a rotation.
pub const MIN_QUAT_NORM: f64 = 1e-12;
/// Activated opacity assigned by the initializers.
pub const INIT_OPACITY: f64 = 0.1;
/// Standard deviation of the initial semantic features (variance 0.01).
pub const INIT_FEATURE_STD: f64 = 0.1;
/// Scale used when a point has no neighbours to measure against.
const FALLBACK_SCALE: f64 = 0.01;
const MIN_NEIGHBOR_DIST: f64 = 1e-7;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Structure-of-arrays storage for `N` Gaussians with `C`-dimensional features.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSet {
    pub positions: Vec<f64>,
    pub rotations: Vec<f64>,
    pub log_scales: Vec<f64>,
    pub opacity_logits: Vec<f64>,
    pub color_logits: Vec<f64>,
    pub features: Vec<f64>,
    feature_dim: usize,
}

impl GaussianSet {
    /// An empty set; renderable, but most constructors require `N ≥ 1`.
    pub fn empty(feature_dim: usize) -> Self {
        Self {
            positions: Vec::new(),
            rotations: Vec::new(),
            log_scales: Vec::new(),
            opacity_logits: Vec::new(),
            color_logits: Vec::new(),
            features: Vec::new(),
            feature_dim,
        }
    }

    /// Builds a set from raw parameter arrays, checking that all lengths agree.
    pub fn from_parts(
        positions: Vec<f64>,
        rotations: Vec<f64>,
        log_scales: Vec<f64>,
        opacity_logits: Vec<f64>,
        color_logits: Vec<f64>,
        features: Vec<f64>,
        feature_dim: usize,
    ) -> Result<Self> {
        if feature_dim == 0 {
            return Err(shape_err("feature dimension must be at least 1"));
        }
        let n = opacity_logits.len();
        let checks = [
            ("positions", positions.len(), 3 * n),
            ("rotations", rotations.len(), 4 * n),
            ("log_scales", log_scales.len(), 3 * n),
            ("color_logits", color_logits.len(), 3 * n),
            ("features", features.len(), feature_dim * n),
        ];
        for (name, got, want) in checks {
            if got != want {
                return Err(shape_err(format!("{name}: length {got}, expected {want}")));
            }
        }
        Ok(Self {
            positions,
            rotations,
            log_scales,
            opacity_logits,
            color_logits,
            features,
            feature_dim,
        })
    }

    pub fn len(&self) -> usize {
        self.opacity_logits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.opacity_logits.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn position(&self, i: usize) -> Vector3<f64> {
        Vector3::from_column_slice(&self.positions[3 * i..3 * i + 3])
    }

    pub fn rotation(&self, i: usize) -> Vector4<f64> {
        Vector4::from_column_slice(&self.rotations[4 * i..4 * i + 4])
    }

    pub fn log_scale(&self, i: usize) -> Vector3<f64> {
        Vector3::from_column_slice(&self.log_scales[3 * i..3 * i + 3])
    }

    pub fn scale(&self, i: usize) -> Vector3<f64> {
        self.log_scale(i).map(f64::exp)
    }

    pub fn opacity(&self, i: usize) -> f64 {
        sigmoid(self.opacity_logits[i])
    }

    pub fn color(&self, i: usize) -> Vector3<f64> {
        Vector3::from_iterator(
            self.color_logits[3 * i..3 * i + 3]
                .iter()
                .map(|&v| sigmoid(v)),
        )
    }

    pub fn feature(&self, i: usize) -> &[f64] {
        &self.features[self.feature_dim * i..self.feature_dim * (i + 1)]
    }

    pub fn covariance(&self, i: usize) -> Result<Covariance3> {
        covariance3d(&self.rotation(i), &self.log_scale(i))
    }

    /// Appends a copy of Gaussian `i` of `src`.
    pub fn push_from(&mut self, src: &GaussianSet, i: usize) {
        debug_assert_eq!(src.feature_dim, self.feature_dim);
        self.positions
            .extend_from_slice(&src.positions[3 * i..3 * i + 3]);
        self.rotations
            .extend_from_slice(&src.rotations[4 * i..4 * i + 4]);
        self.log_scales
            .extend_from_slice(&src.log_scales[3 * i..3 * i + 3]);
        self.opacity_logits.push(src.opacity_logits[i]);
        self.color_logits
            .extend_from_slice(&src.color_logits[3 * i..3 * i + 3]);
        self.features.extend_from_slice(src.feature(i));
    }

    /// New set holding the listed Gaussians, in the listed order.
    pub fn subset(&self, ids: &[usize]) -> GaussianSet {
        let mut out = GaussianSet::empty(self.feature_dim);
        for &i in ids {
            out.push_from(self, i);
        }
        out
    }

    /// Rounds every parameter to the nearest `f32`.
    pub fn round_to_f32(&mut self) {
        for v in self.param_slices_mut() {
            v.iter_mut().for_each(|x| *x = *x as f32 as f64);
        }
    }

    pub(crate) fn param_slices_mut(&mut self) -> [&mut Vec<f64>; 6] {
        [
            &mut self.positions,
            &mut self.rotations,
            &mut self.log_scales,
            &mut self.opacity_logits,
            &mut self.color_logits,
            &mut self.features,
        ]
    }

    pub fn is_finite(&self) -> bool {
        [
            &self.positions,
            &self.rotations,
            &self.log_scales,
            &self.opacity_logits,
            &self.color_logits,
            &self.features,
        ]
        .iter()
        .all(|v| v.iter().all(|x| x.is_finite()))
    }
}

/// Gradients with the same flat layout as [`GaussianSet`]; color gradients
/// are with respect to the stored logits.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianGrads {
    pub positions: Vec<f64>,
    pub rotations: Vec<f64>,
    pub log_scales: Vec<f64>,
    pub opacity_logits: Vec<f64>,
    pub color_logits: Vec<f64>,
    pub features: Vec<f64>,
}

impl GaussianGrads {
    pub fn zeros_like(g: &GaussianSet) -> Self {
        Self {
            positions: vec![0.0; g.positions.len()],
            rotations: vec![0.0; g.rotations.len()],
            log_scales: vec![0.0; g.log_scales.len()],
            opacity_logits: vec![0.0; g.opacity_logits.len()],
            color_logits: vec![0.0; g.color_logits.len()],
            features: vec![0.0; g.features.len()],
        }
    }

    /// Groups in canonical order: positions, rotations, log-scales,
    /// opacity logits, color logits, features.
    pub fn groups(&self) -> [&[f64]; 6] {
        [
            &self.positions,
            &self.rotations,
            &self.log_scales,
            &self.opacity_logits,
            &self.color_logits,
            &self.features,
        ]
    }

    pub fn is_zero(&self) -> bool {
        self.groups().iter().all(|g| g.iter().all(|v| *v == 0.0))
    }
}

/// Symmetric positive semidefinite 3×3 covariance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Covariance3(pub Matrix3<f64>);

impl Covariance3 {
    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }
}

/// Rotation matrix of `q / ‖q‖`, with `q = (w, x, y, z)`.
pub fn quat_to_rotation(q: &Vector4<f64>) -> Result<Matrix3<f64>> {
    let norm = q.norm();
    if norm <= MIN_QUAT_NORM {
        return Err(Error::ZeroQuaternion);
    }
    let q = q / norm;
    Ok(unit_quat_to_rotation(q[0], q[1], q[2], q[3]))
}

pub(crate) fn unit_quat_to_rotation(w: f64, x: f64, y: f64, z: f64) -> Matrix3<f64> {
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// `Σ = R S Sᵀ Rᵀ` with `S = diag(exp(log_scale))`.
pub fn covariance3d(q: &Vector4<f64>, log_scale: &Vector3<f64>) -> Result<Covariance3> {
    let r = quat_to_rotation(q)?;
    let m = r * Matrix3::from_diagonal(&log_scale.map(f64::exp));
    let sigma = m * m.transpose();
    // Symmetrize away the last-ulp asymmetry of the product.
    Ok(Covariance3((sigma + sigma.transpose()) * 0.5))
}

/// Initial Gaussians centred on a point cloud.
///
/// Scales are isotropic: `ln` of the mean distance to the three nearest
/// neighbours (fewer when the cloud is smaller). Colors come from `colors`
/// (in `[0, 1]`), opacity is [`INIT_OPACITY`], rotations are identity and
/// features are drawn from `N(0, INIT_FEATURE_STD²)` using `seed`.
pub fn init_from_pointcloud(
    points: &[[f64; 3]],
    colors: &[[f64; 3]],
    feature_dim: usize,
    seed: u64,
) -> Result<GaussianSet> {
    if points.is_empty() {
        return Err(Error::EmptyPointCloud);
    }
    if colors.len() != points.len() {
        return Err(shape_err(format!(
            "{} colors for {} points",
            colors.len(),
            points.len()
        )));
    }
    if feature_dim == 0 {
        return Err(shape_err("feature dimension must be at least 1"));
    }
    let n = points.len();
    let nn = mean_knn_distance(points, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, INIT_FEATURE_STD).expect("valid std");

    let positions = points.iter().flatten().copied().collect();
    let rotations = (0..n).flat_map(|_| [1.0, 0.0, 0.0, 0.0]).collect();
    let log_scales = nn
        .iter()
        .flat_map(|d| {
            let s = d.map_or(FALLBACK_SCALE, |d| d.max(MIN_NEIGHBOR_DIST)).ln();
            [s, s, s]
        })
        .collect();
    let opacity_logits = vec![logit(INIT_OPACITY); n];
    let color_logits = colors
        .iter()
        .flatten()
        .map(|&c| logit(c.clamp(1e-4, 1.0 - 1e-4)))
        .collect();
    let features = (0..n * feature_dim)
        .map(|_| normal.sample(&mut rng))
        .collect();
    GaussianSet::from_parts(
        positions,
        rotations,
        log_scales,
        opacity_logits,
        color_logits,
        features,
        feature_dim,
    )
}

/// Axis-aligned box `[min, max]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Self {
        Self { min, max }
    }

    pub fn unit() -> Self {
        Self::new([0.0; 3], [1.0; 3])
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        (0..3).all(|k| p[k] >= self.min[k] && p[k] <= self.max[k])
    }
}

/// `n` Gaussians uniformly placed in `bbox`, mid-grey, otherwise as
/// [`init_from_pointcloud`].
pub fn init_random(n: usize, bbox: Aabb, feature_dim: usize, seed: u64) -> Result<GaussianSet> {
    let valid = (0..3).all(|k| {
        let ext = bbox.max[k] - bbox.min[k];
        ext.is_finite() && ext > 0.0
    });
    if !valid {
        return Err(Error::InvalidBox);
    }
    if n == 0 {
        return Err(Error::EmptyPointCloud);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points: Vec<[f64; 3]> = (0..n)
        .map(|_| std::array::from_fn(|k| rng.random_range(bbox.min[k]..bbox.max[k])))
        .collect();
    let colors = vec![[0.5; 3]; n];
    init_from_pointcloud(&points, &colors, feature_dim, rng.random())
}

/// Mean distance from each point to its `k` nearest neighbours, `None` for
/// an isolated single point. Uses a uniform grid so large clouds stay fast.
fn mean_knn_distance(points: &[[f64; 3]], k: usize) -> Vec<Option<f64>> {
    let n = points.len();
    if n == 1 {
        return vec![None];
    }
    let k = k.min(n - 1);
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in points {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let extent = (0..3).map(|a| hi[a] - lo[a]).fold(0.0, f64::max).max(1e-9);
    let res = ((n as f64).cbrt().ceil() as usize).clamp(1, 128);
    let cell = extent / res as f64;
    let cell_of = |p: &[f64; 3]| -> [usize; 3] {
        std::array::from_fn(|a| (((p[a] - lo[a]) / cell) as usize).min(res - 1))
    };
    let mut grid: Vec<Vec<usize>> = vec![Vec::new(); res * res * res];
    let flat = |c: [usize; 3]| (c[2] * res + c[1]) * res + c[0];
    for (i, p) in points.iter().enumerate() {
        grid[flat(cell_of(p))].push(i);
    }

    use rayon::prelude::*;
    points
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let c = cell_of(p);
            let mut best: Vec<f64> = Vec::with_capacity(k + 1);
            let mut ring = 0usize;
            loop {
                // Visit the shell of cells at Chebyshev distance `ring`.
                let r = ring as isize;
                for dz in -r..=r {
                    for dy in -r..=r {
                        for dx in -r..=r {
                            if dx.abs().max(dy.abs()).max(dz.abs()) != r {
                                continue;
                            }
                            let q = [c[0] as isize + dx, c[1] as isize + dy, c[2] as isize + dz];
                            if q.iter().any(|&v| v < 0 || v >= res as isize) {
                                continue;
                            }
                            for &j in &grid[flat([q[0] as usize, q[1] as usize, q[2] as usize])] {
                                if j == i {
                                    continue;
                                }
                                let d = ((p[0] - points[j][0]).powi(2)
                                    + (p[1] - points[j][1]).powi(2)
                                    + (p[2] - points[j][2]).powi(2))
                                .sqrt();
                                let pos = best.partition_point(|&b| b <= d);
                                if pos < k {
                                    best.insert(pos, d);
                                    best.truncate(k);
                                }
                            }
                        }
                    }
                }
                // Everything outside the visited cube is at least `ring * cell` away.
                let covered = ring as f64 * cell;
                if (best.len() == k && best[k - 1] <= covered) || ring >= res {
                    break;
                }
                ring += 1;
            }
            Some(best.iter().sum::<f64>() / best.len() as f64)
        })
        .collect()
}
