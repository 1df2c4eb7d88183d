//! EWA projection of 3D Gaussians to screen-space splats, and its adjoint.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3, Vector4};

use super::camera::Camera;
use crate::error::{Error, Result};
use crate::scene::{unit_quat_to_rotation, Covariance3, GaussianSet, MIN_QUAT_NORM};

/// Low-pass dilation added to every screen-space covariance, in px².
pub const LOW_PASS: f64 = 0.3;
/// Alpha values below this are skipped during compositing.
pub const ALPHA_MIN: f64 = 1.0 / 255.0;
/// Alpha is clamped to at most this value.
pub const ALPHA_MAX: f64 = 0.99;
/// Compositing stops once transmittance falls below this.
pub const TRANSMITTANCE_MIN: f64 = 1e-4;
const MIN_COV2D_DET: f64 = 1e-12;

/// A Gaussian projected to the image plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Splat2D {
    pub gaussian_id: usize,
    /// `μ`, in pixels.
    pub mean: Vector2<f64>,
    /// `Σ' = J W Σ Wᵀ Jᵀ + λ_lp I`.
    pub cov: Matrix2<f64>,
    /// `Σ'⁻¹`.
    pub conic: Matrix2<f64>,
    pub depth: f64,
    /// Pixel distance beyond which the splat's alpha is below [`ALPHA_MIN`].
    pub radius: f64,
    pub opacity: f64,
}

impl Splat2D {
    /// Unclamped `σ·exp(−½ dᵀ Σ'⁻¹ d)` with `d = p − μ`; also returns the
    /// Gaussian falloff and `d`.
    #[inline]
    pub fn eval(&self, px: f64, py: f64) -> (f64, f64, f64, f64) {
        let dx = px - self.mean.x;
        let dy = py - self.mean.y;
        let q = self.conic[(0, 0)] * dx * dx
            + 2.0 * self.conic[(0, 1)] * dx * dy
            + self.conic[(1, 1)] * dy * dy;
        let g = (-0.5 * q).exp();
        (self.opacity * g, g, dx, dy)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Projection {
    Visible(Splat2D),
    Culled,
}

/// Extent (in units of the covariance's standard deviation) inside which an
/// opacity-`σ` splat reaches [`ALPHA_MIN`]: `√(2 ln(σ / ALPHA_MIN))`.
fn cutoff_sigmas(opacity: f64) -> Option<f64> {
    let k = 2.0 * (opacity / ALPHA_MIN).ln();
    (k > 0.0).then(|| k.sqrt())
}

/// `2×3` Jacobian of the perspective map at camera-frame point `c`.
fn perspective_jacobian(cam: &Camera, c: &Vector3<f64>) -> Matrix2x3<f64> {
    let iz = 1.0 / c.z;
    Matrix2x3::new(
        cam.fx * iz,
        0.0,
        -cam.fx * c.x * iz * iz,
        0.0,
        cam.fy * iz,
        -cam.fy * c.y * iz * iz,
    )
}

fn projected_cov(cam: &Camera, c: &Vector3<f64>, sigma: &Matrix3<f64>) -> Matrix2<f64> {
    let j = perspective_jacobian(cam, c);
    let w = &cam.rotation;
    let cov = j * (w * sigma * w.transpose()) * j.transpose();
    Matrix2::new(
        cov[(0, 0)] + LOW_PASS,
        cov[(0, 1)],
        cov[(1, 0)],
        cov[(1, 1)] + LOW_PASS,
    )
}

fn invert_sym2(cov: &Matrix2<f64>) -> Result<Matrix2<f64>> {
    let det = cov[(0, 0)] * cov[(1, 1)] - cov[(0, 1)] * cov[(1, 0)];
    if !(det > MIN_COV2D_DET) {
        return Err(Error::SingularCovariance { det });
    }
    Ok(Matrix2::new(cov[(1, 1)], -cov[(0, 1)], -cov[(1, 0)], cov[(0, 0)]) / det)
}

fn max_eigenvalue_sym2(m: &Matrix2<f64>) -> f64 {
    let mid = 0.5 * (m[(0, 0)] + m[(1, 1)]);
    let half_diff = 0.5 * (m[(0, 0)] - m[(1, 1)]);
    mid + (half_diff * half_diff + m[(0, 1)] * m[(1, 0)])
        .max(0.0)
        .sqrt()
}

/// Projects one Gaussian. Culls when the centre is not beyond the near
/// plane, when the opacity can never reach [`ALPHA_MIN`], or when the
/// splat's footprint misses the image entirely.
pub fn project_gaussian(
    position: &Vector3<f64>,
    covariance: &Covariance3,
    opacity: f64,
    camera: &Camera,
) -> Result<Projection> {
    match project_unculled(position, covariance, opacity, camera)? {
        Some(s) => {
            let (w, h) = (camera.width as f64, camera.height as f64);
            let off = s.mean.x + s.radius < 0.0
                || s.mean.y + s.radius < 0.0
                || s.mean.x - s.radius > w - 1.0
                || s.mean.y - s.radius > h - 1.0;
            Ok(if off || s.radius <= 0.0 {
                Projection::Culled
            } else {
                Projection::Visible(s)
            })
        }
        None => Ok(Projection::Culled),
    }
}

/// Projection with depth culling only (used by the brute-force oracle).
/// A splat whose opacity can never reach [`ALPHA_MIN`] gets radius zero.
pub(crate) fn project_unculled(
    position: &Vector3<f64>,
    covariance: &Covariance3,
    opacity: f64,
    camera: &Camera,
) -> Result<Option<Splat2D>> {
    let c = camera.to_camera(position);
    if !(c.z > camera.near) {
        return Ok(None);
    }
    let cov = projected_cov(camera, &c, covariance.matrix());
    let conic = invert_sym2(&cov)?;
    let sigma_max = max_eigenvalue_sym2(&cov).sqrt();
    // Padded so rounding never excludes a pixel the compositor would accept.
    let radius = cutoff_sigmas(opacity).map_or(0.0, |k| k * sigma_max * (1.0 + 1e-9) + 1e-9);
    Ok(Some(Splat2D {
        gaussian_id: usize::MAX,
        mean: Vector2::new(
            camera.fx * c.x / c.z + camera.cx,
            camera.fy * c.y / c.z + camera.cy,
        ),
        cov,
        conic,
        depth: c.z,
        radius,
        opacity,
    }))
}

/// Projects every Gaussian of a set, skipping culled ones and Gaussians
/// whose rotation is degenerate. `cull` selects frustum culling.
pub(crate) fn project_set(gaussians: &GaussianSet, camera: &Camera, cull: bool) -> Vec<Splat2D> {
    use rayon::prelude::*;
    let mut splats: Vec<Splat2D> = (0..gaussians.len())
        .into_par_iter()
        .with_min_len(256)
        .filter_map(|i| {
            let cov = gaussians.covariance(i).ok()?;
            let pos = gaussians.position(i);
            let op = gaussians.opacity(i);
            let s = if cull {
                match project_gaussian(&pos, &cov, op, camera).ok()? {
                    Projection::Visible(s) => s,
                    Projection::Culled => return None,
                }
            } else {
                project_unculled(&pos, &cov, op, camera).ok()??
            };
            Some(Splat2D {
                gaussian_id: i,
                ..s
            })
        })
        .collect();
    // Front to back; ties broken by id for a canonical order.
    splats.sort_by(|a, b| {
        a.depth
            .total_cmp(&b.depth)
            .then(a.gaussian_id.cmp(&b.gaussian_id))
    });
    splats
}

/// Upstream gradient on one splat's screen-space quantities.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SplatGrad {
    pub mean: Vector2<f64>,
    /// Full-matrix gradient with respect to the conic (`∂L/∂M` with both
    /// off-diagonal entries treated as independent).
    pub conic: Matrix2<f64>,
    pub opacity: f64,
}

/// Gradients of one Gaussian's geometric parameters.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GeometryGrad {
    pub position: Vector3<f64>,
    pub rotation: Vector4<f64>,
    pub log_scale: Vector3<f64>,
    /// With respect to the opacity logit.
    pub opacity_logit: f64,
}

/// Adjoint of [`project_gaussian`] for a visible Gaussian.
pub fn project_backward(
    position: &Vector3<f64>,
    rotation: &Vector4<f64>,
    log_scale: &Vector3<f64>,
    opacity: f64,
    camera: &Camera,
    grad: &SplatGrad,
) -> GeometryGrad {
    let norm = rotation.norm().max(MIN_QUAT_NORM);
    let u = rotation / norm;
    let r = unit_quat_to_rotation(u[0], u[1], u[2], u[3]);
    let s = log_scale.map(f64::exp);
    let m = r * Matrix3::from_diagonal(&s);
    let sigma = m * m.transpose();

    let c = camera.to_camera(position);
    let w = &camera.rotation;
    let j = perspective_jacobian(camera, &c);
    let sigma_cam = w * sigma * w.transpose();
    let cov = j * sigma_cam * j.transpose() + Matrix2::identity() * LOW_PASS;
    let conic = cov.try_inverse().unwrap_or_else(Matrix2::zeros);

    // M = Σ'⁻¹  ⇒  ∂L/∂Σ' = −M (∂L/∂M) M  (all full matrices, M symmetric).
    let g_cov = -(conic * grad.conic * conic);
    // Σ' = J Σc Jᵀ
    let g_sigma_cam = j.transpose() * g_cov * j;
    let g_j = g_cov * j * sigma_cam.transpose() + g_cov.transpose() * j * sigma_cam;
    // Σc = W Σ Wᵀ
    let g_sigma = w.transpose() * g_sigma_cam * w;
    // Σ = M Mᵀ with M = R S
    let g_m = (g_sigma + g_sigma.transpose()) * m;
    let g_r = g_m * Matrix3::from_diagonal(&s);
    let rt_gm = r.transpose() * g_m;
    let log_scale_grad = Vector3::new(
        rt_gm[(0, 0)] * s.x,
        rt_gm[(1, 1)] * s.y,
        rt_gm[(2, 2)] * s.z,
    );

    let g_unit = rotation_grad(u[0], u[1], u[2], u[3], &g_r);
    let rotation_grad = (g_unit - u * u.dot(&g_unit)) / norm;

    // μ = (fx x/z + cx, fy y/z + cy) and J(c).
    let (fx, fy) = (camera.fx, camera.fy);
    let iz = 1.0 / c.z;
    let iz2 = iz * iz;
    let iz3 = iz2 * iz;
    let gm = grad.mean;
    let mut g_c = Vector3::new(
        gm.x * fx * iz,
        gm.y * fy * iz,
        -gm.x * fx * c.x * iz2 - gm.y * fy * c.y * iz2,
    );
    g_c.x += g_j[(0, 2)] * (-fx * iz2);
    g_c.y += g_j[(1, 2)] * (-fy * iz2);
    g_c.z += g_j[(0, 0)] * (-fx * iz2)
        + g_j[(0, 2)] * (2.0 * fx * c.x * iz3)
        + g_j[(1, 1)] * (-fy * iz2)
        + g_j[(1, 2)] * (2.0 * fy * c.y * iz3);

    GeometryGrad {
        position: w.transpose() * g_c,
        rotation: rotation_grad,
        log_scale: log_scale_grad,
        opacity_logit: grad.opacity * opacity * (1.0 - opacity),
    }
}

/// `∂L/∂(w,x,y,z)` of the rotation matrix of a unit quaternion given `∂L/∂R`.
fn rotation_grad(w: f64, x: f64, y: f64, z: f64, g: &Matrix3<f64>) -> Vector4<f64> {
    let gw = 2.0
        * (-z * g[(0, 1)] + y * g[(0, 2)] + z * g[(1, 0)] - x * g[(1, 2)] - y * g[(2, 0)]
            + x * g[(2, 1)]);
    let gx = 2.0
        * (y * g[(0, 1)] + z * g[(0, 2)] + y * g[(1, 0)] - 2.0 * x * g[(1, 1)] - w * g[(1, 2)]
            + z * g[(2, 0)]
            + w * g[(2, 1)]
            - 2.0 * x * g[(2, 2)]);
    let gy = 2.0
        * (-2.0 * y * g[(0, 0)] + x * g[(0, 1)] + w * g[(0, 2)] + x * g[(1, 0)] + z * g[(1, 2)]
            - w * g[(2, 0)]
            + z * g[(2, 1)]
            - 2.0 * y * g[(2, 2)]);
    let gz = 2.0
        * (-2.0 * z * g[(0, 0)] - w * g[(0, 1)] + x * g[(0, 2)] + w * g[(1, 0)]
            - 2.0 * z * g[(1, 1)]
            + y * g[(1, 2)]
            + x * g[(2, 0)]
            + y * g[(2, 1)]);
    Vector4::new(gw, gx, gy, gz)
}
