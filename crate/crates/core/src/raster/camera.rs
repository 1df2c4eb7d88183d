use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pinhole camera. World points map to the camera frame as
/// `x_cam = rotation · x_world + translation`; the camera looks down `+z`
/// with `+y` pointing down the image. Pixel `(i, j)` has its centre at the
/// image-plane coordinate `(i, j)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub near: f64,
}

pub const DEFAULT_NEAR: f64 = 0.01;

impl Camera {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
    ) -> Result<Self> {
        let cam = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            rotation,
            translation,
            near: DEFAULT_NEAR,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::InvalidArgument(
                "focal lengths must be positive".into(),
            ));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidArgument(
                "image size must be at least 1x1".into(),
            ));
        }
        if !(self.near > 0.0) {
            return Err(Error::InvalidArgument("near clip must be positive".into()));
        }
        let r = &self.rotation;
        let ortho = (r.transpose() * r - Matrix3::identity()).abs().max();
        if ortho > 1e-6 || (r.determinant() - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidArgument(
                "camera rotation must be a proper rotation".into(),
            ));
        }
        Ok(())
    }

    /// Camera at `eye` looking at `target` with `up` as the world up direction.
    pub fn look_at(
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
        fov_y_deg: f64,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let forward = (target - eye)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::InvalidArgument("eye and target coincide".into()))?;
        let right = forward
            .cross(&up)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::InvalidArgument("view direction is parallel to up".into()))?;
        let down = forward.cross(&right);
        let rotation =
            Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let f = 0.5 * height as f64 / (0.5 * fov_y_deg.to_radians()).tan();
        Self::new(
            f,
            f,
            (width as f64 - 1.0) * 0.5,
            (height as f64 - 1.0) * 0.5,
            width,
            height,
            rotation,
            -(rotation * eye),
        )
    }

    /// Camera on a sphere around `orbit.target`, world up `+z`.
    pub fn orbit(orbit: &Orbit, width: usize, height: usize) -> Result<Self> {
        let (az, el) = (
            orbit.azimuth_deg.to_radians(),
            orbit.elevation_deg.to_radians(),
        );
        let dir = Vector3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin());
        let target = Vector3::from(orbit.target);
        Self::look_at(
            target + orbit.radius * dir,
            target,
            Vector3::z(),
            orbit.fov_y_deg,
            width,
            height,
        )
    }

    /// Camera-frame coordinates of a world point.
    pub fn to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// World-space camera centre.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    /// Pixel coordinates of a world point, `None` behind the near plane.
    pub fn project_point(&self, p: &Vector3<f64>) -> Option<[f64; 2]> {
        let c = self.to_camera(p);
        (c.z > self.near).then(|| [self.fx * c.x / c.z + self.cx, self.fy * c.y / c.z + self.cy])
    }

    pub fn num_pixels(&self) -> usize {
        self.width * self.height
    }
}

/// Orbit-camera parameters (degrees, world units).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Orbit {
    pub azimuth_deg: f64,
    pub elevation_deg: f64,
    pub radius: f64,
    #[serde(default)]
    pub target: [f64; 3],
    #[serde(default = "default_fov")]
    pub fov_y_deg: f64,
}

fn default_fov() -> f64 {
    45.0
}

impl Default for Orbit {
    fn default() -> Self {
        Self {
            azimuth_deg: 0.0,
            elevation_deg: 20.0,
            radius: 4.0,
            target: [0.0; 3],
            fov_y_deg: default_fov(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn orbit_looks_at_target() {
        let orbit = Orbit {
            azimuth_deg: 30.0,
            elevation_deg: 25.0,
            radius: 3.0,
            target: [0.1, 0.2, -0.3],
            fov_y_deg: 50.0,
        };
        let cam = Camera::orbit(&orbit, 64, 48).unwrap();
        let px = cam.project_point(&Vector3::from(orbit.target)).unwrap();
        assert_relative_eq!(px[0], cam.cx, epsilon = 1e-9);
        assert_relative_eq!(px[1], cam.cy, epsilon = 1e-9);
        assert_relative_eq!(
            (cam.center() - Vector3::from(orbit.target)).norm(),
            3.0,
            epsilon = 1e-12
        );
        // World up projects towards the top of the image.
        let above = cam
            .project_point(&(Vector3::from(orbit.target) + Vector3::z() * 0.1))
            .unwrap();
        assert!(above[1] < cam.cy);
    }

    #[test]
    fn rejects_bad_intrinsics() {
        let r = Matrix3::identity();
        assert!(Camera::new(0.0, 1.0, 0.0, 0.0, 4, 4, r, Vector3::zeros()).is_err());
        assert!(Camera::new(1.0, 1.0, 0.0, 0.0, 0, 4, r, Vector3::zeros()).is_err());
        let skew = Matrix3::new(1.0, 0.1, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(Camera::new(1.0, 1.0, 0.0, 0.0, 4, 4, skew, Vector3::zeros()).is_err());
    }
}
