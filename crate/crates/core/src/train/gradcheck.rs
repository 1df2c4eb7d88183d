use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{frame_gradients, frame_loss, FrameGradients};
use crate::deformation::{DeformationField, FourierEncodingConfig};
use crate::error::Result;
use crate::raster::{Camera, Image, RenderOptions};
use crate::scene::{logit, GaussianSet};

/// Central-difference step for positions, which see the highest encoding
/// frequencies.
pub const FD_STEP_POSITIONS: f64 = 1e-6;
/// Central-difference step for every other group.
pub const FD_STEP: f64 = 1e-5;

/// A single-frame loss whose gradients are checked.
#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckProblem {
    pub gaussians: GaussianSet,
    /// When present, the scene is deformed to `time` and the field's
    /// parameters are checked too.
    pub field: Option<DeformationField>,
    pub camera: Camera,
    pub time: f64,
    pub image: Image,
    pub features: Option<Image>,
    pub feature_weight: f64,
    pub options: RenderOptions,
}

impl GradcheckProblem {
    /// `n` random Gaussians in front of a `size × size` camera, random
    /// targets, and (if `deformed`) a depth-2, width-8 field with random
    /// heads evaluated at `t = 0.5`.
    pub fn random(n: usize, size: usize, feature_dim: usize, deformed: bool, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut u = |lo: f64, hi: f64| rng.random_range(lo..hi);
        let mut parts: [Vec<f64>; 6] = Default::default();
        for i in 0..n {
            parts[0].extend([u(-0.25, 0.25), u(-0.25, 0.25), u(-0.25, 0.25)]);
            parts[1].extend([u(0.5, 1.0), u(-0.5, 0.5), u(-0.5, 0.5), u(-0.5, 0.5)]);
            parts[2].extend([u(-2.2, -1.6), u(-2.6, -2.0), u(-3.0, -2.4)]);
            parts[3].push(logit(u(0.4, 0.8) - 0.05 * i as f64));
            parts[4].extend([u(-2.0, 2.0), u(-2.0, 2.0), u(-2.0, 2.0)]);
            for _ in 0..feature_dim {
                parts[5].push(u(-1.0, 1.0));
            }
        }
        let [positions, rotations, log_scales, opacity, colors, features] = parts;
        let gaussians = GaussianSet::from_parts(
            positions,
            rotations,
            log_scales,
            opacity,
            colors,
            features,
            feature_dim,
        )
        .expect("consistent sizes");
        let camera = Camera::look_at(
            Vector3::new(0.3, -2.0, 0.4),
            Vector3::zeros(),
            Vector3::z(),
            35.0,
            size,
            size,
        )
        .expect("valid camera");
        let mut image = Image::zeros(size, size, 3);
        image.data.iter_mut().for_each(|v| *v = u(0.0, 1.0));
        let mut target = Image::zeros(size, size, feature_dim);
        target.data.iter_mut().for_each(|v| *v = u(-1.0, 1.0));
        let field = deformed.then(|| {
            let mut f =
                DeformationField::new(FourierEncodingConfig::default(), 2, 8, seed ^ 0xf1e1d)
                    .expect("arch");
            f.randomize_heads(0.05, seed ^ 0x4ead);
            f
        });
        Self {
            gaussians,
            field,
            camera,
            time: 0.5,
            image,
            features: Some(target),
            feature_weight: 1.0,
            options: RenderOptions {
                background: [0.1, 0.2, 0.3],
                ..Default::default()
            },
        }
    }

    /// 3 Gaussians, 8×8 pixels, `C = 4`.
    pub fn tiny(deformed: bool) -> Self {
        Self::random(3, 8, 4, deformed, 7)
    }

    /// 10 Gaussians, 16×16 pixels, `C = 8`.
    pub fn small(deformed: bool) -> Self {
        Self::random(10, 16, 8, deformed, 8)
    }

    pub fn loss(&self) -> Result<f64> {
        frame_loss(
            &self.gaussians,
            self.field.as_ref(),
            &self.camera,
            self.time,
            &self.image,
            self.features.as_ref(),
            self.feature_weight,
            &self.options,
        )
    }

    pub fn gradients(&self) -> Result<FrameGradients> {
        frame_gradients(
            &self.gaussians,
            self.field.as_ref(),
            &self.camera,
            self.time,
            &self.image,
            self.features.as_ref(),
            self.feature_weight,
            &self.options,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupError {
    pub name: &'static str,
    pub count: usize,
    pub step: f64,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub tolerance: f64,
    pub groups: Vec<GroupError>,
    /// Set when the loss or analytic gradients could not be evaluated.
    pub error: Option<String>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.error.is_none() && self.groups.iter().all(|g| g.passed)
    }

    pub fn group(&self, name: &str) -> Option<&GroupError> {
        self.groups.iter().find(|g| g.name == name)
    }

    /// One line per group: name, count, max relative error, PASS/FAIL.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        if let Some(e) = &self.error {
            s.push_str(&format!("error: {e}\n"));
        }
        for g in &self.groups {
            s.push_str(&format!(
                "{:<16} n={:<5} max_rel_err={:.3e} {}\n",
                g.name,
                g.count,
                g.max_rel_error,
                if g.passed { "PASS" } else { "FAIL" }
            ));
        }
        s.push_str(&format!(
            "overall: {} (tolerance {:.0e})\n",
            if self.passed() { "PASS" } else { "FAIL" },
            self.tolerance
        ));
        s
    }
}

/// Compares analytic gradients from [`GradcheckProblem::gradients`] with
/// central differences of the loss.
pub fn gradcheck(problem: &GradcheckProblem, tolerance: f64) -> GradcheckReport {
    gradcheck_with(problem, tolerance, GradcheckProblem::gradients)
}

/// [`gradcheck`] with a caller-supplied analytic gradient.
///
/// Per entry the relative error is `|a − n| / max(|a|, |n|, floor)` where
/// `floor = 1e-3 · max|n|` over the group (at least `1e-10`), so entries
/// that are tiny relative to the rest of their group are compared in
/// absolute terms.
pub fn gradcheck_with<F>(problem: &GradcheckProblem, tolerance: f64, analytic: F) -> GradcheckReport
where
    F: FnOnce(&GradcheckProblem) -> Result<FrameGradients>,
{
    let mut report = GradcheckReport {
        tolerance,
        groups: Vec::new(),
        error: None,
    };
    let grads = match analytic(problem) {
        Ok(g) => g,
        Err(e) => {
            report.error = Some(e.to_string());
            return report;
        }
    };

    type Access = fn(&mut GradcheckProblem) -> &mut [f64];
    let mut checks: Vec<(&'static str, Access, &[f64])> = vec![
        (
            "positions",
            |p| &mut p.gaussians.positions,
            &grads.gaussians.positions,
        ),
        (
            "rotations",
            |p| &mut p.gaussians.rotations,
            &grads.gaussians.rotations,
        ),
        (
            "log_scales",
            |p| &mut p.gaussians.log_scales,
            &grads.gaussians.log_scales,
        ),
        (
            "opacity_logits",
            |p| &mut p.gaussians.opacity_logits,
            &grads.gaussians.opacity_logits,
        ),
        (
            "colors",
            |p| &mut p.gaussians.color_logits,
            &grads.gaussians.color_logits,
        ),
        (
            "features",
            |p| &mut p.gaussians.features,
            &grads.gaussians.features,
        ),
    ];
    let empty: Vec<f64> = Vec::new();
    if problem.field.is_some() {
        let g = grads.field.as_deref().unwrap_or(&empty);
        checks.push(("mlp", |p| p.field.as_mut().expect("field").params_mut(), g));
    }

    let mut work = problem.clone();
    for (name, access, ana) in checks {
        let len = access(&mut work).len();
        let h = if name == "positions" {
            FD_STEP_POSITIONS
        } else {
            FD_STEP
        };
        let mut numeric = Vec::with_capacity(len);
        for k in 0..len {
            let orig = access(&mut work)[k];
            access(&mut work)[k] = orig + h;
            let plus = work.loss();
            access(&mut work)[k] = orig - h;
            let minus = work.loss();
            access(&mut work)[k] = orig;
            match (plus, minus) {
                (Ok(p), Ok(m)) => numeric.push((p - m) / (2.0 * h)),
                (Err(e), _) | (_, Err(e)) => {
                    report.error = Some(format!("{name}[{k}]: {e}"));
                    return report;
                }
            }
        }
        let floor = (1e-3 * numeric.iter().fold(0.0f64, |m, v| m.max(v.abs()))).max(1e-10);
        let mut group = GroupError {
            name,
            count: len,
            step: h,
            max_rel_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
            passed: true,
        };
        if ana.len() != len {
            group.max_rel_error = f64::INFINITY;
            group.passed = false;
            report.groups.push(group);
            continue;
        }
        for (k, (a, n)) in ana.iter().zip(&numeric).enumerate() {
            let err = (a - n).abs() / a.abs().max(n.abs()).max(floor);
            if !(err <= group.max_rel_error) {
                group.max_rel_error = err;
                group.worst_index = k;
                group.analytic = *a;
                group.numeric = *n;
            }
        }
        group.passed = group.max_rel_error < tolerance;
        report.groups.push(group);
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn static_tiny_passes() {
        let r = gradcheck(&GradcheckProblem::tiny(false), 1e-5);
        assert!(r.passed(), "{}", r.to_text());
        assert_eq!(r.groups.len(), 6);
        assert!(r.group("positions").unwrap().count == 9);
    }

    #[test]
    fn deformed_tiny_passes() {
        let r = gradcheck(&GradcheckProblem::tiny(true), 1e-5);
        assert!(r.passed(), "{}", r.to_text());
        assert_eq!(r.groups.len(), 7);
    }

    #[test]
    fn corrupted_path_is_flagged() {
        let problem = GradcheckProblem::tiny(false);
        let r = gradcheck_with(&problem, 1e-5, |p| {
            let mut g = p.gradients()?;
            g.gaussians.log_scales.iter_mut().for_each(|v| *v *= 1.01);
            Ok(g)
        });
        assert!(!r.passed());
        assert!(!r.group("log_scales").unwrap().passed);
        assert!(r.group("positions").unwrap().passed);
        assert!(r.to_text().contains("FAIL"));
    }

    #[test]
    fn failing_gradient_is_reported() {
        let r = gradcheck_with(&GradcheckProblem::tiny(false), 1e-5, |_| {
            Err(crate::Error::InvalidArgument("boom".into()))
        });
        assert!(!r.passed());
        assert!(r.error.unwrap().contains("boom"));
    }
}
