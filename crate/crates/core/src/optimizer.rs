//! Adam with per-group learning rates and exponential learning-rate decay.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::scene::{GaussianGrads, GaussianSet};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-15;

/// Moment accumulators for one flat parameter array.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// Rebuild the accumulators for a resized array of `stride`-wide rows.
    /// Row `j` of the result takes the moments of old row `sources[j]`, or
    /// zeros for `None`.
    pub fn remap(&mut self, stride: usize, sources: &[Option<usize>]) {
        let pick = |old: &[f64]| {
            let mut out = vec![0.0; stride * sources.len()];
            for (j, src) in sources.iter().enumerate() {
                if let Some(i) = src {
                    out[stride * j..stride * (j + 1)]
                        .copy_from_slice(&old[stride * i..stride * (i + 1)]);
                }
            }
            out
        };
        self.m = pick(&self.m);
        self.v = pick(&self.v);
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(state: &mut AdamState, params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.len() {
        return Err(shape_err(format!(
            "adam: {} params, {} grads, state of {}",
            params.len(),
            grads.len(),
            state.len()
        )));
    }
    state.step += 1;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let c1 = 1.0 - b1.powi(state.step as i32);
    let c2 = 1.0 - b2.powi(state.step as i32);
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(&mut state.m)
        .zip(&mut state.v)
    {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub lr_start: f64,
    pub lr_end: f64,
    pub total_steps: u64,
}

impl LrSchedule {
    pub fn new(lr_start: f64, lr_end: f64, total_steps: u64) -> Result<Self> {
        if !(lr_start > 0.0 && lr_end > 0.0 && total_steps >= 1) {
            return Err(Error::InvalidArgument(format!(
                "learning-rate schedule needs positive endpoints and total_steps >= 1, got {lr_start} -> {lr_end} over {total_steps}"
            )));
        }
        Ok(Self {
            lr_start,
            lr_end,
            total_steps,
        })
    }

    /// Default schedule for the deformation network.
    pub fn deformation(total_steps: u64) -> Self {
        Self {
            lr_start: 8e-4,
            lr_end: 1.6e-6,
            total_steps: total_steps.max(1),
        }
    }

    pub fn constant(lr: f64) -> Self {
        Self {
            lr_start: lr,
            lr_end: lr,
            total_steps: 1,
        }
    }
}

/// Log-linear interpolation between the endpoints, held at `lr_end` after
/// `total_steps`.
pub fn exp_lr(schedule: &LrSchedule, step: u64) -> f64 {
    let total = schedule.total_steps.max(1);
    if step == 0 {
        return schedule.lr_start;
    }
    if step >= total {
        return schedule.lr_end;
    }
    let frac = step as f64 / total as f64;
    (schedule.lr_start.ln() * (1.0 - frac) + schedule.lr_end.ln() * frac).exp()
}

/// Learning rates for the six Gaussian parameter groups.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianLr {
    pub positions: LrSchedule,
    pub rotations: f64,
    pub scales: f64,
    pub opacities: f64,
    pub colors: f64,
    pub features: f64,
}

impl GaussianLr {
    pub fn with_total_steps(total_steps: u64) -> Self {
        Self {
            positions: LrSchedule {
                lr_start: 1.6e-4,
                lr_end: 1.6e-6,
                total_steps: total_steps.max(1),
            },
            rotations: 1e-3,
            scales: 5e-3,
            opacities: 5e-2,
            colors: 2.5e-3,
            features: 2.5e-3,
        }
    }

    /// Group rates at `step`, in [`GaussianGrads::groups`] order.
    pub fn at(&self, step: u64) -> [f64; 6] {
        [
            exp_lr(&self.positions, step),
            self.rotations,
            self.scales,
            self.opacities,
            self.colors,
            self.features,
        ]
    }
}

impl Default for GaussianLr {
    fn default() -> Self {
        Self::with_total_steps(30_000)
    }
}

/// Adam state for every Gaussian parameter group.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianOptimizer {
    pub states: [AdamState; 6],
    pub lr: GaussianLr,
}

impl GaussianOptimizer {
    pub fn new(gaussians: &GaussianSet, lr: GaussianLr) -> Self {
        let n = gaussians.len();
        let c = gaussians.feature_dim();
        Self {
            states: [3, 4, 3, 1, 3, c].map(|w| AdamState::new(w * n)),
            lr,
        }
    }

    pub fn step(
        &mut self,
        gaussians: &mut GaussianSet,
        grads: &GaussianGrads,
        iteration: u64,
    ) -> Result<()> {
        let rates = self.lr.at(iteration);
        for (((state, params), g), lr) in self
            .states
            .iter_mut()
            .zip(gaussians.param_slices_mut())
            .zip(grads.groups())
            .zip(rates)
        {
            adam_step(state, params, g, lr)?;
        }
        Ok(())
    }

    /// Follow a densify/prune: Gaussian `j` of the new set inherits the
    /// moments of old Gaussian `sources[j]`, new ones start at zero.
    pub fn remap(&mut self, sources: &[Option<usize>], feature_dim: usize) {
        for (state, w) in self.states.iter_mut().zip([3, 4, 3, 1, 3, feature_dim]) {
            state.remap(w, sources);
        }
    }
}
