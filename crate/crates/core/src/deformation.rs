//! Time-conditioned deformation field.
//!
//! An MLP maps Fourier-encoded `(x, t)` to offsets `(δx, δr, δs)` that are
//! added to a Gaussian's position, unnormalized quaternion and log-scale.
//! Gradients are hand-derived; [`DeformationField::backward`] accumulates
//! parameter gradients and returns the gradient with respect to `x`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DMatrixView, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{shape_err, Result};
use crate::scene::GaussianSet;

/// Number of output values: δx (3) + δr (4) + δs (3).
pub const OUTPUT_DIM: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FourierEncodingConfig {
    pub bands_position: usize,
    pub bands_time: usize,
    pub include_input: bool,
}

impl Default for FourierEncodingConfig {
    fn default() -> Self {
        Self {
            bands_position: 10,
            bands_time: 6,
            include_input: true,
        }
    }
}

impl FourierEncodingConfig {
    pub fn encoded_len(dim: usize, bands: usize, include_input: bool) -> usize {
        dim * (2 * bands + usize::from(include_input))
    }

    /// Length of `concat(γ(x), γ(t))`.
    pub fn input_len(&self) -> usize {
        Self::encoded_len(3, self.bands_position, self.include_input)
            + Self::encoded_len(1, self.bands_time, self.include_input)
    }
}

/// `[v?, sin(2⁰πv), cos(2⁰πv), …, sin(2^{L-1}πv), cos(2^{L-1}πv)]`, each
/// block spanning every input dimension.
pub fn fourier_encode(v: &[f64], bands: usize, include_input: bool) -> Vec<f64> {
    let mut out = Vec::with_capacity(FourierEncodingConfig::encoded_len(
        v.len(),
        bands,
        include_input,
    ));
    encode_into(v, bands, include_input, &mut out);
    out
}

fn encode_into(v: &[f64], bands: usize, include_input: bool, out: &mut Vec<f64>) {
    if include_input {
        out.extend_from_slice(v);
    }
    let mut freq = PI;
    for _ in 0..bands {
        out.extend(v.iter().map(|x| (freq * x).sin()));
        out.extend(v.iter().map(|x| (freq * x).cos()));
        freq *= 2.0;
    }
}

/// Chain `∂L/∂x` from the gradient of the position part of the encoding.
fn encode_position_backward(
    x: &Vector3<f64>,
    cfg: &FourierEncodingConfig,
    grad_enc: &[f64],
) -> Vector3<f64> {
    let mut g = Vector3::zeros();
    let mut k = 0;
    if cfg.include_input {
        for a in 0..3 {
            g[a] += grad_enc[a];
        }
        k = 3;
    }
    let mut freq = PI;
    for _ in 0..cfg.bands_position {
        for a in 0..3 {
            g[a] += grad_enc[k + a] * freq * (freq * x[a]).cos();
            g[a] -= grad_enc[k + 3 + a] * freq * (freq * x[a]).sin();
        }
        k += 6;
        freq *= 2.0;
    }
    g
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct LinearLayout {
    inputs: usize,
    outputs: usize,
    weight_offset: usize,
    bias_offset: usize,
}

/// Offsets produced for one Gaussian.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Deformation {
    pub dx: [f64; 3],
    pub dr: [f64; 4],
    pub ds: [f64; 3],
}

impl Deformation {
    fn from_slice(out: &[f64]) -> Self {
        Self {
            dx: [out[0], out[1], out[2]],
            dr: [out[3], out[4], out[5], out[6]],
            ds: [out[7], out[8], out[9]],
        }
    }
}

/// ReLU MLP with three linear heads. Weights are row-major `outputs × inputs`;
/// all parameters live in one flat vector, layer-major (hidden layers, then
/// the δx, δr and δs heads), each layer as weights followed by bias.
#[derive(Debug, Clone, PartialEq)]
pub struct DeformationField {
    encoding: FourierEncodingConfig,
    depth: usize,
    width: usize,
    layers: Vec<LinearLayout>,
    params: Vec<f64>,
}

impl DeformationField {
    /// Zero-parameter field of the given architecture.
    pub fn zeros(encoding: FourierEncodingConfig, depth: usize, width: usize) -> Result<Self> {
        if depth == 0 || width == 0 {
            return Err(shape_err("deformation MLP needs depth ≥ 1 and width ≥ 1"));
        }
        let mut layers = Vec::with_capacity(depth + 3);
        let mut offset = 0;
        let mut push = |inputs: usize, outputs: usize| {
            layers.push(LinearLayout {
                inputs,
                outputs,
                weight_offset: offset,
                bias_offset: offset + inputs * outputs,
            });
            offset += inputs * outputs + outputs;
        };
        push(encoding.input_len(), width);
        for _ in 1..depth {
            push(width, width);
        }
        for out in [3, 4, 3] {
            push(width, out);
        }
        Ok(Self {
            encoding,
            depth,
            width,
            layers,
            params: vec![0.0; offset],
        })
    }

    /// He-uniform hidden weights, zero biases and zero heads: the field
    /// starts as the identity deformation.
    pub fn new(
        encoding: FourierEncodingConfig,
        depth: usize,
        width: usize,
        seed: u64,
    ) -> Result<Self> {
        let mut field = Self::zeros(encoding, depth, width)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for l in 0..depth {
            let layer = field.layers[l];
            let bound = (6.0 / layer.inputs as f64).sqrt();
            for w in &mut field.params[layer.weight_offset..layer.bias_offset] {
                *w = rng.random_range(-bound..bound);
            }
        }
        Ok(field)
    }

    /// Gives the output heads small random weights so gradients reach every
    /// layer (used by gradient checks and tests).
    pub fn randomize_heads(&mut self, std: f64, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, std).expect("valid std");
        let start = self.layers[self.depth].weight_offset;
        for p in &mut self.params[start..] {
            *p = normal.sample(&mut rng);
        }
    }

    /// Sets the δx head to emit the constant `dx` for every input.
    pub fn set_constant_translation(&mut self, dx: [f64; 3]) {
        let head = self.layers[self.depth];
        self.params[head.weight_offset..head.bias_offset].fill(0.0);
        self.params[head.bias_offset..head.bias_offset + 3].copy_from_slice(&dx);
    }

    pub fn encoding(&self) -> FourierEncodingConfig {
        self.encoding
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Replaces all parameters; the length must match the architecture.
    pub fn set_params(&mut self, params: Vec<f64>) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(shape_err(format!(
                "deformation parameters: length {}, expected {}",
                params.len(),
                self.params.len()
            )));
        }
        self.params = params;
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    fn encode(&self, x: &Vector3<f64>, t: f64) -> Vec<f64> {
        let mut input = Vec::with_capacity(self.encoding.input_len());
        encode_into(
            x.as_slice(),
            self.encoding.bands_position,
            self.encoding.include_input,
            &mut input,
        );
        encode_into(
            &[t],
            self.encoding.bands_time,
            self.encoding.include_input,
            &mut input,
        );
        input
    }

    fn linear(&self, layer: &LinearLayout, input: &[f64], out: &mut Vec<f64>) {
        out.clear();
        let w = &self.params[layer.weight_offset..layer.bias_offset];
        let b = &self.params[layer.bias_offset..layer.bias_offset + layer.outputs];
        for o in 0..layer.outputs {
            let row = &w[o * layer.inputs..(o + 1) * layer.inputs];
            let dot: f64 = row.iter().zip(input).map(|(a, b)| a * b).sum();
            out.push(dot + b[o]);
        }
    }

    /// Forward pass keeping post-activation values of every hidden layer.
    fn forward_cached(&self, x: &Vector3<f64>, t: f64) -> (Vec<Vec<f64>>, [f64; OUTPUT_DIM]) {
        let mut acts = Vec::with_capacity(self.depth + 1);
        acts.push(self.encode(x, t));
        for l in 0..self.depth {
            let mut h = Vec::with_capacity(self.width);
            self.linear(&self.layers[l], &acts[l], &mut h);
            h.iter_mut().for_each(|v| *v = v.max(0.0));
            acts.push(h);
        }
        let last = &acts[self.depth];
        let mut out = [0.0; OUTPUT_DIM];
        let mut buf = Vec::with_capacity(4);
        let mut k = 0;
        for head in &self.layers[self.depth..] {
            self.linear(head, last, &mut buf);
            out[k..k + head.outputs].copy_from_slice(&buf);
            k += head.outputs;
        }
        (acts, out)
    }

    /// `(δx, δr, δs) = D(γ(x), γ(t))`.
    pub fn deform(&self, x: &Vector3<f64>, t: f64) -> Deformation {
        Deformation::from_slice(&self.forward_cached(x, t).1)
    }

    /// Backpropagates `grad_out = ∂L/∂(δx, δr, δs)` for input `(x, t)`,
    /// adding parameter gradients into `grad_params` and returning `∂L/∂x`.
    pub fn backward(
        &self,
        x: &Vector3<f64>,
        t: f64,
        grad_out: &[f64; OUTPUT_DIM],
        grad_params: &mut [f64],
    ) -> Vector3<f64> {
        debug_assert_eq!(grad_params.len(), self.params.len());
        let (acts, _) = self.forward_cached(x, t);
        let mut grad_h = vec![0.0; self.width];
        let last = &acts[self.depth];
        let mut k = 0;
        for head in &self.layers[self.depth..] {
            for o in 0..head.outputs {
                let g = grad_out[k + o];
                if g == 0.0 {
                    continue;
                }
                grad_params[head.bias_offset + o] += g;
                let wrow = head.weight_offset + o * head.inputs;
                for i in 0..head.inputs {
                    grad_params[wrow + i] += g * last[i];
                    grad_h[i] += g * self.params[wrow + i];
                }
            }
            k += head.outputs;
        }
        for l in (0..self.depth).rev() {
            let layer = self.layers[l];
            let output = &acts[l + 1];
            let input = &acts[l];
            let mut grad_in = vec![0.0; layer.inputs];
            for o in 0..layer.outputs {
                // ReLU: the post-activation is zero exactly where the unit is inactive.
                if output[o] <= 0.0 {
                    continue;
                }
                let g = grad_h[o];
                if g == 0.0 {
                    continue;
                }
                grad_params[layer.bias_offset + o] += g;
                let wrow = layer.weight_offset + o * layer.inputs;
                for i in 0..layer.inputs {
                    grad_params[wrow + i] += g * input[i];
                    grad_in[i] += g * self.params[wrow + i];
                }
            }
            grad_h = grad_in;
        }
        encode_position_backward(x, &self.encoding, &grad_h)
    }

    /// `Wᵀ` of a layer as an `inputs × outputs` view.
    fn weights_t(&self, layer: &LinearLayout) -> DMatrixView<'_, f64> {
        DMatrixView::from_slice(
            &self.params[layer.weight_offset..layer.bias_offset],
            layer.inputs,
            layer.outputs,
        )
    }

    fn linear_batch(&self, layer: &LinearLayout, input: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = input * self.weights_t(layer);
        let b = &self.params[layer.bias_offset..layer.bias_offset + layer.outputs];
        for (mut col, bias) in out.column_iter_mut().zip(b) {
            col.add_scalar_mut(*bias);
        }
        out
    }

    /// Forward pass over many positions at once, one row per position.
    /// Returns the encoded input and every hidden activation, then the
    /// `n × 10` output.
    fn forward_batch(&self, xs: &[Vector3<f64>], t: f64) -> (Vec<DMatrix<f64>>, DMatrix<f64>) {
        let n = xs.len();
        let mut time = Vec::with_capacity(FourierEncodingConfig::encoded_len(
            1,
            self.encoding.bands_time,
            true,
        ));
        encode_into(
            &[t],
            self.encoding.bands_time,
            self.encoding.include_input,
            &mut time,
        );
        let len = self.encoding.input_len();
        let mut row = Vec::with_capacity(len);
        let mut input = DMatrix::zeros(n, len);
        for (i, x) in xs.iter().enumerate() {
            row.clear();
            encode_into(
                x.as_slice(),
                self.encoding.bands_position,
                self.encoding.include_input,
                &mut row,
            );
            row.extend_from_slice(&time);
            for (j, v) in row.iter().enumerate() {
                input[(i, j)] = *v;
            }
        }
        let mut acts = Vec::with_capacity(self.depth + 1);
        acts.push(input);
        for l in 0..self.depth {
            let mut h = self.linear_batch(&self.layers[l], &acts[l]);
            h.apply(|v| *v = v.max(0.0));
            acts.push(h);
        }
        let mut out = DMatrix::zeros(n, OUTPUT_DIM);
        let mut k = 0;
        for head in &self.layers[self.depth..] {
            out.columns_mut(k, head.outputs)
                .copy_from(&self.linear_batch(head, &acts[self.depth]));
            k += head.outputs;
        }
        (acts, out)
    }

    /// Batched [`DeformationField::backward`]: `grad_out` holds one row of
    /// output gradients per position. Returns `∂L/∂x` per position.
    fn backward_batch(
        &self,
        xs: &[Vector3<f64>],
        t: f64,
        grad_out: &DMatrix<f64>,
        grad_params: &mut [f64],
    ) -> Vec<Vector3<f64>> {
        let (acts, _) = self.forward_batch(xs, t);
        let accumulate = |grad_params: &mut [f64],
                          layer: &LinearLayout,
                          input: &DMatrix<f64>,
                          g: &DMatrix<f64>| {
            let gw = input.tr_mul(g);
            for (p, v) in grad_params[layer.weight_offset..layer.bias_offset]
                .iter_mut()
                .zip(gw.iter())
            {
                *p += v;
            }
            for (o, col) in g.column_iter().enumerate() {
                grad_params[layer.bias_offset + o] += col.sum();
            }
        };
        let last = &acts[self.depth];
        let mut grad_h = DMatrix::zeros(xs.len(), self.width);
        let mut k = 0;
        for head in &self.layers[self.depth..] {
            let g = grad_out.columns(k, head.outputs).into_owned();
            accumulate(grad_params, head, last, &g);
            grad_h += &g * self.weights_t(head).transpose();
            k += head.outputs;
        }
        for l in (0..self.depth).rev() {
            let layer = self.layers[l];
            grad_h.zip_apply(&acts[l + 1], |g, a| {
                if a <= 0.0 {
                    *g = 0.0;
                }
            });
            accumulate(grad_params, &layer, &acts[l], &grad_h);
            grad_h = &grad_h * self.weights_t(&layer).transpose();
        }
        let mut row = vec![0.0; grad_h.ncols()];
        xs.iter()
            .enumerate()
            .map(|(i, x)| {
                for (j, v) in row.iter_mut().enumerate() {
                    *v = grad_h[(i, j)];
                }
                encode_position_backward(x, &self.encoding, &row)
            })
            .collect()
    }
}

/// Gaussians per work chunk when evaluating the field over a whole set;
/// chunk partial sums are reduced in index order so results do not depend
/// on the thread count.
const CHUNK: usize = 256;

fn chunk_size(n: usize) -> usize {
    CHUNK.max(n.div_ceil(64))
}

/// Per-Gaussian offsets for the whole set at time `t`.
pub fn deform_all(gaussians: &GaussianSet, field: &DeformationField, t: f64) -> Vec<Deformation> {
    let xs: Vec<Vector3<f64>> = (0..gaussians.len())
        .map(|i| gaussians.position(i))
        .collect();
    xs.par_chunks(chunk_size(xs.len()))
        .flat_map_iter(|chunk| {
            let out = field.forward_batch(chunk, t).1;
            (0..chunk.len())
                .map(|i| {
                    let row: Vec<f64> = out.row(i).iter().copied().collect();
                    Deformation::from_slice(&row)
                })
                .collect::<Vec<_>>()
        })
        .collect()
}

/// Adds precomputed offsets to a copy of `gaussians`.
pub fn apply_offsets(gaussians: &GaussianSet, offsets: &[Deformation]) -> Result<GaussianSet> {
    if offsets.len() != gaussians.len() {
        return Err(shape_err(format!(
            "{} offsets for {} Gaussians",
            offsets.len(),
            gaussians.len()
        )));
    }
    let mut out = gaussians.clone();
    for (i, d) in offsets.iter().enumerate() {
        for a in 0..3 {
            out.positions[3 * i + a] += d.dx[a];
            out.log_scales[3 * i + a] += d.ds[a];
        }
        for a in 0..4 {
            out.rotations[4 * i + a] += d.dr[a];
        }
    }
    Ok(out)
}

/// Deformed copy of `gaussians` at time `t`: `x + δx`, `r + δr`, `s + δs`;
/// opacity, color and features are carried over unchanged.
pub fn apply_deformation(
    gaussians: &GaussianSet,
    field: &DeformationField,
    t: f64,
) -> Result<GaussianSet> {
    apply_offsets(gaussians, &deform_all(gaussians, field, t))
}

/// Gradients flowing back through [`apply_deformation`].
#[derive(Debug, Clone, PartialEq)]
pub struct DeformationBackward {
    /// Extra `∂L/∂x` on canonical positions from the field's dependence on `x`
    /// (to be added to the pass-through gradient).
    pub position_grads: Vec<f64>,
    /// `∂L/∂θ` for every field parameter.
    pub param_grads: Vec<f64>,
}

/// Backpropagates gradients on the deformed positions, rotations and
/// log-scales (flat, `3N`, `4N`, `3N`) through the field at time `t`.
pub fn deformation_backward(
    gaussians: &GaussianSet,
    field: &DeformationField,
    t: f64,
    grad_positions: &[f64],
    grad_rotations: &[f64],
    grad_log_scales: &[f64],
) -> DeformationBackward {
    let n = gaussians.len();
    let np = field.num_params();
    let xs: Vec<Vector3<f64>> = (0..n).map(|i| gaussians.position(i)).collect();
    let partials: Vec<(Vec<f64>, Vec<f64>)> = xs
        .par_chunks(chunk_size(n))
        .enumerate()
        .map(|(c, chunk)| {
            let start = c * chunk_size(n);
            let mut g = DMatrix::zeros(chunk.len(), OUTPUT_DIM);
            for r in 0..chunk.len() {
                let i = start + r;
                for a in 0..3 {
                    g[(r, a)] = grad_positions[3 * i + a];
                    g[(r, 7 + a)] = grad_log_scales[3 * i + a];
                }
                for a in 0..4 {
                    g[(r, 3 + a)] = grad_rotations[4 * i + a];
                }
            }
            let mut params = vec![0.0; np];
            let gx = field.backward_batch(chunk, t, &g, &mut params);
            (params, gx.iter().flat_map(|v| [v.x, v.y, v.z]).collect())
        })
        .collect();
    let mut param_grads = vec![0.0; np];
    let mut position_grads = Vec::with_capacity(3 * n);
    for (params, pos) in partials {
        param_grads
            .iter_mut()
            .zip(&params)
            .for_each(|(a, b)| *a += b);
        position_grads.extend(pos);
    }
    DeformationBackward {
        position_grads,
        param_grads,
    }
}

/// Annealed time-jitter schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AstConfig {
    /// Initial noise standard deviation as a fraction of the `[0, 1]` time range.
    pub noise_scale_initial: f64,
    pub anneal_end_iteration: usize,
}

impl Default for AstConfig {
    fn default() -> Self {
        Self {
            noise_scale_initial: 0.1,
            anneal_end_iteration: 20_000,
        }
    }
}

impl AstConfig {
    pub fn noise_scale(&self, iteration: usize) -> f64 {
        let frac = iteration as f64 / self.anneal_end_iteration.max(1) as f64;
        self.noise_scale_initial * (1.0 - frac).max(0.0)
    }
}

/// `t + ε`, `ε ~ N(0, noise_scale(iteration)²)`, clamped to `[0, 1]`.
/// Returns `t` untouched (and draws nothing) once the noise has annealed away.
pub fn ast_time<R: Rng + ?Sized>(t: f64, iteration: usize, cfg: &AstConfig, rng: &mut R) -> f64 {
    let std = cfg.noise_scale(iteration);
    if std <= 0.0 {
        return t;
    }
    let eps: f64 = rng.sample(rand_distr::StandardNormal);
    (t + std * eps).clamp(0.0, 1.0)
}
