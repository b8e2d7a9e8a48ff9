//! The Euler-angle flow: coupling layers over the 3-torus.
//!
//! Layer `i` transforms angle `i mod 3` (omega, phi, kappa, omega, ...). Its
//! conditioner reads `[cos a, sin a, cos b, sin b]` of the two untouched angles,
//! followed by the raw context vector, and outputs the `3K` raw parameters of a
//! Möbius combination (see [`crate::neural::ParamConstraint`]).
//!
//! The normalizing direction (data to base) is the analytic forward map and is
//! what training differentiates. Sampling runs the layers backwards with the
//! bisection inverse.
//!
//! Densities are reported in one of two modes:
//!
//! * [`DensityMode::Torus`]: the model's native density with respect to
//!   `d omega d phi d kappa`. An untrained model gives `-3 ln(2 pi)` everywhere.
//! * [`DensityMode::Haar`]: density on SO(3) relative to the normalised Haar
//!   measure. The Haar measure pulls back to `|cos phi| / (16 pi^2)` on the torus
//!   and each rotation has two Euler preimages `e` and `e'`, so
//!   `p_haar(R) = (p(e) + p(e')) * 8 pi^2 / |cos phi|`. At gimbal lock the factor
//!   diverges; `|cos phi|` is floored at [`GIMBAL_COS_EPS`] there.

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mobius::{CombinationRef, MobiusCombination};
use crate::neural::{net_forward, Activation, ConditionerNet, ForwardCache, ParamConstraint};
use crate::rotation::{
    euler_to_rotmat, rotmat_to_euler, rotmat_to_euler_unchecked, wrap_angle, AngleIndex,
    EulerAngles, RotationMatrix, GIMBAL_COS_EPS,
};

/// Bisection tolerance used when inverting layers for sampling.
pub const SAMPLING_EPS: f64 = 1e-9;

/// Rows per unit of work in batched evaluation. Gradient sums are reduced in
/// chunk order, so results do not depend on the number of worker threads.
const CHUNK_ROWS: usize = 64;

/// `ln(8 pi^2)`, the log-volume of SO(3) under the rotation-angle metric.
pub fn ln_so3_volume() -> f64 {
    (8.0 * PI * PI).ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseDistribution {
    UniformTorus,
}

impl BaseDistribution {
    pub fn log_density(&self) -> f64 {
        match self {
            BaseDistribution::UniformTorus => -3.0 * TAU.ln(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> EulerAngles {
        match self {
            BaseDistribution::UniformTorus => EulerAngles::new(
                rng.random::<f64>() * TAU,
                rng.random::<f64>() * TAU,
                rng.random::<f64>() * TAU,
            ),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DensityMode {
    #[default]
    Torus,
    Haar,
}

impl fmt::Display for DensityMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DensityMode::Torus => "torus",
            DensityMode::Haar => "haar",
        })
    }
}

impl FromStr for DensityMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "torus" => Ok(DensityMode::Torus),
            "haar" => Ok(DensityMode::Haar),
            other => Err(Error::InvalidConfig(format!("unknown density mode `{other}`"))),
        }
    }
}

/// Architecture of a [`FlowModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    pub layers: usize,
    pub kernels: usize,
    pub hidden: Vec<usize>,
    pub context_width: usize,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig { layers: 24, kernels: 64, hidden: vec![64, 64], context_width: 0 }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 {
            return Err(Error::InvalidConfig("layer count must be positive".into()));
        }
        if self.kernels == 0 {
            return Err(Error::InvalidConfig("kernel count must be positive".into()));
        }
        if self.hidden.contains(&0) {
            return Err(Error::InvalidConfig("hidden widths must be positive".into()));
        }
        Ok(())
    }
}

/// One coupling step: a single angle moved by a Möbius combination conditioned on
/// the other two.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingLayer {
    transformed: AngleIndex,
    kernels: usize,
    conditioner: ConditionerNet,
}

impl CouplingLayer {
    pub fn new<R: Rng + ?Sized>(
        transformed: AngleIndex,
        kernels: usize,
        hidden: &[usize],
        context_width: usize,
        rng: &mut R,
    ) -> Self {
        let conditioner =
            ConditionerNet::new(4 + context_width, hidden, 3 * kernels, Activation::Tanh, rng);
        CouplingLayer { transformed, kernels, conditioner }
    }

    pub fn transformed(&self) -> AngleIndex {
        self.transformed
    }

    pub fn kernels(&self) -> usize {
        self.kernels
    }

    pub fn conditioner(&self) -> &ConditionerNet {
        &self.conditioner
    }

    pub fn conditioner_mut(&mut self) -> &mut ConditionerNet {
        &mut self.conditioner
    }

    pub fn context_width(&self) -> usize {
        self.conditioner.input_width() - 4
    }

    #[inline]
    fn write_features(&self, angles: &[f64; 3], ctx: &[f64], out: &mut [f64]) {
        let (a, b) = self.transformed.others();
        let (sa, ca) = angles[a.index()].sin_cos();
        let (sb, cb) = angles[b.index()].sin_cos();
        out[0] = ca;
        out[1] = sa;
        out[2] = cb;
        out[3] = sb;
        out[4..].copy_from_slice(ctx);
    }

    /// Conditioner input for one point.
    pub fn features(&self, e: &EulerAngles, ctx: &[f64]) -> Result<Vec<f64>> {
        check_context(ctx.len(), self.context_width())?;
        let mut out = vec![0.0; 4 + ctx.len()];
        self.write_features(&e.to_array(), ctx, &mut out);
        Ok(out)
    }

    /// The circle map this layer applies at `e`.
    pub fn combination(&self, e: &EulerAngles, ctx: &[f64]) -> Result<MobiusCombination> {
        net_forward(&self.conditioner, &self.features(e, ctx)?)
    }

    /// Normalizing direction; returns the new point and `log |d theta' / d theta|`.
    pub fn forward(&self, e: &EulerAngles, ctx: &[f64]) -> Result<(EulerAngles, f64)> {
        let raw = self.conditioner.forward(&self.features(e, ctx)?)?;
        let (mut w, mut k) = (vec![0.0; self.kernels], vec![0.0; 2 * self.kernels]);
        ParamConstraint::apply(&raw, &mut w, &mut k);
        let (y, d) = CombinationRef { weights: &w, kernels: &k }.eval(e.get(self.transformed));
        Ok((e.with(self.transformed, y), d.ln()))
    }

    pub fn inverse(&self, e: &EulerAngles, ctx: &[f64]) -> Result<EulerAngles> {
        let raw = self.conditioner.forward(&self.features(e, ctx)?)?;
        let (mut w, mut k) = (vec![0.0; self.kernels], vec![0.0; 2 * self.kernels]);
        ParamConstraint::apply(&raw, &mut w, &mut k);
        let (x, _) = CombinationRef { weights: &w, kernels: &k }
            .inverse(e.get(self.transformed), SAMPLING_EPS)?;
        Ok(e.with(self.transformed, x))
    }

    fn feature_matrix(&self, angles: &[[f64; 3]], ctx: &Contexts<'_>) -> Array2<f64> {
        let width = 4 + ctx.width;
        let mut feats = Array2::zeros((angles.len(), width));
        let data = feats.as_slice_mut().expect("fresh arrays are contiguous");
        for (row, (a, out)) in angles.iter().zip(data.chunks_exact_mut(width)).enumerate() {
            self.write_features(a, ctx.row(row), out);
        }
        feats
    }
}

fn check_context(got: usize, width: usize) -> Result<()> {
    if got != width {
        return Err(Error::ShapeMismatch { expected: width, got });
    }
    Ok(())
}

/// Context vectors for a batch: none, one shared row, or one row per point.
#[derive(Debug, Clone, Copy)]
struct Contexts<'a> {
    data: &'a [f64],
    width: usize,
    shared: bool,
}

impl<'a> Contexts<'a> {
    fn new(data: &'a [f64], width: usize, rows: usize) -> Result<Self> {
        if width == 0 {
            check_context(data.len(), 0)?;
            return Ok(Contexts { data, width, shared: true });
        }
        if data.len() == width {
            Ok(Contexts { data, width, shared: true })
        } else if data.len() == width * rows {
            Ok(Contexts { data, width, shared: false })
        } else {
            Err(Error::ShapeMismatch { expected: width * rows, got: data.len() })
        }
    }

    #[inline]
    fn row(&self, i: usize) -> &'a [f64] {
        if self.shared {
            self.data
        } else {
            &self.data[i * self.width..(i + 1) * self.width]
        }
    }

    fn slice(&self, start: usize, end: usize) -> Contexts<'a> {
        if self.shared {
            *self
        } else {
            Contexts { data: &self.data[start * self.width..end * self.width], ..*self }
        }
    }
}

/// Mean negative log-likelihood and its gradient.
#[derive(Debug, Clone)]
pub struct LossAndGrad {
    pub loss: f64,
    pub grad: Vec<f64>,
    /// Index (within the batch) of the first point whose log-density is not finite.
    pub first_non_finite: Option<usize>,
}

/// Layer stack plus base distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowModel {
    layers: Vec<CouplingLayer>,
    base: BaseDistribution,
    context_width: usize,
    kernels: usize,
    hidden: Vec<usize>,
}

/// Intermediate values of one layer kept for the backward pass.
struct LayerTape {
    inputs: Vec<[f64; 3]>,
    features: Array2<f64>,
    cache: ForwardCache,
    weights: Vec<f64>,
    kernels: Vec<f64>,
}

impl FlowModel {
    /// Identity-initialised model: every conditioner outputs zeros, so every layer
    /// is the identity map.
    pub fn new<R: Rng + ?Sized>(config: &FlowConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let layers = (0..config.layers)
            .map(|i| {
                CouplingLayer::new(
                    AngleIndex::from_index(i),
                    config.kernels,
                    &config.hidden,
                    config.context_width,
                    rng,
                )
            })
            .collect();
        Ok(FlowModel {
            layers,
            base: BaseDistribution::UniformTorus,
            context_width: config.context_width,
            kernels: config.kernels,
            hidden: config.hidden.clone(),
        })
    }

    pub fn config(&self) -> FlowConfig {
        FlowConfig {
            layers: self.layers.len(),
            kernels: self.kernels,
            hidden: self.hidden.clone(),
            context_width: self.context_width,
        }
    }

    pub fn layers(&self) -> &[CouplingLayer] {
        &self.layers
    }

    pub fn base(&self) -> BaseDistribution {
        self.base
    }

    pub fn context_width(&self) -> usize {
        self.context_width
    }

    pub fn is_conditional(&self) -> bool {
        self.context_width > 0
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.conditioner.num_params()).sum()
    }

    /// All conditioner parameters, layer by layer.
    pub fn params(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.num_params()];
        let mut at = 0;
        for l in &self.layers {
            at += l.conditioner.write_params(&mut out[at..]);
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::ShapeMismatch { expected: self.num_params(), got: params.len() });
        }
        let mut at = 0;
        for l in &mut self.layers {
            at += l.conditioner.read_params(&params[at..]);
        }
        Ok(())
    }

    /// Fills every output layer with Gaussian noise, making each layer a
    /// non-trivial map. Used for tests and checks of the untrained machinery.
    pub fn randomize<R: Rng + ?Sized>(&mut self, scale: f64, rng: &mut R) {
        for l in &mut self.layers {
            l.conditioner.randomize_output(scale, rng);
        }
    }

    /// Data to base: returns the base point and the summed log-Jacobian.
    pub fn forward(&self, e: &EulerAngles, ctx: &[f64]) -> Result<(EulerAngles, f64)> {
        check_context(ctx.len(), self.context_width)?;
        let mut x = *e;
        let mut total = 0.0;
        for layer in &self.layers {
            let (y, ld) = layer.forward(&x, ctx)?;
            x = y;
            total += ld;
        }
        Ok((x, total))
    }

    /// Base to data.
    pub fn inverse(&self, z: &EulerAngles, ctx: &[f64]) -> Result<EulerAngles> {
        check_context(ctx.len(), self.context_width)?;
        let mut x = *z;
        for layer in self.layers.iter().rev() {
            x = layer.inverse(&x, ctx)?;
        }
        Ok(x)
    }

    /// Torus log-density at one point.
    pub fn log_prob_euler(&self, e: &EulerAngles, ctx: &[f64]) -> Result<f64> {
        let (_, ld) = self.forward(e, ctx)?;
        Ok(self.base.log_density() + ld)
    }

    /// Log-density of a rotation in the requested reporting mode.
    pub fn log_prob(&self, r: &RotationMatrix, ctx: &[f64], mode: DensityMode) -> Result<f64> {
        let e = rotmat_to_euler(r)?;
        match mode {
            DensityMode::Torus => self.log_prob_euler(&e, ctx),
            DensityMode::Haar => {
                let a = self.log_prob_euler(&e, ctx)?;
                let b = self.log_prob_euler(&e.alternate(), ctx)?;
                Ok(haar_from_torus(a, b, e.phi))
            }
        }
    }

    /// Torus log-densities for a batch. `ctx` is empty, one shared context row, or
    /// one row per point.
    pub fn log_prob_batch(&self, angles: &[EulerAngles], ctx: &[f64]) -> Result<Vec<f64>> {
        let ctx = Contexts::new(ctx, self.context_width, angles.len())?;
        let pts: Vec<[f64; 3]> = angles.iter().map(|e| e.to_array()).collect();
        let chunks: Vec<Result<Vec<f64>>> = pts
            .par_chunks(CHUNK_ROWS)
            .enumerate()
            .map(|(i, chunk)| {
                let start = i * CHUNK_ROWS;
                self.log_prob_chunk(chunk, &ctx.slice(start, start + chunk.len()))
            })
            .collect();
        let mut out = Vec::with_capacity(angles.len());
        for c in chunks {
            out.extend(c?);
        }
        Ok(out)
    }

    /// Log-densities of rotations in the requested mode.
    pub fn log_prob_rotations(
        &self,
        rotations: &[RotationMatrix],
        ctx: &[f64],
        mode: DensityMode,
    ) -> Result<Vec<f64>> {
        let angles = rotations.iter().map(rotmat_to_euler).collect::<Result<Vec<_>>>()?;
        match mode {
            DensityMode::Torus => self.log_prob_batch(&angles, ctx),
            DensityMode::Haar => {
                let alternates: Vec<EulerAngles> = angles.iter().map(|e| e.alternate()).collect();
                let a = self.log_prob_batch(&angles, ctx)?;
                let b = self.log_prob_batch(&alternates, ctx)?;
                Ok(angles
                    .iter()
                    .zip(a.iter().zip(&b))
                    .map(|(e, (a, b))| haar_from_torus(*a, *b, e.phi))
                    .collect())
            }
        }
    }

    fn log_prob_chunk(&self, pts: &[[f64; 3]], ctx: &Contexts<'_>) -> Result<Vec<f64>> {
        let mut x = pts.to_vec();
        let mut logp = vec![self.base.log_density(); pts.len()];
        let k = self.kernels;
        let (mut w, mut kern) = (vec![0.0; k], vec![0.0; 2 * k]);
        for layer in &self.layers {
            let t = layer.transformed.index();
            let raw = layer.conditioner.predict(layer.feature_matrix(&x, ctx).view())?;
            for (row, point) in x.iter_mut().enumerate() {
                let raw_row = raw.row(row);
                ParamConstraint::apply(raw_row.as_slice().expect("row-major"), &mut w, &mut kern);
                let (y, d) = CombinationRef { weights: &w, kernels: &kern }.eval(point[t]);
                point[t] = wrap_angle(y);
                logp[row] += d.ln();
            }
        }
        Ok(logp)
    }

    /// Mean negative torus log-likelihood of a batch and its exact gradient with
    /// respect to [`Self::params`].
    pub fn nll_loss(&self, angles: &[EulerAngles], ctx: &[f64]) -> Result<LossAndGrad> {
        if angles.is_empty() {
            return Err(Error::InvalidParameter("nll_loss needs a non-empty batch".into()));
        }
        let ctx = Contexts::new(ctx, self.context_width, angles.len())?;
        let pts: Vec<[f64; 3]> = angles.iter().map(|e| e.to_array()).collect();
        let parts: Vec<Result<(Vec<f64>, Vec<f64>)>> = pts
            .par_chunks(CHUNK_ROWS)
            .enumerate()
            .map(|(i, chunk)| {
                let start = i * CHUNK_ROWS;
                self.loss_grad_chunk(chunk, &ctx.slice(start, start + chunk.len()))
            })
            .collect();
        let n = angles.len() as f64;
        let mut grad = vec![0.0; self.num_params()];
        let mut total = 0.0;
        let mut first_non_finite = None;
        let mut offset = 0;
        for part in parts {
            let (logp, g) = part?;
            if first_non_finite.is_none() {
                if let Some(j) = logp.iter().position(|v| !v.is_finite()) {
                    first_non_finite = Some(offset + j);
                }
            }
            offset += logp.len();
            total += logp.iter().sum::<f64>();
            for (a, b) in grad.iter_mut().zip(&g) {
                *a += b;
            }
        }
        for g in &mut grad {
            *g /= n;
        }
        Ok(LossAndGrad { loss: -total / n, grad, first_non_finite })
    }

    /// Per-point log-densities of a chunk and the summed gradient of `-sum(logp)`.
    fn loss_grad_chunk(&self, pts: &[[f64; 3]], ctx: &Contexts<'_>) -> Result<(Vec<f64>, Vec<f64>)> {
        let rows = pts.len();
        let k = self.kernels;
        let mut x = pts.to_vec();
        let mut logp = vec![self.base.log_density(); rows];
        let mut tapes = Vec::with_capacity(self.layers.len());

        for layer in &self.layers {
            let t = layer.transformed.index();
            let features = layer.feature_matrix(&x, ctx);
            let cache = layer.conditioner.forward_batch(features.view())?;
            let raw = cache.output();
            let mut weights = vec![0.0; rows * k];
            let mut kernels = vec![0.0; rows * 2 * k];
            let inputs = x.clone();
            for row in 0..rows {
                let w = &mut weights[row * k..(row + 1) * k];
                let kern = &mut kernels[row * 2 * k..(row + 1) * 2 * k];
                ParamConstraint::apply(raw.row(row).as_slice().expect("row-major"), w, kern);
                let (y, d) = CombinationRef { weights: w, kernels: kern }.eval(x[row][t]);
                x[row][t] = wrap_angle(y);
                logp[row] += d.ln();
            }
            tapes.push(LayerTape { inputs, features, cache, weights, kernels });
        }

        let mut grad = vec![0.0; self.num_params()];
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut at = 0;
        for l in &self.layers {
            offsets.push(at);
            at += l.conditioner.num_params();
        }

        // d(-sum logp) / d(angles after the current layer); the uniform base adds nothing
        let mut g_ang = vec![[0.0f64; 3]; rows];
        let (mut dw, mut dk) = (vec![0.0; k], vec![0.0; 2 * k]);
        for (li, (layer, tape)) in self.layers.iter().zip(&tapes).enumerate().rev() {
            let t = layer.transformed.index();
            let (a, b) = layer.transformed.others();
            let raw = tape.cache.output();
            let mut d_raw = Array2::<f64>::zeros((rows, 3 * k));
            for row in 0..rows {
                let w = &tape.weights[row * k..(row + 1) * k];
                let kern = &tape.kernels[row * 2 * k..(row + 1) * 2 * k];
                let d_theta = CombinationRef { weights: w, kernels: kern }.backward(
                    tape.inputs[row][t],
                    g_ang[row][t],
                    -1.0,
                    &mut dw,
                    &mut dk,
                );
                let mut d_raw_row = d_raw.row_mut(row);
                ParamConstraint::backward(
                    raw.row(row).as_slice().expect("row-major"),
                    w,
                    &dw,
                    &dk,
                    d_raw_row.as_slice_mut().expect("row-major"),
                );
                g_ang[row][t] = d_theta;
            }
            let (net_grads, d_feat) = layer.conditioner.backward(&tape.cache, d_raw.view())?;
            net_grads.write_flat(&mut grad[offsets[li]..]);
            accumulate_feature_grads(&mut g_ang, &tape.features.view(), &d_feat.view(), a, b);
        }
        Ok((logp, grad))
    }

    /// Draws torus points from the model by inverting the layers.
    pub fn sample_angles<R: Rng + ?Sized>(
        &self,
        n: usize,
        ctx: &[f64],
        rng: &mut R,
    ) -> Result<Vec<EulerAngles>> {
        if n == 0 {
            return Err(Error::InvalidParameter("sample count must be at least 1".into()));
        }
        check_context(ctx.len(), self.context_width)?;
        let z: Vec<EulerAngles> = (0..n).map(|_| self.base.sample(rng)).collect();
        self.inverse_batch(&z, ctx)
    }

    /// Inverts a batch of base points; `ctx` as in [`Self::log_prob_batch`].
    pub fn inverse_batch(&self, z: &[EulerAngles], ctx: &[f64]) -> Result<Vec<EulerAngles>> {
        let ctx = Contexts::new(ctx, self.context_width, z.len())?;
        let mut x: Vec<[f64; 3]> = z.iter().map(|e| e.to_array()).collect();
        let k = self.kernels;
        for layer in self.layers.iter().rev() {
            let t = layer.transformed.index();
            let raw = layer.conditioner.predict(layer.feature_matrix(&x, &ctx).view())?;
            x.par_chunks_mut(CHUNK_ROWS)
                .enumerate()
                .try_for_each(|(ci, chunk)| -> Result<()> {
                    let (mut w, mut kern) = (vec![0.0; k], vec![0.0; 2 * k]);
                    for (j, point) in chunk.iter_mut().enumerate() {
                        let row = raw.row(ci * CHUNK_ROWS + j);
                        ParamConstraint::apply(row.as_slice().expect("row-major"), &mut w, &mut kern);
                        let (v, _) = CombinationRef { weights: &w, kernels: &kern }
                            .inverse(point[t], SAMPLING_EPS)?;
                        point[t] = v;
                    }
                    Ok(())
                })?;
        }
        Ok(x.into_iter().map(EulerAngles::from_array).collect())
    }

    /// Draws rotations from the model.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        n: usize,
        ctx: &[f64],
        rng: &mut R,
    ) -> Result<Vec<RotationMatrix>> {
        Ok(self.sample_angles(n, ctx, rng)?.iter().map(euler_to_rotmat).collect())
    }

    /// Point estimate: the highest-density (Haar mode) of `n_candidates` samples.
    pub fn predict_mode<R: Rng + ?Sized>(
        &self,
        ctx: &[f64],
        n_candidates: usize,
        rng: &mut R,
    ) -> Result<RotationMatrix> {
        let candidates = self.sample(n_candidates, ctx, rng)?;
        if candidates.len() == 1 {
            return Ok(candidates[0]);
        }
        let angles: Vec<EulerAngles> =
            candidates.iter().map(rotmat_to_euler_unchecked).collect();
        let alternates: Vec<EulerAngles> = angles.iter().map(|e| e.alternate()).collect();
        let a = self.log_prob_batch(&angles, ctx)?;
        let b = self.log_prob_batch(&alternates, ctx)?;
        let mut best = 0;
        let mut best_lp = f64::NEG_INFINITY;
        for i in 0..candidates.len() {
            let lp = haar_from_torus(a[i], b[i], angles[i].phi);
            if lp > best_lp {
                best_lp = lp;
                best = i;
            }
        }
        Ok(candidates[best])
    }
}

fn accumulate_feature_grads(
    g_ang: &mut [[f64; 3]],
    features: &ArrayView2<'_, f64>,
    d_feat: &ArrayView2<'_, f64>,
    a: AngleIndex,
    b: AngleIndex,
) {
    let (ia, ib) = (a.index(), b.index());
    for (row, g) in g_ang.iter_mut().enumerate() {
        let (ca, sa, cb, sb) =
            (features[[row, 0]], features[[row, 1]], features[[row, 2]], features[[row, 3]]);
        g[ia] += -sa * d_feat[[row, 0]] + ca * d_feat[[row, 1]];
        g[ib] += -sb * d_feat[[row, 2]] + cb * d_feat[[row, 3]];
    }
}

/// Combines the torus log-densities of both Euler preimages into a log-density
/// relative to the normalised Haar measure.
pub fn haar_from_torus(lp_primary: f64, lp_alternate: f64, phi: f64) -> f64 {
    let hi = lp_primary.max(lp_alternate);
    let lse = if hi == f64::NEG_INFINITY {
        hi
    } else {
        hi + ((lp_primary - hi).exp() + (lp_alternate - hi).exp()).ln()
    };
    lse + ln_so3_volume() - phi.cos().abs().max(GIMBAL_COS_EPS).ln()
}
