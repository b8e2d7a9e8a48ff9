//! Evaluation: test log-likelihood, pose accuracy metrics and a kernel density
//! reference on the torus.

use std::f64::consts::TAU;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datasets::Sample;
use crate::error::{Error, Result};
use crate::flow::{DensityMode, FlowModel};
use crate::rotation::{geodesic_distance, EulerAngles, RotationMatrix};

/// Candidates drawn per test item when extracting a point estimate.
pub const DEFAULT_CANDIDATES: usize = 512;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub test_ll: f64,
    pub mode: DensityMode,
    pub acc15: f64,
    pub acc30: f64,
    pub median_error_deg: f64,
    pub ms_per_iter: Option<f64>,
    pub n: usize,
}

/// Mean log-likelihood of the samples in the requested mode.
pub fn evaluate_ll(model: &FlowModel, samples: &[Sample], mode: DensityMode) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidParameter("cannot evaluate an empty set".into()));
    }
    let rotations: Vec<RotationMatrix> = samples.iter().map(|s| s.rotation).collect();
    let ctx: Vec<f64> = samples.iter().flat_map(|s| s.context.iter().copied()).collect();
    let ctx = if model.context_width() == 0 { Vec::new() } else { ctx };
    let lp = model.log_prob_rotations(&rotations, &ctx, mode)?;
    Ok(lp.iter().sum::<f64>() / lp.len() as f64)
}

/// `(acc15, acc30, median error in degrees)` of geodesic errors in radians.
pub fn pose_metrics(errors: &[f64]) -> (f64, f64, f64) {
    if errors.is_empty() {
        return (f64::NAN, f64::NAN, f64::NAN);
    }
    let deg: Vec<f64> = errors.iter().map(|e| e.to_degrees()).collect();
    let n = deg.len() as f64;
    let acc15 = deg.iter().filter(|d| **d < 15.0).count() as f64 / n;
    let acc30 = deg.iter().filter(|d| **d < 30.0).count() as f64 / n;
    let mut sorted = deg;
    sorted.sort_by(f64::total_cmp);
    let m = sorted.len();
    let median = if m % 2 == 1 { sorted[m / 2] } else { 0.5 * (sorted[m / 2 - 1] + sorted[m / 2]) };
    (acc15, acc30, median.clamp(0.0, 180.0))
}

pub fn prediction_errors(predictions: &[RotationMatrix], truth: &[RotationMatrix]) -> Vec<f64> {
    predictions.iter().zip(truth).map(|(p, t)| geodesic_distance(p, t)).collect()
}

/// Point estimates for each sample; item `i` uses a ChaCha stream derived from
/// `(seed, i)` so results do not depend on the number of workers.
pub fn predict_all(
    model: &FlowModel,
    samples: &[Sample],
    n_candidates: usize,
    seed: u64,
) -> Result<Vec<RotationMatrix>> {
    samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64 + 1);
            let ctx: &[f64] = if model.context_width() == 0 { &[] } else { &s.context };
            model.predict_mode(ctx, n_candidates, &mut rng)
        })
        .collect()
}

/// Pose metrics of the mode estimates plus the TORUS test log-likelihood.
pub fn evaluate_pose(
    model: &FlowModel,
    samples: &[Sample],
    n_candidates: usize,
    seed: u64,
) -> Result<MetricsReport> {
    let test_ll = evaluate_ll(model, samples, DensityMode::Torus)?;
    let predictions = predict_all(model, samples, n_candidates, seed)?;
    let truth: Vec<RotationMatrix> = samples.iter().map(|s| s.rotation).collect();
    let (acc15, acc30, median_error_deg) = pose_metrics(&prediction_errors(&predictions, &truth));
    Ok(MetricsReport {
        test_ll,
        mode: DensityMode::Torus,
        acc15,
        acc30,
        median_error_deg,
        ms_per_iter: None,
        n: samples.len(),
    })
}

/// `ln(2 pi I0(kappa))`, the log-normaliser of a von Mises density.
///
/// Computed by the trapezoid rule on the periodic integrand, which converges
/// geometrically; the node count grows with the concentration.
pub fn log_von_mises_normaliser(kappa: f64) -> f64 {
    let nodes = (64.0 + 32.0 * kappa.sqrt()).ceil() as usize;
    let h = TAU / nodes as f64;
    let sum: f64 = (0..nodes).map(|j| (kappa * ((j as f64 * h).cos() - 1.0)).exp()).sum();
    (sum * h).ln() + kappa
}

/// Product von Mises kernel density estimate on the 3-torus.
#[derive(Debug, Clone)]
pub struct VonMisesKde {
    points: Vec<[f64; 3]>,
    concentration: f64,
    log_norm: f64,
}

impl VonMisesKde {
    pub fn new(points: &[EulerAngles], concentration: f64) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidParameter("KDE needs at least one point".into()));
        }
        if !(concentration > 0.0 && concentration.is_finite()) {
            return Err(Error::InvalidParameter(format!("bad concentration {concentration}")));
        }
        Ok(VonMisesKde {
            points: points.iter().map(|e| e.to_array()).collect(),
            concentration,
            log_norm: 3.0 * log_von_mises_normaliser(concentration) + (points.len() as f64).ln(),
        })
    }

    /// Picks the concentration from `grid` by likelihood on a held-out fifth of
    /// the points, then fits on all points.
    pub fn fit_cv(points: &[EulerAngles], grid: &[f64]) -> Result<Self> {
        if points.len() < 5 {
            return Err(Error::InvalidParameter("cross-validation needs at least 5 points".into()));
        }
        if grid.is_empty() {
            return Err(Error::InvalidParameter("empty bandwidth grid".into()));
        }
        let cut = points.len() * 4 / 5;
        let (fit, held) = points.split_at(cut);
        let mut best = (f64::NEG_INFINITY, grid[0]);
        for &k in grid {
            let score = VonMisesKde::new(fit, k)?.mean_log_density(held);
            if score > best.0 {
                best = (score, k);
            }
        }
        VonMisesKde::new(points, best.1)
    }

    /// Geometric grid of concentrations from 1 to 1e4.
    pub fn default_grid() -> Vec<f64> {
        (0..=24).map(|i| 10f64.powf(i as f64 / 6.0)).collect()
    }

    pub fn concentration(&self) -> f64 {
        self.concentration
    }

    pub fn log_density(&self, e: &EulerAngles) -> f64 {
        let x = e.to_array();
        let k = self.concentration;
        // log-sum-exp of kappa * (sum cos - 3), shifted by the per-kernel maximum
        let mut terms = Vec::with_capacity(self.points.len());
        let mut hi = f64::NEG_INFINITY;
        for p in &self.points {
            let s = (x[0] - p[0]).cos() + (x[1] - p[1]).cos() + (x[2] - p[2]).cos() - 3.0;
            let t = k * s;
            hi = hi.max(t);
            terms.push(t);
        }
        let sum: f64 = terms.iter().map(|t| (t - hi).exp()).sum();
        hi + sum.ln() + 3.0 * k - self.log_norm
    }

    pub fn mean_log_density(&self, xs: &[EulerAngles]) -> f64 {
        let total: f64 = xs.par_iter().map(|e| self.log_density(e)).sum();
        total / xs.len() as f64
    }
}
