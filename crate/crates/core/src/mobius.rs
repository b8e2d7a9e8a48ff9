//! Möbius transforms of the unit circle and their convex combinations.
//!
//! For a parameter `w` in the open unit disk the map
//! `g_w(x) = (1 - |w|^2) / |x - w|^2 * (x - w) - w` sends the circle to itself.
//! Writing `x = e^{i theta}` it is the Blaschke factor `(x - w) / (1 - conj(w) x)`,
//! and its angle has the continuous lift
//!
//! ```text
//! G_w(theta) = theta + 2 * arg(1 - w e^{-i theta}),   G_w(theta + 2pi) = G_w(theta) + 2pi
//! ```
//!
//! where the `arg` term stays inside `(-pi/2, pi/2)` because `Re(1 - w e^{-i theta}) > 0`.
//! A combination of `K` kernels is formed in the lift with every kernel anchored so
//! that angle 0 is a fixed point:
//!
//! ```text
//! F(theta) = sum_i rho_i * (G_{w_i}(theta) - G_{w_i}(0))
//! ```
//!
//! `F` is strictly increasing with `F(0) = 0` and `F(2pi) = 2pi`, so it is a circle
//! diffeomorphism. It has no closed-form inverse; [`combination_inverse`] bisects.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rotation::wrap_angle;

/// Largest kernel radius the conditioner can produce.
pub const DISK_RADIUS: f64 = 1.0 - 1e-4;

/// Default bisection tolerance for [`combination_inverse`].
pub const DEFAULT_INVERSE_EPS: f64 = 1e-8;

/// A parameter point strictly inside the unit disk.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiskPoint {
    u: f64,
    v: f64,
}

impl DiskPoint {
    pub const ORIGIN: DiskPoint = DiskPoint { u: 0.0, v: 0.0 };

    pub fn new(u: f64, v: f64) -> Result<Self> {
        let n = u.hypot(v);
        if !n.is_finite() || n >= 1.0 {
            return Err(Error::InvalidParameter(format!(
                "Möbius parameter ({u}, {v}) has norm {n}, must be < 1"
            )));
        }
        Ok(DiskPoint { u, v })
    }

    #[inline]
    pub fn u(&self) -> f64 {
        self.u
    }

    #[inline]
    pub fn v(&self) -> f64 {
        self.v
    }

    #[inline]
    pub fn norm(&self) -> f64 {
        self.u.hypot(self.v)
    }
}

/// Per-kernel quantities at one angle.
#[derive(Debug, Clone, Copy)]
struct KernelAt {
    /// `arg(1 - w e^{-i theta})`
    delta: f64,
    re: f64,
    im: f64,
    /// `|e^{i theta} - w|^2 = re^2 + im^2`
    dist2: f64,
}

#[inline]
fn kernel_at(u: f64, v: f64, cos: f64, sin: f64) -> KernelAt {
    let re = 1.0 - u * cos - v * sin;
    let im = u * sin - v * cos;
    KernelAt {
        delta: im.atan2(re),
        re,
        im,
        dist2: re * re + im * im,
    }
}

#[inline]
fn anchor_delta(u: f64, v: f64) -> f64 {
    (-v).atan2(1.0 - u)
}

/// Applies `g_w` to the embedded point `(cos theta, sin theta)` literally.
pub fn mobius_point(w: DiskPoint, theta: f64) -> [f64; 2] {
    let (s, c) = theta.sin_cos();
    let (dx, dy) = (c - w.u, s - w.v);
    let scale = (1.0 - w.u * w.u - w.v * w.v) / (dx * dx + dy * dy);
    [scale * dx - w.u, scale * dy - w.v]
}

/// Angle of `g_w(e^{i theta})`, in `[0, 2pi)`.
pub fn mobius_forward(w: DiskPoint, theta: f64) -> f64 {
    let (s, c) = theta.sin_cos();
    wrap_angle(theta + 2.0 * kernel_at(w.u, w.v, c, s).delta)
}

/// `log d theta' / d theta = log((1 - |w|^2) / |x - w|^2)`.
pub fn mobius_log_det(w: DiskPoint, theta: f64) -> f64 {
    let (s, c) = theta.sin_cos();
    let k = kernel_at(w.u, w.v, c, s);
    (1.0 - w.u * w.u - w.v * w.v).ln() - k.dist2.ln()
}

/// `K` Möbius kernels with convex weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MobiusCombination {
    weights: Vec<f64>,
    kernels: Vec<DiskPoint>,
}

impl MobiusCombination {
    pub fn new(weights: Vec<f64>, kernels: Vec<DiskPoint>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidParameter("combination needs at least one kernel".into()));
        }
        if weights.len() != kernels.len() {
            return Err(Error::ShapeMismatch { expected: weights.len(), got: kernels.len() });
        }
        if let Some(w) = weights.iter().find(|w| !(**w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidParameter(format!("negative or non-finite weight {w}")));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!("weights sum to {total}, expected 1")));
        }
        Ok(MobiusCombination { weights, kernels })
    }

    /// A single kernel with weight one.
    pub fn single(w: DiskPoint) -> Self {
        MobiusCombination { weights: vec![1.0], kernels: vec![w] }
    }

    /// `k` kernels at the origin with uniform weights.
    pub fn identity(k: usize) -> Self {
        let k = k.max(1);
        MobiusCombination {
            weights: vec![1.0 / k as f64; k],
            kernels: vec![DiskPoint::ORIGIN; k],
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn kernels(&self) -> &[DiskPoint] {
        &self.kernels
    }

    fn flat_kernels(&self) -> Vec<f64> {
        self.kernels.iter().flat_map(|k| [k.u, k.v]).collect()
    }
}

/// Borrowed combination parameters: `weights[i]` pairs with
/// `(kernels[2i], kernels[2i + 1])`. Validity is the caller's responsibility.
#[derive(Debug, Clone, Copy)]
pub struct CombinationRef<'a> {
    pub weights: &'a [f64],
    pub kernels: &'a [f64],
}

impl<'a> CombinationRef<'a> {
    /// Lifted forward value `F(theta)` (not wrapped) and derivative `F'(theta)`.
    pub fn eval(&self, theta: f64) -> (f64, f64) {
        let (s, c) = theta.sin_cos();
        let mut shift = 0.0;
        let mut deriv = 0.0;
        for (i, &rho) in self.weights.iter().enumerate() {
            let (u, v) = (self.kernels[2 * i], self.kernels[2 * i + 1]);
            let k = kernel_at(u, v, c, s);
            shift += rho * (k.delta - anchor_delta(u, v));
            deriv += rho * (1.0 - u * u - v * v) / k.dist2;
        }
        (theta + 2.0 * shift, deriv)
    }

    fn lifted_with_anchors(&self, theta: f64, anchors: &[f64]) -> f64 {
        let (s, c) = theta.sin_cos();
        let mut shift = 0.0;
        for (i, &rho) in self.weights.iter().enumerate() {
            let k = kernel_at(self.kernels[2 * i], self.kernels[2 * i + 1], c, s);
            shift += rho * (k.delta - anchors[i]);
        }
        theta + 2.0 * shift
    }

    pub fn forward(&self, theta: f64) -> f64 {
        wrap_angle(self.eval(theta).0)
    }

    pub fn log_det(&self, theta: f64) -> f64 {
        self.eval(theta).1.ln()
    }

    /// Bisection inverse. Returns the preimage in `[0, 2pi)` and the iteration count.
    pub fn inverse(&self, theta_prime: f64, eps: f64) -> Result<(f64, usize)> {
        if !(eps > 0.0) {
            return Err(Error::InvalidParameter(format!("bisection eps must be > 0, got {eps}")));
        }
        let target = wrap_angle(theta_prime);
        let anchors: Vec<f64> = (0..self.weights.len())
            .map(|i| anchor_delta(self.kernels[2 * i], self.kernels[2 * i + 1]))
            .collect();
        let (mut lo, mut hi) = (0.0, TAU);
        let f_hi = self.lifted_with_anchors(hi, &anchors);
        // F(0) = 0 exactly; F(2pi) = 2pi up to rounding
        if !target.is_finite() || !f_hi.is_finite() || f_hi + 1e-9 < target {
            return Err(Error::ConvergenceFailure { target, lo: 0.0, hi: f_hi });
        }
        let max_iter = max_bisection_iterations(eps);
        let mut iters = 0;
        while hi - lo > 2.0 * eps && iters < max_iter {
            let mid = 0.5 * (lo + hi);
            iters += 1;
            let f_mid = self.lifted_with_anchors(mid, &anchors);
            if !f_mid.is_finite() {
                return Err(Error::ConvergenceFailure { target, lo: 0.0, hi: f_hi });
            }
            if f_mid < target {
                lo = mid;
            } else if f_mid > target {
                hi = mid;
            } else {
                return Ok((wrap_angle(mid), iters));
            }
        }
        Ok((wrap_angle(0.5 * (lo + hi)), iters))
    }

    /// Accumulates parameter gradients of `loss(F(theta), log F'(theta))`.
    ///
    /// `grad_y` and `grad_logdet` are the upstream partials. Writes
    /// `d loss / d rho_i` into `d_weights[i]` and `d loss / d (u_i, v_i)` into
    /// `d_kernels[2i..2i + 2]` (overwriting), and returns `d loss / d theta`.
    pub fn backward(
        &self,
        theta: f64,
        grad_y: f64,
        grad_logdet: f64,
        d_weights: &mut [f64],
        d_kernels: &mut [f64],
    ) -> f64 {
        let (s, c) = theta.sin_cos();
        let k_count = self.weights.len();
        // first pass: F'(theta) for the log-det normaliser
        let mut deriv = 0.0;
        for i in 0..k_count {
            let (u, v) = (self.kernels[2 * i], self.kernels[2 * i + 1]);
            let dist2 = 1.0 - 2.0 * (u * c + v * s) + u * u + v * v;
            deriv += self.weights[i] * (1.0 - u * u - v * v) / dist2;
        }
        let gl = grad_logdet / deriv;
        let mut d_theta_of_deriv = 0.0;
        for i in 0..k_count {
            let rho = self.weights[i];
            let (u, v) = (self.kernels[2 * i], self.kernels[2 * i + 1]);
            let k = kernel_at(u, v, c, s);
            let one_minus = 1.0 - u * u - v * v;
            let d = one_minus / k.dist2;
            let inv_d2 = 1.0 / k.dist2;

            // anchored lift term: 2 * (delta(theta) - delta(0))
            let a_re = 1.0 - u;
            let a_d2 = a_re * a_re + v * v;
            let a0 = (-v).atan2(a_re);
            let ddelta_du = (k.re * s + k.im * c) * inv_d2 - (-v / a_d2);
            let ddelta_dv = (k.im * s - k.re * c) * inv_d2 - (-a_re / a_d2);

            // derivative term d_i = (1 - |w|^2) / dist2
            let dd_du = (-2.0 * u * k.dist2 - one_minus * 2.0 * (u - c)) * inv_d2 * inv_d2;
            let dd_dv = (-2.0 * v * k.dist2 - one_minus * 2.0 * (v - s)) * inv_d2 * inv_d2;
            let dd_dtheta = -one_minus * 2.0 * k.im * inv_d2 * inv_d2;

            d_weights[i] = grad_y * 2.0 * (k.delta - a0) + gl * d;
            d_kernels[2 * i] = grad_y * 2.0 * rho * ddelta_du + gl * rho * dd_du;
            d_kernels[2 * i + 1] = grad_y * 2.0 * rho * ddelta_dv + gl * rho * dd_dv;
            d_theta_of_deriv += rho * dd_dtheta;
        }
        grad_y * deriv + gl * d_theta_of_deriv
    }
}

/// Upper bound on bisection iterations for tolerance `eps`.
pub fn max_bisection_iterations(eps: f64) -> usize {
    (TAU / eps).log2().ceil().max(0.0) as usize + 2
}

/// Anchored convex combination, wrapped to `[0, 2pi)`.
pub fn combination_forward(c: &MobiusCombination, theta: f64) -> f64 {
    let k = c.flat_kernels();
    CombinationRef { weights: &c.weights, kernels: &k }.forward(theta)
}

/// `log F'(theta)`.
pub fn combination_log_det(c: &MobiusCombination, theta: f64) -> f64 {
    let k = c.flat_kernels();
    CombinationRef { weights: &c.weights, kernels: &k }.log_det(theta)
}

/// Preimage of `theta_prime` within `eps` (input-space bisection width).
pub fn combination_inverse(c: &MobiusCombination, theta_prime: f64, eps: f64) -> Result<f64> {
    combination_inverse_counted(c, theta_prime, eps).map(|(t, _)| t)
}

/// Like [`combination_inverse`], also reporting the number of bisection steps.
pub fn combination_inverse_counted(
    c: &MobiusCombination,
    theta_prime: f64,
    eps: f64,
) -> Result<(f64, usize)> {
    let k = c.flat_kernels();
    CombinationRef { weights: &c.weights, kernels: &k }.inverse(theta_prime, eps)
}
