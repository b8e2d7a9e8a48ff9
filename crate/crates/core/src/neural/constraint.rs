use crate::error::{Error, Result};
use crate::mobius::{DiskPoint, MobiusCombination, DISK_RADIUS};

/// Maps `3K` unconstrained network outputs onto Möbius-combination parameters.
///
/// Layout of the raw vector: `K` weight logits followed by `K` interleaved
/// `(u, v)` pairs. Logits go through a softmax; each raw pair `a` becomes
/// `w = r * tanh(|a|) / |a| * a` with `r = DISK_RADIUS`, so `|w| < r` always.
#[derive(Debug, Clone, Copy, Default)]
pub struct ParamConstraint;

impl ParamConstraint {
    pub fn kernel_count(raw_len: usize) -> Result<usize> {
        if raw_len == 0 || !raw_len.is_multiple_of(3) {
            return Err(Error::ShapeMismatch { expected: 3 * (raw_len / 3).max(1), got: raw_len });
        }
        Ok(raw_len / 3)
    }

    /// Writes weights (`K`) and flat kernel coordinates (`2K`).
    pub fn apply(raw: &[f64], weights: &mut [f64], kernels: &mut [f64]) {
        let k = weights.len();
        let logits = &raw[..k];
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for (w, &l) in weights.iter_mut().zip(logits) {
            *w = (l - max).exp();
            total += *w;
        }
        for w in weights.iter_mut() {
            *w /= total;
        }
        for i in 0..k {
            let (a, b) = (raw[k + 2 * i], raw[k + 2 * i + 1]);
            let scale = radial_scale(a.hypot(b));
            let (mut u, mut v) = (scale * a, scale * b);
            // tanh saturates, so rounding alone can push |w| an ulp past the radius
            let n = u.hypot(v);
            if n > DISK_RADIUS {
                u *= DISK_RADIUS / n;
                v *= DISK_RADIUS / n;
            }
            kernels[2 * i] = u;
            kernels[2 * i + 1] = v;
        }
    }

    /// Chain rule back to the raw outputs, given gradients with respect to the
    /// constrained weights and kernels.
    pub fn backward(
        raw: &[f64],
        weights: &[f64],
        d_weights: &[f64],
        d_kernels: &[f64],
        d_raw: &mut [f64],
    ) {
        let k = weights.len();
        let mean: f64 = weights.iter().zip(d_weights).map(|(w, g)| w * g).sum();
        for i in 0..k {
            d_raw[i] = weights[i] * (d_weights[i] - mean);
        }
        for i in 0..k {
            let (a, b) = (raw[k + 2 * i], raw[k + 2 * i + 1]);
            let (ga, gb) = (d_kernels[2 * i], d_kernels[2 * i + 1]);
            let n = a.hypot(b);
            let f = radial_scale(n);
            let h = radial_scale_slope_over_norm(n);
            let proj = a * ga + b * gb;
            d_raw[k + 2 * i] = f * ga + h * proj * a;
            d_raw[k + 2 * i + 1] = f * gb + h * proj * b;
        }
    }

    pub fn combination(raw: &[f64]) -> Result<MobiusCombination> {
        let k = Self::kernel_count(raw.len())?;
        let mut weights = vec![0.0; k];
        let mut flat = vec![0.0; 2 * k];
        Self::apply(raw, &mut weights, &mut flat);
        let kernels = flat
            .chunks_exact(2)
            .map(|p| DiskPoint::new(p[0], p[1]))
            .collect::<Result<Vec<_>>>()?;
        MobiusCombination::new(weights, kernels)
    }
}

/// `f(n) = r tanh(n) / n`, with `f(0) = r`.
#[inline]
fn radial_scale(n: f64) -> f64 {
    if n < 1e-4 {
        DISK_RADIUS * (1.0 - n * n / 3.0)
    } else {
        DISK_RADIUS * n.tanh() / n
    }
}

/// `f'(n) / n`, which stays finite at the origin.
#[inline]
fn radial_scale_slope_over_norm(n: f64) -> f64 {
    if n < 1e-3 {
        DISK_RADIUS * (-2.0 / 3.0 + 8.0 * n * n / 15.0)
    } else {
        let t = n.tanh();
        DISK_RADIUS * (n * (1.0 - t * t) - t) / (n * n * n)
    }
}
