//! Rotation algebra on SO(3).
//!
//! Euler angles follow the photogrammetric omega/phi/kappa convention: elementary
//! rotations about X, Y and Z composed as `R = R_kappa * R_phi * R_omega`, with
//! the sine terms placed as
//!
//! ```text
//! R_omega = | 1    0     0   |   R_phi = | cos  0  -sin |   R_kappa = |  cos  sin  0 |
//!           | 0   cos   sin  |           |  0   1    0  |             | -sin  cos  0 |
//!           | 0  -sin   cos  |           | sin  0   cos |             |   0    0   1 |
//! ```
//!
//! All three angles live on the circle and are canonicalised to `[0, 2pi)`, so the
//! Euler map is a two-to-one cover of SO(3) away from gimbal lock: `(w, p, k)`
//! and `(w + pi, pi - p, k + pi)` give the same matrix. Conversion back to angles
//! always returns the branch with `cos(phi) >= 0`. At gimbal lock (`|cos phi| ~ 0`)
//! only `omega + kappa` is determined and `kappa = 0` is returned.

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::ops::Mul;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Below this `|cos phi|` the matrix is treated as gimbal-locked.
pub const GIMBAL_COS_EPS: f64 = 1e-7;
/// Matrices with `1 - |R[2][0]|` below this are also treated as gimbal-locked.
pub const GIMBAL_SIN_EPS: f64 = 1e-12;
/// Orthonormality slack accepted by [`rotmat_to_euler`] and [`RotationMatrix::new`].
pub const VALIDATION_TOL: f64 = 1e-6;

/// Wraps any real angle into `[0, 2pi)`.
#[inline]
pub fn wrap_angle(theta: f64) -> f64 {
    let r = theta.rem_euclid(TAU);
    // rem_euclid rounds tiny negative inputs up to exactly 2pi
    if r >= TAU {
        0.0
    } else {
        r
    }
}

/// Shortest distance between two angles on the circle, in `[0, pi]`.
#[inline]
pub fn circular_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(TAU);
    d.min(TAU - d)
}

/// Which Euler angle a quantity refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AngleIndex {
    Omega,
    Phi,
    Kappa,
}

impl AngleIndex {
    pub const ALL: [AngleIndex; 3] = [AngleIndex::Omega, AngleIndex::Phi, AngleIndex::Kappa];

    #[inline]
    pub fn index(self) -> usize {
        match self {
            AngleIndex::Omega => 0,
            AngleIndex::Phi => 1,
            AngleIndex::Kappa => 2,
        }
    }

    pub fn from_index(i: usize) -> AngleIndex {
        Self::ALL[i % 3]
    }

    /// The two other angles, in increasing index order.
    #[inline]
    pub fn others(self) -> (AngleIndex, AngleIndex) {
        match self {
            AngleIndex::Omega => (AngleIndex::Phi, AngleIndex::Kappa),
            AngleIndex::Phi => (AngleIndex::Omega, AngleIndex::Kappa),
            AngleIndex::Kappa => (AngleIndex::Omega, AngleIndex::Phi),
        }
    }
}

impl fmt::Display for AngleIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            AngleIndex::Omega => "omega",
            AngleIndex::Phi => "phi",
            AngleIndex::Kappa => "kappa",
        };
        f.write_str(s)
    }
}

/// A point on the 3-torus of Euler angles, each component in `[0, 2pi)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EulerAngles {
    pub omega: f64,
    pub phi: f64,
    pub kappa: f64,
}

impl EulerAngles {
    pub fn new(omega: f64, phi: f64, kappa: f64) -> Self {
        EulerAngles {
            omega: wrap_angle(omega),
            phi: wrap_angle(phi),
            kappa: wrap_angle(kappa),
        }
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    #[inline]
    pub fn to_array(self) -> [f64; 3] {
        [self.omega, self.phi, self.kappa]
    }

    #[inline]
    pub fn get(&self, which: AngleIndex) -> f64 {
        match which {
            AngleIndex::Omega => self.omega,
            AngleIndex::Phi => self.phi,
            AngleIndex::Kappa => self.kappa,
        }
    }

    /// Copy with one angle replaced (and wrapped).
    pub fn with(mut self, which: AngleIndex, value: f64) -> Self {
        let v = wrap_angle(value);
        match which {
            AngleIndex::Omega => self.omega = v,
            AngleIndex::Phi => self.phi = v,
            AngleIndex::Kappa => self.kappa = v,
        }
        self
    }

    /// The other Euler preimage of the same rotation.
    pub fn alternate(self) -> Self {
        Self::new(self.omega + PI, PI - self.phi, self.kappa + PI)
    }

    /// Largest per-angle circular distance.
    pub fn max_circular_distance(&self, other: &EulerAngles) -> f64 {
        AngleIndex::ALL
            .iter()
            .map(|&i| circular_distance(self.get(i), other.get(i)))
            .fold(0.0, f64::max)
    }
}

/// A 3x3 special orthogonal matrix, stored row-major.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotationMatrix {
    m: [[f64; 3]; 3],
}

impl RotationMatrix {
    pub const IDENTITY: RotationMatrix = RotationMatrix {
        m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
    };

    /// Validates orthonormality and orientation within [`VALIDATION_TOL`].
    pub fn new(m: [[f64; 3]; 3]) -> Result<Self> {
        let r = RotationMatrix { m };
        r.validate(VALIDATION_TOL)?;
        Ok(r)
    }

    /// Wraps a matrix the caller already knows to be a rotation.
    pub fn from_array_unchecked(m: [[f64; 3]; 3]) -> Self {
        RotationMatrix { m }
    }

    pub fn from_row_major(v: &[f64]) -> Result<Self> {
        if v.len() != 9 {
            return Err(Error::ShapeMismatch { expected: 9, got: v.len() });
        }
        Self::new([[v[0], v[1], v[2]], [v[3], v[4], v[5]], [v[6], v[7], v[8]]])
    }

    #[inline]
    pub fn as_array(&self) -> &[[f64; 3]; 3] {
        &self.m
    }

    pub fn to_row_major(&self) -> [f64; 9] {
        let m = &self.m;
        [
            m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2],
        ]
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.m[row][col]
    }

    pub fn transpose(&self) -> RotationMatrix {
        let m = &self.m;
        let mut t = [[0.0; 3]; 3];
        for (i, row) in t.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = m[j][i];
            }
        }
        RotationMatrix { m: t }
    }

    pub fn trace(&self) -> f64 {
        self.m[0][0] + self.m[1][1] + self.m[2][2]
    }

    pub fn determinant(&self) -> f64 {
        det3(&self.m)
    }

    /// Frobenius norm of `M^T M - I`.
    pub fn orthonormality_error(&self) -> f64 {
        let m = &self.m;
        let mut acc = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| m[k][i] * m[k][j]).sum();
                let target = if i == j { 1.0 } else { 0.0 };
                acc += (dot - target).powi(2);
            }
        }
        acc.sqrt()
    }

    pub fn validate(&self, tol: f64) -> Result<()> {
        if self.m.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidRotation("non-finite entry".into()));
        }
        let ortho = self.orthonormality_error();
        if ortho > tol {
            return Err(Error::InvalidRotation(format!(
                "|M^T M - I|_F = {ortho:.3e} exceeds {tol:e}"
            )));
        }
        let det = self.determinant();
        if (det - 1.0).abs() > tol {
            return Err(Error::InvalidRotation(format!("det = {det}")));
        }
        Ok(())
    }

    pub fn is_valid(&self, tol: f64) -> bool {
        self.validate(tol).is_ok()
    }

    pub fn frobenius_distance(&self, other: &RotationMatrix) -> f64 {
        self.m
            .iter()
            .flatten()
            .zip(other.m.iter().flatten())
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// Rotation by `angle` about the (normalised) `axis`, via Rodrigues' formula.
    pub fn from_axis_angle(axis: [f64; 3], angle: f64) -> RotationMatrix {
        let n = norm3(axis);
        if n == 0.0 || angle == 0.0 {
            return Self::IDENTITY;
        }
        let [x, y, z] = [axis[0] / n, axis[1] / n, axis[2] / n];
        let (s, c) = angle.sin_cos();
        let t = 1.0 - c;
        RotationMatrix {
            m: [
                [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
                [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
                [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
            ],
        }
    }

    /// Exponential map of a rotation vector (axis times angle).
    pub fn exp(v: [f64; 3]) -> RotationMatrix {
        Self::from_axis_angle(v, norm3(v))
    }

    /// Rotation vector of this matrix; angle in `[0, pi]`.
    pub fn log(&self) -> [f64; 3] {
        let q = UnitQuaternion::from_rotmat(self);
        q.to_rotation_vector()
    }

    /// Rotation angle in `[0, pi]`.
    pub fn angle(&self) -> f64 {
        geodesic_distance(&Self::IDENTITY, self)
    }
}

impl Mul for RotationMatrix {
    type Output = RotationMatrix;

    fn mul(self, rhs: RotationMatrix) -> RotationMatrix {
        RotationMatrix { m: matmul3(&self.m, &rhs.m) }
    }
}

impl Mul for &RotationMatrix {
    type Output = RotationMatrix;

    fn mul(self, rhs: &RotationMatrix) -> RotationMatrix {
        RotationMatrix { m: matmul3(&self.m, &rhs.m) }
    }
}

/// Unit quaternion `w + xi + yj + zk`. `q` and `-q` encode the same rotation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitQuaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl UnitQuaternion {
    /// Normalises the given components; fails on a zero or non-finite input.
    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Result<Self> {
        let n = (w * w + x * x + y * y + z * z).sqrt();
        if !n.is_finite() || n == 0.0 {
            return Err(Error::InvalidParameter(format!(
                "cannot normalise quaternion with norm {n}"
            )));
        }
        Ok(UnitQuaternion { w: w / n, x: x / n, y: y / n, z: z / n })
    }

    pub fn norm(&self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    /// Uniform on S^3, hence Haar-distributed as a rotation.
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        loop {
            let c: [f64; 4] = [
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
            ];
            if let Ok(q) = Self::new(c[0], c[1], c[2], c[3]) {
                if q.norm() > 0.5 {
                    return q;
                }
            }
        }
    }

    pub fn to_rotmat(&self) -> RotationMatrix {
        let UnitQuaternion { w, x, y, z } = *self;
        RotationMatrix {
            m: [
                [
                    1.0 - 2.0 * (y * y + z * z),
                    2.0 * (x * y - w * z),
                    2.0 * (x * z + w * y),
                ],
                [
                    2.0 * (x * y + w * z),
                    1.0 - 2.0 * (x * x + z * z),
                    2.0 * (y * z - w * x),
                ],
                [
                    2.0 * (x * z - w * y),
                    2.0 * (y * z + w * x),
                    1.0 - 2.0 * (x * x + y * y),
                ],
            ],
        }
    }

    /// Shepperd's method; returns the representative with `w >= 0`.
    pub fn from_rotmat(r: &RotationMatrix) -> Self {
        let m = r.as_array();
        let tr = r.trace();
        let (w, x, y, z);
        if tr > m[0][0] && tr > m[1][1] && tr > m[2][2] {
            let s = (1.0 + tr).sqrt() * 2.0;
            w = 0.25 * s;
            x = (m[2][1] - m[1][2]) / s;
            y = (m[0][2] - m[2][0]) / s;
            z = (m[1][0] - m[0][1]) / s;
        } else if m[0][0] > m[1][1] && m[0][0] > m[2][2] {
            let s = (1.0 + m[0][0] - m[1][1] - m[2][2]).sqrt() * 2.0;
            w = (m[2][1] - m[1][2]) / s;
            x = 0.25 * s;
            y = (m[0][1] + m[1][0]) / s;
            z = (m[0][2] + m[2][0]) / s;
        } else if m[1][1] > m[2][2] {
            let s = (1.0 + m[1][1] - m[0][0] - m[2][2]).sqrt() * 2.0;
            w = (m[0][2] - m[2][0]) / s;
            x = (m[0][1] + m[1][0]) / s;
            y = 0.25 * s;
            z = (m[1][2] + m[2][1]) / s;
        } else {
            let s = (1.0 + m[2][2] - m[0][0] - m[1][1]).sqrt() * 2.0;
            w = (m[1][0] - m[0][1]) / s;
            x = (m[0][2] + m[2][0]) / s;
            y = (m[1][2] + m[2][1]) / s;
            z = 0.25 * s;
        }
        let sign = if w < 0.0 { -1.0 } else { 1.0 };
        let n = (w * w + x * x + y * y + z * z).sqrt();
        UnitQuaternion {
            w: sign * w / n,
            x: sign * x / n,
            y: sign * y / n,
            z: sign * z / n,
        }
    }

    pub fn dot(&self, o: &UnitQuaternion) -> f64 {
        self.w * o.w + self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn to_rotation_vector(&self) -> [f64; 3] {
        let (w, v) = if self.w < 0.0 {
            (-self.w, [-self.x, -self.y, -self.z])
        } else {
            (self.w, [self.x, self.y, self.z])
        };
        let s = norm3(v);
        if s < 1e-300 {
            return [0.0; 3];
        }
        let angle = 2.0 * s.atan2(w);
        [v[0] / s * angle, v[1] / s * angle, v[2] / s * angle]
    }
}

/// `R_kappa * R_phi * R_omega`. Accepts any real angles.
pub fn euler_to_rotmat(e: &EulerAngles) -> RotationMatrix {
    let (so, co) = e.omega.sin_cos();
    let (sp, cp) = e.phi.sin_cos();
    let (sk, ck) = e.kappa.sin_cos();
    RotationMatrix {
        m: [
            [ck * cp, ck * sp * so + sk * co, -ck * sp * co + sk * so],
            [-sk * cp, -sk * sp * so + ck * co, sk * sp * co + ck * so],
            [sp, -cp * so, cp * co],
        ],
    }
}

/// The three elementary factors `(R_omega, R_phi, R_kappa)`.
pub fn elementary_rotations(e: &EulerAngles) -> [RotationMatrix; 3] {
    let (so, co) = e.omega.sin_cos();
    let (sp, cp) = e.phi.sin_cos();
    let (sk, ck) = e.kappa.sin_cos();
    [
        RotationMatrix { m: [[1.0, 0.0, 0.0], [0.0, co, so], [0.0, -so, co]] },
        RotationMatrix { m: [[cp, 0.0, -sp], [0.0, 1.0, 0.0], [sp, 0.0, cp]] },
        RotationMatrix { m: [[ck, sk, 0.0], [-sk, ck, 0.0], [0.0, 0.0, 1.0]] },
    ]
}

/// True when the matrix sits in the gimbal-lock band handled by the `kappa = 0` branch.
pub fn is_gimbal_locked(r: &RotationMatrix) -> bool {
    let m = r.as_array();
    let cos_phi = m[0][0].hypot(m[1][0]);
    cos_phi < GIMBAL_COS_EPS || 1.0 - m[2][0].abs() < GIMBAL_SIN_EPS
}

/// Inverse of [`euler_to_rotmat`] on the `cos(phi) >= 0` branch.
///
/// In the gimbal-lock band `kappa` is set to exactly zero and `omega` absorbs the
/// remaining freedom.
pub fn rotmat_to_euler(r: &RotationMatrix) -> Result<EulerAngles> {
    r.validate(VALIDATION_TOL)?;
    Ok(rotmat_to_euler_unchecked(r))
}

/// [`rotmat_to_euler`] without the orthonormality check.
pub fn rotmat_to_euler_unchecked(r: &RotationMatrix) -> EulerAngles {
    let m = r.as_array();
    let cos_phi = m[0][0].hypot(m[1][0]);
    let sin_phi = m[2][0].clamp(-1.0, 1.0);
    if is_gimbal_locked(r) {
        // kappa = 0: R = R_phi R_omega, whose middle row is (0, cos w, sin w)
        let phi = sin_phi.atan2(cos_phi);
        let omega = m[1][2].atan2(m[1][1]);
        return EulerAngles::new(omega, phi, 0.0);
    }
    let phi = sin_phi.atan2(cos_phi);
    let omega = (-m[2][1]).atan2(m[2][2]);
    let kappa = (-m[1][0]).atan2(m[0][0]);
    EulerAngles::new(omega, phi, kappa)
}

/// Haar-uniform rotation.
pub fn haar_sample<R: Rng + ?Sized>(rng: &mut R) -> RotationMatrix {
    UnitQuaternion::random(rng).to_rotmat()
}

/// Angle of the relative rotation `a^T b`, in `[0, pi]`.
///
/// Evaluated as `atan2(|skew|, (tr - 1) / 2)`, which equals
/// `arccos((tr(a^T b) - 1) / 2)` but keeps full precision near 0 and pi.
pub fn geodesic_distance(a: &RotationMatrix, b: &RotationMatrix) -> f64 {
    let rel = a.transpose() * *b;
    let m = rel.as_array();
    let cos = (rel.trace() - 1.0) / 2.0;
    let sx = m[2][1] - m[1][2];
    let sy = m[0][2] - m[2][0];
    let sz = m[1][0] - m[0][1];
    let sin = 0.5 * (sx * sx + sy * sy + sz * sz).sqrt();
    sin.atan2(cos).clamp(0.0, PI)
}

fn matmul3(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    out
}

fn det3(m: &[[f64; 3]; 3]) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

#[inline]
pub(crate) fn norm3(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_2;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn identity_angles_give_identity() {
        let r = euler_to_rotmat(&EulerAngles::new(0.0, 0.0, 0.0));
        assert_eq!(r, RotationMatrix::IDENTITY);
    }

    #[test]
    fn omega_quarter_turn() {
        let r = euler_to_rotmat(&EulerAngles::new(FRAC_PI_2, 0.0, 0.0));
        let expected = [[1.0, 0.0, 0.0], [0.0, 0.0, 1.0], [0.0, -1.0, 0.0]];
        for i in 0..3 {
            for j in 0..3 {
                assert!((r.get(i, j) - expected[i][j]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn composition_order_matches_explicit_product() {
        let mut g = rng(1);
        for _ in 0..1000 {
            let e = EulerAngles::new(g.random::<f64>() * TAU, g.random::<f64>() * TAU, g.random::<f64>() * TAU);
            let [ro, rp, rk] = elementary_rotations(&e);
            let explicit = rk * (rp * ro);
            assert!(euler_to_rotmat(&e).frobenius_distance(&explicit) < 1e-12);
        }
    }

    #[test]
    fn gimbal_matrix_depends_on_angle_sum() {
        // with the sign convention above the phi = pi/2 matrix depends on omega + kappa
        let (w, k) = (0.4, 1.1);
        let r = euler_to_rotmat(&EulerAngles::new(w, FRAC_PI_2, k));
        let s = w + k;
        let expected = [[0.0, s.sin(), -s.cos()], [0.0, s.cos(), s.sin()], [1.0, 0.0, 0.0]];
        for i in 0..3 {
            for j in 0..3 {
                assert!((r.get(i, j) - expected[i][j]).abs() < 1e-15, "({i},{j})");
            }
        }
        let shifted = euler_to_rotmat(&EulerAngles::new(w + 0.3, FRAC_PI_2, k - 0.3));
        assert!(r.frobenius_distance(&shifted) < 1e-14);
    }

    #[test]
    fn identity_to_zero_angles() {
        let e = rotmat_to_euler(&RotationMatrix::IDENTITY).unwrap();
        assert_eq!(e.to_array(), [0.0, 0.0, 0.0]);
    }

    #[test]
    fn gimbal_example_sets_kappa_zero() {
        let (c, s) = (0.7f64.cos(), 0.7f64.sin());
        let r = RotationMatrix::new([[0.0, c, s], [0.0, -s, c], [1.0, 0.0, 0.0]]).unwrap();
        let e = rotmat_to_euler(&r).unwrap();
        assert_eq!(e.kappa, 0.0);
        assert!((e.phi - FRAC_PI_2).abs() < 1e-15);
        // under this sign convention row 0 is (0, sin w, -cos w)
        assert!((e.omega - (0.7 + FRAC_PI_2)).abs() < 1e-12);
        assert!(euler_to_rotmat(&e).frobenius_distance(&r) < 1e-12);
    }

    #[test]
    fn gimbal_band_returns_exact_zero_kappa() {
        let mut g = rng(2);
        for i in 0..2000 {
            let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
            let delta = g.random::<f64>() * 1.4e-6;
            let phi = sign * (FRAC_PI_2 - delta);
            let e = EulerAngles::new(g.random::<f64>() * TAU, phi, g.random::<f64>() * TAU);
            let r = euler_to_rotmat(&e);
            if 1.0 - r.get(2, 0).abs() < GIMBAL_SIN_EPS {
                let back = rotmat_to_euler(&r).unwrap();
                assert_eq!(back.kappa, 0.0);
                // kappa = 0 costs at most O(cos phi) in reconstruction
                assert!(euler_to_rotmat(&back).frobenius_distance(&r) < 1e-5);
            }
        }
    }

    #[test]
    fn haar_round_trip() {
        let mut g = rng(3);
        for _ in 0..20_000 {
            let r = haar_sample(&mut g);
            let e = rotmat_to_euler(&r).unwrap();
            assert!(euler_to_rotmat(&e).frobenius_distance(&r) < 1e-9);
        }
    }

    #[test]
    fn alternate_preimage_is_same_rotation() {
        let mut g = rng(4);
        for _ in 0..1000 {
            let e = EulerAngles::new(g.random::<f64>() * TAU, g.random::<f64>() * TAU, g.random::<f64>() * TAU);
            let a = euler_to_rotmat(&e);
            let b = euler_to_rotmat(&e.alternate());
            assert!(a.frobenius_distance(&b) < 1e-12);
        }
    }

    #[test]
    fn rejects_non_orthonormal() {
        let m = [[1.0, 0.0, 0.0], [0.0, 1.0, 1e-3], [0.0, 0.0, 1.0]];
        let r = RotationMatrix::from_array_unchecked(m);
        assert!(matches!(rotmat_to_euler(&r), Err(Error::InvalidRotation(_))));
        let reflection = RotationMatrix::from_array_unchecked([[-1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
        assert!(rotmat_to_euler(&reflection).is_err());
    }

    #[test]
    fn geodesic_examples() {
        let mut g = rng(5);
        let r = haar_sample(&mut g);
        assert!(geodesic_distance(&r, &r) < 1e-12);
        let flip = RotationMatrix::from_axis_angle([1.0, 0.0, 0.0], PI);
        assert!((geodesic_distance(&RotationMatrix::IDENTITY, &flip) - PI).abs() < 1e-12);
        let small = euler_to_rotmat(&EulerAngles::new(0.3, 0.0, 0.0));
        assert!((geodesic_distance(&RotationMatrix::IDENTITY, &small) - 0.3).abs() < 1e-14);
    }

    #[test]
    fn geodesic_matches_arccos_and_triangle_inequality() {
        let mut g = rng(6);
        for _ in 0..5000 {
            let (a, b, c) = (haar_sample(&mut g), haar_sample(&mut g), haar_sample(&mut g));
            let dab = geodesic_distance(&a, &b);
            let acos = (((a.transpose() * b).trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos();
            assert!((dab - acos).abs() < 1e-6);
            assert!((dab - geodesic_distance(&b, &a)).abs() < 1e-12);
            let (dbc, dac) = (geodesic_distance(&b, &c), geodesic_distance(&a, &c));
            assert!(dac <= dab + dbc + 1e-9);
        }
    }

    #[test]
    fn quaternion_round_trip_and_sign_ambiguity() {
        let mut g = rng(7);
        for _ in 0..1000 {
            let q = UnitQuaternion::random(&mut g);
            assert!((q.norm() - 1.0).abs() < 1e-12);
            let neg = UnitQuaternion { w: -q.w, x: -q.x, y: -q.y, z: -q.z };
            assert!(q.to_rotmat().frobenius_distance(&neg.to_rotmat()) < 1e-15);
            let back = UnitQuaternion::from_rotmat(&q.to_rotmat());
            assert!((back.dot(&q).abs() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn exp_log_round_trip() {
        let v = [0.3, -0.2, 0.5];
        let r = RotationMatrix::exp(v);
        let back = r.log();
        for i in 0..3 {
            assert!((back[i] - v[i]).abs() < 1e-12);
        }
        assert!((r.angle() - norm3(v)).abs() < 1e-12);
    }

    #[test]
    fn wrap_handles_edges() {
        assert_eq!(wrap_angle(-1e-18), 0.0);
        assert_eq!(wrap_angle(TAU), 0.0);
        assert!((wrap_angle(-FRAC_PI_2) - 1.5 * PI).abs() < 1e-15);
        assert!((circular_distance(0.1, TAU - 0.1) - 0.2).abs() < 1e-15);
    }
}
