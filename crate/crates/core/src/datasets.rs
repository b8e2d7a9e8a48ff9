//! Rotation datasets: generators, a versioned binary file format and CSV export.
//!
//! Every generator is a pure function of its spec: the spec carries the seed and
//! [`GeneratorSpec::generate`] derives a fresh ChaCha stream from it. Train and
//! test splits are independent draws from the same stream.
//!
//! Binary layout (all integers and floats little-endian):
//!
//! ```text
//! b"EFDS" | u32 version | u32 header length | header JSON | records
//! ```
//!
//! The header records the name, split sizes, context width and generator spec.
//! Each record is the rotation as 9 row-major `f64` values followed by the
//! context values; all training records come before all test records.

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rotation::{
    euler_to_rotmat, rotmat_to_euler_unchecked, wrap_angle, EulerAngles, RotationMatrix,
    VALIDATION_TOL,
};

pub const MAGIC: &[u8; 4] = b"EFDS";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub rotation: RotationMatrix,
    pub context: Vec<f64>,
}

impl Sample {
    pub fn new(rotation: RotationMatrix) -> Self {
        Sample { rotation, context: Vec::new() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub context_width: usize,
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
    pub generator: GeneratorSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "generator", rename_all = "snake_case")]
pub enum GeneratorSpec {
    Gimbal(GimbalSpec),
    Synthetic(SyntheticSpec),
    ConditionalToy(ConditionalToySpec),
    /// Data that did not come from a built-in generator.
    External { description: String },
}

impl GeneratorSpec {
    pub fn generate(&self) -> Result<Dataset> {
        match self {
            GeneratorSpec::Gimbal(s) => generate_gimbal(s, &mut ChaCha8Rng::seed_from_u64(s.seed)),
            GeneratorSpec::Synthetic(s) => {
                generate_synthetic(s, &mut ChaCha8Rng::seed_from_u64(s.seed))
            }
            GeneratorSpec::ConditionalToy(s) => {
                generate_conditional_toy(s, &mut ChaCha8Rng::seed_from_u64(s.seed))
            }
            GeneratorSpec::External { .. } => Err(Error::InvalidConfig(
                "external datasets cannot be regenerated".into(),
            )),
        }
    }
}

/// Angles near gimbal lock: `phi` is an equal mixture of normals centred at
/// `phi_centre` and `phi_centre + pi` (by default `+-pi/2`, the singularities).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GimbalSpec {
    pub sigma_sq: f64,
    pub sigma_phi_sq: f64,
    #[serde(default = "default_phi_centre")]
    pub phi_centre: f64,
    pub train_n: usize,
    pub test_n: usize,
    pub seed: u64,
}

impl Default for GimbalSpec {
    fn default() -> Self {
        GimbalSpec {
            sigma_sq: 0.1,
            sigma_phi_sq: 0.1,
            phi_centre: FRAC_PI_2,
            train_n: 60_000,
            test_n: 12_000,
            seed: 0,
        }
    }
}

fn default_phi_centre() -> f64 {
    FRAC_PI_2
}

impl GimbalSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_sq > 0.0 && self.sigma_sq.is_finite()) {
            return Err(Error::InvalidConfig(format!("sigma_sq must be positive, got {}", self.sigma_sq)));
        }
        if !(self.sigma_phi_sq > 0.0 && self.sigma_phi_sq.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "sigma_phi_sq must be positive, got {}",
                self.sigma_phi_sq
            )));
        }
        if !self.phi_centre.is_finite() {
            return Err(Error::InvalidConfig("phi_centre must be finite".into()));
        }
        Ok(())
    }

    /// One draw of the generating angles, wrapped to `[0, 2 pi)`.
    pub fn sample_angles<R: Rng + ?Sized>(&self, rng: &mut R) -> EulerAngles {
        let s = self.sigma_sq.sqrt();
        let s_phi = (self.sigma_phi_sq * self.sigma_sq).sqrt();
        let omega = s * gauss(rng);
        let kappa = s * gauss(rng);
        let centre = if rng.random::<bool>() { self.phi_centre } else { self.phi_centre - PI };
        let phi = centre + s_phi * gauss(rng);
        EulerAngles::new(omega, phi, kappa)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SyntheticKind {
    Peak,
    Cone,
    Cube,
    Line,
}

impl SyntheticKind {
    pub const ALL: [SyntheticKind; 4] =
        [SyntheticKind::Peak, SyntheticKind::Cone, SyntheticKind::Cube, SyntheticKind::Line];

    pub fn name(self) -> &'static str {
        match self {
            SyntheticKind::Peak => "peak",
            SyntheticKind::Cone => "cone",
            SyntheticKind::Cube => "cube",
            SyntheticKind::Line => "line",
        }
    }
}

impl fmt::Display for SyntheticKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SyntheticKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "peak" => Ok(SyntheticKind::Peak),
            "cone" => Ok(SyntheticKind::Cone),
            "cube" => Ok(SyntheticKind::Cube),
            "line" => Ok(SyntheticKind::Line),
            other => Err(Error::UnknownKind(other.to_string())),
        }
    }
}

/// Reconstructed synthetic targets.
///
/// * peak: `centre * exp(noise * xi)`.
/// * cone: `centre * exp(t * axis) * exp(noise * xi)` with `t` uniform on a full turn.
/// * cube: one of the 24 rotational symmetries of the cube, blurred by `noise`.
/// * line: as cone but with `t` uniform on `[0, pi]`.
///
/// `xi` is a standard normal tangent vector. The centre is given as a rotation
/// vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub kind: SyntheticKind,
    pub noise: f64,
    pub centre: [f64; 3],
    pub axis: [f64; 3],
    pub train_n: usize,
    pub test_n: usize,
    pub seed: u64,
}

impl SyntheticSpec {
    /// Default parameters for each kind.
    pub fn new(kind: SyntheticKind) -> Self {
        let noise = match kind {
            SyntheticKind::Peak => 0.05,
            SyntheticKind::Cone => 0.05,
            SyntheticKind::Cube => 0.1,
            SyntheticKind::Line => 1.0,
        };
        SyntheticSpec {
            kind,
            noise,
            centre: [0.4, -0.3, 0.8],
            axis: [0.0, 1.0, 0.0],
            train_n: 60_000,
            test_n: 12_000,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.noise > 0.0 && self.noise.is_finite()) {
            return Err(Error::InvalidConfig(format!("noise must be positive, got {}", self.noise)));
        }
        let n = self.axis.iter().map(|a| a * a).sum::<f64>().sqrt();
        if !(n > 0.0 && n.is_finite()) {
            return Err(Error::InvalidConfig("axis must be a non-zero vector".into()));
        }
        if self.centre.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidConfig("centre must be finite".into()));
        }
        Ok(())
    }

    fn unit_axis(&self) -> [f64; 3] {
        let n = self.axis.iter().map(|a| a * a).sum::<f64>().sqrt();
        [self.axis[0] / n, self.axis[1] / n, self.axis[2] / n]
    }

    pub fn sample_rotation<R: Rng + ?Sized>(&self, rng: &mut R) -> RotationMatrix {
        let centre = RotationMatrix::exp(self.centre);
        let base = match self.kind {
            SyntheticKind::Peak => centre,
            SyntheticKind::Cone => sweep(&centre, self.unit_axis(), rng.random::<f64>() * TAU),
            SyntheticKind::Line => sweep(&centre, self.unit_axis(), rng.random::<f64>() * PI),
            SyntheticKind::Cube => {
                let symmetries = cube_symmetries();
                symmetries[rng.random_range(0..symmetries.len())]
            }
        };
        blur(&base, self.noise, rng)
    }
}

/// Class `c` (1-based) draws from `c` blurred modes at `kappa = 2 pi j / c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalToySpec {
    pub folds: Vec<usize>,
    pub noise: f64,
    pub train_n: usize,
    pub test_n: usize,
    pub seed: u64,
}

impl Default for ConditionalToySpec {
    fn default() -> Self {
        ConditionalToySpec { folds: vec![1, 4], noise: 0.05, train_n: 20_000, test_n: 4_000, seed: 0 }
    }
}

impl ConditionalToySpec {
    /// Folds `1..=n`.
    pub fn with_classes(n: usize) -> Self {
        ConditionalToySpec { folds: (1..=n).collect(), ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.folds.len() < 2 {
            return Err(Error::InvalidConfig("need at least two classes".into()));
        }
        if self.folds.contains(&0) {
            return Err(Error::InvalidConfig("fold counts must be positive".into()));
        }
        if !(self.noise > 0.0 && self.noise.is_finite()) {
            return Err(Error::InvalidConfig(format!("noise must be positive, got {}", self.noise)));
        }
        Ok(())
    }

    /// The exact mode rotations of the class at `class_index`.
    pub fn modes(&self, class_index: usize) -> Vec<RotationMatrix> {
        let c = self.folds[class_index];
        (0..c)
            .map(|j| euler_to_rotmat(&EulerAngles::new(0.0, 0.0, TAU * j as f64 / c as f64)))
            .collect()
    }

    pub fn one_hot(&self, class_index: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.folds.len()];
        v[class_index] = 1.0;
        v
    }

    pub fn sample<R: Rng + ?Sized>(&self, class_index: usize, rng: &mut R) -> Sample {
        let c = self.folds[class_index];
        let j = rng.random_range(0..c);
        let centre = euler_to_rotmat(&EulerAngles::new(0.0, 0.0, TAU * j as f64 / c as f64));
        Sample { rotation: blur(&centre, self.noise, rng), context: self.one_hot(class_index) }
    }
}

fn gauss<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

fn sweep(centre: &RotationMatrix, axis: [f64; 3], t: f64) -> RotationMatrix {
    centre * &RotationMatrix::from_axis_angle(axis, t)
}

/// `r * exp(sigma * xi)` with `xi` standard normal in the tangent space.
pub fn blur<R: Rng + ?Sized>(r: &RotationMatrix, sigma: f64, rng: &mut R) -> RotationMatrix {
    let xi = [sigma * gauss(rng), sigma * gauss(rng), sigma * gauss(rng)];
    r * &RotationMatrix::exp(xi)
}

/// The 24 proper signed permutation matrices.
pub fn cube_symmetries() -> Vec<RotationMatrix> {
    const PERMS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let mut out = Vec::with_capacity(24);
    for p in PERMS {
        for signs in 0..8u32 {
            let mut m = [[0.0; 3]; 3];
            for (row, &col) in p.iter().enumerate() {
                m[row][col] = if signs >> row & 1 == 1 { -1.0 } else { 1.0 };
            }
            let r = RotationMatrix::from_array_unchecked(m);
            if r.determinant() > 0.0 {
                out.push(r);
            }
        }
    }
    out
}

pub fn generate_gimbal<R: Rng + ?Sized>(spec: &GimbalSpec, rng: &mut R) -> Result<Dataset> {
    spec.validate()?;
    let mut draw = |n: usize| -> Vec<Sample> {
        (0..n).map(|_| Sample::new(euler_to_rotmat(&spec.sample_angles(rng)))).collect()
    };
    let train = draw(spec.train_n);
    let test = draw(spec.test_n);
    Ok(Dataset {
        name: format!("gimbal-s{}", spec.sigma_sq),
        context_width: 0,
        train,
        test,
        generator: GeneratorSpec::Gimbal(spec.clone()),
    })
}

pub fn generate_synthetic<R: Rng + ?Sized>(spec: &SyntheticSpec, rng: &mut R) -> Result<Dataset> {
    spec.validate()?;
    let mut draw =
        |n: usize| -> Vec<Sample> { (0..n).map(|_| Sample::new(spec.sample_rotation(rng))).collect() };
    let train = draw(spec.train_n);
    let test = draw(spec.test_n);
    Ok(Dataset {
        name: spec.kind.name().to_string(),
        context_width: 0,
        train,
        test,
        generator: GeneratorSpec::Synthetic(spec.clone()),
    })
}

/// Classes are sampled with equal probability.
pub fn generate_conditional_toy<R: Rng + ?Sized>(
    spec: &ConditionalToySpec,
    rng: &mut R,
) -> Result<Dataset> {
    spec.validate()?;
    let classes = spec.folds.len();
    let mut draw = |n: usize| -> Vec<Sample> {
        (0..n)
            .map(|_| {
                let class = rng.random_range(0..classes);
                spec.sample(class, rng)
            })
            .collect()
    };
    let train = draw(spec.train_n);
    let test = draw(spec.test_n);
    let folds: Vec<String> = spec.folds.iter().map(|f| f.to_string()).collect();
    Ok(Dataset {
        name: format!("toy-{}", folds.join("-")),
        context_width: classes,
        train,
        test,
        generator: GeneratorSpec::ConditionalToy(spec.clone()),
    })
}

#[derive(Serialize, Deserialize)]
struct Header {
    name: String,
    train_n: usize,
    test_n: usize,
    context_width: usize,
    generator: GeneratorSpec,
}

impl Dataset {
    pub fn split(&self, split: Split) -> &[Sample] {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
        }
    }

    /// Euler angles of a split (the canonical preimage of each rotation).
    pub fn angles(&self, split: Split) -> Vec<EulerAngles> {
        self.split(split).iter().map(|s| rotmat_to_euler_unchecked(&s.rotation)).collect()
    }

    pub fn rotations(&self, split: Split) -> Vec<RotationMatrix> {
        self.split(split).iter().map(|s| s.rotation).collect()
    }

    /// Contexts of a split, flattened row by row.
    pub fn contexts(&self, split: Split) -> Vec<f64> {
        self.split(split).iter().flat_map(|s| s.context.iter().copied()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        for (i, s) in self.train.iter().chain(&self.test).enumerate() {
            s.rotation.validate(VALIDATION_TOL)?;
            if s.context.len() != self.context_width {
                return Err(Error::CorruptRecord(format!(
                    "record {i}: context width {} (expected {})",
                    s.context.len(),
                    self.context_width
                )));
            }
        }
        Ok(())
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let header = serde_json::to_vec(&Header {
            name: self.name.clone(),
            train_n: self.train.len(),
            test_n: self.test.len(),
            context_width: self.context_width,
            generator: self.generator.clone(),
        })?;
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(header.len() as u32).to_le_bytes())?;
        w.write_all(&header)?;
        for s in self.train.iter().chain(&self.test) {
            for v in s.rotation.to_row_major().iter().chain(&s.context) {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Dataset> {
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic, "magic")?;
        if &magic != MAGIC {
            return Err(Error::CorruptRecord("not a dataset file (bad magic)".into()));
        }
        let version = read_u32(&mut r, "version")?;
        if version != FORMAT_VERSION {
            return Err(Error::FormatVersionMismatch { found: version, expected: FORMAT_VERSION });
        }
        let len = read_u32(&mut r, "header length")? as usize;
        let mut header = vec![0u8; len];
        read_exact(&mut r, &mut header, "header")?;
        let header: Header = serde_json::from_slice(&header)
            .map_err(|e| Error::CorruptRecord(format!("header: {e}")))?;
        let width = 9 + header.context_width;
        let mut buf = vec![0u8; 8 * width];
        let mut values = vec![0.0f64; width];
        let mut read_split = |n: usize, offset: usize| -> Result<Vec<Sample>> {
            let mut out = Vec::with_capacity(n);
            for i in 0..n {
                read_exact(&mut r, &mut buf, &format!("record {}", offset + i))?;
                for (v, b) in values.iter_mut().zip(buf.chunks_exact(8)) {
                    *v = f64::from_le_bytes(b.try_into().expect("chunk of 8"));
                }
                let rotation = RotationMatrix::from_row_major(&values[..9]).map_err(|e| {
                    Error::CorruptRecord(format!("record {}: {e}", offset + i))
                })?;
                out.push(Sample { rotation, context: values[9..].to_vec() });
            }
            Ok(out)
        };
        let train = read_split(header.train_n, 0)?;
        let test = read_split(header.test_n, header.train_n)?;
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(Error::CorruptRecord("trailing bytes after last record".into()));
        }
        Ok(Dataset {
            name: header.name,
            context_width: header.context_width,
            train,
            test,
            generator: header.generator,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Dataset> {
        Dataset::read_from(BufReader::new(File::open(path)?))
    }

    /// One row per rotation: `r00..r22` then `c0..`.
    pub fn write_csv<W: Write>(&self, split: Split, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header: Vec<String> =
            (0..9).map(|i| format!("r{}{}", i / 3, i % 3)).collect();
        header.extend((0..self.context_width).map(|i| format!("c{i}")));
        out.write_record(&header)?;
        for s in self.split(split) {
            let row: Vec<String> = s
                .rotation
                .to_row_major()
                .iter()
                .chain(&s.context)
                .map(|v| format!("{v:e}"))
                .collect();
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn export_csv(&self, split: Split, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(split, File::create(path)?)
    }
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::CorruptRecord(format!("truncated file in {what}")),
        _ => Error::Io(e),
    })
}

fn read_u32<R: Read>(r: &mut R, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

/// Wrapped distance of `phi` to the nearer of the two gimbal-lock values.
pub fn gimbal_offset(phi: f64) -> f64 {
    let p = wrap_angle(phi);
    (p - FRAC_PI_2).abs().min((p - 3.0 * FRAC_PI_2).abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rotation::geodesic_distance;

    fn small_gimbal(seed: u64) -> GimbalSpec {
        GimbalSpec { train_n: 200, test_n: 50, seed, ..Default::default() }
    }

    #[test]
    fn gimbal_half_normal_offset() {
        let spec = GimbalSpec::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 100_000;
        let mut total = 0.0;
        let mut upper = 0usize;
        for _ in 0..n {
            let e = spec.sample_angles(&mut rng);
            total += gimbal_offset(e.phi);
            if (e.phi - FRAC_PI_2).abs() < (e.phi - 3.0 * FRAC_PI_2).abs() {
                upper += 1;
            }
        }
        let mean = total / n as f64;
        let expected = (0.01f64 * 2.0 / PI).sqrt();
        assert!((mean - expected).abs() < 0.05 * expected, "{mean} vs {expected}");
        let frac = upper as f64 / n as f64;
        assert!((frac - 0.5).abs() < 0.01, "{frac}");
    }

    #[test]
    fn generators_are_pure_functions_of_spec() {
        let a = GeneratorSpec::Gimbal(small_gimbal(5)).generate().unwrap();
        let b = GeneratorSpec::Gimbal(small_gimbal(5)).generate().unwrap();
        let c = GeneratorSpec::Gimbal(small_gimbal(6)).generate().unwrap();
        assert_eq!(a, b);
        assert_ne!(a.train[0], c.train[0]);
        assert_eq!(a.train.len(), 200);
        assert_eq!(a.test.len(), 50);
        a.validate().unwrap();
    }

    #[test]
    fn rejects_bad_specs() {
        let mut g = small_gimbal(0);
        g.sigma_sq = 0.0;
        assert!(GeneratorSpec::Gimbal(g).generate().is_err());
        assert!(matches!("sphere".parse::<SyntheticKind>(), Err(Error::UnknownKind(_))));
        let toy = ConditionalToySpec { folds: vec![3], ..Default::default() };
        assert!(GeneratorSpec::ConditionalToy(toy).generate().is_err());
    }

    #[test]
    fn cube_has_24_distinct_symmetries() {
        let c = cube_symmetries();
        assert_eq!(c.len(), 24);
        for (i, a) in c.iter().enumerate() {
            assert!(a.is_valid(1e-15));
            for b in &c[i + 1..] {
                assert!(geodesic_distance(a, b) > 1.0);
            }
        }
    }

    #[test]
    fn cube_samples_stay_near_a_centre() {
        let spec = SyntheticSpec { train_n: 5000, test_n: 0, ..SyntheticSpec::new(SyntheticKind::Cube) };
        let d = GeneratorSpec::Synthetic(spec).generate().unwrap();
        let centres = cube_symmetries();
        let near = d
            .train
            .iter()
            .filter(|s| {
                centres.iter().map(|c| geodesic_distance(c, &s.rotation)).fold(f64::MAX, f64::min)
                    < 0.35
            })
            .count();
        assert!(near as f64 >= 0.99 * 5000.0, "{near}");
    }

    #[test]
    fn peak_mean_is_near_centre() {
        let spec = SyntheticSpec { train_n: 10_000, test_n: 0, ..SyntheticSpec::new(SyntheticKind::Peak) };
        let centre = RotationMatrix::exp(spec.centre);
        let d = GeneratorSpec::Synthetic(spec).generate().unwrap();
        // mean of the tangent residuals at the centre
        let mut mean = [0.0; 3];
        for s in &d.train {
            let v = (centre.transpose() * s.rotation).log();
            for k in 0..3 {
                mean[k] += v[k] / d.train.len() as f64;
            }
        }
        let err = (mean[0] * mean[0] + mean[1] * mean[1] + mean[2] * mean[2]).sqrt();
        assert!(err < 0.02, "{err}");
    }

    #[test]
    fn cone_axes_concentrate_on_spin_axis() {
        let spec = SyntheticSpec {
            centre: [0.0; 3],
            train_n: 5000,
            test_n: 0,
            ..SyntheticSpec::new(SyntheticKind::Cone)
        };
        let axis = spec.unit_axis();
        let d = GeneratorSpec::Synthetic(spec).generate().unwrap();
        let mut total = 0.0;
        let mut counted = 0;
        for s in &d.train {
            let v = s.rotation.log();
            let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            if n < 0.5 {
                continue; // axis is ill-defined for small angles
            }
            let cos = ((v[0] * axis[0] + v[1] * axis[1] + v[2] * axis[2]) / n).abs().min(1.0);
            total += cos.acos();
            counted += 1;
        }
        let mean = total / counted as f64;
        assert!(mean < 0.1, "{mean}");
    }

    #[test]
    fn line_sweeps_half_a_turn() {
        let spec = SyntheticSpec {
            centre: [0.0; 3],
            noise: 0.05,
            train_n: 4000,
            test_n: 0,
            ..SyntheticSpec::new(SyntheticKind::Line)
        };
        let d = GeneratorSpec::Synthetic(spec).generate().unwrap();
        let max = d.train.iter().map(|s| s.rotation.angle()).fold(0.0, f64::max);
        assert!(max > 2.9 && max < PI + 1e-9, "{max}");
    }

    #[test]
    fn toy_classes_have_expected_modes() {
        let spec = ConditionalToySpec { train_n: 4000, test_n: 100, ..Default::default() };
        let d = GeneratorSpec::ConditionalToy(spec.clone()).generate().unwrap();
        assert_eq!(d.context_width, 2);
        let mut counts = [0usize; 2];
        for s in &d.train {
            let class = if s.context[0] == 1.0 { 0 } else { 1 };
            counts[class] += 1;
            let nearest = spec
                .modes(class)
                .iter()
                .map(|m| geodesic_distance(m, &s.rotation))
                .fold(f64::MAX, f64::min);
            assert!(nearest < 0.5);
        }
        assert!((counts[0] as f64 / 4000.0 - 0.5).abs() < 0.05);
        let kappas: Vec<f64> = spec.modes(1).iter().map(|m| rotmat_to_euler_unchecked(m).kappa).collect();
        for (j, k) in kappas.iter().enumerate() {
            assert!(crate::rotation::circular_distance(*k, j as f64 * FRAC_PI_2) < 1e-12);
        }
    }

    #[test]
    fn binary_round_trip_is_bit_exact() {
        let d = GeneratorSpec::ConditionalToy(ConditionalToySpec {
            train_n: 30,
            test_n: 7,
            ..Default::default()
        })
        .generate()
        .unwrap();
        let mut buf = Vec::new();
        d.write_to(&mut buf).unwrap();
        let back = Dataset::read_from(buf.as_slice()).unwrap();
        assert_eq!(back, d);
        for (a, b) in d.train.iter().zip(&back.train) {
            for (x, y) in a.rotation.to_row_major().iter().zip(b.rotation.to_row_major()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn every_generator_round_trips() {
        let mut specs = vec![GeneratorSpec::Gimbal(small_gimbal(3))];
        for kind in SyntheticKind::ALL {
            specs.push(GeneratorSpec::Synthetic(SyntheticSpec {
                train_n: 20,
                test_n: 5,
                ..SyntheticSpec::new(kind)
            }));
        }
        for spec in specs {
            let d = spec.generate().unwrap();
            d.validate().unwrap();
            let mut buf = Vec::new();
            d.write_to(&mut buf).unwrap();
            assert_eq!(Dataset::read_from(buf.as_slice()).unwrap(), d);
        }
    }

    #[test]
    fn truncated_or_foreign_files_are_rejected() {
        let d = GeneratorSpec::Gimbal(small_gimbal(2)).generate().unwrap();
        let mut buf = Vec::new();
        d.write_to(&mut buf).unwrap();
        let cut = &buf[..buf.len() - 5];
        assert!(matches!(Dataset::read_from(cut), Err(Error::CorruptRecord(_))));
        assert!(matches!(Dataset::read_from(&buf[..3]), Err(Error::CorruptRecord(_))));
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(Dataset::read_from(bad.as_slice()), Err(Error::CorruptRecord(_))));
        let mut future = buf.clone();
        future[4..8].copy_from_slice(&7u32.to_le_bytes());
        assert!(matches!(
            Dataset::read_from(future.as_slice()),
            Err(Error::FormatVersionMismatch { found: 7, expected: 1 })
        ));
        let mut extra = buf;
        extra.push(0);
        assert!(matches!(Dataset::read_from(extra.as_slice()), Err(Error::CorruptRecord(_))));
    }

    #[test]
    fn csv_export_has_header_and_rows() {
        let d = GeneratorSpec::ConditionalToy(ConditionalToySpec {
            train_n: 5,
            test_n: 2,
            ..Default::default()
        })
        .generate()
        .unwrap();
        let mut buf = Vec::new();
        d.write_csv(Split::Train, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "r00,r01,r02,r10,r11,r12,r20,r21,r22,c0,c1");
        assert_eq!(lines.len(), 6);
        let first: Vec<f64> = lines[1].split(',').map(|v| v.parse().unwrap()).collect();
        assert_eq!(first[..9], d.train[0].rotation.to_row_major());
    }
}
