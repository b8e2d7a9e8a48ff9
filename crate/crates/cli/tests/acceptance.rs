//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any criterion fails.
//!
//! Pass criterion numbers or name fragments to run a subset, e.g.
//! `cargo test -p euler-flow-cli --test acceptance -- 2 4`.

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rand_chacha::ChaCha8Rng;

use euler_flow::datasets::{
    ConditionalToySpec, Dataset, GeneratorSpec, GimbalSpec, Sample, SyntheticKind, SyntheticSpec,
};
use euler_flow::eval::{evaluate_ll, evaluate_pose, DEFAULT_CANDIDATES};
use euler_flow::flow::{BaseDistribution, DensityMode, FlowConfig, FlowModel};
use euler_flow::mobius::{max_bisection_iterations, mobius_forward, mobius_log_det, CombinationRef, DiskPoint};
use euler_flow::rotation::{
    circular_distance, euler_to_rotmat, geodesic_distance, haar_sample, rotmat_to_euler, EulerAngles,
};
use euler_flow::train::{train, TrainConfig};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn within(limit: Duration, elapsed: Duration) -> bool {
    elapsed <= limit
}

fn secs(d: Duration) -> String {
    format!("{:.1} s", d.as_secs_f64())
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn criterion_01_rotation_algebra() -> Verdict {
    let start = Instant::now();
    let mut r = rng(101);
    let mut worst = 0.0f64;
    for _ in 0..100_000 {
        let m = haar_sample(&mut r);
        let back = euler_to_rotmat(&rotmat_to_euler(&m).unwrap());
        worst = worst.max(m.frobenius_distance(&back));
    }
    let mut gimbal_ok = true;
    let mut gimbal_cases = 0;
    for centre in [FRAC_PI_2, 3.0 * FRAC_PI_2] {
        for delta in [0.0, 1e-12, -1e-12, 3e-9, -3e-9, 5e-8, -5e-8, 9e-8, -9e-8] {
            for _ in 0..50 {
                let e = EulerAngles::new(r.random::<f64>() * TAU, centre + delta, r.random::<f64>() * TAU);
                assert!(e.phi.cos().abs() < 1e-7);
                let back = rotmat_to_euler(&euler_to_rotmat(&e)).unwrap();
                gimbal_ok &= back.kappa == 0.0;
                gimbal_cases += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    verdict(
        worst < 1e-9 && gimbal_ok && within(Duration::from_secs(10), elapsed),
        format!(
            "max Frobenius round-trip error {worst:.2e} over 1e5 Haar samples (< 1e-9); \
             kappa == 0 in {gimbal_cases} gimbal cases: {gimbal_ok}; {}",
            secs(elapsed)
        ),
    )
}

fn criterion_02_mobius() -> Verdict {
    let start = Instant::now();
    let w = DiskPoint::new(0.5, 0.0).unwrap();
    let y = mobius_forward(w, FRAC_PI_2);
    let expected = 0.6f64.atan2(-0.8).rem_euclid(TAU);
    let fwd_err = circular_distance(y, expected);
    let ld_err = (mobius_log_det(w, FRAC_PI_2) - 0.6f64.ln()).abs();

    let mut r = rng(202);
    let eps = 1e-9;
    let bound = max_bisection_iterations(eps);
    let mut worst = 0.0f64;
    let mut max_iters = 0;
    for _ in 0..1000 {
        let k = r.random_range(1..=8);
        let mut weights: Vec<f64> = (0..k).map(|_| r.random::<f64>() + 1e-3).collect();
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        let kernels: Vec<f64> = (0..k)
            .flat_map(|_| {
                let rad = 0.95 * r.random::<f64>().sqrt();
                let ang = r.random::<f64>() * TAU;
                [rad * ang.cos(), rad * ang.sin()]
            })
            .collect();
        let c = CombinationRef { weights: &weights, kernels: &kernels };
        let theta = r.random::<f64>() * TAU;
        let (back, iters) = c.inverse(c.forward(theta), eps).unwrap();
        worst = worst.max(circular_distance(back, theta));
        max_iters = max_iters.max(iters);
    }
    let elapsed = start.elapsed();
    verdict(
        fwd_err < 1e-12
            && ld_err < 1e-10
            && worst < 1e-8
            && max_iters <= bound
            && within(Duration::from_secs(30), elapsed),
        format!(
            "forward error {fwd_err:.1e}, log-det error {ld_err:.1e}; 1e3 round trips max error {worst:.1e} \
             (< 1e-8); max iterations {max_iters} (bound {bound}); {}",
            secs(elapsed)
        ),
    )
}

/// Mean and standard error of `exp(log_prob)` under uniform torus proposals,
/// scaled by the torus volume.
fn torus_normalisation(model: &FlowModel, n: usize, seed: u64) -> (f64, f64) {
    let mut r = rng(seed);
    let base = BaseDistribution::UniformTorus;
    let volume = TAU.powi(3);
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    let chunk = 50_000;
    let mut done = 0;
    while done < n {
        let m = chunk.min(n - done);
        let pts: Vec<EulerAngles> = (0..m).map(|_| base.sample(&mut r)).collect();
        for lp in model.log_prob_batch(&pts, &[]).unwrap() {
            let v = volume * lp.exp();
            sum += v;
            sum_sq += v * v;
        }
        done += m;
    }
    let mean = sum / n as f64;
    let var = (sum_sq / n as f64 - mean * mean).max(0.0) * n as f64 / (n as f64 - 1.0);
    (mean, (var / n as f64).sqrt())
}

fn criterion_03_normalisation() -> Verdict {
    let start = Instant::now();
    let cfg = FlowConfig { layers: 4, kernels: 16, hidden: vec![64, 64], context_width: 0 };
    let mut r = rng(303);
    let untrained = FlowModel::new(&cfg, &mut r).unwrap();
    let mut random = untrained.clone();
    random.randomize(0.15, &mut r);
    let n = 1_000_000;
    let (m0, se0) = torus_normalisation(&untrained, n, 304);
    let (m1, se1) = torus_normalisation(&random, n, 305);
    // the untrained estimate has zero variance; allow rounding in the sum
    let ok0 = (m0 - 1.0).abs() <= 3.0 * se0 + 1e-9;
    let ok1 = (m1 - 1.0).abs() <= 3.0 * se1;
    let elapsed = start.elapsed();
    verdict(
        ok0 && ok1 && se1 > 0.0 && within(Duration::from_secs(120), elapsed),
        format!(
            "untrained {m0:.6} (se {se0:.1e}); random 4-layer {m1:.5} (se {se1:.1e}, {:.2} se from 1); {}",
            (m1 - 1.0).abs() / se1,
            secs(elapsed)
        ),
    )
}

/// Relative errors are measured against `max(|analytic|, |numeric|, GRAD_FLOOR)`.
const GRAD_FLOOR: f64 = 1e-6;

fn criterion_04_gradient_gate() -> Verdict {
    let start = Instant::now();
    let cfg = FlowConfig { layers: 2, kernels: 4, hidden: vec![64, 64], context_width: 0 };
    let mut r = rng(404);
    let mut model = FlowModel::new(&cfg, &mut r).unwrap();
    model.randomize(0.5, &mut r);
    let base = BaseDistribution::UniformTorus;
    let batch: Vec<EulerAngles> = (0..8).map(|_| base.sample(&mut r)).collect();
    let analytic = model.nll_loss(&batch, &[]).unwrap().grad;
    let params = model.params();
    let h = 1e-4;
    let mut probe = model.clone();
    let mut worst = 0.0f64;
    let mut worst_at = 0;
    let mut p = params.clone();
    for i in 0..params.len() {
        p[i] = params[i] + h;
        probe.set_params(&p).unwrap();
        let up = probe.nll_loss(&batch, &[]).unwrap().loss;
        p[i] = params[i] - h;
        probe.set_params(&p).unwrap();
        let down = probe.nll_loss(&batch, &[]).unwrap().loss;
        p[i] = params[i];
        let fd = (up - down) / (2.0 * h);
        let rel = (analytic[i] - fd).abs() / analytic[i].abs().max(fd.abs()).max(GRAD_FLOOR);
        if rel > worst {
            worst = rel;
            worst_at = i;
        }
    }
    let elapsed = start.elapsed();
    verdict(
        worst < 1e-3 && within(Duration::from_secs(120), elapsed),
        format!(
            "{} parameters, worst relative error {worst:.2e} at #{worst_at} (< 1e-3, floor {GRAD_FLOOR:e}); {}",
            params.len(),
            secs(elapsed)
        ),
    )
}

fn criterion_05_identity_init() -> Verdict {
    let mut r = rng(505);
    let model = FlowModel::new(&FlowConfig::default(), &mut r).unwrap();
    let target = -3.0 * TAU.ln();
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let e = BaseDistribution::UniformTorus.sample(&mut r);
        worst = worst.max((model.log_prob_euler(&e, &[]).unwrap() - target).abs());
    }
    verdict(
        worst < 1e-9,
        format!("log_prob = {target:.6} (-3 ln 2pi) at 100 points, max deviation {worst:.1e} (< 1e-9)"),
    )
}

/// Upper bound on the mean TORUS log-likelihood of any model on gimbal data:
/// the mean log of the exact density of the canonical Euler angles, which
/// collects the generating density at both preimages of each rotation.
fn gimbal_torus_ll_bound(spec: &GimbalSpec) -> f64 {
    let s2 = spec.sigma_sq;
    let p2 = spec.sigma_phi_sq * spec.sigma_sq;
    let normal = |x: f64, v: f64| (-0.5 * x * x / v).exp() / (TAU * v).sqrt();
    let generating = |e: &EulerAngles| {
        let a = circular_offset(e.phi - spec.phi_centre);
        let b = circular_offset(e.phi - spec.phi_centre + PI);
        normal(circular_offset(e.omega), s2)
            * normal(circular_offset(e.kappa), s2)
            * (0.5 * normal(a, p2) + 0.5 * normal(b, p2))
    };
    let mut r = rng(606);
    let n = 200_000;
    let mut total = 0.0;
    for _ in 0..n {
        let c = rotmat_to_euler(&euler_to_rotmat(&spec.sample_angles(&mut r))).unwrap();
        total += (generating(&c) + generating(&c.alternate())).ln();
    }
    total / n as f64
}

fn circular_offset(x: f64) -> f64 {
    (x + PI).rem_euclid(TAU) - PI
}

fn desk(iterations: usize, seed: u64) -> TrainConfig {
    TrainConfig { iterations, seed, eval_every: 0, ..TrainConfig::desk() }
}

fn criterion_06_gimbal_fit() -> Verdict {
    let start = Instant::now();
    let spec = GimbalSpec { seed: 6, ..Default::default() };
    let data = GeneratorSpec::Gimbal(spec.clone()).generate().unwrap();
    let out = train(&desk(5000, 6), &data).unwrap();
    let torus = evaluate_ll(&out.model, &data.test, DensityMode::Torus).unwrap();
    let haar = evaluate_ll(&out.model, &data.test, DensityMode::Haar).unwrap();
    let bound = gimbal_torus_ll_bound(&spec);
    let elapsed = start.elapsed();
    verdict(
        torus >= 2.5 && within(Duration::from_secs(900), elapsed),
        format!(
            "test LL (torus) {torus:.3} (target >= 2.5, gain {:.2} nats over uniform); \
             best achievable torus LL for this data is {bound:.3}; haar-mode LL {haar:.3}; {}",
            torus + 3.0 * TAU.ln(),
            secs(elapsed)
        ),
    )
}

fn criterion_07_ordering() -> Verdict {
    let start = Instant::now();
    let mut lls = Vec::new();
    for (i, kind) in SyntheticKind::ALL.into_iter().enumerate() {
        let spec = SyntheticSpec { seed: 70 + i as u64, ..SyntheticSpec::new(kind) };
        let data = GeneratorSpec::Synthetic(spec).generate().unwrap();
        let out = train(&desk(5000, 7), &data).unwrap();
        let torus = evaluate_ll(&out.model, &data.test, DensityMode::Torus).unwrap();
        let haar = evaluate_ll(&out.model, &data.test, DensityMode::Haar).unwrap();
        lls.push((kind, torus, haar));
    }
    let ordered = lls.windows(2).all(|w| w[0].1 > w[1].1);
    let elapsed = start.elapsed();
    let listing: Vec<String> =
        lls.iter().map(|(k, t, h)| format!("{k} {t:.3} (haar {h:.3})")).collect();
    verdict(
        ordered && within(Duration::from_secs(3600), elapsed),
        format!("torus test LL: {} ; peak > cone > cube > line: {ordered}; {}", listing.join(", "), secs(elapsed)),
    )
}

/// The four class-4 modes are sharp (0.05 rad blur) and need several
/// composed layers per angle: one Mobius mixture per angle leaves
/// wrapped-Cauchy tails holding about a fifth of the mass.
fn toy_config() -> TrainConfig {
    TrainConfig { layers: 24, lr: 1e-3, ..desk(10_000, 8) }
}

fn criterion_08_conditional() -> Verdict {
    let start = Instant::now();
    let spec = ConditionalToySpec { seed: 8, ..Default::default() };
    let data = GeneratorSpec::ConditionalToy(spec.clone()).generate().unwrap();
    let cfg = toy_config();
    let model = train(&cfg, &data).unwrap().model;
    let class4 = spec.folds.iter().position(|f| *f == 4).unwrap();
    let class1 = spec.folds.iter().position(|f| *f == 1).unwrap();
    let modes = spec.modes(class4);
    let samples = model.sample(2000, &spec.one_hot(class4), &mut rng(808)).unwrap();
    let limit = 15f64.to_radians();
    let near = samples
        .iter()
        .filter(|s| modes.iter().any(|m| geodesic_distance(m, s) < limit))
        .count();
    let frac = near as f64 / samples.len() as f64;
    // every mode should receive mass
    let mut per_mode = vec![0usize; modes.len()];
    for s in &samples {
        let (j, _) = modes
            .iter()
            .map(|m| geodesic_distance(m, s))
            .enumerate()
            .fold((0, f64::MAX), |a, (j, d)| if d < a.1 { (j, d) } else { a });
        per_mode[j] += 1;
    }
    let class1_test: Vec<_> = data
        .test
        .iter()
        .filter(|s| s.context[class1] == 1.0)
        .take(300)
        .cloned()
        .collect();
    let pose = evaluate_pose(&model, &class1_test, DEFAULT_CANDIDATES, 809).unwrap();
    let elapsed = start.elapsed();
    verdict(
        frac >= 0.85 && pose.acc30 >= 0.9 && within(Duration::from_secs(1200), elapsed),
        format!(
            "{} layers, K {}, {} iterations; class 4: {:.1}% of samples within 15 deg of a mode (>= 85%), per-mode counts {per_mode:?}; \
             class 1: acc30 {:.3} (>= 0.9), acc15 {:.3}, median {:.2} deg over {} items; {}",
            cfg.layers,
            cfg.kernels,
            cfg.iterations,
            100.0 * frac,
            pose.acc30,
            pose.acc15,
            pose.median_error_deg,
            class1_test.len(),
            secs(elapsed)
        ),
    )
}

/// Rotations whose Euler density is structured in kappa only: omega uniform,
/// phi broad around 0, kappa a four-mode mixture.
fn kappa_dominant_data(n: usize, seed: u64) -> Vec<Sample> {
    let mut r = rng(seed);
    (0..n)
        .map(|_| {
            let omega = r.random::<f64>() * TAU;
            let phi = 0.5 * r.sample::<f64, _>(StandardNormal);
            let mode = r.random_range(0..4) as f64;
            let kappa = mode * FRAC_PI_2 + 0.3 * r.sample::<f64, _>(StandardNormal);
            Sample::new(euler_to_rotmat(&EulerAngles::new(omega, phi, kappa)))
        })
        .collect()
}

fn criterion_09_sampling_density() -> Verdict {
    let start = Instant::now();
    let data = Dataset {
        name: "kappa-dominant".into(),
        context_width: 0,
        train: kappa_dominant_data(20_000, 901),
        test: kappa_dominant_data(2_000, 902),
        generator: GeneratorSpec::External { description: "four kappa modes, uniform omega, broad phi".into() },
    };
    let model = train(&desk(5000, 9), &data).unwrap().model;
    let bins = 128;
    let width = TAU / bins as f64;

    let samples = model.sample_angles(100_000, &[], &mut rng(909)).unwrap();
    let mut hist = vec![0.0; bins];
    for s in &samples {
        hist[((s.kappa / width) as usize).min(bins - 1)] += 1.0 / samples.len() as f64;
    }

    // model mass per kappa bin: 3-point Gauss-Legendre in kappa, 128-point
    // periodic trapezoid grid over omega and phi
    let grid = 128;
    let h = TAU / grid as f64;
    let gl = [(-(0.6f64).sqrt(), 5.0 / 9.0), (0.0, 8.0 / 9.0), ((0.6f64).sqrt(), 5.0 / 9.0)];
    let mut mass = vec![0.0; bins];
    let mut plane = Vec::with_capacity(grid * grid);
    for (b, m) in mass.iter_mut().enumerate() {
        let centre = (b as f64 + 0.5) * width;
        for (x, wgt) in gl {
            let kappa = centre + 0.5 * width * x;
            plane.clear();
            for i in 0..grid {
                for j in 0..grid {
                    plane.push(EulerAngles::new(i as f64 * h, j as f64 * h, kappa));
                }
            }
            let lp = model.log_prob_batch(&plane, &[]).unwrap();
            let marginal: f64 = lp.iter().map(|v| v.exp()).sum::<f64>() * h * h;
            *m += 0.5 * width * wgt * marginal;
        }
    }
    let total: f64 = mass.iter().sum();
    let tv = 0.5 * hist.iter().zip(&mass).map(|(a, b)| (a - b).abs()).sum::<f64>();
    let elapsed = start.elapsed();
    verdict(
        tv < 0.03,
        format!(
            "kappa-dominant model: TV(1e5-sample kappa histogram, quadrature marginal) = {tv:.4} (< 0.03) \
             over {bins} bins; quadrature total mass {total:.5}; {}",
            secs(elapsed)
        ),
    )
}

fn bench_ms(layers: usize) -> Result<f64, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_euler-flow"))
        .args(["bench", "--preset", "desk", "--iters", "20", "--json", "--layers", &layers.to_string()])
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(String::from_utf8_lossy(&out.stderr).into_owned());
    }
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).map_err(|e| e.to_string())?;
    v["ms_per_iter"].as_f64().ok_or_else(|| "missing ms_per_iter".to_string())
}

fn criterion_10_bench() -> Verdict {
    match (bench_ms(4), bench_ms(8)) {
        (Ok(a), Ok(b)) => verdict(
            a.is_finite() && a > 0.0 && b.is_finite() && b > a,
            format!("bench: {a:.3} ms/iteration at 4 layers, {b:.3} ms/iteration at 8 layers"),
        ),
        (a, b) => verdict(false, format!("bench failed: {a:?} / {b:?}")),
    }
}

type Criterion = (u32, &'static str, fn() -> Verdict);

const CRITERIA: [Criterion; 10] = [
    (1, "rotation_algebra", criterion_01_rotation_algebra),
    (2, "mobius_correctness", criterion_02_mobius),
    (3, "change_of_variables", criterion_03_normalisation),
    (4, "gradient_gate", criterion_04_gradient_gate),
    (5, "identity_initialization", criterion_05_identity_init),
    (6, "desk_gimbal_fit", criterion_06_gimbal_fit),
    (7, "difficulty_ordering", criterion_07_ordering),
    (8, "conditional_multimodality", criterion_08_conditional),
    (9, "sampling_density_consistency", criterion_09_sampling_density),
    (10, "bench", criterion_10_bench),
];

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        for (n, name, _) in CRITERIA {
            println!("criterion_{n:02}_{name}: test");
        }
        return;
    }
    let filters: Vec<&String> = args.iter().filter(|a| !a.starts_with('-')).collect();
    let selected: Vec<&Criterion> = CRITERIA
        .iter()
        .filter(|(n, name, _)| {
            filters.is_empty()
                || filters.iter().any(|f| {
                    f.parse::<u32>().map(|k| k == *n).unwrap_or(false)
                        || format!("criterion_{n:02}_{name}").contains(f.as_str())
                        || "acceptance".contains(f.as_str())
                })
        })
        .collect();
    println!("running {} acceptance criteria", selected.len());
    let mut failed = Vec::new();
    for (n, name, run) in selected {
        let v = run();
        println!("criterion {n:>2} {name}: {} | {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        if !v.pass {
            failed.push(*n);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all selected criteria passed");
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
