//! Command-line front end for `euler-flow`.
//!
//! [`run`] takes the full argument vector and two output streams and returns the
//! process exit code: 0 on success, 1 on usage errors, 2 on runtime failures.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use euler_flow::checkpoint::{model_card, Checkpoint};
use euler_flow::datasets::{
    ConditionalToySpec, Dataset, GeneratorSpec, GimbalSpec, Split, SyntheticKind, SyntheticSpec,
};
use euler_flow::eval::{evaluate_ll, evaluate_pose, DEFAULT_CANDIDATES};
use euler_flow::flow::{DensityMode, FlowModel};
use euler_flow::rotation::RotationMatrix;
use euler_flow::train::{bench, Preset, TrainConfig, Trainer};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_FAILURE: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "euler-flow", version, about = "Euler-angle normalizing flows on SO(3)")]
#[command(arg_required_else_help = true, propagate_version = true)]
pub struct Cli {
    /// Seed for every random choice made by the command.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = "EULER_FLOW_THREADS")]
    threads: Option<usize>,
    /// Print a single JSON document on stdout instead of text.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a dataset file.
    Generate(GenerateArgs),
    /// Train a model on a dataset file and write a checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on the test split of a dataset.
    Eval(EvalArgs),
    /// Draw rotations from a checkpoint into a CSV file.
    Sample(SampleArgs),
    /// Time training iterations.
    Bench(BenchArgs),
    /// Export rotations (and model densities) for external visualisers.
    ExportViz(ExportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Kind {
    Gimbal,
    Peak,
    Cone,
    Cube,
    Line,
    Toy,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    /// Generator to use.
    #[arg(long, value_enum)]
    kind: Kind,
    /// Output dataset file.
    #[arg(long)]
    out: PathBuf,
    /// Gimbal: variance of omega and kappa.
    #[arg(long, default_value_t = 0.1)]
    sigma_sq: f64,
    /// Gimbal: relative variance of phi around the singularities.
    #[arg(long, default_value_t = 0.1)]
    sigma_phi_sq: f64,
    /// Synthetic and toy sets: tangent-space noise in radians.
    #[arg(long)]
    noise: Option<f64>,
    /// Toy set: comma-separated fold count per class.
    #[arg(long, value_delimiter = ',', default_value = "1,4")]
    folds: Vec<usize>,
    /// Training samples (generator default when omitted).
    #[arg(long)]
    train_n: Option<usize>,
    /// Test samples (generator default when omitted).
    #[arg(long)]
    test_n: Option<usize>,
    /// Also write the training split as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ArchArgs {
    /// Preset supplying defaults.
    #[arg(long, default_value = "desk")]
    preset: String,
    /// JSON file with TrainConfig fields; overrides the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Number of coupling layers.
    #[arg(long)]
    layers: Option<usize>,
    /// Mobius kernels per layer.
    #[arg(long)]
    kernels: Option<usize>,
    /// Comma-separated hidden widths of the conditioner.
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    /// Mini-batch size.
    #[arg(long)]
    batch: Option<usize>,
    /// Adam learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// Training iterations.
    #[arg(long)]
    iterations: Option<usize>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Dataset file.
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint to write.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    arch: ArchArgs,
    /// Iterations between held-out evaluations (0 disables them).
    #[arg(long)]
    eval_every: Option<usize>,
    /// JSON-lines training log.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Torus,
    Haar,
}

impl From<ModeArg> for DensityMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Torus => DensityMode::Torus,
            ModeArg::Haar => DensityMode::Haar,
        }
    }
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Checkpoint to evaluate.
    #[arg(long)]
    model: PathBuf,
    /// Dataset whose test split is scored.
    #[arg(long)]
    data: PathBuf,
    /// Reporting mode of `test_ll`; both modes are always included in JSON.
    #[arg(long, value_enum, default_value = "torus")]
    mode: ModeArg,
    /// Also compute Acc@15, Acc@30 and the median error from mode estimates.
    #[arg(long)]
    pose: bool,
    /// Candidates per mode estimate.
    #[arg(long, default_value_t = DEFAULT_CANDIDATES)]
    candidates: usize,
    /// Use at most this many test items for pose metrics.
    #[arg(long)]
    max_items: Option<usize>,
}

#[derive(Args, Debug)]
struct SampleArgs {
    /// Checkpoint to sample from.
    #[arg(long)]
    model: PathBuf,
    /// Number of rotations.
    #[arg(short = 'n', long = "num", default_value_t = 1000)]
    n: usize,
    /// Output CSV.
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated context vector for conditional models.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    context: Option<Vec<f64>>,
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// Dataset file; a gimbal set is generated from the seed when omitted.
    #[arg(long)]
    data: Option<PathBuf>,
    #[command(flatten)]
    arch: ArchArgs,
    /// Timed iterations (after 5 warm-up iterations).
    #[arg(long, default_value_t = 20)]
    iters: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Args, Debug)]
struct ExportArgs {
    /// Export samples and densities of this checkpoint.
    #[arg(long, conflicts_with = "data", required_unless_present = "data")]
    model: Option<PathBuf>,
    /// Export every record of this dataset.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output file.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    /// Samples drawn from a model.
    #[arg(short = 'n', long = "num", default_value_t = 1000)]
    n: usize,
    /// Comma-separated context vector for conditional models.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    context: Option<Vec<f64>>,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, out: &mut (dyn Write + Send), err: &mut (dyn Write + Send)) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{text}");
                    EXIT_OK
                }
                _ => {
                    let _ = write!(err, "{text}");
                    EXIT_USAGE
                }
            };
        }
    };
    match execute(&cli, out, err) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e:#}");
            EXIT_FAILURE
        }
    }
}

fn execute(cli: &Cli, out: &mut (dyn Write + Send), err: &mut (dyn Write + Send)) -> Result<()> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            bail!("--threads must be at least 1");
        }
        builder = builder.num_threads(n);
    }
    let pool = builder.build().context("building the worker pool")?;
    pool.install(|| match &cli.command {
        Command::Generate(a) => generate(cli, a, out),
        Command::Train(a) => train_cmd(cli, a, out, err),
        Command::Eval(a) => eval_cmd(cli, a, out),
        Command::Sample(a) => sample_cmd(cli, a, out),
        Command::Bench(a) => bench_cmd(cli, a, out),
        Command::ExportViz(a) => export_cmd(cli, a, out),
    })
}

fn emit(cli: &Cli, out: &mut (dyn Write + Send), value: Value, text: String) -> Result<()> {
    if cli.json {
        serde_json::to_writer_pretty(&mut *out, &value)?;
        writeln!(out)?;
    } else {
        writeln!(out, "{text}")?;
    }
    Ok(())
}

fn load_dataset(path: &Path) -> Result<Dataset> {
    Dataset::load(path).with_context(|| format!("loading dataset {}", path.display()))
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn generate(cli: &Cli, a: &GenerateArgs, out: &mut (dyn Write + Send)) -> Result<()> {
    let spec = match a.kind {
        Kind::Gimbal => {
            let mut s = GimbalSpec {
                sigma_sq: a.sigma_sq,
                sigma_phi_sq: a.sigma_phi_sq,
                seed: cli.seed,
                ..Default::default()
            };
            s.train_n = a.train_n.unwrap_or(s.train_n);
            s.test_n = a.test_n.unwrap_or(s.test_n);
            GeneratorSpec::Gimbal(s)
        }
        Kind::Toy => {
            let mut s = ConditionalToySpec { folds: a.folds.clone(), seed: cli.seed, ..Default::default() };
            s.noise = a.noise.unwrap_or(s.noise);
            s.train_n = a.train_n.unwrap_or(s.train_n);
            s.test_n = a.test_n.unwrap_or(s.test_n);
            GeneratorSpec::ConditionalToy(s)
        }
        k => {
            let kind = match k {
                Kind::Peak => SyntheticKind::Peak,
                Kind::Cone => SyntheticKind::Cone,
                Kind::Cube => SyntheticKind::Cube,
                _ => SyntheticKind::Line,
            };
            let mut s = SyntheticSpec { seed: cli.seed, ..SyntheticSpec::new(kind) };
            s.noise = a.noise.unwrap_or(s.noise);
            s.train_n = a.train_n.unwrap_or(s.train_n);
            s.test_n = a.test_n.unwrap_or(s.test_n);
            GeneratorSpec::Synthetic(s)
        }
    };
    let data = spec.generate()?;
    data.save(&a.out).with_context(|| format!("writing {}", a.out.display()))?;
    if let Some(csv) = &a.csv {
        data.export_csv(Split::Train, csv)?;
    }
    emit(
        cli,
        out,
        json!({
            "path": a.out,
            "name": data.name,
            "train": data.train.len(),
            "test": data.test.len(),
            "context_width": data.context_width,
            "generator": data.generator,
        }),
        format!(
            "wrote {} ({} train, {} test records) to {}",
            data.name,
            data.train.len(),
            data.test.len(),
            a.out.display()
        ),
    )
}

/// Preset, then config file, then explicit flags.
fn resolve_config(cli: &Cli, a: &ArchArgs) -> Result<TrainConfig> {
    let preset: Preset = a.preset.parse()?;
    let mut value = serde_json::to_value(TrainConfig::preset(preset))?;
    if let Some(path) = &a.config {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let file: Value = serde_json::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        let Value::Object(fields) = file else {
            bail!("config file must contain a JSON object");
        };
        let target = value.as_object_mut().expect("config serialises to an object");
        for (k, v) in fields {
            if !target.contains_key(&k) {
                bail!("unknown config field `{k}`");
            }
            target.insert(k, v);
        }
    }
    let mut cfg: TrainConfig = serde_json::from_value(value).context("invalid config")?;
    if let Some(v) = a.layers {
        cfg.layers = v;
    }
    if let Some(v) = a.kernels {
        cfg.kernels = v;
    }
    if let Some(v) = &a.hidden {
        cfg.hidden = v.clone();
    }
    if let Some(v) = a.batch {
        cfg.batch = v;
    }
    if let Some(v) = a.lr {
        cfg.lr = v;
    }
    if let Some(v) = a.iterations {
        cfg.iterations = v;
    }
    cfg.seed = cli.seed;
    cfg.validate()?;
    Ok(cfg)
}

fn train_cmd(cli: &Cli, a: &TrainArgs, out: &mut (dyn Write + Send), err: &mut (dyn Write + Send)) -> Result<()> {
    let mut cfg = resolve_config(cli, &a.arch)?;
    if let Some(e) = a.eval_every {
        cfg.eval_every = e;
    }
    cfg.checkpoint_path = Some(a.out.clone());
    cfg.log_path = a.log.clone();
    let data = load_dataset(&a.data)?;
    let outcome = Trainer::new(&cfg, &data)?.run(|r| {
        let _ = writeln!(
            err,
            "iter {:>6}  train_loss {:>9.4}  test_ll {:>9.4}  {:>8.1} s",
            r.iter,
            r.train_loss,
            r.test_ll,
            r.wall_ms / 1e3
        );
    })?;
    let last = outcome.snapshots.last().cloned();
    let test_ll = last.as_ref().map(|r| r.test_ll).unwrap_or(f64::NAN);
    emit(
        cli,
        out,
        json!({
            "checkpoint": a.out,
            "iterations": outcome.history.len(),
            "final_train_loss": outcome.history.last(),
            "test_ll": test_ll,
            "mode": DensityMode::Torus,
            "config": cfg,
        }),
        format!(
            "trained {} iterations; snapshot test_ll (torus) {:.4}; checkpoint {}",
            outcome.history.len(),
            test_ll,
            a.out.display()
        ),
    )
}

fn eval_cmd(cli: &Cli, a: &EvalArgs, out: &mut (dyn Write + Send)) -> Result<()> {
    let ck = load_checkpoint(&a.model)?;
    let data = load_dataset(&a.data)?;
    check_widths(&ck.model, &data)?;
    let torus = evaluate_ll(&ck.model, &data.test, DensityMode::Torus)?;
    let haar = evaluate_ll(&ck.model, &data.test, DensityMode::Haar)?;
    let mode: DensityMode = a.mode.into();
    let test_ll = if mode == DensityMode::Torus { torus } else { haar };
    let mut report = json!({
        "test_ll": test_ll,
        "mode": mode,
        "test_ll_torus": torus,
        "test_ll_haar": haar,
        "n": data.test.len(),
        "model": model_card(&ck.model, Some(&ck)),
    });
    let mut text = format!("test_ll ({mode}) {test_ll:.4}  [torus {torus:.4}, haar {haar:.4}]");
    if a.pose {
        let n = a.max_items.unwrap_or(data.test.len()).min(data.test.len());
        let m = evaluate_pose(&ck.model, &data.test[..n], a.candidates, cli.seed)?;
        report["acc15"] = json!(m.acc15);
        report["acc30"] = json!(m.acc30);
        report["median_error_deg"] = json!(m.median_error_deg);
        report["pose_items"] = json!(n);
        text.push_str(&format!(
            "\nacc15 {:.4}  acc30 {:.4}  median {:.2} deg  ({n} items)",
            m.acc15, m.acc30, m.median_error_deg
        ));
    }
    emit(cli, out, report, text)
}

fn check_widths(model: &FlowModel, data: &Dataset) -> Result<()> {
    if model.context_width() != data.context_width {
        bail!(
            "model expects context width {}, dataset has {}",
            model.context_width(),
            data.context_width
        );
    }
    Ok(())
}

fn context_for(model: &FlowModel, ctx: &Option<Vec<f64>>) -> Result<Vec<f64>> {
    let ctx = ctx.clone().unwrap_or_default();
    if ctx.len() != model.context_width() {
        return Err(anyhow!(
            "model expects a context of width {} (pass --context), got {}",
            model.context_width(),
            ctx.len()
        ));
    }
    Ok(ctx)
}

fn rotation_header() -> Vec<String> {
    (0..9).map(|i| format!("r{}{}", i / 3, i % 3)).collect()
}

fn write_rotations_csv(
    path: &Path,
    rotations: &[RotationMatrix],
    log_density: Option<&[f64]>,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    let mut header = rotation_header();
    if log_density.is_some() {
        header.push("log_density".into());
    }
    w.write_record(&header)?;
    for (i, r) in rotations.iter().enumerate() {
        let mut row: Vec<String> = r.to_row_major().iter().map(|v| format!("{v:e}")).collect();
        if let Some(ld) = log_density {
            row.push(format!("{:e}", ld[i]));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn sample_cmd(cli: &Cli, a: &SampleArgs, out: &mut (dyn Write + Send)) -> Result<()> {
    let ck = load_checkpoint(&a.model)?;
    let ctx = context_for(&ck.model, &a.context)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cli.seed);
    let rotations = ck.model.sample(a.n, &ctx, &mut rng)?;
    write_rotations_csv(&a.out, &rotations, None)?;
    emit(
        cli,
        out,
        json!({ "path": a.out, "samples": rotations.len() }),
        format!("wrote {} samples to {}", rotations.len(), a.out.display()),
    )
}

fn bench_cmd(cli: &Cli, a: &BenchArgs, out: &mut (dyn Write + Send)) -> Result<()> {
    let cfg = resolve_config(cli, &a.arch)?;
    let data = match &a.data {
        Some(p) => load_dataset(p)?,
        None => GeneratorSpec::Gimbal(GimbalSpec {
            train_n: 10_000,
            test_n: 100,
            seed: cli.seed,
            ..Default::default()
        })
        .generate()?,
    };
    let report = bench(&cfg, &data, a.iters)?;
    let text = format!(
        "{:.3} ms/iteration ({} layers, K = {}, batch {}, {} threads, {} timed iterations)",
        report.ms_per_iter, report.layers, report.kernels, report.batch, report.threads, report.iterations
    );
    emit(cli, out, serde_json::to_value(&report)?, text)
}

fn export_cmd(cli: &Cli, a: &ExportArgs, out: &mut (dyn Write + Send)) -> Result<()> {
    if let Some(path) = &a.data {
        let data = load_dataset(path)?;
        let rows = data.train.len() + data.test.len();
        match a.format {
            Format::Csv => {
                let mut w = csv::Writer::from_writer(BufWriter::new(File::create(&a.out)?));
                let mut header = vec!["split".to_string()];
                header.extend(rotation_header());
                header.extend((0..data.context_width).map(|i| format!("c{i}")));
                w.write_record(&header)?;
                for (split, samples) in [("train", &data.train), ("test", &data.test)] {
                    for s in samples {
                        let mut row = vec![split.to_string()];
                        row.extend(
                            s.rotation.to_row_major().iter().chain(&s.context).map(|v| format!("{v:e}")),
                        );
                        w.write_record(&row)?;
                    }
                }
                w.flush()?;
            }
            Format::Json => {
                let records = |samples: &[euler_flow::datasets::Sample]| -> Vec<Value> {
                    samples
                        .iter()
                        .map(|s| json!({ "rotation": s.rotation.to_row_major(), "context": s.context }))
                        .collect()
                };
                let doc = json!({
                    "name": data.name,
                    "train": records(&data.train),
                    "test": records(&data.test),
                });
                let mut w = BufWriter::new(File::create(&a.out)?);
                serde_json::to_writer(&mut w, &doc)?;
                w.flush()?;
            }
        }
        return emit(
            cli,
            out,
            json!({ "path": a.out, "rows": rows }),
            format!("exported {rows} rotations to {}", a.out.display()),
        );
    }
    let path = a.model.as_ref().expect("clap enforces --model or --data");
    let ck = load_checkpoint(path)?;
    let ctx = context_for(&ck.model, &a.context)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cli.seed);
    let rotations = ck.model.sample(a.n, &ctx, &mut rng)?;
    let density = ck.model.log_prob_rotations(&rotations, &ctx, DensityMode::Haar)?;
    match a.format {
        Format::Csv => write_rotations_csv(&a.out, &rotations, Some(&density))?,
        Format::Json => {
            let rows: Vec<[f64; 9]> = rotations.iter().map(|r| r.to_row_major()).collect();
            let doc = json!({ "rotations": rows, "log_density": density, "mode": DensityMode::Haar });
            let mut w = BufWriter::new(File::create(&a.out)?);
            serde_json::to_writer(&mut w, &doc)?;
            w.flush()?;
        }
    }
    emit(
        cli,
        out,
        json!({ "path": a.out, "rows": rotations.len() }),
        format!("exported {} samples to {}", rotations.len(), a.out.display()),
    )
}
