//! Maximum-likelihood training with Adam.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::datasets::{Dataset, Split};
use crate::error::{Error, Result};
use crate::eval::evaluate_ll;
use crate::flow::{DensityMode, FlowConfig, FlowModel};
use crate::neural::OptimizerState;
use crate::rotation::EulerAngles;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Paper,
    Desk,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "paper" => Ok(Preset::Paper),
            "desk" => Ok(Preset::Desk),
            other => Err(Error::InvalidConfig(format!("unknown preset `{other}`"))),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Paper => "paper",
            Preset::Desk => "desk",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub layers: usize,
    pub kernels: usize,
    pub hidden: Vec<usize>,
    pub batch: usize,
    pub lr: f64,
    pub iterations: usize,
    pub seed: u64,
    /// Iterations between evaluation snapshots; 0 means only at the end.
    pub eval_every: usize,
    /// Test points used by snapshots (the whole test split when 0).
    pub eval_size: usize,
    /// Gradients with a larger Euclidean norm are rescaled to this norm.
    pub clip_norm: f64,
    pub checkpoint_path: Option<PathBuf>,
    pub log_path: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::preset(Preset::Paper)
    }
}

impl TrainConfig {
    pub fn preset(p: Preset) -> Self {
        match p {
            Preset::Paper => TrainConfig {
                layers: 24,
                kernels: 64,
                hidden: vec![64, 64],
                batch: 1024,
                lr: 1e-4,
                iterations: 50_000,
                seed: 0,
                eval_every: 1000,
                eval_size: 0,
                clip_norm: 100.0,
                checkpoint_path: None,
                log_path: None,
            },
            Preset::Desk => TrainConfig {
                layers: 4,
                kernels: 16,
                hidden: vec![64, 64],
                batch: 256,
                lr: 3e-3,
                iterations: 5000,
                seed: 0,
                eval_every: 500,
                eval_size: 2000,
                clip_norm: 100.0,
                checkpoint_path: None,
                log_path: None,
            },
        }
    }

    pub fn paper() -> Self {
        Self::preset(Preset::Paper)
    }

    pub fn desk() -> Self {
        Self::preset(Preset::Desk)
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("layers", self.layers),
            ("kernels", self.kernels),
            ("batch", self.batch),
            ("iterations", self.iterations),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidConfig(format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::InvalidConfig("clip_norm must be positive".into()));
        }
        self.flow_config(0).validate()
    }

    pub fn flow_config(&self, context_width: usize) -> FlowConfig {
        FlowConfig {
            layers: self.layers,
            kernels: self.kernels,
            hidden: self.hidden.clone(),
            context_width,
        }
    }
}

/// One line of the JSON-lines training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub iter: usize,
    pub train_loss: f64,
    pub test_ll: f64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: FlowModel,
    pub optimizer: OptimizerState,
    /// Mini-batch loss of every iteration.
    pub history: Vec<f64>,
    pub snapshots: Vec<LogRecord>,
}

/// Mini-batch trainer holding the model, optimizer and data views.
pub struct Trainer {
    config: TrainConfig,
    model: FlowModel,
    optimizer: OptimizerState,
    rng: ChaCha8Rng,
    train_angles: Vec<EulerAngles>,
    train_ctx: Vec<f64>,
    eval_angles: Vec<EulerAngles>,
    eval_ctx: Vec<f64>,
    context_width: usize,
    iter: usize,
    history: Vec<f64>,
    batch_angles: Vec<EulerAngles>,
    batch_ctx: Vec<f64>,
}

impl Trainer {
    /// Fresh identity-initialised model sized from `config` and the dataset.
    pub fn new(config: &TrainConfig, dataset: &Dataset) -> Result<Self> {
        config.validate()?;
        let mut init_rng = ChaCha8Rng::seed_from_u64(config.seed);
        let model = FlowModel::new(&config.flow_config(dataset.context_width), &mut init_rng)?;
        let optimizer = OptimizerState::new(model.num_params(), config.lr);
        Self::with_state(config, dataset, model, optimizer)
    }

    pub fn with_state(
        config: &TrainConfig,
        dataset: &Dataset,
        model: FlowModel,
        optimizer: OptimizerState,
    ) -> Result<Self> {
        config.validate()?;
        if dataset.train.is_empty() {
            return Err(Error::InvalidConfig("training split is empty".into()));
        }
        if model.context_width() != dataset.context_width {
            return Err(Error::InvalidConfig(format!(
                "model context width {} does not match dataset context width {}",
                model.context_width(),
                dataset.context_width
            )));
        }
        if optimizer.len() != model.num_params() {
            return Err(Error::StateMismatch(format!(
                "optimizer tracks {} parameters, model has {}",
                optimizer.len(),
                model.num_params()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(1);
        let eval_n = match config.eval_size {
            0 => dataset.test.len(),
            n => n.min(dataset.test.len()),
        };
        let eval_angles = dataset.angles(Split::Test)[..eval_n].to_vec();
        let eval_ctx = dataset.contexts(Split::Test)[..eval_n * dataset.context_width].to_vec();
        Ok(Trainer {
            config: config.clone(),
            model,
            optimizer,
            rng,
            train_angles: dataset.angles(Split::Train),
            train_ctx: dataset.contexts(Split::Train),
            eval_angles,
            eval_ctx,
            context_width: dataset.context_width,
            iter: 0,
            history: Vec::with_capacity(config.iterations),
            batch_angles: Vec::with_capacity(config.batch),
            batch_ctx: Vec::with_capacity(config.batch * dataset.context_width),
        })
    }

    pub fn model(&self) -> &FlowModel {
        &self.model
    }

    pub fn iteration(&self) -> usize {
        self.iter
    }

    /// One Adam step on a uniformly drawn mini-batch; returns the batch loss.
    pub fn step(&mut self) -> Result<f64> {
        let n = self.train_angles.len();
        let c = self.context_width;
        self.batch_angles.clear();
        self.batch_ctx.clear();
        for _ in 0..self.config.batch {
            let i = self.rng.random_range(0..n);
            self.batch_angles.push(self.train_angles[i]);
            self.batch_ctx.extend_from_slice(&self.train_ctx[i * c..(i + 1) * c]);
        }
        let out = self.model.nll_loss(&self.batch_angles, &self.batch_ctx)?;
        if let Some(batch_index) = out.first_non_finite {
            return Err(Error::NonFiniteLoss { iteration: self.iter, batch_index });
        }
        let mut grad = out.grad;
        if let Some(batch_index) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFiniteLoss { iteration: self.iter, batch_index });
        }
        clip_norm(&mut grad, self.config.clip_norm);
        let mut params = self.model.params();
        self.optimizer.step(&mut params, &grad)?;
        self.model.set_params(&params)?;
        self.iter += 1;
        self.history.push(out.loss);
        Ok(out.loss)
    }

    /// Mean TORUS log-likelihood on the snapshot subset of the test split.
    pub fn test_ll(&self) -> Result<f64> {
        if self.eval_angles.is_empty() {
            return Ok(f64::NAN);
        }
        let lp = self.model.log_prob_batch(&self.eval_angles, &self.eval_ctx)?;
        Ok(lp.iter().sum::<f64>() / lp.len() as f64)
    }

    /// Runs the configured number of iterations, calling `on_snapshot` for each
    /// evaluation snapshot, writing the log and final checkpoint if configured.
    pub fn run(mut self, mut on_snapshot: impl FnMut(&LogRecord)) -> Result<TrainOutcome> {
        let mut log = match &self.config.log_path {
            Some(p) => Some(BufWriter::new(File::create(p)?)),
            None => None,
        };
        let start = Instant::now();
        let mut snapshots = Vec::new();
        let total = self.config.iterations;
        while self.iter < total {
            let loss = self.step()?;
            let due = self.config.eval_every > 0 && self.iter.is_multiple_of(self.config.eval_every);
            if due || self.iter == total {
                let rec = LogRecord {
                    iter: self.iter,
                    train_loss: loss,
                    test_ll: self.test_ll()?,
                    wall_ms: start.elapsed().as_secs_f64() * 1e3,
                };
                if let Some(w) = log.as_mut() {
                    serde_json::to_writer(&mut *w, &rec)?;
                    w.write_all(b"\n")?;
                    w.flush()?;
                }
                on_snapshot(&rec);
                snapshots.push(rec);
            }
        }
        if let Some(path) = &self.config.checkpoint_path {
            Checkpoint::new(self.model.clone(), Some(self.optimizer.clone()), self.config.clone(), self.iter)
                .save(path)?;
        }
        Ok(TrainOutcome {
            model: self.model,
            optimizer: self.optimizer,
            history: self.history,
            snapshots,
        })
    }
}

/// Trains a fresh model on the training split.
pub fn train(config: &TrainConfig, dataset: &Dataset) -> Result<TrainOutcome> {
    Trainer::new(config, dataset)?.run(|_| {})
}

/// Rescales `grad` in place so its norm is at most `max_norm`; returns the
/// original norm.
pub fn clip_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grad.iter_mut() {
            *g *= s;
        }
    }
    norm
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub ms_per_iter: f64,
    pub iterations: usize,
    pub warmup: usize,
    pub layers: usize,
    pub kernels: usize,
    pub batch: usize,
    pub threads: usize,
}

pub const BENCH_WARMUP: usize = 5;

/// Mean wall-clock time of `n_iters` training iterations after a short warm-up.
pub fn bench(config: &TrainConfig, dataset: &Dataset, n_iters: usize) -> Result<BenchReport> {
    if n_iters < 10 {
        return Err(Error::InvalidConfig(format!("bench needs at least 10 iterations, got {n_iters}")));
    }
    let mut cfg = config.clone();
    cfg.iterations = n_iters + BENCH_WARMUP;
    let mut trainer = Trainer::new(&cfg, dataset)?;
    for _ in 0..BENCH_WARMUP {
        trainer.step()?;
    }
    let start = Instant::now();
    for _ in 0..n_iters {
        trainer.step()?;
    }
    let ms = start.elapsed().as_secs_f64() * 1e3 / n_iters as f64;
    Ok(BenchReport {
        ms_per_iter: ms,
        iterations: n_iters,
        warmup: BENCH_WARMUP,
        layers: cfg.layers,
        kernels: cfg.kernels,
        batch: cfg.batch,
        threads: rayon::current_num_threads(),
    })
}

/// Mean log-likelihood of the test split of `dataset`.
pub fn evaluate_dataset(model: &FlowModel, dataset: &Dataset, mode: DensityMode) -> Result<f64> {
    evaluate_ll(model, &dataset.test, mode)
}
