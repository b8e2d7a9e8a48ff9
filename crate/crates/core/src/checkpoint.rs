//! Versioned JSON checkpoints and model cards.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::flow::FlowModel;
use crate::neural::OptimizerState;
use crate::train::TrainConfig;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub model: FlowModel,
    pub optimizer: Option<OptimizerState>,
    pub config: TrainConfig,
    pub iterations_done: usize,
}

impl Checkpoint {
    pub fn new(
        model: FlowModel,
        optimizer: Option<OptimizerState>,
        config: TrainConfig,
        iterations_done: usize,
    ) -> Self {
        Checkpoint { version: CHECKPOINT_VERSION, model, optimizer, config, iterations_done }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut w, self)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
        let value: serde_json::Value = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        Self::from_value(value)
    }

    pub fn from_value(value: serde_json::Value) -> Result<Checkpoint> {
        let version = value
            .get("version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::CorruptRecord("checkpoint has no version field".into()))?;
        if version != CHECKPOINT_VERSION as u64 {
            return Err(Error::FormatVersionMismatch {
                found: version.min(u32::MAX as u64) as u32,
                expected: CHECKPOINT_VERSION,
            });
        }
        let ck: Checkpoint = serde_json::from_value(value)?;
        if let Some(opt) = &ck.optimizer {
            if opt.len() != ck.model.num_params() {
                return Err(Error::StateMismatch(format!(
                    "optimizer tracks {} parameters, model has {}",
                    opt.len(),
                    ck.model.num_params()
                )));
            }
        }
        Ok(ck)
    }

    pub fn model_card(&self) -> serde_json::Value {
        model_card(&self.model, Some(self))
    }
}

/// Summary of a model for humans and tools.
pub fn model_card(model: &FlowModel, checkpoint: Option<&Checkpoint>) -> serde_json::Value {
    let cfg = model.config();
    let mut card = json!({
        "layers": cfg.layers,
        "kernels": cfg.kernels,
        "hidden": cfg.hidden,
        "context_width": cfg.context_width,
        "parameters": model.num_params(),
        "base": model.base(),
        "angle_order": ["omega", "phi", "kappa"],
        "reporting_modes": {
            "torus": "log-density with respect to d omega d phi d kappa on [0, 2 pi)^3",
            "haar": "log-density relative to the normalised Haar measure on SO(3): \
                     logsumexp over both Euler preimages + ln(8 pi^2) - ln|cos phi|",
        },
    });
    if let Some(ck) = checkpoint {
        card["iterations_done"] = json!(ck.iterations_done);
        card["seed"] = json!(ck.config.seed);
        card["format_version"] = json!(ck.version);
    }
    card
}
