//! Conditional denoising diffusion over port logits: noise schedule,
//! noise-prediction network, training, and energy-guided sampling.

mod network;
mod sampler;
mod schedule;
mod train;

pub use network::{time_embedding, DenoiserParams, ForwardCache, Layer, LayerGrads, TIME_EMBED_DIM};
pub use sampler::{guided_reverse_sample, GradMode, SampleOutcome, SamplerConfig};
pub use schedule::{build_schedule, NoiseSchedule, ScheduleSpec};
pub use train::{train, Adam, TrainConfig, TrainOutput};

use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

use crate::control::Mode;
use crate::error::{Error, Result};
use crate::expert::DatasetHeader;
use crate::scenario::ScenarioConfig;

const CHECKPOINT_FORMAT: &str = "fluidsense-checkpoint/1";

/// A trained policy with everything needed to sample from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub schedule: ScheduleSpec,
    pub dataset_hash: String,
    /// Mode of the training labels; absent for mixed-mode datasets.
    pub mode: Option<Mode>,
    pub scenario: ScenarioConfig,
    pub train: TrainConfig,
    pub loss_trace: Vec<f64>,
    pub params: DenoiserParams,
}

impl Checkpoint {
    pub fn new(params: DenoiserParams, cfg: &TrainConfig, header: &DatasetHeader, loss_trace: Vec<f64>) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            schedule: cfg.schedule_spec(),
            dataset_hash: header.config_hash.clone(),
            mode: (!header.expert.mixed_mode).then_some(header.scenario.mode),
            scenario: header.scenario.clone(),
            train: cfg.clone(),
            loss_trace,
            params,
        }
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        self.schedule.build()
    }

    /// Errors unless the network fits `k` ports and a `context_len` context.
    pub fn check_compatible(&self, k: usize, context_len: usize) -> Result<()> {
        if self.params.k != k || self.params.context_len != context_len {
            return Err(Error::config(format!(
                "checkpoint was trained for K = {}, context length {}; scenario has K = {k}, context length {context_len}",
                self.params.k, self.params.context_len
            )));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(self).map_err(|e| Error::config(e.to_string()))?;
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::Format {
            path: path.to_owned(),
            message: e.to_string(),
        })?;
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(Error::Format {
                path: path.to_owned(),
                message: format!("unsupported checkpoint format '{}'", ckpt.format),
            });
        }
        ckpt.params.validate()?;
        ckpt.schedule()?;
        Ok(ckpt)
    }
}
