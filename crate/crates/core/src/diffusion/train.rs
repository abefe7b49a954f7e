use serde::{Deserialize, Serialize};

use super::network::{DenoiserParams, LayerGrads};
use super::schedule::{NoiseSchedule, ScheduleSpec};
use super::Checkpoint;
use crate::error::{Error, Result};
use crate::expert::ExpertDataset;
use crate::numerics::RngStream;

const INIT_STREAM: u64 = 0x696e_6974;
const TRAIN_STREAM: u64 = 0x0074_726e;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub hidden: Vec<usize>,
    pub steps: usize,
    pub beta_1: f64,
    pub beta_t: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            lr: 1e-4,
            batch: 256,
            hidden: vec![512, 1024, 1024, 512],
            steps: 1000,
            beta_1: 1e-4,
            beta_t: 0.02,
        }
    }
}

impl TrainConfig {
    /// Smaller network and schedule for CPU-scale runs.
    pub fn desk() -> Self {
        Self {
            hidden: vec![256, 512, 512, 256],
            steps: 200,
            ..Self::default()
        }
    }

    pub fn schedule_spec(&self) -> ScheduleSpec {
        ScheduleSpec {
            steps: self.steps,
            beta_1: self.beta_1,
            beta_t: self.beta_t,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch == 0 {
            return Err(Error::config("epochs and batch must be positive"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        self.schedule_spec().build().map(|_| ())
    }
}

/// Adam with the usual defaults (β₁ = 0.9, β₂ = 0.999, ε = 1e-8).
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(lr: f64, num_params: usize) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
        }
    }

    pub fn update(&mut self, params: &mut DenoiserParams, grads: &LayerGrads) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        let slots = params
            .layers
            .iter_mut()
            .zip(grads)
            .flat_map(|(l, (dw, db))| l.weight.iter_mut().zip(dw).chain(l.bias.iter_mut().zip(db)));
        for ((p, g), (m, v)) in slots.zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
    }
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub checkpoint: Checkpoint,
    /// Mean per-coordinate loss of each epoch.
    pub loss_trace: Vec<f64>,
    /// Loss of the very first minibatch, before any update.
    pub first_batch_loss: f64,
}

/// Noise-prediction MSE and its output adjoint for one minibatch.
fn batch_loss(
    params: &DenoiserParams,
    schedule: &NoiseSchedule,
    dataset: &ExpertDataset,
    indices: &[usize],
    rng: &mut RngStream,
) -> Result<(f64, LayerGrads)> {
    let k = params.k;
    let b = indices.len();
    let mut input = Vec::with_capacity(b * params.input_dim());
    let mut target = Vec::with_capacity(b * k);
    for &i in indices {
        let s = &dataset.samples[i];
        let t = 1 + rng.index(schedule.steps());
        let (zt, eps) = schedule.forward_sample(&s.z0, t, rng);
        params.push_input_row(&zt, t, &s.context, &mut input)?;
        target.extend(eps);
    }
    let cache = params.forward(input, b);
    let n = (b * k) as f64;
    let mut loss = 0.0;
    let d_out: Vec<f64> = cache
        .output()
        .iter()
        .zip(&target)
        .map(|(p, e)| {
            let r = p - e;
            loss += r * r;
            2.0 * r / n
        })
        .collect();
    let (grads, _) = params.backward(&cache, &d_out, true);
    Ok((loss / n, grads.expect("parameter gradients requested")))
}

/// Fits the denoiser to predict the injected noise on `dataset`.
pub fn train(dataset: &ExpertDataset, cfg: &TrainConfig, seed: u64) -> Result<TrainOutput> {
    cfg.validate()?;
    if dataset.samples.is_empty() {
        return Err(Error::config("cannot train on an empty dataset"));
    }
    let h = &dataset.header;
    let schedule = cfg.schedule_spec().build()?;
    let mut params = DenoiserParams::init(h.k, h.context_len, &cfg.hidden, &mut RngStream::new(seed, INIT_STREAM))?;
    let mut adam = Adam::new(cfg.lr, params.num_parameters());
    let mut rng = RngStream::new(seed, TRAIN_STREAM);
    let n = dataset.samples.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut loss_trace = Vec::with_capacity(cfg.epochs);
    let mut first_batch_loss = None;
    for epoch in 0..cfg.epochs {
        for i in (1..n).rev() {
            order.swap(i, rng.index(i + 1));
        }
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch) {
            let (loss, grads) = batch_loss(&params, &schedule, dataset, chunk, &mut rng)?;
            if !loss.is_finite() {
                return Err(Error::Numerical(format!(
                    "training diverged in epoch {epoch}; loss trace so far: {loss_trace:?}"
                )));
            }
            first_batch_loss.get_or_insert(loss);
            total += loss * chunk.len() as f64;
            adam.update(&mut params, &grads);
        }
        let mean = total / n as f64;
        log::debug!("epoch {epoch}: loss {mean:.6}");
        loss_trace.push(mean);
    }
    log::info!(
        "trained {} epochs on {} samples, final loss {:.6}",
        cfg.epochs,
        n,
        loss_trace.last().copied().unwrap_or(f64::NAN)
    );
    Ok(TrainOutput {
        checkpoint: Checkpoint::new(params, cfg, &dataset.header, loss_trace.clone()),
        loss_trace,
        first_batch_loss: first_batch_loss.expect("at least one batch"),
    })
}
