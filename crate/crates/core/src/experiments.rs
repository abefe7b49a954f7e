//! Experiment harness: baselines, the cooperative (Case 2) and stealth
//! (Case 1) sweeps, and result emission.
//!
//! Every random draw of a trial comes from streams keyed by the sweep seed
//! and the channel index, never by the sweep value or the scheme. Schemes
//! therefore see the same channels and the same disturbance, and rows that
//! do not depend on the swept quantity repeat exactly.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::sample_port_channel;
use crate::control::{effective_coupling, mask_from_indices, mask_to_real, Mode};
use crate::diffusion::{guided_reverse_sample, Checkpoint, NoiseSchedule, SamplerConfig, TrainConfig};
use crate::error::{Error, Result};
use crate::expert::ExpertConfig;
use crate::numerics::RngStream;
use crate::scenario::{ScenarioConfig, ScenarioInstance, ScenarioModel};
use crate::sensing::{
    aggregate_metrics, calibrate_threshold_with, min_calibration_draws, Hypothesis, MetricsRecord, TrialOutcome,
};

const CALIBRATION_STREAM: u64 = 0x6361_6c69;
const CHANNEL_STREAM: u64 = 0x6368_616e;
const SAMPLER_STREAM: u64 = 0x7361_6d70;
const RANDOM_MASK_STREAM: u64 = 0x726e_646d;
const SNAPSHOT_STREAM: u64 = 0x736e_6170;

/// Quantity varied along a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVariable {
    MActive,
    MObs,
    /// Side of the square aperture, in wavelengths.
    Aperture,
    PFa,
    /// Clutter standard deviation `σ_c`.
    SigmaC,
    Delta,
}

impl SweepVariable {
    pub const ALL: [SweepVariable; 6] = [
        SweepVariable::MActive,
        SweepVariable::MObs,
        SweepVariable::Aperture,
        SweepVariable::PFa,
        SweepVariable::SigmaC,
        SweepVariable::Delta,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SweepVariable::MActive => "m_active",
            SweepVariable::MObs => "m_obs",
            SweepVariable::Aperture => "aperture",
            SweepVariable::PFa => "p_fa",
            SweepVariable::SigmaC => "sigma_c",
            SweepVariable::Delta => "delta",
        }
    }

    pub fn default_grid(self) -> Vec<f64> {
        match self {
            SweepVariable::MActive => vec![1.0, 2.0, 3.0, 5.0, 10.0, 20.0, 40.0, 60.0],
            SweepVariable::MObs => vec![5.0, 10.0, 15.0, 20.0, 30.0, 60.0],
            SweepVariable::Aperture => vec![0.25, 0.5, 1.0, 2.0, 4.0],
            SweepVariable::PFa => vec![1e-4, 1e-3, 1e-2, 1e-1],
            SweepVariable::SigmaC => vec![0.25, 0.5, 1.0, 2.0],
            SweepVariable::Delta => vec![0.0, 1.0, 2.0, 4.0, 8.0, 16.0],
        }
    }

    /// `cfg` with this variable set to `value`.
    pub fn apply(self, cfg: &ScenarioConfig, value: f64) -> Result<ScenarioConfig> {
        let count = |v: f64| {
            if v >= 0.0 && v.fract() == 0.0 && v <= u32::MAX as f64 {
                Ok(v as usize)
            } else {
                Err(Error::config(format!(
                    "{} takes non-negative integers, got {v}",
                    self.name()
                )))
            }
        };
        let positive = |v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(v)
            } else {
                Err(Error::config(format!("{} must be positive, got {v}", self.name())))
            }
        };
        let mut out = cfg.clone();
        match self {
            SweepVariable::MActive => out.m_active = count(value)?,
            SweepVariable::MObs => out.m_obs = count(value)?,
            SweepVariable::Aperture => {
                let w = positive(value)?;
                out.aperture_x = w;
                out.aperture_y = w;
            }
            SweepVariable::PFa => out.p_fa = value,
            SweepVariable::SigmaC => out.sigma_c2 = positive(value)?.powi(2),
            SweepVariable::Delta => out.delta = count(value)?,
        }
        out.validate()?;
        Ok(out)
    }
}

impl fmt::Display for SweepVariable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepVariable {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SweepVariable::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::config(format!("unknown sweep variable '{s}'")))
    }
}

/// A port-selection scheme under comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    DiffusionFas,
    RandomFas,
    NoFas,
    NoUserB,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [Scheme::DiffusionFas, Scheme::RandomFas, Scheme::NoFas, Scheme::NoUserB];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::DiffusionFas => "diffusion_fas",
            Scheme::RandomFas => "random_fas",
            Scheme::NoFas => "no_fas",
            Scheme::NoUserB => "no_user_b",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::config(format!("unknown scheme '{s}'")))
    }
}

/// A baseline's choice for one trial.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BaselineMask {
    /// Active ports, ascending.
    Active(Vec<usize>),
    /// User B is absent: `α_B = 0`.
    Absent,
}

/// `m` ports at uniformly spaced positions `round(i(K−1)/(m−1))`, moved
/// upward past collisions. A single port sits at the centre.
pub fn uniform_spaced_ports(k: usize, m: usize) -> Result<Vec<usize>> {
    if m == 0 || m > k {
        return Err(Error::config(format!("m_active must be in [1, {k}], got {m}")));
    }
    if m == 1 {
        return Ok(vec![((k - 1) as f64 / 2.0).round() as usize]);
    }
    let step = (k - 1) as f64 / (m - 1) as f64;
    let mut out: Vec<usize> = Vec::with_capacity(m);
    for i in 0..m {
        let mut p = (i as f64 * step).round() as usize;
        if let Some(&last) = out.last() {
            p = p.max(last + 1);
        }
        out.push(p);
    }
    if out[m - 1] >= k {
        return Err(Error::config(format!("cannot space {m} ports over {k}")));
    }
    Ok(out)
}

/// Mask of a non-learned scheme. `rng` is only drawn from by `random_fas`.
pub fn baseline_mask(kind: Scheme, k: usize, m_active: usize, rng: &mut RngStream) -> Result<BaselineMask> {
    if m_active == 0 || m_active > k {
        return Err(Error::config(format!("m_active must be in [1, {k}], got {m_active}")));
    }
    match kind {
        Scheme::RandomFas => {
            let mut idx = rng.sample_without_replacement(k, m_active);
            idx.sort_unstable();
            Ok(BaselineMask::Active(idx))
        }
        Scheme::NoFas => Ok(BaselineMask::Active(uniform_spaced_ports(k, m_active)?)),
        Scheme::NoUserB => Ok(BaselineMask::Absent),
        Scheme::DiffusionFas => Err(Error::config("diffusion_fas is not a baseline")),
    }
}

/// A loaded diffusion policy.
#[derive(Debug, Clone)]
pub struct Policy {
    pub checkpoint: Checkpoint,
    schedule: NoiseSchedule,
}

impl Policy {
    pub fn new(checkpoint: Checkpoint) -> Result<Self> {
        let schedule = checkpoint.schedule()?;
        checkpoint.params.validate()?;
        Ok(Self { checkpoint, schedule })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::new(Checkpoint::load(path)?)
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    fn check(&self, model: &ScenarioModel, mode: Mode) -> Result<()> {
        let k = model.num_ports();
        self.checkpoint.check_compatible(k, crate::control::context_len(k))?;
        match self.checkpoint.mode {
            Some(m) if m != mode => Err(Error::config(format!(
                "checkpoint was trained for {m} mode but the sweep runs in {mode} mode"
            ))),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    pub sampler: SamplerConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub variable: SweepVariable,
    /// Empty means the variable's default grid.
    pub values: Vec<f64>,
    /// H1 trials per sweep point and scheme.
    pub trials: usize,
    /// Snapshots drawn per channel realization; `trials` must be a
    /// multiple of it.
    pub snapshots_per_channel: usize,
    pub schemes: Vec<Scheme>,
    /// False-alarm targets of the stealth sweep.
    pub case1_p_fa: Vec<f64>,
    /// Record wall time per point. Off by default so that outputs are
    /// byte-reproducible.
    pub timing: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            variable: SweepVariable::MActive,
            values: Vec::new(),
            trials: 2000,
            snapshots_per_channel: 1,
            schemes: Scheme::ALL.to_vec(),
            case1_p_fa: vec![0.01, 0.1],
            timing: false,
        }
    }
}

impl SweepConfig {
    pub fn grid(&self) -> Vec<f64> {
        if self.values.is_empty() {
            self.variable.default_grid()
        } else {
            self.values.clone()
        }
    }

    pub fn channels(&self) -> usize {
        self.trials / self.snapshots_per_channel
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 || self.snapshots_per_channel == 0 {
            return Err(Error::config("trials and snapshots_per_channel must be at least 1"));
        }
        if !self.trials.is_multiple_of(self.snapshots_per_channel) {
            return Err(Error::config(format!(
                "trials ({}) must be a multiple of snapshots_per_channel ({})",
                self.trials, self.snapshots_per_channel
            )));
        }
        if self.schemes.is_empty() {
            return Err(Error::config("at least one scheme is required"));
        }
        for (i, s) in self.schemes.iter().enumerate() {
            if self.schemes[..i].contains(s) {
                return Err(Error::config(format!("scheme {s} listed twice")));
            }
        }
        if let Some(p) = self.case1_p_fa.iter().find(|p| !(**p > 0.0 && **p < 1.0)) {
            return Err(Error::config(format!("case1_p_fa values must be in (0, 1), got {p}")));
        }
        Ok(())
    }
}

/// The whole experiment file. Sections: `[scenario]`, `[expert]`,
/// `[train]`, `[policy]` (with `[policy.sampler]`), `[sweep]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub scenario: ScenarioConfig,
    pub expert: ExpertConfig,
    pub train: TrainConfig,
    pub policy: PolicyConfig,
    pub sweep: SweepConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            scenario: ScenarioConfig::default(),
            expert: ExpertConfig::default(),
            train: TrainConfig::desk(),
            policy: PolicyConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        Ok(cfg)
    }

    /// Reads a config file. A relative checkpoint path is taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        if let (Some(ckpt), Some(dir)) = (&cfg.policy.checkpoint, path.parent()) {
            if ckpt.is_relative() {
                cfg.policy.checkpoint = Some(dir.join(ckpt));
            }
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.policy.sampler.validate()?;
        self.train.validate()?;
        self.sweep.validate()
    }

    /// Calibration draws for a given false-alarm target.
    pub fn calibration_draws(&self, p_fa: f64) -> usize {
        self.scenario
            .calib_draws
            .unwrap_or_else(|| min_calibration_draws(p_fa).max(200_000))
    }
}

/// One line of a results file.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub sweep_var: SweepVariable,
    pub sweep_value: f64,
    pub scheme: Scheme,
    pub p_d: f64,
    pub p_det_and_correct: f64,
    pub p_correct_given_det: Option<f64>,
    pub rmse_det: Option<f64>,
    pub trials: usize,
    pub seed: u64,
    pub wall_ms: u64,
}

impl ResultRow {
    fn new(var: SweepVariable, value: f64, scheme: Scheme, m: &MetricsRecord, seed: u64, wall_ms: u64) -> Self {
        Self {
            sweep_var: var,
            sweep_value: value,
            scheme,
            p_d: m.p_d,
            p_det_and_correct: m.p_det_and_correct,
            p_correct_given_det: m.p_correct_given_det,
            rmse_det: m.rmse_det,
            trials: m.trials,
            seed,
            wall_ms,
        }
    }
}

/// Per-point facts that are not part of the results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointDiagnostics {
    pub sweep_value: f64,
    pub p_fa: f64,
    /// Threshold shared by every scheme at this point.
    pub tau: f64,
    pub calibration_draws: usize,
    pub aborted_chains: usize,
    /// Full metrics per scheme, in row order.
    pub metrics: Vec<(Scheme, MetricsRecord)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutput {
    pub rows: Vec<ResultRow>,
    pub diagnostics: Vec<PointDiagnostics>,
}

/// Stealth-sweep output for one false-alarm target.
#[derive(Debug, Clone, PartialEq)]
pub struct StealthTable {
    pub p_fa: f64,
    pub output: SweepOutput,
}

/// Mask chosen by `scheme` for one realized scenario, or `None` when User
/// B is absent. Always exactly `inst.m_active` ports.
pub fn scheme_mask(
    scheme: Scheme,
    model: &ScenarioModel,
    inst: &ScenarioInstance,
    policy: Option<(&Policy, &SamplerConfig)>,
) -> Result<(Option<Vec<usize>>, usize)> {
    let k = model.num_ports();
    let m = inst.m_active;
    let (active, aborted) = match scheme {
        Scheme::DiffusionFas => {
            let (policy, sampler) = policy.ok_or_else(|| Error::config("diffusion_fas needs a policy checkpoint"))?;
            let problem = model.energy_problem(inst, sampler.csi_mode)?;
            let out = guided_reverse_sample(
                &policy.checkpoint.params,
                policy.schedule(),
                inst.context.as_slice(),
                &problem,
                sampler,
                &mut RngStream::new(inst.seed, SAMPLER_STREAM),
            )?;
            (Some(out.active), out.aborted)
        }
        _ => match baseline_mask(scheme, k, m, &mut RngStream::new(inst.seed, RANDOM_MASK_STREAM))? {
            BaselineMask::Active(a) => (Some(a), 0),
            BaselineMask::Absent => (None, 0),
        },
    };
    if let Some(a) = &active {
        let distinct = a.windows(2).all(|w| w[0] < w[1]);
        if a.len() != m || !distinct || a.iter().any(|&i| i >= k) {
            return Err(Error::Numerical(format!(
                "{scheme} produced an infeasible mask {a:?} for M = {m}"
            )));
        }
    }
    Ok((active, aborted))
}

/// Seed of channel realization `index`.
pub fn channel_seed(seed: u64, index: usize) -> u64 {
    RngStream::new(seed, CHANNEL_STREAM).derive(index as u64).next_u64()
}

struct PointSetup<'a> {
    model: &'a ScenarioModel,
    mode: Mode,
    hypothesis: Hypothesis,
    schemes: &'a [Scheme],
    policy: Option<(&'a Policy, &'a SamplerConfig)>,
    seed: u64,
    channels: usize,
    snapshots: usize,
}

/// Outcomes per scheme (in `schemes` order) and the number of aborted
/// sampling chains.
fn run_trials(p: &PointSetup<'_>) -> Result<(Vec<Vec<TrialOutcome>>, usize)> {
    let cfg = p.model.config();
    let per_channel: Vec<Result<(Vec<Vec<TrialOutcome>>, usize)>> = (0..p.channels)
        .into_par_iter()
        .map(|c| {
            let inst = p
                .model
                .realize_with(channel_seed(p.seed, c), cfg.m_active, cfg.m_obs, p.mode)?;
            let theta_true = match p.hypothesis {
                Hypothesis::UserBOnly => inst.scene.theta_b(),
                _ => inst.theta_a,
            };
            let mut aborted = 0;
            let mut outcomes = Vec::with_capacity(p.schemes.len());
            for &scheme in p.schemes {
                let (active, a) = scheme_mask(scheme, p.model, &inst, p.policy)?;
                aborted += a;
                let alpha_b = match active {
                    Some(idx) => {
                        let q = mask_to_real(&mask_from_indices(p.model.num_ports(), &idx));
                        effective_coupling(inst.g.as_slice(), &q, p.model.reflection())?
                    }
                    None => Complex64::new(0.0, 0.0),
                };
                let base = RngStream::new(inst.seed, SNAPSHOT_STREAM);
                let mut out = Vec::with_capacity(p.snapshots);
                for j in 0..p.snapshots {
                    let snap = inst
                        .scene
                        .synthesize_snapshot(alpha_b, p.hypothesis, &mut base.derive(j as u64));
                    out.push(TrialOutcome::new(
                        &inst.scene.matched_filter_statistics(&snap.x)?,
                        theta_true,
                    ));
                }
                outcomes.push(out);
            }
            Ok((outcomes, aborted))
        })
        .collect();
    let mut merged = vec![Vec::with_capacity(p.channels * p.snapshots); p.schemes.len()];
    let mut aborted = 0;
    for r in per_channel {
        let (o, a) = r?;
        aborted += a;
        for (dst, src) in merged.iter_mut().zip(o) {
            dst.extend(src);
        }
    }
    Ok((merged, aborted))
}

/// CFAR threshold for a scenario. The stream depends only on the seed, so
/// sweep points whose null distribution is unchanged share their threshold.
pub fn calibrate_for(model: &ScenarioModel, p_fa: f64, draws: usize, seed: u64) -> Result<f64> {
    let cfg = model.config();
    let mut rng = RngStream::new(seed, CALIBRATION_STREAM);
    if cfg.calib_include_user_b {
        let k = model.num_ports();
        calibrate_threshold_with(model.scene(), p_fa, draws, &mut rng, |r| {
            let g = sample_port_channel(model.channel(), r).expect("channel model was validated");
            let idx = r.sample_without_replacement(k, cfg.m_active);
            let q = mask_to_real(&mask_from_indices(k, &idx));
            effective_coupling(g.as_slice(), &q, model.reflection()).expect("shapes match")
        })
    } else {
        calibrate_threshold_with(model.scene(), p_fa, draws, &mut rng, |_| Complex64::new(0.0, 0.0))
    }
}

fn load_policy_for(cfg: &ExperimentConfig, policy: Option<&Policy>) -> Result<Option<Policy>> {
    if policy.is_some() || !cfg.sweep.schemes.contains(&Scheme::DiffusionFas) {
        return Ok(None);
    }
    let path = cfg
        .policy
        .checkpoint
        .as_ref()
        .ok_or_else(|| Error::config("diffusion_fas requires policy.checkpoint"))?;
    Policy::load(path).map(Some)
}

fn elapsed_ms(start: Instant, timing: bool) -> u64 {
    if timing {
        start.elapsed().as_millis() as u64
    } else {
        0
    }
}

/// Cooperative sweep: User A present, User B shaped by each scheme.
/// `policy` overrides `cfg.policy.checkpoint` when given.
pub fn run_case2_sweep(cfg: &ExperimentConfig, policy: Option<&Policy>) -> Result<SweepOutput> {
    cfg.validate()?;
    let owned = load_policy_for(cfg, policy)?;
    let policy = policy.or(owned.as_ref());
    let sweep = &cfg.sweep;
    let mut rows = Vec::new();
    let mut diagnostics = Vec::new();
    for value in sweep.grid() {
        let start = Instant::now();
        let point_cfg = sweep.variable.apply(&cfg.scenario, value)?;
        let model = ScenarioModel::new(point_cfg, cfg.seed)?;
        let mode = model.config().mode;
        if sweep.schemes.contains(&Scheme::DiffusionFas) {
            policy.expect("loaded above").check(&model, mode)?;
        }
        let p_fa = model.config().p_fa;
        let draws = cfg.calibration_draws(p_fa);
        let tau = calibrate_for(&model, p_fa, draws, cfg.seed)?;
        let (outcomes, aborted) = run_trials(&PointSetup {
            model: &model,
            mode,
            hypothesis: Hypothesis::H1,
            schemes: &sweep.schemes,
            policy: policy.map(|p| (p, &cfg.policy.sampler)),
            seed: cfg.seed,
            channels: sweep.channels(),
            snapshots: sweep.snapshots_per_channel,
        })?;
        let wall = elapsed_ms(start, sweep.timing);
        let mut metrics = Vec::new();
        for (&scheme, o) in sweep.schemes.iter().zip(&outcomes) {
            let m = aggregate_metrics(o, tau, model.config().n_theta)?;
            rows.push(ResultRow::new(sweep.variable, value, scheme, &m, cfg.seed, wall));
            metrics.push((scheme, m));
        }
        log::info!("{} = {value}: tau {tau:.4}, {aborted} aborted chains", sweep.variable);
        diagnostics.push(PointDiagnostics {
            sweep_value: value,
            p_fa,
            tau,
            calibration_draws: draws,
            aborted_chains: aborted,
            metrics,
        });
    }
    Ok(SweepOutput { rows, diagnostics })
}

/// Stealth sweep over `m_active`: only User B present. One table per
/// false-alarm target; every table reuses the same trials.
pub fn run_case1_stealth(cfg: &ExperimentConfig, policy: Option<&Policy>) -> Result<Vec<StealthTable>> {
    cfg.validate()?;
    let sweep = &cfg.sweep;
    if sweep.variable != SweepVariable::MActive {
        return Err(Error::config(format!(
            "the stealth sweep varies m_active, not {}",
            sweep.variable
        )));
    }
    if sweep.case1_p_fa.is_empty() {
        return Err(Error::config("case1_p_fa is empty"));
    }
    let owned = load_policy_for(cfg, policy)?;
    let policy = policy.or(owned.as_ref());
    let mut tables: Vec<StealthTable> = sweep
        .case1_p_fa
        .iter()
        .map(|&p_fa| StealthTable {
            p_fa,
            output: SweepOutput {
                rows: Vec::new(),
                diagnostics: Vec::new(),
            },
        })
        .collect();
    for value in sweep.grid() {
        let start = Instant::now();
        let mut point_cfg = sweep.variable.apply(&cfg.scenario, value)?;
        point_cfg.mode = Mode::Stealth;
        let model = ScenarioModel::new(point_cfg, cfg.seed)?;
        if sweep.schemes.contains(&Scheme::DiffusionFas) {
            policy.expect("loaded above").check(&model, Mode::Stealth)?;
        }
        let (outcomes, aborted) = run_trials(&PointSetup {
            model: &model,
            mode: Mode::Stealth,
            hypothesis: Hypothesis::UserBOnly,
            schemes: &sweep.schemes,
            policy: policy.map(|p| (p, &cfg.policy.sampler)),
            seed: cfg.seed,
            channels: sweep.channels(),
            snapshots: sweep.snapshots_per_channel,
        })?;
        for table in &mut tables {
            let draws = cfg.calibration_draws(table.p_fa);
            let tau = calibrate_for(&model, table.p_fa, draws, cfg.seed)?;
            let wall = elapsed_ms(start, sweep.timing);
            let mut metrics = Vec::new();
            for (&scheme, o) in sweep.schemes.iter().zip(&outcomes) {
                let m = aggregate_metrics(o, tau, model.config().n_theta)?;
                table
                    .output
                    .rows
                    .push(ResultRow::new(sweep.variable, value, scheme, &m, cfg.seed, wall));
                metrics.push((scheme, m));
            }
            table.output.diagnostics.push(PointDiagnostics {
                sweep_value: value,
                p_fa: table.p_fa,
                tau,
                calibration_draws: draws,
                aborted_chains: aborted,
                metrics,
            });
        }
        log::info!("m_active = {value}: {aborted} aborted chains");
    }
    Ok(tables)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Jsonl,
}

impl FromStr for OutputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "jsonl" => Ok(OutputFormat::Jsonl),
            other => Err(Error::config(format!(
                "unknown format '{other}' (expected csv or jsonl)"
            ))),
        }
    }
}

pub const RESULT_COLUMNS: [&str; 10] = [
    "sweep_var",
    "sweep_value",
    "scheme",
    "p_d",
    "p_det_and_correct",
    "p_correct_given_det",
    "rmse_det",
    "trials",
    "seed",
    "wall_ms",
];

/// `x` with six significant digits, in the style of C's `%g`.
pub fn format_sig6(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    let trim = |s: &str| -> String {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s.to_string()
        }
    };
    if !(-4..6).contains(&exp) {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", trim(mantissa), exp.abs())
    } else {
        trim(&format!("{x:.*}", (5 - exp) as usize))
    }
}

fn row_fields(r: &ResultRow) -> [Option<String>; 10] {
    [
        Some(r.sweep_var.name().into()),
        Some(format_sig6(r.sweep_value)),
        Some(r.scheme.name().into()),
        Some(format_sig6(r.p_d)),
        Some(format_sig6(r.p_det_and_correct)),
        r.p_correct_given_det.map(format_sig6),
        r.rmse_det.map(format_sig6),
        Some(r.trials.to_string()),
        Some(r.seed.to_string()),
        Some(r.wall_ms.to_string()),
    ]
}

/// Writes `rows` to `path`. CSV leaves undefined conditional metrics
/// empty; JSONL writes them as `null`.
pub fn emit_results(rows: &[ResultRow], path: &Path, format: OutputFormat) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::config("no result rows to write"));
    }
    let io = |e: std::io::Error| Error::io(path, e);
    let mut buf = Vec::new();
    match format {
        OutputFormat::Csv => {
            let mut w = csv::Writer::from_writer(&mut buf);
            let to_err = |e: csv::Error| Error::io(path, std::io::Error::other(e));
            w.write_record(RESULT_COLUMNS).map_err(to_err)?;
            for r in rows {
                w.write_record(row_fields(r).iter().map(|f| f.as_deref().unwrap_or("")))
                    .map_err(to_err)?;
            }
            w.flush().map_err(io)?;
        }
        OutputFormat::Jsonl => {
            for r in rows {
                let fields: Vec<String> = RESULT_COLUMNS
                    .iter()
                    .zip(row_fields(r))
                    .enumerate()
                    .map(|(i, (key, value))| {
                        let v = match value {
                            None => "null".to_string(),
                            // text columns: sweep_var and scheme
                            Some(s) if i == 0 || i == 2 => serde_json::Value::String(s).to_string(),
                            Some(s) => s,
                        };
                        format!("\"{key}\":{v}")
                    })
                    .collect();
                writeln!(buf, "{{{}}}", fields.join(",")).map_err(io)?;
            }
        }
    }
    fs::write(path, buf).map_err(io)
}

/// Path of the resolved-config copy written beside `results`.
pub fn resolved_config_path(results: &Path) -> PathBuf {
    let stem = results
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    results.with_file_name(format!("{stem}.resolved.toml"))
}

/// Writes the fully-defaulted config beside `results`.
pub fn write_resolved_config(cfg: &ExperimentConfig, results: &Path) -> Result<PathBuf> {
    let path = resolved_config_path(results);
    fs::write(&path, cfg.to_toml_string()?).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
