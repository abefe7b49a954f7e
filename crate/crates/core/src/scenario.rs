//! Scenario configuration and per-draw realization: port geometry, channel,
//! partial observation, target geometry, and the policy context.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::{
    build_correlation_matrix, build_port_layout, observe_channel, sample_port_channel, ChannelModel, Observation,
    PortChannel, PortLayout, ScatteringRegime,
};
use crate::control::{encode_context, ContextParams, Mode, PolicyContext, ReflectionConfig};
use crate::energy::{CsiMode, EnergyProblem, EnergyWeights, GuardSet};
use crate::error::{Error, Result};
use crate::numerics::RngStream;
use crate::sensing::{min_calibration_draws, SceneParams, SensingScene};

/// Every physical and objective knob of a scenario. Field names are the
/// config-file keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub dim: usize,
    pub num_ports: usize,
    pub aperture_x: f64,
    pub aperture_y: f64,
    pub regime: ScatteringRegime,
    pub num_paths: usize,
    pub sigma_g2: f64,
    pub m_obs: usize,
    pub sigma_obs2: f64,

    pub n_theta: usize,
    pub feat_dim: usize,
    pub r_c: f64,
    pub sigma_c2: f64,
    pub sigma_n2: f64,
    pub alpha_a_mag: f64,
    pub p_fa: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub calib_draws: Option<usize>,
    /// Include a random-mask interferer in null snapshots during calibration.
    pub calib_include_user_b: bool,
    pub delta: usize,
    pub guard_g: usize,
    /// Fixed target bin; drawn uniformly per realization when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta_a: Option<usize>,

    pub m_active: usize,
    pub tau_q: f64,
    pub rho_0_re: f64,
    pub rho_0_im: f64,
    pub rho_1_re: f64,
    pub rho_1_im: f64,
    pub alpha_b0_re: f64,
    pub alpha_b0_im: f64,
    pub mode: Mode,

    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_int: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_hide: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_card: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_bin: Option<f64>,
    pub csi_mode: CsiMode,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            dim: 2,
            num_ports: 200,
            aperture_x: 2.0,
            aperture_y: 2.0,
            regime: ScatteringRegime::RichIsotropic,
            num_paths: 5,
            sigma_g2: 1.0,
            m_obs: 30,
            sigma_obs2: 0.0,
            n_theta: 64,
            feat_dim: 32,
            r_c: 0.5,
            sigma_c2: 1.0,
            sigma_n2: 0.01,
            alpha_a_mag: 3.0,
            p_fa: 1e-3,
            calib_draws: None,
            calib_include_user_b: false,
            delta: 2,
            guard_g: 2,
            theta_a: None,
            m_active: 20,
            tau_q: 0.1,
            rho_0_re: 0.2,
            rho_0_im: 0.0,
            rho_1_re: 1.0,
            rho_1_im: 0.0,
            alpha_b0_re: 1.0,
            alpha_b0_im: 0.0,
            mode: Mode::Cooperative,
            lambda_int: None,
            lambda_hide: None,
            lambda_card: None,
            lambda_bin: None,
            csi_mode: CsiMode::Observed,
        }
    }
}

impl ScenarioConfig {
    pub fn reflection(&self) -> Result<ReflectionConfig> {
        ReflectionConfig::new(
            Complex64::new(self.rho_0_re, self.rho_0_im),
            Complex64::new(self.rho_1_re, self.rho_1_im),
            Complex64::new(self.alpha_b0_re, self.alpha_b0_im),
        )
    }

    /// Mode defaults, overridden by any explicitly set weight.
    pub fn weights_for(&self, mode: Mode) -> Result<EnergyWeights> {
        let base = EnergyWeights::for_mode(mode);
        EnergyWeights::new(
            self.lambda_int.unwrap_or(base.lambda_int),
            self.lambda_hide.unwrap_or(base.lambda_hide),
            self.lambda_card.unwrap_or(base.lambda_card),
            self.lambda_bin.unwrap_or(base.lambda_bin),
        )
    }

    pub fn weights(&self) -> Result<EnergyWeights> {
        self.weights_for(self.mode)
    }

    pub fn scene_params(&self) -> SceneParams {
        SceneParams {
            n_theta: self.n_theta,
            feat_dim: self.feat_dim,
            r_c: self.r_c,
            sigma_c2: self.sigma_c2,
            sigma_n2: self.sigma_n2,
            alpha_a_mag: self.alpha_a_mag,
        }
    }

    /// Configured calibration draws, or `max(2·10⁵, 50/P_FA)`.
    pub fn resolved_calib_draws(&self) -> usize {
        self.calib_draws
            .unwrap_or_else(|| min_calibration_draws(self.p_fa).max(200_000))
    }

    pub fn aperture(&self) -> (f64, f64) {
        (self.aperture_x, self.aperture_y)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.num_ports;
        if k < 2 {
            return Err(Error::config(format!("num_ports must be at least 2, got {k}")));
        }
        if self.m_active == 0 || self.m_active > k {
            return Err(Error::config(format!(
                "m_active must be in [1, {k}], got {}",
                self.m_active
            )));
        }
        if self.m_obs == 0 || self.m_obs > k {
            return Err(Error::config(format!("m_obs must be in [1, {k}], got {}", self.m_obs)));
        }
        if !(self.p_fa > 0.0 && self.p_fa < 1.0) {
            return Err(Error::config(format!("p_fa must be in (0, 1), got {}", self.p_fa)));
        }
        if !(self.tau_q > 0.0) {
            return Err(Error::config("tau_q must be positive"));
        }
        if !(self.sigma_g2 > 0.0) {
            return Err(Error::config("sigma_g2 must be positive"));
        }
        if let Some(t) = self.theta_a {
            if t >= self.n_theta {
                return Err(Error::config(format!("theta_a {t} outside grid of {}", self.n_theta)));
            }
        }
        if let Some(n) = self.calib_draws {
            if n < min_calibration_draws(self.p_fa) {
                return Err(Error::config(format!(
                    "calib_draws {n} too few for p_fa {} (need >= {})",
                    self.p_fa,
                    min_calibration_draws(self.p_fa)
                )));
            }
        }
        self.reflection()?;
        self.weights()?;
        Ok(())
    }
}

/// Stream tag used for the finite-scattering direction draw.
const GEOMETRY_STREAM: u64 = 0x6765_6f6d;

/// The parts of a scenario that are fixed across realizations: layout,
/// correlation model, disturbance caches.
#[derive(Debug, Clone)]
pub struct ScenarioModel {
    config: ScenarioConfig,
    layout: PortLayout,
    channel: ChannelModel,
    scene: SensingScene,
    reflection: ReflectionConfig,
}

impl ScenarioModel {
    pub fn new(config: ScenarioConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = build_port_layout(config.dim, config.num_ports, config.aperture())?;
        let mut rng = RngStream::new(seed, GEOMETRY_STREAM);
        let channel = build_correlation_matrix(&layout, config.regime, config.num_paths, config.sigma_g2, &mut rng)?;
        channel.factor()?;
        let scene = SensingScene::new(config.scene_params(), 0, config.delta)?;
        let reflection = config.reflection()?;
        Ok(Self {
            config,
            layout,
            channel,
            scene,
            reflection,
        })
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.config
    }

    pub fn layout(&self) -> &PortLayout {
        &self.layout
    }

    pub fn channel(&self) -> &ChannelModel {
        &self.channel
    }

    pub fn scene(&self) -> &SensingScene {
        &self.scene
    }

    pub fn reflection(&self) -> &ReflectionConfig {
        &self.reflection
    }

    pub fn num_ports(&self) -> usize {
        self.config.num_ports
    }

    /// Realizes one scenario from its own seed using the configured budgets.
    pub fn realize(&self, seed: u64) -> Result<ScenarioInstance> {
        self.realize_with(seed, self.config.m_active, self.config.m_obs, self.config.mode)
    }

    /// Realizes one scenario with explicit budgets and mode. Draw order:
    /// target bin, channel, observation.
    pub fn realize_with(&self, seed: u64, m_active: usize, m_obs: usize, mode: Mode) -> Result<ScenarioInstance> {
        let cfg = &self.config;
        let mut rng = RngStream::new(seed, 0);
        let theta_a = match cfg.theta_a {
            Some(t) => t,
            None => rng.index(cfg.n_theta),
        };
        let g = sample_port_channel(&self.channel, &mut rng)?;
        let obs = observe_channel(&g, m_obs, cfg.sigma_obs2, &mut rng)?;
        let scene = self.scene.with_geometry(theta_a, cfg.delta)?;
        let guard = GuardSet::new(theta_a, cfg.guard_g, cfg.n_theta)?;
        let context = encode_context(
            &obs,
            &ContextParams {
                m_active,
                aperture: self.layout.aperture(),
                sigma_c2: cfg.sigma_c2,
                sigma_n2: cfg.sigma_n2,
                theta_a,
                theta_b: scene.theta_b(),
                delta: cfg.delta,
                n_theta: cfg.n_theta,
                mode,
            },
        )?;
        Ok(ScenarioInstance {
            seed,
            m_active,
            mode,
            theta_a,
            g,
            obs,
            scene,
            guard,
            context,
        })
    }

    /// Energy of this instance for the given channel knowledge.
    pub fn energy_problem(&self, inst: &ScenarioInstance, csi_mode: CsiMode) -> Result<EnergyProblem> {
        EnergyProblem::new(
            inst.g_source(csi_mode),
            &inst.scene,
            &inst.guard,
            self.config.weights_for(inst.mode)?,
            inst.m_active,
            &self.reflection,
            self.config.tau_q,
        )
    }
}

/// One realized scenario.
#[derive(Debug, Clone)]
pub struct ScenarioInstance {
    pub seed: u64,
    pub m_active: usize,
    pub mode: Mode,
    pub theta_a: usize,
    pub g: PortChannel,
    pub obs: Observation,
    pub scene: SensingScene,
    pub guard: GuardSet,
    pub context: PolicyContext,
}

impl ScenarioInstance {
    pub fn g_source(&self, csi_mode: CsiMode) -> &[Complex64] {
        match csi_mode {
            CsiMode::Oracle => self.g.as_slice(),
            CsiMode::Observed => self.obs.g_tilde(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ScenarioConfig {
        ScenarioConfig {
            num_ports: 16,
            aperture_x: 1.0,
            aperture_y: 1.0,
            m_obs: 6,
            m_active: 4,
            ..ScenarioConfig::default()
        }
    }

    #[test]
    fn defaults_validate() {
        ScenarioConfig::default().validate().unwrap();
        assert_eq!(ScenarioConfig::default().resolved_calib_draws(), 200_000);
        let strict = ScenarioConfig {
            p_fa: 1e-4,
            ..ScenarioConfig::default()
        };
        assert_eq!(strict.resolved_calib_draws(), 500_000);
    }

    #[test]
    fn invalid_budgets_rejected() {
        for cfg in [
            ScenarioConfig { m_active: 0, ..small() },
            ScenarioConfig { m_obs: 17, ..small() },
            ScenarioConfig { p_fa: 1.0, ..small() },
            ScenarioConfig {
                rho_1_re: 0.2,
                ..small()
            },
            ScenarioConfig {
                theta_a: Some(64),
                ..small()
            },
            ScenarioConfig {
                lambda_int: Some(0.0),
                ..small()
            },
        ] {
            assert!(matches!(cfg.validate(), Err(Error::Config(_))), "{cfg:?}");
        }
    }

    #[test]
    fn realization_is_a_pure_function_of_seed() {
        let model = ScenarioModel::new(small(), 1).unwrap();
        let a = model.realize(99).unwrap();
        let b = model.realize(99).unwrap();
        let c = model.realize(100).unwrap();
        assert_eq!(a.g, b.g);
        assert_eq!(a.context, b.context);
        assert_ne!(a.g, c.g);
        assert_eq!(a.context.len(), 3 * 16 + 12);
        assert_eq!(a.scene.theta_b(), (a.theta_a + 2) % 64);
    }

    #[test]
    fn csi_modes_pick_channel_views() {
        let model = ScenarioModel::new(small(), 1).unwrap();
        let inst = model.realize(5).unwrap();
        assert_eq!(inst.g_source(CsiMode::Oracle), inst.g.as_slice());
        let zeros = inst
            .g_source(CsiMode::Observed)
            .iter()
            .filter(|z| z.norm() == 0.0)
            .count();
        assert_eq!(zeros, 16 - 6);
    }

    #[test]
    fn explicit_weights_override_mode_defaults() {
        let cfg = ScenarioConfig {
            lambda_bin: Some(0.5),
            ..small()
        };
        let w = cfg.weights_for(Mode::Stealth).unwrap();
        assert_eq!((w.lambda_hide, w.lambda_bin), (1.0, 0.5));
    }

    #[test]
    fn config_round_trips_through_toml() {
        let cfg = ScenarioConfig {
            theta_a: Some(3),
            regime: ScatteringRegime::FiniteScattering,
            ..small()
        };
        let text = toml::to_string(&cfg).unwrap();
        let back: ScenarioConfig = toml::from_str(&text).unwrap();
        assert_eq!(cfg, back);
        let short: ScenarioConfig = toml::from_str("regime = \"rich\"\nnum_ports = 16\n").unwrap();
        assert_eq!(short.regime, ScatteringRegime::RichIsotropic);
        assert!(toml::from_str::<ScenarioConfig>("bogus = 1").is_err());
    }
}
