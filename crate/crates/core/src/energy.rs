//! Guidance energy over soft masks: guard-bin leakage, detectability,
//! cardinality and binarization penalties, and the reverse-mode gradient
//! with respect to port logits.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::control::{soft_top_m_node, Mode, ReflectionConfig};
use crate::error::{Error, Result};
use crate::numerics::{DiffGraph, NodeId};
use crate::sensing::SensingScene;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyWeights {
    pub lambda_int: f64,
    pub lambda_hide: f64,
    pub lambda_card: f64,
    pub lambda_bin: f64,
}

impl EnergyWeights {
    pub fn new(lambda_int: f64, lambda_hide: f64, lambda_card: f64, lambda_bin: f64) -> Result<Self> {
        let w = Self {
            lambda_int,
            lambda_hide,
            lambda_card,
            lambda_bin,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda_int, self.lambda_hide, self.lambda_card, self.lambda_bin];
        if all.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err(Error::config("energy weights must be finite and non-negative"));
        }
        if self.lambda_int <= 0.0 && self.lambda_hide <= 0.0 {
            return Err(Error::config("one of lambda_int, lambda_hide must be positive"));
        }
        Ok(())
    }

    pub fn cooperative() -> Self {
        Self {
            lambda_int: 1.0,
            lambda_hide: 0.0,
            lambda_card: 1.0,
            lambda_bin: 0.1,
        }
    }

    pub fn stealth() -> Self {
        Self {
            lambda_int: 0.0,
            lambda_hide: 1.0,
            lambda_card: 1.0,
            lambda_bin: 0.1,
        }
    }

    pub fn for_mode(mode: Mode) -> Self {
        match mode {
            Mode::Stealth => Self::stealth(),
            Mode::Cooperative => Self::cooperative(),
        }
    }
}

/// Which channel vector feeds the energy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CsiMode {
    /// Zero-filled partial observation.
    Observed,
    /// True channel.
    Oracle,
}

impl fmt::Display for CsiMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CsiMode::Observed => "observed",
            CsiMode::Oracle => "oracle",
        })
    }
}

impl FromStr for CsiMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "observed" => Ok(CsiMode::Observed),
            "oracle" => Ok(CsiMode::Oracle),
            other => Err(Error::config(format!(
                "unknown csi_mode '{other}' (expected observed or oracle)"
            ))),
        }
    }
}

/// Circular guard bins around the target.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GuardSet {
    pub theta_a: usize,
    pub g: usize,
    pub n_theta: usize,
    bins: Vec<usize>,
}

impl GuardSet {
    pub fn new(theta_a: usize, g: usize, n_theta: usize) -> Result<Self> {
        if theta_a >= n_theta {
            return Err(Error::config(format!(
                "guard center {theta_a} outside grid of {n_theta}"
            )));
        }
        let mut bins: Vec<usize> = if 2 * g + 1 >= n_theta {
            (0..n_theta).collect()
        } else {
            (0..=2 * g).map(|i| (theta_a + n_theta + i - g) % n_theta).collect()
        };
        bins.sort_unstable();
        Ok(Self {
            theta_a,
            g,
            n_theta,
            bins,
        })
    }

    pub fn bins(&self) -> &[usize] {
        &self.bins
    }
}

/// `γ(θ, θ_B) = |s_θᴴR_v⁻¹s_{θ_B}|² / (s_θᴴR_v⁻¹s_θ)`.
pub fn overlap_kernel(scene: &SensingScene, theta: usize, theta_b: usize) -> f64 {
    scene.whitened_inner(theta, theta_b).norm_sqr() / scene.whitened_norm(theta)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub e_int: f64,
    pub e_hide: f64,
    pub e_card: f64,
    pub e_bin: f64,
    pub e_total: f64,
    pub gradient: Option<Vec<f64>>,
}

/// One energy instance with everything that does not depend on the mask
/// precomputed.
#[derive(Debug, Clone)]
pub struct EnergyProblem {
    weights: EnergyWeights,
    m_active: usize,
    tau_q: f64,
    /// `Σ_{θ∈guard} γ(θ, θ_B)`.
    guard_sum: f64,
    /// `s_{θ_B}ᴴ R_v⁻¹ s_{θ_B}`.
    hide_norm: f64,
    /// `α_B = offset + Σ_k slope_k q_k`.
    offset: Complex64,
    slope: Vec<Complex64>,
}

impl EnergyProblem {
    pub fn new(
        g_source: &[Complex64],
        scene: &SensingScene,
        guard: &GuardSet,
        weights: EnergyWeights,
        m_active: usize,
        cfg: &ReflectionConfig,
        tau_q: f64,
    ) -> Result<Self> {
        weights.validate()?;
        let k = g_source.len();
        if k == 0 || m_active == 0 || m_active > k {
            return Err(Error::config(format!("m_active must be in [1, {k}], got {m_active}")));
        }
        if !(tau_q > 0.0) {
            return Err(Error::config(format!("tau_q must be positive, got {tau_q}")));
        }
        if guard.n_theta != scene.n_theta() {
            return Err(Error::config("guard set and scene disagree on grid size"));
        }
        let theta_b = scene.theta_b();
        let guard_sum = guard.bins().iter().map(|&th| overlap_kernel(scene, th, theta_b)).sum();
        let hide_norm = scene.whitened_norm(theta_b);
        let scale = cfg.alpha_b0() / (k as f64).sqrt();
        let conj_sum: Complex64 = g_source.iter().map(|g| g.conj()).sum();
        let step = cfg.rho_1() - cfg.rho_0();
        Ok(Self {
            weights,
            m_active,
            tau_q,
            guard_sum,
            hide_norm,
            offset: scale * cfg.rho_0() * conj_sum,
            slope: g_source.iter().map(|g| scale * step * g.conj()).collect(),
        })
    }

    pub fn num_ports(&self) -> usize {
        self.slope.len()
    }

    pub fn m_active(&self) -> usize {
        self.m_active
    }

    pub fn tau_q(&self) -> f64 {
        self.tau_q
    }

    pub fn weights(&self) -> &EnergyWeights {
        &self.weights
    }

    fn breakdown(&self, alpha2: f64, sum_q: f64, bin: f64) -> EnergyBreakdown {
        let w = &self.weights;
        let e_int = alpha2 * self.guard_sum;
        let e_hide = alpha2 * self.hide_norm;
        let e_card = (sum_q - self.m_active as f64).powi(2);
        let e_bin = bin;
        EnergyBreakdown {
            e_int,
            e_hide,
            e_card,
            e_bin,
            e_total: w.lambda_int * e_int + w.lambda_hide * e_hide + w.lambda_card * e_card + w.lambda_bin * e_bin,
            gradient: None,
        }
    }

    /// Energy of a soft mask.
    pub fn evaluate(&self, q_tilde: &[f64]) -> Result<EnergyBreakdown> {
        if q_tilde.len() != self.num_ports() {
            return Err(Error::config(format!(
                "mask length {} does not match K = {}",
                q_tilde.len(),
                self.num_ports()
            )));
        }
        let alpha = self.offset + self.slope.iter().zip(q_tilde).map(|(s, q)| s * q).sum::<Complex64>();
        let sum_q: f64 = q_tilde.iter().sum();
        let bin = q_tilde.iter().map(|q| q * (1.0 - q)).sum::<f64>() / self.num_ports() as f64;
        Ok(self.breakdown(alpha.norm_sqr(), sum_q, bin))
    }

    /// Total energy of a hard mask given by its active indices.
    pub fn evaluate_indices(&self, active: &[usize]) -> f64 {
        let alpha = self.offset + active.iter().map(|&i| self.slope[i]).sum::<Complex64>();
        self.breakdown(alpha.norm_sqr(), active.len() as f64, 0.0).e_total
    }

    /// Total energy of a boolean hard mask.
    pub fn evaluate_mask(&self, q: &[bool]) -> f64 {
        let active: Vec<usize> = q.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i).collect();
        self.evaluate_indices(&active)
    }

    /// `|α_B|²` of a hard mask, the detectability term without the
    /// template factor.
    pub fn coupling_power(&self, active: &[usize]) -> f64 {
        (self.offset + active.iter().map(|&i| self.slope[i]).sum::<Complex64>()).norm_sqr()
    }

    /// Records `E_total(q̃)` on `graph` for a soft-mask node.
    pub fn energy_node(&self, graph: &mut DiffGraph, q: NodeId) -> NodeId {
        let w = self.weights;
        let k = self.num_ports();
        let b_re = graph.constant(self.slope.iter().map(|s| s.re).collect());
        let b_im = graph.constant(self.slope.iter().map(|s| s.im).collect());
        let re = graph.dot(b_re, q);
        let re = graph.add_scalar(re, self.offset.re);
        let im = graph.dot(b_im, q);
        let im = graph.add_scalar(im, self.offset.im);
        let re2 = graph.square(re);
        let im2 = graph.square(im);
        let alpha2 = graph.add(re2, im2);

        let sum_q = graph.sum(q);
        let card = graph.add_scalar(sum_q, -(self.m_active as f64));
        let card = graph.square(card);
        let qq = graph.dot(q, q);
        let bin = graph.sub(sum_q, qq);

        let phys = graph.scale(alpha2, w.lambda_int * self.guard_sum + w.lambda_hide * self.hide_norm);
        let card = graph.scale(card, w.lambda_card);
        let bin = graph.scale(bin, w.lambda_bin / k as f64);
        let total = graph.add(phys, card);
        graph.add(total, bin)
    }

    /// Energy at `q̃ = soft_top_m(z)` plus its gradient in `z`.
    pub fn gradient_wrt_logits(&self, z: &[f64]) -> Result<EnergyBreakdown> {
        if z.len() != self.num_ports() {
            return Err(Error::config(format!(
                "logit length {} does not match K = {}",
                z.len(),
                self.num_ports()
            )));
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite logits in energy gradient".into()));
        }
        let mut graph = DiffGraph::new();
        let zn = graph.input(z.to_vec());
        let q = soft_top_m_node(&mut graph, zn, self.m_active, self.tau_q);
        let e = self.energy_node(&mut graph, q);
        let grads = graph.gradient(e);
        let mut out = self.evaluate(graph.value(q))?;
        out.gradient = Some(grads.wrt(zn).to_vec());
        Ok(out)
    }
}

/// Energy breakdown of a soft mask.
pub fn guidance_energy(
    q_tilde: &[f64],
    g_source: &[Complex64],
    scene: &SensingScene,
    guard: &GuardSet,
    weights: EnergyWeights,
    m_active: usize,
    cfg: &ReflectionConfig,
) -> Result<EnergyBreakdown> {
    EnergyProblem::new(g_source, scene, guard, weights, m_active, cfg, 1.0)?.evaluate(q_tilde)
}

/// Gradient of the total energy with respect to logits, through the
/// soft top-M relaxation.
#[allow(clippy::too_many_arguments)]
pub fn energy_gradient_wrt_logits(
    z: &[f64],
    g_source: &[Complex64],
    scene: &SensingScene,
    guard: &GuardSet,
    weights: EnergyWeights,
    m_active: usize,
    cfg: &ReflectionConfig,
    tau_q: f64,
) -> Result<Vec<f64>> {
    let problem = EnergyProblem::new(g_source, scene, guard, weights, m_active, cfg, tau_q)?;
    Ok(problem.gradient_wrt_logits(z)?.gradient.expect("gradient requested"))
}
