//! Port-mask machinery: reflection coding, effective coupling, hard and
//! soft top-M projections, and the policy context vector.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use crate::channel::Observation;
use crate::error::{Error, Result};
use crate::numerics::{kth_largest, DiffGraph, NodeId};

/// Per-port reflection states and the baseline scatter coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReflectionConfig {
    rho_0: Complex64,
    rho_1: Complex64,
    alpha_b0: Complex64,
}

impl ReflectionConfig {
    pub fn new(rho_0: Complex64, rho_1: Complex64, alpha_b0: Complex64) -> Result<Self> {
        if rho_0 == rho_1 {
            return Err(Error::config("reflection states rho_0 and rho_1 must differ"));
        }
        if !(rho_0.is_finite() && rho_1.is_finite() && alpha_b0.is_finite()) {
            return Err(Error::config("reflection coefficients must be finite"));
        }
        Ok(Self { rho_0, rho_1, alpha_b0 })
    }

    pub fn rho_0(&self) -> Complex64 {
        self.rho_0
    }

    pub fn rho_1(&self) -> Complex64 {
        self.rho_1
    }

    pub fn alpha_b0(&self) -> Complex64 {
        self.alpha_b0
    }
}

impl Default for ReflectionConfig {
    fn default() -> Self {
        Self {
            rho_0: Complex64::new(0.2, 0.0),
            rho_1: Complex64::new(1.0, 0.0),
            alpha_b0: Complex64::new(1.0, 0.0),
        }
    }
}

/// `ρ = ρ₀·1 + (ρ₁ − ρ₀)·q`; accepts soft masks.
pub fn reflection_vector(q: &[f64], cfg: &ReflectionConfig) -> Vec<Complex64> {
    let step = cfg.rho_1 - cfg.rho_0;
    q.iter().map(|&qk| cfg.rho_0 + step * qk).collect()
}

/// `α_B = (α_B⁽⁰⁾/√K)·g_Bᴴ ρ(q)`.
pub fn effective_coupling(g: &[Complex64], q: &[f64], cfg: &ReflectionConfig) -> Result<Complex64> {
    if g.len() != q.len() || g.is_empty() {
        return Err(Error::config(format!(
            "channel length {} and mask length {} must agree and be nonzero",
            g.len(),
            q.len()
        )));
    }
    let rho = reflection_vector(q, cfg);
    let inner: Complex64 = g.iter().zip(&rho).map(|(gk, rk)| gk.conj() * rk).sum();
    Ok(cfg.alpha_b0 * inner / (g.len() as f64).sqrt())
}

fn check_budget(k: usize, m_active: usize) -> Result<()> {
    if m_active == 0 || m_active > k {
        return Err(Error::config(format!("m_active must be in [1, {k}], got {m_active}")));
    }
    Ok(())
}

/// Indices of the `m_active` largest logits in ascending index order.
/// Exact ties go to the smaller index.
pub fn top_m_indices(z: &[f64], m_active: usize) -> Result<Vec<usize>> {
    check_budget(z.len(), m_active)?;
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite logit in top-M projection".into()));
    }
    let mut order: Vec<usize> = (0..z.len()).collect();
    // (value desc, index asc) is a total order, so selection is deterministic
    order.select_nth_unstable_by(m_active - 1, |&a, &b| z[b].total_cmp(&z[a]).then(a.cmp(&b)));
    let mut chosen = order[..m_active].to_vec();
    chosen.sort_unstable();
    Ok(chosen)
}

/// Binary mask with ones at the `m_active` largest logits.
pub fn hard_top_m(z: &[f64], m_active: usize) -> Result<Vec<bool>> {
    let mut q = vec![false; z.len()];
    for i in top_m_indices(z, m_active)? {
        q[i] = true;
    }
    Ok(q)
}

/// A boolean mask as a real 0/1 vector.
pub fn mask_to_real(q: &[bool]) -> Vec<f64> {
    q.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
}

/// Mask from an explicit index set.
pub fn mask_from_indices(k: usize, indices: &[usize]) -> Vec<bool> {
    let mut q = vec![false; k];
    for &i in indices {
        q[i] = true;
    }
    q
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `q̃_k = σ((z_k − z_(M))/τ_q)` with `z_(M)` the M-th largest logit.
pub fn soft_top_m(z: &[f64], m_active: usize, tau_q: f64) -> Result<Vec<f64>> {
    check_budget(z.len(), m_active)?;
    if !(tau_q > 0.0) {
        return Err(Error::config(format!("tau_q must be positive, got {tau_q}")));
    }
    let thr = kth_largest(z, m_active);
    let inv = 1.0 / tau_q;
    Ok(z.iter().map(|&zk| sigmoid((zk - thr) * inv)).collect())
}

/// Differentiable soft top-M on a graph node; the threshold is
/// gradient-stopped.
pub fn soft_top_m_node(graph: &mut DiffGraph, z: NodeId, m_active: usize, tau_q: f64) -> NodeId {
    let thr = graph.order_statistic(z, m_active);
    let centered = graph.sub(z, thr);
    let scaled = graph.scale(centered, 1.0 / tau_q);
    graph.sigmoid(scaled)
}

/// Logits with their hard and soft projections.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskState {
    pub z: Vec<f64>,
    pub q: Vec<bool>,
    pub q_tilde: Vec<f64>,
    pub m_active: usize,
    pub tau_q: f64,
}

impl MaskState {
    pub fn from_logits(z: Vec<f64>, m_active: usize, tau_q: f64) -> Result<Self> {
        let q = hard_top_m(&z, m_active)?;
        let q_tilde = soft_top_m(&z, m_active, tau_q)?;
        Ok(Self {
            z,
            q,
            q_tilde,
            m_active,
            tau_q,
        })
    }
}

/// Which objective the interferer's policy serves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Stealth,
    Cooperative,
}

impl Mode {
    pub fn flag(self) -> f64 {
        match self {
            Mode::Stealth => 0.0,
            Mode::Cooperative => 1.0,
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Stealth => "stealth",
            Mode::Cooperative => "cooperative",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stealth" => Ok(Mode::Stealth),
            "cooperative" => Ok(Mode::Cooperative),
            other => Err(Error::config(format!(
                "unknown mode '{other}' (expected stealth or cooperative)"
            ))),
        }
    }
}

/// Scenario parameters folded into the context vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContextParams {
    pub m_active: usize,
    pub aperture: (f64, f64),
    pub sigma_c2: f64,
    pub sigma_n2: f64,
    pub theta_a: usize,
    pub theta_b: usize,
    pub delta: usize,
    pub n_theta: usize,
    pub mode: Mode,
}

/// Number of scalar scenario features appended after the observation.
pub const PSI_LEN: usize = 12;

/// Context length for `k` ports.
pub fn context_len(k: usize) -> usize {
    3 * k + PSI_LEN
}

/// `c = [o_B ; ψ]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyContext(pub Vec<f64>);

impl PolicyContext {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn psi(&self) -> &[f64] {
        &self.0[self.0.len() - PSI_LEN..]
    }
}

pub fn encode_context(obs: &Observation, p: &ContextParams) -> Result<PolicyContext> {
    let k = obs.num_ports();
    check_budget(k, p.m_active)?;
    if p.theta_a >= p.n_theta || p.theta_b >= p.n_theta {
        return Err(Error::config("context angles outside the grid"));
    }
    let kf = k as f64;
    let n = p.n_theta as f64;
    let angle = |bin: usize| 2.0 * PI * bin as f64 / n;
    let (ca, sa, dn) = match p.mode {
        Mode::Stealth => (0.0, 0.0, 0.0),
        Mode::Cooperative => (angle(p.theta_a).cos(), angle(p.theta_a).sin(), p.delta as f64 / n),
    };
    let mut c = obs.feature_vector();
    c.extend_from_slice(&[
        p.m_active as f64 / kf,
        obs.observed_count() as f64 / kf,
        p.aperture.0,
        p.aperture.1,
        p.sigma_c2,
        p.sigma_n2,
        ca,
        sa,
        angle(p.theta_b).cos(),
        angle(p.theta_b).sin(),
        dn,
        p.mode.flag(),
    ]);
    debug_assert_eq!(c.len(), context_len(k));
    Ok(PolicyContext(c))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{observe_channel, PortChannel};
    use crate::numerics::RngStream;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn reflection_endpoints() {
        let cfg = ReflectionConfig::default();
        assert_eq!(reflection_vector(&[0.0; 3], &cfg), vec![c(0.2, 0.0); 3]);
        assert_eq!(reflection_vector(&[1.0; 3], &cfg), vec![c(1.0, 0.0); 3]);
        let mid = reflection_vector(&[0.5; 2], &cfg);
        assert!(mid.iter().all(|r| (r - c(0.6, 0.0)).norm() < 1e-15));
        assert!(ReflectionConfig::new(c(1.0, 0.0), c(1.0, 0.0), c(1.0, 0.0)).is_err());
    }

    #[test]
    fn coupling_single_port() {
        let cfg = ReflectionConfig::new(c(0.0, 0.0), c(0.8, 0.3), c(2.0, -1.0)).unwrap();
        let k = 9;
        let mut g = vec![c(0.0, 0.0); k];
        g[1] = c(1.0, 0.0);
        let mut q = vec![0.0; k];
        q[1] = 1.0;
        let a = effective_coupling(&g, &q, &cfg).unwrap();
        assert!((a - c(2.0, -1.0) * c(0.8, 0.3) / 3.0).norm() < 1e-15);
        let zero = effective_coupling(&vec![c(0.0, 0.0); k], &q, &cfg).unwrap();
        assert_eq!(zero, c(0.0, 0.0));
        assert!(effective_coupling(&g, &q[..3], &cfg).is_err());
    }

    #[test]
    fn coupling_matches_direct_sum() {
        let cfg = ReflectionConfig::new(c(0.1, 0.4), c(-0.7, 0.9), c(1.3, 0.2)).unwrap();
        let mut rng = RngStream::new(3, 0);
        for _ in 0..20 {
            let g: Vec<Complex64> = (0..8).map(|_| rng.complex_gaussian()).collect();
            let q: Vec<f64> = (0..8).map(|_| rng.uniform()).collect();
            let mut want = c(0.0, 0.0);
            for k in 0..8 {
                let rho = c(0.1, 0.4) * (1.0 - q[k]) + c(-0.7, 0.9) * q[k];
                want += g[k].conj() * rho;
            }
            want *= c(1.3, 0.2) / 8f64.sqrt();
            assert!((effective_coupling(&g, &q, &cfg).unwrap() - want).norm() < 1e-12);
        }
    }

    #[test]
    fn hard_projection_examples() {
        assert_eq!(hard_top_m(&[3.0, 1.0, 2.0], 2).unwrap(), vec![true, false, true]);
        assert_eq!(hard_top_m(&[0.5; 4], 2).unwrap(), vec![true, true, false, false]);
        assert!(hard_top_m(&[1.0, 2.0], 0).is_err());
        assert!(hard_top_m(&[1.0, 2.0], 3).is_err());
        assert!(hard_top_m(&[1.0, f64::NAN], 1).is_err());
    }

    #[test]
    fn soft_projection_examples() {
        let q = soft_top_m(&[1.0, 0.0], 1, 0.1).unwrap();
        assert_eq!(q[0], 0.5);
        assert!((q[1] - 4.539_786_870_243_439e-5).abs() < 1e-15);
        let z = [0.3, -1.2, 2.2, 0.9, 0.1];
        let sharp = soft_top_m(&z, 3, 1e-6).unwrap();
        let hard = hard_top_m(&z, 3).unwrap();
        for (s, h) in sharp.iter().zip(&hard) {
            assert_eq!(*s >= 0.5, *h);
        }
        assert!(soft_top_m(&z, 2, 0.0).is_err());
    }

    #[test]
    fn soft_node_matches_plain_function() {
        let z = vec![0.4, -0.3, 1.7, 0.9, 0.0];
        let mut g = DiffGraph::new();
        let zn = g.input(z.clone());
        let q = soft_top_m_node(&mut g, zn, 2, 0.1);
        assert_eq!(g.value(q), soft_top_m(&z, 2, 0.1).unwrap().as_slice());
    }

    fn observation(k: usize, m_obs: usize) -> Observation {
        let mut rng = RngStream::new(5, 0);
        let g = PortChannel((0..k).map(|_| rng.complex_gaussian()).collect());
        observe_channel(&g, m_obs, 0.0, &mut rng).unwrap()
    }

    fn params(mode: Mode) -> ContextParams {
        ContextParams {
            m_active: 20,
            aperture: (2.0, 2.0),
            sigma_c2: 1.0,
            sigma_n2: 0.01,
            theta_a: 16,
            theta_b: 18,
            delta: 2,
            n_theta: 64,
            mode,
        }
    }

    #[test]
    fn context_layout() {
        let obs = observation(200, 30);
        let ctx = encode_context(&obs, &params(Mode::Cooperative)).unwrap();
        assert_eq!(ctx.len(), 612);
        let psi = ctx.psi();
        assert_eq!(psi[0], 0.1);
        assert_eq!(psi[1], 0.15);
        assert!((psi[6] - 0.0).abs() < 1e-15 && (psi[7] - 1.0).abs() < 1e-15);
        assert_eq!(psi[10], 2.0 / 64.0);
        assert_eq!(psi[11], 1.0);
        assert_eq!(&ctx.as_slice()[..600], obs.feature_vector().as_slice());
    }

    #[test]
    fn stealth_context_hides_target_fields() {
        let obs = observation(16, 4);
        let coop = encode_context(&obs, &params(Mode::Cooperative).with_budget(4)).unwrap();
        let st = encode_context(&obs, &params(Mode::Stealth).with_budget(4)).unwrap();
        let psi = st.psi();
        assert_eq!((psi[6], psi[7], psi[10], psi[11]), (0.0, 0.0, 0.0, 0.0));
        assert_eq!(psi[8], coop.psi()[8]);
        assert_eq!(psi[9], coop.psi()[9]);
    }

    impl ContextParams {
        fn with_budget(mut self, m: usize) -> Self {
            self.m_active = m;
            self
        }
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("stealth".parse::<Mode>().unwrap(), Mode::Stealth);
        assert_eq!(Mode::Cooperative.to_string(), "cooperative");
        assert!("both".parse::<Mode>().is_err());
    }
}
