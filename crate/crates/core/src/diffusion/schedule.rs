use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::RngStream;

/// Linear variance-preserving noise schedule. Timesteps are 1-based.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    beta_1: f64,
    beta_t: f64,
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
    beta_tilde: Vec<f64>,
}

/// Serialized form of a schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSpec {
    pub steps: usize,
    pub beta_1: f64,
    pub beta_t: f64,
}

impl ScheduleSpec {
    pub fn build(&self) -> Result<NoiseSchedule> {
        build_schedule(self.steps, self.beta_1, self.beta_t)
    }
}

pub fn build_schedule(steps: usize, beta_1: f64, beta_t: f64) -> Result<NoiseSchedule> {
    if steps < 2 {
        return Err(Error::config(format!("diffusion needs at least 2 steps, got {steps}")));
    }
    if !(beta_1 > 0.0 && beta_1 <= beta_t && beta_t < 1.0) {
        return Err(Error::config(format!(
            "need 0 < beta_1 <= beta_T < 1 (got {beta_1}, {beta_t})"
        )));
    }
    let beta: Vec<f64> = (0..steps)
        .map(|i| beta_1 + (beta_t - beta_1) * i as f64 / (steps - 1) as f64)
        .collect();
    let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
    let mut alpha_bar = Vec::with_capacity(steps);
    let mut acc = 1.0;
    for a in &alpha {
        acc *= a;
        alpha_bar.push(acc);
    }
    let beta_tilde = (0..steps)
        .map(|i| {
            let prev = if i == 0 { 1.0 } else { alpha_bar[i - 1] };
            beta[i] * (1.0 - prev) / (1.0 - alpha_bar[i])
        })
        .collect();
    Ok(NoiseSchedule {
        beta_1,
        beta_t,
        beta,
        alpha,
        alpha_bar,
        beta_tilde,
    })
}

impl NoiseSchedule {
    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    pub fn spec(&self) -> ScheduleSpec {
        ScheduleSpec {
            steps: self.steps(),
            beta_1: self.beta_1,
            beta_t: self.beta_t,
        }
    }

    fn idx(&self, t: usize) -> usize {
        assert!(t >= 1 && t <= self.steps(), "timestep {t} outside 1..={}", self.steps());
        t - 1
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[self.idx(t)]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[self.idx(t)]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[self.idx(t)]
    }

    /// Posterior variance `β̃_t = β_t(1 − ᾱ_{t−1})/(1 − ᾱ_t)`, with `ᾱ_0 = 1`.
    pub fn beta_tilde(&self, t: usize) -> f64 {
        self.beta_tilde[self.idx(t)]
    }

    /// `z_t = √ᾱ_t z_0 + √(1 − ᾱ_t) ε`; returns `(z_t, ε)`.
    pub fn forward_sample(&self, z0: &[f64], t: usize, rng: &mut RngStream) -> (Vec<f64>, Vec<f64>) {
        let eps = rng.standard_normal_vec(z0.len());
        let zt = self.forward_with_noise(z0, t, &eps);
        (zt, eps)
    }

    pub fn forward_with_noise(&self, z0: &[f64], t: usize, eps: &[f64]) -> Vec<f64> {
        let ab = self.alpha_bar(t);
        let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
        z0.iter().zip(eps).map(|(z, e)| a * z + b * e).collect()
    }

    /// Reverse mean `μ = (z_t − β_t/√(1 − ᾱ_t) ε)/√α_t`.
    pub fn reverse_mean(&self, zt: &[f64], eps: &[f64], t: usize) -> Vec<f64> {
        let c = self.beta(t) / (1.0 - self.alpha_bar(t)).sqrt();
        let s = 1.0 / self.alpha(t).sqrt();
        zt.iter().zip(eps).map(|(z, e)| (z - c * e) * s).collect()
    }

    /// Clean estimate `ẑ_0 = (z_t − √(1 − ᾱ_t) ε)/√ᾱ_t`.
    pub fn predict_z0(&self, zt: &[f64], eps: &[f64], t: usize) -> Vec<f64> {
        let ab = self.alpha_bar(t);
        let b = (1.0 - ab).sqrt();
        let s = 1.0 / ab.sqrt();
        zt.iter().zip(eps).map(|(z, e)| (z - b * e) * s).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_step_schedule_is_endpoints() {
        let s = build_schedule(2, 1e-4, 0.02).unwrap();
        assert_eq!((s.beta(1), s.beta(2)), (1e-4, 0.02));
        assert_eq!(s.beta_tilde(1), 0.0);
    }

    #[test]
    fn table_schedule_terminal_alpha_bar() {
        let s = build_schedule(1000, 1e-4, 0.02).unwrap();
        let mut want = 1.0f64;
        for i in 0..1000 {
            want *= 1.0 - (1e-4 + (0.02 - 1e-4) * i as f64 / 999.0);
        }
        assert!((s.alpha_bar(1000) - want).abs() < 1e-15);
        assert!((s.alpha_bar(1000) - 4.0e-5).abs() < 5e-6);
        for t in 2..=1000 {
            assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
            assert!(s.beta(t) >= s.beta(t - 1));
        }
    }

    #[test]
    fn invalid_ranges_rejected() {
        assert!(build_schedule(1, 1e-4, 0.02).is_err());
        assert!(build_schedule(10, 0.0, 0.02).is_err());
        assert!(build_schedule(10, 0.03, 0.02).is_err());
        assert!(build_schedule(10, 1e-4, 1.0).is_err());
    }

    #[test]
    fn clean_estimate_inverts_forward_process() {
        let s = build_schedule(200, 1e-4, 0.02).unwrap();
        let mut rng = RngStream::new(3, 0);
        let z0 = rng.standard_normal_vec(16);
        for t in [1, 50, 200] {
            let (zt, eps) = s.forward_sample(&z0, t, &mut rng);
            let back = s.predict_z0(&zt, &eps, t);
            for (a, b) in back.iter().zip(&z0) {
                assert!((a - b).abs() < 1e-9);
            }
        }
        let zt = vec![0.7, -1.3];
        let z0 = s.predict_z0(&zt, &[0.0, 0.0], 100);
        let ab = s.alpha_bar(100).sqrt();
        assert!((z0[0] - 0.7 / ab).abs() < 1e-15 && (z0[1] + 1.3 / ab).abs() < 1e-15);
    }

    #[test]
    fn zero_noise_reverse_mean() {
        let s = build_schedule(50, 1e-4, 0.02).unwrap();
        let mu = s.reverse_mean(&[2.0, -1.0], &[0.0, 0.0], 30);
        let a = s.alpha(30).sqrt();
        assert_eq!(mu, vec![2.0 * (1.0 / a), -(1.0 / a)]);
    }
}
