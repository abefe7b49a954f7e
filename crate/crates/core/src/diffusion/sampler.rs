use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use super::network::DenoiserParams;
use super::schedule::NoiseSchedule;
use crate::control::{mask_from_indices, top_m_indices};
use crate::energy::{CsiMode, EnergyProblem};
use crate::error::{Error, Result};
use crate::numerics::RngStream;

/// How the guidance gradient reaches `z_t` from `ẑ_0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GradMode {
    /// Backpropagate through the denoiser.
    Full,
    /// Treat the predicted noise as constant: `∂ẑ_0/∂z_t = I/√ᾱ_t`.
    Shortcut,
}

impl fmt::Display for GradMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GradMode::Full => "full",
            GradMode::Shortcut => "shortcut",
        })
    }
}

impl FromStr for GradMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(GradMode::Full),
            "shortcut" => Ok(GradMode::Shortcut),
            other => Err(Error::config(format!(
                "unknown grad_mode '{other}' (expected full or shortcut)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub n_cand: usize,
    pub kappa: f64,
    pub csi_mode: CsiMode,
    pub grad_mode: GradMode,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            n_cand: 16,
            kappa: 2.0,
            csi_mode: CsiMode::Observed,
            grad_mode: GradMode::Full,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_cand == 0 {
            return Err(Error::config("n_cand must be at least 1"));
        }
        if !(self.kappa >= 0.0 && self.kappa.is_finite()) {
            return Err(Error::config(format!(
                "kappa must be finite and non-negative, got {}",
                self.kappa
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleOutcome {
    /// Active ports of the winning candidate, ascending.
    pub active: Vec<usize>,
    pub mask: Vec<bool>,
    pub energy: f64,
    /// Final hard-mask energy per chain; `None` for aborted chains.
    pub candidate_energies: Vec<Option<f64>>,
    pub aborted: usize,
}

/// The guidance direction `∇_{z_t} E(q̃(ẑ_0))` for a batch of chains.
/// `grad_z0` holds `∇_{ẑ_0} E` row by row and is consumed.
fn chain_gradients(
    params: &DenoiserParams,
    cache: &super::network::ForwardCache,
    grad_z0: Vec<f64>,
    alpha_bar: f64,
    mode: GradMode,
) -> Vec<f64> {
    let k = params.k;
    let inv = 1.0 / alpha_bar.sqrt();
    match mode {
        GradMode::Shortcut => grad_z0.into_iter().map(|g| g * inv).collect(),
        GradMode::Full => {
            // ẑ_0 = (z − √(1−ᾱ) ε_φ(z))/√ᾱ, so ∇_z = (g − √(1−ᾱ) J_εᵀ g)/√ᾱ
            let (_, d_in) = params.backward(cache, &grad_z0, false);
            let s = (1.0 - alpha_bar).sqrt();
            let width = params.input_dim();
            grad_z0
                .chunks_exact(k)
                .zip(d_in.chunks_exact(width))
                .flat_map(|(g, d)| {
                    g.iter()
                        .zip(&d[..k])
                        .map(|(gi, di)| (gi - s * di) * inv)
                        .collect::<Vec<_>>()
                })
                .collect()
        }
    }
}

/// Energy-guided ancestral sampling over `cfg.n_cand` parallel chains.
/// Each chain ends in a hard mask scored by `problem`; the lowest energy
/// wins (first chain on ties).
pub fn guided_reverse_sample(
    params: &DenoiserParams,
    schedule: &NoiseSchedule,
    context: &[f64],
    problem: &EnergyProblem,
    cfg: &SamplerConfig,
    rng: &mut RngStream,
) -> Result<SampleOutcome> {
    cfg.validate()?;
    let k = params.k;
    if problem.num_ports() != k {
        return Err(Error::config(format!(
            "energy has {} ports but the denoiser was built for {k}",
            problem.num_ports()
        )));
    }
    if context.len() != params.context_len {
        return Err(Error::config(format!(
            "context length {} does not match the denoiser's {}",
            context.len(),
            params.context_len
        )));
    }
    let base = RngStream::new(rng.next_u64(), 0);
    let mut streams: Vec<RngStream> = (0..cfg.n_cand).map(|c| base.derive(c as u64)).collect();
    let mut z: Vec<Vec<f64>> = streams.iter_mut().map(|r| r.standard_normal_vec(k)).collect();
    let mut alive: Vec<bool> = vec![true; cfg.n_cand];

    for t in (1..=schedule.steps()).rev() {
        let live: Vec<usize> = (0..cfg.n_cand).filter(|&c| alive[c]).collect();
        if live.is_empty() {
            break;
        }
        let mut input = Vec::with_capacity(live.len() * params.input_dim());
        for &c in &live {
            params.push_input_row(&z[c], t, context, &mut input)?;
        }
        let cache = params.forward(input, live.len());
        let eps = cache.output();
        let ab = schedule.alpha_bar(t);
        let bt = schedule.beta_tilde(t);
        let step = cfg.kappa * bt;

        let mut guidance = None;
        let mut grad_failed = vec![false; live.len()];
        if step > 0.0 {
            let mut grad_z0 = Vec::with_capacity(live.len() * k);
            for (row, &c) in live.iter().enumerate() {
                let z0_hat = schedule.predict_z0(&z[c], &eps[row * k..(row + 1) * k], t);
                match problem.gradient_wrt_logits(&z0_hat) {
                    Ok(e) => grad_z0.extend(e.gradient.expect("gradient requested")),
                    Err(_) => {
                        grad_failed[row] = true;
                        grad_z0.extend(std::iter::repeat_n(0.0, k));
                    }
                }
            }
            guidance = Some(chain_gradients(params, &cache, grad_z0, ab, cfg.grad_mode));
        }

        let noise_scale = if t > 1 { bt.sqrt() } else { 0.0 };
        for (row, &c) in live.iter().enumerate() {
            let mut mu = schedule.reverse_mean(&z[c], &eps[row * k..(row + 1) * k], t);
            if let Some(g) = &guidance {
                for (m, gi) in mu.iter_mut().zip(&g[row * k..(row + 1) * k]) {
                    *m -= step * gi;
                }
            }
            if t > 1 {
                for m in mu.iter_mut() {
                    *m += noise_scale * streams[c].standard_normal();
                }
            }
            if grad_failed[row] || mu.iter().any(|v| !v.is_finite()) {
                log::warn!("sampling chain {c} aborted at step {t}: non-finite latent");
                alive[c] = false;
            } else {
                z[c] = mu;
            }
        }
    }

    let mut candidate_energies = vec![None; cfg.n_cand];
    let mut best: Option<(Vec<usize>, f64)> = None;
    for c in (0..cfg.n_cand).filter(|&c| alive[c]) {
        let active = top_m_indices(&z[c], problem.m_active())?;
        let e = problem.evaluate_indices(&active);
        candidate_energies[c] = Some(e);
        if best.as_ref().is_none_or(|b| e < b.1) {
            best = Some((active, e));
        }
    }
    let aborted = alive.iter().filter(|a| !**a).count();
    let (active, energy) =
        best.ok_or_else(|| Error::Numerical(format!("all {} sampling chains aborted", cfg.n_cand)))?;
    Ok(SampleOutcome {
        mask: mask_from_indices(k, &active),
        active,
        energy,
        candidate_energies,
        aborted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::schedule::build_schedule;
    use crate::energy::{EnergyWeights, GuardSet};
    use crate::numerics::kth_largest;
    use crate::sensing::{SceneParams, SensingScene};
    use num_complex::Complex64;

    fn setup(seed: u64) -> (DenoiserParams, NoiseSchedule, Vec<f64>, EnergyProblem) {
        let mut rng = RngStream::new(seed, 0);
        let k = 8;
        let mut params = DenoiserParams::init(k, 5, &[16, 16], &mut rng).unwrap();
        for w in params.layers.last_mut().unwrap().weight.iter_mut() {
            *w = 0.2 * rng.standard_normal();
        }
        let schedule = build_schedule(20, 1e-4, 0.02).unwrap();
        let context = rng.standard_normal_vec(5);
        let scene = SensingScene::new(SceneParams::default(), 10, 2).unwrap();
        let guard = GuardSet::new(10, 2, 64).unwrap();
        let g: Vec<Complex64> = (0..k).map(|_| rng.complex_gaussian()).collect();
        let problem = EnergyProblem::new(
            &g,
            &scene,
            &guard,
            EnergyWeights::cooperative(),
            3,
            &Default::default(),
            0.1,
        )
        .unwrap();
        (params, schedule, context, problem)
    }

    #[test]
    fn prior_sampling_is_reproducible_and_feasible() {
        let (params, schedule, ctx, problem) = setup(1);
        let cfg = SamplerConfig {
            n_cand: 6,
            kappa: 0.0,
            ..SamplerConfig::default()
        };
        let a = guided_reverse_sample(&params, &schedule, &ctx, &problem, &cfg, &mut RngStream::new(4, 0)).unwrap();
        let b = guided_reverse_sample(&params, &schedule, &ctx, &problem, &cfg, &mut RngStream::new(4, 0)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.mask.iter().filter(|m| **m).count(), 3);
        let min = a
            .candidate_energies
            .iter()
            .flatten()
            .fold(f64::INFINITY, |m, e| m.min(*e));
        assert_eq!(a.energy, min);
    }

    #[test]
    fn guided_sampling_keeps_feasibility_in_both_modes() {
        let (params, schedule, ctx, problem) = setup(2);
        for grad_mode in [GradMode::Full, GradMode::Shortcut] {
            let cfg = SamplerConfig {
                n_cand: 4,
                kappa: 2.0,
                grad_mode,
                ..SamplerConfig::default()
            };
            let out =
                guided_reverse_sample(&params, &schedule, &ctx, &problem, &cfg, &mut RngStream::new(5, 0)).unwrap();
            assert_eq!(out.active.len(), 3);
            assert_eq!(out.aborted, 0);
        }
    }

    #[test]
    fn non_finite_latents_abort_every_chain() {
        let (params, schedule, mut ctx, problem) = setup(3);
        ctx[0] = f64::NAN;
        let cfg = SamplerConfig {
            n_cand: 3,
            ..SamplerConfig::default()
        };
        let r = guided_reverse_sample(&params, &schedule, &ctx, &problem, &cfg, &mut RngStream::new(6, 0));
        assert!(matches!(r, Err(Error::Numerical(_))));
    }

    #[test]
    fn shape_mismatches_rejected() {
        let (params, schedule, ctx, problem) = setup(4);
        let cfg = SamplerConfig::default();
        let mut rng = RngStream::new(0, 0);
        assert!(guided_reverse_sample(&params, &schedule, &ctx[..4], &problem, &cfg, &mut rng).is_err());
        let bad = SamplerConfig { n_cand: 0, ..cfg };
        assert!(guided_reverse_sample(&params, &schedule, &ctx, &problem, &bad, &mut rng).is_err());
    }

    /// `E(q̃(ẑ_0(z)))` at a fixed step, with the soft top-M threshold
    /// frozen as it is during guidance.
    fn energy_at(
        params: &DenoiserParams,
        s: &NoiseSchedule,
        ctx: &[f64],
        p: &EnergyProblem,
        z: &[f64],
        t: usize,
        thr: f64,
    ) -> f64 {
        let eps = params.predict(z, t, ctx).unwrap();
        let z0 = s.predict_z0(z, &eps, t);
        let q: Vec<f64> = z0
            .iter()
            .map(|v| 1.0 / (1.0 + (-(v - thr) / p.tau_q()).exp()))
            .collect();
        p.evaluate(&q).unwrap().e_total
    }

    fn threshold(
        params: &DenoiserParams,
        s: &NoiseSchedule,
        ctx: &[f64],
        p: &EnergyProblem,
        z: &[f64],
        t: usize,
    ) -> f64 {
        let eps = params.predict(z, t, ctx).unwrap();
        kth_largest(&s.predict_z0(z, &eps, t), p.m_active())
    }

    #[test]
    fn full_gradient_matches_finite_differences() {
        let (params, schedule, ctx, problem) = setup(5);
        let mut rng = RngStream::new(7, 0);
        for t in [3, 12, 20] {
            let z = rng.standard_normal_vec(8);
            let mut row = Vec::new();
            params.push_input_row(&z, t, &ctx, &mut row).unwrap();
            let cache = params.forward(row, 1);
            let z0 = schedule.predict_z0(&z, cache.output(), t);
            let g0 = problem.gradient_wrt_logits(&z0).unwrap().gradient.unwrap();
            let g = chain_gradients(&params, &cache, g0, schedule.alpha_bar(t), GradMode::Full);
            let thr = threshold(&params, &schedule, &ctx, &problem, &z, t);
            let fd = crate::numerics::finite_difference_gradient(
                |x| energy_at(&params, &schedule, &ctx, &problem, x, t, thr),
                &z,
                1e-6,
            );
            let scale = fd.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            for (a, b) in g.iter().zip(&fd) {
                assert!((a - b).abs() <= 1e-4 * scale.max(1e-8), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn small_guidance_step_does_not_raise_energy() {
        let (params, schedule, ctx, problem) = setup(6);
        let mut rng = RngStream::new(8, 0);
        let kappa = 1e-3;
        for _ in 0..100 {
            let t = 2 + rng.index(schedule.steps() - 1);
            let z: Vec<f64> = rng.standard_normal_vec(8);
            let mut row = Vec::new();
            params.push_input_row(&z, t, &ctx, &mut row).unwrap();
            let cache = params.forward(row, 1);
            let eps = cache.output().to_vec();
            let z0 = schedule.predict_z0(&z, &eps, t);
            let g0 = problem.gradient_wrt_logits(&z0).unwrap().gradient.unwrap();
            let g = chain_gradients(&params, &cache, g0, schedule.alpha_bar(t), GradMode::Full);
            let mu = schedule.reverse_mean(&z, &eps, t);
            let step = kappa * schedule.beta_tilde(t);
            let nudged: Vec<f64> = mu.iter().zip(&g).map(|(m, gi)| m - step * gi).collect();
            let thr = threshold(&params, &schedule, &ctx, &problem, &z, t);
            let before = energy_at(&params, &schedule, &ctx, &problem, &mu, t, thr);
            let after = energy_at(&params, &schedule, &ctx, &problem, &nudged, t, thr);
            assert!(after <= before + 1e-9, "t={t}: {before} -> {after}");
        }
    }
}
