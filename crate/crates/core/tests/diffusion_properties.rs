use fluidsense::control::{context_len, Mode};
use fluidsense::diffusion::{build_schedule, guided_reverse_sample, DenoiserParams, GradMode, SamplerConfig};
use fluidsense::energy::CsiMode;
use fluidsense::numerics::RngStream;
use fluidsense::scenario::{ScenarioConfig, ScenarioModel};
use proptest::prelude::*;

const K: usize = 12;

fn model() -> ScenarioModel {
    let cfg = ScenarioConfig {
        num_ports: K,
        m_obs: 6,
        m_active: 3,
        ..ScenarioConfig::default()
    };
    ScenarioModel::new(cfg, 4).unwrap()
}

/// A small network with a nonzero output layer, so predictions vary.
fn noisy_params(seed: u64) -> DenoiserParams {
    let mut rng = RngStream::new(seed, 0);
    let mut p = DenoiserParams::init(K, context_len(K), &[16], &mut rng).unwrap();
    let last = p.layers.last_mut().unwrap();
    for w in &mut last.weight {
        *w = 0.3 * rng.standard_normal();
    }
    p
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn sampled_masks_meet_the_budget_and_the_best_chain_wins(
        seed: u64,
        m in 1usize..=K,
        kappa in 0.0f64..5.0,
        n_cand in 1usize..6,
        stealth: bool,
        oracle: bool,
        shortcut: bool,
    ) {
        let model = model();
        let mode = if stealth { Mode::Stealth } else { Mode::Cooperative };
        let inst = model.realize_with(seed, m, 6, mode).unwrap();
        let csi_mode = if oracle { CsiMode::Oracle } else { CsiMode::Observed };
        let problem = model.energy_problem(&inst, csi_mode).unwrap();
        let sampler = SamplerConfig {
            n_cand,
            kappa,
            csi_mode,
            grad_mode: if shortcut { GradMode::Shortcut } else { GradMode::Full },
        };
        let schedule = build_schedule(10, 1e-4, 0.02).unwrap();
        let out = guided_reverse_sample(
            &noisy_params(seed),
            &schedule,
            inst.context.as_slice(),
            &problem,
            &sampler,
            &mut RngStream::new(seed, 9),
        )
        .unwrap();
        prop_assert_eq!(out.active.len(), m);
        prop_assert_eq!(out.mask.iter().filter(|b| **b).count(), m);
        let best = out.candidate_energies.iter().flatten().cloned().fold(f64::INFINITY, f64::min);
        prop_assert_eq!(out.energy.to_bits(), best.to_bits());
        prop_assert_eq!(out.energy.to_bits(), problem.evaluate_indices(&out.active).to_bits());
    }

    #[test]
    fn zero_noise_prediction_gives_the_scaled_reverse_mean(seed: u64, t in 1usize..=50) {
        let schedule = build_schedule(50, 1e-4, 0.02).unwrap();
        let params = DenoiserParams::init(K, context_len(K), &[16], &mut RngStream::new(seed, 0)).unwrap();
        let mut rng = RngStream::new(seed, 1);
        let z = rng.standard_normal_vec(K);
        let c = rng.standard_normal_vec(context_len(K));
        let eps = params.predict(&z, t, &c).unwrap();
        prop_assert!(eps.iter().all(|e| *e == 0.0));
        let mu = schedule.reverse_mean(&z, &eps, t);
        let a = schedule.alpha(t).sqrt();
        for (m, zi) in mu.iter().zip(&z) {
            // z·(1/√α) and z/√α can differ in the last place only
            prop_assert!((m - zi / a).abs() <= f64::EPSILON * m.abs());
        }
    }
}
