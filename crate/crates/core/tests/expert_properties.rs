use fluidsense::control::top_m_indices;
use fluidsense::energy::CsiMode;
use fluidsense::expert::{generate_dataset, reevaluate, ExpertConfig};
use fluidsense::numerics::RngStream;
use fluidsense::scenario::{ScenarioConfig, ScenarioModel};

fn model() -> ScenarioModel {
    let cfg = ScenarioConfig {
        num_ports: 16,
        m_obs: 8,
        m_active: 4,
        ..ScenarioConfig::default()
    };
    ScenarioModel::new(cfg, 3).unwrap()
}

fn expert() -> ExpertConfig {
    ExpertConfig {
        n_samples: 200,
        n_cand: 256,
        m_active_max: 12,
        m_obs_max: 16,
        mixed_mode: true,
        ..ExpertConfig::default()
    }
}

#[test]
fn stored_labels_reproduce_their_energy() {
    let model = model();
    let data = generate_dataset(&model, &expert(), 7).unwrap();
    for s in &data.samples {
        let e = reevaluate(&model, s).unwrap();
        assert!(
            (e - s.energy).abs() <= 1e-9 * s.energy.abs().max(1.0),
            "sample {}: {e} vs {}",
            s.index,
            s.energy
        );
    }
}

#[test]
fn labels_beat_random_masks() {
    let model = model();
    let data = generate_dataset(&model, &expert(), 8).unwrap();
    let k = model.num_ports();
    let mut wins = 0;
    for s in &data.samples {
        let inst = model
            .realize_with(s.scenario_seed, s.m_active, s.m_obs, s.mode)
            .unwrap();
        let problem = model.energy_problem(&inst, CsiMode::Oracle).unwrap();
        let mut rng = RngStream::new(s.scenario_seed, 0xfeed);
        let mean = (0..100)
            .map(|_| {
                let z = rng.standard_normal_vec(k);
                problem.evaluate_indices(&top_m_indices(&z, s.m_active).unwrap())
            })
            .sum::<f64>()
            / 100.0;
        if s.energy <= mean {
            wins += 1;
        }
    }
    assert!(
        wins * 100 >= 99 * data.samples.len(),
        "{wins} of {} labels beat chance",
        data.samples.len()
    );
}
