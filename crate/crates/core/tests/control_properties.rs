use fluidsense::control::{context_len, effective_coupling, hard_top_m, mask_to_real, soft_top_m, ReflectionConfig};
use fluidsense::numerics::RngStream;
use num_complex::Complex64;
use proptest::prelude::*;

/// Logits whose sorted values are at least `gap` apart.
fn spaced_logits(seed: u64, k: usize, gap: f64) -> Vec<f64> {
    let mut rng = RngStream::new(seed, 0);
    let order = rng.sample_without_replacement(k, k);
    let jitter = rng.uniform() * 0.5;
    let mut z = vec![0.0; k];
    for (rank, &i) in order.iter().enumerate() {
        z[i] = rank as f64 * gap + jitter;
    }
    z
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn hard_top_m_ignores_a_common_shift(
        z in prop::collection::vec(-10.0f64..10.0, 1..40),
        m in 1usize..40,
        c in -100.0f64..100.0,
    ) {
        let m = 1 + (m - 1) % z.len();
        let shifted: Vec<f64> = z.iter().map(|v| v + c).collect();
        // shifting can merge values that differed by an ulp; compare only
        // when the order is unambiguous
        let mut sorted = z.clone();
        sorted.sort_by(|a, b| b.total_cmp(a));
        prop_assume!(m == z.len() || sorted[m - 1] - sorted[m] > 1e-9);
        let q = hard_top_m(&z, m).unwrap();
        prop_assert_eq!(q.iter().filter(|b| **b).count(), m);
        prop_assert_eq!(&q, &hard_top_m(&shifted, m).unwrap());
    }

    #[test]
    fn soft_mask_sums_to_budget_when_logits_are_separated(seed: u64, k in 2usize..64, m in 1usize..64) {
        let m = 1 + (m - 1) % k;
        let z = spaced_logits(seed, k, 0.1);
        let q = soft_top_m(&z, m, 1e-3).unwrap();
        let s: f64 = q.iter().sum();
        // the threshold port itself sits at exactly one half, so the sum
        // approaches M - 1/2 rather than M
        let slack = k as f64 / (1.0 + (0.1f64 / 1e-3).exp());
        prop_assert!((s - (m as f64 - 0.5)).abs() <= slack.max(1e-12), "sum {} for m {}", s, m);
        prop_assert!(q.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn vanishing_temperature_recovers_the_hard_mask(seed: u64, k in 2usize..64, m in 1usize..64) {
        let m = 1 + (m - 1) % k;
        let z = spaced_logits(seed, k, 0.1);
        let soft = soft_top_m(&z, m, 1e-6).unwrap();
        let hard = hard_top_m(&z, m).unwrap();
        // z_(M) maps to exactly 0.5, which the threshold counts as active
        let rounded: Vec<bool> = soft.iter().map(|v| *v >= 0.5).collect();
        prop_assert_eq!(rounded, hard);
    }

    #[test]
    fn coupling_is_affine_in_the_mask(seed: u64, k in 1usize..48, a in -2.0f64..2.0, b in -2.0f64..2.0) {
        let mut rng = RngStream::new(seed, 3);
        let g: Vec<Complex64> = (0..k).map(|_| rng.complex_gaussian()).collect();
        let q1: Vec<f64> = (0..k).map(|_| rng.uniform()).collect();
        let q2: Vec<f64> = (0..k).map(|_| rng.uniform()).collect();
        let cfg = ReflectionConfig::new(Complex64::new(0.3, -0.1), Complex64::new(0.9, 0.4), Complex64::new(1.5, 0.5)).unwrap();
        let zero = vec![0.0; k];
        let f = |q: &[f64]| effective_coupling(&g, q, &cfg).unwrap();
        let mix: Vec<f64> = q1.iter().zip(&q2).map(|(x, y)| a * x + b * y).collect();
        let lhs = f(&mix) - f(&zero);
        let rhs = (f(&q1) - f(&zero)) * a + (f(&q2) - f(&zero)) * b;
        prop_assert!((lhs - rhs).norm() <= 1e-12 * (1.0 + rhs.norm()) * k as f64);
    }

    #[test]
    fn binary_masks_give_binary_reals(q in prop::collection::vec(any::<bool>(), 0..64)) {
        let r = mask_to_real(&q);
        let want: Vec<f64> = q.iter().map(|&b| f64::from(u8::from(b))).collect();
        prop_assert_eq!(r, want);
    }
}

#[test]
fn context_length_tracks_port_count() {
    for k in 1..200 {
        assert_eq!(context_len(k), 3 * k + 12);
    }
}
