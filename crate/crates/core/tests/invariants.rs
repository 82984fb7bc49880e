use proptest::prelude::*;

use suplab::engine::oracles::{extinction_prob_oracle, mass_laplace_oracle};
use suplab::engine::{simulate_coupled, EngineParams};
use suplab::hitting::hit_ladder;
use suplab::measure::AtomicMeasure;
use suplab::offspring::OffspringLaw;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn offspring_law_is_critical(beta in 0.05f64..0.99, k in 2u64..300) {
        let law = OffspringLaw::new(beta, 256).unwrap();
        let head: f64 = (0..=k).map(|j| law.prob(j)).sum();
        let head_mean: f64 = (0..=k).map(|j| j as f64 * law.prob(j)).sum();
        prop_assert!((head + law.tail(k) - 1.0).abs() < 1e-9);
        prop_assert!((head_mean + law.tail_mean(k) - 1.0).abs() < 1e-9);
        prop_assert!((0..=k).all(|j| law.prob(j) >= 0.0));
    }

    #[test]
    fn laplace_oracle_is_a_transform(
        m in 0.01f64..5.0, t in 0.01f64..5.0, lambda in 0.01f64..50.0, beta in 0.1f64..0.99,
    ) {
        let v = mass_laplace_oracle(m, t, lambda, beta);
        prop_assert!(v > 0.0 && v <= 1.0);
        prop_assert!(v >= mass_laplace_oracle(m, t, 2.0 * lambda, beta));
        prop_assert!(v <= mass_laplace_oracle(m, 2.0 * t, lambda, beta));
        prop_assert!(extinction_prob_oracle(m, t, beta) <= v);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn truncated_process_is_dominated(seed in 0u64..10_000, n in 50u64..400, k in 0.05f64..2.0) {
        let params = EngineParams::new(0.8, 3, n, 0.6)
            .with_truncation(Some(k))
            .with_snapshots(vec![0.2, 0.4, 0.6])
            .with_seed(seed);
        let init = AtomicMeasure::dirac(&[0.0; 3], 1.0).unwrap();
        let tr = simulate_coupled(&params, &init).unwrap();
        for s in &tr.snapshots {
            prop_assert!(s.kept_count <= s.full_count);
            if s.time < tr.tau_k {
                prop_assert_eq!(s.kept_count, s.full_count);
            }
            let p = s.particles.as_ref().unwrap();
            prop_assert_eq!(p.kept.len(), p.measure.len());
            prop_assert_eq!(p.kept.iter().filter(|x| **x).count() as u64, s.kept_count);
        }
    }

    #[test]
    fn hitting_frequencies_shrink_with_the_ball(seed in 0u64..10_000) {
        let params = EngineParams::new(0.8, 3, 500, 1.0)
            .with_truncation(Some(0.3))
            .with_seed(seed);
        let init = AtomicMeasure::dirac(&[0.0; 3], 1.0).unwrap();
        let eps = [0.5, 0.3, 0.1];
        let l = hit_ladder(&params, &init, 1.0, &[0.5, 0.0, 0.0], &eps, 40).unwrap();
        for j in 0..eps.len() {
            prop_assert!(l.truncated[j].value <= l.full[j].value);
            if j > 0 {
                prop_assert!(l.full[j].value <= l.full[j - 1].value);
            }
        }
    }
}
