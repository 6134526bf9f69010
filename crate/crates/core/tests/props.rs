//! Property tests for the structural invariants of the simulation kernels.

use proptest::prelude::*;

use rwre_core::coupling::{couple_initial, coupled_evolve, BoundaryMode as CplMode};
use rwre_core::environment::{Environment, EnvironmentSpec};
use rwre_core::particles::{evolve, BoundaryMode, Configuration};
use rwre_core::rng::StreamKey;
use rwre_core::stats::tv_distance_to_poisson;
use rwre_core::walker::run_walk;

fn arb_two_point() -> impl Strategy<Value = EnvironmentSpec<f64>> {
    // c in [0.05, 0.3], values inside [c, 1-c], any mixing probability.
    (0.05f64..0.3, 0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0).prop_map(|(c, a, b, q)| {
        let w1 = c + a * (1.0 - 2.0 * c);
        let w2 = c + b * (1.0 - 2.0 * c);
        EnvironmentSpec::two_point((w1, w2), q, c).unwrap()
    })
}

fn arb_counts() -> impl Strategy<Value = Vec<u64>> {
    proptest::collection::vec(0u64..6, 16..60)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn omega_repeatable_and_elliptic(spec in arb_two_point(), seed in any::<u64>(), x in -5_000i64..5_000) {
        let env = Environment::new(spec.clone(), seed).unwrap();
        let w = env.omega_at(x);
        prop_assert_eq!(w, env.omega_at(x));
        prop_assert!(w >= spec.ellipticity_c && w <= 1.0 - spec.ellipticity_c);
        let clone = Environment::new(spec, seed).unwrap();
        prop_assert_eq!(w, clone.omega_at(x));
    }

    #[test]
    fn walk_parity_and_bounds(
        spec in arb_two_point(),
        env_seed in any::<u64>(),
        walk_seed in any::<u64>(),
        start in -100i64..100,
        n in 0u64..600,
    ) {
        let env = Environment::new(spec, env_seed).unwrap();
        let r = run_walk(&env, start, n, StreamKey::from_seed(walk_seed));
        let disp = r.final_position - start;
        prop_assert!(disp.unsigned_abs() <= n);
        prop_assert_eq!((disp - n as i64).rem_euclid(2), 0);
        prop_assert!(r.min_position <= start);
        prop_assert_eq!(r.max_backtrack, (start - r.min_position) as u64);
    }

    #[test]
    fn evolve_conserves_and_stays_nonnegative(
        spec in arb_two_point(),
        counts in arb_counts(),
        env_seed in any::<u64>(),
        dyn_seed in any::<u64>(),
        t in 1u64..20,
    ) {
        let env = Environment::new(spec, env_seed).unwrap();
        let cfg = Configuration::from_counts(-7, counts, 0);
        let total = cfg.total();
        let out = evolve(&env, &cfg, t, StreamKey::from_seed(dyn_seed), BoundaryMode::Expand).unwrap();
        prop_assert_eq!(out.total(), total);
        prop_assert_eq!(out.time(), t);
    }

    #[test]
    fn coupling_invariants_random_steps(
        spec in arb_two_point(),
        eta_counts in arb_counts(),
        zeta_counts in arb_counts(),
        env_seed in any::<u64>(),
        dyn_seed in any::<u64>(),
        t in 1u64..12,
    ) {
        let env = Environment::new(spec, env_seed).unwrap();
        let len = eta_counts.len().min(zeta_counts.len());
        let eta = Configuration::from_counts(0, eta_counts[..len].to_vec(), 0);
        let zeta = Configuration::from_counts(0, zeta_counts[..len].to_vec(), 0);
        let cc = couple_initial(&eta, &zeta).unwrap();
        let eta_total = cc.eta().total();
        let zeta_total = cc.zeta().total();
        let mut all_ok = true;
        coupled_evolve(&env, &cc, t, StreamKey::from_seed(dyn_seed), CplMode::Expand, &mut |state| {
            // Complementarity, marginal reconstruction, conservation.
            all_ok &= state.complementarity_holds()
                && state.eta().total() == eta_total
                && state.zeta().total() == zeta_total;
        }).unwrap();
        prop_assert!(all_ok);
    }

    #[test]
    fn sparse_text_roundtrip(counts in arb_counts(), lo in -50i64..50, time in 0u64..1000) {
        let cfg = Configuration::from_counts(lo, counts, time);
        let text = cfg.to_sparse_text(&[("note", "prop".into())]);
        prop_assert_eq!(Configuration::from_sparse_text(&text).unwrap(), cfg);
    }

    #[test]
    fn tv_distance_in_unit_interval(
        lambda in 0.1f64..20.0,
        seed in any::<u64>(),
    ) {
        let key = StreamKey::from_seed(seed);
        let samples: Vec<u64> = (0..1_000).map(|i| rwre_core::rng::poisson(lambda, key.derive(i))).collect();
        let tv = tv_distance_to_poisson(&samples, lambda).unwrap();
        prop_assert!((0.0..=1.0).contains(&tv));
    }
}
