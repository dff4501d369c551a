use betacoal::experiment::ExperimentConfig;
use betacoal::lengths::{compositions, cond_expect_z, cond_expect_z_all};
use betacoal::rates::{jump_distribution, merger_rate, total_rate, AlphaModel, RateTable};
use betacoal::rng::SeedRoot;
use betacoal::simulator::{simulate_partition, simulate_path, DEFAULT_PARTITION_CAP};
use betacoal::stable::{weighted_integral, StablePathSample};
use betacoal::stats;
use proptest::prelude::*;

fn alpha() -> impl Strategy<Value = f64> {
    1.01f64..1.99
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rates_are_consistent_under_restriction(a in alpha(), m in 2usize..80, k_off in 0usize..80) {
        let md = AlphaModel::new(a).unwrap();
        let k = 2 + k_off % (m - 1);
        let lhs = merger_rate(m, k, &md).unwrap();
        let rhs = merger_rate(m + 1, k, &md).unwrap() + merger_rate(m + 1, k + 1, &md).unwrap();
        prop_assert!((lhs / rhs - 1.0).abs() < 1e-10);
    }

    #[test]
    fn jump_law_is_a_distribution(a in alpha(), m in 2usize..2_000) {
        let md = AlphaModel::new(a).unwrap();
        let p = jump_distribution(m, &md).unwrap();
        prop_assert_eq!(p.len(), m - 1);
        prop_assert!(p.iter().all(|&x| x >= 0.0));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        prop_assert!(total_rate(m, &md).unwrap() > 0.0);
    }

    #[test]
    fn spectrum_path_invariants(a in alpha(), n in 2usize..400, s_off in 0usize..4, seed in any::<u64>()) {
        let s = 1 + s_off % n.min(4);
        let md = AlphaModel::new(a).unwrap();
        let table = RateTable::new(&md, n).unwrap();
        let p = simulate_path(n, s, &table, SeedRoot(seed), 0).unwrap();
        prop_assert_eq!(p.blocks(0), n);
        prop_assert_eq!(p.blocks(p.tau()), 1);
        prop_assert_eq!(p.deltas().iter().sum::<usize>(), n - 1);
        for k in 0..=p.tau() {
            let row = p.spectrum_row(k);
            let small: usize = row.iter().sum();
            let mass: usize = row.iter().enumerate().map(|(i, z)| (i + 1) * z).sum();
            prop_assert!(small <= p.blocks(k));
            prop_assert!(mass <= n);
            if k > 0 {
                prop_assert_eq!(p.blocks(k) + p.delta(k), p.blocks(k - 1));
            }
        }
        prop_assert!(p.hold().iter().all(|&w| w > 0.0));
    }

    #[test]
    fn partition_chain_is_nested(a in alpha(), n in 3usize..60, seed in any::<u64>()) {
        let md = AlphaModel::new(a).unwrap();
        let table = RateTable::new(&md, n).unwrap();
        let (chain, path) = simulate_partition(n, 3, &table, SeedRoot(seed), 0, DEFAULT_PARTITION_CAP).unwrap();
        prop_assert_eq!(chain.len(), path.tau() + 1);
        for (k, part) in chain.iter().enumerate() {
            prop_assert!(part.is_partition_of(n));
            prop_assert_eq!(part.len(), path.blocks(k));
            for r in 1..=3 {
                let z = part.blocks().iter().filter(|b| b.len() == r).count();
                prop_assert_eq!(z, path.z(r, k));
            }
        }
    }

    #[test]
    fn conditional_expectations_agree(n in 3usize..80, seed in any::<u64>()) {
        let md = AlphaModel::new(1.5).unwrap();
        let table = RateTable::new(&md, n).unwrap();
        let p = simulate_path(n, 3, &table, SeedRoot(seed), 0).unwrap();
        let all = cond_expect_z_all(&p, 3);
        for r in 1..=3 {
            for k in 0..p.tau() {
                let e = cond_expect_z(&p, r, k).unwrap();
                prop_assert!(e >= -1e-12 && e <= p.blocks(k) as f64 + 1e-9);
                prop_assert!((all[r - 1][k] - e).abs() <= 1e-9 * e.max(1.0));
            }
        }
    }

    #[test]
    fn ks_is_a_symmetric_distance(a in prop::collection::vec(-1e3f64..1e3, 1..200), b in prop::collection::vec(-1e3f64..1e3, 1..200)) {
        let d = stats::ks_distance(&a, &b).unwrap();
        prop_assert!((0.0..=1.0).contains(&d));
        prop_assert_eq!(d, stats::ks_distance(&b, &a).unwrap());
        prop_assert_eq!(stats::ks_distance(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn hill_is_scale_invariant(seed in any::<u64>(), c in 0.1f64..100.0) {
        use rand::{Rng, SeedableRng};
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..2_000).map(|_| (1.0 - r.random::<f64>()).powf(-1.0 / 1.5)).collect();
        let y: Vec<f64> = x.iter().map(|v| c * v).collect();
        let (hx, hy) = (stats::hill_tail_index(&x, 0.05).unwrap(), stats::hill_tail_index(&y, 0.05).unwrap());
        prop_assert!((hx / hy - 1.0).abs() < 1e-9);
    }

    #[test]
    fn weighted_integral_is_linear(inc in prop::collection::vec(-10f64..10.0, 1..300), c in -5f64..5.0, beta in 0f64..2.0) {
        let p = StablePathSample::from_increments(0.5, inc.clone()).unwrap();
        let q = StablePathSample::from_increments(0.5, inc.iter().map(|x| c * x).collect()).unwrap();
        let (a, b) = (weighted_integral(&p, 2.0, beta).unwrap(), weighted_integral(&q, 2.0, beta).unwrap());
        prop_assert!((b - c * a).abs() <= 1e-9 * (1.0 + a.abs() * c.abs()));
    }

    #[test]
    fn quantiles_are_monotone(v in prop::collection::vec(-1e6f64..1e6, 1..100), p in 0f64..1.0, q in 0f64..1.0) {
        let (lo, hi) = if p <= q { (p, q) } else { (q, p) };
        prop_assert!(stats::quantile(&v, lo) <= stats::quantile(&v, hi));
    }

    #[test]
    fn config_round_trips_through_toml(a in 1.26f64..1.99, grid in prop::collection::vec(6usize..1_000_000, 1..5), reps in 1usize..5_000, s in 1usize..6, seed in any::<u64>()) {
        let cfg = ExperimentConfig::new(a, grid, reps, s, seed);
        prop_assert!(cfg.validate().is_ok());
        let text = toml::to_string(&cfg).unwrap();
        prop_assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), cfg);
    }
}

#[test]
fn composition_counts() {
    for r in 1..=8usize {
        let cs = compositions(r);
        assert_eq!(cs.len(), if r == 1 { 1 } else { 1 << (r - 2) });
        assert!(cs.iter().all(|c| c.parts().iter().sum::<usize>() == r - 1 && c.parts().iter().all(|&p| p >= 1)));
    }
}
