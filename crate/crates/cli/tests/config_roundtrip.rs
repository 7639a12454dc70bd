use fbm_ergodic_cli::config::ExperimentConfig;
use proptest::prelude::*;

proptest! {
    #[test]
    fn toml_round_trip_is_lossless(
        hurst in 0.001f64..0.999,
        gamma in 1e-6f64..10.0,
        steps in 1usize..100_000_000,
        seed in 0u64..(i64::MAX as u64),
        bandwidth in 1e-6f64..10.0,
        burn_in in 0.0f64..1.0,
        halfwidth in prop::option::of(0.1f64..1e3),
        lambda in -1e3f64..1e3,
        n_list in prop::collection::vec(1usize..10_000_000, 0..4),
        h_list in prop::collection::vec(0.01f64..0.99, 0..4),
        oracle in any::<bool>(),
    ) {
        let mut c = ExperimentConfig {
            hurst,
            gamma,
            steps,
            seed,
            bandwidth,
            burn_in,
            grid_halfwidth: halfwidth,
            ..ExperimentConfig::default()
        };
        c.params.insert("lambda".into(), lambda);
        c.compare.n_list = n_list;
        c.compare.h_list = h_list;
        c.density.oracle = oracle;
        let text = c.to_toml();
        prop_assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), c);
    }
}
