use flowbeam::config::parse_config;
use flowbeam::ConfigError;
use proptest::prelude::*;

fn body(u: f64, dt: f64, horizon: f64, seed: u64) -> String {
    format!("seed = {seed}\n[flow]\nu = {u:?}\n[time]\ndt = {dt:?}\nhorizon = {horizon:?}\n")
}

proptest! {
    #[test]
    fn normalized_echo_is_a_fixed_point(u in -0.99f64..0.99, dt in 1e-4f64..0.1, k in 1usize..50, seed in any::<u32>()) {
        let cfg = parse_config(&body(u, dt, dt * k as f64, seed as u64)).unwrap();
        let echo = cfg.normalized();
        let again = parse_config(&echo).unwrap();
        prop_assert_eq!(&again, &cfg);
        prop_assert_eq!(again.normalized(), echo);
        prop_assert_eq!(again.hash(), cfg.hash());
    }

    #[test]
    fn speeds_at_or_above_one_are_rejected(u in 1.0f64..10.0, neg in any::<bool>()) {
        let u = if neg { -u } else { u };
        prop_assert!(matches!(parse_config(&body(u, 0.01, 1.0, 0)), Err(ConfigError::Subsonic(_))));
    }

    #[test]
    fn nonpositive_steps_are_rejected(dt in -1.0f64..=0.0) {
        let rejected = matches!(parse_config(&body(0.1, dt, 1.0, 0)), Err(ConfigError::Invalid { field: "time.dt", .. }));
        prop_assert!(rejected);
    }

    #[test]
    fn distinct_seeds_hash_differently(a in any::<u32>(), b in any::<u32>()) {
        prop_assume!(a != b);
        let ca = parse_config(&body(0.1, 0.01, 1.0, a as u64)).unwrap();
        let cb = parse_config(&body(0.1, 0.01, 1.0, b as u64)).unwrap();
        prop_assert_ne!(ca.hash(), cb.hash());
    }
}
