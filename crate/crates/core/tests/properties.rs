use std::collections::BTreeSet;

use proptest::prelude::*;
use sentinel_core::oracle::{mc_base_case, mc_multilane, OracleConfig};
use sentinel_core::prob::{
    clamp_relative_speed, estimate_lane_params, ChangeQuery, LaneParams, PerceptionSnapshot,
};
use sentinel_core::sim::{simulate, BehaviorParams, RoadConfig, SimConfig};
use sentinel_core::prob::{BaseCaseTable, GridSpec, TableMeta, FORMAT_VERSION};

fn short_run(baseline_mode: bool, seed: u64) -> SimConfig {
    SimConfig {
        q_i: 6400.0,
        r: 0.7,
        p_l: 0.95,
        seed,
        t_end: 1500.0,
        t_seed_period: 300.0,
        incident_start: 300.0,
        gamma_i: 900.0,
        baseline_mode,
        state_decimation: 0,
        check_invariants: true,
        ..SimConfig::default()
    }
}

/// Stand-in table: success grows with the sweep and shrinks with the gap.
fn synthetic_table() -> BaseCaseTable {
    let axes = GridSpec::coarse().axes();
    let mut values = Vec::new();
    for &d in &axes.d {
        for &g in &axes.g {
            for _ in &axes.s {
                values.push(if d == 0.0 { 0.0 } else { 1.0 - (-d / (1.0 + g)).exp() });
            }
        }
    }
    BaseCaseTable::new(axes, values, TableMeta { version: FORMAT_VERSION, samples: 0, seed: 0 }).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn clamp_is_idempotent(v1 in 0.0f64..40.0, v2 in 0.0f64..40.0, band in 0.0f64..8.0) {
        let once = clamp_relative_speed(v1, v2, band);
        prop_assert_eq!(clamp_relative_speed(v1, once, band), once);
    }

    #[test]
    fn lane_estimate_ignores_observation_order(
        obs in proptest::collection::vec((0.0f64..40.0, 0.5f64..200.0), 4..12),
        rot in 0usize..12,
    ) {
        let speeds: Vec<f64> = obs.iter().map(|o| o.0).collect();
        let headways: Vec<f64> = obs[1..].iter().map(|o| o.1).collect();
        let a = estimate_lane_params(&PerceptionSnapshot { neighbor_speeds: speeds.clone(), headways: headways.clone() }).unwrap();
        let (mut s2, mut h2) = (speeds, headways);
        let n = s2.len();
        s2.rotate_left(rot % n);
        h2.reverse();
        let b = estimate_lane_params(&PerceptionSnapshot { neighbor_speeds: s2, headways: h2 }).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn oracle_is_deterministic_and_bounded(
        d in 0.0f64..3000.0, v1 in 1.0f64..35.0, dv in 0.0f64..10.0,
        mu in 2.0f64..4.5, sigma in 0.05f64..1.5, g in 1.0f64..60.0, seed in any::<u64>(),
    ) {
        let cfg = OracleConfig::new(2000, seed);
        let v2 = (v1 - dv).max(0.0);
        let a = mc_base_case(d, v1, v2, mu, sigma, g, 3.0, &cfg).unwrap();
        let b = mc_base_case(d, v1, v2, mu, sigma, g, 3.0, &cfg).unwrap();
        prop_assert_eq!(a, b);
        prop_assert!((0.0..=1.0).contains(&a.p));
        prop_assert!(a.std_error <= (0.25 / cfg.samples as f64).sqrt() + 1e-15);
        let q = ChangeQuery { d, ego_speed: v1, lanes: vec![LaneParams { v: v2, mu, sigma, g, t: 3.0 }; 2] };
        let m = mc_multilane(&q, &cfg).unwrap();
        prop_assert!((0.0..=1.0).contains(&m.p));
    }

    #[test]
    fn assessed_probability_stays_in_unit_interval(
        v in 0.0f64..36.0, d in 0.0f64..6000.0,
        lane in proptest::collection::vec((0.0f64..36.0, 0.0f64..400.0), 0..14),
    ) {
        use sentinel_core::sim::sentinel::{assess, perceive, uniform_lane};
        let snap = perceive(200.0, &uniform_lane(&lane, 4.75));
        let a = assess(&synthetic_table(), v, d, &snap).unwrap();
        prop_assert!((0.0..=1.0).contains(&a.p));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    /// With the lane estimate frozen, P only falls as the distance to the
    /// incident shrinks.
    #[test]
    fn advisory_probability_falls_with_distance(
        v in 5.0f64..35.0,
        lane in proptest::collection::vec((0.0f64..400.0, 0.0f64..30.0), 3..14),
    ) {
        use sentinel_core::sim::sentinel::{assess, perceive, uniform_lane};
        let table = synthetic_table();
        let snap = perceive(200.0, &uniform_lane(&lane, 4.75));
        let mut prev = f64::INFINITY;
        for k in (0..300).rev() {
            let p = assess(&table, v, k as f64 * 10.0, &snap).unwrap().p;
            prop_assert!(p <= prev + 0.02, "p rose from {} to {} at d = {}", prev, p, k * 10);
            prev = p;
        }
    }
}

#[test]
fn oracle_insensitive_to_halving_dt() {
    let points = [
        (800.0, 30.0, 24.0, 3.0, 0.5, 49.0),
        (1500.0, 20.0, 12.0, 2.5, 0.9, 33.0),
        (400.0, 25.0, 5.0, 3.5, 0.3, 41.0),
    ];
    for (d, v1, v2, mu, sigma, g) in points {
        let a = mc_base_case(d, v1, v2, mu, sigma, g, 3.0, &OracleConfig { dt: 0.1, ..OracleConfig::new(40_000, 3) }).unwrap();
        let b = mc_base_case(d, v1, v2, mu, sigma, g, 3.0, &OracleConfig { dt: 0.05, ..OracleConfig::new(40_000, 4) }).unwrap();
        let se = (a.std_error.powi(2) + b.std_error.powi(2)).sqrt();
        assert!((a.p - b.p).abs() <= 2.0 * se.max(1e-3), "{a:?} vs {b:?}");
    }
}

#[test]
fn oracle_monotone_in_distance_and_gap() {
    let cfg = OracleConfig::new(100_000, 11);
    let at = |d: f64, g: f64| mc_base_case(d, 28.0, 22.0, 3.2, 0.6, g, 3.0, &cfg).unwrap().p;
    let by_d: Vec<f64> = (0..8).map(|k| at(100.0 + 250.0 * k as f64, 45.0)).collect();
    let by_g: Vec<f64> = (0..8).map(|k| at(900.0, 10.0 + 10.0 * k as f64)).collect();
    assert!(by_d.windows(2).all(|w| w[1] >= w[0] - 0.01), "{by_d:?}");
    assert!(by_g.windows(2).all(|w| w[1] <= w[0] + 0.01), "{by_g:?}");
}

#[test]
fn simulation_is_deterministic() {
    let table = synthetic_table();
    let run = || simulate(short_run(false, 42), RoadConfig::default(), BehaviorParams::default(), Some(&table), |_| {}).unwrap();
    assert_eq!(run(), run());
}

#[test]
fn advisories_latch_and_baseline_is_silent() {
    let table = synthetic_table();
    let road = RoadConfig::default();
    let log = simulate(short_run(false, 47), road, BehaviorParams::default(), Some(&table), |_| {}).unwrap();
    assert!(!log.advisories.is_empty());
    let ids: BTreeSet<u64> = log.advisories.iter().map(|a| a.veh_id).collect();
    assert_eq!(ids.len(), log.advisories.len(), "a vehicle was advised twice");
    let base = simulate(short_run(true, 47), road, BehaviorParams::default(), None, |_| {}).unwrap();
    assert!(base.advisories.is_empty());
    assert!(base.completed);
}

#[test]
fn baseline_incident_forms_a_queue() {
    let road = RoadConfig::default();
    let cfg = SimConfig { incident_start: 600.0, gamma_i: 600.0, t_end: 1200.0, state_decimation: 10, ..short_run(true, 42) };
    let mut first_stop = None;
    simulate(cfg, road, BehaviorParams::default(), None, |w| {
        let stopped = w.vehicles().iter().any(|v| {
            !v.is_blockage() && v.lane == road.incident_lane && v.pos < road.incident_zone.0 && v.speed < 2.0
        });
        if stopped && first_stop.is_none() {
            first_stop = Some(w.time());
        }
    })
    .unwrap();
    let t = first_stop.expect("no queue formed");
    assert!((600.0..1200.0).contains(&t), "first stop at {t}");
}
