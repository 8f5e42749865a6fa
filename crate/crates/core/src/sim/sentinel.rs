//! Onboard advisory: estimate the chance of still reaching lane 2 before the
//! incident and tell the driver to move over once it drops below `p_l`.

use alloc::vec;
use alloc::vec::Vec;
use libm::log;

use crate::prob::{
    clamp_relative_speed, critical_gap, estimate_lane_params, prob_success, BaseCaseTable, ChangeQuery, LaneEstimate,
    LaneParams, PerceptionSnapshot, ProbError, CRITICAL_GAP_STANDSTILL, CRITICAL_GAP_TIME, DEFAULT_QUAD_POINTS,
    RELATIVE_SPEED_BAND,
};

pub const PERCEPTION_AHEAD: f64 = 250.0;
pub const PERCEPTION_AHEAD_MAX: usize = 10;
pub const PERCEPTION_BEHIND: f64 = 150.0;
pub const PERCEPTION_BEHIND_MAX: usize = 2;
/// Duration of a lane change (s).
pub const LANE_CHANGE_TIME: f64 = 3.0;
/// Gap spread assumed for a lane with too few observations.
pub const FALLBACK_SIGMA: f64 = 0.3;
/// Lowest ego speed fed to the probability model (m/s).
pub const MIN_QUERY_SPEED: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Advice {
    Stay,
    ChangeLeft,
}

/// A vehicle in the adjacent lane: front position, length, speed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observed {
    pub pos: f64,
    pub length: f64,
    pub speed: f64,
}

/// Picks the observable vehicles around `ego_pos` from `lane`, which must be
/// sorted by position, and measures the clear gaps between consecutive ones.
pub fn perceive(ego_pos: f64, lane: &[Observed]) -> PerceptionSnapshot {
    let split = lane.partition_point(|o| o.pos <= ego_pos);
    let behind = lane[..split]
        .iter()
        .rev()
        .take_while(|o| ego_pos - o.pos <= PERCEPTION_BEHIND)
        .take(PERCEPTION_BEHIND_MAX)
        .count();
    let ahead = lane[split..]
        .iter()
        .take_while(|o| o.pos - ego_pos <= PERCEPTION_AHEAD)
        .take(PERCEPTION_AHEAD_MAX)
        .count();
    let seen = &lane[split - behind..split + ahead];
    PerceptionSnapshot {
        neighbor_speeds: seen.iter().map(|o| o.speed).collect(),
        headways: seen.windows(2).map(|w| (w[1].pos - w[1].length - w[0].pos).max(1e-3)).collect(),
    }
}

/// Lane estimate, or optimistic defaults for a sparsely observed lane.
pub fn lane_estimate(snap: &PerceptionSnapshot, ego_speed: f64, g: f64) -> Result<LaneEstimate, ProbError> {
    match estimate_lane_params(snap) {
        Err(ProbError::InsufficientObservations { .. }) => Ok(LaneEstimate {
            v2: ego_speed + RELATIVE_SPEED_BAND,
            mu: log(2.0 * g),
            sigma: FALLBACK_SIGMA,
        }),
        other => other,
    }
}

/// Inputs and result of one advisory evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Assessment {
    pub d: f64,
    pub ego_speed: f64,
    pub lane: LaneEstimate,
    pub g: f64,
    pub p: f64,
}

/// Success probability of moving one lane over within `d` metres.
pub fn assess(table: &BaseCaseTable, ego_speed: f64, d: f64, snap: &PerceptionSnapshot) -> Result<Assessment, ProbError> {
    let v1 = ego_speed.max(MIN_QUERY_SPEED);
    let g = critical_gap(v1, CRITICAL_GAP_TIME, CRITICAL_GAP_STANDSTILL);
    let lane = lane_estimate(snap, v1, g)?;
    let v2 = clamp_relative_speed(v1, lane.v2, RELATIVE_SPEED_BAND);
    let q = ChangeQuery {
        d: d.max(0.0),
        ego_speed: v1,
        lanes: vec![LaneParams { v: v2, mu: lane.mu, sigma: lane.sigma, g, t: LANE_CHANGE_TIME }],
    };
    let p = prob_success(&q, table, DEFAULT_QUAD_POINTS)?;
    Ok(Assessment { d, ego_speed: v1, lane, g, p })
}

pub fn advise(p: f64, p_l: f64) -> Advice {
    if p < p_l {
        Advice::ChangeLeft
    } else {
        Advice::Stay
    }
}

/// Convenience for tests and tools: lane observations from `(pos, speed)`
/// pairs of equal-length vehicles.
pub fn uniform_lane(vehicles: &[(f64, f64)], length: f64) -> Vec<Observed> {
    let mut lane: Vec<Observed> = vehicles.iter().map(|&(pos, speed)| Observed { pos, length, speed }).collect();
    lane.sort_by(|a, b| a.pos.total_cmp(&b.pos));
    lane
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prob::{GridSpec, TableAxes, TableMeta, FORMAT_VERSION};

    fn table() -> BaseCaseTable {
        // Smooth stand-in for the Monte Carlo table: success grows with the
        // sweep and shrinks with the gap.
        let axes: TableAxes = GridSpec::coarse().axes();
        let mut values = Vec::new();
        for &d in &axes.d {
            for &g in &axes.g {
                for _ in &axes.s {
                    values.push(if d == 0.0 { 0.0 } else { 1.0 - libm::exp(-d / (1.0 + g)) });
                }
            }
        }
        BaseCaseTable::new(axes, values, TableMeta { version: FORMAT_VERSION, samples: 0, seed: 0 }).unwrap()
    }

    #[test]
    fn perception_window_limits() {
        let lane: Vec<(f64, f64)> = (0..60).map(|i| (i as f64 * 10.0, 20.0)).collect();
        let lane = uniform_lane(&lane, 4.75);
        let snap = perceive(300.0, &lane);
        // 2 behind (300 and 290), 10 ahead (310..=400).
        assert_eq!(snap.m(), 12);
        assert_eq!(snap.headways.len(), 11);
        assert!(snap.headways.iter().all(|&h| (h - 5.25).abs() < 1e-9));

        let sparse = uniform_lane(&[(0.0, 20.0), (1000.0, 20.0)], 4.75);
        assert_eq!(perceive(500.0, &sparse).m(), 0);
        let far = uniform_lane(&[(100.0, 20.0), (251.0, 20.0), (400.0, 20.0)], 4.75);
        assert_eq!(perceive(0.0, &far).m(), 1);
    }

    #[test]
    fn sparse_lane_falls_back() {
        let snap = PerceptionSnapshot { neighbor_speeds: vec![20.0], headways: vec![] };
        let est = lane_estimate(&snap, 25.0, 41.0).unwrap();
        assert_eq!(est.v2, 29.0);
        assert!((est.mu - log(82.0)).abs() < 1e-12);
        assert_eq!(est.sigma, FALLBACK_SIGMA);
    }

    #[test]
    fn far_upstream_free_flow_stays() {
        let t = table();
        let lane: Vec<(f64, f64)> = (0..12).map(|i| (i as f64 * 80.0, 30.0)).collect();
        let snap = perceive(400.0, &uniform_lane(&lane, 4.75));
        let a = assess(&t, 25.0, 5000.0, &snap).unwrap();
        assert!(a.p >= 0.99, "{a:?}");
        assert_eq!(advise(a.p, 0.9), Advice::Stay);
    }

    #[test]
    fn past_point_of_no_return_changes() {
        let t = table();
        let snap = PerceptionSnapshot::default();
        let a = assess(&t, 25.0, 60.0, &snap).unwrap();
        assert!(a.p < 1e-9);
        assert_eq!(advise(a.p, 0.999), Advice::ChangeLeft);
        assert_eq!(advise(a.p, 0.6), Advice::ChangeLeft);
    }

    #[test]
    fn higher_threshold_triggers_further_upstream() {
        let t = table();
        let lane: Vec<(f64, f64)> = (0..12).map(|i| (i as f64 * 9.0, 3.0)).collect();
        let snap = perceive(50.0, &uniform_lane(&lane, 4.75));
        let trigger = |p_l: f64| {
            (0..4000)
                .rev()
                .map(|d| d as f64)
                .find(|&d| advise(assess(&t, 25.0, d, &snap).unwrap().p, p_l) == Advice::ChangeLeft)
                .unwrap()
        };
        assert!(trigger(0.9) > trigger(0.7));
    }
}
