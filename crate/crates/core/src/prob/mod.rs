//! Lane-change success probability.
//!
//! Lanes are numbered from the ego lane outward. The ego vehicle starts in
//! lane 1 and wants to be in lane `n` before it has travelled `d` metres.
//! Every target lane `i` is summarised by a common speed, a log-normal clear
//! gap distribution and the driver's critical gap and change duration.
//!
//! The two-lane case comes from a Monte Carlo table ([`BaseCaseTable`]); more
//! lanes are handled by integrating the two-lane probability of the last
//! change against the distribution of where the previous change completes.

mod table;

pub use table::{zero_sweep_probability, BaseCaseTable, GridSpec, TableAxes, TableError, TableMeta, FORMAT_VERSION};

use alloc::vec::Vec;
use libm::{exp, fabs, log, sqrt};

/// Reaction time in the Gipps critical gap `delta * v + s0` (s).
pub const CRITICAL_GAP_TIME: f64 = 1.6;
/// Standstill term of the critical gap (m).
pub const CRITICAL_GAP_STANDSTILL: f64 = 1.0;
/// Half-width of the relative speed band that gets pushed to `v1 + v_l` (m/s).
pub const RELATIVE_SPEED_BAND: f64 = 4.0;
/// Default number of trapezoid intervals for the multi-lane recursion.
pub const DEFAULT_QUAD_POINTS: usize = 64;
/// Smallest accepted number of trapezoid intervals.
pub const MIN_QUAD_POINTS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
pub enum ProbError {
    #[error("need at least 3 observed vehicles to estimate lane parameters, got {observed}")]
    InsufficientObservations { observed: usize },
    #[error("invalid observation: {0}")]
    InvalidObservation(&'static str),
    #[error("degenerate query: {0}")]
    DegenerateQuery(&'static str),
}

/// Traffic state of one target lane together with the driver's parameters
/// for changing into it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaneParams {
    /// Common speed of the lane (m/s).
    pub v: f64,
    /// Mean of the log clear gap (log-metres).
    pub mu: f64,
    /// Standard deviation of the log clear gap.
    pub sigma: f64,
    /// Critical gap (m).
    pub g: f64,
    /// Lane change duration (s).
    pub t: f64,
}

impl LaneParams {
    pub fn validate(&self) -> Result<(), ProbError> {
        if !(self.v >= 0.0) {
            return Err(ProbError::DegenerateQuery("lane speed must be non-negative"));
        }
        if !(self.g > 0.0) {
            return Err(ProbError::DegenerateQuery("critical gap must be positive"));
        }
        if !(self.t > 0.0) {
            return Err(ProbError::DegenerateQuery("lane change duration must be positive"));
        }
        if !(self.sigma >= 0.0) || !self.mu.is_finite() {
            return Err(ProbError::DegenerateQuery("headway distribution parameters"));
        }
        Ok(())
    }

    /// Median clear gap `exp(mu)`.
    pub fn median_gap(&self) -> f64 {
        exp(self.mu)
    }
}

/// A lane-change probability query: reach the last lane in `lanes` within
/// `d` metres, starting from the ego lane at `ego_speed`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChangeQuery {
    pub d: f64,
    pub ego_speed: f64,
    /// Lanes 2..n, nearest first.
    pub lanes: Vec<LaneParams>,
}

impl ChangeQuery {
    /// Number of lanes involved, ego lane included.
    pub fn n(&self) -> usize {
        self.lanes.len() + 1
    }
}

/// Observations of the adjacent lane gathered from onboard perception,
/// ordered along the road.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PerceptionSnapshot {
    pub neighbor_speeds: Vec<f64>,
    /// Clear gaps between consecutive observed vehicles (m).
    pub headways: Vec<f64>,
}

impl PerceptionSnapshot {
    pub fn m(&self) -> usize {
        self.neighbor_speeds.len()
    }
}

/// Lane speed and log-normal gap parameters estimated from a snapshot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaneEstimate {
    pub v2: f64,
    pub mu: f64,
    pub sigma: f64,
}

/// Mean speed, mean log headway and sample standard deviation of the log
/// headways. Sums run over sorted values so the result does not depend on the
/// order of observations.
pub fn estimate_lane_params(snap: &PerceptionSnapshot) -> Result<LaneEstimate, ProbError> {
    let m = snap.m();
    if m < 3 {
        return Err(ProbError::InsufficientObservations { observed: m });
    }
    if snap.headways.len() != m - 1 {
        return Err(ProbError::InvalidObservation("expected one headway per consecutive pair"));
    }
    if snap.headways.iter().any(|&h| !(h > 0.0) || !h.is_finite()) {
        return Err(ProbError::InvalidObservation("headways must be positive"));
    }

    let mut speeds = snap.neighbor_speeds.clone();
    speeds.sort_by(f64::total_cmp);
    let v2 = speeds.iter().sum::<f64>() / m as f64;

    let mut logs: Vec<f64> = snap.headways.iter().map(|&h| log(h)).collect();
    logs.sort_by(f64::total_cmp);
    let k = logs.len() as f64;
    let mu = logs.iter().sum::<f64>() / k;
    let ss: f64 = logs.iter().map(|&x| (x - mu) * (x - mu)).sum();
    let sigma = sqrt(ss / (k - 1.0));

    Ok(LaneEstimate { v2, mu, sigma })
}

/// When the adjacent lane moves within `v_l` of the ego speed, the relative
/// sweep would collapse; the lane speed is pushed to `v1 + v_l` instead.
pub fn clamp_relative_speed(v1: f64, v2: f64, v_l: f64) -> f64 {
    if fabs(v2 - v1) < v_l {
        v1 + v_l
    } else {
        v2
    }
}

/// Gipps critical gap `delta * v + s0`.
pub fn critical_gap(v: f64, delta: f64, s0: f64) -> f64 {
    delta * v + s0
}

/// Base-case query reduced to the three table coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizedQuery {
    /// Relative sweep distance in units of `exp(mu)`.
    pub d_norm: f64,
    /// Critical gap in units of `exp(mu)`.
    pub g_norm: f64,
    pub sigma: f64,
}

/// Reduces a two-lane query to (relative sweep, critical gap, sigma).
///
/// With constant speeds only the distance the ego slides along the adjacent
/// lane matters, and it may only slide while a change can still finish before
/// `d`. Dividing every length by `exp(mu)` turns the gap law into
/// `LogNormal(0, sigma)`.
pub fn normalize_base_case(
    d: f64,
    v1: f64,
    v2: f64,
    mu: f64,
    sigma: f64,
    g: f64,
    t: f64,
) -> Result<NormalizedQuery, ProbError> {
    if !(v1 > 0.0) {
        return Err(ProbError::DegenerateQuery("ego speed must be positive"));
    }
    if !(d >= 0.0) {
        return Err(ProbError::DegenerateQuery("distance must be non-negative"));
    }
    let d_eff = (d - v1 * t).max(0.0);
    let sweep = d_eff * fabs(v1 - v2) / v1;
    let scale = exp(mu);
    Ok(NormalizedQuery { d_norm: sweep / scale, g_norm: g / scale, sigma })
}

/// Two-lane success probability read from the table.
///
/// Zero once a change can no longer finish before `d`.
pub fn lookup_f2(
    table: &BaseCaseTable,
    d: f64,
    v1: f64,
    lane: &LaneParams,
) -> Result<f64, ProbError> {
    let nq = normalize_base_case(d, v1, lane.v, lane.mu, lane.sigma, lane.g, lane.t)?;
    if d == 0.0 || d < v1 * lane.t {
        return Ok(0.0);
    }
    Ok(table.interpolate(nq.d_norm, nq.g_norm, nq.sigma))
}

/// Probability of reaching the last lane of `q` before travelling `q.d`.
///
/// Two lanes read the table directly. With more lanes the completion point
/// of the change into lane `n - 1` is treated as a random position `x` with
/// CDF `f_{n-1}(x)`, and the last change gets the remaining `d - x`:
/// `P = integral_0^d f2(d - x) dF_{n-1}(x)`, evaluated with the trapezoid rule
/// on `quad_points` intervals and central differences for the density.
pub fn prob_success(
    q: &ChangeQuery,
    table: &BaseCaseTable,
    quad_points: usize,
) -> Result<f64, ProbError> {
    if q.lanes.is_empty() {
        return Err(ProbError::DegenerateQuery("query needs at least one target lane"));
    }
    if quad_points < MIN_QUAD_POINTS {
        return Err(ProbError::DegenerateQuery("too few quadrature points"));
    }
    if !(q.d >= 0.0) {
        return Err(ProbError::DegenerateQuery("distance must be non-negative"));
    }
    if !(q.ego_speed > 0.0) {
        return Err(ProbError::DegenerateQuery("ego speed must be positive"));
    }
    for lane in &q.lanes {
        lane.validate()?;
    }
    let p = success_recursive(q.d, q.ego_speed, &q.lanes, table, quad_points)?;
    Ok(p.clamp(0.0, 1.0))
}

fn success_recursive(
    d: f64,
    ego_speed: f64,
    lanes: &[LaneParams],
    table: &BaseCaseTable,
    quad_points: usize,
) -> Result<f64, ProbError> {
    let (last, inner) = lanes.split_last().expect("non-empty lane list");
    if inner.is_empty() {
        return lookup_f2(table, d, ego_speed, last);
    }
    if d == 0.0 {
        return Ok(0.0);
    }
    // Speed of the ego after reaching lane n - 1.
    let penultimate_speed = inner[inner.len() - 1].v;
    if !(penultimate_speed > 0.0) {
        return Err(ProbError::DegenerateQuery("intermediate lane speed must be positive"));
    }

    let h = d / quad_points as f64;
    let mut cdf = Vec::with_capacity(quad_points + 1);
    for i in 0..=quad_points {
        let x = h * i as f64;
        cdf.push(success_recursive(x, ego_speed, inner, table, quad_points)?);
    }

    let mut integral = 0.0;
    for i in 0..=quad_points {
        let density = if i == 0 {
            (cdf[1] - cdf[0]) / h
        } else if i == quad_points {
            (cdf[i] - cdf[i - 1]) / h
        } else {
            (cdf[i + 1] - cdf[i - 1]) / (2.0 * h)
        }
        .max(0.0);
        let x = h * i as f64;
        let tail = lookup_f2(table, (d - x).max(0.0), penultimate_speed, last)?;
        let w = if i == 0 || i == quad_points { 0.5 } else { 1.0 };
        integral += w * tail * density;
    }
    Ok(integral * h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn approx(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn estimate_identical_headways() {
        let e3 = exp(3.0);
        let snap = PerceptionSnapshot {
            neighbor_speeds: vec![20.0, 22.0, 24.0],
            headways: vec![e3, e3],
        };
        let est = estimate_lane_params(&snap).unwrap();
        assert_eq!(est.v2, 22.0);
        assert!(approx(est.mu, 3.0, 1e-12));
        assert!(approx(est.sigma, 0.0, 1e-12));
    }

    #[test]
    fn estimate_sample_std() {
        let snap = PerceptionSnapshot {
            neighbor_speeds: vec![25.0; 4],
            headways: vec![exp(2.0), exp(4.0), exp(3.0)],
        };
        let est = estimate_lane_params(&snap).unwrap();
        assert_eq!(est.v2, 25.0);
        assert!(approx(est.mu, 3.0, 1e-12));
        // sqrt(((2-3)^2 + (4-3)^2 + 0) / 2) = 1
        assert!(approx(est.sigma, 1.0, 1e-12));
    }

    #[test]
    fn estimate_needs_three_vehicles() {
        let snap = PerceptionSnapshot { neighbor_speeds: vec![30.0], headways: vec![] };
        assert_eq!(
            estimate_lane_params(&snap),
            Err(ProbError::InsufficientObservations { observed: 1 })
        );
        let snap = PerceptionSnapshot { neighbor_speeds: vec![30.0, 30.0], headways: vec![5.0] };
        assert!(matches!(
            estimate_lane_params(&snap),
            Err(ProbError::InsufficientObservations { observed: 2 })
        ));
    }

    #[test]
    fn estimate_rejects_bad_headways() {
        let snap = PerceptionSnapshot {
            neighbor_speeds: vec![1.0, 2.0, 3.0],
            headways: vec![1.0, 0.0],
        };
        assert!(matches!(estimate_lane_params(&snap), Err(ProbError::InvalidObservation(_))));
        let snap = PerceptionSnapshot {
            neighbor_speeds: vec![1.0, 2.0, 3.0],
            headways: vec![1.0],
        };
        assert!(matches!(estimate_lane_params(&snap), Err(ProbError::InvalidObservation(_))));
    }

    #[test]
    fn relative_speed_clamp() {
        assert_eq!(clamp_relative_speed(20.0, 22.0, 4.0), 24.0);
        assert_eq!(clamp_relative_speed(20.0, 30.0, 4.0), 30.0);
        assert_eq!(clamp_relative_speed(20.0, 17.0, 4.0), 24.0);
        // band edges are outside the open interval
        assert_eq!(clamp_relative_speed(20.0, 24.0, 4.0), 24.0);
        assert_eq!(clamp_relative_speed(20.0, 16.0, 4.0), 16.0);
    }

    #[test]
    fn critical_gap_values() {
        assert!(approx(critical_gap(30.0, 1.6, 1.0), 49.0, 1e-12));
        assert_eq!(critical_gap(0.0, 1.6, 1.0), 1.0);
        assert!(approx(critical_gap(10.0, 1.6, 1.0), 17.0, 1e-12));
    }

    #[test]
    fn normalization_example() {
        let nq = normalize_base_case(1000.0, 30.0, 20.0, 3.0, 0.5, 49.0, 3.0).unwrap();
        // d_eff = 910, sweep = 910 * 10 / 30
        let sweep = 910.0 * 10.0 / 30.0;
        assert!(approx(sweep, 303.333_333, 1e-5));
        assert!(approx(nq.d_norm, sweep / exp(3.0), 1e-12));
        assert!(approx(nq.d_norm, 15.10, 0.005));
        assert!(approx(nq.g_norm, 2.44, 0.005));
        assert_eq!(nq.sigma, 0.5);
    }

    #[test]
    fn normalization_zero_sweep() {
        let nq = normalize_base_case(1000.0, 25.0, 25.0, 3.0, 0.5, 40.0, 3.0).unwrap();
        assert_eq!(nq.d_norm, 0.0);
        let nq = normalize_base_case(60.0, 25.0, 10.0, 3.0, 0.5, 40.0, 3.0).unwrap();
        assert_eq!(nq.d_norm, 0.0);
        assert!(matches!(
            normalize_base_case(100.0, 0.0, 10.0, 3.0, 0.5, 40.0, 3.0),
            Err(ProbError::DegenerateQuery(_))
        ));
    }

    #[test]
    fn query_validation() {
        let table = BaseCaseTable::constant(GridSpec::coarse().axes(), 0.5);
        let lane = LaneParams { v: 20.0, mu: 3.0, sigma: 0.5, g: 40.0, t: 3.0 };
        let q = ChangeQuery { d: -1.0, ego_speed: 30.0, lanes: vec![lane] };
        assert!(prob_success(&q, &table, 64).is_err());
        let q = ChangeQuery { d: 100.0, ego_speed: 30.0, lanes: vec![] };
        assert!(prob_success(&q, &table, 64).is_err());
        let q = ChangeQuery { d: 100.0, ego_speed: 30.0, lanes: vec![lane] };
        assert!(prob_success(&q, &table, 4).is_err());
        let bad = LaneParams { g: 0.0, ..lane };
        let q = ChangeQuery { d: 100.0, ego_speed: 30.0, lanes: vec![lane, bad] };
        assert!(prob_success(&q, &table, 64).is_err());
    }

    #[test]
    fn recursion_with_constant_table() {
        // With f2 = c wherever a change still fits, f_{n-1} jumps from 0 to c right
        // after x = 0 and the integral collapses to about c * c.
        let table = BaseCaseTable::constant(GridSpec::coarse().axes(), 0.8);
        let lane = LaneParams { v: 20.0, mu: 3.0, sigma: 0.5, g: 40.0, t: 0.001 };
        let outer = LaneParams { v: 26.0, ..lane };
        let q = ChangeQuery { d: 5000.0, ego_speed: 30.0, lanes: vec![lane, outer] };
        let p = prob_success(&q, &table, 64).unwrap();
        assert!((p - 0.64).abs() < 0.02, "p = {p}");
    }
}
