//! Monte Carlo ground truth for the lane-change model.
//!
//! Each sample lays out log-normal clear gaps along the adjacent lane, puts the
//! ego at a uniformly random point inside the gap it starts next to, and lets
//! it slide relative to the lane in fixed time steps. A change is accepted at
//! the first step at which the gap alongside is at least the critical gap and
//! the change can still complete before the target point.
//!
//! Gaps are only generated as far as the ego can slide, and the step at which
//! the ego first sits inside a given gap is computed directly, so the cost per
//! sample is proportional to the number of gaps swept, not the number of steps.

use libm::{ceil, fabs, floor, sqrt};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};

use crate::prob::{zero_sweep_probability, BaseCaseTable, ChangeQuery, LaneParams, TableAxes, TableError, TableMeta, FORMAT_VERSION};

/// Smallest per-cell sample count accepted when building a table.
pub const MIN_TABLE_SAMPLES: u64 = 10_000;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OracleError {
    #[error("invalid oracle input: {0}")]
    InvalidInput(&'static str),
    #[error("table generation needs at least {MIN_TABLE_SAMPLES} samples per cell, got {0}")]
    TooFewSamples(u64),
    #[error(transparent)]
    Table(#[from] TableError),
}

/// Where the ego starts relative to the gap it is abeam of.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PhaseMode {
    /// Starting gap drawn from the gap law, ego position uniform inside it.
    #[default]
    UniformInGap,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleConfig {
    pub samples: u64,
    pub seed: u64,
    /// Time step (s).
    pub dt: f64,
    pub phase_mode: PhaseMode,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig { samples: 100_000, seed: 0, dt: 0.1, phase_mode: PhaseMode::UniformInGap }
    }
}

impl OracleConfig {
    pub fn new(samples: u64, seed: u64) -> Self {
        OracleConfig { samples, seed, ..Default::default() }
    }

    fn validate(&self) -> Result<(), OracleError> {
        if self.samples == 0 {
            return Err(OracleError::InvalidInput("samples must be at least 1"));
        }
        if !(self.dt > 0.0) {
            return Err(OracleError::InvalidInput("dt must be positive"));
        }
        Ok(())
    }
}

/// A success fraction with its binomial standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub p: f64,
    pub std_error: f64,
    pub samples: u64,
}

impl Estimate {
    fn from_counts(successes: u64, samples: u64) -> Self {
        let p = successes as f64 / samples as f64;
        Estimate { p, std_error: sqrt(p * (1.0 - p) / samples as f64), samples }
    }
}

/// Samples one lane's gap process and returns the first step index `k <= k_max`
/// at which the ego, sliding `step` metres per time step relative to the lane,
/// is alongside a gap of at least `g`.
fn first_acceptance<R: Rng + ?Sized>(
    rng: &mut R,
    gaps: &LogNormal<f64>,
    g: f64,
    step: f64,
    k_max: u64,
) -> Option<u64> {
    let first = gaps.sample(rng);
    let phase: f64 = rng.random();
    if first >= g {
        return Some(0);
    }
    if step <= 0.0 {
        return None;
    }
    let reach = k_max as f64 * step;
    let mut end = (1.0 - phase) * first;
    while end <= reach {
        let start = end;
        let len = gaps.sample(rng);
        end = start + len;
        if len >= g {
            let k = ceil(start / step);
            if k * step <= end && k <= k_max as f64 {
                return Some(k as u64);
            }
        }
    }
    None
}

/// Last step index at which a change of duration `t` started at speed `v`
/// still completes within `remaining` metres.
fn last_step(remaining: f64, v: f64, t: f64, dt: f64) -> Option<u64> {
    let slack = remaining - v * t;
    if slack < 0.0 {
        return None;
    }
    if v <= 0.0 {
        // A stationary ego can wait forever in principle; the oracle gives it
        // a single look.
        return Some(0);
    }
    Some(floor(slack / (v * dt)) as u64)
}

fn lognormal(mu: f64, sigma: f64) -> Result<LogNormal<f64>, OracleError> {
    if !(sigma >= 0.0) || !mu.is_finite() {
        return Err(OracleError::InvalidInput("log-normal parameters"));
    }
    LogNormal::new(mu, sigma).map_err(|_| OracleError::InvalidInput("log-normal parameters"))
}

/// Monte Carlo estimate of the two-lane success probability.
#[allow(clippy::too_many_arguments)]
pub fn mc_base_case(
    d: f64,
    v1: f64,
    v2: f64,
    mu: f64,
    sigma: f64,
    g: f64,
    t: f64,
    cfg: &OracleConfig,
) -> Result<Estimate, OracleError> {
    cfg.validate()?;
    if !(d >= 0.0) || !(v1 > 0.0) || !(v2 >= 0.0) || !(t >= 0.0) || !(g >= 0.0) {
        return Err(OracleError::InvalidInput("need d >= 0, v1 > 0, v2 >= 0, t >= 0, g >= 0"));
    }
    let gaps = lognormal(mu, sigma)?;
    if d == 0.0 {
        return Ok(Estimate::from_counts(0, cfg.samples));
    }
    let Some(k_max) = last_step(d, v1, t, cfg.dt) else {
        return Ok(Estimate::from_counts(0, cfg.samples));
    };
    let step = fabs(v1 - v2) * cfg.dt;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut hits = 0;
    for _ in 0..cfg.samples {
        if first_acceptance(&mut rng, &gaps, g, step, k_max).is_some() {
            hits += 1;
        }
    }
    Ok(Estimate::from_counts(hits, cfg.samples))
}

/// Monte Carlo estimate of reaching the last lane of `q` within `q.d`.
///
/// The ego crosses lanes one at a time. While searching lane `k` it moves at
/// its current speed, spends `t_k` seconds on the change at that speed, and
/// then takes lane `k`'s speed.
pub fn mc_multilane(q: &ChangeQuery, cfg: &OracleConfig) -> Result<Estimate, OracleError> {
    cfg.validate()?;
    if q.lanes.is_empty() {
        return Err(OracleError::InvalidInput("query needs at least one target lane"));
    }
    if !(q.d >= 0.0) || !(q.ego_speed > 0.0) {
        return Err(OracleError::InvalidInput("need d >= 0 and ego speed > 0"));
    }
    let laws = q
        .lanes
        .iter()
        .map(|l: &LaneParams| lognormal(l.mu, l.sigma))
        .collect::<Result<alloc::vec::Vec<_>, _>>()?;
    if q.d == 0.0 {
        return Ok(Estimate::from_counts(0, cfg.samples));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut hits = 0;
    'sample: for _ in 0..cfg.samples {
        let mut pos = 0.0;
        let mut speed = q.ego_speed;
        for (lane, law) in q.lanes.iter().zip(&laws) {
            let Some(k_max) = last_step(q.d - pos, speed, lane.t, cfg.dt) else {
                continue 'sample;
            };
            let step = fabs(speed - lane.v) * cfg.dt;
            let Some(k) = first_acceptance(&mut rng, law, lane.g, step, k_max) else {
                continue 'sample;
            };
            pos += speed * (k as f64 * cfg.dt + lane.t);
            speed = lane.v;
        }
        hits += 1;
    }
    Ok(Estimate::from_counts(hits, cfg.samples))
}

/// Seed used for cell `index` of a table generated with base seed `seed`.
pub fn cell_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_add(index as u64)
}

/// Monte Carlo estimate for one table cell, in normalized units: unit ego
/// speed against a stopped lane, zero change duration, median gap 1.
pub fn estimate_cell(
    axes: &TableAxes,
    i: usize,
    j: usize,
    k: usize,
    per_cell: &OracleConfig,
) -> Result<f64, OracleError> {
    let cfg = OracleConfig { seed: cell_seed(per_cell.seed, axes.index(i, j, k)), ..*per_cell };
    let (d, g, sigma) = (axes.d[i], axes.g[j], axes.s[k]);
    if d == 0.0 {
        return Ok(zero_sweep_probability(g, sigma));
    }
    Ok(mc_base_case(d, 1.0, 0.0, 0.0, sigma, g, 0.0, &cfg)?.p)
}

/// Fills a base-case table cell by cell, then smooths it monotone in D and G,
/// and rounds to the stored precision. The `D = 0` plane is the closed-form
/// zero-sweep limit rather than a Monte Carlo estimate.
///
/// The per-cell step `per_cell.dt` is in normalized time, where the ego slides
/// one median gap per second.
pub fn build_table(axes: TableAxes, per_cell: &OracleConfig) -> Result<BaseCaseTable, OracleError> {
    axes.validate()?;
    per_cell.validate()?;
    if per_cell.samples < MIN_TABLE_SAMPLES {
        return Err(OracleError::TooFewSamples(per_cell.samples));
    }
    let mut values = alloc::vec::Vec::with_capacity(axes.len());
    for i in 0..axes.d.len() {
        for j in 0..axes.g.len() {
            for k in 0..axes.s.len() {
                values.push(estimate_cell(&axes, i, j, k, per_cell)?);
            }
        }
    }
    finish_table(axes, values, per_cell)
}

/// Turns raw cell estimates (row-major, D outer) into a finished table.
pub fn finish_table(
    axes: TableAxes,
    values: alloc::vec::Vec<f64>,
    per_cell: &OracleConfig,
) -> Result<BaseCaseTable, OracleError> {
    let meta = TableMeta { version: FORMAT_VERSION, samples: per_cell.samples, seed: per_cell.seed };
    let mut table = BaseCaseTable::new(axes, values, meta)?;
    table.smooth_monotone();
    table.quantize();
    Ok(table)
}
