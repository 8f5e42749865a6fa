//! Delay, discharge and density measures computed from event logs.

use alloc::vec;
use alloc::vec::Vec;
use libm::sqrt;

use crate::sim::{EventLog, LaneIndex, Trip, VehicleClass};
use crate::{FT, MILE, MPH};

/// Delays below this are treated as numerical slack (s).
pub const DELAY_SLACK: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("no completed runs to aggregate")]
    NoCompletedRuns,
    #[error("vehicle {veh_id} has delay {delay:.3} s, faster than free flow")]
    NegativeDelay { veh_id: u64, delay: f64 },
    #[error("vehicle {veh_id} exits before it enters")]
    BadTrip { veh_id: u64 },
}

/// Speed that defines zero delay.
#[derive(Debug, Clone, Copy, PartialEq)]
#[derive(Default)]
pub enum FreeFlowReference {
    /// Each vehicle's own desired speed.
    #[default]
    OwnDesired,
    /// One speed for the whole fleet (m/s).
    Fleet(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TravelRecord {
    pub veh_id: u64,
    pub class: VehicleClass,
    pub desired_speed: f64,
    pub entry_time: f64,
    pub exit_time: f64,
    pub delay: f64,
}

/// Travel time over `span` metres minus the free-flow travel time.
pub fn compute_delay(trip: &Trip, span: f64, reference: FreeFlowReference) -> f64 {
    let speed = match reference {
        FreeFlowReference::OwnDesired => trip.desired_speed,
        FreeFlowReference::Fleet(v) => v,
    };
    trip.travel_time() - span / speed
}

pub fn travel_record(trip: &Trip, span: f64, reference: FreeFlowReference) -> Result<TravelRecord, MetricsError> {
    if !(trip.exit_time > trip.entry_time) {
        return Err(MetricsError::BadTrip { veh_id: trip.veh_id });
    }
    let delay = compute_delay(trip, span, reference);
    if delay < -DELAY_SLACK {
        return Err(MetricsError::NegativeDelay { veh_id: trip.veh_id, delay });
    }
    Ok(TravelRecord {
        veh_id: trip.veh_id,
        class: trip.class,
        desired_speed: trip.desired_speed,
        entry_time: trip.entry_time,
        exit_time: trip.exit_time,
        delay,
    })
}

pub fn travel_records(log: &EventLog, span: f64, reference: FreeFlowReference) -> Result<Vec<TravelRecord>, MetricsError> {
    log.trips.iter().map(|t| travel_record(t, span, reference)).collect()
}

/// Fixed-width analysis intervals over `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntervalSpec {
    pub start: f64,
    pub end: f64,
    pub width: f64,
}

impl Default for IntervalSpec {
    fn default() -> Self {
        IntervalSpec { start: 1800.0, end: 9000.0, width: 900.0 }
    }
}

impl IntervalSpec {
    pub fn count(&self) -> usize {
        libm::ceil((self.end - self.start) / self.width).max(0.0) as usize
    }

    pub fn index_of(&self, t: f64) -> Option<usize> {
        if t < self.start || t >= self.end {
            return None;
        }
        let i = ((t - self.start) / self.width) as usize;
        (i < self.count()).then_some(i)
    }

    pub fn interval_start(&self, i: usize) -> f64 {
        self.start + i as f64 * self.width
    }

    /// End of the analysis window a run closed at `end_time` can support:
    /// the window end for a completed run, else the end of the last full
    /// interval.
    pub fn usable_end(&self, end_time: f64, completed: bool) -> f64 {
        if completed {
            return self.end;
        }
        let full = libm::floor((end_time - self.start) / self.width + 1e-9).max(0.0);
        (self.start + full * self.width).min(self.end)
    }
}

/// Mean, sample standard deviation and maximum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DelayStats {
    pub mean: f64,
    pub std: f64,
    pub max: f64,
    pub count: usize,
}

/// Statistics of `values`, summed in sorted order so the result does not
/// depend on input order. `None` when empty.
pub fn delay_stats(values: &[f64]) -> Option<DelayStats> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let mut sq: Vec<f64> = v.iter().map(|x| (x - mean) * (x - mean)).collect();
    sq.sort_by(f64::total_cmp);
    let std = if v.len() > 1 { sqrt(sq.iter().sum::<f64>() / (n - 1.0)) } else { 0.0 };
    Some(DelayStats { mean, std, max: v[v.len() - 1], count: v.len() })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntervalStats {
    pub interval_index: usize,
    pub interval_start: f64,
    /// Absent when no trip ended in the interval.
    pub delay: Option<DelayStats>,
    pub discharge_veh_hr: f64,
    pub count: usize,
    /// The run reached the end of this interval.
    pub covered: bool,
}

/// Per-interval delay statistics by exit time and discharge counts.
pub fn interval_stats(
    log: &EventLog,
    records: &[TravelRecord],
    spec: &IntervalSpec,
    class_filter: Option<VehicleClass>,
) -> Vec<IntervalStats> {
    let usable = spec.usable_end(log.end_time, log.completed);
    let n = spec.count();
    let mut delays: Vec<Vec<f64>> = vec![Vec::new(); n];
    for r in records.iter().filter(|r| class_filter.is_none_or(|c| r.class == c)) {
        if r.exit_time < usable {
            if let Some(i) = spec.index_of(r.exit_time) {
                delays[i].push(r.delay);
            }
        }
    }
    let discharge = discharge_rate(log, spec);
    (0..n)
        .map(|i| {
            let covered = spec.interval_start(i) + spec.width <= usable + 1e-9;
            IntervalStats {
                interval_index: i,
                interval_start: spec.interval_start(i),
                delay: if covered { delay_stats(&delays[i]) } else { None },
                discharge_veh_hr: if covered { discharge[i] } else { 0.0 },
                count: delays[i].len(),
                covered,
            }
        })
        .collect()
}

/// Crossings of the discharge line per interval, in veh/h.
pub fn discharge_rate(log: &EventLog, spec: &IntervalSpec) -> Vec<f64> {
    let mut counts = vec![0usize; spec.count()];
    for c in &log.crossings {
        if let Some(i) = spec.index_of(c.time) {
            counts[i] += 1;
        }
    }
    counts.into_iter().map(|n| n as f64 * 3600.0 / spec.width).collect()
}

/// Crossings per hour over `[from, to)`.
pub fn discharge_between(log: &EventLog, from: f64, to: f64) -> f64 {
    if !(to > from) {
        return 0.0;
    }
    let n = log.crossings.iter().filter(|c| c.time >= from && c.time < to).count();
    n as f64 * 3600.0 / (to - from)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunSummary {
    pub seed: u64,
    pub m: f64,
    pub s: f64,
    pub a: f64,
    pub completed: bool,
    /// Trips in the analysis window.
    pub count: usize,
}

/// Mean, standard deviation and maximum delay of trips that ended inside the
/// usable part of the analysis window.
pub fn summarize_run(seed: u64, log: &EventLog, records: &[TravelRecord], spec: &IntervalSpec) -> RunSummary {
    let usable = spec.usable_end(log.end_time, log.completed);
    let delays: Vec<f64> =
        records.iter().filter(|r| r.exit_time >= spec.start && r.exit_time < usable).map(|r| r.delay).collect();
    let st = delay_stats(&delays).unwrap_or(DelayStats { mean: 0.0, std: 0.0, max: 0.0, count: 0 });
    RunSummary { seed, m: st.mean, s: st.std, a: st.max, completed: log.completed, count: st.count }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aggregate {
    pub m: f64,
    pub s: f64,
    pub a: f64,
    pub completed_runs: usize,
}

fn sorted_mean(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v.iter().sum::<f64>() / v.len() as f64
}

/// Averages of the per-run indicators over completed runs.
pub fn aggregate_runs(runs: &[RunSummary]) -> Result<Aggregate, MetricsError> {
    let done: Vec<&RunSummary> = runs.iter().filter(|r| r.completed).collect();
    if done.is_empty() {
        return Err(MetricsError::NoCompletedRuns);
    }
    Ok(Aggregate {
        m: sorted_mean(done.iter().map(|r| r.m).collect()),
        s: sorted_mean(done.iter().map(|r| r.s).collect()),
        a: sorted_mean(done.iter().map(|r| r.a).collect()),
        completed_runs: done.len(),
    })
}

/// Percent change of `x` relative to `base`.
pub fn percent_change(x: f64, base: f64) -> f64 {
    100.0 * (x - base) / base
}

/// Time-space cells for lane departure density.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellGrid {
    pub t0: f64,
    pub x0: f64,
    /// Cell duration (s).
    pub cell_t: f64,
    /// Cell length (m).
    pub cell_x: f64,
    pub nt: usize,
    pub nx: usize,
}

impl CellGrid {
    /// 100 s by 200 ft cells from 1800 s to 9000 s and from 0 to the end of
    /// the incident zone.
    pub fn departures(zone_end: f64) -> Self {
        let cell_x = 200.0 * FT;
        CellGrid {
            t0: 1800.0,
            x0: 0.0,
            cell_t: 100.0,
            cell_x,
            nt: 72,
            nx: libm::ceil(zone_end / cell_x - 1e-9) as usize,
        }
    }

    /// 100 s by 1000 ft cells covering `[0, t_end)` and `[0, length)`.
    pub fn timespace(t_end: f64, length: f64) -> Self {
        let cell_x = 1000.0 * FT;
        CellGrid {
            t0: 0.0,
            x0: 0.0,
            cell_t: 100.0,
            cell_x,
            nt: libm::ceil(t_end / 100.0 - 1e-9) as usize,
            nx: libm::ceil(length / cell_x - 1e-9) as usize,
        }
    }

    pub fn cell(&self, t: f64, x: f64) -> Option<(usize, usize)> {
        let (ft, fx) = ((t - self.t0) / self.cell_t, (x - self.x0) / self.cell_x);
        if ft < 0.0 || fx < 0.0 {
            return None;
        }
        let (i, j) = (ft as usize, fx as usize);
        (i < self.nt && j < self.nx).then_some((i, j))
    }
}

/// Last departures from the incident lane per time-space cell.
#[derive(Debug, Clone, PartialEq)]
pub struct DepartureGrid {
    pub spec: CellGrid,
    /// Row-major `[time][space]` counts.
    pub counts: Vec<u32>,
}

impl DepartureGrid {
    /// Cell length in feet, the unit of the density.
    pub fn cell_ft(&self) -> f64 {
        self.spec.cell_x / FT
    }

    /// `N / (D T)` in departures per foot-second.
    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.counts[i * self.spec.nx + j] as f64 / (self.cell_ft() * self.spec.cell_t)
    }

    pub fn values(&self) -> Vec<f64> {
        let denom = self.cell_ft() * self.spec.cell_t;
        self.counts.iter().map(|&n| n as f64 / denom).collect()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&n| u64::from(n)).sum()
    }
}

pub fn departure_density(log: &EventLog, spec: CellGrid) -> DepartureGrid {
    let mut counts = vec![0u32; spec.nt * spec.nx];
    for d in log.last_departures() {
        if let Some((i, j)) = spec.cell(d.time, d.pos) {
            counts[i * spec.nx + j] += 1;
        }
    }
    DepartureGrid { spec, counts }
}

/// Share of last departures in `[from, to)` that happen within `reach`
/// metres upstream of `point`. `None` without departures.
pub fn near_departure_share(log: &EventLog, from: f64, to: f64, point: f64, reach: f64) -> Option<f64> {
    let window: Vec<_> = log.last_departures().filter(|d| d.time >= from && d.time < to).collect();
    if window.is_empty() {
        return None;
    }
    let near = window.iter().filter(|d| d.pos <= point && point - d.pos <= reach).count();
    Some(near as f64 / window.len() as f64)
}

/// One vehicle observation in a state snapshot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateSample {
    pub lane: LaneIndex,
    pub pos: f64,
    pub speed: f64,
}

/// Accumulates snapshots into per-lane density and speed grids.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSpaceAccumulator {
    spec: CellGrid,
    lanes: usize,
    snapshots: Vec<u32>,
    counts: Vec<u64>,
    speed_sums: Vec<f64>,
}

impl TimeSpaceAccumulator {
    pub fn new(spec: CellGrid, lanes: usize) -> Self {
        let cells = lanes * spec.nt * spec.nx;
        TimeSpaceAccumulator {
            spec,
            lanes,
            snapshots: vec![0; spec.nt],
            counts: vec![0; cells],
            speed_sums: vec![0.0; cells],
        }
    }

    fn at(&self, lane: usize, i: usize, j: usize) -> usize {
        (lane * self.spec.nt + i) * self.spec.nx + j
    }

    pub fn observe(&mut self, time: f64, samples: impl IntoIterator<Item = StateSample>) {
        let Some((i, _)) = self.spec.cell(time, self.spec.x0) else { return };
        self.snapshots[i] += 1;
        for s in samples {
            if s.lane >= self.lanes {
                continue;
            }
            if let Some((_, j)) = self.spec.cell(time, s.pos) {
                let k = self.at(s.lane, i, j);
                self.counts[k] += 1;
                self.speed_sums[k] += s.speed;
            }
        }
    }

    pub fn finish(&self) -> TimeSpaceGrids {
        let cell_mi = self.spec.cell_x / MILE;
        let cells = self.lanes * self.spec.nt * self.spec.nx;
        let mut density = vec![None; cells];
        let mut speed = vec![None; cells];
        for lane in 0..self.lanes {
            for i in 0..self.spec.nt {
                for j in 0..self.spec.nx {
                    let k = self.at(lane, i, j);
                    let snaps = self.snapshots[i];
                    if snaps > 0 {
                        density[k] = Some(self.counts[k] as f64 / f64::from(snaps) / cell_mi);
                    }
                    if self.counts[k] > 0 {
                        speed[k] = Some(self.speed_sums[k] / self.counts[k] as f64 / MPH);
                    }
                }
            }
        }
        TimeSpaceGrids { spec: self.spec, lanes: self.lanes, density, speed }
    }
}

/// Per-lane `[time][space]` grids; `None` marks cells without data.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSpaceGrids {
    pub spec: CellGrid,
    pub lanes: usize,
    /// Vehicles per mile.
    pub density: Vec<Option<f64>>,
    /// Mean speed in mph.
    pub speed: Vec<Option<f64>>,
}

impl TimeSpaceGrids {
    fn at(&self, lane: usize, i: usize, j: usize) -> usize {
        (lane * self.spec.nt + i) * self.spec.nx + j
    }

    pub fn density(&self, lane: usize, i: usize, j: usize) -> Option<f64> {
        self.density[self.at(lane, i, j)]
    }

    pub fn speed(&self, lane: usize, i: usize, j: usize) -> Option<f64> {
        self.speed[self.at(lane, i, j)]
    }
}
