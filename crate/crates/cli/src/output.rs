//! CSV writers. Numbers carry three decimals; `NA` marks absent values.
//! Lanes are written 1-based.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use csv::Writer;
use sentinel_core::metrics::{DepartureGrid, IntervalStats, RunSummary, TimeSpaceGrids};
use sentinel_core::sim::{EventLog, VehicleClass, VehicleState};

use crate::CliError;

pub const NA: &str = "NA";

pub fn fmt3(x: f64) -> String {
    let s = format!("{x:.3}");
    if s == "-0.000" {
        "0.000".into()
    } else {
        s
    }
}

pub fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt3).unwrap_or_else(|| NA.into())
}

fn writer(path: &Path) -> Result<Writer<BufWriter<File>>, CliError> {
    Ok(Writer::from_writer(BufWriter::new(File::create(path)?)))
}

/// One row of `events.csv` before sorting.
struct EventRow {
    time: f64,
    order: u8,
    fields: [String; 6],
}

#[allow(clippy::too_many_arguments)]
fn row(time: f64, order: u8, kind: &str, veh_id: u64, class: &str, lane: Option<usize>, pos: Option<f64>, aux: String) -> EventRow {
    EventRow {
        time,
        order,
        fields: [
            kind.into(),
            veh_id.to_string(),
            class.into(),
            lane.map(|l| (l + 1).to_string()).unwrap_or_else(|| NA.into()),
            fmt_opt(pos),
            aux,
        ],
    }
}

/// All events of a run ordered by time, then by kind, then by log order.
pub fn write_events(path: &Path, log: &EventLog) -> Result<(), CliError> {
    let mut rows = Vec::new();
    if let Some((start, end)) = log.incident {
        rows.push(row(start, 0, "incident_start", 0, NA, None, None, NA.into()));
        rows.push(row(end, 0, "incident_end", 0, NA, None, None, NA.into()));
    }
    for e in &log.entries {
        rows.push(row(e.time, 1, "entry", e.veh_id, e.class.as_str(), Some(e.lane), Some(0.0), fmt3(e.desired_speed)));
    }
    for a in &log.advisories {
        rows.push(row(a.time, 2, "advisory", a.veh_id, VehicleClass::SeCar.as_str(), Some(a.lane), Some(a.pos), fmt3(a.probability)));
    }
    for d in &log.departures {
        let aux = format!("to={};last={}", d.to_lane + 1, d.last as u8);
        rows.push(row(d.time, 3, "departure", d.veh_id, d.class.as_str(), Some(d.from_lane), Some(d.pos), aux));
    }
    for c in &log.crossings {
        rows.push(row(c.time, 4, "crossing", c.veh_id, c.class.as_str(), Some(c.lane), Some(c.line_pos), NA.into()));
    }
    for t in &log.trips {
        rows.push(row(t.exit_time, 5, "trip", t.veh_id, t.class.as_str(), Some(t.exit_lane), None, fmt3(t.travel_time())));
    }
    rows.sort_by(|a, b| a.time.total_cmp(&b.time).then(a.order.cmp(&b.order)));
    let mut w = writer(path)?;
    w.write_record(["type", "time_s", "veh_id", "class", "lane", "pos_m", "aux"])?;
    for r in rows {
        let [kind, id, class, lane, pos, aux] = r.fields;
        w.write_record([kind, fmt3(r.time), id, class, lane, pos, aux])?;
    }
    w.flush()?;
    Ok(())
}

/// Streaming writer for vehicle snapshots.
pub struct StateWriter {
    w: Writer<BufWriter<File>>,
}

impl StateWriter {
    pub fn create(path: &Path) -> Result<Self, CliError> {
        let mut w = writer(path)?;
        w.write_record(["time_s", "veh_id", "class", "lane", "pos_m", "speed_mps", "accel_mps2"])?;
        Ok(StateWriter { w })
    }

    pub fn snapshot(&mut self, time: f64, vehicles: &[VehicleState]) -> Result<(), CliError> {
        let t = fmt3(time);
        for v in vehicles.iter().filter(|v| !v.is_blockage()) {
            self.w.write_record([
                t.clone(),
                v.id.to_string(),
                v.class.as_str().into(),
                (v.lane + 1).to_string(),
                fmt3(v.pos),
                fmt3(v.speed),
                fmt3(v.accel),
            ])?;
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<(), CliError> {
        self.w.flush()?;
        Ok(())
    }
}

/// Per-interval statistics, one block per class filter (`all` first).
pub fn write_intervals(path: &Path, blocks: &[(&str, Vec<IntervalStats>)]) -> Result<(), CliError> {
    let mut w = writer(path)?;
    w.write_record([
        "interval_start_s",
        "class_filter",
        "mean_delay_s",
        "std_delay_s",
        "max_delay_s",
        "discharge_veh_hr",
        "count",
    ])?;
    for (filter, stats) in blocks {
        for s in stats {
            let d = s.delay;
            w.write_record([
                fmt3(s.interval_start),
                filter.to_string(),
                fmt_opt(d.map(|d| d.mean)),
                fmt_opt(d.map(|d| d.std)),
                fmt_opt(d.map(|d| d.max)),
                if s.covered { fmt3(s.discharge_veh_hr) } else { NA.into() },
                s.count.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Row-major grid: `#` header lines declare the axes, then one row per time
/// cell led by its start time.
fn write_grid(
    path: &Path,
    title: &str,
    spec: &sentinel_core::metrics::CellGrid,
    value: impl Fn(usize, usize) -> Option<f64>,
) -> Result<(), CliError> {
    let mut f = BufWriter::new(File::create(path)?);
    writeln!(f, "# {title}")?;
    writeln!(f, "# rows: time cells, t0_s={} cell_t_s={} nt={}", fmt3(spec.t0), fmt3(spec.cell_t), spec.nt)?;
    writeln!(f, "# columns: space cells, x0_m={} cell_x_m={} nx={}", fmt3(spec.x0), fmt3(spec.cell_x), spec.nx)?;
    let mut w = Writer::from_writer(f);
    let mut header = vec!["t_start_s".to_string()];
    header.extend((0..spec.nx).map(|j| fmt3(spec.x0 + j as f64 * spec.cell_x)));
    w.write_record(&header)?;
    for i in 0..spec.nt {
        let mut rec = vec![fmt3(spec.t0 + i as f64 * spec.cell_t)];
        rec.extend((0..spec.nx).map(|j| fmt_opt(value(i, j))));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_departure_grid(path: &Path, grid: &DepartureGrid, who: &str) -> Result<(), CliError> {
    let title = format!("last departures from the incident lane ({who}), per ft per s; {} departures", grid.total());
    write_grid(path, &title, &grid.spec, |i, j| Some(grid.value(i, j)))
}

/// `timespace_<lane>_density.csv` (veh/mi) and `timespace_<lane>_speed.csv`
/// (mph) for every lane.
pub fn write_timespace(dir: &Path, grids: &TimeSpaceGrids) -> Result<(), CliError> {
    for lane in 0..grids.lanes {
        let n = lane + 1;
        write_grid(&dir.join(format!("timespace_{n}_density.csv")), &format!("lane {n} density, veh/mi"), &grids.spec, |i, j| {
            grids.density(lane, i, j)
        })?;
        write_grid(&dir.join(format!("timespace_{n}_speed.csv")), &format!("lane {n} mean speed, mph"), &grids.spec, |i, j| {
            grids.speed(lane, i, j)
        })?;
    }
    Ok(())
}

/// Per-run indicators of one case.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRow {
    pub summary: RunSummary,
    pub end_time: f64,
    pub max_latent_queue: usize,
    pub final_latent_queue: usize,
    pub advisories: usize,
}

pub fn write_runs(path: &Path, rows: &[RunRow]) -> Result<(), CliError> {
    let mut w = writer(path)?;
    w.write_record(["seed", "m", "s", "a", "trips", "completed", "end_time_s", "max_latent_queue", "final_latent_queue", "advisories"])?;
    for r in rows {
        let s = &r.summary;
        w.write_record([
            s.seed.to_string(),
            fmt3(s.m),
            fmt3(s.s),
            fmt3(s.a),
            s.count.to_string(),
            s.completed.to_string(),
            fmt3(r.end_time),
            r.max_latent_queue.to_string(),
            r.final_latent_queue.to_string(),
            r.advisories.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// One line of a case's `summary.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub case_id: String,
    pub q_i: f64,
    /// `None` for a baseline.
    pub r: Option<f64>,
    pub gamma_i: f64,
    pub p_l: Option<f64>,
    /// `(m, s, a)`; absent when no run completed.
    pub values: Option<[f64; 3]>,
    /// Percent changes against the baseline.
    pub pct: Option<[f64; 3]>,
    pub completed_runs: usize,
    pub runs_total: usize,
    pub overflow: bool,
}

pub const SUMMARY_HEADER: [&str; 15] = [
    "case_id",
    "q_i",
    "r",
    "gamma_i",
    "p_l",
    "m",
    "s",
    "a",
    "pct_m",
    "pct_s",
    "pct_a",
    "completed_runs",
    "runs_total",
    "overflow",
    "baseline",
];

pub fn write_summary(path: &Path, row: &SummaryRow) -> Result<(), CliError> {
    let mut w = writer(path)?;
    w.write_record(SUMMARY_HEADER)?;
    let v = |k: usize| fmt_opt(row.values.map(|x| x[k]));
    let p = |k: usize| fmt_opt(row.pct.map(|x| x[k]));
    w.write_record([
        row.case_id.clone(),
        fmt3(row.q_i),
        fmt_opt(row.r),
        fmt3(row.gamma_i),
        fmt_opt(row.p_l),
        v(0),
        v(1),
        v(2),
        p(0),
        p(1),
        p(2),
        row.completed_runs.to_string(),
        row.runs_total.to_string(),
        row.overflow.to_string(),
        row.r.is_none().to_string(),
    ])?;
    w.flush()?;
    Ok(())
}

fn parse_opt(s: &str) -> Result<Option<f64>, CliError> {
    if s == NA {
        return Ok(None);
    }
    s.parse().map(Some).map_err(|_| CliError::Other(anyhow::anyhow!("bad number `{s}` in summary")))
}

pub fn read_summary(path: &Path) -> Result<SummaryRow, CliError> {
    let mut r = csv::Reader::from_path(path)?;
    let bad = |m: &str| CliError::Other(anyhow::anyhow!("{}: {m}", path.display()));
    if r.headers()?.iter().ne(SUMMARY_HEADER) {
        return Err(bad("unexpected header"));
    }
    let rec = r.records().next().ok_or_else(|| bad("no data row"))??;
    let f = |k: usize| parse_opt(&rec[k]);
    let triple = |a: Option<f64>, b: Option<f64>, c: Option<f64>| Some([a?, b?, c?]);
    let need = |x: Option<f64>| x.ok_or_else(|| bad("missing value"));
    let int = |k: usize| rec[k].parse::<usize>().map_err(|_| bad("bad count"));
    Ok(SummaryRow {
        case_id: rec[0].to_string(),
        q_i: need(f(1)?)?,
        r: f(2)?,
        gamma_i: need(f(3)?)?,
        p_l: f(4)?,
        values: triple(f(5)?, f(6)?, f(7)?),
        pct: triple(f(8)?, f(9)?, f(10)?),
        completed_runs: int(11)?,
        runs_total: int(12)?,
        overflow: &rec[13] == "true",
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_decimals_without_negative_zero() {
        assert_eq!(fmt3(1.0), "1.000");
        assert_eq!(fmt3(-0.0004), "0.000");
        assert_eq!(fmt3(-17.6796), "-17.680");
        assert_eq!(fmt_opt(None), "NA");
    }

    #[test]
    fn summary_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("summary.csv");
        let row = SummaryRow {
            case_id: "q6400_r0.7_g1800_p0.97".into(),
            q_i: 6400.0,
            r: Some(0.7),
            gamma_i: 1800.0,
            p_l: Some(0.97),
            values: Some([14.9, 3.25, 80.125]),
            pct: Some([-17.68, 0.0, 1.5]),
            completed_runs: 9,
            runs_total: 12,
            overflow: false,
        };
        write_summary(&path, &row).unwrap();
        assert_eq!(read_summary(&path).unwrap(), row);

        let base = SummaryRow { case_id: "q6400_g1800_baseline".into(), r: None, p_l: None, pct: None, values: None, ..row };
        write_summary(&path, &base).unwrap();
        assert_eq!(read_summary(&path).unwrap(), base);
    }
}
