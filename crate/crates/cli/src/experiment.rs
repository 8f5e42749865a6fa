//! Cases, runs, sweeps and the delay tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use anyhow::Context;
use sentinel_core::metrics::{
    aggregate_runs, departure_density, interval_stats, percent_change, summarize_run, travel_records, Aggregate,
    CellGrid, FreeFlowReference, IntervalSpec, StateSample, TimeSpaceAccumulator,
};
use sentinel_core::prob::BaseCaseTable;
use sentinel_core::sim::{BehaviorParams, EventLog, RoadConfig, SimConfig, SimError, VehicleClass, World};

use crate::config::ExperimentConfig;
use crate::output::{self, RunRow, StateWriter, SummaryRow};
use crate::CliError;

/// One cell of the experiment matrix. A baseline has neither `r` nor `p_l`:
/// the advisory is off, so neither matters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CaseSpec {
    pub q_i: f64,
    pub r: Option<f64>,
    pub gamma_i: f64,
    pub p_l: Option<f64>,
}

impl CaseSpec {
    pub fn baseline(q_i: f64, gamma_i: f64) -> Self {
        CaseSpec { q_i, r: None, gamma_i, p_l: None }
    }

    pub fn advised(q_i: f64, r: f64, gamma_i: f64, p_l: f64) -> Self {
        CaseSpec { q_i, r: Some(r), gamma_i, p_l: Some(p_l) }
    }

    /// Case described by a single-run configuration.
    pub fn from_sim(sim: &SimConfig) -> Self {
        if sim.baseline_mode {
            CaseSpec::baseline(sim.q_i, sim.gamma_i)
        } else {
            CaseSpec::advised(sim.q_i, sim.r, sim.gamma_i, sim.p_l)
        }
    }

    pub fn is_baseline(&self) -> bool {
        self.r.is_none()
    }

    pub fn id(&self) -> String {
        match (self.r, self.p_l) {
            (Some(r), Some(p)) => format!("q{}_r{}_g{}_p{}", self.q_i, r, self.gamma_i, p),
            _ => format!("q{}_g{}_baseline", self.q_i, self.gamma_i),
        }
    }

    /// Run configuration for `seed`. Baselines run with no equipped cars;
    /// with the advisory off those would drive exactly like plain cars.
    pub fn sim(&self, template: &SimConfig, seed: u64) -> SimConfig {
        SimConfig {
            q_i: self.q_i,
            gamma_i: self.gamma_i,
            r: self.r.unwrap_or(0.0),
            p_l: self.p_l.unwrap_or(template.p_l),
            baseline_mode: self.is_baseline(),
            seed,
            ..*template
        }
    }
}

/// Everything shared by the runs of an experiment.
#[derive(Debug, Clone, Copy)]
pub struct RunContext<'a> {
    pub road: RoadConfig,
    pub behavior: BehaviorParams,
    pub table: &'a BaseCaseTable,
    pub reference: FreeFlowReference,
    pub write_states: bool,
}

impl<'a> RunContext<'a> {
    pub fn new(cfg: &ExperimentConfig, table: &'a BaseCaseTable) -> Self {
        RunContext {
            road: RoadConfig::default(),
            behavior: BehaviorParams::default(),
            table,
            reference: cfg.free_flow_reference,
            write_states: cfg.write_states,
        }
    }
}

pub fn analysis_window(sim: &SimConfig) -> IntervalSpec {
    IntervalSpec { start: sim.t_seed_period, end: sim.t_end, width: 900.0 }
}

/// Departure cells covering the analysis window up to the end of the
/// incident zone.
pub fn departure_cells(sim: &SimConfig, road: &RoadConfig) -> CellGrid {
    let base = CellGrid::departures(road.incident_zone.1);
    CellGrid { t0: sim.t_seed_period, nt: ((sim.t_end - sim.t_seed_period) / base.cell_t).ceil() as usize, ..base }
}

fn sim_error(e: SimError, what: &str) -> CliError {
    match e {
        SimError::IntegrityViolation { .. } => CliError::Integrity(format!("{what}: {e}")),
        SimError::InvalidConfig(_) | SimError::MissingTable => CliError::Config(format!("{what}: {e}")),
        other => CliError::Other(anyhow::anyhow!("{what}: {other}")),
    }
}

/// Runs one seed and, given a directory, writes its files there.
pub fn execute_run(sim: SimConfig, ctx: &RunContext, dir: Option<&Path>) -> Result<(RunRow, EventLog), CliError> {
    let what = format!("{} seed {}", CaseSpec::from_sim(&sim).id(), sim.seed);
    let sim = if ctx.write_states && dir.is_some() { sim } else { SimConfig { state_decimation: 0, ..sim } };
    let world = World::new(sim, ctx.road, ctx.behavior, Some(ctx.table)).map_err(|e| sim_error(e, &what))?;

    let mut states = match dir {
        Some(d) if ctx.write_states => {
            std::fs::create_dir_all(d)?;
            Some((StateWriter::create(&d.join("states.csv"))?, TimeSpaceAccumulator::new(CellGrid::timespace(sim.t_end, ctx.road.length), ctx.road.lanes)))
        }
        _ => None,
    };
    let mut write_err = None;
    let log = world
        .run(|w| {
            if let Some((writer, acc)) = states.as_mut() {
                let vehicles = w.vehicles();
                if write_err.is_none() {
                    write_err = writer.snapshot(w.time(), vehicles).err();
                }
                let samples = vehicles.iter().filter(|v| !v.is_blockage());
                acc.observe(w.time(), samples.map(|v| StateSample { lane: v.lane, pos: v.pos, speed: v.speed }));
            }
        })
        .map_err(|e| sim_error(e, &what))?;
    if let Some(e) = write_err {
        return Err(e);
    }

    let records = travel_records(&log, ctx.road.measurement_span, ctx.reference)
        .map_err(|e| CliError::Integrity(format!("{what}: {e}")))?;
    let spec = analysis_window(&sim);
    let row = RunRow {
        summary: summarize_run(sim.seed, &log, &records, &spec),
        end_time: log.end_time,
        max_latent_queue: log.max_latent_queue,
        final_latent_queue: log.final_latent_queue,
        advisories: log.advisories.len(),
    };

    if let Some(dir) = dir {
        std::fs::create_dir_all(dir)?;
        output::write_events(&dir.join("events.csv"), &log)?;
        let mut blocks = vec![("all", interval_stats(&log, &records, &spec, None))];
        for class in VehicleClass::ALL {
            blocks.push((class.as_str(), interval_stats(&log, &records, &spec, Some(class))));
        }
        output::write_intervals(&dir.join("intervals.csv"), &blocks)?;
        let cells = departure_cells(&sim, &ctx.road);
        output::write_departure_grid(&dir.join("departure_grid.csv"), &departure_density(&log, cells), "all vehicles")?;
        let se_only = EventLog {
            departures: log.departures.iter().filter(|d| d.class == VehicleClass::SeCar).copied().collect(),
            ..EventLog::default()
        };
        output::write_departure_grid(&dir.join("departure_grid_se_car.csv"), &departure_density(&se_only, cells), "SE cars")?;
        if let Some((writer, acc)) = states {
            writer.finish()?;
            output::write_timespace(dir, &acc.finish())?;
        }
    }
    Ok((row, log))
}

/// Applies `f` to every item on up to `threads` worker threads. Results keep
/// the item order.
pub fn parallel_map<T: Sync, R: Send>(items: &[T], threads: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let threads = threads.clamp(1, items.len().max(1));
    if threads == 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..threads {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                slots.lock().unwrap()[i] = Some(r);
            });
        }
    });
    slots.into_inner().unwrap().into_iter().map(|r| r.expect("every item ran")).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseResult {
    pub spec: CaseSpec,
    pub runs: Vec<RunRow>,
    pub aggregate: Option<Aggregate>,
    /// Some run ended with arrivals still waiting to enter.
    pub overflow: bool,
}

impl CaseResult {
    pub fn from_runs(spec: CaseSpec, runs: Vec<RunRow>) -> Self {
        let summaries: Vec<_> = runs.iter().map(|r| r.summary).collect();
        CaseResult {
            spec,
            aggregate: aggregate_runs(&summaries).ok(),
            overflow: runs.iter().any(|r| r.final_latent_queue > 0),
            runs,
        }
    }

    pub fn summary_row(&self, baseline: Option<&SummaryRow>) -> SummaryRow {
        let values = self.aggregate.map(|a| stored([a.m, a.s, a.a]));
        SummaryRow {
            case_id: self.spec.id(),
            q_i: self.spec.q_i,
            r: self.spec.r,
            gamma_i: self.spec.gamma_i,
            p_l: self.spec.p_l,
            values,
            pct: match (values, baseline.and_then(|b| b.values)) {
                (Some(v), Some(b)) if !self.spec.is_baseline() => Some(deltas(v, b)),
                _ => None,
            },
            completed_runs: self.aggregate.map_or(0, |a| a.completed_runs),
            runs_total: self.runs.len(),
            overflow: self.overflow,
        }
    }
}

/// Values as they appear in the CSV files, so deltas recompute exactly from
/// stored output.
fn stored(v: [f64; 3]) -> [f64; 3] {
    v.map(|x| output::fmt3(x).parse().unwrap())
}

fn deltas(v: [f64; 3], base: [f64; 3]) -> [f64; 3] {
    [0, 1, 2].map(|k| percent_change(v[k], base[k]))
}

/// Runs every seed of `spec` and writes `<out>/<case-id>/`.
pub fn run_case(
    spec: CaseSpec,
    cfg: &ExperimentConfig,
    ctx: &RunContext,
    out: &Path,
    baseline: Option<&SummaryRow>,
    threads: usize,
) -> Result<(CaseResult, SummaryRow), CliError> {
    let dir = out.join(spec.id());
    let seeds = cfg.seeds();
    let runs = parallel_map(&seeds, threads, |&seed| {
        let run_dir = dir.join(format!("run-{seed}"));
        execute_run(spec.sim(&cfg.sim, seed), ctx, Some(&run_dir)).map(|(row, _)| row)
    })
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;
    finish_case(spec, runs, &dir, baseline)
}

fn finish_case(spec: CaseSpec, runs: Vec<RunRow>, dir: &Path, baseline: Option<&SummaryRow>) -> Result<(CaseResult, SummaryRow), CliError> {
    std::fs::create_dir_all(dir)?;
    let result = CaseResult::from_runs(spec, runs);
    output::write_runs(&dir.join("runs.csv"), &result.runs)?;
    let row = result.summary_row(baseline);
    output::write_summary(&dir.join("summary.csv"), &row)?;
    Ok((result, row))
}

/// Baselines and advised cases of the matrix, skipping excluded cells.
pub fn plan(cfg: &ExperimentConfig) -> (Vec<CaseSpec>, Vec<CaseSpec>, Vec<(f64, f64)>) {
    let m = &cfg.matrix;
    let (mut baselines, mut advised, mut skipped) = (Vec::new(), Vec::new(), Vec::new());
    for &q in &m.q_i {
        for &g in &m.gamma_i {
            if m.is_excluded(q, g) {
                skipped.push((q, g));
                continue;
            }
            baselines.push(CaseSpec::baseline(q, g));
            for &r in &m.r {
                for &p in &m.p_l {
                    advised.push(CaseSpec::advised(q, r, g, p));
                }
            }
        }
    }
    (baselines, advised, skipped)
}

/// Runs the whole matrix, baselines first. Whole runs are distributed over
/// `threads`; `notice` receives progress and exclusion messages.
pub fn sweep(
    cfg: &ExperimentConfig,
    ctx: &RunContext,
    out: &Path,
    threads: usize,
    mut notice: impl FnMut(&str),
) -> Result<Vec<CaseResult>, CliError> {
    let (baselines, advised, skipped) = plan(cfg);
    for (q, g) in skipped {
        notice(&format!("skipping q_i = {q}, gamma_i = {g}: excluded (input overflow)"));
    }
    let seeds = cfg.seeds();
    let mut results = Vec::new();
    let mut base_rows: Vec<((f64, f64), SummaryRow)> = Vec::new();
    for (phase, cases) in [("baseline", &baselines), ("advised", &advised)] {
        notice(&format!("{phase}: {} cases x {} runs", cases.len(), seeds.len()));
        let jobs: Vec<(usize, u64)> = (0..cases.len()).flat_map(|c| seeds.iter().map(move |&s| (c, s))).collect();
        let rows = parallel_map(&jobs, threads, |&(c, seed)| {
            let spec = cases[c];
            let r = execute_run(spec.sim(&cfg.sim, seed), ctx, Some(&out.join(spec.id()).join(format!("run-{seed}"))));
            r.map(|(row, _)| row)
        });
        let mut rows = rows.into_iter();
        for spec in cases.iter() {
            let runs = rows.by_ref().take(seeds.len()).collect::<Result<Vec<_>, _>>()?;
            let base = base_rows.iter().find(|(k, _)| *k == (spec.q_i, spec.gamma_i)).map(|(_, r)| r);
            let (result, row) = finish_case(*spec, runs, &out.join(spec.id()), base)?;
            notice(&format!("{}: m = {}", spec.id(), output::fmt_opt(row.values.map(|v| v[0]))));
            if spec.is_baseline() {
                base_rows.push(((spec.q_i, spec.gamma_i), row));
            }
            results.push(result);
        }
    }
    Ok(results)
}

#[derive(Debug, thiserror::Error)]
#[error("no baseline for q_i = {q_i}, gamma_i = {gamma_i}")]
pub struct MissingBaseline {
    pub q_i: f64,
    pub gamma_i: f64,
}

/// Reads every `<input>/<case>/summary.csv`.
pub fn collect_summaries(input: &Path) -> Result<Vec<SummaryRow>, CliError> {
    let mut rows = Vec::new();
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(input)
        .with_context(|| format!("reading {}", input.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("summary.csv").is_file())
        .collect();
    dirs.sort();
    for d in dirs {
        rows.push(output::read_summary(&d.join("summary.csv"))?);
    }
    Ok(rows)
}

/// File name of the delay table for an incident duration.
pub fn table_name(gamma_i: f64) -> String {
    if gamma_i == 1800.0 {
        "tableII.csv".into()
    } else if gamma_i == 3600.0 {
        "tableIII.csv".into()
    } else {
        format!("table_g{gamma_i}.csv")
    }
}

/// One cell of a delay table: the value, its change against the baseline and
/// the completed-run count when more than two runs failed.
fn cell(row: &SummaryRow, base: &SummaryRow, k: usize) -> String {
    let Some(v) = row.values else { return output::NA.into() };
    let mut s = output::fmt3(v[k]);
    if let (false, Some(b)) = (row.r.is_none(), base.values) {
        let _ = write!(s, " ({:+.1}%)", percent_change(v[k], b[k]));
        if k == 0 && row.completed_runs + 2 < row.runs_total {
            let _ = write!(s, " ({})", row.completed_runs);
        }
    }
    s
}

/// Builds one delay table per incident duration from stored summaries.
/// Rows are grouped by `q_i` with the baseline first and thresholds
/// decreasing; each `r` gets an `m, s, a` column triple.
pub fn report(input: &Path, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let rows = collect_summaries(input)?;
    let key = |x: f64| output::fmt3(x);
    let mut by_gamma: BTreeMap<String, (f64, Vec<&SummaryRow>)> = BTreeMap::new();
    for r in &rows {
        by_gamma.entry(key(r.gamma_i)).or_insert((r.gamma_i, Vec::new())).1.push(r);
    }
    std::fs::create_dir_all(out)?;
    let mut written = Vec::new();
    for (gamma_i, rows) in by_gamma.values() {
        let mut qs: Vec<f64> = rows.iter().map(|r| r.q_i).collect();
        let mut rs: Vec<f64> = rows.iter().filter_map(|r| r.r).collect();
        let mut ps: Vec<f64> = rows.iter().filter_map(|r| r.p_l).collect();
        for v in [&mut qs, &mut rs, &mut ps] {
            v.sort_by(f64::total_cmp);
            v.dedup();
        }
        ps.reverse();
        let path = out.join(table_name(*gamma_i));
        let mut w = csv::Writer::from_path(&path)?;
        let mut header = vec!["q_i".to_string(), "p_l".to_string()];
        for r in &rs {
            let pct = format!("{}", (r * 100.0).round());
            header.extend(["m", "s", "a"].map(|k| format!("{k}_r{pct}")));
        }
        w.write_record(&header)?;
        for &q in &qs {
            let base = rows
                .iter()
                .find(|r| r.q_i == q && r.r.is_none())
                .ok_or(MissingBaseline { q_i: q, gamma_i: *gamma_i })
                .map_err(|e| CliError::Other(e.into()))?;
            let mut rec = vec![key(q), "baseline".into()];
            for _ in &rs {
                rec.extend((0..3).map(|k| cell(base, base, k)));
            }
            w.write_record(&rec)?;
            for &p in &ps {
                let mut rec = vec![key(q), key(p)];
                let mut any = false;
                for &r in &rs {
                    match rows.iter().find(|x| x.q_i == q && x.r == Some(r) && x.p_l == Some(p)) {
                        Some(row) => {
                            any = true;
                            rec.extend((0..3).map(|k| cell(row, base, k)));
                        }
                        None => rec.extend((0..3).map(|_| output::NA.to_string())),
                    }
                }
                if any {
                    w.write_record(&rec)?;
                }
            }
        }
        w.flush()?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use sentinel_core::metrics::RunSummary;

    fn run_row(seed: u64, m: f64, completed: bool) -> RunRow {
        RunRow {
            summary: RunSummary { seed, m, s: m / 2.0, a: m * 3.0, completed, count: 10 },
            end_time: 9000.0,
            max_latent_queue: 0,
            final_latent_queue: 0,
            advisories: 0,
        }
    }

    #[test]
    fn case_ids() {
        assert_eq!(CaseSpec::advised(6400.0, 0.7, 1800.0, 0.95).id(), "q6400_r0.7_g1800_p0.95");
        assert_eq!(CaseSpec::baseline(8000.0, 3600.0).id(), "q8000_g3600_baseline");
    }

    #[test]
    fn baseline_runs_without_advisory() {
        let sim = CaseSpec::baseline(6400.0, 1800.0).sim(&SimConfig::default(), 47);
        assert!(sim.baseline_mode);
        assert_eq!(sim.r, 0.0);
        assert_eq!(sim.seed, 47);
        let sim = CaseSpec::advised(7200.0, 0.4, 3600.0, 0.8).sim(&SimConfig::default(), 42);
        assert!(!sim.baseline_mode);
        assert_eq!((sim.q_i, sim.r, sim.gamma_i, sim.p_l), (7200.0, 0.4, 3600.0, 0.8));
    }

    #[test]
    fn plan_honours_exclusions() {
        let cfg = ExperimentConfig::default();
        let (baselines, advised, skipped) = plan(&cfg);
        assert_eq!(baselines.len(), 5);
        assert_eq!(advised.len(), 5 * 3 * 11);
        assert_eq!(skipped, [(8000.0, 3600.0)]);
    }

    #[test]
    fn parallel_map_keeps_order() {
        let items: Vec<u64> = (0..50).collect();
        assert_eq!(parallel_map(&items, 4, |x| x * x), items.iter().map(|x| x * x).collect::<Vec<_>>());
    }

    #[test]
    fn summary_deltas_and_annotation() {
        let base = CaseResult::from_runs(CaseSpec::baseline(6400.0, 1800.0), vec![run_row(42, 18.1, true)]);
        let base_row = base.summary_row(None);
        assert!(base_row.pct.is_none());

        let mut runs: Vec<RunRow> = (0..9).map(|k| run_row(42 + 5 * k, 14.9, true)).collect();
        runs.extend((9..12).map(|k| run_row(42 + 5 * k, 99.0, false)));
        let case = CaseResult::from_runs(CaseSpec::advised(6400.0, 0.7, 1800.0, 0.97), runs);
        let row = case.summary_row(Some(&base_row));
        assert_eq!(row.completed_runs, 9);
        assert!((row.pct.unwrap()[0] - -17.679558).abs() < 1e-5);
        assert_eq!(cell(&row, &base_row, 0), "14.900 (-17.7%) (9)");
        assert_eq!(cell(&base_row, &base_row, 0), "18.100");
        let same = CaseResult::from_runs(CaseSpec::advised(6400.0, 0.7, 1800.0, 0.9), vec![run_row(42, 18.1, true)]);
        assert_eq!(cell(&same.summary_row(Some(&base_row)), &base_row, 0), "18.100 (+0.0%)");
    }

    #[test]
    fn report_needs_a_baseline() {
        let dir = tempfile::tempdir().unwrap();
        let case = CaseResult::from_runs(CaseSpec::advised(6400.0, 0.7, 1800.0, 0.97), vec![run_row(42, 14.9, true)]);
        finish_case(case.spec, case.runs, &dir.path().join(case.spec.id()), None).unwrap();
        let e = report(dir.path(), &dir.path().join("report")).unwrap_err();
        assert!(e.to_string().contains("no baseline"));
    }
}
