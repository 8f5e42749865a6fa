use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use sentinel_core::oracle::{mc_base_case, mc_multilane, OracleConfig};
use sentinel_core::prob::{lookup_f2, prob_success, ChangeQuery, GridSpec, LaneParams, DEFAULT_QUAD_POINTS};
use sentinel_cli::config::ExperimentConfig;
use sentinel_cli::experiment::{self, CaseSpec, RunContext};
use sentinel_cli::{table_io, CliError};
use sentinel_core::sim::SimConfig;

#[derive(Parser)]
#[command(name = "sentinel", version, about = "Lane-change advisory model and incident simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Small,
}

#[derive(Subcommand)]
enum Command {
    /// Build the base-case probability table by Monte Carlo.
    GenTable {
        #[arg(long)]
        out: PathBuf,
        /// Samples per cell.
        #[arg(long, default_value_t = 20_000)]
        samples: u64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Grid resolution, e.g. `D=33,G=49,S=22`.
        #[arg(long)]
        grid: Option<GridSpec>,
        /// Oracle time step in normalized units.
        #[arg(long, default_value_t = 0.001)]
        dt: f64,
        #[arg(long, default_value_t = 1)]
        threads: usize,
    },
    /// Monte Carlo estimate of a lane-change success probability.
    Oracle {
        /// Two-lane case; needs exactly one `--lane`.
        #[arg(long, conflicts_with = "multilane", required_unless_present = "multilane")]
        base: bool,
        #[arg(long)]
        multilane: bool,
        #[command(flatten)]
        query: QueryArgs,
        #[arg(long, default_value_t = 100_000)]
        samples: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Table-backed success probability.
    Prob {
        /// Table file; the embedded table when omitted.
        #[arg(long)]
        table: Option<PathBuf>,
        #[command(flatten)]
        query: QueryArgs,
    },
    /// Run one case for `runs_per_case` seeds.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        preset: Option<Preset>,
    },
    /// Run the experiment matrix.
    Sweep {
        #[arg(long)]
        matrix: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        preset: Option<Preset>,
        #[arg(long, default_value_t = 1)]
        parallel: usize,
    },
    /// Delay tables with changes against the baselines.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(clap::Args)]
struct QueryArgs {
    /// Distance to the target point (m).
    #[arg(long)]
    d: f64,
    /// Ego speed (m/s).
    #[arg(long)]
    ego_speed: f64,
    /// Target lane as `v,mu,sigma,g,t`, nearest first; repeat for more lanes.
    #[arg(long = "lane", required = true, value_parser = parse_lane)]
    lanes: Vec<LaneParams>,
}

impl QueryArgs {
    fn query(&self) -> ChangeQuery {
        ChangeQuery { d: self.d, ego_speed: self.ego_speed, lanes: self.lanes.clone() }
    }
}

fn parse_lane(s: &str) -> Result<LaneParams, String> {
    let v: Vec<f64> = s.split(',').map(|x| x.trim().parse::<f64>()).collect::<Result<_, _>>().map_err(|e| e.to_string())?;
    match v[..] {
        [v, mu, sigma, g, t] => Ok(LaneParams { v, mu, sigma, g, t }),
        _ => Err("expected v,mu,sigma,g,t".into()),
    }
}

fn config(path: Option<&Path>, base: ExperimentConfig) -> Result<ExperimentConfig, CliError> {
    let mut cfg = base;
    if let Some(p) = path {
        let text = std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
        cfg.apply(&text)?;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenTable { out, samples, seed, grid, dt, threads } => {
            let axes = grid.unwrap_or_default().axes();
            let per_cell = OracleConfig { dt, ..OracleConfig::new(samples, seed) };
            eprintln!("generating {} cells x {samples} samples", axes.len());
            let table = table_io::generate(axes, &per_cell, threads).map_err(|e| CliError::Config(e.to_string()))?;
            table_io::save(&table, &out)?;
        }
        Command::Oracle { base, query, samples, seed, .. } => {
            let q = query.query();
            let cfg = OracleConfig::new(samples, seed);
            let est = if base {
                let [l] = q.lanes[..] else {
                    return Err(CliError::Config("--base takes exactly one --lane".into()));
                };
                mc_base_case(q.d, q.ego_speed, l.v, l.mu, l.sigma, l.g, l.t, &cfg)
            } else {
                mc_multilane(&q, &cfg)
            }
            .map_err(|e| CliError::Config(e.to_string()))?;
            println!("{:.4} ± {:.4}", est.p, est.std_error);
        }
        Command::Prob { table, query } => {
            let table = table_io::load_or_embedded(table.as_deref())?;
            let q = query.query();
            let p = match q.lanes[..] {
                [l] => lookup_f2(&table, q.d, q.ego_speed, &l),
                _ => prob_success(&q, &table, DEFAULT_QUAD_POINTS),
            }
            .map_err(|e| CliError::Config(e.to_string()))?;
            println!("{p:.4}");
        }
        Command::Run { config: path, out, preset } => {
            let sim = match preset {
                Some(Preset::Small) => SimConfig::small(),
                None => SimConfig::default(),
            };
            let base = ExperimentConfig { runs_per_case: 1, ..ExperimentConfig::single(sim) };
            let cfg = config(path.as_deref(), base)?;
            let sim = cfg.single_case()?;
            let table = table_io::load_or_embedded(cfg.table.as_deref())?;
            let ctx = RunContext::new(&cfg, &table);
            let spec = CaseSpec::from_sim(&sim);
            let (_, row) = experiment::run_case(spec, &cfg, &ctx, &out, None, 1)?;
            eprintln!("{}: m = {}", row.case_id, sentinel_cli::output::fmt_opt(row.values.map(|v| v[0])));
        }
        Command::Sweep { matrix, out, preset, parallel } => {
            let base = match preset {
                Some(Preset::Small) => ExperimentConfig::small(),
                None => ExperimentConfig::default(),
            };
            let base = ExperimentConfig { write_states: false, ..base };
            let cfg = config(matrix.as_deref(), base)?;
            let table = table_io::load_or_embedded(cfg.table.as_deref())?;
            let ctx = RunContext::new(&cfg, &table);
            experiment::sweep(&cfg, &ctx, &out, parallel, |m| eprintln!("{m}"))?;
        }
        Command::Report { input, out } => {
            for path in experiment::report(&input, &out)? {
                eprintln!("wrote {}", path.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
