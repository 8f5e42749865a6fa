//! Flat `key = value` experiment configuration.
//!
//! Scalar keys set the single-run configuration. The four matrix keys
//! (`q_i`, `r`, `gamma_i`, `p_l`) also accept comma-separated lists, which
//! define the sweep; a scalar is a one-element list. `#` starts a comment.

use std::path::PathBuf;

use sentinel_core::metrics::FreeFlowReference;
use sentinel_core::sim::SimConfig;
use sentinel_core::MPH;

use crate::CliError;

pub const DEFAULT_P_L: [f64; 11] = [0.999, 0.99, 0.97, 0.95, 0.9, 0.85, 0.8, 0.75, 0.7, 0.65, 0.6];

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub q_i: Vec<f64>,
    pub r: Vec<f64>,
    pub gamma_i: Vec<f64>,
    pub p_l: Vec<f64>,
    /// `(q_i, gamma_i)` cells that are not simulated.
    pub exclusions: Vec<(f64, f64)>,
}

impl Default for Matrix {
    fn default() -> Self {
        Matrix {
            q_i: vec![6400.0, 7200.0, 8000.0],
            r: vec![0.1, 0.4, 0.7],
            gamma_i: vec![1800.0, 3600.0],
            p_l: DEFAULT_P_L.to_vec(),
            exclusions: vec![(8000.0, 3600.0)],
        }
    }
}

impl Matrix {
    pub fn is_excluded(&self, q_i: f64, gamma_i: f64) -> bool {
        self.exclusions.iter().any(|&(q, g)| q == q_i && g == gamma_i)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// Template for every run; matrix values and seeds are filled in per run.
    pub sim: SimConfig,
    pub matrix: Matrix,
    pub runs_per_case: u32,
    pub seed_step: u64,
    pub free_flow_reference: FreeFlowReference,
    /// Base-case table file; the embedded table when absent.
    pub table: Option<PathBuf>,
    /// Write `states.csv` and the time-space grids.
    pub write_states: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            sim: SimConfig::default(),
            matrix: Matrix::default(),
            runs_per_case: 12,
            seed_step: 5,
            free_flow_reference: FreeFlowReference::OwnDesired,
            table: None,
            write_states: true,
        }
    }
}

impl ExperimentConfig {
    /// Desk-scale scenario: 4500 s runs, incident 1800-2700 s, three runs.
    pub fn small() -> Self {
        let sim = SimConfig::small();
        ExperimentConfig {
            sim,
            matrix: Matrix { gamma_i: vec![sim.gamma_i], exclusions: Vec::new(), ..Matrix::default() },
            runs_per_case: 3,
            ..Default::default()
        }
    }

    /// Defaults collapsed to the single case described by `sim`.
    pub fn single(sim: SimConfig) -> Self {
        ExperimentConfig {
            sim,
            matrix: Matrix {
                q_i: vec![sim.q_i],
                r: vec![sim.r],
                gamma_i: vec![sim.gamma_i],
                p_l: vec![sim.p_l],
                exclusions: Vec::new(),
            },
            ..Default::default()
        }
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut cfg = ExperimentConfig::default();
        cfg.apply(text)?;
        Ok(cfg)
    }

    /// Applies the settings in `text` on top of `self`.
    pub fn apply(&mut self, text: &str) -> Result<(), CliError> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: &str| CliError::Config(format!("line {}: {msg}: `{}`", n + 1, raw.trim()));
            let (key, value) = line.split_once('=').ok_or_else(|| err("expected key = value"))?;
            self.set(key.trim(), value.trim()).map_err(|m| err(&m))?;
        }
        self.validate()
    }

    fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let s = &mut self.sim;
        match key {
            "q_i" => (s.q_i, self.matrix.q_i) = list(value)?,
            "r" => (s.r, self.matrix.r) = list(value)?,
            "gamma_i" => (s.gamma_i, self.matrix.gamma_i) = list(value)?,
            "p_l" => (s.p_l, self.matrix.p_l) = list(value)?,
            "seed" | "seed_base" => s.seed = num(value)?,
            "seed_step" => self.seed_step = num(value)?,
            "dt" => s.dt = num(value)?,
            "t_end" => s.t_end = num(value)?,
            "t_seed_period" => s.t_seed_period = num(value)?,
            "incident_start" => s.incident_start = num(value)?,
            "baseline_mode" => s.baseline_mode = flag(value)?,
            "avoidance_distance" => s.avoidance_distance = num(value)?,
            "state_decimation" => s.state_decimation = num(value)?,
            "check_invariants" => s.check_invariants = flag(value)?,
            "runs_per_case" => self.runs_per_case = num(value)?,
            "write_states" => self.write_states = flag(value)?,
            "table" => self.table = Some(PathBuf::from(value)),
            "free_flow_reference" => self.free_flow_reference = reference(value)?,
            "exclusions" => self.matrix.exclusions = exclusions(value)?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: &str| Err(CliError::Config(m.to_string()));
        if self.runs_per_case == 0 {
            return bad("runs_per_case must be at least 1");
        }
        let m = &self.matrix;
        if m.q_i.is_empty() || m.r.is_empty() || m.gamma_i.is_empty() || m.p_l.is_empty() {
            return bad("matrix lists must not be empty");
        }
        for &q_i in &m.q_i {
            for &r in &m.r {
                for &gamma_i in &m.gamma_i {
                    for &p_l in &m.p_l {
                        SimConfig { q_i, r, gamma_i, p_l, ..self.sim }.validate().map_err(|e| CliError::Config(e.into()))?;
                    }
                }
            }
        }
        Ok(())
    }

    /// Seed of run `k` (0-based).
    pub fn seed(&self, k: u32) -> u64 {
        self.sim.seed + self.seed_step * k as u64
    }

    pub fn seeds(&self) -> Vec<u64> {
        (0..self.runs_per_case).map(|k| self.seed(k)).collect()
    }

    /// Single-case view used by `run`; lists are not allowed there.
    pub fn single_case(&self) -> Result<SimConfig, CliError> {
        let m = &self.matrix;
        if [m.q_i.len(), m.r.len(), m.gamma_i.len(), m.p_l.len()].iter().any(|&n| n != 1) {
            return Err(CliError::Config("`run` takes single values for q_i, r, gamma_i and p_l".into()));
        }
        Ok(self.sim)
    }
}

fn num<T: std::str::FromStr>(v: &str) -> Result<T, String> {
    v.parse().map_err(|_| format!("cannot parse `{v}`"))
}

fn flag(v: &str) -> Result<bool, String> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(format!("expected true or false, got `{v}`")),
    }
}

fn list(v: &str) -> Result<(f64, Vec<f64>), String> {
    let values = v.split(',').map(|x| num::<f64>(x.trim())).collect::<Result<Vec<_>, _>>()?;
    Ok((values[0], values))
}

/// `own_desired` or `fleet <mph>`.
fn reference(v: &str) -> Result<FreeFlowReference, String> {
    let mut parts = v.split_whitespace();
    match (parts.next(), parts.next(), parts.next()) {
        (Some("own_desired"), None, None) => Ok(FreeFlowReference::OwnDesired),
        (Some("fleet"), Some(mph), None) => Ok(FreeFlowReference::Fleet(num::<f64>(mph)? * MPH)),
        _ => Err("expected `own_desired` or `fleet <mph>`".into()),
    }
}

/// `q/gamma` pairs separated by commas; empty for none.
fn exclusions(v: &str) -> Result<Vec<(f64, f64)>, String> {
    if v.is_empty() || v == "none" {
        return Ok(Vec::new());
    }
    v.split(',')
        .map(|pair| {
            let (q, g) = pair.trim().split_once('/').ok_or_else(|| format!("expected q/gamma, got `{pair}`"))?;
            Ok((num(q.trim())?, num(g.trim())?))
        })
        .collect()
}
