use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;
use core::str::FromStr;

use libm::{erfc, exp, expm1, log, log1p, sqrt};

pub const FORMAT_VERSION: u32 = 1;

/// Name of the coordinate reduction the values were generated under.
pub const NORMALIZATION: &str = "sweep-over-median-gap";
/// How the `D = 0` plane is filled.
pub const D0_BOUNDARY: &str = "zero-sweep-limit";

const D_MIN: f64 = 0.02;
const D_MAX: f64 = 200.0;
const G_MIN: f64 = 0.05;
const G_MAX: f64 = 20.0;
const S_MIN: f64 = 0.05;
const S_MAX: f64 = 1.5;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TableError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("table shape: {0}")]
    Shape(&'static str),
    #[error("invalid grid spec `{0}`")]
    GridSpec(String),
}

fn parse_err(line: usize, reason: impl Into<String>) -> TableError {
    TableError::Parse { line, reason: reason.into() }
}

/// Grid coordinates of a base-case table.
#[derive(Debug, Clone, PartialEq)]
pub struct TableAxes {
    /// Normalized relative sweep distance.
    pub d: Vec<f64>,
    /// Normalized critical gap.
    pub g: Vec<f64>,
    /// Log-gap standard deviation.
    pub s: Vec<f64>,
}

impl TableAxes {
    pub fn validate(&self) -> Result<(), TableError> {
        for axis in [&self.d, &self.g, &self.s] {
            if axis.is_empty() {
                return Err(TableError::Shape("empty axis"));
            }
            if axis.iter().any(|v| !v.is_finite()) {
                return Err(TableError::Shape("non-finite axis value"));
            }
            if axis.windows(2).any(|w| !(w[1] > w[0])) {
                return Err(TableError::Shape("axis not strictly increasing"));
            }
        }
        if self.d[0] < 0.0 || self.g[0] <= 0.0 || self.s[0] < 0.0 {
            return Err(TableError::Shape("axis out of domain"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.d.len() * self.g.len() * self.s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Row-major index, D outer, G middle, S inner.
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.g.len() + j) * self.s.len() + k
    }
}

/// Point counts for the standard table layout: `D` is zero plus a log-spaced
/// run up to 200, `G` is log-spaced over [0.05, 20] and `S` is linear over
/// [0.05, 1.5].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridSpec {
    pub d_points: usize,
    pub g_points: usize,
    pub s_points: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { d_points: 33, g_points: 49, s_points: 22 }
    }
}

impl GridSpec {
    /// Small grid for tests and smoke runs.
    pub fn coarse() -> Self {
        GridSpec { d_points: 9, g_points: 7, s_points: 3 }
    }

    pub fn axes(&self) -> TableAxes {
        let mut d = Vec::with_capacity(self.d_points);
        d.push(0.0);
        d.extend(log_space(D_MIN, D_MAX, self.d_points.saturating_sub(1)));
        TableAxes {
            d,
            g: log_space(G_MIN, G_MAX, self.g_points),
            s: lin_space(S_MIN, S_MAX, self.s_points),
        }
    }
}

impl FromStr for GridSpec {
    type Err = TableError;

    /// Parses `D=33,G=29,S=8`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || TableError::GridSpec(String::from(s));
        let mut spec = GridSpec::default();
        for part in s.split(',') {
            let (key, value) = part.split_once('=').ok_or_else(bad)?;
            let n: usize = value.trim().parse().map_err(|_| bad())?;
            match key.trim() {
                "D" if n >= 2 => spec.d_points = n,
                "G" if n >= 2 => spec.g_points = n,
                "S" if n >= 1 => spec.s_points = n,
                _ => return Err(bad()),
            }
        }
        Ok(spec)
    }
}

fn log_space(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => alloc::vec![lo],
        _ => {
            let (a, b) = (log(lo), log(hi));
            (0..n)
                .map(|i| match i {
                    0 => lo,
                    _ if i == n - 1 => hi,
                    _ => exp(a + (b - a) * i as f64 / (n - 1) as f64),
                })
                .collect()
        }
    }
}

fn lin_space(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => alloc::vec![lo],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TableMeta {
    pub version: u32,
    /// Monte Carlo samples per cell.
    pub samples: u64,
    pub seed: u64,
}

/// Two-lane success probability on a (sweep, gap, sigma) grid.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseCaseTable {
    axes: TableAxes,
    values: Vec<f64>,
    meta: TableMeta,
}

impl BaseCaseTable {
    pub fn new(axes: TableAxes, values: Vec<f64>, meta: TableMeta) -> Result<Self, TableError> {
        axes.validate()?;
        if values.len() != axes.len() {
            return Err(TableError::Shape("value count does not match axes"));
        }
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(TableError::Shape("probability outside [0, 1]"));
        }
        Ok(BaseCaseTable { axes, values, meta })
    }

    /// Table holding `p` everywhere.
    pub fn constant(axes: TableAxes, p: f64) -> Self {
        let values = alloc::vec![p; axes.len()];
        BaseCaseTable::new(axes, values, TableMeta { version: FORMAT_VERSION, samples: 0, seed: 0 })
            .expect("constant table is well formed")
    }

    pub fn axes(&self) -> &TableAxes {
        &self.axes
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn meta(&self) -> TableMeta {
        self.meta
    }

    pub fn value(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[self.axes.index(i, j, k)]
    }

    /// Trilinear interpolation; coordinates outside the grid are clamped.
    ///
    /// Interpolation runs on `ln(-ln(1 - p))`, in which the probability of
    /// finding an acceptable gap is close to linear in the swept distance and
    /// much less curved in the gap and sigma directions than `p` itself.
    /// The `D = 0` plane holds the zero-sweep limit, which can be exactly zero;
    /// between it and the first positive `D` point the value is interpolated
    /// linearly in `p`.
    pub fn interpolate(&self, d: f64, g: f64, s: f64) -> f64 {
        let (j0, j1, fg) = bracket(&self.axes.g, g);
        let (k0, k1, fs) = bracket(&self.axes.s, s);
        let plane = |i: usize| {
            let along_s = |j| lerp(cloglog(self.value(i, j, k0)), cloglog(self.value(i, j, k1)), fs);
            lerp(along_s(j0), along_s(j1), fg)
        };
        let axis_d = &self.axes.d;
        if axis_d.len() > 1 && axis_d[0] == 0.0 && d < axis_d[1] {
            let frac = if d > 0.0 { d / axis_d[1] } else { 0.0 };
            let along_s = |j| lerp(self.value(0, j, k0), self.value(0, j, k1), fs);
            let limit = lerp(along_s(j0), along_s(j1), fg);
            return lerp(limit, inverse_cloglog(plane(1)), frac).clamp(0.0, 1.0);
        }
        let (i0, i1, fd) = bracket(axis_d, d);
        inverse_cloglog(lerp(plane(i0), plane(i1), fd)).clamp(0.0, 1.0)
    }

    /// Projects every D-line onto non-decreasing sequences, then every G-line
    /// onto non-increasing ones.
    ///
    /// Isotonic regression is order preserving, so the second pass keeps the
    /// first pass's ordering along D.
    pub fn smooth_monotone(&mut self) {
        let (nd, ng, ns) = (self.axes.d.len(), self.axes.g.len(), self.axes.s.len());
        let mut line = Vec::with_capacity(nd.max(ng));
        for j in 0..ng {
            for k in 0..ns {
                line.clear();
                line.extend((0..nd).map(|i| self.value(i, j, k)));
                isotonic_increasing(&mut line);
                for (i, v) in line.iter().enumerate() {
                    let idx = self.axes.index(i, j, k);
                    self.values[idx] = *v;
                }
            }
        }
        for i in 0..nd {
            for k in 0..ns {
                line.clear();
                line.extend((0..ng).rev().map(|j| self.value(i, j, k)));
                isotonic_increasing(&mut line);
                for (r, v) in line.iter().enumerate() {
                    let idx = self.axes.index(i, ng - 1 - r, k);
                    self.values[idx] = *v;
                }
            }
        }
    }

    /// Rounds every value to the 6 decimals the text format stores.
    pub fn quantize(&mut self) {
        for v in &mut self.values {
            *v = round6(*v);
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.values.len() * 9 + 1024);
        let _ = writeln!(out, "#version {}", self.meta.version);
        let _ = writeln!(out, "#samples {}", self.meta.samples);
        let _ = writeln!(out, "#seed {}", self.meta.seed);
        let _ = writeln!(out, "#normalization {NORMALIZATION}");
        let _ = writeln!(out, "#d0 {D0_BOUNDARY}");
        for (name, axis) in [("D", &self.axes.d), ("G", &self.axes.g), ("S", &self.axes.s)] {
            let _ = write!(out, "#axis_{name}");
            for v in axis.iter() {
                let _ = write!(out, " {v}");
            }
            out.push('\n');
        }
        for v in &self.values {
            let _ = writeln!(out, "{v:.6}");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, TableError> {
        let mut version = None;
        let mut samples = None;
        let mut seed = None;
        let (mut d, mut g, mut s) = (None, None, None);
        let mut values = Vec::new();

        for (n, raw) in text.lines().enumerate() {
            let line_no = n + 1;
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(header) = line.strip_prefix('#') {
                if !values.is_empty() {
                    return Err(parse_err(line_no, "header after values"));
                }
                let (key, rest) = header.split_once(' ').unwrap_or((header, ""));
                match key {
                    "version" => {
                        let v: u32 = rest.trim().parse().map_err(|_| parse_err(line_no, "bad version"))?;
                        if v != FORMAT_VERSION {
                            return Err(parse_err(line_no, format!("unsupported version {v}")));
                        }
                        version = Some(v);
                    }
                    "samples" => {
                        samples = Some(rest.trim().parse().map_err(|_| parse_err(line_no, "bad samples"))?)
                    }
                    "seed" => seed = Some(rest.trim().parse().map_err(|_| parse_err(line_no, "bad seed"))?),
                    "normalization" if rest.trim() == NORMALIZATION => {}
                    "d0" if rest.trim() == D0_BOUNDARY => {}
                    "normalization" | "d0" => {
                        return Err(parse_err(line_no, format!("unsupported {key} `{}`", rest.trim())))
                    }
                    "axis_D" => d = Some(parse_axis(rest, line_no)?),
                    "axis_G" => g = Some(parse_axis(rest, line_no)?),
                    "axis_S" => s = Some(parse_axis(rest, line_no)?),
                    _ => return Err(parse_err(line_no, format!("unknown header `{key}`"))),
                }
                continue;
            }
            let v: f64 = line.parse().map_err(|_| parse_err(line_no, "bad probability"))?;
            values.push(v);
        }

        let missing = |what: &str| parse_err(0, format!("missing #{what}"));
        let axes = TableAxes {
            d: d.ok_or_else(|| missing("axis_D"))?,
            g: g.ok_or_else(|| missing("axis_G"))?,
            s: s.ok_or_else(|| missing("axis_S"))?,
        };
        let meta = TableMeta {
            version: version.ok_or_else(|| missing("version"))?,
            samples: samples.ok_or_else(|| missing("samples"))?,
            seed: seed.ok_or_else(|| missing("seed"))?,
        };
        BaseCaseTable::new(axes, values, meta)
    }
}

fn parse_axis(rest: &str, line_no: usize) -> Result<Vec<f64>, TableError> {
    rest.split_whitespace()
        .map(|t| t.parse::<f64>().map_err(|_| parse_err(line_no, "bad axis value")))
        .collect()
}

const CLOGLOG_EPS: f64 = 1e-9;

/// Probability that a `LogNormal(0, sigma)` gap is at least `g_norm`: the
/// base case with no sweep left, where only the gap alongside can be taken.
pub fn zero_sweep_probability(g_norm: f64, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return if g_norm <= 1.0 { 1.0 } else { 0.0 };
    }
    0.5 * erfc(log(g_norm) / (sigma * sqrt(2.0)))
}

fn cloglog(p: f64) -> f64 {
    let p = p.clamp(CLOGLOG_EPS, 1.0 - CLOGLOG_EPS);
    log(-log1p(-p))
}

fn inverse_cloglog(h: f64) -> f64 {
    -expm1(-exp(h))
}

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

fn round6(v: f64) -> f64 {
    let s = format!("{v:.6}");
    s.parse().expect("formatted float parses")
}

/// Lower and upper neighbours of `x` on `axis` and the fraction between them,
/// clamped to the ends.
fn bracket(axis: &[f64], x: f64) -> (usize, usize, f64) {
    let last = axis.len() - 1;
    if !(x > axis[0]) {
        return (0, 0, 0.0);
    }
    if x >= axis[last] {
        return (last, last, 0.0);
    }
    let hi = axis.partition_point(|&a| a <= x);
    let lo = hi - 1;
    (lo, hi, (x - axis[lo]) / (axis[hi] - axis[lo]))
}

/// Pool-adjacent-violators with unit weights.
pub(crate) fn isotonic_increasing(y: &mut [f64]) {
    // (sum, count) blocks
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(y.len());
    for &v in y.iter() {
        blocks.push((v, 1));
        while blocks.len() > 1 {
            let (s1, c1) = blocks[blocks.len() - 1];
            let (s0, c0) = blocks[blocks.len() - 2];
            if s0 / c0 as f64 > s1 / c1 as f64 {
                blocks.pop();
                let top = blocks.len() - 1;
                blocks[top] = (s0 + s1, c0 + c1);
            } else {
                break;
            }
        }
    }
    let mut i = 0;
    for (s, c) in blocks {
        let mean = s / c as f64;
        y[i..i + c].iter_mut().for_each(|v| *v = mean);
        i += c;
    }
}
