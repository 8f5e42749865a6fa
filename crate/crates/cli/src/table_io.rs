//! Base-case table files and parallel table generation.

use std::path::Path;
use std::thread;

use anyhow::Context;
use sentinel_core::oracle::{estimate_cell, finish_table, OracleConfig, OracleError, MIN_TABLE_SAMPLES};
use sentinel_core::prob::{BaseCaseTable, TableAxes};

use crate::CliError;

/// Table shipped with the binary.
pub const EMBEDDED_TABLE: &str = include_str!("../data/base_case.tbl");

pub fn embedded() -> BaseCaseTable {
    BaseCaseTable::from_text(EMBEDDED_TABLE).expect("embedded table is valid")
}

pub fn load(path: &Path) -> Result<BaseCaseTable, CliError> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading table {}", path.display()))?;
    BaseCaseTable::from_text(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// Table at `path`, or the embedded one.
pub fn load_or_embedded(path: Option<&Path>) -> Result<BaseCaseTable, CliError> {
    match path {
        Some(p) => load(p),
        None => Ok(embedded()),
    }
}

pub fn save(table: &BaseCaseTable, path: &Path) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, table.to_text()).with_context(|| format!("writing table {}", path.display()))?;
    Ok(())
}

/// Same result as `oracle::build_table`, with cells spread over `threads`.
/// Every cell has its own seed, so the split does not change the output.
pub fn generate(axes: TableAxes, per_cell: &OracleConfig, threads: usize) -> Result<BaseCaseTable, OracleError> {
    axes.validate()?;
    if per_cell.samples < MIN_TABLE_SAMPLES {
        return Err(OracleError::TooFewSamples(per_cell.samples));
    }
    let (nd, ng, ns) = (axes.d.len(), axes.g.len(), axes.s.len());
    let cells: Vec<(usize, usize, usize)> =
        (0..nd).flat_map(|i| (0..ng).flat_map(move |j| (0..ns).map(move |k| (i, j, k)))).collect();
    let chunk = cells.len().div_ceil(threads.max(1)).max(1);
    let parts: Vec<Result<Vec<f64>, OracleError>> = thread::scope(|scope| {
        let handles: Vec<_> = cells
            .chunks(chunk)
            .map(|part| {
                let axes = &axes;
                scope.spawn(move || part.iter().map(|&(i, j, k)| estimate_cell(axes, i, j, k, per_cell)).collect())
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("table worker panicked")).collect()
    });
    let mut values = Vec::with_capacity(cells.len());
    for part in parts {
        values.extend(part?);
    }
    finish_table(axes, values, per_cell)
}

#[cfg(test)]
mod tests {
    use super::*;
    use sentinel_core::oracle::build_table;
    use sentinel_core::prob::{zero_sweep_probability, GridSpec};

    #[test]
    fn embedded_table_loads() {
        let t = embedded();
        assert_eq!(t.axes().d.len(), GridSpec::default().d_points);
        assert!((t.interpolate(0.0, 1.0, 0.5) - zero_sweep_probability(1.0, 0.5)).abs() < 1e-3);
    }

    #[test]
    fn thread_split_matches_serial_build() {
        let axes = GridSpec { d_points: 4, g_points: 3, s_points: 2 }.axes();
        let cfg = OracleConfig { dt: 0.01, ..OracleConfig::new(MIN_TABLE_SAMPLES, 3) };
        let serial = build_table(axes.clone(), &cfg).unwrap();
        let split = generate(axes, &cfg, 3).unwrap();
        assert_eq!(serial.to_text(), split.to_text());
    }

    #[test]
    fn round_trips_through_a_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub/t.tbl");
        save(&embedded(), &path).unwrap();
        assert_eq!(load(&path).unwrap(), embedded());
        assert!(load(&dir.path().join("missing.tbl")).is_err());
    }
}
