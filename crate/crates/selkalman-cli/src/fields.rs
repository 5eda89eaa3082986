//! File formats: field CSVs (grid-shape header, one row per y line),
//! observation series CSVs, and 8-bit binary PGM heatmap rasters with a
//! fixed value window. All writers are byte-deterministic.

use std::path::Path;

use nalgebra::DVector;
use selkalman::forward::GridSpec;

use crate::error::{CliError, Result};

/// Grayscale window applied to every raster: values map linearly from
/// [15, 50] onto [0, 255].
pub const RASTER_WINDOW: (f64, f64) = (15.0, 50.0);

fn grid_header(grid: &GridSpec) -> String {
    format!("# {},{},{}\n", grid.nx(), grid.ny(), grid.dx())
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| CliError::io(path.display().to_string(), e))
}

/// Field CSV: `# nx,ny,dx` then `ny` rows of `nx` comma-separated values,
/// row `j = 0` first (the flattening is `index = j*nx + i`).
pub fn write_field_csv(path: &Path, grid: &GridSpec, values: &DVector<f64>) -> Result<()> {
    assert_eq!(values.len(), grid.node_count());
    let mut out = String::with_capacity(values.len() * 8);
    out.push_str(&grid_header(grid));
    for j in 0..grid.ny() {
        let mut row = Vec::with_capacity(grid.nx());
        for i in 0..grid.nx() {
            row.push(format!("{}", values[j * grid.nx() + i]));
        }
        out.push_str(&row.join(","));
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

/// Parse a field CSV back into `(grid, values)`.
pub fn read_field_csv(path: &Path) -> Result<(GridSpec, DVector<f64>)> {
    let text =
        std::fs::read_to_string(path).map_err(|e| CliError::io(path.display().to_string(), e))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| CliError::config(format!("{}: empty field CSV", path.display())))?;
    let header = header
        .strip_prefix("# ")
        .ok_or_else(|| CliError::config(format!("{}: missing grid header", path.display())))?;
    let parts: Vec<&str> = header.split(',').collect();
    if parts.len() != 3 {
        return Err(CliError::config(format!(
            "{}: malformed grid header '{header}'",
            path.display()
        )));
    }
    let bad = |what: &str| CliError::config(format!("{}: bad {what} in header", path.display()));
    let nx: usize = parts[0].trim().parse().map_err(|_| bad("nx"))?;
    let ny: usize = parts[1].trim().parse().map_err(|_| bad("ny"))?;
    let dx: f64 = parts[2].trim().parse().map_err(|_| bad("dx"))?;
    let grid = GridSpec::new(nx, ny, dx).map_err(CliError::Numerical)?;
    let mut values = Vec::with_capacity(nx * ny);
    for line in lines {
        if line.starts_with('#') || line.is_empty() {
            continue;
        }
        for tok in line.split(',') {
            let v: f64 = tok
                .trim()
                .parse()
                .map_err(|_| CliError::config(format!("{}: bad value '{tok}'", path.display())))?;
            values.push(v);
        }
    }
    if values.len() != nx * ny {
        return Err(CliError::config(format!(
            "{}: expected {} cells, found {}",
            path.display(),
            nx * ny,
            values.len()
        )));
    }
    Ok((grid, DVector::from_vec(values)))
}

/// Observation CSV: grid header, a column-name comment, then one row per
/// time step: `t,v_1,...,v_m`.
pub fn write_observations_csv(
    path: &Path,
    grid: &GridSpec,
    sites: &[(usize, usize)],
    series: &[DVector<f64>],
) -> Result<()> {
    let mut out = String::new();
    out.push_str(&grid_header(grid));
    let names: Vec<String> = sites.iter().map(|(i, j)| format!("site{i}_{j}")).collect();
    out.push_str(&format!("# t,{}\n", names.join(",")));
    for (t, d) in series.iter().enumerate() {
        let vals: Vec<String> = d.iter().map(|v| format!("{v}")).collect();
        out.push_str(&format!("{t},{}\n", vals.join(",")));
    }
    write_atomic(path, out.as_bytes())
}

pub fn read_observations_csv(path: &Path) -> Result<Vec<DVector<f64>>> {
    let text =
        std::fs::read_to_string(path).map_err(|e| CliError::io(path.display().to_string(), e))?;
    let mut series = Vec::new();
    for line in text.lines() {
        if line.starts_with('#') || line.is_empty() {
            continue;
        }
        let mut toks = line.split(',');
        let t: usize = toks
            .next()
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| CliError::config(format!("{}: bad time index", path.display())))?;
        if t != series.len() {
            return Err(CliError::config(format!(
                "{}: time steps out of order at t={t}",
                path.display()
            )));
        }
        let vals: std::result::Result<Vec<f64>, _> =
            toks.map(|s| s.trim().parse::<f64>()).collect();
        let vals =
            vals.map_err(|_| CliError::config(format!("{}: bad value row", path.display())))?;
        series.push(DVector::from_vec(vals));
    }
    Ok(series)
}

/// Binary 8-bit PGM with the fixed [15, 50] value window.
pub fn write_pgm(path: &Path, grid: &GridSpec, values: &DVector<f64>) -> Result<()> {
    assert_eq!(values.len(), grid.node_count());
    let (lo, hi) = RASTER_WINDOW;
    let mut bytes = format!("P5\n{} {}\n255\n", grid.nx(), grid.ny()).into_bytes();
    for j in 0..grid.ny() {
        for i in 0..grid.nx() {
            let v = values[j * grid.nx() + i];
            let scaled = ((v - lo) / (hi - lo)).clamp(0.0, 1.0);
            bytes.push((scaled * 255.0).round() as u8);
        }
    }
    write_atomic(path, &bytes)
}

/// Render segment unions compactly for CSV cells: `lo:hi|lo:hi`, with
/// unbounded ends spelled `-inf` / `inf`.
pub fn format_segments(segments: &[(f64, f64)]) -> String {
    segments
        .iter()
        .map(|&(lo, hi)| {
            let fmt = |v: f64| {
                if v == f64::NEG_INFINITY {
                    "-inf".to_string()
                } else if v == f64::INFINITY {
                    "inf".to_string()
                } else {
                    format!("{v}")
                }
            };
            format!("{}:{}", fmt(lo), fmt(hi))
        })
        .collect::<Vec<_>>()
        .join("|")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn field_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let grid = GridSpec::new(4, 3, 0.1).unwrap();
        let values = DVector::from_fn(12, |k, _| k as f64 * 1.5 - 3.0);
        let path = dir.path().join("field.csv");
        write_field_csv(&path, &grid, &values).unwrap();
        let (g2, v2) = read_field_csv(&path).unwrap();
        assert_eq!(g2, grid);
        assert_eq!(v2, values);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("# 4,3,0.1\n"));
        assert_eq!(text.lines().count(), 4);
    }

    #[test]
    fn observations_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let grid = GridSpec::new(5, 5, 0.2).unwrap();
        let series = vec![
            DVector::from_row_slice(&[1.0, 2.0]),
            DVector::from_row_slice(&[3.5, -0.25]),
        ];
        let path = dir.path().join("obs.csv");
        write_observations_csv(&path, &grid, &[(1, 1), (3, 2)], &series).unwrap();
        let back = read_observations_csv(&path).unwrap();
        assert_eq!(back, series);
    }

    #[test]
    fn pgm_window_mapping() {
        let dir = tempfile::tempdir().unwrap();
        let grid = GridSpec::new(2, 2, 1.0).unwrap();
        let values = DVector::from_row_slice(&[15.0, 50.0, 10.0, 32.5]);
        let path = dir.path().join("map.pgm");
        write_pgm(&path, &grid, &values).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let header = b"P5\n2 2\n255\n";
        assert_eq!(&bytes[..header.len()], header);
        assert_eq!(&bytes[header.len()..], &[0u8, 255, 0, 128]);
    }

    #[test]
    fn segment_formatting() {
        assert_eq!(
            format_segments(&[(f64::NEG_INFINITY, -0.2), (0.5, f64::INFINITY)]),
            "-inf:-0.2|0.5:inf"
        );
    }
}
