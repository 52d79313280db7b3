//! Line-oriented measure description files.
//!
//! ```text
//! # comment
//! label two-atoms
//! atom 0.25 0.5 0.5
//! atom 0.75 0.5 0.5
//! grid 0 0 1 1 64 64        # lo.. hi.. cells..; carrier for density records
//! density rho.csv           # CSV with header i1,...,iN,value (cell indices)
//! subsample 4
//! ```
//!
//! A `density` record without a preceding `grid` record uses the caller's
//! default grid. Relative density paths resolve against the measure file's
//! directory.

use std::fs;
use std::path::Path;

use super::{Cuboid, Density, Grid, Point, RadonMeasure};
use crate::error::{Error, Result};

fn perr(line: usize, message: impl Into<String>) -> Error {
    Error::Parse { line, message: message.into() }
}

fn numbers(line: usize, fields: &[&str]) -> Result<Vec<f64>> {
    fields.iter().map(|f| f.parse::<f64>().map_err(|_| perr(line, format!("not a number: `{f}`")))).collect()
}

/// Reads a measure description file.
pub fn read_measure(path: &Path, dim: usize, default_grid: Option<&Grid>) -> Result<RadonMeasure> {
    let text = fs::read_to_string(path)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    parse_measure(&text, dim, base, default_grid)
}

pub fn parse_measure(text: &str, dim: usize, base: &Path, default_grid: Option<&Grid>) -> Result<RadonMeasure> {
    let mut m = RadonMeasure::zero(dim);
    let mut grid = default_grid.cloned();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let fields: Vec<&str> = content.split_whitespace().collect();
        match fields[0] {
            "atom" => {
                let v = numbers(line, &fields[1..])?;
                if v.len() != dim + 1 {
                    return Err(perr(line, format!("atom needs {} coordinates and a mass", dim)));
                }
                m = m.with_atom(Point::new(&v[..dim]), v[dim]).map_err(|e| perr(line, e.to_string()))?;
            }
            "grid" => {
                let v = numbers(line, &fields[1..])?;
                if v.len() != 3 * dim {
                    return Err(perr(line, format!("grid needs {} numbers", 3 * dim)));
                }
                let cells: Vec<usize> = v[2 * dim..]
                    .iter()
                    .map(|c| {
                        if *c >= 1.0 && c.fract() == 0.0 {
                            Ok(*c as usize)
                        } else {
                            Err(perr(line, "cell counts must be positive integers"))
                        }
                    })
                    .collect::<Result<_>>()?;
                let cuboid = Cuboid::new(Point::new(&v[..dim]), Point::new(&v[dim..2 * dim])).map_err(|e| perr(line, e.to_string()))?;
                grid = Some(Grid::new(cuboid, cells).map_err(|e| perr(line, e.to_string()))?);
            }
            "density" => {
                if fields.len() != 2 {
                    return Err(perr(line, "density takes one file path"));
                }
                let g = grid.clone().ok_or_else(|| perr(line, "density record needs a grid"))?;
                let path = base.join(fields[1]);
                let csv = fs::read_to_string(&path)?;
                let d = parse_density_csv(&csv, g).map_err(|e| perr(line, format!("{}: {e}", path.display())))?;
                m = m.with_density(d).map_err(|e| perr(line, e.to_string()))?;
            }
            "label" => {
                m = m.with_label(fields[1..].join(" "));
            }
            "subsample" => {
                let s: usize =
                    fields.get(1).and_then(|f| f.parse().ok()).ok_or_else(|| perr(line, "subsample takes a positive integer"))?;
                m = m.with_subsample(s).map_err(|e| perr(line, e.to_string()))?;
            }
            other => return Err(perr(line, format!("unknown record `{other}`"))),
        }
    }
    Ok(m)
}

/// Parses a cell-density CSV (`i1,...,iN,value`); unlisted cells are zero.
pub fn parse_density_csv(text: &str, grid: Grid) -> Result<Density> {
    let n = grid.dim();
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| perr(1, "empty density file"))?;
    let expected: Vec<String> = (1..=n).map(|a| format!("i{a}")).chain(std::iter::once("value".into())).collect();
    let got: Vec<&str> = header.split(',').map(str::trim).collect();
    if got != expected.iter().map(String::as_str).collect::<Vec<_>>() {
        return Err(perr(1, format!("header must be `{}`", expected.join(","))));
    }
    let mut values = vec![0.0; grid.cell_count()];
    let mut idx = vec![0usize; n];
    for (i, l) in lines {
        let line = i + 1;
        let f: Vec<&str> = l.split(',').map(str::trim).collect();
        if f.len() != n + 1 {
            return Err(perr(line, format!("expected {} columns", n + 1)));
        }
        for a in 0..n {
            idx[a] = f[a].parse().map_err(|_| perr(line, format!("bad index `{}`", f[a])))?;
            if idx[a] >= grid.cells()[a] {
                return Err(perr(line, format!("index {} out of range on axis {}", idx[a], a + 1)));
            }
        }
        let v: f64 = f[n].parse().map_err(|_| perr(line, format!("bad value `{}`", f[n])))?;
        values[grid.cell_flat(&idx)] = v;
    }
    Density::new(grid, values)
}

/// Writes atoms (and the label) as a measure description. Densities are not
/// serialized.
pub fn format_atoms(m: &RadonMeasure) -> String {
    let mut s = String::new();
    if !m.label().is_empty() {
        s.push_str(&format!("label {}\n", m.label()));
    }
    for a in m.atoms() {
        let coords: Vec<String> = a.location.coords().iter().map(|c| format!("{c}")).collect();
        s.push_str(&format!("atom {} {}\n", coords.join(" "), a.mass));
    }
    s
}
