//! Field CSV (`i1,...,iN,x1,...,xN,value`, `inf` for +inf) and JSON sidecars.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use super::ScalarField;
use crate::error::{Error, Result};
use crate::measure::{Cuboid, Grid, Point};

pub fn format_value(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".to_string()
    } else if v == f64::NEG_INFINITY {
        "-inf".to_string()
    } else {
        format!("{v}")
    }
}

pub fn field_to_csv(f: &ScalarField) -> String {
    let g = f.grid();
    let n = g.dim();
    let mut out = String::new();
    let header: Vec<String> =
        (1..=n).map(|a| format!("i{a}")).chain((1..=n).map(|a| format!("x{a}"))).chain(std::iter::once("value".to_string())).collect();
    out.push_str(&header.join(","));
    out.push('\n');
    let mut idx = vec![0; n];
    let mut x = vec![0.0; n];
    for (node, v) in f.values().iter().enumerate() {
        g.node_multi(node, &mut idx);
        g.node_coords(node, &mut x);
        for i in &idx {
            let _ = write!(out, "{i},");
        }
        for c in &x {
            let _ = write!(out, "{c},");
        }
        out.push_str(&format_value(*v));
        out.push('\n');
    }
    out
}

pub fn write_field_csv(f: &ScalarField, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, field_to_csv(f))?;
    Ok(())
}

/// Reads a field written by [`field_to_csv`] back onto `grid`.
pub fn parse_field_csv(text: &str, grid: &Grid) -> Result<ScalarField> {
    let n = grid.dim();
    let mut values = vec![f64::NAN; grid.node_count()];
    let mut idx = vec![0usize; n];
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        let bad = |m: &str| Error::Parse { line: i + 1, message: m.to_string() };
        if cols.len() != 2 * n + 1 {
            return Err(bad("wrong column count"));
        }
        for a in 0..n {
            idx[a] = cols[a].parse().map_err(|_| bad("bad index"))?;
            if idx[a] > grid.cells()[a] {
                return Err(bad("index out of range"));
            }
        }
        let v = match cols[2 * n] {
            "inf" => f64::INFINITY,
            "-inf" => f64::NEG_INFINITY,
            s => s.parse().map_err(|_| bad("bad value"))?,
        };
        values[grid.node_flat(&idx)] = v;
    }
    ScalarField::new(grid.clone(), values)
}

#[derive(Debug, Clone, Serialize)]
pub struct GridMeta {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub cells: Vec<usize>,
    pub nodes: usize,
}

impl From<&Grid> for GridMeta {
    fn from(g: &Grid) -> Self {
        GridMeta {
            lo: g.cuboid().lo().coords().to_vec(),
            hi: g.cuboid().hi().coords().to_vec(),
            cells: g.cells().to_vec(),
            nodes: g.node_count(),
        }
    }
}

impl GridMeta {
    pub fn to_grid(&self) -> Result<Grid> {
        Grid::new(Cuboid::new(Point::new(self.lo.clone()), Point::new(self.hi.clone()))?, self.cells.clone())
    }
}

/// Metadata written next to a field CSV.
#[derive(Debug, Clone, Serialize)]
pub struct FieldMeta {
    pub name: String,
    pub grid: GridMeta,
    pub params: Option<super::WolffParams>,
    pub infinite_nodes: usize,
    pub max_finite: Option<f64>,
    pub method: String,
}

impl FieldMeta {
    pub fn describe(name: &str, f: &ScalarField, params: Option<super::WolffParams>, method: &str) -> Self {
        let mf = f.max_finite();
        FieldMeta {
            name: name.to_string(),
            grid: GridMeta::from(f.grid()),
            params,
            infinite_nodes: f.values().iter().filter(|v| v.is_infinite()).count(),
            max_finite: mf.is_finite().then_some(mf),
            method: method.to_string(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_roundtrip_with_infinity() {
        let g = Grid::uniform(Cuboid::unit(2).unwrap(), 2).unwrap();
        let mut v: Vec<f64> = (0..9).map(|i| i as f64 * 0.25).collect();
        v[4] = f64::INFINITY;
        let f = ScalarField::new(g.clone(), v).unwrap();
        let text = field_to_csv(&f);
        assert!(text.starts_with("i1,i2,x1,x2,value\n0,0,0,0,0\n"));
        assert!(text.contains(",inf\n"));
        assert_eq!(parse_field_csv(&text, &g).unwrap(), f);
    }
}
