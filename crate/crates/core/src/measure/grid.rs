use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Volume of the unit ball in `n` dimensions.
pub fn unit_ball_volume(n: usize) -> f64 {
    match n {
        0 => 1.0,
        1 => 2.0,
        _ => unit_ball_volume(n - 2) * 2.0 * std::f64::consts::PI / n as f64,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Point(pub Vec<f64>);

impl Point {
    pub fn new(coords: impl Into<Vec<f64>>) -> Self {
        Point(coords.into())
    }

    pub fn origin(dim: usize) -> Self {
        Point(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn distance(&self, other: &Point) -> f64 {
        dist2(&self.0, &other.0).sqrt()
    }
}

impl From<Vec<f64>> for Point {
    fn from(v: Vec<f64>) -> Self {
        Point(v)
    }
}

#[inline]
pub(crate) fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Axis-aligned box `[lo, hi]` in R^N.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cuboid {
    lo: Point,
    hi: Point,
}

impl Cuboid {
    pub fn new(lo: Point, hi: Point) -> Result<Self> {
        if lo.dim() != hi.dim() {
            return Err(Error::DimensionMismatch { expected: lo.dim(), got: hi.dim() });
        }
        if lo.dim() < 2 {
            return Err(invalid("dimension", format!("need N >= 2, got {}", lo.dim())));
        }
        if lo.0.iter().zip(&hi.0).any(|(a, b)| !(a < b) || !a.is_finite() || !b.is_finite()) {
            return Err(invalid("box", "lo must be strictly below hi on every axis"));
        }
        Ok(Cuboid { lo, hi })
    }

    /// The unit cube `[0,1]^n`.
    pub fn unit(n: usize) -> Result<Self> {
        Cuboid::new(Point(vec![0.0; n]), Point(vec![1.0; n]))
    }

    pub fn lo(&self) -> &Point {
        &self.lo
    }

    pub fn hi(&self) -> &Point {
        &self.hi
    }

    pub fn dim(&self) -> usize {
        self.lo.dim()
    }

    pub fn side(&self, axis: usize) -> f64 {
        self.hi.0[axis] - self.lo.0[axis]
    }

    pub fn diameter(&self) -> f64 {
        self.lo.distance(&self.hi)
    }

    pub fn volume(&self) -> f64 {
        (0..self.dim()).map(|a| self.side(a)).product()
    }

    pub fn center(&self) -> Point {
        Point(self.lo.0.iter().zip(&self.hi.0).map(|(a, b)| 0.5 * (a + b)).collect())
    }

    /// Closed-box membership.
    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter().zip(self.lo.0.iter().zip(&self.hi.0)).all(|(v, (a, b))| *a <= *v && *v <= *b)
    }

    pub fn contains_cuboid(&self, other: &Cuboid) -> bool {
        self.contains(other.lo.coords()) && self.contains(other.hi.coords())
    }

    /// Euclidean distance from `x` to the boundary of the box (0 outside).
    pub fn boundary_distance(&self, x: &[f64]) -> f64 {
        if !self.contains(x) {
            return 0.0;
        }
        x.iter().zip(self.lo.0.iter().zip(&self.hi.0)).map(|(v, (a, b))| (v - a).min(b - v)).fold(f64::INFINITY, f64::min)
    }
}

/// Regular tensor grid over a box: `cells[a]` cells and `cells[a] + 1` nodes per axis.
/// Nodes and cells are stored row-major, last axis fastest.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Grid {
    cuboid: Cuboid,
    cells: Vec<usize>,
    spacing: Vec<f64>,
    #[serde(skip)]
    node_strides: Vec<usize>,
    #[serde(skip)]
    cell_strides: Vec<usize>,
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for a in (0..shape.len().saturating_sub(1)).rev() {
        s[a] = s[a + 1] * shape[a + 1];
    }
    s
}

impl Grid {
    pub fn new(cuboid: Cuboid, cells: Vec<usize>) -> Result<Self> {
        if cells.len() != cuboid.dim() {
            return Err(Error::DimensionMismatch { expected: cuboid.dim(), got: cells.len() });
        }
        if cells.contains(&0) {
            return Err(invalid("cells", "every axis needs at least one cell"));
        }
        let spacing = (0..cuboid.dim()).map(|a| cuboid.side(a) / cells[a] as f64).collect();
        let node_shape: Vec<usize> = cells.iter().map(|c| c + 1).collect();
        Ok(Grid { node_strides: strides(&node_shape), cell_strides: strides(&cells), cuboid, cells, spacing })
    }

    /// Same number of cells on every axis.
    pub fn uniform(cuboid: Cuboid, cells_per_axis: usize) -> Result<Self> {
        let n = cuboid.dim();
        Grid::new(cuboid, vec![cells_per_axis; n])
    }

    pub fn cuboid(&self) -> &Cuboid {
        &self.cuboid
    }

    pub fn dim(&self) -> usize {
        self.cells.len()
    }

    pub fn cells(&self) -> &[usize] {
        &self.cells
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    pub fn min_spacing(&self) -> f64 {
        self.spacing.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn cell_diagonal(&self) -> f64 {
        self.spacing.iter().map(|h| h * h).sum::<f64>().sqrt()
    }

    pub fn node_shape(&self) -> Vec<usize> {
        self.cells.iter().map(|c| c + 1).collect()
    }

    pub fn node_count(&self) -> usize {
        self.cells.iter().map(|c| c + 1).product()
    }

    pub fn cell_count(&self) -> usize {
        self.cells.iter().product()
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing.iter().product()
    }

    pub fn node_strides(&self) -> &[usize] {
        &self.node_strides
    }

    pub fn cell_strides(&self) -> &[usize] {
        &self.cell_strides
    }

    pub fn node_flat(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.node_strides).map(|(i, s)| i * s).sum()
    }

    pub fn node_multi(&self, mut flat: usize, out: &mut [usize]) {
        for a in 0..self.dim() {
            out[a] = flat / self.node_strides[a];
            flat %= self.node_strides[a];
        }
    }

    pub fn cell_flat(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.cell_strides).map(|(i, s)| i * s).sum()
    }

    pub fn cell_multi(&self, mut flat: usize, out: &mut [usize]) {
        for a in 0..self.dim() {
            out[a] = flat / self.cell_strides[a];
            flat %= self.cell_strides[a];
        }
    }

    pub fn node_coords(&self, flat: usize, out: &mut [f64]) {
        let mut rem = flat;
        for a in 0..self.dim() {
            let i = rem / self.node_strides[a];
            rem %= self.node_strides[a];
            out[a] = self.cuboid.lo.0[a] + i as f64 * self.spacing[a];
        }
    }

    pub fn node_point(&self, flat: usize) -> Point {
        let mut c = vec![0.0; self.dim()];
        self.node_coords(flat, &mut c);
        Point(c)
    }

    pub fn cell_center(&self, flat: usize, out: &mut [f64]) {
        let mut rem = flat;
        for a in 0..self.dim() {
            let i = rem / self.cell_strides[a];
            rem %= self.cell_strides[a];
            out[a] = self.cuboid.lo.0[a] + (i as f64 + 0.5) * self.spacing[a];
        }
    }

    pub fn is_boundary_node(&self, flat: usize) -> bool {
        let mut rem = flat;
        for a in 0..self.dim() {
            let i = rem / self.node_strides[a];
            rem %= self.node_strides[a];
            if i == 0 || i == self.cells[a] {
                return true;
            }
        }
        false
    }

    /// Volume of the dual cell around a node, clipped to the box
    /// (trapezoid weight).
    pub fn dual_volume(&self, flat: usize) -> f64 {
        let mut rem = flat;
        let mut v = 1.0;
        for a in 0..self.dim() {
            let i = rem / self.node_strides[a];
            rem %= self.node_strides[a];
            let w = if i == 0 || i == self.cells[a] { 0.5 } else { 1.0 };
            v *= w * self.spacing[a];
        }
        v
    }

    /// Index of the cell containing `x` along `axis`, clamped into range.
    pub fn cell_index_along(&self, axis: usize, x: f64) -> usize {
        let t = ((x - self.cuboid.lo.0[axis]) / self.spacing[axis]).floor();
        (t.max(0.0) as usize).min(self.cells[axis] - 1)
    }

    /// Nearest node to `x` (clamped into the grid).
    pub fn nearest_node(&self, x: &[f64]) -> usize {
        let mut flat = 0;
        for a in 0..self.dim() {
            let t = ((x[a] - self.cuboid.lo.0[a]) / self.spacing[a]).round();
            let i = (t.max(0.0) as usize).min(self.cells[a]);
            flat += i * self.node_strides[a];
        }
        flat
    }

    /// Grid whose nodes are the cell centers of `self`. Requires at least two
    /// cells per axis.
    pub fn cell_center_grid(&self) -> Result<Grid> {
        if self.cells.iter().any(|&c| c < 2) {
            return Err(invalid("cells", "cell-center grid needs at least two cells per axis"));
        }
        let lo: Vec<f64> = (0..self.dim()).map(|a| self.cuboid.lo.0[a] + 0.5 * self.spacing[a]).collect();
        let hi: Vec<f64> = (0..self.dim()).map(|a| self.cuboid.hi.0[a] - 0.5 * self.spacing[a]).collect();
        Grid::new(Cuboid::new(Point(lo), Point(hi))?, self.cells.iter().map(|c| c - 1).collect())
    }

    /// Grids with the same box and cell counts (up to rounding in the box).
    pub fn matches(&self, other: &Grid) -> bool {
        self.cells == other.cells
            && self
                .cuboid
                .lo
                .0
                .iter()
                .chain(&self.cuboid.hi.0)
                .zip(other.cuboid.lo.0.iter().chain(&other.cuboid.hi.0))
                .all(|(a, b)| (a - b).abs() <= 1e-12 * (1.0 + a.abs()))
    }
}

/// Calls `f` for every multi-index in the half-open box `[lo, hi)`, last axis fastest.
pub(crate) fn for_each_index(lo: &[usize], hi: &[usize], mut f: impl FnMut(&[usize])) {
    let n = lo.len();
    if (0..n).any(|a| lo[a] >= hi[a]) {
        return;
    }
    let mut idx = lo.to_vec();
    loop {
        f(&idx);
        let mut a = n;
        loop {
            if a == 0 {
                return;
            }
            a -= 1;
            idx[a] += 1;
            if idx[a] < hi[a] {
                break;
            }
            idx[a] = lo[a];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ball_volumes() {
        assert!((unit_ball_volume(2) - std::f64::consts::PI).abs() < 1e-15);
        assert!((unit_ball_volume(3) - 4.0 * std::f64::consts::PI / 3.0).abs() < 1e-14);
    }

    #[test]
    fn grid_layout() {
        let g = Grid::uniform(Cuboid::unit(2).unwrap(), 4).unwrap();
        assert_eq!(g.node_count(), 25);
        assert_eq!(g.cell_count(), 16);
        let mut idx = [0; 2];
        g.node_multi(7, &mut idx);
        assert_eq!(idx, [1, 2]);
        assert_eq!(g.node_flat(&idx), 7);
        assert!((g.dual_volume(0) - 1.0 / 64.0).abs() < 1e-15);
        assert!((g.dual_volume(6) - 1.0 / 16.0).abs() < 1e-15);
        let total: f64 = (0..g.node_count()).map(|i| g.dual_volume(i)).sum();
        assert!((total - 1.0).abs() < 1e-14);
    }

    #[test]
    fn rejects_degenerate_box() {
        assert!(Cuboid::new(Point::new([0.0, 0.0]), Point::new([1.0, 0.0])).is_err());
        assert!(Cuboid::new(Point::new([0.0]), Point::new([1.0])).is_err());
    }

    #[test]
    fn index_iteration_order() {
        let mut seen = vec![];
        for_each_index(&[0, 1], &[2, 3], |i| seen.push(i.to_vec()));
        assert_eq!(seen, vec![vec![0, 1], vec![0, 2], vec![1, 1], vec![1, 2]]);
    }
}
