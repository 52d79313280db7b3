use rayon::prelude::*;
use serde::Serialize;

use super::{conv, wolff_at, wolff_atoms_at, WolffParams};
use crate::error::{invalid, Error, Result};
use crate::measure::{for_each_index, unit_ball_volume, Density, Grid, RadonMeasure};

/// Nodal values on a grid; `+inf` is allowed, `NaN` is not.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalarField {
    grid: Grid,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.node_count() {
            return Err(invalid("field", format!("{} values for {} nodes", values.len(), grid.node_count())));
        }
        if values.iter().any(|v| v.is_nan()) {
            return Err(invalid("field", "NaN value"));
        }
        Ok(ScalarField { grid, values })
    }

    pub fn zeros(grid: Grid) -> Self {
        let n = grid.node_count();
        ScalarField { grid, values: vec![0.0; n] }
    }

    /// Samples `f` at every node.
    pub fn from_fn(grid: Grid, f: impl Fn(&[f64]) -> f64 + Sync) -> Result<Self> {
        let values = (0..grid.node_count())
            .into_par_iter()
            .map(|i| {
                let mut x = vec![0.0; grid.dim()];
                grid.node_coords(i, &mut x);
                f(&x)
            })
            .collect();
        ScalarField::new(grid, values)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64 + Sync) -> Result<ScalarField> {
        ScalarField::new(self.grid.clone(), self.values.par_iter().map(|v| f(*v)).collect())
    }

    pub fn scaled(&self, c: f64) -> Result<ScalarField> {
        self.map(|v| if v == 0.0 { 0.0 } else { c * v })
    }

    pub fn add(&self, other: &ScalarField) -> Result<ScalarField> {
        if !self.grid.matches(&other.grid) {
            return Err(Error::GridMismatch("fields live on different grids".into()));
        }
        ScalarField::new(self.grid.clone(), self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect())
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max_finite(&self) -> f64 {
        self.values.iter().cloned().filter(|v| v.is_finite()).fold(f64::NEG_INFINITY, f64::max)
    }

    /// Median over all nodes (`+inf` sorts last).
    pub fn median(&self) -> f64 {
        let mut v = self.values.clone();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        if n % 2 == 1 {
            v[n / 2]
        } else {
            0.5 * (v[n / 2 - 1] + v[n / 2])
        }
    }

    /// Trapezoid-rule integral over the box.
    pub fn integral(&self) -> f64 {
        self.values.iter().enumerate().map(|(i, v)| v * self.grid.dual_volume(i)).sum()
    }

    /// Restriction to every `factor`-th node along each axis.
    pub fn coarsened(&self, factor: usize) -> Result<ScalarField> {
        let g = &self.grid;
        if factor == 0 || g.cells().iter().any(|c| c % factor != 0) {
            return Err(invalid("factor", format!("{factor} does not divide the cell counts {:?}", g.cells())));
        }
        let coarse = Grid::new(g.cuboid().clone(), g.cells().iter().map(|c| c / factor).collect())?;
        let mut idx = vec![0; g.dim()];
        let values = (0..coarse.node_count())
            .map(|i| {
                coarse.node_multi(i, &mut idx);
                for v in idx.iter_mut() {
                    *v *= factor;
                }
                self.values[g.node_flat(&idx)]
            })
            .collect();
        ScalarField::new(coarse, values)
    }

    pub fn check_nonnegative(&self) -> Result<()> {
        match self.values.iter().enumerate().find(|(_, v)| **v < 0.0) {
            Some((index, &value)) => Err(Error::NegativeValue { index, value }),
            None => Ok(()),
        }
    }
}

/// Wolff potential at every node of `grid`.
///
/// Atomic measures and nonlinear kernels are evaluated node by node. For
/// `s = 2` with a density whose grid spacing matches `grid`, the density
/// part goes through an FFT convolution that evaluates the same sub-atom
/// sums.
pub fn wolff_field(m: &RadonMeasure, params: &WolffParams, grid: &Grid) -> Result<ScalarField> {
    params.validate(m.dim())?;
    if grid.dim() != m.dim() {
        return Err(Error::DimensionMismatch { expected: m.dim(), got: grid.dim() });
    }
    let pointwise = |f: &(dyn Fn(&RadonMeasure, &WolffParams, &[f64]) -> f64 + Sync)| -> Vec<f64> {
        (0..grid.node_count())
            .into_par_iter()
            .map(|i| {
                let mut x = vec![0.0; grid.dim()];
                grid.node_coords(i, &mut x);
                f(m, params, &x)
            })
            .collect()
    };
    let values = match m.density() {
        Some(d) if params.is_linear() && conv::compatible(d, grid) => {
            let beta = params.radial_exponent(m.dim());
            match conv::linear_density_potential(d, m.subsample(), grid, beta, params.truncation) {
                Some(dens) => {
                    let atoms = pointwise(&wolff_atoms_at);
                    atoms.into_iter().zip(dens).map(|(a, b)| a + b).collect()
                }
                None => pointwise(&wolff_at),
            }
        }
        _ => pointwise(&wolff_at),
    };
    ScalarField::new(grid.clone(), values)
}

/// Wolff potential of the absolutely continuous measure `f dx`, returned on
/// `grid`.
///
/// Nodal values become a cell density by averaging the `2^N` corners. A
/// `+inf` node is replaced by the mean of a local power-law profile
/// `A |x - a|^{-e}` over its dual cell, with `A, e` fitted from the finite
/// values one and two steps away along the axes; `e >= N` means the
/// singularity is not integrable and is reported as an error.
pub fn wolff_of_field(f: &ScalarField, params: &WolffParams, grid: &Grid) -> Result<ScalarField> {
    f.check_nonnegative()?;
    let density = field_to_density(f)?;
    let m = RadonMeasure::from_density(density);
    wolff_field(&m, params, grid)
}

/// Corner-averaged cell density of a nonnegative nodal field, with `+inf`
/// nodes capped by the local-profile rule.
pub fn field_to_density(f: &ScalarField) -> Result<Density> {
    f.check_nonnegative()?;
    let g = f.grid();
    let n = g.dim();
    let mut nodal = f.values().to_vec();
    for node in 0..nodal.len() {
        if nodal[node].is_infinite() {
            nodal[node] = capped_node_value(f, node)?;
        }
    }
    let corners = 1usize << n;
    let mut idx = vec![0; n];
    let mut corner = vec![0; n];
    let values = (0..g.cell_count())
        .map(|c| {
            g.cell_multi(c, &mut idx);
            let mut s = 0.0;
            for bits in 0..corners {
                for a in 0..n {
                    corner[a] = idx[a] + ((bits >> a) & 1);
                }
                s += nodal[g.node_flat(&corner)];
            }
            s / corners as f64
        })
        .collect();
    Density::new(g.clone(), values)
}

/// Subsamples per axis for the non-ball remainder of a capped dual cell.
const CAP_SUBSAMPLES: usize = 16;
/// Extra subdivision of subcells cut by the excised ball.
const CAP_REFINE: usize = 8;

fn capped_node_value(f: &ScalarField, node: usize) -> Result<f64> {
    let g = f.grid();
    let n = g.dim();
    let mut idx = vec![0usize; n];
    g.node_multi(node, &mut idx);
    let ring = |step: usize| -> Result<Option<f64>> {
        let mut sum = 0.0;
        let mut count = 0;
        for a in 0..n {
            for dir in [-1i64, 1] {
                let j = idx[a] as i64 + dir * step as i64;
                if j < 0 || j > g.cells()[a] as i64 {
                    continue;
                }
                let mut nb = idx.clone();
                nb[a] = j as usize;
                let v = f.values()[g.node_flat(&nb)];
                if v.is_infinite() {
                    return Err(invalid("field", format!("adjacent infinite nodes near node {node}")));
                }
                sum += v;
                count += 1;
            }
        }
        Ok((count > 0).then(|| sum / count as f64))
    };
    let f1 = ring(1)?.ok_or_else(|| invalid("field", "isolated node"))?;
    let f2 = ring(2)?;
    if f1 <= 0.0 {
        return Ok(0.0);
    }
    let exponent = match f2 {
        Some(f2) if f2 > 0.0 => (f1 / f2).log2(),
        Some(_) => f64::INFINITY,
        None => 0.0,
    };
    if exponent >= n as f64 {
        return Err(Error::NonIntegrable { node, exponent, dim: n });
    }
    if exponent <= 0.0 {
        return Ok(f1);
    }
    let h = g.spacing().iter().product::<f64>().powf(1.0 / n as f64);
    let amplitude = f1 * h.powf(exponent);

    // Dual cell, clipped to the box.
    let mut lo = vec![0.0; n];
    let mut hi = vec![0.0; n];
    let mut orthants = 1.0;
    for a in 0..n {
        let half = 0.5 * g.spacing()[a];
        lo[a] = if idx[a] == 0 { 0.0 } else { -half };
        hi[a] = if idx[a] == g.cells()[a] { 0.0 } else { half };
        if idx[a] == 0 || idx[a] == g.cells()[a] {
            orthants *= 0.5;
        }
    }
    let rho = 0.5 * g.min_spacing();
    let sphere = n as f64 * unit_ball_volume(n);
    let ball = orthants * sphere * rho.powf(n as f64 - exponent) / (n as f64 - exponent);
    let dims = vec![CAP_SUBSAMPLES; n];
    let width: Vec<f64> = (0..n).map(|a| (hi[a] - lo[a]) / CAP_SUBSAMPLES as f64).collect();
    let dv: f64 = width.iter().product();
    let fine = vec![CAP_REFINE; n];
    let mut rest = 0.0;
    let mut y = vec![0.0; n];
    for_each_index(&vec![0; n], &dims, |k| {
        // nearest and farthest point of the subcell from the node
        let (mut near, mut far) = (0.0, 0.0);
        for a in 0..n {
            let (c0, c1) = (lo[a] + k[a] as f64 * width[a], lo[a] + (k[a] + 1) as f64 * width[a]);
            let d = if c0 > 0.0 {
                c0
            } else if c1 < 0.0 {
                -c1
            } else {
                0.0
            };
            near += d * d;
            far += c0.abs().max(c1.abs()).powi(2);
        }
        if far.sqrt() <= rho {
            return;
        }
        if near.sqrt() > rho {
            for a in 0..n {
                y[a] = lo[a] + (k[a] as f64 + 0.5) * width[a];
            }
            rest += y.iter().map(|v| v * v).sum::<f64>().sqrt().powf(-exponent) * dv;
            return;
        }
        // straddles the excised ball: refine
        let sub = dv / (CAP_REFINE as f64).powi(n as i32);
        for_each_index(&vec![0; n], &fine, |m| {
            for a in 0..n {
                y[a] = lo[a] + (k[a] as f64 + (m[a] as f64 + 0.5) / CAP_REFINE as f64) * width[a];
            }
            let r = y.iter().map(|v| v * v).sum::<f64>().sqrt();
            if r > rho {
                rest += r.powf(-exponent) * sub;
            }
        });
    });
    Ok(amplitude * (ball + rest) / g.dual_volume(node))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::{Cuboid, Point};
    use crate::potential::wolff_point;

    fn grid(n: usize) -> Grid {
        Grid::uniform(Cuboid::unit(2).unwrap(), n).unwrap()
    }

    #[test]
    fn zero_measure_field() {
        let f = wolff_field(&RadonMeasure::zero(2), &WolffParams::new(1.0, 2.0, 1.0), &grid(8)).unwrap();
        assert!(f.values().iter().all(|v| *v == 0.0));
        let g = wolff_of_field(&ScalarField::zeros(grid(8)), &WolffParams::new(1.0, 2.0, 1.0), &grid(8)).unwrap();
        assert!(g.values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn dirac_field_peaks_next_to_atom() {
        let g = grid(16);
        let m = RadonMeasure::dirac(Point::new([0.5, 0.5]), 1.0).unwrap();
        let f = wolff_field(&m, &WolffParams::new(1.0, 2.0, 1.0), &g).unwrap();
        let atom = g.nearest_node(&[0.5, 0.5]);
        assert_eq!(f.values()[atom], f64::INFINITY);
        let neighbour = f.values()[atom + 1];
        assert!((f.max_finite() - neighbour).abs() < 1e-15);
    }

    #[test]
    fn fft_path_matches_pointwise() {
        let g = grid(12);
        let vals: Vec<f64> = (0..144).map(|i| ((i * 7) % 11) as f64 * 0.1).collect();
        let m = RadonMeasure::from_density(Density::new(g.clone(), vals).unwrap()).with_atom(Point::new([0.3, 0.55]), 0.2).unwrap();
        let p = WolffParams::new(1.0, 2.0, 0.8);
        let f = wolff_field(&m, &p, &g).unwrap();
        for node in [0, 5, 40, 77, 168] {
            let x = g.node_point(node);
            let direct = wolff_point(&m, &p, &x).unwrap();
            assert!((f.values()[node] - direct).abs() <= 1e-11 * (1.0 + direct), "{node}");
        }
        // shifted evaluation lattice (cell centers)
        let cc = g.cell_center_grid().unwrap();
        let fc = wolff_field(&m, &p, &cc).unwrap();
        for node in [0, 13, 60, 120] {
            let direct = wolff_point(&m, &p, &cc.node_point(node)).unwrap();
            assert!((fc.values()[node] - direct).abs() <= 1e-11 * (1.0 + direct));
        }
    }

    #[test]
    fn cap_matches_power_profile_integral() {
        // f = |x - c|^{-1} on a grid centred at the singular node: the dual
        // cell of side h holds int |y|^{-1} = h * 4 asinh(1) exactly.
        let g = Grid::uniform(Cuboid::new(Point::new([-1.0, -1.0]), Point::new([1.0, 1.0])).unwrap(), 32).unwrap();
        let f = ScalarField::from_fn(g.clone(), |x| {
            let r = (x[0] * x[0] + x[1] * x[1]).sqrt();
            if r == 0.0 {
                f64::INFINITY
            } else {
                1.0 / r
            }
        })
        .unwrap();
        let node = g.nearest_node(&[0.0, 0.0]);
        let v = capped_node_value(&f, node).unwrap();
        let h = 2.0 / 32.0;
        let exact = 4.0 * (1.0f64).asinh() * h / (h * h);
        assert!((v / exact - 1.0).abs() < 1e-2, "{v} vs {exact}");
    }

    #[test]
    fn non_integrable_profile_is_rejected() {
        let g = Grid::uniform(Cuboid::new(Point::new([-1.0, -1.0]), Point::new([1.0, 1.0])).unwrap(), 16).unwrap();
        let f = ScalarField::from_fn(g.clone(), |x| {
            let r2 = x[0] * x[0] + x[1] * x[1];
            if r2 == 0.0 {
                f64::INFINITY
            } else {
                1.0 / (r2 * r2.sqrt())
            }
        })
        .unwrap();
        let err = wolff_of_field(&f, &WolffParams::new(1.0, 2.0, 1.0), &g).unwrap_err();
        assert!(matches!(err, Error::NonIntegrable { .. }));
    }

    #[test]
    fn coarsening_keeps_shared_nodes() {
        let f = ScalarField::from_fn(grid(8), |x| x[0] + 10.0 * x[1]).unwrap();
        let c = f.coarsened(4).unwrap();
        assert_eq!(c.grid().cells(), &[2, 2]);
        assert_eq!(c.values()[4], 0.5 + 5.0);
        assert!(f.coarsened(3).is_err());
    }

    #[test]
    fn rejects_negative_field() {
        let mut v = vec![0.0; 25];
        v[3] = -1.0;
        let f = ScalarField::new(grid(4), v).unwrap();
        assert!(wolff_of_field(&f, &WolffParams::new(1.0, 2.0, 1.0), &grid(4)).is_err());
    }
}
