//! Finite nonnegative Radon measures on a box: point masses plus a
//! piecewise-constant cell density.
//!
//! Ball masses use closed balls. A density cell is counted in full when the
//! ball contains the whole cell and otherwise by counting which of its
//! `S^N` subsample points (cell-midpoint lattice, `S = 4` by default) fall
//! inside the ball. Since a fully covered cell also covers all of its
//! subsamples, the density behaves exactly like a cloud of `S^N` equal
//! sub-atoms per cell; [`RadonMeasure::mass_events`] exposes that cloud to
//! the potential code.

mod grid;
pub mod io;

pub(crate) use grid::{dist2, for_each_index};
pub use grid::{unit_ball_volume, Cuboid, Grid, Point};

use serde::Serialize;

use crate::error::{invalid, Error, Result};

pub const DEFAULT_SUBSAMPLE: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Atom {
    pub location: Point,
    pub mass: f64,
}

/// Cell-wise constant density (mass per unit volume) on a grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Density {
    grid: Grid,
    values: Vec<f64>,
}

impl Density {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.cell_count() {
            return Err(invalid("density", format!("{} values for {} cells", values.len(), grid.cell_count())));
        }
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::NegativeValue { index, value });
        }
        Ok(Density { grid, values })
    }

    pub fn uniform(grid: Grid, value: f64) -> Result<Self> {
        let n = grid.cell_count();
        Density::new(grid, vec![value; n])
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.cell_volume()
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().cloned().fold(0.0, f64::max)
    }
}

/// Offsets (in units of the spacing) of the `S` midpoint subsamples along one axis.
pub(crate) fn subsample_offsets(s: usize) -> Vec<f64> {
    (0..s).map(|k| (2 * k + 1) as f64 / (2 * s) as f64).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RadonMeasure {
    dim: usize,
    atoms: Vec<Atom>,
    density: Option<Density>,
    label: String,
    subsample: usize,
}

impl RadonMeasure {
    /// The zero measure in `dim` dimensions.
    pub fn zero(dim: usize) -> Self {
        RadonMeasure { dim, atoms: Vec::new(), density: None, label: String::new(), subsample: DEFAULT_SUBSAMPLE }
    }

    pub fn dirac(location: Point, mass: f64) -> Result<Self> {
        let mut m = RadonMeasure::zero(location.dim());
        m.push_atom(location, mass)?;
        Ok(m)
    }

    pub fn from_density(density: Density) -> Self {
        let mut m = RadonMeasure::zero(density.grid.dim());
        m.density = Some(density);
        m
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    /// Subsamples per axis used for partially covered density cells.
    pub fn with_subsample(mut self, s: usize) -> Result<Self> {
        if s == 0 {
            return Err(invalid("subsample", "must be positive"));
        }
        self.subsample = s;
        Ok(self)
    }

    pub fn with_atom(mut self, location: Point, mass: f64) -> Result<Self> {
        self.push_atom(location, mass)?;
        Ok(self)
    }

    pub fn with_density(mut self, density: Density) -> Result<Self> {
        if density.grid.dim() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: density.grid.dim() });
        }
        self.density = Some(match self.density.take() {
            None => density,
            Some(d) => add_densities(&d, &density)?,
        });
        Ok(self)
    }

    fn push_atom(&mut self, location: Point, mass: f64) -> Result<()> {
        if location.dim() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: location.dim() });
        }
        if !(mass >= 0.0) || !mass.is_finite() {
            return Err(Error::NegativeValue { index: self.atoms.len(), value: mass });
        }
        if location.0.iter().any(|c| !c.is_finite()) {
            return Err(invalid("atom", "non-finite location"));
        }
        if mass > 0.0 {
            self.atoms.push(Atom { location, mass });
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn density(&self) -> Option<&Density> {
        self.density.as_ref()
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn subsample(&self) -> usize {
        self.subsample
    }

    pub fn is_zero(&self) -> bool {
        self.atoms.is_empty() && self.density.as_ref().is_none_or(|d| d.values.iter().all(|v| *v == 0.0))
    }

    pub fn atom_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.mass).sum()
    }

    pub fn total_mass(&self) -> f64 {
        self.atom_mass() + self.density.as_ref().map_or(0.0, Density::total)
    }

    /// Largest distance from `x` to any part of the support.
    pub fn support_radius(&self, x: &[f64]) -> f64 {
        let mut r: f64 = self.atoms.iter().map(|a| dist2(&a.location.0, x).sqrt()).fold(0.0, f64::max);
        if let Some(d) = &self.density {
            let c = d.grid.cuboid();
            let far2: f64 = (0..self.dim)
                .map(|a| {
                    let v = (x[a] - c.lo().0[a]).abs().max((c.hi().0[a] - x[a]).abs());
                    v * v
                })
                .sum();
            r = r.max(far2.sqrt());
        }
        r
    }

    /// `mu(B_r(x))` over the closed ball.
    pub fn ball_mass(&self, center: &Point, radius: f64) -> f64 {
        debug_assert_eq!(center.dim(), self.dim);
        let x = center.coords();
        let r2 = radius * radius;
        let atoms: f64 = self.atoms.iter().filter(|a| dist2(&a.location.0, x) <= r2).map(|a| a.mass).sum();
        let dens = match &self.density {
            None => 0.0,
            Some(d) => self.density_ball_mass(d, x, radius),
        };
        atoms + dens
    }

    fn density_ball_mass(&self, d: &Density, x: &[f64], radius: f64) -> f64 {
        let g = &d.grid;
        let n = self.dim;
        let h = g.spacing();
        let lo = g.cuboid().lo().coords();
        let (ilo, ihi) = cell_range(g, x, radius);
        let r2 = radius * radius;
        let offs = subsample_offsets(self.subsample);
        let per_sub = 1.0 / (self.subsample.pow(n as u32)) as f64;
        let vol = g.cell_volume();
        let mut total = 0.0;
        let mut sub = vec![0.0; n];
        for_each_index(&ilo, &ihi, |idx| {
            let v = d.values[g.cell_flat(idx)];
            if v == 0.0 {
                return;
            }
            let mut near2 = 0.0;
            let mut far2 = 0.0;
            for a in 0..n {
                let c0 = lo[a] + idx[a] as f64 * h[a];
                let c1 = c0 + h[a];
                let near = if x[a] < c0 {
                    c0 - x[a]
                } else if x[a] > c1 {
                    x[a] - c1
                } else {
                    0.0
                };
                let far = (x[a] - c0).abs().max((c1 - x[a]).abs());
                near2 += near * near;
                far2 += far * far;
            }
            if near2 > r2 {
                return;
            }
            if far2 <= r2 {
                total += v * vol;
                return;
            }
            let mut count = 0usize;
            let s = self.subsample;
            let dims = vec![s; n];
            for_each_index(&vec![0; n], &dims, |k| {
                for a in 0..n {
                    sub[a] = lo[a] + (idx[a] as f64 + offs[k[a]]) * h[a];
                }
                if dist2(&sub, x) <= r2 {
                    count += 1;
                }
            });
            total += v * vol * count as f64 * per_sub;
        });
        total
    }

    /// Distances and masses of every atom and density sub-atom within
    /// `radius` of `x` (closed), unsorted.
    pub fn mass_events(&self, x: &[f64], radius: f64) -> Vec<(f64, f64)> {
        let mut out = self.atom_events(x, radius);
        self.push_density_events(x, radius, &mut out);
        out
    }

    pub(crate) fn atom_events(&self, x: &[f64], radius: f64) -> Vec<(f64, f64)> {
        let r2 = radius * radius;
        self.atoms
            .iter()
            .filter_map(|a| {
                let d2 = dist2(&a.location.0, x);
                (d2 <= r2).then(|| (d2.sqrt(), a.mass))
            })
            .collect()
    }

    pub(crate) fn push_density_events(&self, x: &[f64], radius: f64, out: &mut Vec<(f64, f64)>) {
        let r2 = radius * radius;
        if let Some(d) = &self.density {
            let g = &d.grid;
            let n = self.dim;
            let h = g.spacing();
            let lo = g.cuboid().lo().coords();
            let (ilo, ihi) = cell_range(g, x, radius);
            let s = self.subsample;
            let offs = subsample_offsets(s);
            let sub_mass = g.cell_volume() / (s.pow(n as u32)) as f64;
            let dims = vec![s; n];
            let zeros = vec![0; n];
            let mut sub = vec![0.0; n];
            for_each_index(&ilo, &ihi, |idx| {
                let v = d.values[g.cell_flat(idx)];
                if v == 0.0 {
                    return;
                }
                let mut near2 = 0.0;
                for a in 0..n {
                    let c0 = lo[a] + idx[a] as f64 * h[a];
                    let c1 = c0 + h[a];
                    let near = if x[a] < c0 {
                        c0 - x[a]
                    } else if x[a] > c1 {
                        x[a] - c1
                    } else {
                        0.0
                    };
                    near2 += near * near;
                }
                if near2 > r2 {
                    return;
                }
                for_each_index(&zeros, &dims, |k| {
                    for a in 0..n {
                        sub[a] = lo[a] + (idx[a] as f64 + offs[k[a]]) * h[a];
                    }
                    let d2 = dist2(&sub, x);
                    if d2 <= r2 {
                        out.push((d2.sqrt(), v * sub_mass));
                    }
                });
            });
        }
    }

    /// Density value of the cell containing `x` (0 outside the density grid).
    pub fn density_at(&self, x: &[f64]) -> f64 {
        match &self.density {
            None => 0.0,
            Some(d) => {
                let g = &d.grid;
                if !g.cuboid().contains(x) {
                    return 0.0;
                }
                let idx: Vec<usize> = (0..self.dim).map(|a| g.cell_index_along(a, x[a])).collect();
                d.values[g.cell_flat(&idx)]
            }
        }
    }

    /// `c * mu`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        if !(c >= 0.0) || !c.is_finite() {
            return Err(invalid("scale", format!("must be a finite nonnegative number, got {c}")));
        }
        let mut m = self.clone();
        m.atoms.retain(|_| c > 0.0);
        for a in &mut m.atoms {
            a.mass *= c;
        }
        if let Some(d) = &mut m.density {
            for v in &mut d.values {
                *v *= c;
            }
        }
        Ok(m)
    }

    /// `self + other`; densities must live on the same grid.
    pub fn sum(&self, other: &RadonMeasure) -> Result<Self> {
        if other.dim != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: other.dim });
        }
        let mut m = self.clone();
        m.atoms.extend(other.atoms.iter().cloned());
        m.density = match (&self.density, &other.density) {
            (None, None) => None,
            (Some(a), None) => Some(a.clone()),
            (None, Some(b)) => Some(b.clone()),
            (Some(a), Some(b)) => Some(add_densities(a, b)?),
        };
        Ok(m)
    }

    /// `mu` restricted to the closed sub-box `sub`. Partially covered cells
    /// keep the fraction of their subsamples lying in `sub`.
    pub fn restrict(&self, sub: &Cuboid) -> Result<Self> {
        if sub.dim() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: sub.dim() });
        }
        let mut m = self.clone();
        m.atoms.retain(|a| sub.contains(&a.location.0));
        if let Some(d) = &mut m.density {
            let frac = cell_fractions(&d.grid, self.subsample, |p| sub.contains(p));
            for (v, f) in d.values.iter_mut().zip(frac) {
                *v *= f;
            }
        }
        Ok(m)
    }

    /// `scale * (uniform unit-mass density on B_{10 diam}(0))|_box + mu`, with
    /// the box and its discretization taken from `grid`. The Lebesgue part is
    /// normalized by the full ball volume even though only its restriction to
    /// the box is stored.
    pub fn make_bar_mu(&self, scale: f64, grid: &Grid) -> Result<Self> {
        if !(scale >= 0.0) || !scale.is_finite() {
            return Err(invalid("scale", format!("must be a finite nonnegative number, got {scale}")));
        }
        if grid.dim() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: grid.dim() });
        }
        if scale == 0.0 {
            return Ok(self.clone());
        }
        let radius = 10.0 * grid.cuboid().diameter();
        let value = scale / (unit_ball_volume(self.dim) * radius.powi(self.dim as i32));
        let r2 = radius * radius;
        let frac = cell_fractions(grid, self.subsample, |p| p.iter().map(|v| v * v).sum::<f64>() <= r2);
        let values = frac.into_iter().map(|f| f * value).collect();
        let lebesgue = RadonMeasure::from_density(Density::new(grid.clone(), values)?);
        let label = if self.label.is_empty() { "bar_mu".to_string() } else { format!("bar({})", self.label) };
        Ok(self.sum(&lebesgue)?.with_label(label))
    }
}

fn add_densities(a: &Density, b: &Density) -> Result<Density> {
    if !a.grid.matches(&b.grid) {
        return Err(Error::GridMismatch("densities must share a grid".into()));
    }
    let values = a.values.iter().zip(&b.values).map(|(x, y)| x + y).collect();
    Density::new(a.grid.clone(), values)
}

/// Index range `[lo, hi)` of cells that can meet the closed ball `B_r(x)`.
fn cell_range(g: &Grid, x: &[f64], radius: f64) -> (Vec<usize>, Vec<usize>) {
    let n = g.dim();
    let lo = g.cuboid().lo().coords();
    let h = g.spacing();
    let mut ilo = vec![0; n];
    let mut ihi = vec![0; n];
    for a in 0..n {
        let a0 = ((x[a] - radius - lo[a]) / h[a]).floor() - 1.0;
        let a1 = ((x[a] + radius - lo[a]) / h[a]).floor() + 2.0;
        let cells = g.cells()[a] as f64;
        ilo[a] = a0.clamp(0.0, cells) as usize;
        ihi[a] = a1.clamp(0.0, cells) as usize;
    }
    (ilo, ihi)
}

/// Per-cell fraction of subsample points satisfying `inside`.
fn cell_fractions(g: &Grid, s: usize, inside: impl Fn(&[f64]) -> bool) -> Vec<f64> {
    let n = g.dim();
    let offs = subsample_offsets(s);
    let h = g.spacing();
    let lo = g.cuboid().lo().coords();
    let total = s.pow(n as u32) as f64;
    let dims = vec![s; n];
    let zeros = vec![0; n];
    let mut idx = vec![0; n];
    let mut p = vec![0.0; n];
    (0..g.cell_count())
        .map(|c| {
            g.cell_multi(c, &mut idx);
            let mut count = 0usize;
            for_each_index(&zeros, &dims, |k| {
                for a in 0..n {
                    p[a] = lo[a] + (idx[a] as f64 + offs[k[a]]) * h[a];
                }
                if inside(&p) {
                    count += 1;
                }
            });
            count as f64 / total
        })
        .collect()
}
