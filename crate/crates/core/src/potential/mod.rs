//! Truncated Wolff potentials and the centered maximal function.
//!
//! `W^T_{alpha,s}[mu](x) = int_0^T (mu(B_t(x)) / t^{N - alpha s})^{1/(s-1)} dt / t`.
//!
//! With the measure representation of [`crate::measure`], `t -> mu(B_t(x))`
//! is a nondecreasing step function whose jumps sit at the distances from
//! `x` to atoms and density sub-atoms. The integral is therefore evaluated
//! piecewise in closed form; no quadrature error is introduced.
//!
//! Potentials are extended reals represented as `f64` with `+inf` for
//! divergent points; `NaN` never escapes this module.

mod conv;
pub mod field;
pub mod io;

pub use field::{wolff_field, wolff_of_field, ScalarField};

use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::measure::{unit_ball_volume, Point, RadonMeasure};

/// `(alpha, s, T)` selecting the Wolff kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WolffParams {
    pub alpha: f64,
    pub s: f64,
    pub truncation: f64,
}

impl WolffParams {
    pub fn new(alpha: f64, s: f64, truncation: f64) -> Self {
        WolffParams { alpha, s, truncation }
    }

    /// `W_{1,p}`, the potential controlling `p`-superharmonic functions.
    pub fn p_laplace(p: f64, truncation: f64) -> Self {
        WolffParams::new(1.0, p, truncation)
    }

    /// `W_{2k/(k+1), k+1}`, the potential controlling `k`-convex functions.
    /// For `k = N/2` this is `W_{2N/(N+2), (N+2)/2}`.
    pub fn hessian(k: f64, truncation: f64) -> Self {
        WolffParams::new(2.0 * k / (k + 1.0), k + 1.0, truncation)
    }

    /// `W_{N/p, p}`, the borderline potential with `alpha * s = N`.
    pub fn critical(dim: usize, p: f64, truncation: f64) -> Self {
        WolffParams::new(dim as f64 / p, p, truncation)
    }

    pub fn with_truncation(self, truncation: f64) -> Self {
        WolffParams { truncation, ..self }
    }

    /// Checks `s > 1`, `T > 0` and `0 <= alpha s <= N`.
    pub fn validate(&self, dim: usize) -> Result<()> {
        if !(self.s > 1.0) || !self.s.is_finite() {
            return Err(invalid("s", format!("need s > 1, got {}", self.s)));
        }
        if !(self.truncation > 0.0) || !self.truncation.is_finite() {
            return Err(invalid("truncation", format!("need T > 0, got {}", self.truncation)));
        }
        let n = dim as f64;
        let prod = self.alpha * self.s;
        if !(self.alpha >= 0.0) || prod > n * (1.0 + 1e-12) {
            return Err(invalid("alpha", format!("need 0 <= alpha*s <= N = {dim}, got alpha*s = {prod}")));
        }
        Ok(())
    }

    /// Power `1/(s-1)` applied to the ball mass.
    pub fn mass_exponent(&self) -> f64 {
        1.0 / (self.s - 1.0)
    }

    /// `(N - alpha s)/(s-1)`, so the integrand is `mu(B_t)^q t^{-beta-1}`.
    /// Snapped to zero in the borderline case.
    pub fn radial_exponent(&self, dim: usize) -> f64 {
        let gap = dim as f64 - self.alpha * self.s;
        if gap.abs() <= 1e-12 * dim as f64 {
            0.0
        } else {
            gap / (self.s - 1.0)
        }
    }

    fn is_linear(&self) -> bool {
        (self.s - 2.0).abs() <= 1e-15
    }
}

/// `int_a^b t^{-beta-1} dt` for `0 < a <= b`.
#[inline]
pub(crate) fn radial_integral(a: f64, b: f64, beta: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let log_ratio = (a / b).ln();
    if beta == 0.0 {
        -log_ratio
    } else {
        // a^{-beta} (1 - (a/b)^beta) / beta, stable as beta -> 0
        -a.powf(-beta) * (beta * log_ratio).exp_m1() / beta
    }
}

/// Wolff integral of a step function given by `(distance, mass)` jumps, all
/// within `[0, T]`.
pub(crate) fn integrate_events(events: &mut [(f64, f64)], q: f64, beta: f64, truncation: f64, linear: bool) -> f64 {
    if events.iter().any(|e| e.0 == 0.0 && e.1 > 0.0) {
        return f64::INFINITY;
    }
    if linear {
        return events.iter().map(|&(d, m)| m * radial_integral(d, truncation, beta)).sum();
    }
    events.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut acc = 0.0;
    let mut mass = 0.0;
    let mut i = 0;
    while i < events.len() {
        let d = events[i].0;
        while i < events.len() && events[i].0 == d {
            mass += events[i].1;
            i += 1;
        }
        let next = if i < events.len() { events[i].0 } else { truncation };
        if mass > 0.0 {
            acc += mass.powf(q) * radial_integral(d, next.min(truncation), beta);
        }
    }
    acc
}

fn check_point(m: &RadonMeasure, x: &Point) -> Result<()> {
    if x.dim() != m.dim() {
        return Err(Error::DimensionMismatch { expected: m.dim(), got: x.dim() });
    }
    if x.coords().iter().any(|c| !c.is_finite()) {
        return Err(invalid("x", "point must be finite"));
    }
    Ok(())
}

/// `W^T_{alpha,s}[mu](x)`; `+inf` when an atom sits at `x`.
pub fn wolff_point(m: &RadonMeasure, params: &WolffParams, x: &Point) -> Result<f64> {
    params.validate(m.dim())?;
    check_point(m, x)?;
    Ok(wolff_at(m, params, x.coords()))
}

pub(crate) fn wolff_at(m: &RadonMeasure, params: &WolffParams, x: &[f64]) -> f64 {
    let mut events = m.mass_events(x, params.truncation);
    integrate_events(&mut events, params.mass_exponent(), params.radial_exponent(m.dim()), params.truncation, params.is_linear())
}

/// Atoms-only part of the potential (exact also for nonlinear kernels only
/// when the measure has no density).
pub(crate) fn wolff_atoms_at(m: &RadonMeasure, params: &WolffParams, x: &[f64]) -> f64 {
    let mut events = m.atom_events(x, params.truncation);
    integrate_events(&mut events, params.mass_exponent(), params.radial_exponent(m.dim()), params.truncation, params.is_linear())
}

/// Smallest radius scanned for measures with a density part, in units of
/// the density cell diagonal. Below this the sub-atom lattice dominates the
/// ball/volume ratio, and the density value itself is used instead.
pub const MAXIMAL_MIN_RADIUS_CELLS: f64 = 4.0;

/// `M_mu(x) = sup_{0 < r <= r_max} mu(B_r(x)) / |B_r|` with closed balls.
///
/// For the atomic part the supremum is attained at an atom distance, so the
/// candidates are exact jump radii. With a density, radii below
/// `MAXIMAL_MIN_RADIUS_CELLS` cell diagonals are replaced by the density
/// value of the cell containing `x`.
pub fn maximal_point(m: &RadonMeasure, x: &Point, r_max: f64) -> Result<f64> {
    check_point(m, x)?;
    if !(r_max > 0.0) {
        return Err(invalid("r_max", format!("need r_max > 0, got {r_max}")));
    }
    Ok(maximal_at(m, x.coords(), r_max))
}

pub(crate) fn maximal_at(m: &RadonMeasure, x: &[f64], r_max: f64) -> f64 {
    let n = m.dim();
    let omega = unit_ball_volume(n);
    let mut events: Vec<(f64, f64, bool)> = m.atom_events(x, r_max).into_iter().map(|(d, w)| (d, w, true)).collect();
    if events.iter().any(|e| e.0 == 0.0) {
        return f64::INFINITY;
    }
    let r_lo = match m.density() {
        Some(d) => {
            let mut dens = Vec::new();
            m.push_density_events(x, r_max, &mut dens);
            events.extend(dens.into_iter().map(|(d, w)| (d, w, false)));
            (MAXIMAL_MIN_RADIUS_CELLS * d.grid().cell_diagonal()).min(r_max)
        }
        None => 0.0,
    };
    events.sort_by(|a, b| a.0.total_cmp(&b.0));
    let ratio = |mass: f64, r: f64| mass / (omega * r.powi(n as i32));
    let mut best = m.density_at(x);
    let mut mass = 0.0;
    let mut i = 0;
    let mut lo_done = r_lo == 0.0;
    while i < events.len() {
        let d = events[i].0;
        if !lo_done && d > r_lo {
            best = best.max(ratio(mass, r_lo));
            lo_done = true;
        }
        let mut has_atom = false;
        while i < events.len() && events[i].0 == d {
            mass += events[i].1;
            has_atom |= events[i].2;
            i += 1;
        }
        if d >= r_lo || has_atom {
            best = best.max(ratio(mass, d));
        }
    }
    if !lo_done {
        best = best.max(ratio(mass, r_lo));
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::{Cuboid, Density, Grid};

    fn dirac(coords: &[f64], mass: f64) -> RadonMeasure {
        RadonMeasure::dirac(Point::new(coords), mass).unwrap()
    }

    #[test]
    fn indicator_mass_integral() {
        let m = dirac(&[0.0, 0.0], 1.0);
        let w = wolff_point(&m, &WolffParams::new(1.0, 2.0, 1.0), &Point::new([0.5, 0.0])).unwrap();
        assert!((w - 2f64.ln()).abs() < 1e-12);
        let at = wolff_point(&m, &WolffParams::new(1.0, 2.0, 1.0), &Point::new([0.0, 0.0])).unwrap();
        assert_eq!(at, f64::INFINITY);
    }

    #[test]
    fn newtonian_form_in_3d() {
        let m = dirac(&[0.0, 0.0, 0.0], 1.0);
        let w = wolff_point(&m, &WolffParams::new(1.0, 2.0, 1.0), &Point::new([0.25, 0.0, 0.0])).unwrap();
        assert!((w - 3.0).abs() < 1e-12);
    }

    #[test]
    fn zero_measure_and_bad_params() {
        let z = RadonMeasure::zero(2);
        assert_eq!(wolff_point(&z, &WolffParams::new(1.0, 2.0, 1.0), &Point::new([0.3, 0.3])).unwrap(), 0.0);
        let m = dirac(&[0.0, 0.0], 1.0);
        let x = Point::new([0.5, 0.0]);
        assert!(wolff_point(&m, &WolffParams::new(1.0, 2.0, 0.0), &x).is_err());
        assert!(wolff_point(&m, &WolffParams::new(1.0, 1.0, 1.0), &x).is_err());
        assert!(wolff_point(&m, &WolffParams::new(2.0, 2.0, 1.0), &x).is_err());
    }

    #[test]
    fn nonlinear_kernel_two_atoms() {
        // mu(B_t) = 1 on [0.1, 0.3), 3 on [0.3, 1]; s = 3, alpha = 2/3, N = 2.
        let m = dirac(&[0.1, 0.0], 1.0).with_atom(Point::new([0.3, 0.0]), 2.0).unwrap();
        let w = wolff_point(&m, &WolffParams::new(2.0 / 3.0, 3.0, 1.0), &Point::new([0.0, 0.0])).unwrap();
        let expect = (3.0f64).ln() + 3f64.sqrt() * (1.0f64 / 0.3).ln();
        assert!((w - expect).abs() < 1e-12, "{w} vs {expect}");
    }

    #[test]
    fn presets() {
        let h = WolffParams::hessian(1.0, 2.0);
        assert_eq!((h.alpha, h.s), (1.0, 2.0));
        let h = WolffParams::hessian(1.5, 2.0); // N = 3
        assert!((h.alpha - 1.2).abs() < 1e-15 && (h.s - 2.5).abs() < 1e-15);
        assert!(h.validate(3).is_ok());
        assert_eq!(h.radial_exponent(3), 0.0);
    }

    #[test]
    fn maximal_dirac() {
        let m = dirac(&[0.0, 0.0], 1.0);
        let v = maximal_point(&m, &Point::new([0.5, 0.0]), 2.0).unwrap();
        assert!((v - 4.0 / std::f64::consts::PI).abs() < 1e-12);
        assert_eq!(maximal_point(&m, &Point::new([0.0, 0.0]), 2.0).unwrap(), f64::INFINITY);
    }

    #[test]
    fn maximal_uniform_density() {
        let g = Grid::uniform(Cuboid::unit(2).unwrap(), 64).unwrap();
        let m = RadonMeasure::from_density(Density::uniform(g, 2.5).unwrap());
        for x in [[0.5, 0.5], [0.13, 0.77], [0.02, 0.5]] {
            let v = maximal_point(&m, &Point::new(x), 2.0).unwrap();
            assert!((v / 2.5 - 1.0).abs() < 0.03, "{x:?}: {v}");
        }
    }
}
