//! The exponential remainder `H_l(r) = e^r - sum_{j<l} r^j / j!`.
//!
//! Below the crossover `r < l` the tail `sum_{j>=l} r^j/j!` is summed
//! directly (every term positive, no cancellation). From `r >= l` on, the
//! partial sum is at most about half of `e^r`, so subtracting a compensated
//! partial sum loses at most one bit.

use serde::Serialize;

use crate::error::{invalid, Result};
use crate::potential::ScalarField;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ReactionParams {
    pub l: u32,
}

impl ReactionParams {
    pub fn new(l: u32) -> Result<Self> {
        if l == 0 {
            return Err(invalid("l", "series cutoff must be at least 1"));
        }
        Ok(ReactionParams { l })
    }
}

/// Neumaier-compensated running sum.
#[derive(Default, Clone, Copy)]
struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// `sum_{j>=l} r^j/j!` by forward summation.
pub(crate) fn tail_series(l: u32, r: f64) -> f64 {
    if r == 0.0 {
        return 0.0;
    }
    let mut term = 1.0;
    for j in 1..=l {
        term *= r / j as f64;
    }
    let mut acc = CompensatedSum::default();
    let mut j = l;
    while term > 0.0 {
        acc.add(term);
        if term < 1e-18 * acc.value() {
            break;
        }
        j += 1;
        term *= r / j as f64;
    }
    acc.value()
}

/// `e^r - sum_{j<l} r^j/j!` by subtraction of a compensated partial sum.
pub(crate) fn by_subtraction(l: u32, r: f64) -> f64 {
    let mut acc = CompensatedSum::default();
    let mut term = 1.0;
    for j in 0..l {
        if j > 0 {
            term *= r / j as f64;
        }
        acc.add(term);
    }
    let e = r.exp();
    if e.is_infinite() {
        return f64::INFINITY;
    }
    let mut diff = CompensatedSum::default();
    diff.add(e);
    diff.add(-acc.sum);
    diff.add(-acc.comp);
    diff.value().max(0.0)
}

/// `H_l(r)` for `r >= 0`; `+inf` maps to `+inf`.
pub fn h_l(params: ReactionParams, r: f64) -> Result<f64> {
    if !(r >= 0.0) {
        return Err(invalid("r", format!("H_l is evaluated on r >= 0, got {r}")));
    }
    Ok(h_l_unchecked(params.l, r))
}

#[inline]
pub(crate) fn h_l_unchecked(l: u32, r: f64) -> f64 {
    if r.is_infinite() {
        f64::INFINITY
    } else if r < l as f64 {
        tail_series(l, r)
    } else {
        by_subtraction(l, r)
    }
}

/// Nodewise `H_l` of a nonnegative field.
pub fn h_l_applied(params: ReactionParams, f: &ScalarField) -> Result<ScalarField> {
    f.check_nonnegative()?;
    f.map(|v| h_l_unchecked(params.l, v))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ThetaScaling {
    pub holds: bool,
    /// `H_l(t/theta) theta^l / H_l(t)`; 1 when both sides vanish.
    pub ratio: f64,
    pub lhs: f64,
    pub rhs: f64,
}

/// Relative slack allowed for rounding when comparing the two sides.
const THETA_ROUNDING: f64 = 8.0 * f64::EPSILON;

/// Checks `theta^{-l} H_l(t) <= H_l(t / theta)`.
pub fn check_theta_scaling(params: ReactionParams, theta: f64, t: f64) -> Result<ThetaScaling> {
    if !(theta > 0.0 && theta <= 1.0) {
        return Err(invalid("theta", format!("need 0 < theta <= 1, got {theta}")));
    }
    let base = h_l(params, t)?;
    let scaled = h_l(params, t / theta)?;
    let lhs = base * theta.powi(-(params.l as i32));
    let ratio = if base == 0.0 && scaled == 0.0 { 1.0 } else { scaled * theta.powi(params.l as i32) / base };
    Ok(ThetaScaling { holds: lhs <= scaled * (1.0 + THETA_ROUNDING), ratio, lhs, rhs: scaled })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p(l: u32) -> ReactionParams {
        ReactionParams::new(l).unwrap()
    }

    #[test]
    fn examples() {
        assert_eq!(h_l(p(1), 0.0).unwrap(), 0.0);
        let e = std::f64::consts::E;
        assert!((h_l(p(2), 1.0).unwrap() - (e - 2.0)).abs() < 1e-15);
        assert!(h_l(p(1), -1.0).is_err());
        assert!(ReactionParams::new(0).is_err());
        assert_eq!(h_l(p(3), f64::INFINITY).unwrap(), f64::INFINITY);
    }

    #[test]
    fn theta_examples() {
        let one = check_theta_scaling(p(3), 1.0, 2.0).unwrap();
        assert!(one.holds && (one.ratio - 1.0).abs() < 1e-15);
        let half = check_theta_scaling(p(2), 0.5, 1.0).unwrap();
        let e = std::f64::consts::E;
        assert!((half.lhs - 4.0 * (e - 2.0)).abs() < 1e-14);
        assert!((half.rhs - (e * e - 3.0)).abs() < 1e-14);
        assert!(half.holds);
        let zero = check_theta_scaling(p(4), 0.1, 0.0).unwrap();
        assert!(zero.holds && zero.lhs == 0.0 && zero.rhs == 0.0);
        assert!(check_theta_scaling(p(1), 0.0, 1.0).is_err());
    }

    #[test]
    fn field_application() {
        use crate::measure::{Cuboid, Grid};
        let g = Grid::uniform(Cuboid::unit(2).unwrap(), 3).unwrap();
        let z = h_l_applied(p(2), &ScalarField::zeros(g.clone())).unwrap();
        assert!(z.values().iter().all(|v| *v == 0.0));
        let ones = ScalarField::new(g.clone(), vec![1.0; 16]).unwrap();
        let h = h_l_applied(p(2), &ones).unwrap();
        assert!(h.values().iter().all(|v| (v - (std::f64::consts::E - 2.0)).abs() < 1e-15));
    }

    proptest! {
        #[test]
        fn bounds_and_ordering(l in 1u32..10, r in 0.0f64..40.0) {
            let h = h_l(p(l), r).unwrap();
            prop_assert!(h <= r.exp() * (1.0 + 1e-15));
            let mut first = 1.0;
            for j in 1..=l { first *= r / j as f64; }
            prop_assert!(h >= first * (1.0 - 1e-14));
            prop_assert!(h_l(p(l + 1), r).unwrap() <= h * (1.0 + 1e-15));
        }

        #[test]
        fn monotone_and_convex(l in 1u32..8, r in 0.0f64..30.0, d in 1e-3f64..1.0) {
            let a = h_l(p(l), r).unwrap();
            let b = h_l(p(l), r + d).unwrap();
            let c = h_l(p(l), r + 2.0 * d).unwrap();
            prop_assert!(b >= a);
            prop_assert!(a + c - 2.0 * b >= -1e-12 * c);
        }

        #[test]
        fn branches_agree_on_overlap(l in 1u32..12, u in 0.0f64..1.0) {
            let r = l as f64 * (0.5 + 1.5 * u);
            let a = tail_series(l, r);
            let b = by_subtraction(l, r);
            prop_assert!(((a - b) / a).abs() < 1e-10, "l={} r={} {} {}", l, r, a, b);
        }
    }
}
