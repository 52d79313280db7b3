//! The constructive existence scheme for `-Delta_p u = H_l(u) + mu`:
//! the smallness threshold `M`, the reference measure `mu_bar`, and the
//! monotone Picard iteration `-Delta_p u_{m+1} = H_l(u_m) + mu`.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::measure::{Grid, RadonMeasure};
use crate::pde::{check_wolff_sandwich, is_regular_node, mollify_rhs, solve_plaplace_with, PdeProblem, SolveOptions};
use crate::potential::{wolff_field, wolff_of_field, ScalarField, WolffParams};
use crate::reaction::{h_l_applied, ReactionParams};
use crate::report::{Named, VerificationReport};

/// How the Lebesgue part of `mu_bar` is weighted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BarScale {
    /// Weight `M`, as in the iteration.
    Smallness,
    /// Weight 1, as in the potential lemma.
    Unit,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationConfig {
    pub dim: usize,
    pub p: f64,
    pub l: u32,
    /// Potential constant in `u <= K W[mu]`.
    pub k: f64,
    pub delta0: f64,
    pub c1: f64,
    pub max_iter: usize,
    /// Absolute stopping threshold on the sup-increment; `None` selects
    /// `1e-8 (1 + sup u_0)`.
    pub tol_sup: Option<f64>,
    pub blowup_factor: f64,
    /// Cap slack as a fraction of the cap field's median.
    pub cap_slack: f64,
    pub bar_scale: BarScale,
    /// Relative residual for every inner solve.
    pub solve_tol: f64,
}

impl IterationConfig {
    pub fn new(dim: usize, p: f64, l: u32, k: f64, delta0: f64, c1: f64) -> Self {
        IterationConfig {
            dim,
            p,
            l,
            k,
            delta0,
            c1,
            max_iter: 200,
            tol_sup: None,
            blowup_factor: 1e6,
            cap_slack: 0.1,
            bar_scale: BarScale::Smallness,
            solve_tol: 1e-11,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.dim as f64;
        if self.dim < 2 {
            return Err(invalid("dim", "need N >= 2"));
        }
        if !(self.p >= 2.0 && self.p <= n * (1.0 + 1e-12)) {
            return Err(invalid("p", format!("need 2 <= p <= N = {}, got {}", self.dim, self.p)));
        }
        if !(self.l as f64 > self.p - 1.0) {
            return Err(invalid("l", format!("need l > p - 1 = {}, got {}", self.p - 1.0, self.l)));
        }
        for (name, v) in [("K", self.k), ("delta0", self.delta0), ("C1", self.c1)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter { name, reason: format!("must be positive and finite, got {v}") });
            }
        }
        if self.max_iter == 0 {
            return Err(invalid("max_iter", "must be at least 1"));
        }
        if let Some(t) = self.tol_sup {
            if !(t > 0.0) {
                return Err(invalid("tol_sup", "must be positive"));
            }
        }
        if !(self.blowup_factor > 1.0) {
            return Err(invalid("blowup_factor", "must exceed 1"));
        }
        if !(self.cap_slack >= 0.0) {
            return Err(invalid("cap_slack", "must be nonnegative"));
        }
        if !(self.solve_tol > 0.0) {
            return Err(invalid("solve_tol", "must be positive"));
        }
        Ok(())
    }

    /// `p = N` and `l >= N`, the regime of the existence theorem.
    pub fn theorem_regime(&self) -> bool {
        (self.p - self.dim as f64).abs() <= 1e-12 && self.l as usize >= self.dim
    }

    /// `W_{1,p}` truncated at twice the box diameter.
    pub fn wolff_params(&self, grid: &Grid) -> WolffParams {
        WolffParams::p_laplace(self.p, 2.0 * grid.cuboid().diameter())
    }
}

/// `M = min{(delta0 / 2K)^{2(p-1)l/(l-p+1)}, C1^{-2(p-1)^2/(l-p+1)}}`.
pub fn smallness_m(cfg: &IterationConfig) -> Result<f64> {
    cfg.validate()?;
    let (p, l) = (cfg.p, cfg.l as f64);
    let gap = l - p + 1.0;
    let first = (cfg.delta0 / (2.0 * cfg.k)).powf(2.0 * (p - 1.0) * l / gap);
    let second = cfg.c1.powf(-2.0 * (p - 1.0) * (p - 1.0) / gap);
    Ok(first.min(second))
}

/// Weight of the Lebesgue part of `mu_bar` under `cfg`.
fn bar_weight(cfg: &IterationConfig) -> Result<f64> {
    match cfg.bar_scale {
        BarScale::Smallness => smallness_m(cfg),
        BarScale::Unit => Ok(1.0),
    }
}

/// Largest empirical sandwich constant over a calibration suite, each
/// measure solved on `grid` at exponent `p`.
pub fn calibrate_k(suite: &[RadonMeasure], grid: &Grid, p: f64) -> Result<f64> {
    let mut k: f64 = 0.0;
    for m in suite {
        let prob = PdeProblem::with_measure(grid.clone(), p, m.clone())?;
        let (u, _) = solve_plaplace_with(&prob, &SolveOptions::new(1e-11))?;
        k = k.max(check_wolff_sandwich(&u, m, p)?.checked.value);
    }
    if !(k.is_finite() && k > 0.0) {
        return Err(invalid("suite", format!("calibration produced K = {k}")));
    }
    Ok(k)
}

#[derive(Debug, Clone, Serialize)]
pub struct ConstantEstimate {
    pub delta0: f64,
    pub c1: f64,
    /// `C1` needed at the smallest candidate `delta0`.
    pub c1_floor: f64,
    /// `(delta0, C1)` for every candidate evaluated.
    pub evaluated: Vec<(f64, f64)>,
}

/// Smallest candidate `delta0 = 2^-MAX_DYADIC_EXPONENT`.
pub const MAX_DYADIC_EXPONENT: i32 = 20;

/// `C1` needed for one `delta0` over the whole suite: the max of
/// `sup W[F]` and `max W[F] / W[mu_bar]`, `F = exp(delta0 W[mu_bar])`.
/// `None` when `F` is not integrable for some suite member.
fn required_c1(bars: &[ScalarField], params: &WolffParams, grid: &Grid, delta0: f64) -> Result<Option<f64>> {
    let mut c1: f64 = 0.0;
    for wbar in bars {
        let f = wbar.map(|w| (delta0 * w).exp())?;
        let wf = match wolff_of_field(&f, params, grid) {
            Ok(v) => v,
            Err(Error::NonIntegrable { .. }) => return Ok(None),
            Err(e) => return Err(e),
        };
        let sup = wf.max();
        let ratio = wf.values().iter().zip(wbar.values()).filter(|(_, b)| b.is_finite()).map(|(a, b)| a / b).fold(0.0, f64::max);
        let need = sup.max(ratio);
        if !need.is_finite() {
            return Ok(None);
        }
        c1 = c1.max(need);
    }
    Ok(Some(c1))
}

/// Dyadic search for the potential-lemma constants.
///
/// `C1(delta0)` is nondecreasing in `delta0`. The floor `C1(2^-20)` is the
/// smallest admissible value; the search returns the largest dyadic
/// `delta0 <= 1` whose requirement stays within `c1_growth` times the floor,
/// together with that requirement.
pub fn estimate_constants(suite: &[RadonMeasure], grid: &Grid, params: &WolffParams, c1_growth: f64) -> Result<ConstantEstimate> {
    if suite.is_empty() {
        return Err(invalid("suite", "needs at least one measure"));
    }
    if !(c1_growth >= 1.0) {
        return Err(invalid("c1_growth", "must be at least 1"));
    }
    for m in suite {
        if m.total_mass() > 1.0 + 1e-12 {
            return Err(invalid("suite", format!("measure with total mass {} exceeds the normalization 1", m.total_mass())));
        }
    }
    let bars: Vec<ScalarField> = suite.iter().map(|m| wolff_field(&m.make_bar_mu(1.0, grid)?, params, grid)).collect::<Result<_>>()?;
    let mut evaluated = Vec::new();
    let mut eval = |k: i32| -> Result<Option<f64>> {
        let d = 2f64.powi(-k);
        let c = required_c1(&bars, params, grid, d)?;
        evaluated.push((d, c.unwrap_or(f64::INFINITY)));
        Ok(c)
    };
    let floor = eval(MAX_DYADIC_EXPONENT)?
        .ok_or_else(|| invalid("suite", format!("no delta0 >= 2^-{MAX_DYADIC_EXPONENT} passes; a measure violates the normalization")))?;
    let cap = c1_growth * floor;
    let ok = |c: Option<f64>| c.is_some_and(|c| c <= cap);
    // invariant: `hi` passes; `lo` fails or is out of range
    let (mut lo, mut hi, mut hi_c1) = (-1, MAX_DYADIC_EXPONENT, floor);
    let c0 = eval(0)?;
    if ok(c0) {
        hi = 0;
        hi_c1 = c0.unwrap();
    } else {
        lo = 0;
    }
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        let c = eval(mid)?;
        if ok(c) {
            hi = mid;
            hi_c1 = c.unwrap();
        } else {
            lo = mid;
        }
    }
    evaluated.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(ConstantEstimate { delta0: 2f64.powi(-hi), c1: hi_c1, c1_floor: floor, evaluated })
}

/// `W[H_l(2K W[mu_bar])] <= W[mu_bar]` on `grid`; reports the largest ratio
/// over nodes where `W[mu_bar]` is finite. Passes iff the ratio is at most
/// `1 + tol`.
pub fn check_absorption(
    mu: &RadonMeasure,
    cfg: &IterationConfig,
    grid: &Grid,
    params: &WolffParams,
    tol: f64,
) -> Result<VerificationReport> {
    let m = smallness_m(cfg)?;
    let bar = mu.make_bar_mu(bar_weight(cfg)?, grid)?;
    let wbar = wolff_field(&bar, params, grid)?;
    let inner = h_l_applied(ReactionParams::new(cfg.l)?, &wbar.scaled(2.0 * cfg.k)?)?;
    let left = wolff_of_field(&inner, params, grid)?;
    let (ratio, nodes) = left
        .values()
        .iter()
        .zip(wbar.values())
        .filter(|(_, b)| b.is_finite())
        .fold((0.0f64, 0usize), |(r, n), (a, b)| (r.max(if *a == 0.0 { 0.0 } else { a / b }), n + 1));
    Ok(VerificationReport::new(
        "absorption inequality",
        format!("total mass {}, M = {m}, K = {}, l = {}, p = {}", mu.total_mass(), cfg.k, cfg.l, cfg.p),
        vec![
            Named::new("M", m),
            Named::new("total_mass", mu.total_mass()),
            Named::new("mass_over_M", mu.total_mass() / m),
            Named::new("max_left", left.max_finite()),
            Named::new("min_right", wbar.min()),
            Named::new("nodes", nodes as f64),
        ],
        Named::new("max_ratio", ratio),
        Named::new("one", 1.0),
        tol,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Converged,
    Diverged,
    MaxIterReached,
}

#[derive(Debug, Clone, Serialize)]
pub struct StepRecord {
    pub step: usize,
    /// `max (u_step - u_{step-1})`.
    pub sup_increment: f64,
    /// `min (u_step - u_{step-1})`; monotonicity requires `>= -tol_sup`.
    pub min_increment: f64,
    /// `|| H_l(u_{step-1}) ||_{L^1}`, the reaction that produced `u_step`.
    pub reaction_l1: f64,
    /// `|| H_l(u_{step-1}) - H_l(u_{step-2}) ||_{L^1}`.
    pub reaction_l1_change: f64,
    /// `min (cap + slack - u_step)` over nodes with a finite cap.
    pub cap_margin: f64,
    pub sup_u: f64,
    pub solver_iterations: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct IterationTrace {
    pub outcome: Outcome,
    pub steps: Vec<StepRecord>,
    pub smallness_m: f64,
    pub total_mass: f64,
    pub k: f64,
    pub tol_sup: f64,
    pub cap_slack: f64,
    /// Cap violations are errors only when the mass is within `M`.
    pub cap_enforced: bool,
    pub theorem_regime: bool,
    /// `sup |u_extra - u|` of one additional solve after convergence.
    pub fixed_point_change: Option<f64>,
}

impl IterationTrace {
    pub fn step_count(&self) -> usize {
        self.steps.len()
    }
}

struct Picard<'a> {
    grid: &'a Grid,
    cfg: &'a IterationConfig,
    base_rhs: ScalarField,
    reaction: ReactionParams,
}

impl Picard<'_> {
    fn solve(&self, reaction: Option<&ScalarField>, warm: Option<&ScalarField>) -> Result<(ScalarField, usize)> {
        let rhs = match reaction {
            Some(r) => self.base_rhs.add(r)?,
            None => self.base_rhs.clone(),
        };
        let prob = PdeProblem::with_density(self.grid.clone(), self.cfg.p, rhs)?;
        let mut opts = SolveOptions::new(self.cfg.solve_tol);
        opts.initial = warm.cloned();
        let (u, rep) = solve_plaplace_with(&prob, &opts)?;
        Ok((u, rep.iterations))
    }
}

/// Monotone Picard iteration. `u_0` solves `-Delta_p u_0 = mu`; each step
/// solves `-Delta_p u_{m+1} = H_l(u_m) + mu` and checks monotonicity and
/// the cap `u <= 2K W[mu_bar] + slack`.
pub fn picard_solve(mu: &RadonMeasure, cfg: &IterationConfig, grid: &Grid) -> Result<(ScalarField, IterationTrace)> {
    cfg.validate()?;
    if mu.dim() != cfg.dim || grid.dim() != cfg.dim {
        return Err(Error::DimensionMismatch { expected: cfg.dim, got: mu.dim() });
    }
    let m = smallness_m(cfg)?;
    let params = cfg.wolff_params(grid);
    let bar = mu.make_bar_mu(bar_weight(cfg)?, grid)?;
    let cap = wolff_field(&bar, &params, grid)?.scaled(2.0 * cfg.k)?;
    let slack = cfg.cap_slack * cap.median();
    let cap_enforced = mu.total_mass() <= m * (1.0 + 1e-12);
    let picard = Picard { grid, cfg, base_rhs: mollify_rhs(mu, grid)?, reaction: ReactionParams::new(cfg.l)? };

    let cap_margin = |u: &ScalarField, step: usize| -> Result<f64> {
        let mut worst = f64::INFINITY;
        for (i, (v, c)) in u.values().iter().zip(cap.values()).enumerate() {
            if !c.is_finite() {
                continue;
            }
            let margin = c + slack - v;
            if margin < 0.0 && cap_enforced {
                return Err(Error::CapViolation { step, node: i, value: *v, cap: c + slack });
            }
            worst = worst.min(margin);
        }
        Ok(worst)
    };

    let (mut u, _) = picard.solve(None, None)?;
    let tol_sup = cfg.tol_sup.unwrap_or(1e-8 * (1.0 + u.max()));
    cap_margin(&u, 0)?;
    let mut steps = Vec::new();
    let mut reaction = h_l_applied(picard.reaction, &u)?;
    let initial_l1 = reaction.integral();
    let mut previous: Option<ScalarField> = None;
    let mut outcome = Outcome::MaxIterReached;
    for step in 1..=cfg.max_iter {
        let reaction_l1 = reaction.integral();
        let reaction_l1_change = match &previous {
            Some(prev) => l1_distance(&reaction, prev),
            None => reaction_l1,
        };
        if !reaction_l1.is_finite() || reaction_l1 > cfg.blowup_factor * initial_l1.max(f64::MIN_POSITIVE) {
            outcome = Outcome::Diverged;
            break;
        }
        let (next, iters) = match picard.solve(Some(&reaction), Some(&u)) {
            Ok(v) => v,
            Err(Error::NoConvergence { .. }) if !cap_enforced => {
                // outside the small-mass regime a failing inner solve means
                // the iterates have left the range the solver can follow
                outcome = Outcome::Diverged;
                break;
            }
            Err(e) => return Err(e),
        };
        let (sup_inc, min_inc, min_node) = increments(&next, &u);
        if min_inc < -tol_sup {
            return Err(Error::MonotonicityViolation { step, node: min_node, decrease: -min_inc });
        }
        let margin = cap_margin(&next, step)?;
        steps.push(StepRecord {
            step,
            sup_increment: sup_inc,
            min_increment: min_inc,
            reaction_l1,
            reaction_l1_change,
            cap_margin: margin,
            sup_u: next.max(),
            solver_iterations: iters,
        });
        u = next;
        let new_reaction = h_l_applied(picard.reaction, &u)?;
        previous = Some(std::mem::replace(&mut reaction, new_reaction));
        if sup_inc < tol_sup {
            outcome = Outcome::Converged;
            break;
        }
    }
    let fixed_point_change = if outcome == Outcome::Converged {
        let (extra, _) = picard.solve(Some(&reaction), Some(&u))?;
        Some(extra.values().iter().zip(u.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
    } else {
        None
    };
    let trace = IterationTrace {
        outcome,
        steps,
        smallness_m: m,
        total_mass: mu.total_mass(),
        k: cfg.k,
        tol_sup,
        cap_slack: slack,
        cap_enforced,
        theorem_regime: cfg.theorem_regime(),
        fixed_point_change,
    };
    Ok((u, trace))
}

fn l1_distance(a: &ScalarField, b: &ScalarField) -> f64 {
    let g = a.grid();
    a.values().iter().zip(b.values()).enumerate().map(|(i, (x, y))| if x == y { 0.0 } else { (x - y).abs() * g.dual_volume(i) }).sum()
}

/// `(max, min, argmin)` of `next - prev`.
fn increments(next: &ScalarField, prev: &ScalarField) -> (f64, f64, usize) {
    let mut sup = f64::NEG_INFINITY;
    let mut inf = f64::INFINITY;
    let mut arg = 0;
    for (i, (a, b)) in next.values().iter().zip(prev.values()).enumerate() {
        let d = a - b;
        sup = sup.max(d);
        if d < inf {
            inf = d;
            arg = i;
        }
    }
    (sup, inf, arg)
}

#[derive(Debug, Clone, Serialize)]
pub struct HessianFit {
    pub k2: f64,
    pub b: f64,
    /// Mean of `2 K2 W + b - u` over the fitted nodes.
    pub mean_gap: f64,
    pub nodes: usize,
}

/// Empirical `(K2, b)` in `u <= 2 K2 W[mu] + b` for the `k = 1` Hessian
/// potential `W_{1,2}` truncated at `2 diam`, over interior nodes outside
/// `exclusion` from atoms.
///
/// Among all valid pairs with `K2, b >= 0` this picks the one with the
/// smallest mean gap `2 K2 mean(W) + b - mean(u)`; the gap is convex in
/// `K2`, so a golden-section search over `K2` finds it.
pub fn fit_hessian_constants(u: &ScalarField, mu: &RadonMeasure, exclusion: f64) -> Result<HessianFit> {
    let grid = u.grid();
    let w = wolff_field(mu, &WolffParams::hessian(1.0, 2.0 * grid.cuboid().diameter()), grid)?;
    let nodes: Vec<usize> = (0..grid.node_count()).filter(|&i| is_regular_node(grid, mu, i, exclusion)).collect();
    if nodes.is_empty() {
        return Err(invalid("exclusion", "no nodes left to fit"));
    }
    let pts: Vec<(f64, f64)> = nodes.iter().map(|&i| (w.values()[i], u.values()[i])).collect();
    let n = pts.len() as f64;
    let mean_w = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_u = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let offset = |k2: f64| pts.par_iter().map(|(w, u)| u - 2.0 * k2 * w).reduce(|| f64::NEG_INFINITY, f64::max).max(0.0);
    let gap = |k2: f64| 2.0 * k2 * mean_w + offset(k2) - mean_u;
    // beyond this slope the offset is zero and the gap only grows
    let k_max = pts.iter().filter(|p| p.0 > 0.0).map(|p| p.1 / (2.0 * p.0)).fold(0.0, f64::max);
    let (mut a, mut b) = (0.0, k_max);
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let (mut gc, mut gd) = (gap(c), gap(d));
    for _ in 0..200 {
        if (b - a) <= 1e-12 * k_max.max(1e-300) {
            break;
        }
        if gc <= gd {
            b = d;
            d = c;
            gd = gc;
            c = b - phi * (b - a);
            gc = gap(c);
        } else {
            a = c;
            c = d;
            gc = gd;
            d = a + phi * (b - a);
            gd = gap(d);
        }
    }
    let k2 = 0.5 * (a + b);
    Ok(HessianFit { k2, b: offset(k2), mean_gap: gap(k2), nodes: nodes.len() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::{Cuboid, Point};

    fn worked_example() -> IterationConfig {
        IterationConfig::new(2, 2.0, 2, 2.0, 0.1, 3.0)
    }

    #[test]
    fn smallness_worked_example() {
        let m = smallness_m(&worked_example()).unwrap();
        assert!((m - 3.90625e-7).abs() < 1e-20);
        let mut unit = worked_example();
        unit.delta0 = 4.0;
        unit.c1 = 1.0;
        assert_eq!(smallness_m(&unit).unwrap(), 1.0);
        let mut bad = worked_example();
        bad.l = 1;
        assert!(smallness_m(&bad).is_err());
    }

    #[test]
    fn config_validation() {
        let mut c = IterationConfig::new(3, 3.0, 3, 1.0, 0.1, 2.0);
        assert!(c.validate().is_ok());
        assert!(c.theorem_regime());
        c.l = 2;
        assert!(c.validate().is_err());
        c.p = 2.5;
        assert!(c.validate().is_ok());
        assert!(!c.theorem_regime());
        c.p = 3.5;
        assert!(c.validate().is_err());
    }

    #[test]
    fn zero_measure_is_a_fixed_point() {
        let g = Grid::uniform(Cuboid::unit(2).unwrap(), 16).unwrap();
        let (u, trace) = picard_solve(&RadonMeasure::zero(2), &worked_example(), &g).unwrap();
        assert!(u.values().iter().all(|v| *v == 0.0));
        assert_eq!(trace.outcome, Outcome::Converged);
        assert_eq!(trace.step_count(), 1);
        assert_eq!(trace.fixed_point_change, Some(0.0));
    }

    #[test]
    fn hessian_fit_recovers_an_exact_envelope() {
        let g = Grid::uniform(Cuboid::unit(2).unwrap(), 16).unwrap();
        let mu = RadonMeasure::dirac(Point::new([0.5, 0.5]), 1.0).unwrap();
        let w = wolff_field(&mu, &WolffParams::hessian(1.0, 2.0 * g.cuboid().diameter()), &g).unwrap();
        // u = 0.3 W + 0.05 is its own tightest envelope
        let u = w.map(|v| if v.is_finite() { 0.3 * v + 0.05 } else { 0.0 }).unwrap();
        let fit = fit_hessian_constants(&u, &mu, 0.1).unwrap();
        assert!((fit.k2 - 0.15).abs() < 1e-6, "{fit:?}");
        assert!((fit.b - 0.05).abs() < 1e-6);
        assert!(fit.mean_gap.abs() < 1e-6);
    }
}
