//! Command dispatch and run artifacts.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use nlpot::iterate::{
    calibrate_k, check_absorption, estimate_constants, picard_solve, smallness_m, BarScale, IterationConfig, IterationTrace, Outcome,
};
use nlpot::measure::io::read_measure;
use nlpot::pde::{check_wolff_sandwich_with, default_exclusion, solve_plaplace_with, PdeProblem, SolveOptions};
use nlpot::potential::io::{write_field_csv, FieldMeta};
use nlpot::verify::{verify_brezis_merle, verify_weak11, BrezisMerleOptions, Region};
use nlpot::{wolff_field, Cuboid, Grid, Point, RadonMeasure, ScalarField, VerificationReport, WolffParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{Check, Command, Constant, Kernel, RunConfig, Truncation};
use crate::error::CliError;

/// One run directory: `summary.json`, `trace.jsonl`, `fields/`.
pub struct Artifacts {
    dir: PathBuf,
    write_fields: bool,
}

impl Artifacts {
    pub fn create(dir: &Path, write_fields: bool) -> Result<Self, CliError> {
        fs::create_dir_all(dir)?;
        Ok(Artifacts { dir: dir.to_path_buf(), write_fields })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn write_json(&self, name: &str, v: &Value) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(v).map_err(|e| CliError::Output(e.into()))?;
        text.push('\n');
        fs::write(self.dir.join(name), text)?;
        Ok(())
    }

    fn write_trace<T: Serialize>(&self, rows: &[T]) -> Result<(), CliError> {
        let mut f = fs::File::create(self.dir.join("trace.jsonl"))?;
        for r in rows {
            writeln!(f, "{}", serde_json::to_string(r).map_err(|e| CliError::Output(e.into()))?)?;
        }
        Ok(())
    }

    fn write_field(&self, name: &str, f: &ScalarField, params: Option<WolffParams>, method: &str) -> Result<(), CliError> {
        if !self.write_fields {
            return Ok(());
        }
        let dir = self.dir.join("fields");
        fs::create_dir_all(&dir)?;
        write_field_csv(f, &dir.join(format!("{name}.csv")))?;
        let meta = serde_json::to_value(FieldMeta::describe(name, f, params, method)).map_err(|e| CliError::Output(e.into()))?;
        self.write_json(&format!("fields/{name}.json"), &meta)
    }
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).unwrap_or(Value::Null)
}

pub fn grid(cfg: &RunConfig) -> Result<Grid, CliError> {
    Ok(Grid::new(Cuboid::new(Point::new(cfg.lo.clone()), Point::new(cfg.hi.clone()))?, cfg.cells.clone())?)
}

fn truncation(cfg: &RunConfig, grid: &Grid) -> f64 {
    match cfg.truncation {
        Truncation::TwiceDiameter => 2.0 * grid.cuboid().diameter(),
        Truncation::Value(t) => t,
    }
}

pub fn wolff_params(cfg: &RunConfig, grid: &Grid) -> Result<WolffParams, CliError> {
    let t = truncation(cfg, grid);
    let params = match cfg.kernel {
        Kernel::PLaplace => WolffParams::p_laplace(cfg.p, t),
        Kernel::Critical => WolffParams::critical(cfg.dim, cfg.p, t),
        Kernel::Hessian => WolffParams::hessian(cfg.hessian_k, t),
        Kernel::Custom => WolffParams::new(cfg.alpha.unwrap_or(1.0), cfg.s.unwrap_or(cfg.p), t),
    };
    params.validate(cfg.dim)?;
    Ok(params)
}

/// The measure as read from file, or zero.
fn raw_measure(cfg: &RunConfig, grid: &Grid) -> Result<RadonMeasure, CliError> {
    match &cfg.measure {
        Some(path) => {
            if !path.exists() {
                return Err(CliError::Config(format!("key `measure`: file {} not found", path.display())));
            }
            Ok(read_measure(path, cfg.dim, Some(grid))?)
        }
        None => Ok(RadonMeasure::zero(cfg.dim)),
    }
}

fn rescaled(m: &RadonMeasure, total: f64, key: &str) -> Result<RadonMeasure, CliError> {
    if total == 0.0 {
        return Ok(RadonMeasure::zero(m.dim()));
    }
    if m.is_zero() {
        return Err(CliError::Config(format!("key `{key}`: cannot rescale the zero measure")));
    }
    Ok(m.scaled(total / m.total_mass())?)
}

/// Measure with `mass` applied (`mass_factor` needs the smallness constant
/// and is handled by the iteration commands).
fn measure(cfg: &RunConfig, grid: &Grid) -> Result<RadonMeasure, CliError> {
    let m = raw_measure(cfg, grid)?;
    match cfg.mass {
        Some(total) => rescaled(&m, total, "mass"),
        None => Ok(m),
    }
}

/// Random atomic measures of total mass at most one inside the middle 80% of
/// the box.
fn random_suite(grid: &Grid, count: usize, seed: u64) -> Result<Vec<RadonMeasure>, CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = grid.cuboid();
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let atoms = rng.gen_range(1..4);
        let mut m = RadonMeasure::zero(grid.dim());
        for _ in 0..atoms {
            let x: Vec<f64> = (0..grid.dim()).map(|a| c.lo().coords()[a] + c.side(a) * rng.gen_range(0.1..0.9)).collect();
            m = m.with_atom(Point::new(x), rng.gen_range(0.05..1.0) / atoms as f64)?;
        }
        out.push(m);
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
struct Constants {
    k: f64,
    delta0: f64,
    c1: f64,
    k_source: &'static str,
    delta0_c1_source: &'static str,
    c1_floor: Option<f64>,
    evaluated: Option<Vec<(f64, f64)>>,
}

fn resolve_constants(cfg: &RunConfig, grid: &Grid, shape: &RadonMeasure) -> Result<Constants, CliError> {
    let unit_shape = if shape.is_zero() { None } else { Some(shape.scaled(1.0 / shape.total_mass())?) };
    let (k, k_source) = match cfg.k {
        Constant::Value(k) => (k, "config"),
        Constant::Auto => {
            let centre = RadonMeasure::dirac(grid.cuboid().center(), 1.0)?;
            let suite = [unit_shape.clone().unwrap_or(centre)];
            (calibrate_k(&suite, grid, cfg.p)?, "calibrated")
        }
    };
    let base = IterationConfig::new(cfg.dim, cfg.p, cfg.l, k, 1.0, 1.0);
    match (cfg.delta0, cfg.c1) {
        (Constant::Value(d), Constant::Value(c)) => {
            Ok(Constants { k, delta0: d, c1: c, k_source, delta0_c1_source: "config", c1_floor: None, evaluated: None })
        }
        (d, c) => {
            let mut suite = random_suite(grid, cfg.suite_size, cfg.seed)?;
            suite.extend(unit_shape);
            if suite.is_empty() {
                return Err(CliError::Config("key `suite_size`: auto constants need a nonempty suite".into()));
            }
            let est = estimate_constants(&suite, grid, &base.wolff_params(grid), cfg.c1_growth)?;
            Ok(Constants {
                k,
                delta0: if let Constant::Value(v) = d { v } else { est.delta0 },
                c1: if let Constant::Value(v) = c { v } else { est.c1 },
                k_source,
                delta0_c1_source: "estimated",
                c1_floor: Some(est.c1_floor),
                evaluated: Some(est.evaluated),
            })
        }
    }
}

fn iteration_config(cfg: &RunConfig, c: &Constants) -> Result<IterationConfig, CliError> {
    let mut it = IterationConfig::new(cfg.dim, cfg.p, cfg.l, c.k, c.delta0, c.c1);
    it.max_iter = cfg.max_iter;
    it.tol_sup = cfg.tol_sup;
    it.blowup_factor = cfg.blowup_factor;
    it.cap_slack = cfg.cap_slack;
    it.solve_tol = cfg.solve_tol;
    it.bar_scale = if cfg.bar_unit { BarScale::Unit } else { BarScale::Smallness };
    it.validate()?;
    Ok(it)
}

/// Measure for the iteration commands, honouring `mass_factor`.
fn iteration_measure(shape: &RadonMeasure, m: f64, factor: Option<f64>) -> Result<RadonMeasure, CliError> {
    match factor {
        Some(f) => rescaled(shape, f * m, "mass_factor"),
        None => Ok(shape.clone()),
    }
}

fn probe_values(f: &ScalarField, probes: &[Vec<f64>]) -> Value {
    let g = f.grid();
    Value::Array(
        probes
            .iter()
            .map(|x| {
                let i = g.nearest_node(x);
                json!({ "probe": x, "node": g.node_point(i).coords(), "value": finite_or_str(f.values()[i]) })
            })
            .collect(),
    )
}

fn finite_or_str(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        json!(nlpot::potential::io::format_value(v))
    }
}

/// `(mass factor, run summary, failure)` of one sweep member.
type SweepRow = (f64, Value, Option<String>);

/// Result of one command: the summary and whether every asserted invariant
/// held.
pub struct RunResult {
    pub summary: Value,
    pub failure: Option<String>,
}

pub fn run(cfg: &RunConfig, art: &Artifacts) -> Result<RunResult, CliError> {
    let grid = grid(cfg)?;
    let mut summary = json!({ "command": cfg.command, "config": to_value(cfg) });
    let failure = match cfg.command {
        Command::Wolff => {
            let m = measure(cfg, &grid)?;
            let params = wolff_params(cfg, &grid)?;
            let w = wolff_field(&m, &params, &grid)?;
            art.write_field("wolff", &w, Some(params), "exact piecewise radial integration")?;
            summary["result"] = json!({
                "params": to_value(&params),
                "total_mass": m.total_mass(),
                "max_finite": finite_or_str(w.max_finite()),
                "infinite_nodes": w.values().iter().filter(|v| v.is_infinite()).count(),
                "probes": probe_values(&w, &cfg.probes),
            });
            None
        }
        Command::Solve => {
            let m = measure(cfg, &grid)?;
            let prob = PdeProblem::with_measure(grid.clone(), cfg.p, m)?;
            let (u, report) = solve_plaplace_with(&prob, &SolveOptions::new(cfg.solve_tol))?;
            art.write_field("u", &u, None, report.method)?;
            summary["result"] = json!({ "solve": to_value(&report), "max": u.max(), "probes": probe_values(&u, &cfg.probes) });
            None
        }
        Command::Constants => {
            let shape = measure(cfg, &grid)?;
            let c = resolve_constants(cfg, &grid, &shape)?;
            let it = iteration_config(cfg, &c)?;
            summary["result"] = json!({ "constants": to_value(&c), "smallness_m": smallness_m(&it)? });
            None
        }
        Command::Iterate => {
            let shape = measure(cfg, &grid)?;
            let c = resolve_constants(cfg, &grid, &shape)?;
            let it = iteration_config(cfg, &c)?;
            let m = smallness_m(&it)?;
            let mu = iteration_measure(&shape, m, cfg.mass_factor)?;
            summary["constants"] = to_value(&c);
            let (result, failure) = iterate_once(&mu, &it, &grid, art)?;
            summary["result"] = result;
            failure
        }
        Command::Sweep => {
            let shape = measure(cfg, &grid)?;
            if shape.is_zero() {
                return Err(CliError::Config("key `measure`: sweep needs a nonzero measure".into()));
            }
            let c = resolve_constants(cfg, &grid, &shape)?;
            let it = iteration_config(cfg, &c)?;
            let m = smallness_m(&it)?;
            summary["constants"] = to_value(&c);
            summary["smallness_m"] = json!(m);
            let runs: Vec<Result<SweepRow, CliError>> = cfg
                .sweep_factors
                .par_iter()
                .enumerate()
                .map(|(i, &f)| {
                    let sub = Artifacts::create(&art.dir().join(format!("run_{i:02}")), art.write_fields)?;
                    let mu = rescaled(&shape, f * m, "sweep_factors")?;
                    let (result, failure) = iterate_once(&mu, &it, &grid, &sub)?;
                    let mut s = json!({ "mass_factor": f, "result": result.clone() });
                    if let Some(msg) = &failure {
                        s["failure"] = json!(msg);
                    }
                    sub.write_json("summary.json", &s)?;
                    Ok((f, result, failure))
                })
                .collect();
            let mut rows = Vec::new();
            let mut failures = Vec::new();
            for r in runs {
                let (f, result, failure) = r?;
                if let Some(msg) = failure {
                    failures.push(format!("factor {f}: {msg}"));
                }
                rows.push(json!({ "mass_factor": f, "outcome": result["outcome"], "steps": result["steps"] }));
            }
            // converged counts over increasing mass, recorded only
            let mut order: Vec<usize> = (0..rows.len()).collect();
            order.sort_by(|&a, &b| cfg.sweep_factors[a].total_cmp(&cfg.sweep_factors[b]));
            let converged: Vec<bool> = order.iter().map(|&i| rows[i]["outcome"] == json!("converged")).collect();
            let monotone = converged.windows(2).all(|w| w[0] >= w[1]);
            summary["result"] =
                json!({ "runs": rows, "converged_count": converged.iter().filter(|c| **c).count(), "converged_monotone": monotone });
            (!failures.is_empty()).then(|| failures.join("; "))
        }
        Command::Verify => {
            let report = verify(cfg, &grid, &mut summary)?;
            let failure =
                (!report.passed).then(|| format!("{}: {} = {} exceeds bound", report.lemma, report.checked.name, report.checked.value));
            summary["result"] = to_value(&report);
            failure
        }
    };
    summary["status"] = json!(if failure.is_some() { "invariant_violation" } else { "ok" });
    Ok(RunResult { summary, failure })
}

/// One Picard run; cap and monotonicity violations become a recorded
/// failure instead of an early return so the summary is still written.
fn iterate_once(mu: &RadonMeasure, it: &IterationConfig, grid: &Grid, art: &Artifacts) -> Result<(Value, Option<String>), CliError> {
    match picard_solve(mu, it, grid) {
        Ok((u, trace)) => {
            art.write_trace(&trace.steps)?;
            art.write_field("u", &u, None, "monotone Picard iteration")?;
            Ok((trace_summary(&trace, &u), None))
        }
        Err(e @ (nlpot::Error::CapViolation { .. } | nlpot::Error::MonotonicityViolation { .. })) => {
            art.write_trace::<()>(&[])?;
            Ok((json!({ "outcome": "invariant_violation", "total_mass": mu.total_mass(), "error": e.to_string() }), Some(e.to_string())))
        }
        Err(e) => Err(e.into()),
    }
}

fn trace_summary(trace: &IterationTrace, u: &ScalarField) -> Value {
    let mut v = to_value(trace);
    if let Value::Object(map) = &mut v {
        map.remove("steps");
    }
    v["steps"] = json!(trace.step_count());
    v["sup_u"] = finite_or_str(u.max());
    v["converged"] = json!(trace.outcome == Outcome::Converged);
    v
}

fn verify(cfg: &RunConfig, grid: &Grid, summary: &mut Value) -> Result<VerificationReport, CliError> {
    let check = cfg.check.expect("validated at parse time");
    match check {
        Check::Weak11 => Ok(verify_weak11(&measure(cfg, grid)?, grid, &cfg.lambdas, cfg.bound, cfg.tolerance)?),
        Check::BrezisMerle => {
            let opts = BrezisMerleOptions { region: Region::Grid, bound: cfg.bound, tol: cfg.tolerance };
            Ok(verify_brezis_merle(&measure(cfg, grid)?, grid.cuboid(), grid, cfg.p, &cfg.deltas, &opts)?)
        }
        Check::Absorption => {
            let shape = measure(cfg, grid)?;
            let c = resolve_constants(cfg, grid, &shape)?;
            let it = iteration_config(cfg, &c)?;
            let mu = iteration_measure(&shape, smallness_m(&it)?, cfg.mass_factor)?;
            summary["constants"] = to_value(&c);
            Ok(check_absorption(&mu, &it, grid, &it.wolff_params(grid), cfg.tolerance)?)
        }
        Check::Sandwich => {
            let m = measure(cfg, grid)?;
            let prob = PdeProblem::with_measure(grid.clone(), cfg.p, m.clone())?;
            let (u, _) = solve_plaplace_with(&prob, &SolveOptions::new(cfg.solve_tol))?;
            let exclusion = cfg.exclusion.unwrap_or_else(|| default_exclusion(grid));
            Ok(check_wolff_sandwich_with(&u, &m, cfg.p, exclusion, cfg.bound)?)
        }
    }
}
