//! Flat `key = value` run configuration with `#` comments.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Wolff,
    Solve,
    Iterate,
    Verify,
    Constants,
    Sweep,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Check {
    Weak11,
    BrezisMerle,
    Absorption,
    Sandwich,
}

/// Truncation radius, either explicit or twice the box diameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Truncation {
    TwiceDiameter,
    Value(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Constant {
    Auto,
    Value(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kernel {
    /// `W_{1,p}`
    PLaplace,
    /// `W_{N/p,p}`
    Critical,
    /// `W_{2k/(k+1),k+1}`
    Hessian,
    /// explicit `alpha`, `s`
    Custom,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub command: Command,
    pub dim: usize,
    pub p: f64,
    pub l: u32,
    pub cells: Vec<usize>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub truncation: Truncation,
    pub kernel: Kernel,
    pub alpha: Option<f64>,
    pub s: Option<f64>,
    pub hessian_k: f64,
    /// Measure file, relative paths resolved against the config file.
    pub measure: Option<PathBuf>,
    /// Rescale the measure to this total mass.
    pub mass: Option<f64>,
    /// Rescale the measure to this multiple of the smallness constant.
    pub mass_factor: Option<f64>,
    pub sweep_factors: Vec<f64>,
    pub delta0: Constant,
    pub c1: Constant,
    pub k: Constant,
    pub c1_growth: f64,
    pub suite_size: usize,
    pub check: Option<Check>,
    pub lambdas: Vec<f64>,
    pub deltas: Vec<f64>,
    pub bound: Option<f64>,
    pub tolerance: f64,
    pub exclusion: Option<f64>,
    pub solve_tol: f64,
    pub max_iter: usize,
    pub cap_slack: f64,
    pub blowup_factor: f64,
    pub tol_sup: Option<f64>,
    pub bar_unit: bool,
    pub probes: Vec<Vec<f64>>,
    pub write_fields: bool,
    #[serde(skip)]
    pub out: Option<PathBuf>,
    pub seed: u64,
}

const KEYS: &[&str] = &[
    "command",
    "dim",
    "p",
    "l",
    "cells",
    "lo",
    "hi",
    "truncation",
    "kernel",
    "alpha",
    "s",
    "hessian_k",
    "measure",
    "mass",
    "mass_factor",
    "sweep_factors",
    "delta0",
    "c1",
    "k",
    "c1_growth",
    "suite_size",
    "check",
    "lambdas",
    "deltas",
    "bound",
    "tolerance",
    "exclusion",
    "solve_tol",
    "max_iter",
    "cap_slack",
    "blowup_factor",
    "tol_sup",
    "bar_scale",
    "probe",
    "write_fields",
    "out",
    "seed",
];

fn bad(key: &str, reason: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("key `{key}`: {reason}"))
}

/// Raw entries; `probe` may repeat, every other key may appear once.
struct Entries {
    map: BTreeMap<String, String>,
    probes: Vec<String>,
}

fn tokenize(text: &str) -> Result<Entries, CliError> {
    let mut map = BTreeMap::new();
    let mut probes = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| CliError::Config(format!("line {}: expected `key = value`", i + 1)))?;
        let (k, v) = (k.trim().to_string(), v.trim().to_string());
        if !KEYS.contains(&k.as_str()) {
            return Err(CliError::Config(format!("line {}: unknown key `{k}`", i + 1)));
        }
        if k == "probe" {
            probes.push(v);
        } else if map.insert(k.clone(), v).is_some() {
            return Err(CliError::Config(format!("line {}: duplicate key `{k}`", i + 1)));
        }
    }
    Ok(Entries { map, probes })
}

impl Entries {
    fn get(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(|s| s.as_str())
    }

    fn num<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T, CliError> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| bad(key, format!("cannot parse `{v}`"))),
        }
    }

    fn opt_num(&self, key: &str) -> Result<Option<f64>, CliError> {
        self.get(key).map(|v| v.parse().map_err(|_| bad(key, format!("cannot parse `{v}`")))).transpose()
    }

    fn list<T: std::str::FromStr>(&self, key: &str) -> Result<Option<Vec<T>>, CliError> {
        self.get(key).map(|v| parse_list(key, v)).transpose()
    }

    fn constant(&self, key: &str) -> Result<Constant, CliError> {
        match self.get(key) {
            None | Some("auto") => Ok(Constant::Auto),
            Some(v) => {
                let x: f64 = v.parse().map_err(|_| bad(key, format!("expected a number or `auto`, got `{v}`")))?;
                if !(x > 0.0 && x.is_finite()) {
                    return Err(bad(key, "must be positive and finite"));
                }
                Ok(Constant::Value(x))
            }
        }
    }
}

fn parse_list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>, CliError> {
    v.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| t.parse().map_err(|_| bad(key, format!("cannot parse `{t}`"))))
        .collect()
}

fn positive(key: &str, v: f64) -> Result<f64, CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(bad(key, format!("must be positive and finite, got {v}")))
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::parse(&text, base)
    }

    pub fn parse(text: &str, base: &Path) -> Result<Self, CliError> {
        let e = tokenize(text)?;
        let command = match e.get("command") {
            Some("wolff") => Command::Wolff,
            Some("solve") => Command::Solve,
            Some("iterate") => Command::Iterate,
            Some("verify") => Command::Verify,
            Some("constants") => Command::Constants,
            Some("sweep") => Command::Sweep,
            Some(other) => return Err(bad("command", format!("unknown command `{other}`"))),
            None => return Err(bad("command", "missing")),
        };
        let dim: usize = e.num("dim", 2)?;
        if dim == 0 {
            return Err(bad("dim", "must be at least 1"));
        }
        let p = positive("p", e.num("p", dim as f64)?)?;
        if !(p > 1.0) {
            return Err(bad("p", "must exceed 1"));
        }
        let l: u32 = e.num("l", dim as u32)?;
        if l == 0 {
            return Err(bad("l", "must be at least 1"));
        }
        let mut cells: Vec<usize> = e.list("cells")?.unwrap_or_else(|| vec![64]);
        if cells.len() == 1 {
            cells = vec![cells[0]; dim];
        }
        if cells.len() != dim || cells.contains(&0) {
            return Err(bad("cells", format!("need one or {dim} positive counts")));
        }
        let lo = e.list("lo")?.unwrap_or_else(|| vec![0.0; dim]);
        let hi = e.list("hi")?.unwrap_or_else(|| vec![1.0; dim]);
        if lo.len() != dim {
            return Err(bad("lo", format!("need {dim} coordinates")));
        }
        if hi.len() != dim {
            return Err(bad("hi", format!("need {dim} coordinates")));
        }
        if lo.iter().zip(&hi).any(|(a, b)| !(a < b)) {
            return Err(bad("hi", "must exceed `lo` componentwise"));
        }
        let truncation = match e.get("truncation") {
            None | Some("2diam") => Truncation::TwiceDiameter,
            Some(v) => Truncation::Value(positive("truncation", v.parse().map_err(|_| bad("truncation", format!("cannot parse `{v}`")))?)?),
        };
        let kernel = match e.get("kernel") {
            None | Some("p-laplace") => Kernel::PLaplace,
            Some("critical") => Kernel::Critical,
            Some("hessian") => Kernel::Hessian,
            Some("custom") => Kernel::Custom,
            Some(v) => return Err(bad("kernel", format!("unknown kernel `{v}`"))),
        };
        let alpha = e.opt_num("alpha")?;
        let s = e.opt_num("s")?;
        if kernel == Kernel::Custom && (alpha.is_none() || s.is_none()) {
            return Err(bad("kernel", "`custom` needs `alpha` and `s`"));
        }
        let check = match e.get("check") {
            None => None,
            Some("weak11") => Some(Check::Weak11),
            Some("brezis-merle") => Some(Check::BrezisMerle),
            Some("absorption") => Some(Check::Absorption),
            Some("sandwich") => Some(Check::Sandwich),
            Some(v) => return Err(bad("check", format!("unknown check `{v}`"))),
        };
        if command == Command::Verify && check.is_none() {
            return Err(bad("check", "required by `verify`"));
        }
        let mass = e.opt_num("mass")?.map(|m| if m == 0.0 { Ok(0.0) } else { positive("mass", m) }).transpose()?;
        let mass_factor = e.opt_num("mass_factor")?.map(|m| positive("mass_factor", m)).transpose()?;
        if mass.is_some() && mass_factor.is_some() {
            return Err(bad("mass_factor", "conflicts with `mass`"));
        }
        let sweep_factors = e.list("sweep_factors")?.unwrap_or_else(|| vec![0.25, 0.5, 1.0, 2.0, 10.0]);
        for f in &sweep_factors {
            positive("sweep_factors", *f)?;
        }
        let lambdas = e.list("lambdas")?.unwrap_or_else(|| vec![2.0, 20.0, 200.0, 2000.0]);
        let deltas = e.list("deltas")?.unwrap_or_else(|| vec![0.5, 0.25, 0.1]);
        let probes = e.probes.iter().map(|v| parse_list::<f64>("probe", v)).collect::<Result<Vec<_>, _>>()?;
        if probes.iter().any(|p| p.len() != dim) {
            return Err(bad("probe", format!("need {dim} coordinates")));
        }
        let bar_unit = match e.get("bar_scale") {
            None | Some("smallness") => false,
            Some("unit") => true,
            Some(v) => return Err(bad("bar_scale", format!("expected `smallness` or `unit`, got `{v}`"))),
        };
        let write_fields = match e.get("write_fields") {
            None | Some("true") => true,
            Some("false") => false,
            Some(v) => return Err(bad("write_fields", format!("expected true or false, got `{v}`"))),
        };
        Ok(RunConfig {
            command,
            dim,
            p,
            l,
            cells,
            lo,
            hi,
            truncation,
            kernel,
            alpha,
            s,
            hessian_k: positive("hessian_k", e.num("hessian_k", 1.0)?)?,
            measure: e.get("measure").filter(|v| *v != "none").map(|v| base.join(v)),
            mass,
            mass_factor,
            sweep_factors,
            delta0: e.constant("delta0")?,
            c1: e.constant("c1")?,
            k: e.constant("k")?,
            c1_growth: {
                let g = e.num("c1_growth", 2.0)?;
                if !(g >= 1.0) {
                    return Err(bad("c1_growth", "must be at least 1"));
                }
                g
            },
            suite_size: e.num("suite_size", 4)?,
            check,
            lambdas,
            deltas,
            bound: e.opt_num("bound")?,
            tolerance: e.num("tolerance", 0.05)?,
            exclusion: e.opt_num("exclusion")?.map(|v| positive("exclusion", v)).transpose()?,
            solve_tol: positive("solve_tol", e.num("solve_tol", 1e-11)?)?,
            max_iter: e.num("max_iter", 200)?,
            cap_slack: e.num("cap_slack", 0.1)?,
            blowup_factor: positive("blowup_factor", e.num("blowup_factor", 1e6)?)?,
            tol_sup: e.opt_num("tol_sup")?,
            bar_unit,
            probes,
            write_fields,
            out: e.get("out").map(|v| base.join(v)),
            seed: e.num("seed", 0)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_defaults_and_comments() {
        let c = RunConfig::parse("# run\ncommand = wolff  # trailing\ncells = 32\nprobe = 0.5 0\nprobe = 0.25, 0.25\n", Path::new("/tmp"))
            .unwrap();
        assert_eq!(c.command, Command::Wolff);
        assert_eq!(c.cells, vec![32, 32]);
        assert_eq!(c.p, 2.0);
        assert_eq!(c.truncation, Truncation::TwiceDiameter);
        assert_eq!(c.probes.len(), 2);
        assert_eq!(c.k, Constant::Auto);
    }

    #[test]
    fn errors_name_the_key() {
        let err = |t: &str| RunConfig::parse(t, Path::new(".")).unwrap_err().to_string();
        assert!(err("command = wolff\np = 0.5").contains("`p`"));
        assert!(err("command = fly").contains("`command`"));
        assert!(err("command = wolff\nbogus = 1").contains("`bogus`"));
        assert!(err("command = wolff\np = 2\np = 3").contains("duplicate"));
        assert!(err("command = verify").contains("`check`"));
        assert!(err("command = wolff\nlo = 0 0\nhi = 1 0").contains("`hi`"));
        assert!(err("command = iterate\nk = -1").contains("`k`"));
    }
}
