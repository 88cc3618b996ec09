//! Config parsing and the `plaplace` command-line driver.
//!
//! Configs are UTF-8 text with one `key = value` pair per line; `#` starts a
//! comment. Unknown keys are errors.
//!
//! | key | value |
//! |-----|-------|
//! | `command` | `evolve`, `continuity`, `mosco` or `diagonal` |
//! | `cells` | `N` (1D) or `NX, NY` (2D); not used by `diagonal` |
//! | `length` | side lengths, default 1 |
//! | `bc` | `dirichlet` or `neumann`, required with `cells` |
//! | `p` | exponent for `evolve` |
//! | `T`, `steps` | time horizon and number of steps |
//! | `max_iters`, `gap_tol`, `primal_step`, `dual_step` | resolvent iteration |
//! | `initial` | data rule, see below |
//! | `forcing` | data rule, constant in time, or `table PATH` |
//! | `output` | output directory, overridden by `--out` |
//! | `seed` | seed for the `noise` rule and for randomized probes |
//! | `p0`, `p_seq` | reference exponent and sequence (list or `dyadic N` for `p0 + 2^-n`) |
//! | `x0_rule`, `perturbation` | `fixed`, or `perturbed` with `x_n = x0 + |p_n - p0| perturbation` |
//! | `tol_abs`, `ratio_min` | continuity verdict thresholds |
//! | `trials`, `samples` | lower-limit falsification size |
//! | `table`, `eps` | diagonal table (`harmonic R C` or `file PATH`) and schedule (`harmonic`, `constant e` or a list) |
//!
//! Data rules: `zero`, `constant c`, `sine k`, `indicator a b`, `noise amp`,
//! `file PATH` (a field CSV). Paths are relative to the config file.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::Parser;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::energy::EnergySpec;
use crate::error::{Error, Result};
use crate::experiments::{
    diagonal_lower_bound_holds, diagonal_select, falsify_m1, mosco_m2_check, run_continuity_full, ContinuityConfig,
    DiagonalTable, ForcingRule, InitialRule,
};
use crate::flow::{evolve, Forcing, TimeGrid};
use crate::geometry::{BoundaryCondition, Field, Grid};
use crate::prox::{PdSteps, ProxParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    Evolve,
    Continuity,
    Mosco,
    Diagonal,
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Command::Evolve => "evolve",
            Command::Continuity => "continuity",
            Command::Mosco => "mosco",
            Command::Diagonal => "diagonal",
        })
    }
}

impl std::str::FromStr for Command {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "evolve" => Ok(Command::Evolve),
            "continuity" => Ok(Command::Continuity),
            "mosco" => Ok(Command::Mosco),
            "diagonal" => Ok(Command::Diagonal),
            _ => Err(format!("unknown command `{s}`")),
        }
    }
}

/// A field given by name.
#[derive(Clone, Debug, PartialEq)]
pub enum DataRule {
    Zero,
    Constant(f64),
    /// `sin(k pi x / L)`, multiplied over the axes.
    Sine(f64),
    /// 1 on `[a, b]` along every axis, 0 elsewhere.
    Indicator(f64, f64),
    /// Uniform noise in `[-amp, amp]`, drawn from `seed`.
    Noise(f64),
    File(PathBuf),
}

#[derive(Clone, Debug, PartialEq)]
pub enum ForcingSpec {
    Field(DataRule),
    /// CSV with columns `t,cell_index,value`.
    Table(PathBuf),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum X0Rule {
    Fixed,
    Perturbed,
}

#[derive(Clone, Debug, PartialEq)]
pub enum TableSpec {
    /// `a[n][m] = 1/(n+1) + 1/(m+1)`, `b[m] = 1/(m+1)`.
    Harmonic(usize, usize),
    /// One row of `a` per line, then a `limit, ...` line with `b`.
    File(PathBuf),
}

#[derive(Clone, Debug, PartialEq)]
pub enum EpsSpec {
    Harmonic,
    Constant(f64),
    List(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub command: Option<Command>,
    /// Absent only in configs that do not touch a grid (`diagonal`).
    pub grid: Option<Grid>,
    pub p: Option<f64>,
    pub t_final: Option<f64>,
    pub steps: Option<usize>,
    pub max_iters: usize,
    pub gap_tol: f64,
    pub primal_step: Option<f64>,
    pub dual_step: Option<f64>,
    pub initial: DataRule,
    pub forcing: ForcingSpec,
    pub output: Option<PathBuf>,
    pub seed: u64,
    pub p0: Option<f64>,
    pub p_seq: Option<Vec<f64>>,
    pub x0_rule: X0Rule,
    pub perturbation: Option<DataRule>,
    pub tol_abs: f64,
    pub ratio_min: f64,
    pub trials: usize,
    pub samples: usize,
    pub table: Option<TableSpec>,
    pub eps: Option<EpsSpec>,
    /// Normalized `key = value` lines as read, for the manifest.
    pub echo: Vec<(String, String)>,
}

const KEYS: &[&str] = &[
    "command",
    "cells",
    "length",
    "bc",
    "p",
    "T",
    "steps",
    "max_iters",
    "gap_tol",
    "primal_step",
    "dual_step",
    "initial",
    "forcing",
    "output",
    "seed",
    "p0",
    "p_seq",
    "x0_rule",
    "perturbation",
    "tol_abs",
    "ratio_min",
    "trials",
    "samples",
    "table",
    "eps",
];

struct Entry {
    line: usize,
    value: String,
}

fn err(line: usize, key: &str, msg: impl fmt::Display) -> Error {
    Error::Parse(format!("line {line}: `{key}`: {msg}"))
}

fn num(line: usize, key: &str, s: &str) -> Result<f64> {
    s.trim().parse::<f64>().map_err(|_| err(line, key, format!("malformed number `{}`", s.trim())))
}

fn count(line: usize, key: &str, s: &str) -> Result<usize> {
    s.trim().parse::<usize>().map_err(|_| err(line, key, format!("malformed integer `{}`", s.trim())))
}

fn list(line: usize, key: &str, s: &str) -> Result<Vec<f64>> {
    s.split(',').map(|x| num(line, key, x)).collect()
}

fn words(s: &str) -> Vec<&str> {
    s.split_whitespace().collect()
}

fn data_rule(line: usize, key: &str, s: &str, base: &Path) -> Result<DataRule> {
    let w = words(s);
    let arity = |n: usize| -> Result<()> {
        if w.len() == n + 1 {
            Ok(())
        } else {
            Err(err(line, key, format!("`{}` takes {n} argument(s)", w[0])))
        }
    };
    match w.first().copied() {
        Some("zero") => arity(0).map(|_| DataRule::Zero),
        Some("constant") => arity(1).and_then(|_| Ok(DataRule::Constant(num(line, key, w[1])?))),
        Some("sine") => arity(1).and_then(|_| Ok(DataRule::Sine(num(line, key, w[1])?))),
        Some("indicator") => {
            arity(2)?;
            let (a, b) = (num(line, key, w[1])?, num(line, key, w[2])?);
            if a > b {
                return Err(err(line, key, "indicator needs a ≤ b"));
            }
            Ok(DataRule::Indicator(a, b))
        }
        Some("noise") => arity(1).and_then(|_| Ok(DataRule::Noise(num(line, key, w[1])?))),
        Some("file") => {
            arity(1)?;
            Ok(DataRule::File(existing(line, key, base, w[1])?))
        }
        _ => Err(err(line, key, format!("unknown data rule `{s}`"))),
    }
}

fn existing(line: usize, key: &str, base: &Path, p: &str) -> Result<PathBuf> {
    let path = base.join(p);
    if !path.is_file() {
        return Err(err(line, key, format!("file not found: {}", path.display())));
    }
    Ok(path)
}

/// Parses a config whose relative paths resolve against the current
/// directory.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    parse_config_at(text, Path::new("."))
}

/// Parses a config whose relative paths resolve against `base`.
pub fn parse_config_at(text: &str, base: &Path) -> Result<RunConfig> {
    let mut entries: BTreeMap<&str, Entry> = BTreeMap::new();
    let mut echo = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (k, v) = content
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("line {line}: expected `key = value`, got `{content}`")))?;
        let (k, v) = (k.trim(), v.trim());
        let key = *KEYS.iter().find(|&&known| known == k).ok_or_else(|| err(line, k, "unknown key"))?;
        if v.is_empty() {
            return Err(err(line, key, "empty value"));
        }
        if entries.insert(key, Entry { line, value: v.to_string() }).is_some() {
            return Err(err(line, key, "duplicate key"));
        }
        echo.push((key.to_string(), v.to_string()));
    }
    let get = |k: &str| entries.get(k).map(|e| (e.line, e.value.as_str()));

    let command = match get("command") {
        Some((l, v)) => Some(v.parse::<Command>().map_err(|e| err(l, "command", e))?),
        None => None,
    };

    let grid = match get("cells") {
        Some((cells_line, v)) => {
            let cells = v.split(',').map(|c| count(cells_line, "cells", c)).collect::<Result<Vec<_>>>()?;
            let lengths = match get("length") {
                Some((l, v)) => {
                    let mut ls = list(l, "length", v)?;
                    if ls.len() == 1 && cells.len() == 2 {
                        ls.push(ls[0]);
                    }
                    ls
                }
                None => vec![1.0; cells.len()],
            };
            let bc = match get("bc") {
                Some((l, v)) => v.parse::<BoundaryCondition>().map_err(|e| err(l, "bc", e))?,
                None => return Err(Error::Parse("missing required key `bc`".into())),
            };
            Some(Grid::new(&cells, &lengths, bc).map_err(|e| err(cells_line, "cells", e))?)
        }
        None => None,
    };

    let exponent = |k: &str| -> Result<Option<f64>> {
        match get(k) {
            Some((l, v)) => {
                let p = num(l, k, v)?;
                if !(p >= 1.0) || !p.is_finite() {
                    return Err(err(l, k, format!("p must be ≥ 1, got {v}")));
                }
                Ok(Some(p))
            }
            None => Ok(None),
        }
    };
    let p = exponent("p")?;
    let p0 = exponent("p0")?;

    let t_final = match get("T") {
        Some((l, v)) => {
            let t = num(l, "T", v)?;
            if !(t > 0.0 && t.is_finite()) {
                return Err(err(l, "T", "T must be > 0"));
            }
            Some(t)
        }
        None => None,
    };
    let steps = match get("steps") {
        Some((l, v)) => {
            let s = count(l, "steps", v)?;
            if s == 0 {
                return Err(err(l, "steps", "steps must be positive"));
            }
            Some(s)
        }
        None => None,
    };
    let max_iters = match get("max_iters") {
        Some((l, v)) => {
            let m = count(l, "max_iters", v)?;
            if m == 0 {
                return Err(err(l, "max_iters", "max_iters must be positive"));
            }
            m
        }
        None => 200_000,
    };
    let positive = |k: &str| -> Result<Option<f64>> {
        match get(k) {
            Some((l, v)) => {
                let x = num(l, k, v)?;
                if !(x > 0.0) || x.is_nan() {
                    return Err(err(l, k, format!("{k} must be > 0")));
                }
                Ok(Some(x))
            }
            None => Ok(None),
        }
    };
    let gap_tol = positive("gap_tol")?.unwrap_or(1e-10);
    let primal_step = positive("primal_step")?;
    let dual_step = positive("dual_step")?;
    let tol_abs = positive("tol_abs")?.unwrap_or(f64::INFINITY);
    let ratio_min = match get("ratio_min") {
        Some((l, v)) => {
            let r = num(l, "ratio_min", v)?;
            if !(r >= 0.0) {
                return Err(err(l, "ratio_min", "ratio_min must be ≥ 0"));
            }
            r
        }
        None => 1.0,
    };

    let initial = match get("initial") {
        Some((l, v)) => data_rule(l, "initial", v, base)?,
        None => DataRule::Zero,
    };
    let forcing = match get("forcing") {
        Some((l, v)) => match words(v).as_slice() {
            ["table", path] => ForcingSpec::Table(existing(l, "forcing", base, path)?),
            _ => ForcingSpec::Field(data_rule(l, "forcing", v, base)?),
        },
        None => ForcingSpec::Field(DataRule::Zero),
    };
    let perturbation = match get("perturbation") {
        Some((l, v)) => Some(data_rule(l, "perturbation", v, base)?),
        None => None,
    };
    let x0_rule = match get("x0_rule") {
        Some((_, "fixed")) | None => X0Rule::Fixed,
        Some((_, "perturbed")) => X0Rule::Perturbed,
        Some((l, v)) => return Err(err(l, "x0_rule", format!("expected `fixed` or `perturbed`, got `{v}`"))),
    };
    if x0_rule == X0Rule::Perturbed && perturbation.is_none() {
        return Err(Error::Parse("x0_rule = perturbed requires key `perturbation`".into()));
    }

    let seed = match get("seed") {
        Some((l, v)) => v.parse::<u64>().map_err(|_| err(l, "seed", format!("malformed integer `{v}`")))?,
        None => 0,
    };
    let p_seq = match get("p_seq") {
        Some((l, v)) => {
            let seq = match words(v).as_slice() {
                ["dyadic", n] => {
                    let base_p = p0.ok_or_else(|| err(l, "p_seq", "`dyadic` needs key `p0`"))?;
                    let n = count(l, "p_seq", n)?;
                    (1..=n).map(|k| base_p + 0.5f64.powi(k as i32)).collect()
                }
                _ => list(l, "p_seq", v)?,
            };
            if seq.is_empty() {
                return Err(err(l, "p_seq", "empty sequence"));
            }
            if let Some(bad) = seq.iter().find(|p| !(**p >= 1.0) || !p.is_finite()) {
                return Err(err(l, "p_seq", format!("p must be ≥ 1, got {bad}")));
            }
            Some(seq)
        }
        None => None,
    };
    let trials = match get("trials") {
        Some((l, v)) => count(l, "trials", v)?,
        None => 1000,
    };
    let samples = match get("samples") {
        Some((l, v)) => {
            let s = count(l, "samples", v)?;
            if s < 4 {
                return Err(err(l, "samples", "at least 4 samples required"));
            }
            s
        }
        None => 50,
    };
    let table = match get("table") {
        Some((l, v)) => Some(match words(v).as_slice() {
            ["harmonic", r, c] => TableSpec::Harmonic(count(l, "table", r)?, count(l, "table", c)?),
            ["file", path] => TableSpec::File(existing(l, "table", base, path)?),
            _ => return Err(err(l, "table", format!("expected `harmonic R C` or `file PATH`, got `{v}`"))),
        }),
        None => None,
    };
    let eps = match get("eps") {
        Some((l, v)) => Some(match words(v).as_slice() {
            ["harmonic"] => EpsSpec::Harmonic,
            ["constant", e] => EpsSpec::Constant(num(l, "eps", e)?),
            _ => EpsSpec::List(list(l, "eps", v)?),
        }),
        None => None,
    };

    let cfg = RunConfig {
        command,
        grid,
        p,
        t_final,
        steps,
        max_iters,
        gap_tol,
        primal_step,
        dual_step,
        initial,
        forcing,
        output: get("output").map(|(_, v)| base.join(v)),
        seed,
        p0,
        p_seq,
        x0_rule,
        perturbation,
        tol_abs,
        ratio_min,
        trials,
        samples,
        table,
        eps,
        echo,
    };
    if let Some(c) = command {
        cfg.require(c)?;
    }
    Ok(cfg)
}

impl RunConfig {
    /// Checks the keys `command` needs.
    pub fn require(&self, command: Command) -> Result<()> {
        let missing = |k: &str| Error::Parse(format!("missing required key `{k}` for `{command}`"));
        if command != Command::Diagonal {
            self.grid.ok_or_else(|| missing("cells"))?;
        }
        match command {
            Command::Evolve => {
                self.p.ok_or_else(|| missing("p"))?;
                self.t_final.ok_or_else(|| missing("T"))?;
                self.steps.ok_or_else(|| missing("steps"))?;
            }
            Command::Continuity => {
                self.p0.ok_or_else(|| missing("p0"))?;
                self.p_seq.as_ref().ok_or_else(|| missing("p_seq"))?;
                self.t_final.ok_or_else(|| missing("T"))?;
                self.steps.ok_or_else(|| missing("steps"))?;
            }
            Command::Mosco => {
                self.p0.ok_or_else(|| missing("p0"))?;
                self.p_seq.as_ref().ok_or_else(|| missing("p_seq"))?;
            }
            Command::Diagonal => {
                self.table.as_ref().ok_or_else(|| missing("table"))?;
                self.eps.as_ref().ok_or_else(|| missing("eps"))?;
            }
        }
        if let Some(c) = self.command {
            if c != command {
                return Err(Error::Parse(format!("config is for `{c}`, invoked as `{command}`")));
            }
        }
        Ok(())
    }

    /// The grid, required by every command except `diagonal`.
    pub fn grid(&self) -> Result<Grid> {
        self.grid.ok_or_else(|| Error::Parse("missing required key `cells`".into()))
    }

    fn params(&self) -> Result<ProxParams> {
        let grid = self.grid()?;
        let tau = match (self.t_final, self.steps) {
            (Some(t), Some(s)) => t / s as f64,
            _ => 1.0,
        };
        let mut params = ProxParams::new(tau, &grid).with_gap_tol(self.gap_tol).with_max_iters(self.max_iters);
        let default = PdSteps::for_grid(&grid);
        params.steps.primal = self.primal_step.unwrap_or(default.primal);
        params.steps.dual = self.dual_step.unwrap_or(default.dual);
        params.validate(&grid)?;
        Ok(params)
    }

    fn time_grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.t_final.unwrap_or(0.0), self.steps.unwrap_or(0))
    }

    /// Evaluates a data rule on the config grid.
    pub fn field(&self, rule: &DataRule) -> Result<Field> {
        let grid = self.grid()?;
        let lengths = grid.lengths().to_vec();
        let dim = grid.dim();
        match rule {
            DataRule::Zero => Ok(Field::zeros(grid)),
            DataRule::Constant(c) => Ok(Field::constant(grid, *c)),
            DataRule::Sine(k) => Field::from_fn(grid, |x| {
                (0..dim).map(|a| (k * std::f64::consts::PI * x[a] / lengths[a]).sin()).product()
            }),
            DataRule::Indicator(lo, hi) => {
                Field::from_fn(grid, |x| if (0..dim).all(|a| *lo <= x[a] && x[a] <= *hi) { 1.0 } else { 0.0 })
            }
            DataRule::Noise(amp) => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                let amp = amp.abs();
                Field::new(grid, (0..grid.cell_count()).map(|_| rng.gen_range(-amp..=amp)).collect())
            }
            DataRule::File(path) => Field::read_csv(grid, BufReader::new(fs::File::open(path)?)),
        }
    }

    fn forcing_value(&self) -> Result<Forcing> {
        match &self.forcing {
            ForcingSpec::Field(DataRule::Zero) => Ok(Forcing::Zero),
            ForcingSpec::Field(rule) => Ok(Forcing::Constant(self.field(rule)?)),
            ForcingSpec::Table(path) => read_forcing_table(self.grid()?, &fs::read_to_string(path)?),
        }
    }

    fn eps_schedule(&self, cols: usize) -> Vec<f64> {
        match self.eps.as_ref().expect("eps checked by require") {
            EpsSpec::Harmonic => (0..cols).map(|m| 1.0 / (m + 1) as f64).collect(),
            EpsSpec::Constant(e) => vec![*e; cols],
            EpsSpec::List(v) => v.clone(),
        }
    }
}

/// Reads a `t,cell_index,value` forcing table.
pub fn read_forcing_table(grid: Grid, text: &str) -> Result<Forcing> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, h)) if h.replace(' ', "") == "t,cell_index,value" => {}
        _ => return Err(Error::Parse("forcing table header must be `t,cell_index,value`".into())),
    }
    let mut entries: Vec<(f64, Vec<Option<f64>>)> = Vec::new();
    for (i, line) in lines {
        let bad = |m: &str| Error::Parse(format!("forcing table line {}: {m}", i + 1));
        let parts: Vec<&str> = line.split(',').map(str::trim).collect();
        if parts.len() != 3 {
            return Err(bad("expected 3 columns"));
        }
        let t: f64 = parts[0].parse().map_err(|_| bad("malformed time"))?;
        let c: usize = parts[1].parse().map_err(|_| bad("malformed cell index"))?;
        let v: f64 = parts[2].parse().map_err(|_| bad("malformed value"))?;
        if c >= grid.cell_count() {
            return Err(bad("cell index out of range"));
        }
        if entries.last().is_none_or(|(tk, _)| *tk != t) {
            entries.push((t, vec![None; grid.cell_count()]));
        }
        entries.last_mut().unwrap().1[c] = Some(v);
    }
    let fields = entries
        .into_iter()
        .map(|(t, vals)| {
            let vals = vals
                .into_iter()
                .collect::<Option<Vec<f64>>>()
                .ok_or_else(|| Error::Parse(format!("forcing table: time {t} does not cover every cell")))?;
            Ok((t, Field::new(grid, vals)?))
        })
        .collect::<Result<Vec<_>>>()?;
    Forcing::table(fields)
}

fn read_diagonal_table(text: &str) -> Result<DiagonalTable> {
    let mut a = Vec::new();
    let mut b = None;
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (is_limit, rest) = match line.strip_prefix("limit") {
            Some(r) => (true, r.trim_start_matches([',', ' '])),
            None => (false, line),
        };
        let row = rest
            .split(',')
            .map(|x| x.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Parse(format!("table line {}: {e}", i + 1)))?;
        if is_limit {
            b = Some(row);
        } else {
            a.push(row);
        }
    }
    DiagonalTable::new(a, b.ok_or_else(|| Error::Parse("table file has no `limit` line".into()))?)
}

#[derive(Debug, Parser)]
#[command(name = "plaplace", about = "p-Laplace evolutions and continuity experiments")]
struct Args {
    /// What to run.
    command: Command,
    /// Path to the `key = value` config.
    config: PathBuf,
    /// Output directory; overrides the config's `output`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Suppress the summary on stdout.
    #[arg(long)]
    quiet: bool,
    /// Worker threads for per-exponent runs.
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

/// Exit codes.
pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_SOLVER: i32 = 2;
pub const EXIT_VERDICT: i32 = 3;

enum Outcome {
    Ok,
    SolverFailure,
    VerdictFailure,
}

/// Runs the driver on `argv` (program name first) and returns the exit code.
pub fn main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let args = match Args::try_parse_from(argv) {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match run(&args) {
        Ok(Outcome::Ok) => EXIT_OK,
        Ok(Outcome::SolverFailure) => EXIT_SOLVER,
        Ok(Outcome::VerdictFailure) => EXIT_VERDICT,
        Err(e) => {
            eprintln!("plaplace: {e}");
            if e.is_solver_failure() {
                EXIT_SOLVER
            } else {
                EXIT_INVALID
            }
        }
    }
}

fn run(args: &Args) -> Result<Outcome> {
    let text = fs::read_to_string(&args.config)
        .map_err(|e| Error::InvalidParameter(format!("cannot read config {}: {e}", args.config.display())))?;
    let base = args.config.parent().unwrap_or(Path::new("."));
    let cfg = parse_config_at(&text, base)?;
    cfg.require(args.command)?;
    if args.threads == 0 {
        return Err(Error::InvalidParameter("--threads must be positive".into()));
    }
    let out = args.out.clone().or_else(|| cfg.output.clone()).unwrap_or_else(|| PathBuf::from("out"));
    fs::create_dir_all(&out)?;
    let say = |s: String| {
        if !args.quiet {
            println!("{s}");
        }
    };
    match args.command {
        Command::Evolve => run_evolve(&cfg, &out, say),
        Command::Continuity => run_continuity_cmd(&cfg, &out, args.threads, say),
        Command::Mosco => run_mosco(&cfg, &out, say),
        Command::Diagonal => run_diagonal(&cfg, &out, say),
    }
}

fn create(path: PathBuf) -> Result<BufWriter<fs::File>> {
    Ok(BufWriter::new(fs::File::create(path)?))
}

fn write_echo<W: Write>(cfg: &RunConfig, command: Command, mut w: W) -> std::io::Result<()> {
    writeln!(w, "# config")?;
    writeln!(w, "command = {command}")?;
    for (k, v) in cfg.echo.iter().filter(|(k, _)| k != "command") {
        writeln!(w, "{k} = {v}")?;
    }
    Ok(())
}

fn run_evolve(cfg: &RunConfig, out: &Path, say: impl Fn(String)) -> Result<Outcome> {
    let spec = EnergySpec::new(cfg.p.expect("checked"), cfg.grid()?)?;
    let tg = cfg.time_grid()?;
    let params = cfg.params()?;
    let x0 = cfg.field(&cfg.initial)?;
    let f = cfg.forcing_value()?;
    let (traj, failure) = match evolve(&spec, &x0, &f, &tg, &params) {
        Ok(t) => (t, None),
        Err(Error::Evolve { step, partial, source }) if source.is_solver_failure() => (*partial, Some((step, source))),
        Err(e) => return Err(e),
    };
    traj.write_csv(create(out.join("trajectory.csv"))?)?;
    let mut m = create(out.join("manifest.txt"))?;
    write_echo(cfg, Command::Evolve, &mut m)?;
    traj.write_manifest(&spec, &params, &mut m)?;
    m.flush()?;
    if let Some((step, source)) = failure {
        eprintln!("plaplace: evolution aborted at step {step}: {source}");
        return Ok(Outcome::SolverFailure);
    }
    let e = traj.energies(&spec)?;
    say(format!(
        "evolve: p = {}, {} steps, final energy {:.6e}, final norm {:.6e}",
        spec.p(),
        tg.steps(),
        e.last().copied().unwrap_or(0.0),
        traj.last().norm()
    ));
    Ok(Outcome::Ok)
}

fn run_continuity_cmd(cfg: &RunConfig, out: &Path, threads: usize, say: impl Fn(String)) -> Result<Outcome> {
    let p0 = cfg.p0.expect("checked");
    let p_seq = cfg.p_seq.clone().expect("checked");
    let x0 = cfg.field(&cfg.initial)?;
    let initial = match cfg.x0_rule {
        X0Rule::Fixed => InitialRule::Fixed(x0),
        X0Rule::Perturbed => {
            let dir = cfg.field(cfg.perturbation.as_ref().expect("checked at parse"))?;
            InitialRule::perturbed(&x0, &dir, p0, &p_seq)?
        }
    };
    let ccfg = ContinuityConfig {
        p0,
        p_seq,
        grid: cfg.grid()?,
        time_grid: cfg.time_grid()?,
        params: cfg.params()?,
        initial,
        forcing: ForcingRule::Fixed(cfg.forcing_value()?),
        tol_abs: cfg.tol_abs,
        ratio_min: cfg.ratio_min,
        threads,
    };
    let outcome = run_continuity_full(&ccfg)?;
    let report = &outcome.report;
    report.write_text(create(out.join("report.txt"))?)?;
    report.write_csv(create(out.join("report.csv"))?)?;

    let mut m = create(out.join("manifest.txt"))?;
    write_echo(cfg, Command::Continuity, &mut m)?;
    writeln!(m, "threads = {threads}")?;
    writeln!(m, "# run,step,iterations,final_gap,converged")?;
    let runs = std::iter::once(("ref".to_string(), Some(&outcome.reference)))
        .chain(outcome.runs.iter().enumerate().map(|(n, t)| ((n + 1).to_string(), t.as_ref())));
    for (name, traj) in runs {
        if let Some(t) = traj {
            for (k, r) in t.reports().iter().enumerate() {
                writeln!(m, "{name},{},{},{:.16e},{}", k + 1, r.iterations, r.final_gap, r.converged)?;
            }
        }
    }
    m.flush()?;

    let mut buf = Vec::new();
    report.write_text(&mut buf)?;
    say(String::from_utf8_lossy(&buf).trim_end().to_string());
    if !report.verdict.all_converged {
        return Ok(Outcome::SolverFailure);
    }
    Ok(if report.verdict.pass() { Outcome::Ok } else { Outcome::VerdictFailure })
}

fn run_mosco(cfg: &RunConfig, out: &Path, say: impl Fn(String)) -> Result<Outcome> {
    let p0 = cfg.p0.expect("checked");
    let p_seq = cfg.p_seq.as_ref().expect("checked");
    let u = cfg.field(&cfg.initial)?;
    let gaps = mosco_m2_check(&u, p_seq, p0, cfg.grid()?.bc())?;
    let m1 = falsify_m1(cfg.grid()?, p0, cfg.trials, cfg.samples, cfg.seed)?;
    let mut w = create(out.join("mosco.csv"))?;
    writeln!(w, "n,p_n,gap")?;
    for (n, (p, g)) in p_seq.iter().zip(&gaps).enumerate() {
        writeln!(w, "{},{p:.16e},{g:.16e}", n + 1)?;
    }
    w.flush()?;
    let mut r = create(out.join("report.txt"))?;
    write_echo(cfg, Command::Mosco, &mut r)?;
    writeln!(r, "m2_gaps_decreasing = {}", gaps.windows(2).all(|g| g[1] < g[0]))?;
    writeln!(r, "m2_final_gap = {:.16e}", gaps.last().copied().unwrap_or(0.0))?;
    writeln!(r, "m1_trials = {}", m1.trials)?;
    writeln!(r, "m1_violations = {}", m1.violations)?;
    writeln!(r, "m1_adversarial_witnesses = {}", m1.adversarial_witnesses)?;
    writeln!(r, "m1_resolved_by_extension = {}", m1.resolved_by_extension)?;
    writeln!(r, "m1_worst_margin = {:.16e}", m1.worst_margin)?;
    r.flush()?;
    say(format!(
        "mosco: final recovery gap {:.3e}; lower-limit violations {}/{}",
        gaps.last().copied().unwrap_or(0.0),
        m1.violations,
        m1.trials
    ));
    Ok(if m1.violations == 0 && m1.adversarial_witnesses == 0 { Outcome::Ok } else { Outcome::VerdictFailure })
}

fn run_diagonal(cfg: &RunConfig, out: &Path, say: impl Fn(String)) -> Result<Outcome> {
    let tbl = match cfg.table.as_ref().expect("checked") {
        TableSpec::Harmonic(r, c) => {
            DiagonalTable::from_fn(*r, *c, |n, m| 1.0 / (n + 1) as f64 + 1.0 / (m + 1) as f64, |m| 1.0 / (m + 1) as f64)?
        }
        TableSpec::File(path) => read_diagonal_table(&fs::read_to_string(path)?)?,
    };
    let eps = cfg.eps_schedule(tbl.cols());
    let sel = diagonal_select(&tbl, &eps)?;
    let mut w = create(out.join("diagonal.csv"))?;
    // 1-based row and column, empty before the first column stabilizes
    writeln!(w, "n,m,a_nm")?;
    for (n, m) in sel.iter().enumerate() {
        match m {
            Some(m) => writeln!(w, "{},{},{:.16e}", n + 1, m + 1, tbl.get(n, *m))?,
            None => writeln!(w, "{},,", n + 1)?,
        }
    }
    w.flush()?;
    let bound = diagonal_lower_bound_holds(&tbl, &sel, &eps);
    say(format!(
        "diagonal: {} rows, last selected column {:?}, lower bound holds: {bound}",
        tbl.rows(),
        sel.last().copied().flatten().map(|m| m + 1)
    ));
    Ok(if bound { Outcome::Ok } else { Outcome::VerdictFailure })
}
