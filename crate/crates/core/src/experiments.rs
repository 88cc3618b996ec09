//! Experiments on the dependence of the flow on the exponent.
//!
//! * [`run_continuity`] evolves a reference exponent `p0` and a sequence
//!   `p_n -> p0` on a shared grid and time grid, and records the sup-in-time
//!   `L^2` distances `d_n`.
//! * [`mosco_m2_check`] and [`mosco_m1_check`] probe the recovery-sequence and
//!   lower-limit conditions of the energies along `p_n -> p0`. On a fixed grid
//!   weak and strong convergence coincide and the constant sequence is a
//!   recovery sequence.
//! * [`diagonal_select`] extracts a diagonal `n -> m(n)` from a doubly indexed
//!   table so that the diagonal follows the iterated limit.

use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::energy::{energy, energy_gaps, EnergySpec};
use crate::error::{Error, Result};
use crate::flow::{evolve, sup_distance, Forcing, TimeGrid, Trajectory};
use crate::geometry::{BoundaryCondition, Field, Grid};
use crate::prox::ProxParams;

/// How the initial data `x_{p_n}` are chosen.
#[derive(Clone, Debug)]
pub enum InitialRule {
    /// The same datum for every exponent.
    Fixed(Field),
    /// One datum for the reference run and one per `p_n`.
    PerN { reference: Field, per_n: Vec<Field> },
}

impl InitialRule {
    /// `x_n = base + |p_n - p0| * direction`.
    pub fn perturbed(base: &Field, direction: &Field, p0: f64, p_seq: &[f64]) -> Result<Self> {
        let per_n = p_seq
            .iter()
            .map(|p| base.axpy((p - p0).abs(), direction))
            .collect::<Result<Vec<_>>>()?;
        Ok(InitialRule::PerN { reference: base.clone(), per_n })
    }

    fn reference(&self) -> &Field {
        match self {
            InitialRule::Fixed(f) => f,
            InitialRule::PerN { reference, .. } => reference,
        }
    }

    fn get(&self, n: usize) -> &Field {
        match self {
            InitialRule::Fixed(f) => f,
            InitialRule::PerN { per_n, .. } => &per_n[n],
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            InitialRule::Fixed(_) => "fixed",
            InitialRule::PerN { .. } => "per-n",
        }
    }
}

/// How the forcings `f_{p_n}` are chosen.
#[derive(Clone, Debug)]
pub enum ForcingRule {
    Fixed(Forcing),
    PerN { reference: Forcing, per_n: Vec<Forcing> },
}

impl ForcingRule {
    fn reference(&self) -> &Forcing {
        match self {
            ForcingRule::Fixed(f) => f,
            ForcingRule::PerN { reference, .. } => reference,
        }
    }

    fn get(&self, n: usize) -> &Forcing {
        match self {
            ForcingRule::Fixed(f) => f,
            ForcingRule::PerN { per_n, .. } => &per_n[n],
        }
    }
}

#[derive(Clone, Debug)]
pub struct ContinuityConfig {
    pub p0: f64,
    pub p_seq: Vec<f64>,
    pub grid: Grid,
    pub time_grid: TimeGrid,
    pub params: ProxParams,
    pub initial: InitialRule,
    pub forcing: ForcingRule,
    /// `d_last <= tol_abs` is part of the verdict; infinity disables it.
    pub tol_abs: f64,
    /// `d_first / d_last >= ratio_min` is part of the verdict.
    pub ratio_min: f64,
    /// Worker threads for the per-exponent runs.
    pub threads: usize,
}

impl ContinuityConfig {
    pub fn validate(&self) -> Result<()> {
        EnergySpec::new(self.p0, self.grid)?;
        if self.p_seq.is_empty() {
            return Err(Error::InvalidParameter("p_seq is empty".into()));
        }
        for &p in &self.p_seq {
            EnergySpec::new(p, self.grid)?;
        }
        let dist: Vec<f64> = self.p_seq.iter().map(|p| (p - self.p0).abs()).collect();
        if dist.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::InvalidParameter("p_seq must approach p0 monotonically".into()));
        }
        if let InitialRule::PerN { per_n, .. } = &self.initial {
            if per_n.len() != self.p_seq.len() {
                return Err(Error::InvalidParameter("one initial datum per exponent required".into()));
            }
        }
        if let ForcingRule::PerN { per_n, .. } = &self.forcing {
            if per_n.len() != self.p_seq.len() {
                return Err(Error::InvalidParameter("one forcing per exponent required".into()));
            }
        }
        let fields = std::iter::once(self.initial.reference())
            .chain((0..self.p_seq.len()).map(|n| self.initial.get(n)));
        for f in fields {
            if f.grid() != &self.grid {
                return Err(Error::GridMismatch);
            }
        }
        if self.threads == 0 {
            return Err(Error::InvalidParameter("threads must be positive".into()));
        }
        if !(self.tol_abs > 0.0) || !(self.ratio_min >= 0.0) {
            return Err(Error::InvalidParameter("tol_abs must be > 0 and ratio_min ≥ 0".into()));
        }
        self.params.validate(&self.grid)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ContinuityEntry {
    /// 1-based index into `p_seq`.
    pub n: usize,
    pub p: f64,
    /// `None` when the run failed.
    pub distance: Option<f64>,
    pub runtime_s: f64,
    pub converged: bool,
    pub error: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ContinuityVerdict {
    pub tail_decreasing: bool,
    pub within_tol: bool,
    pub ratio_ok: bool,
    pub all_converged: bool,
}

impl ContinuityVerdict {
    pub fn pass(&self) -> bool {
        self.tail_decreasing && self.within_tol && self.ratio_ok && self.all_converged
    }
}

#[derive(Clone, Debug)]
pub struct ContinuityReport {
    pub p0: f64,
    pub reference_runtime_s: f64,
    pub entries: Vec<ContinuityEntry>,
    pub tol_abs: f64,
    pub ratio_min: f64,
    pub initial_rule: &'static str,
    pub verdict: ContinuityVerdict,
}

impl ContinuityReport {
    pub fn distances(&self) -> Vec<Option<f64>> {
        self.entries.iter().map(|e| e.distance).collect()
    }

    /// Text report: one `p_n, d_n, runtime_s, converged` line per run and a
    /// final verdict line.
    pub fn write_text<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "# continuity in p: p0 = {:.16e}, initial rule = {}", self.p0, self.initial_rule)?;
        writeln!(out, "# reference runtime_s = {:.3}", self.reference_runtime_s)?;
        writeln!(out, "# p_n, d_n, runtime_s, converged")?;
        for e in &self.entries {
            let d = e.distance.map_or("nan".to_string(), |d| format!("{d:.16e}"));
            writeln!(out, "{:.16e}, {}, {:.3}, {}", e.p, d, e.runtime_s, e.converged)?;
            if let Some(err) = &e.error {
                writeln!(out, "#   n = {} failed: {err}", e.n)?;
            }
        }
        let v = &self.verdict;
        writeln!(
            out,
            "verdict: {} (tail_decreasing={}, d_last<=tol_abs({:e})={}, ratio>={}={}, all_converged={})",
            if v.pass() { "PASS" } else { "FAIL" },
            v.tail_decreasing,
            self.tol_abs,
            v.within_tol,
            self.ratio_min,
            v.ratio_ok,
            v.all_converged
        )
    }

    /// CSV twin of the text report. Runtimes are left out so that reruns are
    /// byte-identical.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "n,p_n,d_n,converged")?;
        for e in &self.entries {
            let d = e.distance.map_or("nan".to_string(), |d| format!("{d:.16e}"));
            writeln!(out, "{},{:.16e},{},{}", e.n, e.p, d, e.converged)?;
        }
        Ok(())
    }
}

/// Report plus the trajectories it was computed from.
pub struct ContinuityOutcome {
    pub report: ContinuityReport,
    pub reference: Trajectory,
    /// `None` for failed runs.
    pub runs: Vec<Option<Trajectory>>,
}

struct RunResult {
    traj: Result<Trajectory>,
    runtime_s: f64,
}

fn timed_evolve(spec: &EnergySpec, x0: &Field, f: &Forcing, tg: &TimeGrid, params: &ProxParams) -> RunResult {
    let start = Instant::now();
    let traj = evolve(spec, x0, f, tg, params);
    RunResult { traj, runtime_s: start.elapsed().as_secs_f64() }
}

pub fn run_continuity(cfg: &ContinuityConfig) -> Result<ContinuityReport> {
    Ok(run_continuity_full(cfg)?.report)
}

/// Runs the reference and all `p_n` evolutions, in parallel over `n` with
/// `cfg.threads` workers. Each trajectory is computed sequentially, so the
/// results do not depend on the thread count.
pub fn run_continuity_full(cfg: &ContinuityConfig) -> Result<ContinuityOutcome> {
    cfg.validate()?;
    let jobs: Vec<Option<usize>> = std::iter::once(None).chain((0..cfg.p_seq.len()).map(Some)).collect();
    let run = |job: &Option<usize>| -> Result<RunResult> {
        let (p, x0, f) = match *job {
            None => (cfg.p0, cfg.initial.reference(), cfg.forcing.reference()),
            Some(n) => (cfg.p_seq[n], cfg.initial.get(n), cfg.forcing.get(n)),
        };
        let spec = EnergySpec::new(p, cfg.grid)?;
        Ok(timed_evolve(&spec, x0, f, &cfg.time_grid, &cfg.params))
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
    let mut results = pool.install(|| jobs.par_iter().map(run).collect::<Vec<_>>()).into_iter();

    let reference_run = results.next().expect("reference job")?;
    let reference = reference_run.traj?;

    let mut entries = Vec::with_capacity(cfg.p_seq.len());
    let mut runs = Vec::with_capacity(cfg.p_seq.len());
    for (n, res) in results.enumerate() {
        let res = res?;
        let entry = match res.traj {
            Ok(traj) => {
                let d = sup_distance(&reference, &traj)?;
                runs.push(Some(traj));
                ContinuityEntry {
                    n: n + 1,
                    p: cfg.p_seq[n],
                    distance: Some(d),
                    runtime_s: res.runtime_s,
                    converged: true,
                    error: None,
                }
            }
            Err(e) => {
                runs.push(None);
                ContinuityEntry {
                    n: n + 1,
                    p: cfg.p_seq[n],
                    distance: None,
                    runtime_s: res.runtime_s,
                    converged: false,
                    error: Some(e.to_string()),
                }
            }
        };
        entries.push(entry);
    }

    let verdict = continuity_verdict(&entries, cfg.tol_abs, cfg.ratio_min);
    Ok(ContinuityOutcome {
        report: ContinuityReport {
            p0: cfg.p0,
            reference_runtime_s: reference_run.runtime_s,
            entries,
            tol_abs: cfg.tol_abs,
            ratio_min: cfg.ratio_min,
            initial_rule: cfg.initial.name(),
            verdict,
        },
        reference,
        runs,
    })
}

/// Trend and tolerance criteria only: no convergence rate is asserted.
fn continuity_verdict(entries: &[ContinuityEntry], tol_abs: f64, ratio_min: f64) -> ContinuityVerdict {
    let all_converged = entries.iter().all(|e| e.converged);
    let d: Vec<f64> = entries.iter().filter_map(|e| e.distance).collect();
    if !all_converged || d.is_empty() {
        return ContinuityVerdict { tail_decreasing: false, within_tol: false, ratio_ok: false, all_converged };
    }
    let tail = &d[d.len().saturating_sub(3)..];
    let last = *d.last().unwrap();
    let ratio_ok = d[0] >= ratio_min * last;
    ContinuityVerdict {
        tail_decreasing: tail.windows(2).all(|w| w[1] <= w[0]),
        within_tol: last <= tol_abs,
        ratio_ok,
        all_converged,
    }
}

/// Recovery-sequence gaps `|E_{p_n}(u) - E_{p0}(u)|` with the constant
/// sequence `y_n = u`.
pub fn mosco_m2_check(u: &Field, p_seq: &[f64], p0: f64, bc: BoundaryCondition) -> Result<Vec<f64>> {
    energy_gaps(u, p_seq, p0, bc)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct M1Verdict {
    pub pass: bool,
    /// Smallest energy over the tail of the sample sequence.
    pub tail_min: f64,
    /// `E_{p0}(u)`.
    pub limit_energy: f64,
    pub slack: f64,
}

/// Lower-limit probe: is `min_tail E_{p_n}(u_n) >= E_{p0}(u) - slack`?
///
/// The tail is the second half of the samples. The slack is `1e-8` plus the
/// oscillation of the tail plus a drift allowance `2 n_last |E_last - E_prev|`,
/// twice the part of an `O(1/n)` approach not yet seen at `n_last`.
pub fn mosco_m1_check(samples: &[(f64, Field)], p0: f64, u: &Field) -> Result<M1Verdict> {
    if samples.len() < 4 {
        return Err(Error::InvalidParameter(format!(
            "lower-limit probe needs at least 4 samples, got {}",
            samples.len()
        )));
    }
    let grid = *u.grid();
    let limit_energy = energy(&EnergySpec::new(p0, grid)?, u)?;
    let energies = samples
        .iter()
        .map(|(p, un)| energy(&EnergySpec::new(*p, grid)?, un))
        .collect::<Result<Vec<_>>>()?;
    let tail = &energies[energies.len() / 2..];
    let tail_min = tail.iter().copied().fold(f64::INFINITY, f64::min);
    let tail_max = tail.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let n_last = energies.len() as f64;
    let drift = 2.0 * n_last * (energies[energies.len() - 1] - energies[energies.len() - 2]).abs();
    let slack = 1e-8 + (tail_max - tail_min) + drift;
    Ok(M1Verdict { pass: tail_min >= limit_energy - slack, tail_min, limit_energy, slack })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct M1Falsification {
    pub trials: usize,
    /// Trials where [`mosco_m1_check`] failed at every sequence length.
    pub violations: usize,
    /// Trials that failed at `n_samples` terms but passed once the same
    /// sequence was extended.
    pub resolved_by_extension: usize,
    /// Trials whose tail sat below `E_{p0}(u) - 0.1` at every length.
    pub adversarial_witnesses: usize,
    /// Smallest `tail_min - (limit_energy - slack)` at the final length.
    pub worst_margin: f64,
}

/// Times a failing trial's sequence is extended fourfold before the failure
/// counts as a violation.
const EXTENSIONS: u32 = 3;

/// Random search for sequences `u_n -> u`, `p_n -> p0` that break the lower
/// limit. Each trial draws `u` (smooth or rough), a direction `v`, amplitudes
/// and `n_samples` terms `u_n = u + a v / n`, `p_n = p0 + b / n`.
///
/// A lower-limit violation persists along the whole sequence, while a tail
/// that has not reached its asymptotic regime recovers when more terms are
/// taken. A failing trial is therefore rechecked on `4x`, `16x` and `64x` as
/// many terms and counted as a violation only if every check fails. The same
/// rule applies to tails sitting a fixed `0.1` below the limit energy.
pub fn falsify_m1(grid: Grid, p0: f64, trials: usize, n_samples: usize, seed: u64) -> Result<M1Falsification> {
    EnergySpec::new(p0, grid)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = M1Falsification {
        trials,
        violations: 0,
        resolved_by_extension: 0,
        adversarial_witnesses: 0,
        worst_margin: f64::INFINITY,
    };
    let nc = grid.cell_count();
    for _ in 0..trials {
        let rough = rng.gen_bool(0.5);
        let u = if rough {
            Field::new(grid, (0..nc).map(|_| rng.gen_range(-1.0..1.0)).collect())?
        } else {
            let (a, k, ph) = (rng.gen_range(-2.0..2.0), rng.gen_range(0.5..4.0), rng.gen_range(0.0..6.3));
            Field::from_fn(grid, |c| a * (k * (c[0] + 0.7 * c[1]) + ph).sin())?
        };
        let v = Field::new(grid, (0..nc).map(|_| rng.gen_range(-1.0..1.0)).collect())?;
        let amp = rng.gen_range(0.01..1.0);
        // p_n stays >= 1
        let b_lo = if p0 > 1.0 { -(p0 - 1.0).min(1.0) } else { 0.0 };
        let b = rng.gen_range(b_lo..=1.0);
        let sequence = |len: usize| {
            (1..=len)
                .map(|n| {
                    let t = 1.0 / n as f64;
                    Ok(((p0 + b * t).max(1.0), u.axpy(amp * t, &v)?))
                })
                .collect::<Result<Vec<_>>>()
        };

        let below_offset = |samples: &[(f64, Field)], limit: f64| -> Result<bool> {
            for (p, un) in &samples[samples.len() / 2..] {
                if energy(&EnergySpec::new(*p, grid)?, un)? >= limit - 0.1 {
                    return Ok(false);
                }
            }
            Ok(true)
        };
        let samples = sequence(n_samples)?;
        let mut verdict = mosco_m1_check(&samples, p0, &u)?;
        let mut witness = below_offset(&samples, verdict.limit_energy)?;
        let first_pass = verdict.pass && !witness;
        let mut level = 0;
        while (!verdict.pass || witness) && level < EXTENSIONS {
            level += 1;
            let samples = sequence(n_samples * 4usize.pow(level))?;
            verdict = mosco_m1_check(&samples, p0, &u)?;
            witness = witness && below_offset(&samples, verdict.limit_energy)?;
        }
        if !verdict.pass {
            out.violations += 1;
        }
        if witness {
            out.adversarial_witnesses += 1;
        }
        if !first_pass && verdict.pass && !witness {
            out.resolved_by_extension += 1;
        }
        out.worst_margin = out.worst_margin.min(verdict.tail_min - (verdict.limit_energy - verdict.slack));
    }
    Ok(out)
}

/// Finite doubly indexed table `a[n][m]` of extended reals together with
/// per-column limit estimates `b[m]` (the limit in `n`).
#[derive(Clone, Debug, PartialEq)]
pub struct DiagonalTable {
    a: Vec<Vec<f64>>,
    b: Vec<f64>,
}

impl DiagonalTable {
    pub fn new(a: Vec<Vec<f64>>, b: Vec<f64>) -> Result<Self> {
        let rows = a.len();
        let cols = a.first().map_or(0, Vec::len);
        if rows < 2 || cols < 2 {
            return Err(Error::InvalidParameter("diagonal table must be at least 2x2".into()));
        }
        if a.iter().any(|r| r.len() != cols) || b.len() != cols {
            return Err(Error::InvalidParameter("ragged diagonal table".into()));
        }
        if a.iter().flatten().chain(&b).any(|v| v.is_nan()) {
            return Err(Error::InvalidParameter("diagonal table contains NaN".into()));
        }
        Ok(DiagonalTable { a, b })
    }

    pub fn from_fn(rows: usize, cols: usize, a: impl Fn(usize, usize) -> f64, b: impl Fn(usize) -> f64) -> Result<Self> {
        Self::new(
            (0..rows).map(|n| (0..cols).map(|m| a(n, m)).collect()).collect(),
            (0..cols).map(b).collect(),
        )
    }

    /// `a[n][m] = E_{p_n}(u_m)` with column limits `b[m] = E_{p0}(u_m)`.
    pub fn energy_table(family: &[Field], p_seq: &[f64], p0: f64) -> Result<Self> {
        let col = |p: f64, u: &Field| energy(&EnergySpec::new(p, *u.grid())?, u);
        let a = p_seq
            .iter()
            .map(|&p| family.iter().map(|u| col(p, u)).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        let b = family.iter().map(|u| col(p0, u)).collect::<Result<Vec<_>>>()?;
        Self::new(a, b)
    }

    pub fn rows(&self) -> usize {
        self.a.len()
    }

    pub fn cols(&self) -> usize {
        self.b.len()
    }

    pub fn get(&self, n: usize, m: usize) -> f64 {
        self.a[n][m]
    }

    pub fn limits(&self) -> &[f64] {
        &self.b
    }

    /// `a[n][m(n)]` along a selection.
    pub fn diagonal(&self, selection: &[Option<usize>]) -> Vec<Option<f64>> {
        selection.iter().enumerate().map(|(n, m)| m.map(|m| self.a[n][m])).collect()
    }
}

fn within(a: f64, b: f64, eps: f64) -> bool {
    a == b || (a - b).abs() <= eps
}

/// Selects a nondecreasing column index `m(n)` for every row `n`.
///
/// Column `m` stabilizes from row `N(m)` on if `|a[n][m] - b[m]| <= eps[m]`
/// for every `n >= N(m)` in the table; a column whose last row is still off
/// never stabilizes. Then `m(n)` is the largest `m` such that every column
/// `m' <= m` has stabilized by row `n`, or `None` if column 0 has not.
pub fn diagonal_select(tbl: &DiagonalTable, eps_schedule: &[f64]) -> Result<Vec<Option<usize>>> {
    if eps_schedule.len() != tbl.cols() {
        return Err(Error::InvalidParameter(format!(
            "eps schedule has {} entries for {} columns",
            eps_schedule.len(),
            tbl.cols()
        )));
    }
    if eps_schedule.iter().any(|e| !(*e > 0.0)) || eps_schedule.windows(2).any(|w| w[1] > w[0]) {
        return Err(Error::InvalidParameter("eps schedule must be positive and nonincreasing".into()));
    }
    let rows = tbl.rows();
    // N(m), None meaning never
    let stable_from: Vec<Option<usize>> = (0..tbl.cols())
        .map(|m| {
            let mut start = None;
            for n in (0..rows).rev() {
                if within(tbl.a[n][m], tbl.b[m], eps_schedule[m]) {
                    start = Some(n);
                } else {
                    break;
                }
            }
            start
        })
        .collect();
    // running max of N over the column prefix
    let mut prefix = Vec::with_capacity(stable_from.len());
    let mut acc = Some(0usize);
    for s in &stable_from {
        acc = match (acc, s) {
            (Some(a), Some(s)) => Some(a.max(*s)),
            _ => None,
        };
        prefix.push(acc);
    }
    Ok((0..rows)
        .map(|n| prefix.iter().rposition(|p| matches!(p, Some(k) if *k <= n)))
        .collect())
}

/// Finite lower-limit bound along a selection: at every row with a selected
/// column, `a[n][m(n)] >= min_m b[m] - eps[m(n)]`.
pub fn diagonal_lower_bound_holds(tbl: &DiagonalTable, selection: &[Option<usize>], eps_schedule: &[f64]) -> bool {
    let floor = tbl.b.iter().copied().fold(f64::INFINITY, f64::min);
    selection
        .iter()
        .enumerate()
        .all(|(n, m)| m.is_none_or(|m| tbl.a[n][m] >= floor - eps_schedule[m]))
}
