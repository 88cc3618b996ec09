//! Backward-Euler resolvent chains for `du/dt + dE_p(u) ∋ f`.

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use crate::energy::{energy, EnergySpec};
use crate::error::{Error, Result};
use crate::geometry::{Field, Grid};
use crate::prox::{ProxParams, ProxReport, Resolvent};

/// Time-dependent source term.
#[derive(Clone)]
pub enum Forcing {
    Zero,
    /// Constant in time.
    Constant(Field),
    /// `amplitude(t) * profile`.
    Separable {
        amplitude: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
        profile: Field,
    },
    /// Piecewise constant: entry `(t_k, f_k)` is active on `(t_k, t_{k+1}]`.
    /// Times before the first entry use the first field.
    Table(Vec<(f64, Field)>),
}

impl fmt::Debug for Forcing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Forcing::Zero => f.write_str("Zero"),
            Forcing::Constant(_) => f.write_str("Constant(..)"),
            Forcing::Separable { .. } => f.write_str("Separable(..)"),
            Forcing::Table(t) => write!(f, "Table({} entries)", t.len()),
        }
    }
}

impl Forcing {
    pub fn separable(amplitude: impl Fn(f64) -> f64 + Send + Sync + 'static, profile: Field) -> Self {
        Forcing::Separable { amplitude: Arc::new(amplitude), profile }
    }

    pub fn table(mut entries: Vec<(f64, Field)>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::InvalidParameter("forcing table is empty".into()));
        }
        if entries.iter().any(|(t, _)| !t.is_finite()) {
            return Err(Error::InvalidParameter("forcing table times must be finite".into()));
        }
        entries.sort_by(|a, b| a.0.total_cmp(&b.0));
        let g = entries[0].1.grid();
        if entries.iter().any(|(_, f)| f.grid() != g) {
            return Err(Error::GridMismatch);
        }
        Ok(Forcing::Table(entries))
    }

    /// `f(t)` on `grid`.
    pub fn at(&self, t: f64, grid: &Grid) -> Result<Field> {
        let out = match self {
            Forcing::Zero => return Ok(Field::zeros(*grid)),
            Forcing::Constant(f) => f.clone(),
            Forcing::Separable { amplitude, profile } => profile.scaled(amplitude(t)),
            Forcing::Table(entries) => {
                let k = entries.iter().rposition(|(tk, _)| *tk < t).unwrap_or(0);
                entries[k].1.clone()
            }
        };
        if out.grid() != grid {
            return Err(Error::GridMismatch);
        }
        Ok(out)
    }

    fn is_zero(&self) -> bool {
        matches!(self, Forcing::Zero)
    }
}

/// Uniform time grid on `[0, T]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeGrid {
    t_final: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(t_final: f64, steps: usize) -> Result<Self> {
        if !(t_final.is_finite() && t_final > 0.0) {
            return Err(Error::InvalidParameter(format!("T must be > 0, got {t_final}")));
        }
        if steps == 0 {
            return Err(Error::InvalidParameter("steps must be positive".into()));
        }
        Ok(TimeGrid { t_final, steps })
    }

    pub fn t_final(&self) -> f64 {
        self.t_final
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn tau(&self) -> f64 {
        self.t_final / self.steps as f64
    }

    pub fn node(&self, k: usize) -> f64 {
        k as f64 * self.tau()
    }
}

/// Discrete solution path: one field per time node.
#[derive(Clone, Debug)]
pub struct Trajectory {
    time_grid: TimeGrid,
    fields: Vec<Field>,
    reports: Vec<ProxReport>,
}

impl Trajectory {
    pub fn time_grid(&self) -> &TimeGrid {
        &self.time_grid
    }

    pub fn fields(&self) -> &[Field] {
        &self.fields
    }

    /// Resolvent reports, one per completed step.
    pub fn reports(&self) -> &[ProxReport] {
        &self.reports
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.fields.len()).map(|k| self.time_grid.node(k))
    }

    pub fn last(&self) -> &Field {
        self.fields.last().expect("trajectory holds the initial datum")
    }

    /// Energy at every node.
    pub fn energies(&self, spec: &EnergySpec) -> Result<Vec<f64>> {
        self.fields.iter().map(|u| energy(spec, u)).collect()
    }

    /// Writes `k,t,cell_index,value` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "k,t,cell_index,value")?;
        for (k, u) in self.fields.iter().enumerate() {
            let t = self.time_grid.node(k);
            for (i, v) in u.values().iter().enumerate() {
                writeln!(out, "{k},{t:.16e},{i},{v:.16e}")?;
            }
        }
        Ok(())
    }

    /// Plain-text run manifest: energy spec, time grid, solver parameters and
    /// the per-step resolvent reports.
    pub fn write_manifest<W: Write>(&self, spec: &EnergySpec, params: &ProxParams, mut out: W) -> std::io::Result<()> {
        let grid = spec.grid();
        writeln!(out, "# trajectory manifest")?;
        writeln!(out, "p = {:.16e}", spec.p())?;
        writeln!(out, "bc = {}", spec.bc())?;
        writeln!(out, "dim = {}", grid.dim())?;
        writeln!(out, "cells = {}", join(grid.cells_per_axis().iter().map(|c| c.to_string())))?;
        writeln!(out, "length = {}", join(grid.lengths().iter().map(|l| format!("{l:.16e}"))))?;
        writeln!(out, "T = {:.16e}", self.time_grid.t_final())?;
        writeln!(out, "steps = {}", self.time_grid.steps())?;
        writeln!(out, "tau = {:.16e}", self.time_grid.tau())?;
        writeln!(out, "max_iters = {}", params.max_iters)?;
        writeln!(out, "gap_tol = {:.16e}", params.gap_tol)?;
        writeln!(out, "primal_step = {:.16e}", params.steps.primal)?;
        writeln!(out, "dual_step = {:.16e}", params.steps.dual)?;
        writeln!(out, "accelerate = {}", params.steps.accelerate)?;
        writeln!(out, "# step,iterations,final_gap,converged")?;
        for (k, r) in self.reports.iter().enumerate() {
            writeln!(out, "{},{},{:.16e},{}", k + 1, r.iterations, r.final_gap, r.converged)?;
        }
        Ok(())
    }
}

fn join(it: impl Iterator<Item = String>) -> String {
    it.collect::<Vec<_>>().join(", ")
}

/// Runs `u_{k+1} = R(u_k + tau f(t_{k+1}))` with the resolvent `R` of
/// `tau E_p`. The resolvent step is taken from `tg`; `params.tau` is ignored.
pub fn evolve(spec: &EnergySpec, x0: &Field, f: &Forcing, tg: &TimeGrid, params: &ProxParams) -> Result<Trajectory> {
    let grid = *spec.grid();
    if x0.grid() != &grid {
        return Err(Error::GridMismatch);
    }
    let tau = tg.tau();
    let params = ProxParams { tau, ..*params };
    let mut solver = Resolvent::new(*spec, params)?;

    let mut traj = Trajectory {
        time_grid: *tg,
        fields: Vec::with_capacity(tg.steps() + 1),
        reports: Vec::with_capacity(tg.steps()),
    };
    traj.fields.push(x0.clone());

    for k in 0..tg.steps() {
        let u = traj.last();
        let w = if f.is_zero() { u.clone() } else { u.axpy(tau, &f.at(tg.node(k + 1), &grid)?)? };
        match solver.solve(&w) {
            Ok((next, report)) => {
                traj.fields.push(next);
                traj.reports.push(report);
            }
            Err(e) => {
                return Err(Error::Evolve { step: k + 1, partial: Box::new(traj), source: Box::new(e) });
            }
        }
    }
    Ok(traj)
}

/// `max_k |a_k - b_k|` in `L^2` over the shared time nodes.
pub fn sup_distance(a: &Trajectory, b: &Trajectory) -> Result<f64> {
    if a.time_grid != b.time_grid || a.fields.len() != b.fields.len() {
        return Err(Error::TimeGridMismatch);
    }
    a.fields
        .iter()
        .zip(&b.fields)
        .try_fold(0.0f64, |acc, (x, y)| Ok(acc.max(x.distance(y)?)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BoundaryCondition;

    fn setup(p: f64, bc: BoundaryCondition, n: usize) -> (EnergySpec, ProxParams) {
        let grid = Grid::unit(1, n, bc).unwrap();
        (EnergySpec::new(p, grid).unwrap(), ProxParams::new(1.0, &grid))
    }

    #[test]
    fn zero_stays_zero() {
        for p in [1.0, 1.5, 2.0, 3.0] {
            let (spec, params) = setup(p, BoundaryCondition::Dirichlet, 16);
            let tg = TimeGrid::new(0.1, 10).unwrap();
            let traj = evolve(&spec, &Field::zeros(*spec.grid()), &Forcing::Zero, &tg, &params).unwrap();
            assert_eq!(traj.fields().len(), 11);
            assert!(traj.fields().iter().all(|u| u.values().iter().all(|&v| v == 0.0)));
        }
    }

    #[test]
    fn invalid_time_grid() {
        assert!(TimeGrid::new(0.0, 10).is_err());
        assert!(TimeGrid::new(1.0, 0).is_err());
    }

    #[test]
    fn sup_distance_examples() {
        let (spec, params) = setup(2.0, BoundaryCondition::Neumann, 16);
        let grid = *spec.grid();
        let x0 = Field::from_fn(grid, |c| (3.0 * c[0]).cos()).unwrap();
        let tg = TimeGrid::new(0.05, 5).unwrap();
        let a = evolve(&spec, &x0, &Forcing::Zero, &tg, &params).unwrap();
        assert_eq!(sup_distance(&a, &a).unwrap(), 0.0);

        // Neumann flow commutes with constant shifts
        let c = 0.37;
        let b = evolve(&spec, &x0.axpy(c, &Field::constant(grid, 1.0)).unwrap(), &Forcing::Zero, &tg, &params).unwrap();
        assert!((sup_distance(&a, &b).unwrap() - c).abs() < 1e-6);

        let other = evolve(&spec, &x0, &Forcing::Zero, &TimeGrid::new(0.05, 4).unwrap(), &params).unwrap();
        assert!(matches!(sup_distance(&a, &other), Err(Error::TimeGridMismatch)));
    }

    #[test]
    fn forcing_table_uses_left_open_intervals() {
        let grid = Grid::unit(1, 2, BoundaryCondition::Neumann).unwrap();
        let f = Forcing::table(vec![
            (0.5, Field::constant(grid, 2.0)),
            (0.0, Field::constant(grid, 1.0)),
        ])
        .unwrap();
        assert_eq!(f.at(0.0, &grid).unwrap().values()[0], 1.0);
        assert_eq!(f.at(0.5, &grid).unwrap().values()[0], 1.0);
        assert_eq!(f.at(0.51, &grid).unwrap().values()[0], 2.0);
        assert!(Forcing::table(vec![]).is_err());
    }

    #[test]
    fn constant_forcing_neumann_grows_mean() {
        // the mean of a Neumann solution moves at the forcing mean
        let (spec, params) = setup(1.5, BoundaryCondition::Neumann, 16);
        let grid = *spec.grid();
        let x0 = Field::from_fn(grid, |c| (3.0 * c[0]).sin()).unwrap();
        let tg = TimeGrid::new(0.2, 20).unwrap();
        let f = Forcing::separable(|t| 1.0 + t, Field::constant(grid, 1.0));
        let traj = evolve(&spec, &x0, &f, &tg, &params).unwrap();
        let mean = |u: &Field| u.values().iter().sum::<f64>() / 16.0;
        let expected: f64 = (1..=20).map(|k| 0.01 * (1.0 + tg.node(k))).sum();
        assert!((mean(traj.last()) - mean(&x0) - expected).abs() < 1e-6);
    }

    #[test]
    fn failure_keeps_partial_trajectory() {
        let (spec, params) = setup(1.0, BoundaryCondition::Dirichlet, 32);
        let x0 = Field::from_fn(*spec.grid(), |c| if c[0] < 0.3 { 1.0 } else { -1.0 }).unwrap();
        let tg = TimeGrid::new(0.1, 10).unwrap();
        let params = params.with_max_iters(2).with_gap_tol(1e-15);
        match evolve(&spec, &x0, &Forcing::Zero, &tg, &params) {
            Err(e @ Error::Evolve { .. }) => {
                assert!(e.is_solver_failure());
                if let Error::Evolve { step, partial, .. } = e {
                    assert_eq!(step, 1);
                    assert_eq!(partial.fields().len(), 1);
                }
            }
            other => panic!("expected evolve failure, got {other:?}"),
        }
    }

    #[test]
    fn csv_and_manifest() {
        let (spec, params) = setup(2.0, BoundaryCondition::Dirichlet, 4);
        let x0 = Field::constant(*spec.grid(), 1.0);
        let tg = TimeGrid::new(0.01, 2).unwrap();
        let traj = evolve(&spec, &x0, &Forcing::Zero, &tg, &params).unwrap();
        let mut csv = Vec::new();
        traj.write_csv(&mut csv).unwrap();
        let csv = String::from_utf8(csv).unwrap();
        assert_eq!(csv.lines().count(), 1 + 3 * 4);
        assert!(csv.starts_with("k,t,cell_index,value\n0,0.0000000000000000e0,0,1.0000000000000000e0\n"));
        let mut man = Vec::new();
        traj.write_manifest(&spec, &params, &mut man).unwrap();
        let man = String::from_utf8(man).unwrap();
        assert!(man.contains("steps = 2"));
        assert!(man.lines().any(|l| l.starts_with("2,")));
    }
}
