//! Discrete p-Dirichlet energies.
//!
//! `E_p(u) = (1/p) sum_e |G_e(u)|^p * cellvol`, where `G_e` is the vector of
//! forward faces owned by extended cell `e`. Dirichlet mode sees the zero
//! extension of `u`, so at `p = 1` the boundary jumps are part of the total
//! variation. Neumann mode only sees interior faces.

use crate::error::{Error, Result};
use crate::geometry::{div, grad, BoundaryCondition, FaceField, Field, Grid};

/// Exponent plus the grid (and hence boundary mode) the energy acts on.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnergySpec {
    p: f64,
    grid: Grid,
}

impl EnergySpec {
    pub fn new(p: f64, grid: Grid) -> Result<Self> {
        if !(p.is_finite() && p >= 1.0) {
            return Err(Error::InvalidParameter(format!("p must be ≥ 1, got {p}")));
        }
        Ok(EnergySpec { p, grid })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn bc(&self) -> BoundaryCondition {
        self.grid.bc()
    }

    /// Conjugate exponent `p / (p - 1)`; infinite at `p = 1`.
    pub fn q(&self) -> f64 {
        if self.p == 1.0 {
            f64::INFINITY
        } else {
            self.p / (self.p - 1.0)
        }
    }

    fn check(&self, u: &Field) -> Result<()> {
        if u.grid() == &self.grid {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }
}

/// `(1/p) sum_e |G_e|^p * cellvol` over a face field.
pub fn face_energy(p: f64, g: &FaceField) -> f64 {
    face_energy_raw(p, g.grid(), g.values())
}

pub(crate) fn face_energy_raw(p: f64, grid: &Grid, g: &[f64]) -> f64 {
    let n = grid.extended_count();
    let mag = |e: usize| match grid.dim() {
        1 => g[e].abs(),
        _ => g[e].hypot(g[n + e]),
    };
    let s: f64 = if p == 1.0 {
        (0..n).map(mag).sum()
    } else {
        (0..n).map(|e| mag(e).powf(p)).sum::<f64>() / p
    };
    s * grid.cell_volume()
}

pub fn energy(spec: &EnergySpec, u: &Field) -> Result<f64> {
    spec.check(u)?;
    Ok(face_energy(spec.p, &grad(u)))
}

/// `|E_{p_n}(u) - E_1(u)|` for each `p_n`, in the boundary mode `bc`.
pub fn energy_limit_gap(u: &Field, p_seq: &[f64], bc: BoundaryCondition) -> Result<Vec<f64>> {
    energy_gaps(u, p_seq, 1.0, bc)
}

/// `|E_{p_n}(u) - E_{p0}(u)|` for each `p_n`.
pub(crate) fn energy_gaps(u: &Field, p_seq: &[f64], p0: f64, bc: BoundaryCondition) -> Result<Vec<f64>> {
    if p_seq.is_empty() {
        return Err(Error::InvalidParameter("exponent sequence is empty".into()));
    }
    let u = u.with_bc(bc);
    let faces = grad(&u);
    EnergySpec::new(p0, *u.grid())?;
    let limit = face_energy(p0, &faces);
    p_seq
        .iter()
        .map(|&p| {
            EnergySpec::new(p, *u.grid())?;
            Ok((face_energy(p, &faces) - limit).abs())
        })
        .collect()
}

/// Per-cell flux `|G|^{p-2} G`, zero where `G = 0`.
pub(crate) fn flux(p: f64, g: &FaceField) -> FaceField {
    let grid = *g.grid();
    let n = grid.extended_count();
    let dim = grid.dim();
    let mut out = FaceField::zeros(grid);
    let src = g.values();
    let dst = out.values_mut();
    for e in 0..n {
        let mag = g.cell_magnitude(e);
        if mag == 0.0 {
            continue;
        }
        let scale = mag.powf(p - 2.0);
        for a in 0..dim {
            dst[a * n + e] = scale * src[a * n + e];
        }
    }
    out
}

/// Minimal-norm element of the subdifferential, `-div(|G|^{p-2} G)`, for `p > 1`.
pub fn subgradient(spec: &EnergySpec, u: &Field) -> Result<Field> {
    spec.check(u)?;
    if spec.p == 1.0 {
        return Err(Error::SetValuedSubgradient);
    }
    Ok(div(&flux(spec.p, &grad(u))).scaled(-1.0))
}
