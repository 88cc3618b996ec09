//! Resolvent `(I + tau dE_p)^{-1}` of the discrete energy.
//!
//! The resolvent of `w` is the minimizer of `E_p(u) + |u - w|^2 / (2 tau)`.
//! It is computed by the accelerated first-order primal-dual iteration on
//!
//! ```text
//! min_u max_g  <grad u, g> - F*(g) + |u - w|^2 / (2 tau)
//! ```
//!
//! with `F(G) = (1/p) sum_e |G_e|^p * cellvol`. The dual prox is radial per
//! extended cell and reduces to the scalar magnitude prox
//! [`prox_power_magnitude`] through the Moreau identity; at `p = 1` it is the
//! projection onto the unit ball. The same iteration runs for every `p`.
//!
//! The dual variable `g` converges to the flux `|G|^{p-2} G` of the minimizer,
//! and the minimizer satisfies `u = w + tau div g`.

use crate::energy::{face_energy_raw, EnergySpec};
use crate::error::{Error, Result};
use crate::geometry::{div_into, grad_into, FaceField, Field, Grid};

/// Primal and dual step sizes of the splitting.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PdSteps {
    pub primal: f64,
    pub dual: f64,
    /// Step-size acceleration driven by the `1/tau` strong convexity of the
    /// quadratic term. Without it the relaxation parameter stays at 1. At
    /// `p = 2` acceleration uses constant steps set by both strong convexity
    /// moduli, and `primal`/`dual` are ignored.
    pub accelerate: bool,
}

impl PdSteps {
    /// `primal = dual = 1/L` with `L` the gradient norm bound of `grid`.
    pub fn for_grid(grid: &Grid) -> Self {
        let l = grid.grad_norm_bound();
        PdSteps { primal: 1.0 / l, dual: 1.0 / l, accelerate: true }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProxParams {
    /// Resolvent step, in time units.
    pub tau: f64,
    pub max_iters: usize,
    /// Stopping threshold on the relative primal-dual gap.
    pub gap_tol: f64,
    pub steps: PdSteps,
}

impl ProxParams {
    pub fn new(tau: f64, grid: &Grid) -> Self {
        ProxParams { tau, max_iters: 200_000, gap_tol: 1e-10, steps: PdSteps::for_grid(grid) }
    }

    pub fn with_gap_tol(mut self, gap_tol: f64) -> Self {
        self.gap_tol = gap_tol;
        self
    }

    pub fn with_max_iters(mut self, max_iters: usize) -> Self {
        self.max_iters = max_iters;
        self
    }

    pub fn validate(&self, grid: &Grid) -> Result<()> {
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(Error::InvalidParameter(format!("tau must be > 0, got {}", self.tau)));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidParameter("max_iters must be positive".into()));
        }
        if !(self.gap_tol.is_finite() && self.gap_tol > 0.0) {
            return Err(Error::InvalidParameter(format!("gap_tol must be > 0, got {}", self.gap_tol)));
        }
        let PdSteps { primal, dual, .. } = self.steps;
        if !(primal > 0.0 && dual > 0.0 && primal.is_finite() && dual.is_finite()) {
            return Err(Error::InvalidParameter("primal and dual steps must be positive".into()));
        }
        let l = grid.grad_norm_bound();
        if primal * dual * l * l > 1.0 + 1e-12 {
            return Err(Error::InvalidParameter(format!(
                "step product {:.6e} exceeds 1/L^2 = {:.6e}",
                primal * dual,
                1.0 / (l * l)
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProxReport {
    pub iterations: usize,
    pub final_gap: f64,
    pub converged: bool,
}

/// The `rho >= 0` minimizing `(tau/p) rho^p + (rho - s)^2 / 2`.
pub fn prox_power_magnitude(s: f64, tau: f64, p: f64) -> Result<f64> {
    if !(s.is_finite() && s >= 0.0) {
        return Err(Error::InvalidParameter(format!("magnitude must be ≥ 0, got {s}")));
    }
    if !(tau.is_finite() && tau > 0.0) {
        return Err(Error::InvalidParameter(format!("tau must be > 0, got {tau}")));
    }
    if !(p.is_finite() && p >= 1.0) {
        return Err(Error::InvalidParameter(format!("p must be ≥ 1, got {p}")));
    }
    Ok(scalar_prox(s, tau, p))
}

/// Solves `rho + tau rho^{p-1} = s` by Newton's method inside a shrinking
/// bracket, bisecting whenever the Newton iterate leaves it.
pub(crate) fn scalar_prox(s: f64, tau: f64, p: f64) -> f64 {
    if s == 0.0 {
        return 0.0;
    }
    if p == 1.0 {
        return (s - tau).max(0.0);
    }
    if p == 2.0 {
        return s / (1.0 + tau);
    }
    let e = p - 1.0;
    let f = |x: f64| x + tau * x.powf(e) - s;
    // both bounds satisfy f >= 0
    let mut hi = s.min((s / tau).powf(1.0 / e));
    let mut lo = 0.0;
    let mut x = hi;
    let abs_tol = 1e-14 * s.max(1.0);
    for _ in 0..200 {
        let fx = f(x);
        if fx > 0.0 {
            hi = x;
        } else if fx < 0.0 {
            lo = x;
        } else {
            return x;
        }
        let slope = 1.0 + tau * e * x.powf(e - 1.0);
        let mut next = x - fx / slope;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        let step = (next - x).abs();
        x = next;
        if step <= (4.0 * f64::EPSILON * x).min(abs_tol) || hi - lo <= 2.0 * f64::EPSILON * hi {
            break;
        }
    }
    x
}

/// Magnitude of `prox_{sigma F*}` applied to a dual vector of magnitude `y`.
#[inline]
fn dual_magnitude(y: f64, sigma: f64, p: f64) -> f64 {
    if p == 1.0 {
        return y.min(1.0);
    }
    // Moreau: y - sigma * prox_{F/sigma}(y/sigma); the optimality condition
    // of the inner prox turns the difference into rho^{p-1}.
    let rho = scalar_prox(y / sigma, 1.0 / sigma, p);
    if rho > 0.0 {
        rho.powf(p - 1.0)
    } else {
        y
    }
}

/// Fenchel-Young residual `F(G) + F*(g) - <G, g>`, summed per extended cell.
/// Nonnegative by construction; at `p = 1`, `g` is projected first.
fn fenchel_young(p: f64, gu: &[f64], g: &[f64], grid: &Grid) -> f64 {
    let n = grid.extended_count();
    let dim = grid.dim();
    let q = if p == 1.0 { f64::INFINITY } else { p / (p - 1.0) };
    let mut s = 0.0;
    for e in 0..n {
        let (mut gm2, mut um2, mut dot) = (0.0, 0.0, 0.0);
        for a in 0..dim {
            let (x, y) = (gu[a * n + e], g[a * n + e]);
            gm2 += y * y;
            um2 += x * x;
            dot += x * y;
        }
        let (gm, um) = (gm2.sqrt(), um2.sqrt());
        let term = if p == 2.0 {
            // same value without the cancellation
            let mut d2 = 0.0;
            for a in 0..dim {
                let d = gu[a * n + e] - g[a * n + e];
                d2 += d * d;
            }
            0.5 * d2
        } else if p == 1.0 {
            let scale = if gm > 1.0 { 1.0 / gm } else { 1.0 };
            um - dot * scale
        } else {
            um.powf(p) / p + gm.powf(q) / q - dot
        };
        s += term.max(0.0);
    }
    s * grid.cell_volume()
}

struct GapEval {
    relative: f64,
    primal: f64,
}

/// Gap split as `FY(grad u, g) + |u - w - tau div g|^2 / (2 tau)`.
fn gap_terms(p: f64, grid: &Grid, tau: f64, w: &[f64], u: &[f64], g: &[f64], divg: &[f64], gu: &mut [f64]) -> GapEval {
    grad_into(grid, u, gu);
    let fy = fenchel_young(p, gu, g, grid);
    let resid: f64 = u
        .iter()
        .zip(w)
        .zip(divg)
        .map(|((ui, wi), di)| {
            let r = ui - wi - tau * di;
            r * r
        })
        .sum::<f64>()
        * grid.cell_volume();
    let gap = fy + resid / (2.0 * tau);
    let dist: f64 = u.iter().zip(w).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() * grid.cell_volume();
    let primal = face_energy_raw(p, grid, gu) + dist / (2.0 * tau);
    GapEval { relative: gap / primal.abs().max(1.0), primal }
}

/// Relative primal-dual gap of the pair `(u, g)` for the resolvent of `w`.
///
/// The sign convention for `g` is that of the flux: at the saddle point
/// `g = |grad u|^{p-2} grad u` and `u = w + tau div g`.
pub fn pd_gap(spec: &EnergySpec, w: &Field, u: &Field, g: &FaceField, tau: f64) -> Result<f64> {
    let grid = spec.grid();
    if w.grid() != grid || u.grid() != grid || g.grid() != grid {
        return Err(Error::GridMismatch);
    }
    if !(tau > 0.0) {
        return Err(Error::InvalidParameter(format!("tau must be > 0, got {tau}")));
    }
    let mut divg = vec![0.0; grid.cell_count()];
    div_into(grid, g.values(), &mut divg);
    let mut gu = vec![0.0; grid.dim() * grid.extended_count()];
    Ok(gap_terms(spec.p(), grid, tau, w.values(), u.values(), g.values(), &divg, &mut gu).relative)
}

/// Primal objective `E_p(u) + |u - w|^2 / (2 tau)`.
pub fn primal_objective(spec: &EnergySpec, w: &Field, u: &Field, tau: f64) -> Result<f64> {
    let e = crate::energy::energy(spec, u)?;
    Ok(e + w.distance(u)?.powi(2) / (2.0 * tau))
}

/// Reusable resolvent solver. Successive calls warm-start from the previous
/// primal/dual pair.
pub struct Resolvent {
    spec: EnergySpec,
    params: ProxParams,
    u: Vec<f64>,
    ubar: Vec<f64>,
    u_prev: Vec<f64>,
    g: Vec<f64>,
    gu: Vec<f64>,
    divg: Vec<f64>,
    cand: Vec<f64>,
    warm: bool,
}

/// Gap checks happen at iteration 0 and then every this many iterations.
const CHECK_EVERY: usize = 10;

impl Resolvent {
    pub fn new(spec: EnergySpec, params: ProxParams) -> Result<Self> {
        params.validate(spec.grid())?;
        let grid = spec.grid();
        let nc = grid.cell_count();
        let nf = grid.dim() * grid.extended_count();
        Ok(Resolvent {
            spec,
            params,
            u: vec![0.0; nc],
            ubar: vec![0.0; nc],
            u_prev: vec![0.0; nc],
            g: vec![0.0; nf],
            gu: vec![0.0; nf],
            divg: vec![0.0; nc],
            cand: vec![0.0; nc],
            warm: false,
        })
    }

    pub fn spec(&self) -> &EnergySpec {
        &self.spec
    }

    pub fn params(&self) -> &ProxParams {
        &self.params
    }

    /// Seeds the next solve with a primal/dual pair.
    pub fn warm_start(&mut self, u: &Field, g: &FaceField) -> Result<()> {
        if u.grid() != self.spec.grid() || g.grid() != self.spec.grid() {
            return Err(Error::GridMismatch);
        }
        self.u.copy_from_slice(u.values());
        self.g.copy_from_slice(g.values());
        self.warm = true;
        Ok(())
    }

    /// Dual variable of the last solve (the flux of the returned minimizer).
    pub fn dual(&self) -> FaceField {
        FaceField::new(*self.spec.grid(), self.g.clone()).expect("finite dual")
    }

    pub fn solve(&mut self, w: &Field) -> Result<(Field, ProxReport)> {
        let grid = *self.spec.grid();
        if w.grid() != &grid {
            return Err(Error::GridMismatch);
        }
        let w = w.values();
        let p = self.spec.p();
        let tau = self.params.tau;
        let n = grid.extended_count();
        let dim = grid.dim();

        if !self.warm {
            self.u.copy_from_slice(w);
            self.g.iter_mut().for_each(|v| *v = 0.0);
            self.warm = true;
        }
        self.ubar.copy_from_slice(&self.u);

        let mut t = self.params.steps.primal;
        let mut sigma = self.params.steps.dual;
        let gamma = 1.0 / tau;
        // at p = 2 both terms are strongly convex (moduli 1/tau and 1), which
        // admits constant steps with a linear rate
        let linear_rate = self.params.steps.accelerate && p == 2.0;
        let mut fixed_theta = 1.0;
        if linear_rate {
            let mu = 2.0 * gamma.sqrt() / grid.grad_norm_bound();
            t = mu / (2.0 * gamma);
            sigma = mu / 2.0;
            fixed_theta = 1.0 / (1.0 + mu);
        }
        let mut best_gap = f64::INFINITY;

        for it in 0..=self.params.max_iters {
            if it > 0 {
                // dual ascent with radial prox
                grad_into(&grid, &self.ubar, &mut self.gu);
                for e in 0..n {
                    let mut m2 = 0.0;
                    for a in 0..dim {
                        let y = self.g[a * n + e] + sigma * self.gu[a * n + e];
                        self.g[a * n + e] = y;
                        m2 += y * y;
                    }
                    if m2 == 0.0 {
                        continue;
                    }
                    let m = m2.sqrt();
                    let scale = dual_magnitude(m, sigma, p) / m;
                    for a in 0..dim {
                        self.g[a * n + e] *= scale;
                    }
                }
                // primal descent, prox of the quadratic
                div_into(&grid, &self.g, &mut self.divg);
                self.u_prev.copy_from_slice(&self.u);
                let denom = tau + t;
                for ((ui, di), wi) in self.u.iter_mut().zip(&self.divg).zip(w) {
                    *ui = (tau * (*ui + t * di) + t * wi) / denom;
                }
                let theta = if linear_rate {
                    fixed_theta
                } else if self.params.steps.accelerate {
                    let th = 1.0 / (1.0 + 2.0 * gamma * t).sqrt();
                    t *= th;
                    sigma /= th;
                    th
                } else {
                    1.0
                };
                for ((b, ui), up) in self.ubar.iter_mut().zip(&self.u).zip(&self.u_prev) {
                    *b = ui + theta * (ui - up);
                }
            }

            if it % CHECK_EVERY == 0 || it == self.params.max_iters {
                div_into(&grid, &self.g, &mut self.divg);
                let at_iterate = gap_terms(p, &grid, tau, w, &self.u, &self.g, &self.divg, &mut self.gu);
                // primal point recovered from the dual variable
                for ((c, wi), di) in self.cand.iter_mut().zip(w).zip(&self.divg) {
                    *c = wi + tau * di;
                }
                let at_dual = gap_terms(p, &grid, tau, w, &self.cand, &self.g, &self.divg, &mut self.gu);
                let use_dual = at_dual.primal < at_iterate.primal;
                let gap = if use_dual { at_dual.relative } else { at_iterate.relative };
                best_gap = gap;
                if gap <= self.params.gap_tol {
                    if use_dual {
                        self.u.copy_from_slice(&self.cand);
                    }
                    let report = ProxReport { iterations: it, final_gap: gap, converged: true };
                    return Ok((Field::new(grid, self.u.clone())?, report));
                }
            }
        }
        Err(Error::NotConverged(ProxReport {
            iterations: self.params.max_iters,
            final_gap: best_gap,
            converged: false,
        }))
    }
}

/// One backward-Euler step: the minimizer of `E_p(v) + |v - w|^2 / (2 tau)`.
pub fn resolvent(spec: &EnergySpec, w: &Field, params: &ProxParams) -> Result<(Field, ProxReport)> {
    Resolvent::new(*spec, *params)?.solve(w)
}
