//! Independent oracles shared by the integration targets.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use plaplace::*;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const BCS: [BoundaryCondition; 2] = [BoundaryCondition::Dirichlet, BoundaryCondition::Neumann];

pub fn random_field(grid: Grid, rng: &mut ChaCha8Rng, amp: f64) -> Field {
    Field::new(grid, (0..grid.cell_count()).map(|_| rng.gen_range(-amp..amp)).collect()).unwrap()
}

/// Five-point (or three-point) `I + tau L` with the zero ghost for Dirichlet.
pub fn shifted_laplacian(grid: &Grid, tau: f64) -> DMatrix<f64> {
    let cells = grid.cells_per_axis().to_vec();
    let (nx, ny) = (cells[0], if cells.len() == 2 { cells[1] } else { 1 });
    let n = nx * ny;
    let mut a = DMatrix::<f64>::identity(n, n);
    for j in 0..ny {
        for i in 0..nx {
            let c = i + nx * j;
            for axis in 0..grid.dim() {
                let h2 = grid.spacing(axis).powi(2);
                let (pos, len) = if axis == 0 { (i, nx) } else { (j, ny) };
                let stride = if axis == 0 { 1 } else { nx };
                for (exists, nb) in [(pos > 0, c.wrapping_sub(stride)), (pos + 1 < len, c + stride)] {
                    if exists {
                        a[(c, c)] += tau / h2;
                        a[(c, nb)] -= tau / h2;
                    } else if grid.bc() == BoundaryCondition::Dirichlet {
                        a[(c, c)] += tau / h2;
                    }
                }
            }
        }
    }
    a
}

pub fn direct_solve(w: &Field, tau: f64) -> Field {
    let a = shifted_laplacian(w.grid(), tau);
    let x = a.lu().solve(&DVector::from_column_slice(w.values())).unwrap();
    Field::new(*w.grid(), x.as_slice().to_vec()).unwrap()
}

/// Projected gradient on the box-constrained dual of the 1D Dirichlet TV
/// denoising problem `min sum_f |u_f - u_{f-1}| + h |u - w|^2 / (2 tau)`.
/// `g` holds the `n + 1` face duals and is updated in place.
pub fn tv_oracle_1d_from(w: &[f64], h: f64, tau: f64, g: &mut [f64], iters: usize) -> Vec<f64> {
    let n = w.len();
    let c = tau / h;
    // K u on faces 0..=n with zero outside
    let kt = |g: &[f64]| -> Vec<f64> { (0..n).map(|i| g[i] - g[i + 1]).collect() };
    let step = 1.0 / (4.0 * c * c);
    for _ in 0..iters {
        let ktg = kt(g);
        let u: Vec<f64> = (0..n).map(|i| w[i] - c * ktg[i]).collect();
        for f in 0..=n {
            let left = if f > 0 { u[f - 1] } else { 0.0 };
            let right = if f < n { u[f] } else { 0.0 };
            g[f] = (g[f] + step * c * (right - left)).clamp(-1.0, 1.0);
        }
    }
    let ktg = kt(g);
    (0..n).map(|i| w[i] - c * ktg[i]).collect()
}

pub fn tv_oracle_1d(w: &[f64], h: f64, tau: f64) -> Vec<f64> {
    tv_oracle_1d_from(w, h, tau, &mut vec![0.0; w.len() + 1], 200_000)
}
