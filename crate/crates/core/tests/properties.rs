mod common;

use common::*;
use plaplace::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn p2_resolvent_matches_direct_solve() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for bc in BCS {
        let grid = Grid::unit(2, 8, bc).unwrap();
        let spec = EnergySpec::new(2.0, grid).unwrap();
        let w = random_field(grid, &mut rng, 1.0);
        let tau = 0.01;
        let params = ProxParams::new(tau, &grid).with_gap_tol(1e-20);
        let (u, _) = resolvent(&spec, &w, &params).unwrap();
        let exact = direct_solve(&w, tau);
        let rel = u.distance(&exact).unwrap() / exact.norm();
        assert!(rel <= 1e-8, "{bc}: relative error {rel:e}");
    }
}

#[test]
fn tiny_step_is_identity() {
    for bc in BCS {
        for p in [1.0, 1.5, 2.0, 3.0] {
            let grid = Grid::unit(2, 8, bc).unwrap();
            let spec = EnergySpec::new(p, grid).unwrap();
            let pi = std::f64::consts::PI;
            let w = Field::from_fn(grid, |c| (pi * c[0]).sin() * (pi * c[1]).sin()).unwrap();
            let (u, _) = resolvent(&spec, &w, &ProxParams::new(1e-8, &grid)).unwrap();
            let moved = u.distance(&w).unwrap();
            assert!(moved <= 1e-6 * w.norm(), "{bc} p={p}: moved {moved:e}");
            if p > 1.0 {
                let first_order = 1e-8 * subgradient(&spec, &w).unwrap().norm();
                assert!((moved - first_order).abs() <= 1e-2 * first_order, "{bc} p={p}");
            }
        }
    }
}

#[test]
fn neumann_constant_is_fixed() {
    for p in [1.0, 1.3, 2.0, 3.0] {
        let grid = Grid::unit(2, 6, BoundaryCondition::Neumann).unwrap();
        let spec = EnergySpec::new(p, grid).unwrap();
        let w = Field::constant(grid, 0.7);
        let (u, _) = resolvent(&spec, &w, &ProxParams::new(0.5, &grid)).unwrap();
        assert!(u.distance(&w).unwrap() <= 1e-10, "p = {p}");
    }
}

#[test]
fn tv_resolvent_of_constant() {
    let grid = Grid::unit(1, 8, BoundaryCondition::Dirichlet).unwrap();
    let spec = EnergySpec::new(1.0, grid).unwrap();
    let w = Field::constant(grid, 1.0);
    let (u, _) = resolvent(&spec, &w, &ProxParams::new(0.1, &grid).with_gap_tol(1e-13)).unwrap();
    let oracle = tv_oracle_1d(w.values(), grid.spacing(0), 0.1);
    for (a, b) in u.values().iter().zip(&oracle) {
        assert!((a - b).abs() <= 1e-7, "{a} vs oracle {b}");
        assert!((a - 0.8).abs() <= 1e-7, "{a}");
    }
}

#[test]
fn tv_resolvent_of_random_datum_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let grid = Grid::unit(1, 8, BoundaryCondition::Dirichlet).unwrap();
    let spec = EnergySpec::new(1.0, grid).unwrap();
    let w = random_field(grid, &mut rng, 1.0);
    let (u, _) = resolvent(&spec, &w, &ProxParams::new(0.05, &grid).with_gap_tol(1e-13)).unwrap();
    let oracle = tv_oracle_1d(w.values(), grid.spacing(0), 0.05);
    for (a, b) in u.values().iter().zip(&oracle) {
        assert!((a - b).abs() <= 1e-6, "{a} vs oracle {b}");
    }
}

fn primal(spec: &EnergySpec, w: &Field, u: &Field, tau: f64) -> f64 {
    energy(spec, u).unwrap() + w.distance(u).unwrap().powi(2) / (2.0 * tau)
}

#[test]
fn resolvent_is_nonexpansive() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let gap_tol = 1e-11;
    for bc in BCS {
        for p in [1.0, 1.2, 2.0, 3.0] {
            let grid = Grid::unit(2, 6, bc).unwrap();
            let spec = EnergySpec::new(p, grid).unwrap();
            let tau = 0.05;
            let params = ProxParams::new(tau, &grid).with_gap_tol(gap_tol);
            for _ in 0..3 {
                let w1 = random_field(grid, &mut rng, 1.0);
                let w2 = w1.axpy(1.0, &random_field(grid, &mut rng, 0.3)).unwrap();
                let (u1, _) = resolvent(&spec, &w1, &params).unwrap();
                let (u2, _) = resolvent(&spec, &w2, &params).unwrap();
                // gap >= |u - u*|^2 / (2 tau) bounds each solve's error
                let err = |w: &Field, u: &Field| (2.0 * tau * gap_tol * primal(&spec, w, u, tau).max(1.0)).sqrt();
                let slack = 10.0 * (err(&w1, &u1) + err(&w2, &u2));
                let du = u1.distance(&u2).unwrap();
                let dw = w1.distance(&w2).unwrap();
                assert!(du <= dw + slack, "{bc} p={p}: {du} > {dw}");
            }
        }
    }
}

#[test]
fn resolvent_satisfies_subgradient_inequality() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for bc in BCS {
        for p in [1.0, 1.5, 2.0, 3.0] {
            let grid = Grid::unit(2, 6, bc).unwrap();
            let spec = EnergySpec::new(p, grid).unwrap();
            let tau = 0.05;
            let w = random_field(grid, &mut rng, 1.0);
            let (u, _) = resolvent(&spec, &w, &ProxParams::new(tau, &grid).with_gap_tol(1e-11)).unwrap();
            let slope = w.axpy(-1.0, &u).unwrap().scaled(1.0 / tau);
            let eu = energy(&spec, &u).unwrap();
            for _ in 0..20 {
                let v = u.axpy(1.0, &random_field(grid, &mut rng, 0.5)).unwrap();
                let dv = v.axpy(-1.0, &u).unwrap();
                let lhs = energy(&spec, &v).unwrap();
                let rhs = eu + l2_inner(&slope, &dv).unwrap();
                assert!(lhs >= rhs - 1e-5 * (1.0 + lhs.abs()), "{bc} p={p}: {lhs} < {rhs}");
            }
        }
    }
}

#[test]
fn gap_is_nonnegative_on_random_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for trial in 0..100 {
        let bc = BCS[trial % 2];
        let p = [1.0, 1.1, 1.5, 2.0, 3.0][trial % 5];
        let grid = Grid::unit(2, 5, bc).unwrap();
        let spec = EnergySpec::new(p, grid).unwrap();
        let w = random_field(grid, &mut rng, 1.0);
        let u = random_field(grid, &mut rng, 1.0);
        let mut g = FaceField::zeros(grid);
        let scale = if p == 1.0 { 0.7 } else { 3.0 };
        for v in g.values_mut() {
            *v = rng.gen_range(-scale..scale);
        }
        let gap = pd_gap(&spec, &w, &u, &g, rng.gen_range(0.01..1.0)).unwrap();
        assert!(gap >= -1e-12, "trial {trial}: gap {gap:e}");
    }
}

#[test]
fn gap_bounds_distance_to_p2_solution() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    for bc in BCS {
        let grid = Grid::unit(2, 8, bc).unwrap();
        let spec = EnergySpec::new(2.0, grid).unwrap();
        let tau = 0.02;
        let w = random_field(grid, &mut rng, 1.0);
        let exact = direct_solve(&w, tau);
        for amp in [1e-1, 1e-3] {
            let u = exact.axpy(1.0, &random_field(grid, &mut rng, amp)).unwrap();
            let mut g = grad(&u);
            for v in g.values_mut() {
                *v += rng.gen_range(-amp..amp);
            }
            let gap = pd_gap(&spec, &w, &u, &g, tau).unwrap();
            let p_u = primal(&spec, &w, &u, tau);
            let bound = u.distance(&exact).unwrap().powi(2) / (2.0 * tau) / p_u.abs().max(1.0);
            assert!(gap >= bound * (1.0 - 1e-9), "{bc}: gap {gap:e} < {bound:e}");
        }
    }
}

fn field_strategy(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0f64..2.0, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn energy_is_convex(
        a in field_strategy(16),
        b in field_strategy(16),
        pi in 0usize..5,
        dirichlet in any::<bool>(),
    ) {
        let p = [1.0, 1.1, 1.5, 2.0, 3.0][pi];
        let bc = if dirichlet { BoundaryCondition::Dirichlet } else { BoundaryCondition::Neumann };
        let grid = Grid::unit(2, 4, bc).unwrap();
        let spec = EnergySpec::new(p, grid).unwrap();
        let (u, v) = (Field::new(grid, a).unwrap(), Field::new(grid, b).unwrap());
        let (eu, ev) = (energy(&spec, &u).unwrap(), energy(&spec, &v).unwrap());
        for theta in [0.25, 0.5, 0.75] {
            let mix = u.scaled(theta).axpy(1.0 - theta, &v).unwrap();
            let em = energy(&spec, &mix).unwrap();
            prop_assert!(em <= theta * eu + (1.0 - theta) * ev + 1e-10 * (1.0 + eu + ev));
        }
    }

    #[test]
    fn subgradient_inequality(
        a in field_strategy(16),
        b in field_strategy(16),
        pi in 0usize..4,
        dirichlet in any::<bool>(),
    ) {
        let p = [1.1, 1.5, 2.0, 3.0][pi];
        let bc = if dirichlet { BoundaryCondition::Dirichlet } else { BoundaryCondition::Neumann };
        let grid = Grid::unit(2, 4, bc).unwrap();
        let spec = EnergySpec::new(p, grid).unwrap();
        let (u, v) = (Field::new(grid, a).unwrap(), Field::new(grid, b).unwrap());
        let s = subgradient(&spec, &u).unwrap();
        let lhs = energy(&spec, &v).unwrap();
        let rhs = energy(&spec, &u).unwrap() + l2_inner(&s, &v.axpy(-1.0, &u).unwrap()).unwrap();
        prop_assert!(lhs >= rhs - 1e-9 * (1.0 + lhs.abs() + rhs.abs()));
    }

    #[test]
    fn neumann_energy_ignores_constants(a in field_strategy(16), c in -5.0f64..5.0, pi in 0usize..4) {
        let p = [1.0, 1.5, 2.0, 3.0][pi];
        let grid = Grid::unit(2, 4, BoundaryCondition::Neumann).unwrap();
        let spec = EnergySpec::new(p, grid).unwrap();
        let u = Field::new(grid, a).unwrap();
        let shifted = u.axpy(1.0, &Field::constant(grid, c)).unwrap();
        let (e0, e1) = (energy(&spec, &u).unwrap(), energy(&spec, &shifted).unwrap());
        prop_assert!((e0 - e1).abs() <= 1e-9 * (1.0 + e0));
    }
}

fn run(p: f64, x0: &Field, t: f64, steps: usize, gap_tol: f64) -> Trajectory {
    let grid = *x0.grid();
    let spec = EnergySpec::new(p, grid).unwrap();
    let tg = TimeGrid::new(t, steps).unwrap();
    let params = ProxParams::new(tg.tau(), &grid).with_gap_tol(gap_tol);
    evolve(&spec, x0, &Forcing::Zero, &tg, &params).unwrap()
}

#[test]
fn flow_contracts() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for bc in BCS {
        for p in [1.0, 1.5, 2.0] {
            let grid = Grid::unit(1, 32, bc).unwrap();
            let x = Field::from_fn(grid, |c| (3.0 * c[0]).sin()).unwrap();
            let y = x.axpy(1.0, &random_field(grid, &mut rng, 0.2)).unwrap();
            let gap_tol = 1e-10;
            let (a, b) = (run(p, &x, 0.05, 20, gap_tol), run(p, &y, 0.05, 20, gap_tol));
            let spec = EnergySpec::new(p, grid).unwrap();
            let e_max = [&a, &b].iter().flat_map(|t| t.energies(&spec).unwrap()).fold(1.0, f64::max);
            // per-step solve error from the gap bound, once per trajectory
            let slack = 2.0 * (2.0 * a.time_grid().tau() * gap_tol * e_max).sqrt();
            let d: Vec<f64> = a.fields().iter().zip(b.fields()).map(|(u, v)| u.distance(v).unwrap()).collect();
            for k in 1..d.len() {
                assert!(d[k] <= d[k - 1] + slack, "{bc} p={p} step {k}: {} > {}", d[k], d[k - 1]);
            }
        }
    }
}

#[test]
fn flow_dissipates_energy() {
    for bc in BCS {
        for p in [1.0, 1.5, 2.0, 3.0] {
            let grid = Grid::unit(1, 32, bc).unwrap();
            let spec = EnergySpec::new(p, grid).unwrap();
            let x = Field::from_fn(grid, |c| (5.0 * c[0]).cos() + c[0]).unwrap();
            let traj = run(p, &x, 0.05, 20, 1e-10);
            let e = traj.energies(&spec).unwrap();
            for k in 1..e.len() {
                assert!(e[k] <= e[k - 1] + 1e-8 * (1.0 + e[k - 1]), "{bc} p={p} step {k}");
            }
            if bc == BoundaryCondition::Dirichlet {
                let n: Vec<f64> = traj.fields().iter().map(Field::norm).collect();
                for k in 1..n.len() {
                    assert!(n[k] <= n[k - 1] + 1e-8, "{bc} p={p} step {k}");
                }
            }
        }
    }
}

// Order preservation is expected but not asserted.
#[test]
fn comparison_principle_report() {
    for p in [1.0, 1.5, 2.0] {
        let grid = Grid::unit(1, 32, BoundaryCondition::Dirichlet).unwrap();
        let x = Field::from_fn(grid, |c| (3.0 * c[0]).sin()).unwrap();
        let y = x.axpy(1.0, &Field::from_fn(grid, |c| 0.2 * c[0]).unwrap()).unwrap();
        let (a, b) = (run(p, &x, 0.05, 20, 1e-10), run(p, &y, 0.05, 20, 1e-10));
        let worst = a
            .fields()
            .iter()
            .zip(b.fields())
            .flat_map(|(u, v)| u.values().iter().zip(v.values()).map(|(s, t)| s - t).collect::<Vec<_>>())
            .fold(f64::NEG_INFINITY, f64::max);
        eprintln!("comparison p={p}: max(u - v) = {worst:.3e}");
    }
}

#[test]
fn time_refinement_is_first_order() {
    let grid = Grid::unit(1, 32, BoundaryCondition::Dirichlet).unwrap();
    let x = Field::from_fn(grid, |c| (std::f64::consts::PI * c[0]).sin()).unwrap();
    for p in [1.5, 2.0] {
        let finals: Vec<Field> = [10, 20, 40, 80].iter().map(|&s| run(p, &x, 0.1, s, 1e-12).last().clone()).collect();
        let diffs: Vec<f64> = finals.windows(2).map(|w| w[0].distance(&w[1]).unwrap()).collect();
        for d in diffs.windows(2) {
            let order = (d[0] / d[1]).log2();
            assert!(order >= 0.9, "p={p}: order {order}");
        }
    }
}
