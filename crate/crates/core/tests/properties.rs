use fastdiff_core::criteria::{choose_exponents, compute_ode_constants};
use fastdiff_core::elliptic::first_eigenpair;
use fastdiff_core::grid::sup_norm;
use fastdiff_core::parabolic::{simulate, SolverConfig};
use fastdiff_core::{Field, Grid, SystemParams};
use proptest::prelude::*;

fn standard() -> (SystemParams, Grid, Field) {
    let params = SystemParams::new(1.5, 1.5, 1.0, 1.0, 0.0, 1.0).unwrap();
    let grid = Grid::new(0.0, 1.0, 64).unwrap();
    let phi = first_eigenpair(1.5, &grid, 1e-10).unwrap().phi1;
    (params, grid, phi)
}

fn max_distance(a: &[fastdiff_core::StatePair], b: &[fastdiff_core::StatePair]) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| {
            let du =
                x.u.interior()
                    .iter()
                    .zip(y.u.interior())
                    .map(|(p, q)| (p - q).abs());
            let dv =
                x.v.interior()
                    .iter()
                    .zip(y.v.interior())
                    .map(|(p, q)| (p - q).abs());
            du.chain(dv).collect::<Vec<_>>()
        })
        .fold(0.0, f64::max)
}

#[test]
fn regularization_is_cauchy() {
    let (params, grid, phi) = standard();
    let runs: Vec<_> = [1e-2, 1e-3, 1e-4]
        .iter()
        .map(|&eps| {
            let mut cfg = SolverConfig::for_grid(&grid, 0.05).unwrap();
            cfg.eps_reg = eps;
            cfg.keep_states = true;
            cfg.stop_on_extinction = false;
            simulate(
                &phi.scaled(0.05),
                &phi.scaled(0.05),
                &params,
                &cfg,
                2.0,
                2.0,
            )
            .unwrap()
        })
        .collect();
    let d12 = max_distance(&runs[0].states, &runs[1].states);
    let d23 = max_distance(&runs[1].states, &runs[2].states);
    assert!(d23 < d12, "{d12} then {d23}");
}

#[test]
fn zero_is_absorbing() {
    let (params, grid, phi) = standard();
    let mut cfg = SolverConfig::for_grid(&grid, 0.3).unwrap();
    cfg.eps_reg = 1e-12;
    cfg.stop_on_extinction = false;
    let traj = simulate(
        &phi.scaled(0.01),
        &phi.scaled(0.01),
        &params,
        &cfg,
        2.0,
        2.0,
    )
    .unwrap();
    let t_ext = traj.extinction_time.unwrap();
    assert!(t_ext < 0.2);
    let tol = cfg.extinction_tol;
    for (i, &t) in traj.times.iter().enumerate() {
        if t >= t_ext {
            assert!(traj.sup_u[i] <= tol && traj.sup_v[i] <= tol, "t = {t}");
        }
    }
    assert!(sup_norm(&traj.final_state.u) <= tol);
}

#[test]
fn extinction_time_converges_under_refinement() {
    let params = SystemParams::new(1.5, 1.5, 1.0, 1.0, 0.0, 1.0).unwrap();
    let times: Vec<f64> = [256, 512]
        .iter()
        .map(|&n| {
            let grid = Grid::new(0.0, 1.0, n).unwrap();
            let phi = first_eigenpair(1.5, &grid, 1e-10).unwrap().phi1;
            let mut cfg = SolverConfig::for_grid(&grid, 0.2).unwrap();
            cfg.eps_reg = 1e-12;
            simulate(
                &phi.scaled(0.01),
                &phi.scaled(0.01),
                &params,
                &cfg,
                2.0,
                2.0,
            )
            .unwrap()
            .extinction_time
            .unwrap()
        })
        .collect();
    assert!((times[0] / times[1] - 1.0).abs() < 0.1, "{times:?}");
}

proptest! {
    #[test]
    fn decay_constant_falls_with_the_embedding_constant(
        gamma in 0.05f64..2.0,
        factor in 1.01f64..3.0,
        len in 0.2f64..3.0,
    ) {
        let params = SystemParams::new(1.5, 1.7, 0.8, 1.0, 0.0, len).unwrap();
        let (s, r) = choose_exponents(0.8, 1.0).unwrap();
        let lo = compute_ode_constants(&params, s, r, gamma, gamma, 0.5).unwrap();
        let hi = compute_ode_constants(&params, s, r, gamma * factor, gamma * factor, 0.5).unwrap();
        prop_assert!(lo.a1 > 0.0 && lo.b1 > 0.0 && lo.a2 > 0.0 && lo.b2 > 0.0);
        prop_assert!(hi.a1 < lo.a1 && hi.a2 < lo.a2);
    }
}
