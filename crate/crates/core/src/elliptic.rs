//! Torsion functions and the first eigenpair of the discrete p-Laplacian.

use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::grid::{sup_norm, Field, Grid};
use crate::math::{powf, sqrt};
use crate::plap::{self, EPS_FINAL, EPS_START};

const EIGEN_MAX_OUTER: usize = 500;

/// Solution of `-Δ_p φ = 1` with `φ = boundary_value` on the boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct TorsionSolution {
    pub phi: Field,
    pub p: f64,
    pub boundary_value: f64,
    /// `sup φ`.
    pub sup: f64,
    /// Max-norm residual of the final (regularized) equation.
    pub residual: f64,
    /// Rounding floor of that residual; see [`plap::DirichletSolution::residual_floor`].
    pub residual_floor: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EigenPair {
    pub lambda1: f64,
    /// Positive, normalized to `sup = 1`.
    pub phi1: Field,
    pub p: f64,
    pub iterations: usize,
}

fn check_p(p: f64) -> Result<()> {
    if !(p > 1.0 && p <= 2.0) {
        return Err(invalid!("p must lie in (1, 2] (got {p})"));
    }
    Ok(())
}

fn check_tol(tol: f64) -> Result<()> {
    if !(tol > 0.0) || !tol.is_finite() {
        return Err(invalid!("tolerance must be positive (got {tol})"));
    }
    Ok(())
}

pub fn solve_torsion(p: f64, delta0: f64, grid: &Grid, tol: f64) -> Result<TorsionSolution> {
    check_p(p)?;
    check_tol(tol)?;
    if !(delta0 >= 0.0) || !delta0.is_finite() {
        return Err(invalid!(
            "boundary value must be finite and >= 0 (got {delta0})"
        ));
    }
    let rhs = alloc::vec![1.0; grid.n_interior()];
    let sol = plap::solve_dirichlet(grid, p, delta0, &rhs, None, EPS_START, tol)?;
    let phi = Field::new(*grid, sol.interior, delta0)?;
    Ok(TorsionSolution {
        sup: sup_norm(&phi),
        phi,
        p,
        boundary_value: delta0,
        residual: sol.residual,
        residual_floor: sol.residual_floor,
    })
}

/// `∑ h |∇w|^p / ∑ h |w|^p` over cells and nodes respectively.
pub fn rayleigh_quotient(w: &Field, p: f64) -> f64 {
    let h = w.grid().h();
    let nodes = w.node_values();
    let top = plap::gradient_energy(&nodes, h, p);
    let bottom: f64 = (0..nodes.len())
        .map(|i| w.grid().weight(i) * powf(nodes[i].abs(), p))
        .sum();
    top / bottom
}

/// Inverse iteration `-Δ_p u_{k+1} = |w_k|^{p-2} w_k`, `w_{k+1} = u_{k+1} / sup u_{k+1}`,
/// with `λ` read off the Rayleigh quotient.
pub fn first_eigenpair(p: f64, grid: &Grid, tol: f64) -> Result<EigenPair> {
    check_p(p)?;
    check_tol(tol)?;
    let inner_tol = (1e-2 * tol).max(1e-11);
    let x_lo = grid.x_lo();
    let len = grid.measure();

    let mut w: Vec<f64> = (1..grid.n_cells())
        .map(|i| {
            let s = (grid.node(i) - x_lo) / len;
            4.0 * s * (1.0 - s)
        })
        .collect();
    let mut lambda = rayleigh_quotient(&Field::from_parts_unchecked(*grid, w.clone(), 0.0), p);
    let mut guess: Option<Vec<f64>> = None;

    for iter in 1..=EIGEN_MAX_OUTER {
        let rhs: Vec<f64> = w.iter().map(|x| powf(x.max(0.0), p - 1.0)).collect();
        let eps_start = if guess.is_some() {
            EPS_FINAL
        } else {
            EPS_START
        };
        let sol =
            plap::solve_dirichlet(grid, p, 0.0, &rhs, guess.as_deref(), eps_start, inner_tol)?;
        let sup = sol.interior.iter().fold(0.0f64, |a, x| a.max(x.abs()));
        if !(sup > 0.0) {
            return Err(Error::NoConvergence {
                what: "eigen inverse iteration (collapsed iterate)",
                iterations: iter,
                residual: f64::NAN,
            });
        }
        let w_new: Vec<f64> = sol.interior.iter().map(|x| x / sup).collect();
        let field = Field::from_parts_unchecked(*grid, w_new, 0.0);
        let lambda_new = rayleigh_quotient(&field, p);
        let change = w
            .iter()
            .zip(field.interior())
            .fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
        let converged = (lambda_new - lambda).abs() <= tol * lambda_new && change <= sqrt(tol);

        w = field.interior().to_vec();
        lambda = lambda_new;
        // if w is the eigenfunction, the next solve returns λ^{-1/(p-1)} w
        let scale = powf(lambda, -1.0 / (p - 1.0));
        guess = Some(w.iter().map(|x| scale * x).collect());

        if converged {
            if let Some(i) = w.iter().position(|&x| !(x > 0.0)) {
                return Err(Error::NoConvergence {
                    what: "eigenfunction lost positivity",
                    iterations: iter,
                    residual: w[i],
                });
            }
            return Ok(EigenPair {
                lambda1: lambda,
                phi1: field,
                p,
                iterations: iter,
            });
        }
    }
    Err(Error::NoConvergence {
        what: "eigen inverse iteration",
        iterations: EIGEN_MAX_OUTER,
        residual: f64::NAN,
    })
}
