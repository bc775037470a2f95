//! The discrete 1-D p-Laplacian with the regularized flux `(d^2 + ε)^{(p-2)/2} d`.
//!
//! Cell `j` sits between nodes `j` and `j + 1` and carries the difference quotient
//! `d_j = (w_{j+1} - w_j) / h`. At an interior node `i` the operator is
//! `-(F(d_i) - F(d_{i-1})) / h`.
//!
//! [`solve_dirichlet`] solves `-Δ_p w = f` with a constant Dirichlet value by damped Newton on
//! the convex energy `h ∑ G(d_j) - h ∑ f_i w_i`, `G(d) = (d^2 + ε)^{p/2} / p`, continuing `ε`
//! geometrically down to its final value.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::math::{powf, signed_pow};
use crate::tridiag;

/// Final regularization of the elliptic solves.
pub const EPS_FINAL: f64 = 1e-12;
/// First stage of a cold-started continuation.
pub const EPS_START: f64 = 1e-2;

const STAGE_MAX_ITER: usize = 200;
const STAGE_TOL: f64 = 1e-6;
const ARMIJO: f64 = 1e-4;
const MAX_HALVINGS: usize = 60;

/// `(d^2 + ε)^{(p-2)/2} d`; with `ε = 0` the plain `|d|^{p-2} d`.
#[inline]
pub fn flux(d: f64, p: f64, eps: f64) -> f64 {
    if eps == 0.0 {
        signed_pow(d, p - 1.0)
    } else {
        powf(d * d + eps, 0.5 * (p - 2.0)) * d
    }
}

/// `(d^2 + ε)^{(p-2)/2}`, the lagged coefficient of the Picard iteration.
#[inline]
pub fn diffusivity(d: f64, p: f64, eps: f64) -> f64 {
    powf(d * d + eps, 0.5 * (p - 2.0))
}

#[inline]
fn flux_derivative(d: f64, p: f64, eps: f64) -> f64 {
    let s = d * d + eps;
    powf(s, 0.5 * (p - 4.0)) * ((p - 1.0) * d * d + eps)
}

#[inline]
fn potential(d: f64, p: f64, eps: f64) -> f64 {
    powf(d * d + eps, 0.5 * p) / p
}

/// Difference quotients of the full node vector (`n_cells + 1` values).
pub fn gradients(nodes: &[f64], h: f64) -> Vec<f64> {
    nodes.windows(2).map(|w| (w[1] - w[0]) / h).collect()
}

/// `-Δ_p` at the interior nodes of the full node vector.
pub fn apply(nodes: &[f64], h: f64, p: f64, eps: f64) -> Vec<f64> {
    let fluxes: Vec<f64> = gradients(nodes, h)
        .into_iter()
        .map(|d| flux(d, p, eps))
        .collect();
    fluxes.windows(2).map(|f| -(f[1] - f[0]) / h).collect()
}

/// `∑_cells h |d_j|^p`.
pub fn gradient_energy(nodes: &[f64], h: f64, p: f64) -> f64 {
    gradients(nodes, h)
        .into_iter()
        .map(|d| h * powf(d.abs(), p))
        .sum()
}

#[derive(Debug, Clone)]
pub struct DirichletSolution {
    pub interior: Vec<f64>,
    /// Max-norm residual of the regularized equation at [`Self::eps`].
    pub residual: f64,
    /// Residual attainable in floating point at the final iterate; convergence is declared
    /// at `max(tol, residual_floor)`.
    pub residual_floor: f64,
    pub eps: f64,
    pub newton_iterations: usize,
}

/// Solves `-Δ_p w = rhs` on `grid` with `w = boundary` at both ends.
///
/// `guess`, if given, warm-starts the Newton iteration and the continuation starts at
/// `eps_start`; the last stage runs at [`EPS_FINAL`] to the requested `tol`.
pub fn solve_dirichlet(
    grid: &Grid,
    p: f64,
    boundary: f64,
    rhs: &[f64],
    guess: Option<&[f64]>,
    eps_start: f64,
    tol: f64,
) -> Result<DirichletSolution> {
    debug_assert_eq!(rhs.len(), grid.n_interior());
    let mut w = match guess {
        Some(g) => g.to_vec(),
        None => alloc::vec![boundary; grid.n_interior()],
    };
    let mut eps = eps_start.max(EPS_FINAL);
    let mut total = 0;
    loop {
        let last = eps <= EPS_FINAL * (1.0 + 1e-9);
        let stage_tol = if last { tol } else { tol.max(STAGE_TOL) };
        let (residual, residual_floor, iters) =
            newton_stage(grid, p, eps, boundary, rhs, &mut w, stage_tol)?;
        total += iters;
        if last {
            return Ok(DirichletSolution {
                interior: w,
                residual,
                residual_floor,
                eps,
                newton_iterations: total,
            });
        }
        eps = (eps * 0.1).max(EPS_FINAL);
    }
}

struct Linearization {
    residual: Vec<f64>,
    lower: Vec<f64>,
    diag: Vec<f64>,
    upper: Vec<f64>,
}

fn full_nodes(boundary: f64, interior: &[f64]) -> Vec<f64> {
    let mut nodes = Vec::with_capacity(interior.len() + 2);
    nodes.push(boundary);
    nodes.extend_from_slice(interior);
    nodes.push(boundary);
    nodes
}

fn energy(h: f64, p: f64, eps: f64, boundary: f64, rhs: &[f64], w: &[f64]) -> f64 {
    let nodes = full_nodes(boundary, w);
    let stored: f64 = gradients(&nodes, h)
        .into_iter()
        .map(|d| potential(d, p, eps))
        .sum();
    let work: f64 = rhs.iter().zip(w).map(|(f, x)| f * x).sum();
    h * (stored - work)
}

fn residual_only(h: f64, p: f64, eps: f64, boundary: f64, rhs: &[f64], w: &[f64]) -> Vec<f64> {
    let nodes = full_nodes(boundary, w);
    apply(&nodes, h, p, eps)
        .into_iter()
        .zip(rhs)
        .map(|(a, f)| a - f)
        .collect()
}

fn linearize(h: f64, p: f64, eps: f64, boundary: f64, rhs: &[f64], w: &[f64]) -> Linearization {
    let nodes = full_nodes(boundary, w);
    let d = gradients(&nodes, h);
    let fluxes: Vec<f64> = d.iter().map(|&x| flux(x, p, eps)).collect();
    let stiff: Vec<f64> = d.iter().map(|&x| flux_derivative(x, p, eps)).collect();
    let n = w.len();
    let h2 = h * h;
    let mut residual = Vec::with_capacity(n);
    let mut lower = Vec::with_capacity(n);
    let mut diag = Vec::with_capacity(n);
    let mut upper = Vec::with_capacity(n);
    for i in 0..n {
        // interior node i + 1 sits between cells i and i + 1
        residual.push(-(fluxes[i + 1] - fluxes[i]) / h - rhs[i]);
        lower.push(-stiff[i] / h2);
        diag.push((stiff[i] + stiff[i + 1]) / h2);
        upper.push(-stiff[i + 1] / h2);
    }
    Linearization {
        residual,
        lower,
        diag,
        upper,
    }
}

/// Residual noise from rounding the iterate: unit roundoff times the largest row of the
/// Jacobian times the solution magnitude. With `ε = 1e-12` and fine grids this sits well above
/// `1e-10`, so it bounds the attainable residual from below.
fn roundoff_floor(lin: &Linearization, boundary: f64, w: &[f64]) -> f64 {
    let scale = max_abs(w).max(boundary.abs()).max(f64::MIN_POSITIVE);
    let row = lin
        .diag
        .iter()
        .zip(lin.lower.iter().zip(&lin.upper))
        .fold(0.0f64, |a, (d, (l, u))| a.max(d.abs() + l.abs() + u.abs()));
    8.0 * f64::EPSILON * row * scale
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, x| a.max(x.abs()))
}

fn newton_stage(
    grid: &Grid,
    p: f64,
    eps: f64,
    boundary: f64,
    rhs: &[f64],
    w: &mut Vec<f64>,
    tol: f64,
) -> Result<(f64, f64, usize)> {
    let h = grid.h();
    for iter in 0..STAGE_MAX_ITER {
        let lin = linearize(h, p, eps, boundary, rhs, w);
        let res = max_abs(&lin.residual);
        let floor = roundoff_floor(&lin, boundary, w);
        if res <= tol.max(floor) {
            return Ok((res, floor, iter));
        }
        let mut step: Vec<f64> = lin.residual.iter().map(|r| -r).collect();
        tridiag::solve(&lin.lower, &lin.diag, &lin.upper, &mut step);

        let e0 = energy(h, p, eps, boundary, rhs, w);
        // directional derivative of the energy along the step
        let slope: f64 = h * lin
            .residual
            .iter()
            .zip(&step)
            .map(|(r, s)| r * s)
            .sum::<f64>();
        let trial = |t: f64| -> Vec<f64> { w.iter().zip(&step).map(|(x, s)| x + t * s).collect() };

        if -slope <= 1e-13 * (1.0 + e0.abs()) {
            // Energy differences are below roundoff; judge the full step by its residual.
            let full = trial(1.0);
            let r_full = max_abs(&residual_only(h, p, eps, boundary, rhs, &full));
            if r_full < res {
                *w = full;
                continue;
            }
            if res <= tol.max(16.0 * floor) {
                return Ok((res, floor, iter));
            }
            return Err(Error::NoConvergence {
                what: "p-Laplacian Newton",
                iterations: iter,
                residual: res,
            });
        }

        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let cand = trial(t);
            if energy(h, p, eps, boundary, rhs, &cand) <= e0 + ARMIJO * t * slope {
                accepted = Some(cand);
                break;
            }
            t *= 0.5;
        }
        match accepted {
            Some(cand) => *w = cand,
            None => {
                return Err(Error::NoConvergence {
                    what: "p-Laplacian Newton line search",
                    iterations: iter,
                    residual: res,
                })
            }
        }
    }
    let lin = linearize(h, p, eps, boundary, rhs, w);
    let res = max_abs(&lin.residual);
    let floor = roundoff_floor(&lin, boundary, w);
    if res <= tol.max(floor) {
        return Ok((res, floor, STAGE_MAX_ITER));
    }
    Err(Error::NoConvergence {
        what: "p-Laplacian Newton",
        iterations: STAGE_MAX_ITER,
        residual: res,
    })
}
