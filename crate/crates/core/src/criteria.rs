//! Extinction-criteria constants and the explicit super/subsolution constructions.
//!
//! Everything is one-dimensional: the embedding `W_0^{1,p} -> L^2` is used in place of the
//! Sobolev exponent, and its constant is computed on the actual grid.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::elliptic::{solve_torsion, EigenPair, TorsionSolution};
use crate::error::{invalid, Error, Result};
use crate::grid::{lp_norm, Field, Grid};
use crate::math::{powf, rel_eq, sin, sqrt};
use crate::odecmp::{
    g_system, integrate_sampled, GSolution, IntegratorOptions, OdeParams, OdeState,
};
use crate::params::{classify_regime, RegimeClass, SystemParams};
use crate::plap::{self, EPS_FINAL, EPS_START};

/// Random fields tested against a computed embedding constant.
pub const EMBEDDING_TEST_FIELDS: usize = 100;
pub const EMBEDDING_SEED: u64 = 0x00c0_ffee;
/// Dilation of the domain carrying the critical-case supersolution.
pub const DILATION: f64 = 1.25;
const EMBEDDING_MAX_ITER: usize = 2000;
const TORSION_TOL: f64 = 1e-10;

/// Best discrete constant `γ` in `‖w‖_2 <= γ ‖w_x‖_p` over zero-boundary fields.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingConstant {
    pub p: f64,
    pub gamma: f64,
    pub grid: Grid,
    /// Maximizer, normalized to `‖w‖_2 = 1`.
    pub maximizer: Field,
    pub iterations: usize,
}

/// `‖w‖_2 / ‖w_x‖_p` with trapezoidal and cellwise quadrature.
pub fn embedding_ratio(w: &Field, p: f64) -> Result<f64> {
    let grad = powf(
        plap::gradient_energy(&w.node_values(), w.grid().h(), p),
        1.0 / p,
    );
    if !(grad > 0.0) {
        return Err(invalid!("field has zero gradient"));
    }
    Ok(lp_norm(w, 2.0)? / grad)
}

/// Maximizes the ratio by the ascent `-Δ_p u = w`, `w <- u / ‖u‖_2`, which increases it
/// monotonically, then checks the value against [`EMBEDDING_TEST_FIELDS`] random fields.
pub fn estimate_embedding_constant(p: f64, grid: &Grid, tol: f64) -> Result<EmbeddingConstant> {
    estimate_embedding_constant_seeded(p, grid, tol, EMBEDDING_SEED)
}

/// [`estimate_embedding_constant`] with the random test fields drawn from `seed`.
pub fn estimate_embedding_constant_seeded(
    p: f64,
    grid: &Grid,
    tol: f64,
    seed: u64,
) -> Result<EmbeddingConstant> {
    if !(p > 1.0 && p <= 2.0) {
        return Err(invalid!("p must lie in (1, 2] (got {p})"));
    }
    if !(tol > 0.0) {
        return Err(invalid!("tolerance must be positive (got {tol})"));
    }
    let inner_tol = (1e-2 * tol).max(1e-11);
    let len = grid.measure();
    let mut w = Field::from_fn(*grid, 0.0, |x| {
        sin(core::f64::consts::PI * (x - grid.x_lo()) / len)
    })?;
    w = w.scaled(1.0 / lp_norm(&w, 2.0)?);
    let mut ratio = embedding_ratio(&w, p)?;
    let mut guess: Option<Vec<f64>> = None;

    for iter in 1..=EMBEDDING_MAX_ITER {
        let eps_start = if guess.is_some() {
            EPS_FINAL
        } else {
            EPS_START
        };
        let sol = plap::solve_dirichlet(
            grid,
            p,
            0.0,
            w.interior(),
            guess.as_deref(),
            eps_start,
            inner_tol,
        )?;
        let u = Field::new(*grid, sol.interior, 0.0)?;
        let norm = lp_norm(&u, 2.0)?;
        if !(norm > 0.0) {
            return Err(Error::NoConvergence {
                what: "embedding ascent (collapsed iterate)",
                iterations: iter,
                residual: f64::NAN,
            });
        }
        let next = u.scaled(1.0 / norm);
        let next_ratio = embedding_ratio(&next, p)?;
        let change = (next_ratio - ratio).abs();
        w = next;
        ratio = next_ratio;
        // at a stationary point -Δ_p w = μ w with μ = ‖w_x‖_p^p
        let mu = powf(ratio, -p);
        guess = Some(
            w.interior()
                .iter()
                .map(|x| powf(mu, -1.0 / (p - 1.0)) * x)
                .collect(),
        );
        if change <= tol * ratio {
            let gamma = ratio;
            let worst = random_field_ratio_max(p, grid, EMBEDDING_TEST_FIELDS, seed)?;
            if worst > gamma * (1.0 + tol) {
                return Err(Error::NoConvergence {
                    what: "embedding ascent (beaten by a random test field)",
                    iterations: iter,
                    residual: worst / gamma - 1.0,
                });
            }
            return Ok(EmbeddingConstant {
                p,
                gamma,
                grid: *grid,
                maximizer: w,
                iterations: iter,
            });
        }
    }
    Err(Error::NoConvergence {
        what: "embedding ascent",
        iterations: EMBEDDING_MAX_ITER,
        residual: ratio,
    })
}

/// Largest ratio over `count` seeded random zero-boundary fields (sine sums and tents).
pub fn random_field_ratio_max(p: f64, grid: &Grid, count: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = grid.measure();
    let mut best = 0.0f64;
    for k in 0..count {
        let w = if k % 2 == 0 {
            let modes = rng.gen_range(1..=8usize);
            let coeffs: Vec<f64> = (1..=modes)
                .map(|j| rng.gen_range(-1.0..1.0) / j as f64)
                .collect();
            Field::from_fn(*grid, 0.0, |x| {
                let s = (x - grid.x_lo()) / len;
                coeffs
                    .iter()
                    .enumerate()
                    .map(|(j, c)| c * sin((j + 1) as f64 * core::f64::consts::PI * s))
                    .sum()
            })?
        } else {
            let peak = rng.gen_range(0.05..0.95);
            let height = rng.gen_range(0.1..2.0);
            Field::from_fn(*grid, 0.0, |x| {
                let s = (x - grid.x_lo()) / len;
                height
                    * if s < peak {
                        s / peak
                    } else {
                        (1.0 - s) / (1.0 - peak)
                    }
            })?
        };
        if let Ok(r) = embedding_ratio(&w, p) {
            best = best.max(r);
        }
    }
    Ok(best)
}

/// Norm exponents `(s, r)` with `m <= r/s <= 1/n` and `s, r >= 2`.
pub fn choose_exponents(m: f64, n: f64) -> Result<(f64, f64)> {
    if !(m > 0.0 && n > 0.0) {
        return Err(invalid!("need m, n > 0 (got m = {m}, n = {n})"));
    }
    if m * n > 1.0 && !rel_eq(m * n, 1.0, 1e-12) {
        return Err(invalid!(
            "need mn <= 1 for norm exponents (got mn = {})",
            m * n
        ));
    }
    let rho = sqrt(m / n);
    let s = (2.0f64).max(2.0 / rho);
    Ok((s, rho * s))
}

/// Constants of the comparison system satisfied by `(‖u‖_s, ‖v‖_r)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriteriaConstants {
    pub s: f64,
    pub r: f64,
    pub a1: f64,
    pub b1: f64,
    pub a2: f64,
    pub b2: f64,
    pub delta1: f64,
    /// Coupling exponents of the comparison system (`m, n`, or the shrunk pair in Case II).
    pub m: f64,
    pub n: f64,
}

impl CriteriaConstants {
    pub fn ode_params(&self, params: &SystemParams) -> Result<OdeParams> {
        OdeParams::new(
            self.a1,
            self.b1,
            self.a2,
            self.b2,
            params.p,
            params.q,
            self.m,
            self.n,
            self.delta1,
        )
    }
}

fn dissipation_constant(s: f64, p: f64, gamma: f64, measure: f64) -> f64 {
    (s - 1.0) * powf(p, p) / powf(s + p - 2.0, p)
        * powf(gamma, -p)
        * powf(measure, -p * ((s + p - 2.0) / (s * p) - 0.5))
}

pub fn compute_ode_constants(
    params: &SystemParams,
    s: f64,
    r: f64,
    gamma_p: f64,
    gamma_q: f64,
    delta1: f64,
) -> Result<CriteriaConstants> {
    params.validate()?;
    if !(s >= 2.0 && r >= 2.0) {
        return Err(invalid!("need s, r >= 2 (got s = {s}, r = {r})"));
    }
    if !(gamma_p > 0.0 && gamma_q > 0.0) {
        return Err(invalid!("embedding constants must be positive"));
    }
    if !(delta1 > 0.0 && delta1 < 1.0) {
        return Err(invalid!("need 0 < delta1 < 1 (got {delta1})"));
    }
    let omega = params.measure();
    Ok(CriteriaConstants {
        s,
        r,
        a1: dissipation_constant(s, params.p, gamma_p, omega),
        b1: powf(omega, 1.0 / s - params.m / r),
        a2: dissipation_constant(r, params.q, gamma_q, omega),
        b2: powf(omega, 1.0 / r - params.n / s),
        delta1,
        m: params.m,
        n: params.n,
    })
}

/// Inner exponents for `mn > 1`: `m1 = m c`, `n1 = n c` with `c = (mn)^{-1/2}`, so `m1 n1 = 1`.
pub fn shrink_exponents(m: f64, n: f64) -> Result<(f64, f64)> {
    if !(m * n > 1.0) {
        return Err(invalid!("exponent shrink needs mn > 1 (got {})", m * n));
    }
    let c = 1.0 / sqrt(m * n);
    Ok((m * c, n * c))
}

/// Primed constants for `mn > 1`, built on a Case II supersolution `(k^{l1} ψ_p, k^{l2} ψ_q)`:
/// `b1' = k^{l2(m-m1)} M_q^{m-m1} |Ω|^{1/s' - m1/r'}` and symmetrically.
pub fn compute_case_ii_constants(
    params: &SystemParams,
    s: f64,
    r: f64,
    gamma_p: f64,
    gamma_q: f64,
    delta2: f64,
    sup: &CaseIISupersolution,
) -> Result<CriteriaConstants> {
    let (m1, n1) = shrink_exponents(params.m, params.n)?;
    let mut shrunk = *params;
    shrunk.m = m1;
    shrunk.n = n1;
    let mut c = compute_ode_constants(&shrunk, s, r, gamma_p, gamma_q, delta2)?;
    c.b1 *= powf(powf(sup.k, sup.l2) * sup.mq, params.m - m1);
    c.b2 *= powf(powf(sup.k, sup.l1) * sup.mp, params.n - n1);
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitialConditionReport {
    pub pass: bool,
    /// `‖u0‖_s` and `‖v0‖_r`.
    pub norm_u: f64,
    pub norm_v: f64,
    /// Admissible interval for `‖u0‖_s`.
    pub lower: f64,
    pub upper: f64,
    /// `‖u0‖_s / lower` and `upper / ‖u0‖_s`; both `>= 1` on a pass.
    pub lower_slack: f64,
    pub upper_slack: f64,
}

/// `(b1/(δ a1))^{1/(p-1)} ‖v0‖_r^{m/(p-1)} <= ‖u0‖_s <= (δ a2/b2)^{1/n} ‖v0‖_r^{(q-1)/n}`.
pub fn check_initial_condition(
    u0: &Field,
    v0: &Field,
    constants: &CriteriaConstants,
    params: &SystemParams,
) -> Result<InitialConditionReport> {
    let norm_u = lp_norm(u0, constants.s)?;
    let norm_v = lp_norm(v0, constants.r)?;
    Ok(initial_condition_from_norms(
        norm_u, norm_v, constants, params,
    ))
}

pub fn initial_condition_from_norms(
    norm_u: f64,
    norm_v: f64,
    c: &CriteriaConstants,
    params: &SystemParams,
) -> InitialConditionReport {
    let (p, q) = (params.p, params.q);
    let lower = powf(c.b1 / (c.delta1 * c.a1), 1.0 / (p - 1.0)) * powf(norm_v, c.m / (p - 1.0));
    let upper = powf(c.delta1 * c.a2 / c.b2, 1.0 / c.n) * powf(norm_v, (q - 1.0) / c.n);
    let ratio = |a: f64, b: f64| {
        if b == 0.0 {
            if a == 0.0 {
                1.0
            } else {
                f64::INFINITY
            }
        } else {
            a / b
        }
    };
    let lower_slack = ratio(norm_u, lower);
    let upper_slack = ratio(upper, norm_u);
    let slack_tol = 1.0 - 1e-12;
    InitialConditionReport {
        pass: lower_slack >= slack_tol && upper_slack >= slack_tol,
        norm_u,
        norm_v,
        lower,
        upper,
        lower_slack,
        upper_slack,
    }
}

/// The stationary subsolution `(k^{θ1} φ1, k^{θ2} φ1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsolutionSpec {
    pub theta1: f64,
    pub theta2: f64,
    pub k: f64,
    /// Largest `k` for which both brackets `λ1 k^{θ1(p-1)} - k^{mθ2}`, `λ1 k^{θ2(p-1)} - k^{nθ1}`
    /// are nonpositive.
    pub k_max: f64,
    /// Largest `k` fitting under the initial data (`+inf` without data).
    pub k_data: f64,
    pub phi1: Field,
    pub lambda1: f64,
}

impl SubsolutionSpec {
    pub fn u(&self) -> Field {
        self.phi1.scaled(powf(self.k, self.theta1))
    }

    pub fn v(&self) -> Field {
        self.phi1.scaled(powf(self.k, self.theta2))
    }

    /// Pointwise `-Δ_p u_sub - v_sub^m` and `-Δ_q v_sub - u_sub^n` at the interior nodes.
    pub fn defects(&self, params: &SystemParams) -> (Vec<f64>, Vec<f64>) {
        let (u, v) = (self.u(), self.v());
        let h = u.grid().h();
        let du = plap::apply(&u.node_values(), h, params.p, 0.0);
        let dv = plap::apply(&v.node_values(), h, params.q, 0.0);
        (
            du.iter()
                .zip(v.interior())
                .map(|(a, b)| a - powf(*b, params.m))
                .collect(),
            dv.iter()
                .zip(u.interior())
                .map(|(a, b)| a - powf(*b, params.n))
                .collect(),
        )
    }
}

/// `θ1/θ2 = sqrt(m/n)`, inside `(m/(p-1), (p-1)/n)` when the non-extinction test holds.
pub fn default_thetas(params: &SystemParams) -> (f64, f64) {
    (sqrt(params.m / params.n), 1.0)
}

pub fn build_subsolution(
    params: &SystemParams,
    eigen: &EigenPair,
    theta1: f64,
    theta2: f64,
    data: Option<(&Field, &Field)>,
) -> Result<SubsolutionSpec> {
    let regime = classify_regime(params)?;
    if !regime.nonextinction_eligible {
        return Err(invalid!(
            "subsolution needs p = q, m, n <= p-1 and mn < (p-1)^2"
        ));
    }
    let (p, m, n) = (params.p, params.m, params.n);
    if !rel_eq(eigen.p, p, 1e-12) {
        return Err(invalid!(
            "eigenpair computed for p = {}, system has p = {p}",
            eigen.p
        ));
    }
    if !(theta1 > 0.0 && theta2 > 0.0) {
        return Err(invalid!("need theta1, theta2 > 0"));
    }
    let ratio = theta1 / theta2;
    if !(m / (p - 1.0) < ratio && ratio < (p - 1.0) / n) {
        return Err(invalid!(
            "theta1/theta2 = {ratio} outside ({}, {})",
            m / (p - 1.0),
            (p - 1.0) / n
        ));
    }
    let lambda = eigen.lambda1;
    let e1 = theta1 * (p - 1.0) - m * theta2;
    let e2 = theta2 * (p - 1.0) - n * theta1;
    let k_max = powf(lambda, -1.0 / e1).min(powf(lambda, -1.0 / e2));

    let mut k_data = f64::INFINITY;
    if let Some((u0, v0)) = data {
        if u0.grid() != eigen.phi1.grid() || v0.grid() != eigen.phi1.grid() {
            return Err(invalid!(
                "initial data and eigenfunction live on different grids"
            ));
        }
        for ((phi, u), v) in eigen
            .phi1
            .interior()
            .iter()
            .zip(u0.interior())
            .zip(v0.interior())
        {
            if *phi > 0.0 {
                k_data = k_data
                    .min(powf((u / phi).max(0.0), 1.0 / theta1))
                    .min(powf((v / phi).max(0.0), 1.0 / theta2));
            }
        }
        if !(k_data > 0.0) {
            return Err(Error::Construction(
                "initial data do not dominate any positive multiple of the eigenfunction".into(),
            ));
        }
    }
    Ok(SubsolutionSpec {
        theta1,
        theta2,
        k: k_max.min(k_data),
        k_max,
        k_data,
        phi1: eigen.phi1.clone(),
        lambda1: lambda,
    })
}

/// Linear interpolation of a field at `x` (inside its grid).
pub fn sample_linear(f: &Field, x: f64) -> f64 {
    let g = f.grid();
    let s = ((x - g.x_lo()) / g.h()).clamp(0.0, g.n_cells() as f64);
    let i = (s as usize).min(g.n_cells() - 1);
    let frac = s - i as f64;
    (1.0 - frac) * f.value(i) + frac * f.value(i + 1)
}

/// `(g1(t) φ_{p0}, g2(t) φ_{q0})` with torsion functions on the dilated domain.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticalSupersolution {
    pub grid: Grid,
    pub dilated: Grid,
    pub phi_p0: TorsionSolution,
    pub phi_q0: TorsionSolution,
    pub mp0: f64,
    pub mq0: f64,
    pub delta: f64,
    pub g0: (f64, f64),
    pub window: (f64, f64),
    pub g: GSolution,
    pub t0: f64,
    /// Torsion functions restricted (interpolated) to the original grid.
    pub phi_p_on_grid: Vec<f64>,
    pub phi_q_on_grid: Vec<f64>,
    g_times: Vec<f64>,
    g_values: Vec<(f64, f64)>,
}

const G_SAMPLES: usize = 4096;

impl CriticalSupersolution {
    /// `(g1(t), g2(t))`, linear between dense samples; zero from `t0` on.
    pub fn g_at(&self, t: f64) -> (f64, f64) {
        if t >= self.t0 {
            return (0.0, 0.0);
        }
        let dt = self.t0 / (G_SAMPLES as f64);
        let s = (t / dt).max(0.0);
        let i = (s as usize).min(G_SAMPLES - 1);
        let frac = s - i as f64;
        let (a, b) = (self.g_values[i], self.g_values[i + 1]);
        (
            (1.0 - frac) * a.0 + frac * b.0,
            (1.0 - frac) * a.1 + frac * b.1,
        )
    }

    /// The supersolution pair restricted to the original interior nodes at time `t`.
    pub fn fields_at(&self, t: f64) -> (Vec<f64>, Vec<f64>) {
        let (g1, g2) = self.g_at(t);
        (
            self.phi_p_on_grid.iter().map(|x| g1 * x).collect(),
            self.phi_q_on_grid.iter().map(|x| g2 * x).collect(),
        )
    }

    pub fn sample_times(&self) -> &[f64] {
        &self.g_times
    }
}

/// Builds the critical-case supersolution on `grid`.
///
/// `delta = None` picks `δ = (M_q0^m M_p0^n)^{1/4}` (geometric midpoint of the admissible
/// `δ²` interval); `g1(0)` sits at the geometric midpoint of its window.
pub fn build_supersolution_critical(
    params: &SystemParams,
    grid: &Grid,
    delta: Option<f64>,
    g2_0: f64,
) -> Result<CriticalSupersolution> {
    let regime = classify_regime(params)?;
    if regime.class != RegimeClass::Critical {
        return Err(invalid!("critical supersolution needs mn = (p-1)(q-1)"));
    }
    if !(g2_0 > 0.0) {
        return Err(invalid!("need g2(0) > 0 (got {g2_0})"));
    }
    let dilated = grid.dilated(DILATION)?;
    let phi_p0 = solve_torsion(params.p, 0.0, &dilated, TORSION_TOL)?;
    let phi_q0 = solve_torsion(params.q, 0.0, &dilated, TORSION_TOL)?;
    let (mp0, mq0) = (phi_p0.sup, phi_q0.sup);
    if !(mp0 < 1.0 && mq0 < 1.0) {
        return Err(Error::Construction(alloc::format!(
            "domain not small enough: torsion sups on the dilated domain are M_p0 = {mp0}, M_q0 = {mq0} (need < 1); shrink the domain"
        )));
    }
    let coupling = powf(mq0, params.m) * powf(mp0, params.n);
    if !(coupling < 1.0) {
        return Err(Error::Construction(alloc::format!(
            "empty delta interval: M_q0^m M_p0^n = {coupling} >= 1"
        )));
    }
    let delta = delta.unwrap_or_else(|| powf(coupling, 0.25));
    let window = crate::odecmp::g_window(
        mp0, mq0, params.p, params.q, params.m, params.n, delta, g2_0,
    );
    if !(window.0 <= window.1) {
        return Err(Error::Construction(alloc::format!(
            "empty g1(0) window [{}, {}] for delta = {delta}",
            window.0,
            window.1
        )));
    }
    let g0 = (sqrt(window.0 * window.1), g2_0);
    let opts = IntegratorOptions::default();
    let g = g_system(
        mp0, mq0, params.p, params.q, params.m, params.n, delta, g0, &opts,
    )?;
    let t0 = g.t0;

    let g_times: Vec<f64> = (0..=G_SAMPLES)
        .map(|i| t0 * i as f64 / G_SAMPLES as f64)
        .collect();
    let dense = integrate_sampled(&g.ode, &OdeState::new(g0.0, g0.1), &opts, &g_times)?;
    let g_values = dense.samples.iter().map(|s| (s.w1, s.w2)).collect();

    let restrict = |f: &Field| -> Vec<f64> {
        (1..grid.n_cells())
            .map(|i| sample_linear(f, grid.node(i)))
            .collect()
    };
    Ok(CriticalSupersolution {
        grid: *grid,
        dilated,
        phi_p_on_grid: restrict(&phi_p0.phi),
        phi_q_on_grid: restrict(&phi_q0.phi),
        phi_p0,
        phi_q0,
        mp0,
        mq0,
        delta,
        g0,
        window,
        g,
        t0,
        g_times,
        g_values,
    })
}

/// `(k^{l1} ψ_p, k^{l2} ψ_q)` with `ψ` the torsion functions with boundary value `δ0`.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseIISupersolution {
    pub k: f64,
    /// Largest `k` satisfying the supersolution inequalities (found by bisection).
    pub k_max: f64,
    pub l1: f64,
    pub l2: f64,
    pub delta0: f64,
    pub psi_p: TorsionSolution,
    pub psi_q: TorsionSolution,
    pub mp: f64,
    pub mq: f64,
}

impl CaseIISupersolution {
    pub fn u(&self) -> Field {
        self.psi_p.phi.scaled(powf(self.k, self.l1))
    }

    pub fn v(&self) -> Field {
        self.psi_q.phi.scaled(powf(self.k, self.l2))
    }

    /// `k^{l1(p-1)} >= (k^{l2} M_q)^m` and `k^{l2(q-1)} >= (k^{l1} M_p)^n`.
    pub fn inequalities_hold(
        k: f64,
        l1: f64,
        l2: f64,
        mp: f64,
        mq: f64,
        params: &SystemParams,
    ) -> bool {
        powf(k, l1 * (params.p - 1.0)) >= powf(powf(k, l2) * mq, params.m)
            && powf(k, l2 * (params.q - 1.0)) >= powf(powf(k, l1) * mp, params.n)
    }
}

/// `l1/l2` at the geometric midpoint of `((q-1)/n, m/(p-1))`, `l2 = 1`.
pub fn default_ls(params: &SystemParams) -> (f64, f64) {
    (
        sqrt(params.m * (params.q - 1.0) / ((params.p - 1.0) * params.n)),
        1.0,
    )
}

/// Largest `k` satisfying the supersolution inequalities, by bisection in `ln k`.
pub fn largest_case_ii_k(l1: f64, l2: f64, mp: f64, mq: f64, params: &SystemParams) -> Result<f64> {
    let holds = |k: f64| CaseIISupersolution::inequalities_hold(k, l1, l2, mp, mq, params);
    let (mut lo, mut hi) = (-1.0f64, 1.0f64);
    while !holds(crate::math::exp(lo)) {
        lo *= 2.0;
        if lo < -1400.0 {
            return Err(Error::Construction(alloc::format!(
                "no admissible k above e^{lo}"
            )));
        }
    }
    while holds(crate::math::exp(hi)) {
        hi = if hi < 0.0 { 0.0 } else { 2.0 * hi + 1.0 };
        if hi > 1400.0 {
            return Err(Error::Construction(
                "supersolution inequality holds for all k".into(),
            ));
        }
    }
    if hi <= lo {
        lo = hi - 1.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if holds(crate::math::exp(mid)) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(crate::math::exp(lo))
}

pub fn build_supersolution_case_ii(
    params: &SystemParams,
    grid: &Grid,
    delta0: f64,
    k: Option<f64>,
    ls: Option<(f64, f64)>,
) -> Result<CaseIISupersolution> {
    let (p, q, m, n) = (params.p, params.q, params.m, params.n);
    params.validate()?;
    if !(m * n > 1.0 && m * n > (p - 1.0) * (q - 1.0)) {
        return Err(invalid!(
            "Case II supersolution needs mn > 1 (got mn = {})",
            m * n
        ));
    }
    if !(delta0 > 0.0) {
        return Err(invalid!("need delta0 > 0 (got {delta0})"));
    }
    let (l1, l2) = ls.unwrap_or_else(|| default_ls(params));
    if !(l1 > 0.0 && l2 > 0.0 && m / (p - 1.0) > l1 / l2 && l1 / l2 > (q - 1.0) / n) {
        return Err(invalid!(
            "l1/l2 = {} outside ({}, {})",
            l1 / l2,
            (q - 1.0) / n,
            m / (p - 1.0)
        ));
    }
    let psi_p = solve_torsion(p, delta0, grid, TORSION_TOL)?;
    let psi_q = solve_torsion(q, delta0, grid, TORSION_TOL)?;
    let (mp, mq) = (psi_p.sup, psi_q.sup);
    let k_max = largest_case_ii_k(l1, l2, mp, mq, params)?;
    let k = match k {
        Some(k) if CaseIISupersolution::inequalities_hold(k, l1, l2, mp, mq, params) && k > 0.0 => {
            k
        }
        Some(k) => {
            return Err(Error::Construction(alloc::format!(
                "k = {k} violates the supersolution inequalities; largest admissible k is {k_max}"
            )))
        }
        None => 0.5 * k_max,
    };
    Ok(CaseIISupersolution {
        k,
        k_max,
        l1,
        l2,
        delta0,
        psi_p,
        psi_q,
        mp,
        mq,
    })
}

/// Pointwise `u0 <= u_sup` and `v0 <= v_sup`.
pub fn dominated_by(u0: &Field, v0: &Field, u_sup: &Field, v_sup: &Field) -> bool {
    u0.interior()
        .iter()
        .zip(u_sup.interior())
        .all(|(a, b)| a <= b)
        && v0
            .interior()
            .iter()
            .zip(v_sup.interior())
            .all(|(a, b)| a <= b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::elliptic::first_eigenpair;
    use core::f64::consts::PI;
    use proptest::prelude::*;

    #[test]
    fn poincare_constant() {
        let g = Grid::new(0.0, 1.0, 256).unwrap();
        let e = estimate_embedding_constant(2.0, &g, 1e-10).unwrap();
        assert!((e.gamma * PI - 1.0).abs() < 1e-2, "{}", e.gamma);
    }

    #[test]
    fn embedding_beats_hat_and_grows_with_domain() {
        for p in [1.3, 1.5, 1.8] {
            let g1 = Grid::new(0.0, 1.0, 256).unwrap();
            let g2 = Grid::new(0.0, 2.0, 256).unwrap();
            let e1 = estimate_embedding_constant(p, &g1, 1e-9).unwrap();
            let e2 = estimate_embedding_constant(p, &g2, 1e-9).unwrap();
            let hat = Field::from_fn(g1, 0.0, |x| x.min(1.0 - x)).unwrap();
            assert!(e1.gamma >= embedding_ratio(&hat, p).unwrap());
            assert!(e2.gamma > e1.gamma);
        }
    }

    #[test]
    fn exponent_examples() {
        assert_eq!(choose_exponents(1.0, 1.0).unwrap(), (2.0, 2.0));
        let (s, r) = choose_exponents(0.25, 1.0).unwrap();
        assert!((s - 4.0).abs() < 1e-12 && (r - 2.0).abs() < 1e-12);
        let (s, r) = choose_exponents(1.0, 0.25).unwrap();
        assert!((s - 2.0).abs() < 1e-12 && (r - 4.0).abs() < 1e-12);
        assert!(choose_exponents(2.0, 1.0).is_err());
    }

    #[test]
    fn constant_examples() {
        let params = SystemParams::new(1.5, 1.5, 1.0, 1.0, 0.0, 1.0).unwrap();
        let c = compute_ode_constants(&params, 2.0, 2.0, 0.5, 0.5, 0.5).unwrap();
        // unit measure and s - 1 = 1, s + p - 2 = p: a1 = γ^{-p}
        assert!((c.a1 - powf(0.5, -1.5)).abs() < 1e-12);
        assert!((c.b1 - 1.0).abs() < 1e-15 && (c.b2 - 1.0).abs() < 1e-15);
        let bigger = compute_ode_constants(&params, 2.0, 2.0, 0.6, 0.5, 0.5).unwrap();
        assert!(bigger.a1 < c.a1);
    }

    #[test]
    fn initial_condition_window() {
        let params = SystemParams::new(1.5, 1.5, 0.5, 0.5, 0.0, 1.0).unwrap();
        let c = CriteriaConstants {
            s: 2.0,
            r: 2.0,
            a1: 4.0,
            b1: 1.0,
            a2: 4.0,
            b2: 1.0,
            delta1: 0.5,
            m: 0.5,
            n: 0.5,
        };
        let ok = initial_condition_from_norms(1.0, 1.0, &c, &params);
        assert!(ok.pass && (ok.lower - 0.25).abs() < 1e-12 && (ok.upper - 4.0).abs() < 1e-12);
        let bad = initial_condition_from_norms(5.0, 1.0, &c, &params);
        assert!(!bad.pass && (bad.upper_slack - 0.8).abs() < 1e-12);
        let zero = Field::zeros(Grid::new(0.0, 1.0, 8).unwrap());
        assert!(
            check_initial_condition(&zero, &zero, &c, &params)
                .unwrap()
                .pass
        );
    }

    #[test]
    fn subsolution_thresholds() {
        let g = Grid::new(0.0, 1.0, 256).unwrap();
        let params = SystemParams::new(1.8, 1.8, 0.5, 0.5, 0.0, 1.0).unwrap();
        let eig = first_eigenpair(1.8, &g, 1e-10).unwrap();
        let sub = build_subsolution(&params, &eig, 1.0, 1.0, None).unwrap();
        let expected = powf(eig.lambda1, -1.0 / 0.3);
        assert!((sub.k_max / expected - 1.0).abs() < 1e-12);
        let bracket = |k: f64| eig.lambda1 * powf(k, 0.8) - powf(k, 0.5);
        assert!(bracket(sub.k_max).abs() < 1e-12 * powf(sub.k_max, 0.5));
        assert!(bracket(0.5 * sub.k_max) < 0.0);
        let (du, dv) = sub.defects(&params);
        let scale = powf(sub.k, 0.5);
        let worst = du.iter().chain(&dv).cloned().fold(f64::MIN, f64::max);
        let at = du.iter().position(|d| *d == worst);
        assert!(worst <= 1e-6 * scale, "{worst} at {at:?} (k^m = {scale})");
        assert!(build_subsolution(&params, &eig, 2.0, 1.0, None).is_err());
        let data = sub.u().scaled(0.25);
        let limited = build_subsolution(&params, &eig, 1.0, 1.0, Some((&data, &data))).unwrap();
        assert!((limited.k / (0.25 * sub.k) - 1.0).abs() < 1e-9);
        let zero = Field::zeros(g);
        assert!(build_subsolution(&params, &eig, 1.0, 1.0, Some((&zero, &zero))).is_err());
    }

    #[test]
    fn critical_supersolution_small_and_large_domain() {
        let params = SystemParams::new(1.5, 1.5, 0.5, 0.5, -0.5, 0.5).unwrap();
        let g = Grid::new(-0.5, 0.5, 256).unwrap();
        let sup = build_supersolution_critical(&params, &g, None, 1.0).unwrap();
        assert!(
            (sup.mp0 - powf(0.625, 3.0) / 3.0).abs() < 1e-4,
            "{}",
            sup.mp0
        );
        assert!(sup.t0 > 0.0 && sup.t0.is_finite());
        let end = sup.g.solution.trajectory.last().unwrap();
        assert!(end.w1 <= 1e-10 && end.w2 <= 1e-10);
        assert!((sup.g_at(0.0).0 - sup.g0.0).abs() < 1e-12);
        assert_eq!(sup.g_at(sup.t0), (0.0, 0.0));

        let wide = SystemParams::new(1.5, 1.5, 0.5, 0.5, -3.0, 3.0).unwrap();
        let gw = Grid::new(-3.0, 3.0, 256).unwrap();
        let err = build_supersolution_critical(&wide, &gw, None, 1.0).unwrap_err();
        assert!(alloc::format!("{err}").contains("domain not small enough"));
    }

    #[test]
    fn case_ii_supersolution() {
        let params = SystemParams::new(1.5, 1.5, 2.0, 2.0, -1.0, 1.0).unwrap();
        let g = Grid::new(-1.0, 1.0, 512).unwrap();
        let sup = build_supersolution_case_ii(&params, &g, 0.2, None, Some((1.0, 1.0))).unwrap();
        assert!((sup.mp - (0.2 + 1.0 / 3.0)).abs() < 1e-4, "{}", sup.mp);
        // closed form: k^{l(p-1-m)} >= M^m with p-1-m < 0
        let closed = powf(sup.mq, 2.0 / (0.5 - 2.0));
        assert!(
            (sup.k_max / closed - 1.0).abs() < 1e-9,
            "{} vs {closed}",
            sup.k_max
        );
        assert!((sup.k - 0.5 * sup.k_max).abs() < 1e-15);
        assert!(CaseIISupersolution::inequalities_hold(
            1e-6, 1.0, 1.0, sup.mp, sup.mq, &params
        ));
        assert!(build_supersolution_case_ii(
            &params,
            &g,
            0.2,
            Some(2.0 * sup.k_max),
            Some((1.0, 1.0))
        )
        .is_err());
        let (m1, n1) = shrink_exponents(2.0, 2.0).unwrap();
        assert!((m1 - 1.0).abs() < 1e-15 && (n1 - 1.0).abs() < 1e-15);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn exponents_in_window(m in 0.01f64..4.0, t in 0.0f64..=1.0) {
            let n = 0.01 + t * (1.0 / m - 0.01);
            let (s, r) = choose_exponents(m, n).unwrap();
            prop_assert!(s >= 2.0 && r >= 2.0 - 1e-12);
            let ratio = r / s;
            prop_assert!(m <= ratio * (1.0 + 1e-12) && ratio <= (1.0 / n) * (1.0 + 1e-12));
        }

        #[test]
        fn lower_slack_scales_along_power_curve(nu in 0.1f64..3.0, nv in 0.1f64..3.0, c in 0.2f64..5.0) {
            let params = SystemParams::new(1.5, 1.6, 0.7, 0.8, 0.0, 1.0).unwrap();
            let k = CriteriaConstants { s: 2.0, r: 2.5, a1: 3.0, b1: 1.2, a2: 2.0, b2: 0.7, delta1: 0.4, m: 0.7, n: 0.8 };
            let base = initial_condition_from_norms(nu, nv, &k, &params);
            let moved = initial_condition_from_norms(nu * powf(c, 0.7 / 0.5), nv * c, &k, &params);
            prop_assert!((moved.lower_slack / base.lower_slack - 1.0).abs() < 1e-10);
        }
    }
}
