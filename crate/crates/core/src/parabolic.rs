//! Backward-Euler time stepping of the regularized system
//!
//! ```text
//! u_t = ((u_x^2 + ε)^{(p-2)/2} u_x)_x + v^m,    v_t = ((v_x^2 + ε)^{(q-2)/2} v_x)_x + u^n
//! ```
//!
//! Each step resolves the diffusivities and the sources by a Picard loop: both are lagged from
//! the previous inner iterate, so every inner iterate costs two tridiagonal solves. Both
//! components are updated from the same lagged iterate, which keeps symmetric data exactly
//! symmetric.

use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::grid::{lp_norm, sup_norm, Field, Grid, StatePair};
use crate::math::powf;
use crate::odecmp::growth_integrate;
use crate::params::SystemParams;
use crate::plap::{diffusivity, gradient_energy};
use crate::tridiag;

/// Steps the extinction condition must persist before it is reported.
pub const PERSISTENCE_STEPS: usize = 20;
/// A sup-norm above this aborts the run.
pub const BLOW_UP_SUP: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub dt: f64,
    pub t_max: f64,
    /// Flux regularization `ε`.
    pub eps_reg: f64,
    pub picard_tol: f64,
    pub picard_max: usize,
    pub extinction_tol: f64,
    /// Keep every state in [`Trajectory::states`] (needed by [`comparison_check`]).
    pub keep_states: bool,
    /// End the run once extinction has been confirmed.
    pub stop_on_extinction: bool,
}

impl SolverConfig {
    pub fn new(dt: f64, t_max: f64) -> Result<Self> {
        let cfg = Self {
            dt,
            t_max,
            eps_reg: 1e-8,
            picard_tol: 1e-10,
            picard_max: 500,
            extinction_tol: 1e-6,
            keep_states: false,
            stop_on_extinction: true,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Defaults with `dt = h / 4`.
    pub fn for_grid(grid: &Grid, t_max: f64) -> Result<Self> {
        Self::new(0.25 * grid.h(), t_max)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.t_max > 0.0 && self.dt < self.t_max && self.t_max.is_finite()) {
            return Err(invalid!(
                "need 0 < dt < t_max (got dt = {}, t_max = {})",
                self.dt,
                self.t_max
            ));
        }
        if !(self.eps_reg > 0.0 && self.eps_reg <= 1.0) {
            return Err(invalid!("need 0 < eps_reg <= 1 (got {})", self.eps_reg));
        }
        if !(self.picard_tol > 0.0) || self.picard_max == 0 {
            return Err(invalid!("need picard_tol > 0 and picard_max >= 1"));
        }
        if !(self.extinction_tol > 0.0) {
            return Err(invalid!(
                "need extinction_tol > 0 (got {})",
                self.extinction_tol
            ));
        }
        Ok(())
    }

    /// Tolerance used by the ordering and monotonicity checks.
    pub fn ordering_tol(&self) -> f64 {
        10.0 * self.picard_tol
    }
}

/// Source terms of a step.
#[derive(Debug, Clone, PartialEq)]
pub enum Source {
    /// `v^m` and `u^n`.
    Coupled,
    /// No sources (pure diffusion).
    Disabled,
    /// `(v_+ + 1)^m` and `(u_+ + 1)^n`.
    Shifted,
    /// Given interior source values for the `u` and `v` equations.
    Frozen { u: Vec<f64>, v: Vec<f64> },
}

fn check_state(state: &StatePair, params: &SystemParams) -> Result<()> {
    params.validate()?;
    if state.u.grid() != state.v.grid() {
        return Err(invalid!("u and v live on different grids"));
    }
    for (name, f) in [("u", &state.u), ("v", &state.v)] {
        if f.min_value() < 0.0 {
            return Err(invalid!(
                "{name} has negative values (min {})",
                f.min_value()
            ));
        }
    }
    Ok(())
}

/// One backward-Euler step of size `cfg.dt` with coupled sources.
pub fn step(state: &StatePair, params: &SystemParams, cfg: &SolverConfig) -> Result<StatePair> {
    cfg.validate()?;
    check_state(state, params)?;
    advance(state, params, cfg, &Source::Coupled, cfg.dt)
}

/// [`step`] with the given sources.
pub fn step_with(
    state: &StatePair,
    params: &SystemParams,
    cfg: &SolverConfig,
    source: &Source,
) -> Result<StatePair> {
    cfg.validate()?;
    check_state(state, params)?;
    advance(state, params, cfg, source, cfg.dt)
}

fn source_terms(
    source: &Source,
    params: &SystemParams,
    u: &[f64],
    v: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let interior = |w: &[f64]| w[1..w.len() - 1].to_vec();
    match source {
        Source::Coupled => (
            interior(v)
                .iter()
                .map(|x| powf(x.max(0.0), params.m))
                .collect(),
            interior(u)
                .iter()
                .map(|x| powf(x.max(0.0), params.n))
                .collect(),
        ),
        Source::Shifted => (
            interior(v)
                .iter()
                .map(|x| powf(x.max(0.0) + 1.0, params.m))
                .collect(),
            interior(u)
                .iter()
                .map(|x| powf(x.max(0.0) + 1.0, params.n))
                .collect(),
        ),
        Source::Disabled => (alloc::vec![0.0; u.len() - 2], alloc::vec![0.0; v.len() - 2]),
        Source::Frozen { u: su, v: sv } => (su.clone(), sv.clone()),
    }
}

/// Solves `w - dt ((κ w_x)_x) = old + dt S` with `κ` from the lagged node vector `lag`.
fn solve_linearized(
    old: &[f64],
    lag: &[f64],
    boundary: f64,
    p: f64,
    eps: f64,
    dt: f64,
    h: f64,
    src: &[f64],
) -> Vec<f64> {
    let n = old.len();
    let c = dt / (h * h);
    let kappa: Vec<f64> = lag
        .windows(2)
        .map(|w| diffusivity((w[1] - w[0]) / h, p, eps))
        .collect();
    let mut lower = alloc::vec![0.0; n];
    let mut diag = alloc::vec![0.0; n];
    let mut upper = alloc::vec![0.0; n];
    let mut rhs: Vec<f64> = old.iter().zip(src).map(|(o, s)| o + dt * s).collect();
    for i in 0..n {
        // interior node i + 1 couples cells i and i + 1
        lower[i] = -c * kappa[i];
        upper[i] = -c * kappa[i + 1];
        diag[i] = 1.0 + c * (kappa[i] + kappa[i + 1]);
    }
    rhs[0] += c * kappa[0] * boundary;
    rhs[n - 1] += c * kappa[n] * boundary;
    lower[0] = 0.0;
    upper[n - 1] = 0.0;
    tridiag::solve(&lower, &diag, &upper, &mut rhs);
    rhs
}

fn with_boundary(interior: &[f64], boundary: f64) -> Vec<f64> {
    let mut nodes = Vec::with_capacity(interior.len() + 2);
    nodes.push(boundary);
    nodes.extend_from_slice(interior);
    nodes.push(boundary);
    nodes
}

fn clamp(values: &mut [f64], floor: f64, t: f64) -> Result<()> {
    for (i, v) in values.iter_mut().enumerate() {
        if *v < 0.0 {
            if *v < -floor {
                return Err(Error::Negativity {
                    node: i + 1,
                    value: *v,
                    t,
                });
            }
            *v = 0.0;
        }
    }
    Ok(())
}

fn advance(
    state: &StatePair,
    params: &SystemParams,
    cfg: &SolverConfig,
    source: &Source,
    dt: f64,
) -> Result<StatePair> {
    let grid = *state.grid();
    let h = grid.h();
    let (bu, bv) = (state.u.boundary_value(), state.v.boundary_value());
    let (uo, vo) = (state.u.interior(), state.v.interior());
    let mut lag_u = state.u.node_values();
    let mut lag_v = state.v.node_values();
    let t = state.t + dt;

    let mut diff = f64::INFINITY;
    for _ in 0..cfg.picard_max {
        let (su, sv) = source_terms(source, params, &lag_u, &lag_v);
        let nu = solve_linearized(uo, &lag_u, bu, params.p, cfg.eps_reg, dt, h, &su);
        let nv = solve_linearized(vo, &lag_v, bv, params.q, cfg.eps_reg, dt, h, &sv);
        diff = 0.0;
        let mut sup = 1.0f64;
        for (new, lag) in [(&nu, &lag_u), (&nv, &lag_v)] {
            for (a, b) in new.iter().zip(&lag[1..]) {
                diff = diff.max((a - b).abs());
                sup = sup.max(a.abs());
            }
        }
        if !diff.is_finite() {
            break;
        }
        lag_u = with_boundary(&nu, bu);
        lag_v = with_boundary(&nv, bv);
        if diff <= cfg.picard_tol * sup {
            let mut nu = nu;
            let mut nv = nv;
            clamp(&mut nu, cfg.ordering_tol(), t)?;
            clamp(&mut nv, cfg.ordering_tol(), t)?;
            return Ok(StatePair {
                u: Field::from_parts_unchecked(grid, nu, bu),
                v: Field::from_parts_unchecked(grid, nv, bv),
                t,
            });
        }
    }
    Err(Error::NoConvergence {
        what: "Picard iteration of the implicit step",
        iterations: cfg.picard_max,
        residual: diff,
    })
}

/// Recorded history of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub sup_u: Vec<f64>,
    pub sup_v: Vec<f64>,
    pub ls_u: Vec<f64>,
    pub lr_v: Vec<f64>,
    /// Zero in the first row; afterwards the residual of the step ending at that row.
    pub energy_residual_u: Vec<f64>,
    pub energy_residual_v: Vec<f64>,
    pub extinction_time: Option<f64>,
    pub final_state: StatePair,
    /// All states (initial included) when [`SolverConfig::keep_states`] is set.
    pub states: Vec<StatePair>,
    pub s: f64,
    pub r: f64,
    pub params: SystemParams,
    pub config: SolverConfig,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Mean of the energy residuals over the steps ending in `(0, t_end]`.
    pub fn mean_energy_residual(&self, t_end: f64) -> (f64, f64) {
        let mut acc = (0.0, 0.0);
        let mut weight = 0.0;
        for i in 1..self.times.len() {
            if self.times[i] > t_end * (1.0 + 1e-12) {
                break;
            }
            let dt = self.times[i] - self.times[i - 1];
            acc.0 += dt * self.energy_residual_u[i];
            acc.1 += dt * self.energy_residual_v[i];
            weight += dt;
        }
        if weight == 0.0 {
            (0.0, 0.0)
        } else {
            (acc.0 / weight, acc.1 / weight)
        }
    }
}

struct Recorder {
    traj: Trajectory,
    candidate: Option<(f64, usize)>,
    confirmed: bool,
}

impl Recorder {
    fn new(
        initial: &StatePair,
        params: &SystemParams,
        cfg: &SolverConfig,
        s: f64,
        r: f64,
    ) -> Result<Self> {
        let mut rec = Self {
            traj: Trajectory {
                times: Vec::new(),
                sup_u: Vec::new(),
                sup_v: Vec::new(),
                ls_u: Vec::new(),
                lr_v: Vec::new(),
                energy_residual_u: Vec::new(),
                energy_residual_v: Vec::new(),
                extinction_time: None,
                final_state: initial.clone(),
                states: Vec::new(),
                s,
                r,
                params: *params,
                config: *cfg,
            },
            candidate: None,
            confirmed: false,
        };
        rec.push(initial, (0.0, 0.0))?;
        Ok(rec)
    }

    fn push(&mut self, state: &StatePair, residual: (f64, f64)) -> Result<()> {
        let tr = &mut self.traj;
        let (su, sv) = (sup_norm(&state.u), sup_norm(&state.v));
        tr.times.push(state.t);
        tr.sup_u.push(su);
        tr.sup_v.push(sv);
        tr.ls_u.push(lp_norm(&state.u, tr.s)?);
        tr.lr_v.push(lp_norm(&state.v, tr.r)?);
        tr.energy_residual_u.push(residual.0);
        tr.energy_residual_v.push(residual.1);
        if tr.config.keep_states {
            tr.states.push(state.clone());
        }
        tr.final_state = state.clone();

        let tol = tr.config.extinction_tol;
        if su <= tol && sv <= tol {
            let idx = tr.times.len() - 1;
            let (t0, i0) = *self.candidate.get_or_insert((state.t, idx));
            if idx - i0 >= PERSISTENCE_STEPS {
                self.confirmed = true;
                tr.extinction_time = Some(t0);
            }
        } else {
            self.candidate = None;
            self.confirmed = false;
            tr.extinction_time = None;
        }
        if su.max(sv) > BLOW_UP_SUP {
            return Err(Error::BlowUp {
                t: state.t,
                sup: su.max(sv),
            });
        }
        Ok(())
    }
}

fn check_norm_exponents(s: f64, r: f64) -> Result<()> {
    if !(s >= 2.0 && r >= 2.0 && s.is_finite() && r.is_finite()) {
        return Err(invalid!(
            "norm exponents must satisfy s, r >= 2 (got s = {s}, r = {r})"
        ));
    }
    Ok(())
}

/// Steps until `t_max` or confirmed extinction, recording the norms `‖u‖_s`, `‖v‖_r`.
pub fn simulate(
    u0: &Field,
    v0: &Field,
    params: &SystemParams,
    cfg: &SolverConfig,
    s: f64,
    r: f64,
) -> Result<Trajectory> {
    simulate_with(u0, v0, params, cfg, s, r, &Source::Coupled, &mut |_| {})
}

/// [`simulate`] with the given sources; `observer` sees every state, the initial one included.
#[allow(clippy::too_many_arguments)]
pub fn simulate_with(
    u0: &Field,
    v0: &Field,
    params: &SystemParams,
    cfg: &SolverConfig,
    s: f64,
    r: f64,
    source: &Source,
    observer: &mut dyn FnMut(&StatePair),
) -> Result<Trajectory> {
    cfg.validate()?;
    check_norm_exponents(s, r)?;
    let mut state = StatePair::new(u0.clone(), v0.clone(), 0.0)?;
    check_state(&state, params)?;
    observer(&state);
    let mut rec = Recorder::new(&state, params, cfg, s, r)?;
    while state.t < cfg.t_max * (1.0 - 1e-12) {
        if cfg.stop_on_extinction && rec.confirmed {
            break;
        }
        let dt = cfg.dt.min(cfg.t_max - state.t);
        let next = advance(&state, params, cfg, source, dt)?;
        let res = energy_residual(&state, &next, params, s, r)?;
        observer(&next);
        rec.push(&next, res)?;
        state = next;
    }
    Ok(rec.traj)
}

/// Defect of the `L^s` energy identity over one step, for `u` (with `s, p, v^m`) and `v`
/// (with `r, q, u^n`):
/// `|Δ(∫w^s/s)/dt + ((s-1)p^p/(s+p-2)^p) ∫|(w^{(s+p-2)/p})_x|^p - ∫ src w^{s-1}|`,
/// the last two terms at the midpoint state.
pub fn energy_residual(
    prev: &StatePair,
    next: &StatePair,
    params: &SystemParams,
    s: f64,
    r: f64,
) -> Result<(f64, f64)> {
    check_norm_exponents(s, r)?;
    if prev.grid() != next.grid() {
        return Err(invalid!("states live on different grids"));
    }
    let dt = next.t - prev.t;
    if !(dt > 0.0) {
        return Err(invalid!("states must be in time order (dt = {dt})"));
    }
    let h = prev.grid().h();
    let mid = |a: &Field, b: &Field| -> Vec<f64> {
        a.node_values()
            .iter()
            .zip(b.node_values())
            .map(|(x, y)| 0.5 * (x + y))
            .collect()
    };
    let u_mid = mid(&prev.u, &next.u);
    let v_mid = mid(&prev.v, &next.v);
    let grid = *prev.grid();
    let one = |w_prev: &Field,
               w_next: &Field,
               w_mid: &[f64],
               other_mid: &[f64],
               s: f64,
               p: f64,
               e: f64|
     -> f64 {
        let power_integral = |f: &Field| -> f64 {
            (0..=grid.n_cells())
                .map(|i| grid.weight(i) * powf(f.value(i).max(0.0), s))
                .sum()
        };
        let storage = (power_integral(w_next) - power_integral(w_prev)) / (s * dt);
        let c = (s - 1.0) * powf(p, p) / powf(s + p - 2.0, p);
        let lifted: Vec<f64> = w_mid
            .iter()
            .map(|x| powf(x.max(0.0), (s + p - 2.0) / p))
            .collect();
        let dissipation = c * gradient_energy(&lifted, h, p);
        let production: f64 = (0..=grid.n_cells())
            .map(|i| {
                grid.weight(i) * powf(other_mid[i].max(0.0), e) * powf(w_mid[i].max(0.0), s - 1.0)
            })
            .sum();
        (storage + dissipation - production).abs()
    };
    Ok((
        one(&prev.u, &next.u, &u_mid, &v_mid, s, params.p, params.m),
        one(&prev.v, &next.v, &v_mid, &u_mid, r, params.q, params.n),
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrowthReport {
    /// Max over checked times of `sup_u - U` and `sup_v - V`.
    pub max_excess_u: f64,
    pub max_excess_v: f64,
    pub pass: bool,
    /// Last trajectory time covered by the check.
    pub checked_until: f64,
    /// Blow-up time of `(U, V)` when it falls inside the trajectory.
    pub inconclusive_beyond: Option<f64>,
}

/// Compares the sup-norms against the growth system `U' = V^m, V' = U^n` from `(U0, V0)`.
pub fn growth_bound_check(
    traj: &Trajectory,
    u0: f64,
    v0: f64,
    params: &SystemParams,
) -> Result<GrowthReport> {
    if traj.is_empty() {
        return Err(invalid!("empty trajectory"));
    }
    if !(u0 >= traj.sup_u[0] && v0 >= traj.sup_v[0]) {
        return Err(invalid!(
            "need U0 >= sup u(0) = {} and V0 >= sup v(0) = {}",
            traj.sup_u[0],
            traj.sup_v[0]
        ));
    }
    let t_end = *traj.times.last().unwrap_or(&0.0);
    let growth = growth_integrate(
        params.m,
        params.n,
        u0,
        v0,
        t_end.max(f64::MIN_POSITIVE),
        &traj.times,
    )?;
    let mut report = GrowthReport {
        max_excess_u: f64::NEG_INFINITY,
        max_excess_v: f64::NEG_INFINITY,
        pass: true,
        checked_until: 0.0,
        inconclusive_beyond: growth.blow_up_time,
    };
    for (i, sample) in growth.samples.iter().enumerate() {
        let Some((bu, bv)) = *sample else { break };
        let eu = traj.sup_u[i] - bu;
        let ev = traj.sup_v[i] - bv;
        report.max_excess_u = report.max_excess_u.max(eu);
        report.max_excess_v = report.max_excess_v.max(ev);
        if eu > 1e-6 + 0.01 * bu || ev > 1e-6 + 0.01 * bv {
            report.pass = false;
        }
        report.checked_until = traj.times[i];
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    /// Max over recorded states of `(low - high)_+`.
    pub max_violation_u: f64,
    pub max_violation_v: f64,
    pub pass: bool,
}

/// Checks that `run_low` stays below `run_high`; both runs need stored states.
pub fn comparison_check(run_low: &Trajectory, run_high: &Trajectory) -> Result<ComparisonReport> {
    if run_low.params != run_high.params || run_low.config != run_high.config {
        return Err(invalid!("runs use different parameters or solver settings"));
    }
    if run_low.states.is_empty() || run_low.states.len() != run_high.states.len() {
        return Err(invalid!(
            "both runs need the same number of stored states (enable keep_states)"
        ));
    }
    if run_low.states[0].grid() != run_high.states[0].grid() {
        return Err(invalid!("runs live on different grids"));
    }
    let excess = |a: &Field, b: &Field| -> f64 {
        a.node_values()
            .iter()
            .zip(b.node_values())
            .fold(0.0f64, |acc, (x, y)| acc.max(x - y))
    };
    let mut rep = ComparisonReport {
        max_violation_u: 0.0,
        max_violation_v: 0.0,
        pass: true,
    };
    for (lo, hi) in run_low.states.iter().zip(&run_high.states) {
        rep.max_violation_u = rep.max_violation_u.max(excess(&lo.u, &hi.u));
        rep.max_violation_v = rep.max_violation_v.max(excess(&lo.v, &hi.v));
    }
    let tol = run_low.config.ordering_tol();
    rep.pass = rep.max_violation_u <= tol && rep.max_violation_v <= tol;
    Ok(rep)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonotoneIteration {
    /// Iterate `k` is driven by the sources of iterate `k - 1`; the first by the initial pair.
    pub iterates: Vec<Trajectory>,
    /// Run of the system with sources `(v_+ + 1)^m`, `(u_+ + 1)^n` from the same data.
    pub upper: Trajectory,
    /// Min over space-time of `iterate_{k+1} - iterate_k` (`+inf` with one iterate).
    pub min_increment: f64,
    /// Max over space-time of `iterate_k - upper` over all iterates.
    pub max_excess_over_upper: f64,
    pub monotone: bool,
    pub bounded: bool,
}

/// Runs `k_max` frozen-source iterates and the shifted-source upper run in lock-step from
/// `(u0, v0)` (normally the subsolution pair).
pub fn monotone_iterate(
    u0: &Field,
    v0: &Field,
    params: &SystemParams,
    cfg: &SolverConfig,
    s: f64,
    r: f64,
    k_max: usize,
) -> Result<MonotoneIteration> {
    cfg.validate()?;
    check_norm_exponents(s, r)?;
    if k_max == 0 {
        return Err(invalid!("k_max must be at least 1"));
    }
    let initial = StatePair::new(u0.clone(), v0.clone(), 0.0)?;
    check_state(&initial, params)?;
    let powered = |f: &Field, e: f64| -> Vec<f64> {
        f.interior().iter().map(|x| powf(x.max(0.0), e)).collect()
    };

    let mut states = alloc::vec![initial.clone(); k_max];
    let mut upper_state = initial.clone();
    let mut recs = Vec::with_capacity(k_max);
    for _ in 0..k_max {
        recs.push(Recorder::new(&initial, params, cfg, s, r)?);
    }
    let mut upper_rec = Recorder::new(&initial, params, cfg, s, r)?;

    let excess = |a: &Field, b: &Field| -> f64 {
        a.interior()
            .iter()
            .zip(b.interior())
            .fold(f64::NEG_INFINITY, |acc, (x, y)| acc.max(x - y))
    };
    let mut min_increment = f64::INFINITY;
    let mut max_excess = f64::NEG_INFINITY;
    let compare = |states: &[StatePair], upper: &StatePair, min_inc: &mut f64, max_ex: &mut f64| {
        for w in states.windows(2) {
            *min_inc = min_inc
                .min(-excess(&w[0].u, &w[1].u))
                .min(-excess(&w[0].v, &w[1].v));
        }
        for st in states {
            *max_ex = max_ex
                .max(excess(&st.u, &upper.u))
                .max(excess(&st.v, &upper.v));
        }
    };
    compare(&states, &upper_state, &mut min_increment, &mut max_excess);

    let mut t = 0.0;
    while t < cfg.t_max * (1.0 - 1e-12) {
        let dt = cfg.dt.min(cfg.t_max - t);
        // sources of iterate k come from iterate k - 1 at the new time level
        let mut driver = (powered(&initial.v, params.m), powered(&initial.u, params.n));
        for k in 0..k_max {
            let source = Source::Frozen {
                u: driver.0,
                v: driver.1,
            };
            let next = advance(&states[k], params, cfg, &source, dt)?;
            let res = energy_residual(&states[k], &next, params, s, r)?;
            recs[k].push(&next, res)?;
            driver = (powered(&next.v, params.m), powered(&next.u, params.n));
            states[k] = next;
        }
        let next = advance(&upper_state, params, cfg, &Source::Shifted, dt)?;
        let res = energy_residual(&upper_state, &next, params, s, r)?;
        upper_rec.push(&next, res)?;
        upper_state = next;
        t = upper_state.t;
        compare(&states, &upper_state, &mut min_increment, &mut max_excess);
    }
    let tol = cfg.ordering_tol();
    Ok(MonotoneIteration {
        iterates: recs.into_iter().map(|r| r.traj).collect(),
        upper: upper_rec.traj,
        min_increment,
        max_excess_over_upper: max_excess,
        monotone: min_increment >= -tol,
        bounded: max_excess <= tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::sin;
    use core::f64::consts::PI;
    use proptest::prelude::*;

    fn unit(n: usize) -> (Grid, SystemParams) {
        (
            Grid::new(0.0, 1.0, n).unwrap(),
            SystemParams::new(1.5, 1.5, 1.0, 1.0, 0.0, 1.0).unwrap(),
        )
    }

    fn bump(grid: Grid, c: f64) -> Field {
        Field::from_fn(grid, 0.0, |x| c * sin(PI * x)).unwrap()
    }

    fn mass(f: &Field) -> f64 {
        f.interior().iter().sum::<f64>() * f.grid().h()
    }

    #[test]
    fn zero_is_fixed() {
        let (g, params) = unit(32);
        let cfg = SolverConfig::for_grid(&g, 1.0).unwrap();
        let st = StatePair::new(Field::zeros(g), Field::zeros(g), 0.0).unwrap();
        let next = step(&st, &params, &cfg).unwrap();
        assert!(next
            .u
            .interior()
            .iter()
            .chain(next.v.interior())
            .all(|&x| x == 0.0));
        let traj = simulate(&Field::zeros(g), &Field::zeros(g), &params, &cfg, 2.0, 2.0).unwrap();
        assert_eq!(traj.extinction_time, Some(0.0));
        assert_eq!(traj.len(), PERSISTENCE_STEPS + 1);
    }

    #[test]
    fn symmetric_data_stay_symmetric() {
        let (g, params) = unit(64);
        let cfg = SolverConfig::for_grid(&g, 0.05).unwrap();
        let mut st = StatePair::new(bump(g, 0.1), bump(g, 0.1), 0.0).unwrap();
        for _ in 0..20 {
            st = step(&st, &params, &cfg).unwrap();
            assert_eq!(st.u, st.v);
        }
    }

    #[test]
    fn pure_diffusion_loses_mass() {
        let (g, params) = unit(64);
        let cfg = SolverConfig::for_grid(&g, 1.0).unwrap();
        let mut st = StatePair::new(bump(g, 0.5), bump(g, 0.2), 0.0).unwrap();
        for _ in 0..10 {
            let next = step_with(&st, &params, &cfg, &Source::Disabled).unwrap();
            assert!(mass(&next.u) <= mass(&st.u) + 1e-14);
            assert!(mass(&next.v) <= mass(&st.v) + 1e-14);
            st = next;
        }
    }

    #[test]
    fn linear_heat_limit() {
        // p = 2 without sources: a sine mode decays like exp(-π² t)
        let g = Grid::new(0.0, 1.0, 256).unwrap();
        let params = SystemParams::new(1.999_999_999, 1.999_999_999, 1.0, 1.0, 0.0, 1.0).unwrap();
        let mut cfg = SolverConfig::new(1e-4, 0.1).unwrap();
        cfg.stop_on_extinction = false;
        let traj = simulate_with(
            &bump(g, 1.0),
            &bump(g, 1.0),
            &params,
            &cfg,
            2.0,
            2.0,
            &Source::Disabled,
            &mut |_| {},
        )
        .unwrap();
        let expected = crate::math::exp(-PI * PI * 0.1);
        let got = *traj.sup_u.last().unwrap();
        assert!((got / expected - 1.0).abs() < 2e-3, "{got} vs {expected}");
    }

    #[test]
    fn small_data_extinguish() {
        let (g, params) = unit(128);
        let cfg = SolverConfig::for_grid(&g, 2.0).unwrap();
        let traj = simulate(&bump(g, 0.01), &bump(g, 0.01), &params, &cfg, 2.0, 2.0).unwrap();
        let te = traj.extinction_time.expect("extinction");
        assert!(te > 0.0 && te < 1.0, "{te}");
        let idx = traj.times.iter().position(|&t| t == te).unwrap();
        assert!(traj.sup_u[idx..].iter().all(|&s| s <= cfg.extinction_tol));
        assert!(traj.times.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn energy_residual_of_zero_is_zero() {
        let (g, params) = unit(16);
        let a = StatePair::new(Field::zeros(g), Field::zeros(g), 0.0).unwrap();
        let b = StatePair::new(Field::zeros(g), Field::zeros(g), 0.1).unwrap();
        assert_eq!(
            energy_residual(&a, &b, &params, 2.0, 3.0).unwrap(),
            (0.0, 0.0)
        );
        assert!(energy_residual(&a, &b, &params, 1.5, 2.0).is_err());
    }

    #[test]
    fn growth_bound_holds_for_linear_sources() {
        let (g, params) = unit(64);
        let mut cfg = SolverConfig::for_grid(&g, 1.0).unwrap();
        cfg.stop_on_extinction = false;
        let traj = simulate(&bump(g, 1.0), &bump(g, 0.8), &params, &cfg, 2.0, 2.0).unwrap();
        let rep = growth_bound_check(&traj, 1.0, 1.0, &params).unwrap();
        assert!(rep.pass && rep.inconclusive_beyond.is_none(), "{rep:?}");
        assert!(growth_bound_check(&traj, 0.5, 1.0, &params).is_err());
    }

    #[test]
    fn ordering_for_scaled_data() {
        let (g, params) = unit(64);
        let mut cfg = SolverConfig::for_grid(&g, 0.3).unwrap();
        cfg.keep_states = true;
        cfg.stop_on_extinction = false;
        let high = simulate(&bump(g, 0.4), &bump(g, 0.3), &params, &cfg, 2.0, 2.0).unwrap();
        let low = simulate(&bump(g, 0.2), &bump(g, 0.15), &params, &cfg, 2.0, 2.0).unwrap();
        let rep = comparison_check(&low, &high).unwrap();
        assert!(rep.pass, "{rep:?}");
        let zero = simulate(&Field::zeros(g), &Field::zeros(g), &params, &cfg, 2.0, 2.0).unwrap();
        assert!(zero.states.iter().all(|s| sup_norm(&s.u) == 0.0));
        assert!(comparison_check(&zero, &high).unwrap().pass);
        assert!(comparison_check(&high, &high).unwrap().pass);
    }

    #[test]
    fn single_iterate_uses_initial_sources() {
        let g = Grid::new(0.0, 1.0, 32).unwrap();
        let params = SystemParams::new(1.8, 1.8, 0.5, 0.5, 0.0, 1.0).unwrap();
        let cfg = SolverConfig::new(0.01, 0.1).unwrap();
        let u0 = bump(g, 1e-3);
        let it = monotone_iterate(&u0, &u0, &params, &cfg, 2.0, 2.0, 1).unwrap();
        assert_eq!(it.iterates.len(), 1);
        assert!(it.monotone && it.bounded);
        let frozen = Source::Frozen {
            u: u0.interior().iter().map(|x| powf(*x, 0.5)).collect(),
            v: u0.interior().iter().map(|x| powf(*x, 0.5)).collect(),
        };
        let direct =
            simulate_with(&u0, &u0, &params, &cfg, 2.0, 2.0, &frozen, &mut |_| {}).unwrap();
        assert_eq!(direct.sup_u, it.iterates[0].sup_u);
    }

    #[test]
    fn rejects_bad_config() {
        assert!(SolverConfig::new(1.0, 0.5).is_err());
        let mut cfg = SolverConfig::new(0.1, 1.0).unwrap();
        cfg.eps_reg = 2.0;
        assert!(cfg.validate().is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn steps_preserve_nonnegativity_and_order(
            p in 1.2f64..1.9, m in 0.3f64..1.5, c in 0.0f64..1.0, ratio in 0.0f64..1.0,
        ) {
            let g = Grid::new(0.0, 1.0, 32).unwrap();
            let params = SystemParams::new(p, p, m, m, 0.0, 1.0).unwrap();
            let cfg = SolverConfig::for_grid(&g, 1.0).unwrap();
            let mut hi = StatePair::new(bump(g, c), bump(g, c), 0.0).unwrap();
            let mut lo = StatePair::new(bump(g, c * ratio), bump(g, c * ratio), 0.0).unwrap();
            for _ in 0..5 {
                hi = step(&hi, &params, &cfg).unwrap();
                lo = step(&lo, &params, &cfg).unwrap();
                prop_assert!(hi.u.min_value() >= 0.0 && lo.v.min_value() >= 0.0);
                for (a, b) in lo.u.interior().iter().zip(hi.u.interior()) {
                    prop_assert!(*a <= b + cfg.ordering_tol());
                }
            }
        }
    }
}
