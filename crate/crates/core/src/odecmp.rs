//! The comparison ODE system
//!
//! ```text
//! W1' = -a1 W1^{p-1} + b1 W2^m
//! W2' = -a2 W2^{q-1} + b2 W1^n
//! ```
//!
//! together with its candidate invariant region
//! `c_lo W2^{m/(p-1)} <= W1 <= c_hi W2^{(q-1)/n}`, the growth system `U' = V^m, V' = U^n`
//! bounding the regularized solutions from above, and the `g`-system driving the
//! critical-case supersolution.
//!
//! Integration is explicit Dormand–Prince 5(4) with positivity projection: trial values are
//! clamped at zero and a component sitting at zero with a non-positive derivative is held
//! there. Crossing times (extinction, blow-up) are refined by bisection on the last step.
//! Near extinction one component can collapse onto the other and make the explicit step
//! stability-limited; the extinction integrator then switches to extrapolated backward Euler.

use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::math::{powf, rel_eq, sqrt};
use crate::params::CRITICAL_RTOL;

/// [`integrate`] fails with [`Error::BlowUp`] above this.
pub const ODE_BLOW_UP_GUARD: f64 = 1e12;
/// Both components at or below this count as extinct.
pub const EXTINCTION_THRESHOLD: f64 = 1e-10;
/// Either growth component above this counts as blow-up.
pub const BLOW_UP_THRESHOLD: f64 = 1e9;
/// Relative slack of [`region_membership`] at the region boundary.
pub const MEMBERSHIP_RTOL: f64 = 1e-12;
/// Pass threshold of [`invariance_check`], relative to `1 + max(W1, W2)`.
pub const INVARIANCE_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdeParams {
    pub a1: f64,
    pub b1: f64,
    pub a2: f64,
    pub b2: f64,
    pub p: f64,
    pub q: f64,
    pub m: f64,
    pub n: f64,
    /// Region parameter in `(0, 1)`.
    pub delta: f64,
}

impl OdeParams {
    /// `b1 = b2 = 0` is accepted; it decouples the system and gives a closed-form oracle.
    pub fn new(
        a1: f64,
        b1: f64,
        a2: f64,
        b2: f64,
        p: f64,
        q: f64,
        m: f64,
        n: f64,
        delta: f64,
    ) -> Result<Self> {
        let params = Self {
            a1,
            b1,
            a2,
            b2,
            p,
            q,
            m,
            n,
            delta,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        let Self {
            a1,
            b1,
            a2,
            b2,
            p,
            q,
            m,
            n,
            delta,
        } = *self;
        if [a1, b1, a2, b2, p, q, m, n, delta]
            .iter()
            .any(|v| !v.is_finite())
        {
            return Err(invalid!("ODE parameters must be finite: {self:?}"));
        }
        if !(a1 > 0.0 && a2 > 0.0) || b1 < 0.0 || b2 < 0.0 {
            return Err(invalid!("need a1, a2 > 0 and b1, b2 >= 0 (got {self:?})"));
        }
        if !(p > 1.0 && p < 2.0 && q > 1.0 && q < 2.0) {
            return Err(invalid!("need 1 < p, q < 2 (got p = {p}, q = {q})"));
        }
        if !(m > 0.0 && n > 0.0) {
            return Err(invalid!("need m, n > 0 (got m = {m}, n = {n})"));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(invalid!("need 0 < delta < 1 (got {delta})"));
        }
        Ok(())
    }

    /// `mn >= (p-1)(q-1)` up to the criticality tolerance.
    pub fn region_applicable(&self) -> bool {
        let product = self.m * self.n;
        let threshold = (self.p - 1.0) * (self.q - 1.0);
        product > threshold || rel_eq(product, threshold, CRITICAL_RTOL)
    }

    /// Jacobian of [`Self::rhs`], with states floored at a tiny positive value so the
    /// singular powers stay finite.
    fn jacobian(&self, w: [f64; 2]) -> [[f64; 2]; 2] {
        let w1 = w[0].max(JACOBIAN_FLOOR);
        let w2 = w[1].max(JACOBIAN_FLOOR);
        [
            [
                -self.a1 * (self.p - 1.0) * powf(w1, self.p - 2.0),
                self.b1 * self.m * powf(w2, self.m - 1.0),
            ],
            [
                self.b2 * self.n * powf(w1, self.n - 1.0),
                -self.a2 * (self.q - 1.0) * powf(w2, self.q - 2.0),
            ],
        ]
    }

    fn rhs(&self, w: [f64; 2]) -> [f64; 2] {
        let w1 = w[0].max(0.0);
        let w2 = w[1].max(0.0);
        let mut d = [
            -self.a1 * powf(w1, self.p - 1.0) + self.b1 * powf(w2, self.m),
            -self.a2 * powf(w2, self.q - 1.0) + self.b2 * powf(w1, self.n),
        ];
        for k in 0..2 {
            if w[k] <= 0.0 && d[k] < 0.0 {
                d[k] = 0.0;
            }
        }
        d
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdeState {
    pub w1: f64,
    pub w2: f64,
    pub t: f64,
}

impl OdeState {
    pub fn new(w1: f64, w2: f64) -> Self {
        Self { w1, w2, t: 0.0 }
    }

    fn as_array(&self) -> [f64; 2] {
        [self.w1, self.w2]
    }
}

/// The two boundary curves `W1 = c W2^e`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionBounds {
    pub c_lo: f64,
    pub e_lo: f64,
    pub c_hi: f64,
    pub e_hi: f64,
}

impl RegionBounds {
    pub fn of(params: &OdeParams) -> Self {
        let OdeParams {
            a1,
            b1,
            a2,
            b2,
            p,
            q,
            m,
            n,
            delta,
        } = *params;
        Self {
            c_lo: powf(b1 / (delta * a1), 1.0 / (p - 1.0)),
            e_lo: m / (p - 1.0),
            c_hi: powf(delta * a2 / b2, 1.0 / n),
            e_hi: (q - 1.0) / n,
        }
    }

    pub fn lower(&self, w2: f64) -> f64 {
        self.c_lo * powf(w2, self.e_lo)
    }

    pub fn upper(&self, w2: f64) -> f64 {
        self.c_hi * powf(w2, self.e_hi)
    }

    /// `max(lower - W1, W1 - upper)`; positive outside the region.
    pub fn violation(&self, w1: f64, w2: f64) -> f64 {
        let lo = self.lower(w2);
        let hi = self.upper(w2);
        let below = if lo.is_finite() {
            lo - w1
        } else {
            f64::INFINITY
        };
        let above = if hi.is_finite() {
            w1 - hi
        } else {
            f64::NEG_INFINITY
        };
        below.max(above)
    }
}

pub fn region_membership(state: &OdeState, params: &OdeParams) -> bool {
    let (w1, w2) = (state.w1, state.w2);
    if !(w1 >= 0.0 && w2 >= 0.0) {
        return false;
    }
    let b = RegionBounds::of(params);
    let lo = b.lower(w2);
    let hi = b.upper(w2);
    w1 >= lo * (1.0 - MEMBERSHIP_RTOL) && w1 <= hi * (1.0 + MEMBERSHIP_RTOL)
}

/// Where the region has points with `W2 > 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RegionExtent {
    /// Only the origin.
    OriginOnly,
    /// Every `W2 > 0` (critical exponents with `c_lo <= c_hi`).
    Unbounded,
    /// `0 < W2 <= w2_max`.
    UpTo(f64),
}

impl RegionExtent {
    pub fn is_nonempty(&self) -> bool {
        !matches!(self, RegionExtent::OriginOnly)
    }
}

pub fn region_nonempty(params: &OdeParams) -> Result<RegionExtent> {
    params.validate()?;
    if !params.region_applicable() {
        return Err(invalid!(
            "region needs mn >= (p-1)(q-1) (got mn = {}, (p-1)(q-1) = {})",
            params.m * params.n,
            (params.p - 1.0) * (params.q - 1.0)
        ));
    }
    let b = RegionBounds::of(params);
    if rel_eq(b.e_lo, b.e_hi, CRITICAL_RTOL) {
        return Ok(if b.c_lo <= b.c_hi {
            RegionExtent::Unbounded
        } else {
            RegionExtent::OriginOnly
        });
    }
    if b.c_hi.is_infinite() || b.c_lo == 0.0 {
        return Ok(RegionExtent::Unbounded);
    }
    // e_lo > e_hi: single crossing of the two power curves
    Ok(RegionExtent::UpTo(powf(
        b.c_hi / b.c_lo,
        1.0 / (b.e_lo - b.e_hi),
    )))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorOptions {
    pub rtol: f64,
    pub atol: f64,
    /// Integration horizon; `None` picks a generous a-priori cap.
    pub t_max: Option<f64>,
    pub max_steps: usize,
}

impl Default for IntegratorOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-8,
            atol: 1e-12,
            t_max: None,
            max_steps: 2_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OdeSolution {
    /// Accepted steps, the initial state first and the crossing state last when extinct.
    pub trajectory: Vec<OdeState>,
    pub extinction_time: Option<f64>,
    /// States at the requested output times (zero after extinction).
    pub samples: Vec<OdeState>,
}

/// Decoupled extinction time of `W' = -a W^{p-1}` from `w0`.
pub fn decoupled_extinction_time(a: f64, p: f64, w0: f64) -> f64 {
    powf(w0, 2.0 - p) / (a * (2.0 - p))
}

fn default_horizon(params: &OdeParams, w: [f64; 2]) -> f64 {
    let w0 = w[0].max(w[1]).max(1.0);
    let t1 = decoupled_extinction_time(params.a1, params.p, w0);
    let t2 = decoupled_extinction_time(params.a2, params.q, w0);
    1e3 * (t1 + t2) + 1.0
}

pub fn integrate(
    params: &OdeParams,
    state0: &OdeState,
    opts: &IntegratorOptions,
) -> Result<OdeSolution> {
    integrate_sampled(params, state0, opts, &[])
}

/// [`integrate`], also returning the state at each time in `outputs` (ascending).
pub fn integrate_sampled(
    params: &OdeParams,
    state0: &OdeState,
    opts: &IntegratorOptions,
    outputs: &[f64],
) -> Result<OdeSolution> {
    params.validate()?;
    let y0 = state0.as_array();
    if !(y0[0] >= 0.0 && y0[1] >= 0.0) {
        return Err(invalid!("initial state must be nonnegative (got {y0:?})"));
    }
    let t_end = opts.t_max.unwrap_or_else(|| default_horizon(params, y0));
    let jac = |w: [f64; 2]| params.jacobian(w);
    let run = run_adaptive(
        |w| params.rhs(w),
        Some(&jac),
        y0,
        state0.t,
        t_end,
        Stop::Below(EXTINCTION_THRESHOLD),
        outputs,
        opts,
    )?;
    let samples = run
        .samples
        .iter()
        .zip(outputs)
        .map(|(y, &t)| {
            let y = y.unwrap_or([0.0, 0.0]);
            OdeState {
                w1: y[0],
                w2: y[1],
                t,
            }
        })
        .collect();
    Ok(OdeSolution {
        trajectory: run.states,
        extinction_time: run.event_time,
        samples,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct InvarianceReport {
    /// Largest `violation / (1 + max(W1, W2))` along the trajectory.
    pub max_violation: f64,
    pub worst_state: OdeState,
    pub extinction_time: Option<f64>,
    pub pass: bool,
}

pub fn invariance_check(
    params: &OdeParams,
    state0: &OdeState,
    opts: &IntegratorOptions,
) -> Result<InvarianceReport> {
    if !params.region_applicable() {
        return Err(invalid!("invariance check needs mn >= (p-1)(q-1)"));
    }
    if !region_membership(state0, params) {
        return Err(invalid!(
            "initial state ({}, {}) is outside the region",
            state0.w1,
            state0.w2
        ));
    }
    let sol = integrate(params, state0, opts)?;
    let bounds = RegionBounds::of(params);
    let mut max_violation = f64::NEG_INFINITY;
    let mut worst_state = *state0;
    for s in &sol.trajectory {
        let rel = bounds.violation(s.w1, s.w2) / (1.0 + s.w1.max(s.w2));
        if rel > max_violation {
            max_violation = rel;
            worst_state = *s;
        }
    }
    let max_violation = max_violation.max(0.0);
    Ok(InvarianceReport {
        max_violation,
        worst_state,
        extinction_time: sol.extinction_time,
        pass: max_violation <= INVARIANCE_TOL,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrowthSolution {
    /// `(t, U, V)` at every accepted step.
    pub trajectory: Vec<(f64, f64, f64)>,
    pub blow_up_time: Option<f64>,
    /// `(U, V)` at the requested output times; `None` past blow-up.
    pub samples: Vec<Option<(f64, f64)>>,
}

/// `U' = V^m, V' = U^n` from `(u0, v0)` up to `t_end` or blow-up past [`BLOW_UP_THRESHOLD`].
pub fn growth_integrate(
    m: f64,
    n: f64,
    u0: f64,
    v0: f64,
    t_end: f64,
    outputs: &[f64],
) -> Result<GrowthSolution> {
    if !(m > 0.0 && n > 0.0) {
        return Err(invalid!("need m, n > 0 (got m = {m}, n = {n})"));
    }
    if !(u0 >= 0.0 && v0 >= 0.0) {
        return Err(invalid!("need U0, V0 >= 0 (got {u0}, {v0})"));
    }
    let opts = IntegratorOptions::default();
    let run = run_adaptive(
        |y| [powf(y[1].max(0.0), m), powf(y[0].max(0.0), n)],
        None,
        [u0, v0],
        0.0,
        t_end,
        Stop::Above(BLOW_UP_THRESHOLD),
        outputs,
        &opts,
    )?;
    Ok(GrowthSolution {
        trajectory: run.states.iter().map(|s| (s.t, s.w1, s.w2)).collect(),
        blow_up_time: run.event_time,
        samples: run
            .samples
            .iter()
            .map(|y| y.map(|y| (y[0], y[1])))
            .collect(),
    })
}

/// `g1(0)` window `[(Mq0^m g2^m / δ)^{1/(p-1)}, (δ g2^{q-1} / Mp0^n)^{1/n}]`.
pub fn g_window(
    mp0: f64,
    mq0: f64,
    p: f64,
    q: f64,
    m: f64,
    n: f64,
    delta: f64,
    g2_0: f64,
) -> (f64, f64) {
    let lo = powf(powf(mq0, m) * powf(g2_0, m) / delta, 1.0 / (p - 1.0));
    let hi = powf(delta * powf(g2_0, q - 1.0) / powf(mp0, n), 1.0 / n);
    (lo, hi)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GSolution {
    /// The comparison system with `a1 = 1/Mp0, b1 = Mq0^m/Mp0, a2 = 1/Mq0, b2 = Mp0^n/Mq0`.
    pub ode: OdeParams,
    pub window: (f64, f64),
    pub solution: OdeSolution,
    /// Extinction time.
    pub t0: f64,
}

/// Integrates the `g`-system of the critical-case supersolution.
#[allow(clippy::too_many_arguments)]
pub fn g_system(
    mp0: f64,
    mq0: f64,
    p: f64,
    q: f64,
    m: f64,
    n: f64,
    delta: f64,
    g0: (f64, f64),
    opts: &IntegratorOptions,
) -> Result<GSolution> {
    if !(mp0 > 0.0 && mp0 < 1.0 && mq0 > 0.0 && mq0 < 1.0) {
        return Err(invalid!("need 0 < Mp0, Mq0 < 1 (got {mp0}, {mq0})"));
    }
    if !rel_eq(m * n, (p - 1.0) * (q - 1.0), CRITICAL_RTOL) {
        return Err(invalid!(
            "g-system needs critical exponents mn = (p-1)(q-1)"
        ));
    }
    let coupling = powf(mq0, m) * powf(mp0, n);
    if !(coupling < delta * delta && delta < 1.0) {
        return Err(invalid!(
            "need Mq0^m Mp0^n < delta^2 < 1 (got {coupling} and delta = {delta}); admissible delta in ({}, 1)",
            sqrt(coupling)
        ));
    }
    let (g1, g2) = g0;
    let window = g_window(mp0, mq0, p, q, m, n, delta, g2);
    if !(g1 >= window.0 * (1.0 - MEMBERSHIP_RTOL) && g1 <= window.1 * (1.0 + MEMBERSHIP_RTOL)) {
        return Err(invalid!(
            "g1(0) = {g1} outside the admissible window [{}, {}] for g2(0) = {g2}",
            window.0,
            window.1
        ));
    }
    let ode = OdeParams::new(
        1.0 / mp0,
        powf(mq0, m) / mp0,
        1.0 / mq0,
        powf(mp0, n) / mq0,
        p,
        q,
        m,
        n,
        delta,
    )?;
    let solution = integrate(&ode, &OdeState::new(g1, g2), opts)?;
    let t0 = solution.extinction_time.ok_or_else(|| {
        Error::Construction(alloc::format!(
            "g-system did not extinguish before t = {}",
            solution.trajectory.last().map_or(0.0, |s| s.t)
        ))
    })?;
    Ok(GSolution {
        ode,
        window,
        solution,
        t0,
    })
}

enum Stop {
    Below(f64),
    Above(f64),
}

impl Stop {
    fn hit(&self, y: [f64; 2]) -> bool {
        match *self {
            Stop::Below(th) => y[0] <= th && y[1] <= th,
            Stop::Above(th) => y[0] >= th || y[1] >= th,
        }
    }
}

struct AdaptiveRun {
    states: Vec<OdeState>,
    event_time: Option<f64>,
    samples: Vec<Option<[f64; 2]>>,
}

// Dormand–Prince 5(4) tableau (the system is autonomous, so the nodes are not needed)
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

fn axpy(y: [f64; 2], h: f64, terms: &[(f64, [f64; 2])]) -> [f64; 2] {
    let mut out = y;
    for &(c, k) in terms {
        out[0] += h * c * k[0];
        out[1] += h * c * k[1];
    }
    out
}

/// One projected step; returns the clamped 5th-order state and the error estimate.
fn dopri_step(f: &impl Fn([f64; 2]) -> [f64; 2], y: [f64; 2], h: f64) -> ([f64; 2], [f64; 2]) {
    let k1 = f(y);
    let k2 = f(axpy(y, h, &[(A21, k1)]));
    let k3 = f(axpy(y, h, &[(A31, k1), (A32, k2)]));
    let k4 = f(axpy(y, h, &[(A41, k1), (A42, k2), (A43, k3)]));
    let k5 = f(axpy(y, h, &[(A51, k1), (A52, k2), (A53, k3), (A54, k4)]));
    let k6 = f(axpy(
        y,
        h,
        &[(A61, k1), (A62, k2), (A63, k3), (A64, k4), (A65, k5)],
    ));
    let y5 = axpy(y, h, &[(B1, k1), (B3, k3), (B4, k4), (B5, k5), (B6, k6)]);
    let k7 = f(y5);
    let err = axpy(
        [0.0, 0.0],
        h,
        &[(E1, k1), (E3, k3), (E4, k4), (E5, k5), (E6, k6), (E7, k7)],
    );
    ([y5[0].max(0.0), y5[1].max(0.0)], err)
}

fn error_norm(err: [f64; 2], y: [f64; 2], y_new: [f64; 2], opts: &IntegratorOptions) -> f64 {
    let mut acc = 0.0;
    for k in 0..2 {
        let scale = opts.atol + opts.rtol * y[k].abs().max(y_new[k].abs());
        let r = err[k] / scale;
        acc += r * r;
    }
    sqrt(0.5 * acc)
}

type Jacobian<'a> = &'a dyn Fn([f64; 2]) -> [[f64; 2]; 2];

const JACOBIAN_FLOOR: f64 = 1e-200;
/// Explicit steps with `h * |J|_inf` above this are stability-limited (the DOPRI5 region
/// reaches about 3.3 on the negative real axis).
const STIFF_LIMIT: f64 = 3.3;

/// Backward Euler by damped Newton with iterates kept nonnegative; `None` if Newton stalls.
fn backward_euler(
    f: &impl Fn([f64; 2]) -> [f64; 2],
    jac: Jacobian,
    y: [f64; 2],
    h: f64,
) -> Option<[f64; 2]> {
    let mut z = y;
    for _ in 0..60 {
        let fz = f(z);
        let g = [z[0] - y[0] - h * fz[0], z[1] - y[1] - h * fz[1]];
        let j = jac(z);
        let a = [
            [1.0 - h * j[0][0], -h * j[0][1]],
            [-h * j[1][0], 1.0 - h * j[1][1]],
        ];
        let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
        if !(det.is_finite() && det != 0.0) {
            return None;
        }
        let d = [
            -(a[1][1] * g[0] - a[0][1] * g[1]) / det,
            -(a[0][0] * g[1] - a[1][0] * g[0]) / det,
        ];
        let next = [(z[0] + d[0]).max(0.0), (z[1] + d[1]).max(0.0)];
        let moved = (next[0] - z[0]).abs().max((next[1] - z[1]).abs());
        z = next;
        if !(z[0].is_finite() && z[1].is_finite()) {
            return None;
        }
        if moved <= 1e-14 * z[0].max(z[1]) + 1e-300 {
            return Some(z);
        }
    }
    None
}

/// Two half steps of backward Euler extrapolated against one full step (second order,
/// damping at infinity); the error estimate is the half/full difference.
fn implicit_step(
    f: &impl Fn([f64; 2]) -> [f64; 2],
    jac: Jacobian,
    y: [f64; 2],
    h: f64,
) -> Option<([f64; 2], [f64; 2])> {
    let full = backward_euler(f, jac, y, h)?;
    let half = backward_euler(f, jac, backward_euler(f, jac, y, 0.5 * h)?, 0.5 * h)?;
    let ext = [
        (2.0 * half[0] - full[0]).max(0.0),
        (2.0 * half[1] - full[1]).max(0.0),
    ];
    Some((ext, [half[0] - full[0], half[1] - full[1]]))
}

fn stiffness(jac: Option<Jacobian>, y: [f64; 2]) -> f64 {
    jac.map_or(0.0, |jac| {
        let j = jac(y);
        (j[0][0].abs() + j[0][1].abs()).max(j[1][0].abs() + j[1][1].abs())
    })
}

/// Step with DOPRI5, or with the implicit fallback when `jac` is given and the step is
/// stability-limited. Returns the new state, the error norm and the controller order.
fn adaptive_step(
    f: &impl Fn([f64; 2]) -> [f64; 2],
    jac: Option<Jacobian>,
    y: [f64; 2],
    h: f64,
    opts: &IntegratorOptions,
) -> ([f64; 2], f64, f64) {
    if let Some(j) = jac.filter(|_| h * stiffness(jac, y) > STIFF_LIMIT) {
        return match implicit_step(f, j, y, h) {
            Some((y_new, err)) => (y_new, error_norm(err, y, y_new, opts), 2.0),
            None => (y, f64::INFINITY, 2.0),
        };
    }
    let (y_new, err) = dopri_step(f, y, h);
    (y_new, error_norm(err, y, y_new, opts), 5.0)
}

fn run_adaptive(
    f: impl Fn([f64; 2]) -> [f64; 2],
    jac: Option<Jacobian>,
    y0: [f64; 2],
    t0: f64,
    t_end: f64,
    stop: Stop,
    outputs: &[f64],
    opts: &IntegratorOptions,
) -> Result<AdaptiveRun> {
    let mut samples: Vec<Option<[f64; 2]>> = alloc::vec![None; outputs.len()];
    let mut next_out = 0;
    while next_out < outputs.len() && outputs[next_out] <= t0 {
        samples[next_out] = Some(y0);
        next_out += 1;
    }
    let mut states = alloc::vec![OdeState {
        w1: y0[0],
        w2: y0[1],
        t: t0
    }];
    if stop.hit(y0) {
        return Ok(AdaptiveRun {
            states,
            event_time: Some(t0),
            samples,
        });
    }

    let mut t = t0;
    let mut y = y0;
    let mut h = {
        let d = f(y);
        let dn = d[0].abs().max(d[1].abs());
        let yn = y[0].abs().max(y[1].abs());
        if dn > 0.0 {
            (0.01 * yn.max(opts.atol) / dn).min(0.1)
        } else {
            1e-3
        }
    }
    .max(1e-12);

    let mut steps = 0usize;
    while t < t_end {
        steps += 1;
        if steps > opts.max_steps {
            return Err(Error::NoConvergence {
                what: "adaptive ODE integration (step budget)",
                iterations: steps,
                residual: y[0].max(y[1]),
            });
        }
        let mut h_try = h.min(t_end - t);
        let mut hits_output = false;
        if next_out < outputs.len() && t + h_try >= outputs[next_out] {
            h_try = outputs[next_out] - t;
            hits_output = true;
        }
        if h_try <= 1e-15 * t.abs().max(1.0) && !hits_output {
            return Err(Error::StepUnderflow {
                t,
                h: h_try,
                w1: y[0],
                w2: y[1],
            });
        }
        let (y_new, en, order) = adaptive_step(&f, jac, y, h_try, opts);
        if !(en <= 1.0) || !y_new[0].is_finite() || !y_new[1].is_finite() {
            let factor = if en.is_finite() {
                (0.9 * powf(en, -1.0 / order)).clamp(0.1, 0.5)
            } else {
                0.1
            };
            h = h_try * factor;
            if h <= 1e-15 * t.abs().max(1.0) {
                return Err(Error::StepUnderflow {
                    t,
                    h,
                    w1: y[0],
                    w2: y[1],
                });
            }
            continue;
        }

        if stop.hit(y_new) {
            // bisect the fraction of the step at which the threshold is crossed
            let (mut lo, mut hi) = (0.0, 1.0);
            let mut y_hit = y_new;
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                let (ym, _, _) = adaptive_step(&f, jac, y, mid * h_try, opts);
                if stop.hit(ym) {
                    hi = mid;
                    y_hit = ym;
                } else {
                    lo = mid;
                }
            }
            let t_hit = t + hi * h_try;
            states.push(OdeState {
                w1: y_hit[0],
                w2: y_hit[1],
                t: t_hit,
            });
            while next_out < outputs.len() {
                if matches!(stop, Stop::Below(_)) && outputs[next_out] >= t_hit {
                    samples[next_out] = Some([0.0, 0.0]);
                } else if outputs[next_out] <= t_hit {
                    samples[next_out] = Some(y_hit);
                }
                next_out += 1;
            }
            return Ok(AdaptiveRun {
                states,
                event_time: Some(t_hit),
                samples,
            });
        }

        t = if hits_output {
            outputs[next_out]
        } else {
            t + h_try
        };
        y = y_new;
        if matches!(stop, Stop::Below(_)) && y[0].max(y[1]) > ODE_BLOW_UP_GUARD {
            return Err(Error::BlowUp {
                t,
                sup: y[0].max(y[1]),
            });
        }
        states.push(OdeState {
            w1: y[0],
            w2: y[1],
            t,
        });
        while next_out < outputs.len() && outputs[next_out] <= t {
            samples[next_out] = Some(y);
            next_out += 1;
        }
        let grow = if en > 0.0 {
            (0.9 * powf(en, -1.0 / order)).clamp(0.2, 5.0)
        } else {
            5.0
        };
        // do not let a short output-aligned step shrink the controller's step
        h = if hits_output {
            h.max(h_try * grow)
        } else {
            h_try * grow
        };
    }
    Ok(AdaptiveRun {
        states,
        event_time: None,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn reference() -> OdeParams {
        OdeParams::new(4.0, 1.0, 4.0, 1.0, 1.5, 1.5, 0.5, 0.5, 0.5).unwrap()
    }

    /// Fixed-step RK4 with the same clamping, independent of the adaptive driver.
    fn brute_force_extinction(params: &OdeParams, w0: [f64; 2], dt: f64) -> f64 {
        let mut y = w0;
        let mut t = 0.0;
        let f = |y: [f64; 2]| params.rhs(y);
        while y[0] > EXTINCTION_THRESHOLD || y[1] > EXTINCTION_THRESHOLD {
            let k1 = f(y);
            let k2 = f(axpy(y, dt, &[(0.5, k1)]));
            let k3 = f(axpy(y, dt, &[(0.5, k2)]));
            let k4 = f(axpy(y, dt, &[(1.0, k3)]));
            let next = axpy(
                y,
                dt,
                &[
                    (1.0 / 6.0, k1),
                    (1.0 / 3.0, k2),
                    (1.0 / 3.0, k3),
                    (1.0 / 6.0, k4),
                ],
            );
            y = [next[0].max(0.0), next[1].max(0.0)];
            t += dt;
        }
        t
    }

    #[test]
    fn membership_examples() {
        let p = reference();
        assert!(region_membership(&OdeState::new(0.0, 0.0), &p));
        assert!(region_membership(&OdeState::new(1.0, 1.0), &p));
        assert!(!region_membership(&OdeState::new(5.0, 1.0), &p));
        assert!(region_membership(&OdeState::new(0.25, 1.0), &p));
        assert!(region_membership(&OdeState::new(4.0, 1.0), &p));
        assert!(!region_membership(&OdeState::new(0.2499, 1.0), &p));
        let b = RegionBounds::of(&p);
        assert!((b.c_lo - 0.25).abs() < 1e-15 && (b.c_hi - 4.0).abs() < 1e-14);
    }

    #[test]
    fn nonempty_examples() {
        assert_eq!(
            region_nonempty(&reference()).unwrap(),
            RegionExtent::Unbounded
        );
        let weak = OdeParams::new(1.0, 1.0, 1.0, 1.0, 1.5, 1.5, 0.5, 0.5, 0.5).unwrap();
        assert_eq!(region_nonempty(&weak).unwrap(), RegionExtent::OriginOnly);

        let sup = OdeParams::new(2.0, 1.0, 3.0, 1.0, 1.5, 1.5, 1.0, 1.0, 0.5).unwrap();
        let b = RegionBounds::of(&sup);
        match region_nonempty(&sup).unwrap() {
            RegionExtent::UpTo(w2) => {
                let expected = powf(b.c_hi / b.c_lo, 1.0 / (b.e_lo - b.e_hi));
                assert!((w2 - expected).abs() < 1e-12 * expected);
                assert!((b.lower(w2) - b.upper(w2)).abs() < 1e-9 * b.upper(w2));
            }
            other => panic!("{other:?}"),
        }

        let sub = OdeParams::new(1.0, 1.0, 1.0, 1.0, 1.8, 1.8, 0.5, 0.5, 0.5).unwrap();
        assert!(region_nonempty(&sub).is_err());
    }

    #[test]
    fn decoupled_extinction_matches_closed_form() {
        for (a, p, w0) in [(1.0, 1.5, 1.0), (2.0, 1.2, 3.0), (0.5, 1.8, 0.7)] {
            let params = OdeParams::new(a, 0.0, 1.0, 0.0, p, 1.5, 1.0, 1.0, 0.5).unwrap();
            let sol = integrate(
                &params,
                &OdeState::new(w0, 0.0),
                &IntegratorOptions::default(),
            )
            .unwrap();
            // time to reach the threshold, not zero
            let exact = decoupled_extinction_time(a, p, w0)
                - decoupled_extinction_time(a, p, EXTINCTION_THRESHOLD);
            let t = sol.extinction_time.unwrap();
            assert!(
                (t / exact - 1.0).abs() < 1e-4,
                "a = {a}, p = {p}: {t} vs {exact}"
            );
        }
        let params = OdeParams::new(1.0, 0.0, 1.0, 0.0, 1.5, 1.5, 1.0, 1.0, 0.5).unwrap();
        let t = integrate(
            &params,
            &OdeState::new(1.0, 0.0),
            &IntegratorOptions::default(),
        )
        .unwrap()
        .extinction_time
        .unwrap();
        assert!((t - 2.0).abs() < 1e-4);
    }

    #[test]
    fn origin_is_extinct_at_zero() {
        let sol = integrate(
            &reference(),
            &OdeState::new(0.0, 0.0),
            &IntegratorOptions::default(),
        )
        .unwrap();
        assert_eq!(sol.extinction_time, Some(0.0));
    }

    #[test]
    fn coupled_reference_against_brute_force() {
        let params = reference();
        let sol = integrate(
            &params,
            &OdeState::new(1.0, 1.0),
            &IntegratorOptions::default(),
        )
        .unwrap();
        let t = sol.extinction_time.unwrap();
        let brute = brute_force_extinction(&params, [1.0, 1.0], 1e-6);
        assert!((t / brute - 1.0).abs() < 1e-3, "{t} vs {brute}");
        // symmetric data reduce to W' = -3 W^{1/2}
        assert!((t - 2.0 / 3.0).abs() < 1e-4);
    }

    #[test]
    fn stiff_slaved_component_reaches_extinction() {
        // W2 collapses onto W1^{n/(q-1)}, where the explicit step is stability-limited
        let params = OdeParams::new(
            1.52497, 0.779178, 3.75629, 0.697717, 1.67626, 1.33104, 1.02744, 0.843551, 0.695709,
        )
        .unwrap();
        let sol = integrate(
            &params,
            &OdeState::new(2.86668, 0.669589),
            &IntegratorOptions::default(),
        )
        .unwrap();
        let t = sol.extinction_time.unwrap();
        assert!(sol.trajectory.len() < 200_000);
        let brute = brute_force_extinction(&params, [2.86668, 0.669589], 2e-6);
        assert!((t / brute - 1.0).abs() < 1e-5, "{t} vs {brute}");
    }

    #[test]
    fn diagonal_start_stays_inside() {
        let rep = invariance_check(
            &reference(),
            &OdeState::new(1.0, 1.0),
            &IntegratorOptions::default(),
        )
        .unwrap();
        assert!(rep.pass, "{rep:?}");
        assert!(rep.extinction_time.is_some());
    }

    #[test]
    fn boundary_starts_are_reported() {
        // On both boundary curves of the reference parameters the vector field points outward;
        // the check must see it.
        let params = reference();
        for w1 in [0.25, 4.0] {
            let rep = invariance_check(
                &params,
                &OdeState::new(w1, 1.0),
                &IntegratorOptions::default(),
            )
            .unwrap();
            assert!(!rep.pass && rep.max_violation > 1e-3, "{rep:?}");
            assert!(rep.extinction_time.is_some());
        }
    }

    #[test]
    fn invariance_rejects_outside_start() {
        assert!(invariance_check(
            &reference(),
            &OdeState::new(5.0, 1.0),
            &IntegratorOptions::default()
        )
        .is_err());
    }

    #[test]
    fn growth_symmetric_exponential() {
        let outputs: Vec<f64> = (0..=50).map(|i| 0.1 * i as f64).collect();
        let sol = growth_integrate(1.0, 1.0, 1.0, 1.0, 5.0, &outputs).unwrap();
        assert!(sol.blow_up_time.is_none());
        for (t, s) in outputs.iter().zip(&sol.samples) {
            let (u, v) = s.unwrap();
            let e = crate::math::exp(*t);
            assert!(
                (u / e - 1.0).abs() < 1e-6 && (v / e - 1.0).abs() < 1e-6,
                "t = {t}"
            );
        }
        assert!(sol
            .trajectory
            .windows(2)
            .all(|w| w[1].1 >= w[0].1 && w[1].2 >= w[0].2));
    }

    #[test]
    fn growth_from_zero_stays_zero() {
        let sol = growth_integrate(0.5, 0.5, 0.0, 0.0, 3.0, &[1.0, 3.0]).unwrap();
        assert!(sol.blow_up_time.is_none());
        assert!(sol.samples.iter().all(|s| *s == Some((0.0, 0.0))));
    }

    #[test]
    fn growth_blow_up_time() {
        // U' = U^2 from 1: U = 1/(1-t) crosses 1e9 at 1 - 1e-9
        let sol = growth_integrate(2.0, 2.0, 1.0, 1.0, 10.0, &[]).unwrap();
        let t = sol.blow_up_time.unwrap();
        assert!((t - (1.0 - 1e-9)).abs() < 5e-3, "{t}");
        let sol = growth_integrate(1.2, 1.2, 1.0, 1.0, 10.0, &[]).unwrap();
        let exact = 5.0 * (1.0 - powf(1e9, -0.2));
        assert!((sol.blow_up_time.unwrap() / exact - 1.0).abs() < 1e-4);
    }

    #[test]
    fn g_system_window_and_extinction() {
        let (lo, hi) = g_window(0.5, 0.5, 1.5, 1.5, 0.5, 0.5, 0.8, 1.0);
        assert!((lo - 0.78125).abs() < 1e-12, "{lo}");
        assert!((hi - 1.28).abs() < 1e-12, "{hi}");
        let opts = IntegratorOptions::default();
        let g = g_system(0.5, 0.5, 1.5, 1.5, 0.5, 0.5, 0.8, (1.0, 1.0), &opts).unwrap();
        assert!(g.t0 > 0.0 && g.t0.is_finite());
        let end = g.solution.trajectory.last().unwrap();
        assert!(end.w1 <= EXTINCTION_THRESHOLD && end.w2 <= EXTINCTION_THRESHOLD);
        assert!(g_system(0.5, 0.5, 1.5, 1.5, 0.5, 0.5, 0.8, (2.0, 1.0), &opts).is_err());
        assert_eq!(
            g_system(0.5, 0.5, 1.5, 1.5, 0.5, 0.5, 0.8, (0.0, 0.0), &opts)
                .unwrap()
                .t0,
            0.0
        );
        // δ^2 must exceed Mq0^m Mp0^n = 0.5
        assert!(g_system(0.5, 0.5, 1.5, 1.5, 0.5, 0.5, 0.6, (1.0, 1.0), &opts).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn positivity_and_monotone_domination(
            a in 0.5f64..5.0, b in 0.1f64..3.0, p in 1.2f64..1.9, m in 0.3f64..1.0,
            w1 in 0.0f64..2.0, w2 in 0.0f64..2.0, bump in 0.0f64..0.5,
        ) {
            let params = OdeParams::new(a, b, a, b, p, p, m, m, 0.5).unwrap();
            let outputs: Vec<f64> = (1..=40).map(|i| 0.05 * i as f64).collect();
            let opts = IntegratorOptions { t_max: Some(2.0), ..Default::default() };
            let low = integrate_sampled(&params, &OdeState::new(w1, w2), &opts, &outputs).unwrap();
            let high = integrate_sampled(&params, &OdeState::new(w1 + bump, w2 + bump), &opts, &outputs).unwrap();
            for (l, h) in low.samples.iter().zip(&high.samples) {
                prop_assert!(l.w1 >= 0.0 && l.w2 >= 0.0);
                prop_assert!(l.w1 <= h.w1 + 1e-6 * (1.0 + h.w1) && l.w2 <= h.w2 + 1e-6 * (1.0 + h.w2));
            }
        }
    }
}
