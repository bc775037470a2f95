//! A single experiment: classify, build the criteria, simulate, cross-check.

use fastdiff_core::criteria::{
    self, build_subsolution, build_supersolution_case_ii, build_supersolution_critical,
    choose_exponents, compute_case_ii_constants, compute_ode_constants, default_thetas,
    dominated_by, shrink_exponents, CriteriaConstants, SubsolutionSpec,
};
use fastdiff_core::elliptic::{first_eigenpair, solve_torsion};
use fastdiff_core::grid::sup_norm;
use fastdiff_core::odecmp::{integrate, region_membership, IntegratorOptions, OdeState};
use fastdiff_core::parabolic::{simulate_with, SolverConfig, Source, Trajectory};
use fastdiff_core::{
    classify_regime, Field, Grid, Regime, RegimeClass, SupercriticalCase, SystemParams,
};
use serde::Serialize;

use crate::config::{ExperimentConfig, InitialData, Norms, ParamsConfig};
use crate::error::{HarnessError, Result};

pub const REPORT_SCHEMA_VERSION: u32 = 1;
/// Relative slack of the norm cross-check, applied to the size of the right-hand-side terms.
pub const CROSS_CHECK_REL_SLACK: f64 = 0.05;
pub const CROSS_CHECK_ABS_SLACK: f64 = 1e-9;
/// The cross-check skips norms below this multiple of `sqrt(eps_reg)`, where the flux
/// regularization visibly weakens the dissipation.
pub const CROSS_CHECK_FLOOR_FACTOR: f64 = 30.0;
/// Allowed excess of the PDE extinction time over the ODE one, relative.
pub const EXTINCTION_TIME_SLACK: f64 = 0.1;
/// The non-extinction protocol requires `u >= SUBSOLUTION_FACTOR * u_sub` throughout.
pub const SUBSOLUTION_FACTOR: f64 = 1.0 - 1e-3;
/// Relative and absolute slack of the critical-case supersolution check.
pub const SUPERSOLUTION_REL_SLACK: f64 = 0.05;
const ELLIPTIC_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegimeReport {
    pub class: String,
    pub supercritical_case: Option<String>,
    pub nonextinction_eligible: bool,
    pub mn: f64,
    pub threshold: f64,
}

impl RegimeReport {
    pub fn new(regime: &Regime, params: &SystemParams) -> Self {
        Self {
            class: format!("{:?}", regime.class),
            supercritical_case: regime.supercritical_case.map(|c| format!("{c:?}")),
            nonextinction_eligible: regime.nonextinction_eligible,
            mn: params.m * params.n,
            threshold: (params.p - 1.0) * (params.q - 1.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NormReport {
    pub s: f64,
    pub r: f64,
    /// Coupling exponents of the comparison system (shrunk when `mn > 1`).
    pub m: f64,
    pub n: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConstantsReport {
    pub a1: f64,
    pub b1: f64,
    pub a2: f64,
    pub b2: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConditionReport {
    pub pass: bool,
    pub norm_u: f64,
    pub norm_v: f64,
    pub lower: f64,
    pub upper: f64,
    pub lower_slack: f64,
    pub upper_slack: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CaseIIReport {
    pub k: f64,
    pub k_max: f64,
    pub l1: f64,
    pub l2: f64,
    pub m_p: f64,
    pub m_q: f64,
    /// Initial data lie below the supersolution.
    pub data_below: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriteriaReport {
    pub case: String,
    pub gamma_p: f64,
    pub gamma_q: f64,
    pub constants: ConstantsReport,
    pub condition: ConditionReport,
    pub supersolution: Option<CaseIIReport>,
}

impl CriteriaReport {
    /// The extinction criterion holds for these data.
    pub fn applies(&self) -> bool {
        self.condition.pass && self.supersolution.is_none_or(|s| s.data_below)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OdePrediction {
    pub w1: f64,
    pub w2: f64,
    pub in_region: bool,
    pub extinction_time: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrajectorySummary {
    pub steps: usize,
    pub t_end: f64,
    pub sup_u0: f64,
    pub sup_v0: f64,
    pub sup_u_end: f64,
    pub sup_v_end: f64,
    pub mean_energy_residual_u: f64,
    pub mean_energy_residual_v: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CrossCheck {
    pub checked_steps: usize,
    pub skipped_steps: usize,
    pub norm_floor: f64,
    /// Max of `dW/dt - (rhs + slack)`; nonpositive on a pass.
    pub max_excess_1: f64,
    pub max_excess_2: f64,
    pub t_pde: Option<f64>,
    pub t_ode: Option<f64>,
    pub t_pde_within_bound: Option<bool>,
    pub pass: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SubsolutionReport {
    pub k: f64,
    pub k_max: f64,
    pub theta1: f64,
    pub theta2: f64,
    /// Min over space-time of `w - SUBSOLUTION_FACTOR w_sub`.
    pub min_margin: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CriticalReport {
    pub m_p0: f64,
    pub m_q0: f64,
    pub delta: f64,
    pub g1_0: f64,
    pub g2_0: f64,
    pub t0: f64,
    pub data_below: bool,
    /// Max over space-time of `w - (1 + 5%) g(t) φ - extinction_tol` (when `data_below`).
    pub max_excess: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum Verdict {
    Extinct {
        time: f64,
    },
    /// No extinction, and a verified subsolution keeps the solution away from zero.
    Survived,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub params: ParamsConfig,
    pub n_cells: usize,
    pub seed: u64,
    pub regime: RegimeReport,
    pub norms: NormReport,
    pub criteria: Option<CriteriaReport>,
    pub ode: Option<OdePrediction>,
    pub critical: Option<CriticalReport>,
    pub subsolution: Option<SubsolutionReport>,
    pub trajectory: TrajectorySummary,
    pub extinction_time: Option<f64>,
    pub cross_check: Option<CrossCheck>,
    pub verdict: Verdict,
    /// Constructions that were attempted and failed, with the reason.
    pub notes: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: RunReport,
    pub trajectory: Trajectory,
}

fn bump(grid: &Grid, center: f64, width: f64, height: f64) -> Result<Field> {
    Ok(Field::from_fn(*grid, 0.0, |x| {
        let z = (x - center) / width;
        if z.abs() < 1.0 {
            let c = (0.5 * std::f64::consts::PI * z).cos();
            height * c * c
        } else {
            0.0
        }
    })?)
}

struct Prepared {
    u0: Field,
    v0: Field,
    subsolution: Option<SubsolutionSpec>,
}

fn prepare_data(
    cfg: &ExperimentConfig,
    params: &SystemParams,
    regime: &Regime,
    grid: &Grid,
    notes: &mut Vec<String>,
) -> Result<Prepared> {
    let (u0, v0) = match cfg.initial_data {
        InitialData::ScaledEigenfunction { c_u, c_v } => {
            let ep = first_eigenpair(params.p, grid, ELLIPTIC_TOL)?;
            let eq = if params.q == params.p {
                ep.clone()
            } else {
                first_eigenpair(params.q, grid, ELLIPTIC_TOL)?
            };
            (ep.phi1.scaled(c_u), eq.phi1.scaled(c_v))
        }
        InitialData::ScaledTorsion { c_u, c_v } => (
            solve_torsion(params.p, 0.0, grid, ELLIPTIC_TOL)?
                .phi
                .scaled(c_u),
            solve_torsion(params.q, 0.0, grid, ELLIPTIC_TOL)?
                .phi
                .scaled(c_v),
        ),
        InitialData::Bump {
            center,
            width,
            height_u,
            height_v,
        } => (
            bump(grid, center, width, height_u)?,
            bump(grid, center, width, height_v)?,
        ),
        InitialData::ZeroPair => (Field::zeros(*grid), Field::zeros(*grid)),
        InitialData::Subsolution { k_fraction } => {
            if !regime.nonextinction_eligible {
                return Err(HarnessError::Config(
                    "subsolution initial data need p = q, m, n <= p-1 and mn < (p-1)^2".into(),
                ));
            }
            let eig = first_eigenpair(params.p, grid, ELLIPTIC_TOL)?;
            let (t1, t2) = default_thetas(params);
            let base = build_subsolution(params, &eig, t1, t2, None)?;
            let k = k_fraction * base.k_max;
            let u0 = eig.phi1.scaled(k.powf(t1));
            let v0 = eig.phi1.scaled(k.powf(t2));
            let sub = build_subsolution(params, &eig, t1, t2, Some((&u0, &v0)))?;
            return Ok(Prepared {
                u0,
                v0,
                subsolution: Some(sub),
            });
        }
    };
    let mut subsolution = None;
    if regime.nonextinction_eligible {
        let eig = first_eigenpair(params.p, grid, ELLIPTIC_TOL)?;
        let (t1, t2) = default_thetas(params);
        match build_subsolution(params, &eig, t1, t2, Some((&u0, &v0))) {
            Ok(sub) => subsolution = Some(sub),
            Err(e) => notes.push(format!("subsolution: {e}")),
        }
    }
    Ok(Prepared {
        u0,
        v0,
        subsolution,
    })
}

fn norm_exponents(
    cfg: &ExperimentConfig,
    params: &SystemParams,
    regime: &Regime,
) -> Result<NormReport> {
    let (m, n) = if params.m * params.n > 1.0 {
        shrink_exponents(params.m, params.n)?
    } else {
        (params.m, params.n)
    };
    let (s, r) = match cfg.norms {
        Norms::Auto => choose_exponents(m, n)?,
        Norms::Explicit { s, r } => {
            if regime.class == RegimeClass::Supercritical && !(m <= r / s && r / s <= 1.0 / n) {
                return Err(HarnessError::Config(format!(
                    "norm exponents need {m} <= r/s <= {} (got r/s = {})",
                    1.0 / n,
                    r / s
                )));
            }
            (s, r)
        }
    };
    Ok(NormReport { s, r, m, n })
}

fn build_criteria(
    cfg: &ExperimentConfig,
    params: &SystemParams,
    regime: &Regime,
    grid: &Grid,
    norms: &NormReport,
    u0: &Field,
    v0: &Field,
) -> Result<Option<(CriteriaReport, CriteriaConstants)>> {
    let Some(case) = regime.supercritical_case else {
        return Ok(None);
    };
    let tol = cfg.criteria.embedding_tol;
    let gamma_p =
        criteria::estimate_embedding_constant_seeded(params.p, grid, tol, cfg.seed)?.gamma;
    let gamma_q = if params.q == params.p {
        gamma_p
    } else {
        criteria::estimate_embedding_constant_seeded(params.q, grid, tol, cfg.seed)?.gamma
    };
    let delta = cfg.criteria.delta;
    let (constants, supersolution) = match case {
        SupercriticalCase::CaseI => (
            compute_ode_constants(params, norms.s, norms.r, gamma_p, gamma_q, delta)?,
            None,
        ),
        SupercriticalCase::CaseII => {
            let sup = build_supersolution_case_ii(params, grid, cfg.criteria.delta0, None, None)?;
            let c =
                compute_case_ii_constants(params, norms.s, norms.r, gamma_p, gamma_q, delta, &sup)?;
            let report = CaseIIReport {
                k: sup.k,
                k_max: sup.k_max,
                l1: sup.l1,
                l2: sup.l2,
                m_p: sup.mp,
                m_q: sup.mq,
                data_below: dominated_by(u0, v0, &sup.u(), &sup.v()),
            };
            (c, Some(report))
        }
    };
    let cond = criteria::check_initial_condition(u0, v0, &constants, params)?;
    let report = CriteriaReport {
        case: format!("{case:?}"),
        gamma_p,
        gamma_q,
        constants: ConstantsReport {
            a1: constants.a1,
            b1: constants.b1,
            a2: constants.a2,
            b2: constants.b2,
            delta,
        },
        condition: ConditionReport {
            pass: cond.pass,
            norm_u: cond.norm_u,
            norm_v: cond.norm_v,
            lower: cond.lower,
            upper: cond.upper,
            lower_slack: cond.lower_slack,
            upper_slack: cond.upper_slack,
        },
        supersolution,
    };
    Ok(Some((report, constants)))
}

/// Finite-difference check of `W1' <= -a1 W1^{p-1} + b1 W2^m` (and the second inequality)
/// on the recorded norms.
pub fn cross_check(
    traj: &Trajectory,
    constants: &CriteriaConstants,
    params: &SystemParams,
    solver: &SolverConfig,
    t_ode: Option<f64>,
) -> CrossCheck {
    let floor = CROSS_CHECK_FLOOR_FACTOR * solver.eps_reg.sqrt();
    let c = constants;
    let terms1 = |w1: f64, w2: f64| (c.a1 * w1.powf(params.p - 1.0), c.b1 * w2.powf(c.m));
    let terms2 = |w1: f64, w2: f64| (c.a2 * w2.powf(params.q - 1.0), c.b2 * w1.powf(c.n));
    let bound = |a: (f64, f64), b: (f64, f64)| {
        (a.1 - a.0).max(b.1 - b.0)
            + CROSS_CHECK_REL_SLACK * (a.0 + a.1).max(b.0 + b.1)
            + CROSS_CHECK_ABS_SLACK
    };
    let mut out = CrossCheck {
        checked_steps: 0,
        skipped_steps: 0,
        norm_floor: floor,
        max_excess_1: f64::NEG_INFINITY,
        max_excess_2: f64::NEG_INFINITY,
        t_pde: traj.extinction_time,
        t_ode,
        t_pde_within_bound: None,
        pass: true,
    };
    for i in 1..traj.len() {
        let (a1, a2) = (traj.ls_u[i - 1], traj.lr_v[i - 1]);
        let (b1, b2) = (traj.ls_u[i], traj.lr_v[i]);
        if a1.min(a2).min(b1).min(b2) < floor {
            out.skipped_steps += 1;
            continue;
        }
        out.checked_steps += 1;
        let dt = traj.times[i] - traj.times[i - 1];
        let e1 = (b1 - a1) / dt - bound(terms1(a1, a2), terms1(b1, b2));
        let e2 = (b2 - a2) / dt - bound(terms2(a1, a2), terms2(b1, b2));
        out.max_excess_1 = out.max_excess_1.max(e1);
        out.max_excess_2 = out.max_excess_2.max(e2);
    }
    let t_end = traj.times.last().copied().unwrap_or(0.0);
    out.t_pde_within_bound = match (t_ode, traj.extinction_time) {
        (Some(to), Some(tp)) => Some(tp <= (1.0 + EXTINCTION_TIME_SLACK) * to),
        (Some(to), None) if (1.0 + EXTINCTION_TIME_SLACK) * to < t_end => Some(false),
        _ => None,
    };
    out.pass =
        out.max_excess_1 <= 0.0 && out.max_excess_2 <= 0.0 && out.t_pde_within_bound != Some(false);
    out
}

pub fn run(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let params = cfg.system_params()?;
    let grid = cfg.grid()?;
    let solver = cfg.solver_config()?;
    let regime = classify_regime(&params)?;
    let mut notes = Vec::new();

    let Prepared {
        u0,
        v0,
        subsolution,
    } = prepare_data(cfg, &params, &regime, &grid, &mut notes)?;
    let norms = norm_exponents(cfg, &params, &regime)?;
    let criteria = build_criteria(cfg, &params, &regime, &grid, &norms, &u0, &v0)?;

    let ode = match &criteria {
        Some((report, constants)) => {
            let ode_params = constants.ode_params(&params)?;
            let state = OdeState::new(report.condition.norm_u, report.condition.norm_v);
            let in_region = region_membership(&state, &ode_params);
            // Outside the region the comparison system may blow up; there is nothing to predict.
            let extinction_time = if report.applies() {
                integrate(&ode_params, &state, &IntegratorOptions::default())?.extinction_time
            } else {
                None
            };
            Some(OdePrediction {
                w1: state.w1,
                w2: state.w2,
                in_region,
                extinction_time,
            })
        }
        None => None,
    };

    let critical = if regime.class == RegimeClass::Critical {
        match build_supersolution_critical(&params, &grid, None, 1.0) {
            Ok(sup) => Some(sup),
            Err(e) => {
                notes.push(format!("critical supersolution: {e}"));
                None
            }
        }
    } else {
        None
    };
    let critical_below = critical.as_ref().is_some_and(|sup| {
        let (su, sv) = sup.fields_at(0.0);
        u0.interior().iter().zip(&su).all(|(a, b)| a <= b)
            && v0.interior().iter().zip(&sv).all(|(a, b)| a <= b)
    });

    let sub_fields = subsolution.as_ref().map(|s| (s.u(), s.v()));
    let mut min_margin = f64::INFINITY;
    let mut max_excess = f64::NEG_INFINITY;
    let ext_tol = solver.extinction_tol;
    let mut observer = |st: &fastdiff_core::StatePair| {
        if let Some((us, vs)) = &sub_fields {
            for (w, sub) in [(&st.u, us), (&st.v, vs)] {
                for (a, b) in w.interior().iter().zip(sub.interior()) {
                    min_margin = min_margin.min(a - SUBSOLUTION_FACTOR * b);
                }
            }
        }
        if critical_below {
            if let Some(sup) = &critical {
                let (su, sv) = sup.fields_at(st.t);
                for (w, bound) in [(&st.u, &su), (&st.v, &sv)] {
                    for (a, b) in w.interior().iter().zip(bound) {
                        max_excess =
                            max_excess.max(a - (1.0 + SUPERSOLUTION_REL_SLACK) * b - ext_tol);
                    }
                }
            }
        }
    };
    let trajectory = simulate_with(
        &u0,
        &v0,
        &params,
        &solver,
        norms.s,
        norms.r,
        &Source::Coupled,
        &mut observer,
    )?;

    let t_end = trajectory.times.last().copied().unwrap_or(0.0);
    let (res_u, res_v) = trajectory.mean_energy_residual(t_end);
    let last = trajectory.len() - 1;
    let summary = TrajectorySummary {
        steps: last,
        t_end,
        sup_u0: trajectory.sup_u[0],
        sup_v0: trajectory.sup_v[0],
        sup_u_end: trajectory.sup_u[last],
        sup_v_end: trajectory.sup_v[last],
        mean_energy_residual_u: res_u,
        mean_energy_residual_v: res_v,
    };

    let cross = criteria.as_ref().and_then(|(report, constants)| {
        report.applies().then(|| {
            cross_check(
                &trajectory,
                constants,
                &params,
                &solver,
                ode.and_then(|o| o.extinction_time),
            )
        })
    });
    let subsolution_report = subsolution.as_ref().map(|s| SubsolutionReport {
        k: s.k,
        k_max: s.k_max,
        theta1: s.theta1,
        theta2: s.theta2,
        min_margin,
        pass: min_margin >= 0.0,
    });
    let critical_report = critical.as_ref().map(|sup| CriticalReport {
        m_p0: sup.mp0,
        m_q0: sup.mq0,
        delta: sup.delta,
        g1_0: sup.g0.0,
        g2_0: sup.g0.1,
        t0: sup.t0,
        data_below: critical_below,
        max_excess: critical_below.then_some(max_excess),
    });

    // A subsolution below the extinction tolerance makes the threshold test meaningless.
    let unresolved = sub_fields
        .as_ref()
        .is_some_and(|(u, v)| sup_norm(u).max(sup_norm(v)) <= ext_tol);
    if unresolved {
        notes.push(format!(
            "subsolution amplitude is below extinction_tol = {ext_tol}; threshold-based extinction is ignored"
        ));
    }
    let held = subsolution_report.is_some_and(|s| s.pass);
    let reached_end = t_end >= solver.t_max * (1.0 - 1e-12);
    let verdict = match trajectory.extinction_time {
        Some(_) if unresolved => {
            if held && reached_end {
                Verdict::Survived
            } else {
                Verdict::Inconclusive
            }
        }
        Some(time) => Verdict::Extinct { time },
        None if held => Verdict::Survived,
        None => Verdict::Inconclusive,
    };
    let report = RunReport {
        schema_version: REPORT_SCHEMA_VERSION,
        params: cfg.params,
        n_cells: cfg.grid.n_cells,
        seed: cfg.seed,
        regime: RegimeReport::new(&regime, &params),
        norms,
        criteria: criteria.map(|(r, _)| r),
        ode,
        critical: critical_report,
        subsolution: subsolution_report,
        trajectory: summary,
        extinction_time: trajectory.extinction_time,
        cross_check: cross,
        verdict,
        notes,
    };
    Ok(RunOutput { report, trajectory })
}
