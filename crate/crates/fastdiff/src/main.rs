use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fastdiff::config::ExperimentConfig;
use fastdiff::error::{HarnessError, Result};
use fastdiff::export::{save_json, save_trajectory_csv, to_json_string};
use fastdiff::run::{run, RegimeReport};
use fastdiff::sweep::{sweep, worker_count, Axis};
use fastdiff_core::elliptic::{first_eigenpair, solve_torsion};
use fastdiff_core::odecmp::{
    integrate, region_membership, region_nonempty, IntegratorOptions, OdeParams, OdeState,
    RegionBounds, RegionExtent,
};
use fastdiff_core::{classify_regime, Grid, SystemParams};
use serde::Serialize;

/// Fast-diffusion system experiments: simulation, sweeps and the comparison ODE.
#[derive(Parser)]
#[command(version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment from a TOML config and print the JSON report.
    #[command(after_help = CONFIG_HELP)]
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Write the norm history as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Write the report here instead of stdout.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Run a config over a product grid of exponents. Threads: FASTDIFF_WORKERS, default all cores.
    #[command(after_help = CONFIG_HELP)]
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// `name=start:end:count` with name in p, q, m, n. Repeatable.
        #[arg(long = "axis", required = true)]
        axes: Vec<Axis>,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Integrate the comparison ODE from a state `W1,W2`.
    #[command(
        after_help = "Adaptive integration with rtol 1e-8, atol 1e-12; extinction when \
                            max(W1, W2) <= 1e-10. Horizon: 1000x the decoupled extinction times."
    )]
    Ode {
        #[arg(long)]
        a1: f64,
        #[arg(long)]
        b1: f64,
        #[arg(long)]
        a2: f64,
        #[arg(long)]
        b2: f64,
        #[arg(long)]
        p: f64,
        #[arg(long)]
        q: f64,
        #[arg(long)]
        m: f64,
        #[arg(long)]
        n: f64,
        #[arg(long)]
        delta: f64,
        #[arg(long, value_parser = parse_state)]
        state: (f64, f64),
    },
    /// Torsion function of the p-Laplacian with boundary value delta0 on (0, 1).
    #[command(after_help = "Nonlinear solves converge to a relative tolerance of 1e-10.")]
    Elliptic {
        #[arg(long)]
        p: f64,
        #[arg(long, default_value_t = 0.0)]
        delta0: f64,
        #[arg(long, default_value_t = 256)]
        cells: usize,
    },
    /// First Dirichlet eigenpair of the p-Laplacian on (0, 1).
    #[command(after_help = "Nonlinear solves converge to a relative tolerance of 1e-10.")]
    Eigen {
        #[arg(long)]
        p: f64,
        #[arg(long, default_value_t = 256)]
        cells: usize,
    },
    /// Classify the exponents (interval (0, 1)).
    Classify {
        #[arg(long)]
        p: f64,
        #[arg(long)]
        q: f64,
        #[arg(long)]
        m: f64,
        #[arg(long)]
        n: f64,
    },
}

const TOL: f64 = 1e-10;

const CONFIG_HELP: &str = "\
Config sections and defaults:
  seed = 0
  [params]        p, q, m, n (required); x_lo = 0, x_hi = 1
  [grid]          n_cells (required)
  [solver]        t_max (required); dt = h/4; eps_reg = 1e-8; picard_tol = 1e-10;
                  picard_max = 500; extinction_tol = 1e-6; run_to_t_max = false
  [initial_data]  kind = scaled_eigenfunction | scaled_torsion (c_u, c_v),
                  bump (center, width, height_u, height_v), zero_pair,
                  subsolution (k_fraction = 0.5)
  norms           \"auto\" (default) or { s = .., r = .. }
  [criteria]      delta = 0.5; delta0 = 0.2; embedding_tol = 1e-9

Extinction needs sup-norms <= extinction_tol for 20 consecutive steps.
Exit codes: 0 success, 2 configuration or IO error, 3 numerical failure.";

fn parse_state(s: &str) -> std::result::Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or("expected W1,W2")?;
    let a = a.trim().parse().map_err(|e| format!("W1: {e}"))?;
    let b = b.trim().parse().map_err(|e| format!("W2: {e}"))?;
    Ok((a, b))
}

#[derive(Serialize)]
struct OdeOutput {
    in_region: bool,
    region: String,
    c_lo: f64,
    e_lo: f64,
    c_hi: f64,
    e_hi: f64,
    extinction_time: Option<f64>,
    steps: usize,
    final_state: (f64, f64, f64),
}

#[derive(Serialize)]
struct EllipticOutput {
    p: f64,
    delta0: f64,
    cells: usize,
    sup: f64,
    residual: f64,
}

#[derive(Serialize)]
struct EigenOutput {
    p: f64,
    cells: usize,
    lambda1: f64,
    iterations: usize,
}

fn emit<T: Serialize>(value: &T, path: Option<&PathBuf>) -> Result<()> {
    match path {
        Some(p) => save_json(value, p),
        None => {
            let mut out = std::io::stdout().lock();
            match writeln!(out, "{}", to_json_string(value)) {
                // A closed reader (`| head`) is not our error.
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(HarnessError::Io {
                    path: "<stdout>".into(),
                    source: e,
                }),
                _ => Ok(()),
            }
        }
    }
}

fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::Simulate { config, csv, json } => {
            let cfg = ExperimentConfig::load(&config)?;
            let out = run(&cfg)?;
            if let Some(path) = &csv {
                save_trajectory_csv(&out.trajectory, path)?;
            }
            emit(&out.report, json.as_ref())
        }
        Command::Sweep { config, axes, json } => {
            let cfg = ExperimentConfig::load(&config)?;
            let report = sweep(&cfg, &axes, worker_count()?)?;
            emit(&report, json.as_ref())
        }
        Command::Ode {
            a1,
            b1,
            a2,
            b2,
            p,
            q,
            m,
            n,
            delta,
            state,
        } => {
            let params = OdeParams::new(a1, b1, a2, b2, p, q, m, n, delta)?;
            let s0 = OdeState::new(state.0, state.1);
            let sol = integrate(&params, &s0, &IntegratorOptions::default())?;
            let b = RegionBounds::of(&params);
            let last = sol.trajectory.last().copied().unwrap_or(s0);
            let region = match region_nonempty(&params)? {
                RegionExtent::OriginOnly => "origin_only".to_string(),
                RegionExtent::Unbounded => "unbounded".to_string(),
                RegionExtent::UpTo(w2) => format!("up_to_w2={w2}"),
            };
            emit(
                &OdeOutput {
                    in_region: region_membership(&s0, &params),
                    region,
                    c_lo: b.c_lo,
                    e_lo: b.e_lo,
                    c_hi: b.c_hi,
                    e_hi: b.e_hi,
                    extinction_time: sol.extinction_time,
                    steps: sol.trajectory.len().saturating_sub(1),
                    final_state: (last.t, last.w1, last.w2),
                },
                None,
            )
        }
        Command::Elliptic { p, delta0, cells } => {
            let grid = Grid::new(0.0, 1.0, cells)?;
            let t = solve_torsion(p, delta0, &grid, TOL)?;
            emit(
                &EllipticOutput {
                    p,
                    delta0,
                    cells,
                    sup: t.sup,
                    residual: t.residual,
                },
                None,
            )
        }
        Command::Eigen { p, cells } => {
            let grid = Grid::new(0.0, 1.0, cells)?;
            let e = first_eigenpair(p, &grid, TOL)?;
            emit(
                &EigenOutput {
                    p,
                    cells,
                    lambda1: e.lambda1,
                    iterations: e.iterations,
                },
                None,
            )
        }
        Command::Classify { p, q, m, n } => {
            let params = SystemParams::new(p, q, m, n, 0.0, 1.0)?;
            emit(
                &RegimeReport::new(&classify_regime(&params)?, &params),
                None,
            )
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
