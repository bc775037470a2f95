//! Parameter sweeps over a cartesian grid of exponents.

use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};
use crate::run::{run, Verdict, REPORT_SCHEMA_VERSION};

/// Environment variable capping the number of sweep threads.
pub const WORKERS_ENV: &str = "FASTDIFF_WORKERS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum AxisName {
    P,
    Q,
    M,
    N,
}

/// `name=start:end:count`, evenly spaced and inclusive, e.g. `m=0.2:0.8:4`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Axis {
    pub name: AxisName,
    pub values: Vec<f64>,
}

impl FromStr for Axis {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |why: &str| {
            HarnessError::Config(format!("axis `{s}`: {why} (expected name=start:end:count)"))
        };
        let (name, range) = s.split_once('=').ok_or_else(|| bad("missing `=`"))?;
        let name = match name.trim() {
            "p" => AxisName::P,
            "q" => AxisName::Q,
            "m" => AxisName::M,
            "n" => AxisName::N,
            _ => return Err(bad("name must be one of p, q, m, n")),
        };
        let parts: Vec<&str> = range.split(':').collect();
        let [start, end, count] = parts[..] else {
            return Err(bad("need three fields"));
        };
        let start: f64 = start.trim().parse().map_err(|_| bad("bad start"))?;
        let end: f64 = end.trim().parse().map_err(|_| bad("bad end"))?;
        let count: usize = count.trim().parse().map_err(|_| bad("bad count"))?;
        if count == 0 || !start.is_finite() || !end.is_finite() {
            return Err(bad("count must be positive and bounds finite"));
        }
        if count == 1 && start != end {
            return Err(bad("a single point needs start = end"));
        }
        let values = (0..count)
            .map(|i| {
                if count == 1 {
                    start
                } else {
                    start + (end - start) * i as f64 / (count - 1) as f64
                }
            })
            .collect();
        Ok(Self { name, values })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CellVerdict {
    Extinct,
    Survived,
    Inconclusive,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepCell {
    pub index: usize,
    pub p: f64,
    pub q: f64,
    pub m: f64,
    pub n: f64,
    pub regime: Option<String>,
    pub verdict: CellVerdict,
    pub extinction_time: Option<f64>,
    /// Whether the extinction criterion applies to the data (supercritical regimes only).
    pub criterion_applies: Option<bool>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepReport {
    pub schema_version: u32,
    pub axes: Vec<Axis>,
    pub cells: Vec<SweepCell>,
}

/// Thread count: `FASTDIFF_WORKERS` if set, else the available parallelism.
pub fn worker_count() -> Result<usize> {
    match std::env::var(WORKERS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(HarnessError::Config(format!(
                "{WORKERS_ENV} must be a positive integer, got `{v}`"
            ))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

fn cell_config(base: &ExperimentConfig, axes: &[Axis], mut index: usize) -> ExperimentConfig {
    let mut cfg = base.clone();
    for axis in axes.iter().rev() {
        let v = axis.values[index % axis.values.len()];
        index /= axis.values.len();
        match axis.name {
            AxisName::P => cfg.params.p = v,
            AxisName::Q => cfg.params.q = v,
            AxisName::M => cfg.params.m = v,
            AxisName::N => cfg.params.n = v,
        }
    }
    cfg
}

fn run_cell(cfg: &ExperimentConfig, index: usize) -> SweepCell {
    let mut cell = SweepCell {
        index,
        p: cfg.params.p,
        q: cfg.params.q,
        m: cfg.params.m,
        n: cfg.params.n,
        regime: None,
        verdict: CellVerdict::Failed,
        extinction_time: None,
        criterion_applies: None,
        error: None,
    };
    match run(cfg) {
        Ok(out) => {
            let r = out.report;
            cell.regime = Some(r.regime.class);
            cell.extinction_time = r.extinction_time;
            cell.criterion_applies = r.criteria.as_ref().map(|c| c.applies());
            cell.verdict = match r.verdict {
                Verdict::Extinct { .. } => CellVerdict::Extinct,
                Verdict::Survived => CellVerdict::Survived,
                Verdict::Inconclusive => CellVerdict::Inconclusive,
            };
        }
        Err(e) => cell.error = Some(e.to_string()),
    }
    cell
}

/// Runs every cell of the product grid (last axis varies fastest). Failed cells are
/// reported, not propagated; the result does not depend on `workers`.
pub fn sweep(base: &ExperimentConfig, axes: &[Axis], workers: usize) -> Result<SweepReport> {
    for (i, a) in axes.iter().enumerate() {
        if axes[..i].iter().any(|b| b.name == a.name) {
            return Err(HarnessError::Config(format!(
                "axis {:?} given twice",
                a.name
            )));
        }
    }
    let total: usize = axes.iter().map(|a| a.values.len()).product();
    let next = AtomicUsize::new(0);
    let done = Mutex::new(Vec::with_capacity(total));
    std::thread::scope(|scope| {
        for _ in 0..workers.clamp(1, total.max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= total {
                    break;
                }
                let cell = run_cell(&cell_config(base, axes, i), i);
                done.lock()
                    .expect("no worker panics while holding the lock")
                    .push(cell);
            });
        }
    });
    let mut cells = done.into_inner().expect("workers finished");
    cells.sort_by_key(|c| c.index);
    Ok(SweepReport {
        schema_version: REPORT_SCHEMA_VERSION,
        axes: axes.to_vec(),
        cells,
    })
}
