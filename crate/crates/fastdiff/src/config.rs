//! Experiment configuration, read from TOML.
//!
//! ```toml
//! seed = 7
//!
//! [params]
//! p = 1.5
//! q = 1.5
//! m = 1.0
//! n = 1.0
//! x_lo = 0.0
//! x_hi = 1.0
//!
//! [grid]
//! n_cells = 256
//!
//! [solver]
//! t_max = 1.0
//! eps_reg = 1e-12
//!
//! [initial_data]
//! kind = "scaled_eigenfunction"
//! c_u = 0.01
//! c_v = 0.01
//! ```

use std::path::Path;

use fastdiff_core::parabolic::SolverConfig;
use fastdiff_core::{Grid, SystemParams};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub params: ParamsConfig,
    pub grid: GridConfig,
    pub solver: SolverSection,
    pub initial_data: InitialData,
    #[serde(default)]
    pub norms: Norms,
    #[serde(default)]
    pub criteria: CriteriaSection,
    /// Seed of the random embedding-constant test fields.
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsConfig {
    pub p: f64,
    pub q: f64,
    pub m: f64,
    pub n: f64,
    #[serde(default)]
    pub x_lo: f64,
    #[serde(default = "one")]
    pub x_hi: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub n_cells: usize,
}

/// Solver settings; omitted fields take the library defaults (`dt = h/4`, `eps_reg = 1e-8`,
/// `picard_tol = 1e-10`, `picard_max = 500`, `extinction_tol = 1e-6`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub t_max: f64,
    pub dt: Option<f64>,
    pub eps_reg: Option<f64>,
    pub picard_tol: Option<f64>,
    pub picard_max: Option<usize>,
    pub extinction_tol: Option<f64>,
    /// Keep integrating after extinction is confirmed.
    #[serde(default)]
    pub run_to_t_max: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialData {
    /// `c_u φ1(p)`, `c_v φ1(q)` with the sup-normalized first eigenfunctions.
    ScaledEigenfunction {
        c_u: f64,
        c_v: f64,
    },
    /// `c_u φ_p`, `c_v φ_q` with the zero-boundary torsion functions.
    ScaledTorsion {
        c_u: f64,
        c_v: f64,
    },
    /// `height cos^2(π (x - center) / (2 width))` on `|x - center| < width`.
    Bump {
        center: f64,
        width: f64,
        height_u: f64,
        height_v: f64,
    },
    ZeroPair,
    /// The stationary subsolution at `k = k_fraction k_max` (needs a non-extinction-eligible
    /// regime).
    Subsolution {
        #[serde(default = "half")]
        k_fraction: f64,
    },
}

fn half() -> f64 {
    0.5
}

/// `"auto"` or explicit `{ s = .., r = .. }`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(untagged)]
pub enum Norms {
    #[default]
    #[serde(with = "auto_tag")]
    Auto,
    Explicit {
        s: f64,
        r: f64,
    },
}

mod auto_tag {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str("auto")
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<(), D::Error> {
        let tag = String::deserialize(d)?;
        if tag == "auto" {
            Ok(())
        } else {
            Err(serde::de::Error::custom(format!(
                "expected \"auto\", got {tag:?}"
            )))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CriteriaSection {
    /// `δ1` of the Case I condition (`δ2` in Case II).
    pub delta: f64,
    /// Boundary value of the Case II torsion functions.
    pub delta0: f64,
    /// Tolerance of the embedding-constant ascent.
    pub embedding_tol: f64,
}

impl Default for CriteriaSection {
    fn default() -> Self {
        Self {
            delta: 0.5,
            delta0: 0.2,
            embedding_tol: 1e-9,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            HarnessError::Config(msg) => HarnessError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn system_params(&self) -> Result<SystemParams> {
        let p = &self.params;
        Ok(SystemParams::new(p.p, p.q, p.m, p.n, p.x_lo, p.x_hi)?)
    }

    pub fn grid(&self) -> Result<Grid> {
        Ok(Grid::new(
            self.params.x_lo,
            self.params.x_hi,
            self.grid.n_cells,
        )?)
    }

    pub fn solver_config(&self) -> Result<SolverConfig> {
        let grid = self.grid()?;
        let s = &self.solver;
        let mut cfg = SolverConfig::new(s.dt.unwrap_or(0.25 * grid.h()), s.t_max)?;
        if let Some(v) = s.eps_reg {
            cfg.eps_reg = v;
        }
        if let Some(v) = s.picard_tol {
            cfg.picard_tol = v;
        }
        if let Some(v) = s.picard_max {
            cfg.picard_max = v;
        }
        if let Some(v) = s.extinction_tol {
            cfg.extinction_tol = v;
        }
        cfg.stop_on_extinction = !s.run_to_t_max;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks everything that can be checked without solving.
    pub fn validate(&self) -> Result<()> {
        self.system_params()?;
        self.solver_config()?;
        let c = &self.criteria;
        if !(c.delta > 0.0 && c.delta < 1.0) {
            return Err(HarnessError::Config(format!(
                "criteria.delta must lie in (0, 1) (got {})",
                c.delta
            )));
        }
        if !(c.delta0 > 0.0) || !(c.embedding_tol > 0.0) {
            return Err(HarnessError::Config(
                "criteria.delta0 and criteria.embedding_tol must be positive".into(),
            ));
        }
        let nonneg = |name: &str, v: f64| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(HarnessError::Config(format!(
                    "initial_data.{name} must be finite and >= 0 (got {v})"
                )))
            }
        };
        match self.initial_data {
            InitialData::ScaledEigenfunction { c_u, c_v }
            | InitialData::ScaledTorsion { c_u, c_v } => {
                nonneg("c_u", c_u)?;
                nonneg("c_v", c_v)?;
            }
            InitialData::Bump {
                width,
                height_u,
                height_v,
                center,
            } => {
                if !(width > 0.0) || !center.is_finite() {
                    return Err(HarnessError::Config(
                        "bump needs a finite center and width > 0".into(),
                    ));
                }
                nonneg("height_u", height_u)?;
                nonneg("height_v", height_v)?;
            }
            InitialData::ZeroPair => {}
            InitialData::Subsolution { k_fraction } => {
                if !(k_fraction > 0.0 && k_fraction <= 1.0) {
                    return Err(HarnessError::Config(format!(
                        "k_fraction must lie in (0, 1] (got {k_fraction})"
                    )));
                }
            }
        }
        if let Norms::Explicit { s, r } = self.norms {
            if !(s >= 2.0 && r >= 2.0) {
                return Err(HarnessError::Config(format!(
                    "norm exponents need s, r >= 2 (got {s}, {r})"
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
        [params]
        p = 1.5
        q = 1.5
        m = 1.0
        n = 1.0

        [grid]
        n_cells = 64

        [solver]
        t_max = 1.0

        [initial_data]
        kind = "scaled_eigenfunction"
        c_u = 0.01
        c_v = 0.01
    "#;

    #[test]
    fn parses_with_defaults() {
        let cfg = ExperimentConfig::from_toml_str(BASE).unwrap();
        assert_eq!(cfg.norms, Norms::Auto);
        assert_eq!(cfg.params.x_hi, 1.0);
        let solver = cfg.solver_config().unwrap();
        assert_eq!(solver.dt, 0.25 / 64.0);
        assert_eq!(solver.eps_reg, 1e-8);
        cfg.validate().unwrap();
    }

    #[test]
    fn round_trips() {
        let mut cfg = ExperimentConfig::from_toml_str(BASE).unwrap();
        cfg.norms = Norms::Explicit { s: 2.0, r: 3.0 };
        cfg.initial_data = InitialData::Bump {
            center: 0.5,
            width: 0.2,
            height_u: 1.0,
            height_v: 0.5,
        };
        let back = ExperimentConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn rejects_bad_values() {
        let text = BASE.replace("p = 1.5", "p = 2.5");
        let cfg = ExperimentConfig::from_toml_str(&text).unwrap();
        assert!(matches!(cfg.validate(), Err(HarnessError::Config(_))));
        assert!(ExperimentConfig::from_toml_str(&BASE.replace("n_cells", "cells")).is_err());
        let text = format!("norms = \"manual\"\n{BASE}");
        assert!(ExperimentConfig::from_toml_str(&text).is_err());
    }
}
