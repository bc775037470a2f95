//! Numerics for the coupled fast-diffusion system
//!
//! ```text
//! u_t = (|u_x|^{p-2} u_x)_x + v^m,    v_t = (|v_x|^{q-2} v_x)_x + u^n
//! ```
//!
//! on a 1-D interval with Dirichlet data, for `1 < p, q < 2` and `m, n > 0`.
//!
//! The crate is `no_std` (it needs `alloc`) and covers:
//!
//! * [`params`] / [`grid`]: parameters, regime classification, discrete fields and norms;
//! * [`elliptic`]: torsion functions and the first eigenpair of the discrete p-Laplacian;
//! * [`parabolic`]: backward-Euler/Picard time stepping, extinction detection, comparison
//!   and monotone-iteration checks;
//! * [`odecmp`]: the comparison ODE system, its candidate invariant region, and an adaptive
//!   positivity-preserving integrator that runs through the non-Lipschitz origin;
//! * [`criteria`]: embedding constants, extinction constants, initial-data conditions and
//!   the explicit super/subsolution constructions.
//!
//! IO, configuration and the command line live in the `fastdiff` crate.
#![no_std]
// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

extern crate alloc;
#[cfg(test)]
extern crate std;

mod error;
pub mod math;
mod tridiag;

pub mod criteria;
pub mod elliptic;
pub mod grid;
pub mod odecmp;
pub mod parabolic;
pub mod params;
pub mod plap;

pub use error::{Error, Result};
pub use grid::{Field, Grid, StatePair};
pub use params::{classify_regime, Regime, RegimeClass, SupercriticalCase, SystemParams};
