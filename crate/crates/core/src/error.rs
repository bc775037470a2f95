use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// Parameters or inputs outside the admissible set.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("{what} did not converge after {iterations} iterations (last residual {residual:e})")]
    NoConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    /// The discrete maximum principle was violated beyond the clamping tolerance.
    #[error("negative value {value:e} at node {node} (t = {t})")]
    Negativity { node: usize, value: f64, t: f64 },

    #[error("sup-norm {sup:e} exceeded the blow-up guard at t = {t}")]
    BlowUp { t: f64, sup: f64 },

    #[error("step size underflow at t = {t} (h = {h:e}, state = ({w1:e}, {w2:e}))")]
    StepUnderflow { t: f64, h: f64, w1: f64, w2: f64 },

    /// A construction's hypotheses fail for the given data (e.g. domain too large).
    #[error("construction failed: {0}")]
    Construction(String),
}

macro_rules! invalid {
    ($($arg:tt)*) => {
        $crate::Error::InvalidInput(alloc::format!($($arg)*))
    };
}
pub(crate) use invalid;
