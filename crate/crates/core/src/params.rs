//! System parameters and regime classification.

use crate::error::{invalid, Result};
use crate::math::rel_eq;

/// Relative tolerance deciding `mn = (p-1)(q-1)`.
pub const CRITICAL_RTOL: f64 = 1e-12;

/// Exponents of the coupled system and the spatial interval `(x_lo, x_hi)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SystemParams {
    pub p: f64,
    pub q: f64,
    /// Source exponent on `v` in the `u` equation.
    pub m: f64,
    /// Source exponent on `u` in the `v` equation.
    pub n: f64,
    pub x_lo: f64,
    pub x_hi: f64,
}

impl SystemParams {
    pub fn new(p: f64, q: f64, m: f64, n: f64, x_lo: f64, x_hi: f64) -> Result<Self> {
        let params = Self {
            p,
            q,
            m,
            n,
            x_lo,
            x_hi,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.p, self.q, self.m, self.n, self.x_lo, self.x_hi];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(invalid!("parameters must be finite: {:?}", self));
        }
        if !(self.p > 1.0 && self.p < 2.0) || !(self.q > 1.0 && self.q < 2.0) {
            return Err(invalid!(
                "fast-diffusion range requires 1 < p, q < 2 (got p = {}, q = {})",
                self.p,
                self.q
            ));
        }
        if !(self.m > 0.0 && self.n > 0.0) {
            return Err(invalid!(
                "source exponents must be positive (got m = {}, n = {})",
                self.m,
                self.n
            ));
        }
        if !(self.x_hi > self.x_lo) {
            return Err(invalid!("empty interval ({}, {})", self.x_lo, self.x_hi));
        }
        Ok(())
    }

    /// `|Ω|`.
    pub fn measure(&self) -> f64 {
        self.x_hi - self.x_lo
    }

    /// `mn - (p-1)(q-1)`.
    pub fn criticality_gap(&self) -> f64 {
        self.m * self.n - (self.p - 1.0) * (self.q - 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RegimeClass {
    /// `mn > (p-1)(q-1)`
    Supercritical,
    /// `mn = (p-1)(q-1)`
    Critical,
    /// `mn < (p-1)(q-1)`
    Subcritical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SupercriticalCase {
    /// `mn <= 1`: norm exponents can be chosen directly.
    CaseI,
    /// `mn > 1`: needs the bounded supersolution first.
    CaseII,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Regime {
    pub class: RegimeClass,
    pub supercritical_case: Option<SupercriticalCase>,
    /// `p = q`, `0 < m, n <= p-1` and `mn < (p-1)^2`.
    pub nonextinction_eligible: bool,
}

pub fn classify_regime(params: &SystemParams) -> Result<Regime> {
    params.validate()?;
    let SystemParams { p, q, m, n, .. } = *params;
    let product = m * n;
    let threshold = (p - 1.0) * (q - 1.0);

    let class = if rel_eq(product, threshold, CRITICAL_RTOL) {
        RegimeClass::Critical
    } else if product > threshold {
        RegimeClass::Supercritical
    } else {
        RegimeClass::Subcritical
    };
    let supercritical_case = (class == RegimeClass::Supercritical).then_some(if product <= 1.0 {
        SupercriticalCase::CaseI
    } else {
        SupercriticalCase::CaseII
    });
    let nonextinction_eligible =
        p == q && m <= p - 1.0 && n <= p - 1.0 && product < (p - 1.0) * (p - 1.0);

    Ok(Regime {
        class,
        supercritical_case,
        nonextinction_eligible,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn params(p: f64, q: f64, m: f64, n: f64) -> SystemParams {
        SystemParams::new(p, q, m, n, 0.0, 1.0).unwrap()
    }

    #[test]
    fn supercritical_case_one() {
        let r = classify_regime(&params(1.5, 1.5, 1.0, 1.0)).unwrap();
        assert_eq!(r.class, RegimeClass::Supercritical);
        assert_eq!(r.supercritical_case, Some(SupercriticalCase::CaseI));
        assert!(!r.nonextinction_eligible);
    }

    #[test]
    fn supercritical_case_two() {
        let r = classify_regime(&params(1.5, 1.5, 1.5, 1.0)).unwrap();
        assert_eq!(r.supercritical_case, Some(SupercriticalCase::CaseII));
    }

    #[test]
    fn critical() {
        let r = classify_regime(&params(1.5, 1.5, 0.5, 0.5)).unwrap();
        assert_eq!(r.class, RegimeClass::Critical);
        assert_eq!(r.supercritical_case, None);
        assert!(!r.nonextinction_eligible);
    }

    #[test]
    fn critical_survives_rounding() {
        // mn only equals (p-1)(q-1) up to rounding here
        let n = (1.3 - 1.0) * (1.7 - 1.0) / 0.7;
        let r = classify_regime(&params(1.3, 1.7, 0.7, n)).unwrap();
        assert_eq!(r.class, RegimeClass::Critical);
    }

    #[test]
    fn subcritical_eligible() {
        let r = classify_regime(&params(1.8, 1.8, 0.5, 0.5)).unwrap();
        assert_eq!(r.class, RegimeClass::Subcritical);
        assert!(r.nonextinction_eligible);
    }

    #[test]
    fn subcritical_not_eligible_when_p_ne_q() {
        let r = classify_regime(&params(1.8, 1.7, 0.5, 0.5)).unwrap();
        assert_eq!(r.class, RegimeClass::Subcritical);
        assert!(!r.nonextinction_eligible);
    }

    #[test]
    fn rejects_bad_params() {
        assert!(SystemParams::new(2.5, 1.5, 1.0, 1.0, 0.0, 1.0).is_err());
        assert!(SystemParams::new(1.5, 1.0, 1.0, 1.0, 0.0, 1.0).is_err());
        assert!(SystemParams::new(1.5, 1.5, 0.0, 1.0, 0.0, 1.0).is_err());
        assert!(SystemParams::new(1.5, 1.5, 1.0, 1.0, 1.0, 1.0).is_err());
        assert!(SystemParams::new(1.5, 1.5, f64::NAN, 1.0, 0.0, 1.0).is_err());
    }

    proptest! {
        #[test]
        fn classes_partition(p in 1.01f64..1.99, q in 1.01f64..1.99, m in 0.01f64..3.0, n in 0.01f64..3.0) {
            let r = classify_regime(&params(p, q, m, n)).unwrap();
            let gap = m * n - (p - 1.0) * (q - 1.0);
            match r.class {
                RegimeClass::Supercritical => prop_assert!(gap > 0.0),
                RegimeClass::Subcritical => prop_assert!(gap < 0.0),
                RegimeClass::Critical => prop_assert!(gap.abs() <= 1e-12 * (m * n)),
            }
            prop_assert_eq!(r.supercritical_case.is_some(), r.class == RegimeClass::Supercritical);
            if r.nonextinction_eligible {
                prop_assert!(p == q && m <= p - 1.0 && n <= p - 1.0);
            }
        }
    }
}
