//! Deterministic curves of time used for loss thresholds and drift rates.

use crate::error::{ensure_finite, Result};

/// A closed-form scalar function of time, sampled onto lattices as needed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TimeCurve {
    /// Constant value.
    Const(f64),
    /// `c0 + c1 * t`.
    Affine { c0: f64, c1: f64 },
}

impl TimeCurve {
    pub fn eval(&self, t: f64) -> f64 {
        match *self {
            TimeCurve::Const(c) => c,
            TimeCurve::Affine { c0, c1 } => c0 + c1 * t,
        }
    }

    /// Sample onto an explicit list of times.
    pub fn sample(&self, times: &[f64]) -> Vec<f64> {
        times.iter().map(|&t| self.eval(t)).collect()
    }

    /// Largest absolute value attained on `[0, horizon]`.
    pub fn sup_abs(&self, horizon: f64) -> f64 {
        match *self {
            TimeCurve::Const(c) => c.abs(),
            TimeCurve::Affine { c0, c1 } => c0.abs().max((c0 + c1 * horizon).abs()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            TimeCurve::Const(c) => {
                ensure_finite(c, "curve constant")?;
            }
            TimeCurve::Affine { c0, c1 } => {
                ensure_finite(c0, "curve intercept")?;
                ensure_finite(c1, "curve slope")?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_eval_and_sup() {
        let c = TimeCurve::Affine { c0: 0.5, c1: -0.5 };
        assert_eq!(c.eval(0.0), 0.5);
        assert_eq!(c.eval(1.0), 0.0);
        assert_eq!(c.sup_abs(1.0), 0.5);
    }
}
