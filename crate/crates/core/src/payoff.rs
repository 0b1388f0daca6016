//! Terminal payoff catalog.
//!
//! Payoffs are catalog objects rather than arbitrary callables so that the
//! declared Lipschitz bounds can be verified by sampling at construction.

use crate::error::{ensure_finite, Error, Result};
use crate::grid::Grid;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PayoffSpec {
    /// `c0 + c1 * x`
    Affine { c0: f64, c1: f64 },
    /// `c0 + c1 * x + c2 * x^2`
    Quadratic { c0: f64, c1: f64, c2: f64 },
    /// `c0 + c1 * |x|`
    Abs { c0: f64, c1: f64 },
    /// `c0 + c1 * max(x - strike, 0)`
    Call { c0: f64, c1: f64, strike: f64 },
    /// `c0 + c1 * sin(c2 * x)`, bounded and Lipschitz.
    BoundedLipschitzSin { c0: f64, c1: f64, c2: f64 },
}

impl PayoffSpec {
    pub fn validate(&self) -> Result<()> {
        let cs: Vec<f64> = match *self {
            PayoffSpec::Affine { c0, c1 } => vec![c0, c1],
            PayoffSpec::Quadratic { c0, c1, c2 } => vec![c0, c1, c2],
            PayoffSpec::Abs { c0, c1 } => vec![c0, c1],
            PayoffSpec::Call { c0, c1, strike } => vec![c0, c1, strike],
            PayoffSpec::BoundedLipschitzSin { c0, c1, c2 } => vec![c0, c1, c2],
        };
        for c in cs {
            ensure_finite(c, "payoff coefficient")?;
        }
        if let Some(l) = self.lipschitz_bound() {
            // The declared bound must hold on a sampled net.
            let xs: Vec<f64> = (-40..=40).map(|k| k as f64 * 0.25).collect();
            for w in xs.windows(2) {
                let (x0, x1) = (w[0], w[1]);
                let d = (self.eval(x1) - self.eval(x0)).abs();
                if d > l * (x1 - x0).abs() * (1.0 + 1e-9) + 1e-12 {
                    return Err(Error::Catalog(format!(
                        "declared Lipschitz bound {l} violated between {x0} and {x1}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            PayoffSpec::Affine { c0, c1 } => c0 + c1 * x,
            PayoffSpec::Quadratic { c0, c1, c2 } => c0 + c1 * x + c2 * x * x,
            PayoffSpec::Abs { c0, c1 } => c0 + c1 * x.abs(),
            PayoffSpec::Call { c0, c1, strike } => c0 + c1 * (x - strike).max(0.0),
            PayoffSpec::BoundedLipschitzSin { c0, c1, c2 } => c0 + c1 * (c2 * x).sin(),
        }
    }

    /// Declared global Lipschitz bound, `None` for the quadratic member.
    pub fn lipschitz_bound(&self) -> Option<f64> {
        match *self {
            PayoffSpec::Affine { c1, .. } => Some(c1.abs()),
            PayoffSpec::Quadratic { .. } => None,
            PayoffSpec::Abs { c1, .. } => Some(c1.abs()),
            PayoffSpec::Call { c1, .. } => Some(c1.abs()),
            PayoffSpec::BoundedLipschitzSin { c1, c2, .. } => Some((c1 * c2).abs()),
        }
    }

    /// Sample onto the space grid as a terminal row.
    pub fn terminal_row(&self, grid: &Grid) -> Vec<f64> {
        (0..=grid.nx()).map(|j| self.eval(grid.x(j))).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::VolBounds;

    #[test]
    fn eval_matches_closed_forms() {
        let p = PayoffSpec::Call { c0: 0.0, c1: 2.0, strike: 1.0 };
        assert_eq!(p.eval(0.5), 0.0);
        assert_eq!(p.eval(2.0), 2.0);
        assert_eq!(p.lipschitz_bound(), Some(2.0));
    }

    #[test]
    fn declared_bounds_hold_on_catalog() {
        let cat = [
            PayoffSpec::Affine { c0: 1.0, c1: -3.0 },
            PayoffSpec::Abs { c0: 0.0, c1: 2.0 },
            PayoffSpec::Call { c0: 0.5, c1: 1.5, strike: -0.5 },
            PayoffSpec::BoundedLipschitzSin { c0: 0.0, c1: 2.0, c2: 3.0 },
            PayoffSpec::Quadratic { c0: 0.0, c1: 0.0, c2: 1.0 },
        ];
        for p in cat {
            p.validate().unwrap();
        }
    }

    #[test]
    fn terminal_row_is_grid_shaped() {
        let vb = VolBounds::new(0.25, 1.0).unwrap();
        let g = Grid::with_defaults(1.0, &vb).unwrap();
        let row = PayoffSpec::Affine { c0: 0.0, c1: 1.0 }.terminal_row(&g);
        assert_eq!(row.len(), g.nx() + 1);
        assert_eq!(row[g.center()], 0.0);
    }
}
