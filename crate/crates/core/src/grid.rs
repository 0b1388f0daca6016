//! Volatility band, time/space lattice and value fields.

use crate::csvio;
use crate::error::{ensure_finite, Error, Result};
use std::io::Write;
use std::path::Path;

/// Default number of time steps.
pub const DEFAULT_NT: usize = 200;
/// Default number of space cells.
pub const DEFAULT_NX: usize = 400;
/// Safety factor kept between the parabolic ratio and its monotonicity
/// limit when a grid is sized automatically, leaving headroom for the
/// gradient coupling of z-dependent generators.
pub const CFL_MARGIN: f64 = 1.25;
/// Scheme-tolerance coefficient: scalar outputs carry the soft error bar
/// `KAPPA_SCHEME * (h + dt)`.
pub const KAPPA_SCHEME: f64 = 10.0;

/// Volatility band `[sigma_low_sq, sigma_high_sq]` for the squared
/// diffusion coefficient.
///
/// The sublinear setting requires `0 <= sigma_low_sq < sigma_high_sq`
/// strictly; [`VolBounds::classical`] additionally admits the degenerate
/// band `sigma_low_sq == sigma_high_sq`, which reduces every solver in the
/// crate to its classical constant-volatility counterpart and is used as a
/// cross-check oracle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VolBounds {
    sigma_low_sq: f64,
    sigma_high_sq: f64,
}

impl VolBounds {
    pub fn new(sigma_low_sq: f64, sigma_high_sq: f64) -> Result<Self> {
        ensure_finite(sigma_low_sq, "sigma_low_sq")?;
        ensure_finite(sigma_high_sq, "sigma_high_sq")?;
        if !(0.0 <= sigma_low_sq && sigma_low_sq < sigma_high_sq) {
            return Err(Error::Config(format!(
                "VolBounds invariant violated: require 0 <= sigma_low_sq < sigma_high_sq \
                 (strict), got [{sigma_low_sq}, {sigma_high_sq}]"
            )));
        }
        Ok(Self { sigma_low_sq, sigma_high_sq })
    }

    /// Degenerate band with a single squared volatility, for classical
    /// cross-checks.
    pub fn classical(sigma_sq: f64) -> Result<Self> {
        ensure_finite(sigma_sq, "sigma_sq")?;
        if sigma_sq <= 0.0 {
            return Err(Error::Config(format!(
                "classical volatility must be positive, got {sigma_sq}"
            )));
        }
        Ok(Self { sigma_low_sq: sigma_sq, sigma_high_sq: sigma_sq })
    }

    pub fn low_sq(&self) -> f64 {
        self.sigma_low_sq
    }

    pub fn high_sq(&self) -> f64 {
        self.sigma_high_sq
    }

    pub fn high(&self) -> f64 {
        self.sigma_high_sq.sqrt()
    }

    pub fn is_degenerate(&self) -> bool {
        self.sigma_low_sq == self.sigma_high_sq
    }
}

/// Uniform lattice on `[0, horizon] x [-x_half_width, x_half_width]`.
///
/// Invariants enforced at construction: `nt >= 2`, `nx >= 2` and even (so
/// the space grid is symmetric about and contains 0), and the parabolic
/// ratio `dt * sigma_high_sq / h^2 <= 1`, which is exactly the monotonicity
/// limit of the explicit sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    horizon: f64,
    nt: usize,
    nx: usize,
    x_half_width: f64,
}

impl Grid {
    pub fn new(horizon: f64, nt: usize, nx: usize, x_half_width: f64, vb: &VolBounds) -> Result<Self> {
        ensure_finite(horizon, "horizon")?;
        ensure_finite(x_half_width, "x_half_width")?;
        if horizon <= 0.0 {
            return Err(Error::Config(format!("horizon must be positive, got {horizon}")));
        }
        if x_half_width <= 0.0 {
            return Err(Error::Config(format!(
                "x_half_width must be positive, got {x_half_width}"
            )));
        }
        if nt < 2 {
            return Err(Error::Config(format!("nt must be at least 2, got {nt}")));
        }
        if nx < 2 || nx % 2 != 0 {
            return Err(Error::Config(format!(
                "nx must be even and at least 2 so the space grid contains 0, got {nx}"
            )));
        }
        let grid = Self { horizon, nt, nx, x_half_width };
        let ratio = grid.cfl_ratio(vb);
        if ratio > 1.0 + 1e-12 {
            return Err(Error::Config(format!(
                "CFL violation: dt * sigma_high_sq / h^2 = {ratio:.6} exceeds 1; \
                 increase nt, decrease nx, or widen x_half_width"
            )));
        }
        Ok(grid)
    }

    /// Build a grid from step counts alone.
    ///
    /// The half width starts from `6 * sigma_high * sqrt(horizon)` (wide
    /// enough that domain truncation is far below scheme error) and widens
    /// further when needed so that the parabolic ratio stays at or below
    /// `1 / CFL_MARGIN` for the requested `nt x nx`.
    pub fn auto(horizon: f64, nt: usize, nx: usize, vb: &VolBounds) -> Result<Self> {
        if horizon <= 0.0 || !horizon.is_finite() {
            return Err(Error::Config(format!("horizon must be positive, got {horizon}")));
        }
        if nt < 2 {
            return Err(Error::Config(format!("nt must be at least 2, got {nt}")));
        }
        let dt = horizon / nt as f64;
        let base = 6.0 * vb.high() * horizon.sqrt();
        let cfl_width = 0.5 * nx as f64 * vb.high() * (CFL_MARGIN * dt).sqrt();
        Self::new(horizon, nt, nx, base.max(cfl_width), vb)
    }

    pub fn with_defaults(horizon: f64, vb: &VolBounds) -> Result<Self> {
        Self::auto(horizon, DEFAULT_NT, DEFAULT_NX, vb)
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn nt(&self) -> usize {
        self.nt
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn x_half_width(&self) -> f64 {
        self.x_half_width
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.nt as f64
    }

    pub fn h(&self) -> f64 {
        2.0 * self.x_half_width / self.nx as f64
    }

    /// `dt * sigma_high_sq / h^2`, the monotonicity ratio of the sweep.
    pub fn cfl_ratio(&self, vb: &VolBounds) -> f64 {
        self.dt() * vb.high_sq() / (self.h() * self.h())
    }

    /// Node `j` of the space grid; `x(nx/2)` is exactly 0.
    pub fn x(&self, j: usize) -> f64 {
        (j as isize - (self.nx / 2) as isize) as f64 * self.h()
    }

    pub fn xs(&self) -> Vec<f64> {
        (0..=self.nx).map(|j| self.x(j)).collect()
    }

    /// Index of the spatial origin.
    pub fn center(&self) -> usize {
        self.nx / 2
    }

    pub fn t(&self, i: usize) -> f64 {
        i as f64 * self.dt()
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.nt).map(|i| self.t(i)).collect()
    }

    /// Map a query time onto its grid index; times must be grid-aligned.
    pub fn t_index(&self, t: f64) -> Result<usize> {
        if !t.is_finite() || t < -1e-12 || t > self.horizon * (1.0 + 1e-12) {
            return Err(Error::Alignment(format!(
                "time {t} outside [0, {}]",
                self.horizon
            )));
        }
        let raw = t / self.dt();
        let i = raw.round();
        if (raw - i).abs() > 1e-9 * (1.0 + raw.abs()) {
            return Err(Error::Alignment(format!(
                "time {t} is not an integer multiple of dt = {}",
                self.dt()
            )));
        }
        Ok((i as usize).min(self.nt))
    }

    /// Soft error bar attached to scalar lattice outputs.
    pub fn scheme_tol(&self) -> f64 {
        KAPPA_SCHEME * (self.h() + self.dt())
    }
}

/// Values on the full lattice: `nt + 1` rows of `nx + 1` nodes, row `i`
/// holding the slice at time `t_i`. Row `nt` always equals the supplied
/// terminal data.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueField {
    rows: Vec<Vec<f64>>,
}

impl ValueField {
    pub fn from_rows(rows: Vec<Vec<f64>>, grid: &Grid) -> Result<Self> {
        if rows.len() != grid.nt() + 1 {
            return Err(Error::Mismatch(format!(
                "field has {} rows, grid expects {}",
                rows.len(),
                grid.nt() + 1
            )));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != grid.nx() + 1 {
                return Err(Error::Mismatch(format!(
                    "row {i} has {} nodes, grid expects {}",
                    row.len(),
                    grid.nx() + 1
                )));
            }
            for (j, v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::Domain(format!(
                        "field value at ({i}, {j}) is not finite"
                    )));
                }
            }
        }
        Ok(Self { rows })
    }

    pub(crate) fn from_rows_unchecked(rows: Vec<Vec<f64>>) -> Self {
        Self { rows }
    }

    /// Constant-in-time field replicating one row.
    pub fn constant_in_time(row: Vec<f64>, grid: &Grid) -> Result<Self> {
        Self::from_rows(vec![row; grid.nt() + 1], grid)
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.rows[i][j]
    }

    /// Dump as CSV with header `t,x,u` in time-major order.
    pub fn dump_csv<W: Write>(&self, w: &mut W, grid: &Grid) -> Result<()> {
        writeln!(w, "t,x,u")?;
        for (i, row) in self.rows.iter().enumerate() {
            let t = grid.t(i);
            for (j, v) in row.iter().enumerate() {
                writeln!(
                    w,
                    "{},{},{}",
                    csvio::fmt_f64(t),
                    csvio::fmt_f64(grid.x(j)),
                    csvio::fmt_f64(*v)
                )?;
            }
        }
        Ok(())
    }

    pub fn dump_csv_path(&self, path: &Path, grid: &Grid) -> Result<()> {
        let mut buf = Vec::new();
        self.dump_csv(&mut buf, grid)?;
        std::fs::write(path, buf)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn band() -> VolBounds {
        VolBounds::new(0.25, 1.0).unwrap()
    }

    #[test]
    fn vol_bounds_rejects_inverted_and_equal() {
        assert!(VolBounds::new(1.0, 0.25).is_err());
        assert!(VolBounds::new(1.0, 1.0).is_err());
        assert!(VolBounds::new(-0.5, 1.0).is_err());
        assert!(VolBounds::classical(1.0).is_ok());
    }

    #[test]
    fn grid_enforces_monotonicity_ratio() {
        // The naive default half width violates the ratio at 200 x 400.
        let narrow = Grid::new(1.0, 200, 400, 6.0, &band());
        assert!(matches!(narrow, Err(Error::Config(_))));
        let g = Grid::with_defaults(1.0, &band()).unwrap();
        assert!(g.cfl_ratio(&band()) <= 1.0 / CFL_MARGIN + 1e-12);
        assert!(g.x_half_width() >= 6.0);
    }

    #[test]
    fn grid_origin_is_exact() {
        let g = Grid::with_defaults(1.0, &band()).unwrap();
        assert_eq!(g.x(g.center()), 0.0);
        assert_eq!(g.xs().len(), g.nx() + 1);
    }

    #[test]
    fn t_index_alignment() {
        let g = Grid::with_defaults(1.0, &band()).unwrap();
        assert_eq!(g.t_index(0.0).unwrap(), 0);
        assert_eq!(g.t_index(0.5).unwrap(), 100);
        assert_eq!(g.t_index(1.0).unwrap(), 200);
        assert!(g.t_index(0.5 + 0.3 * g.dt()).is_err());
        assert!(g.t_index(1.5).is_err());
    }

    #[test]
    fn odd_nx_rejected() {
        assert!(Grid::new(1.0, 10, 11, 20.0, &band()).is_err());
    }
}
