//! Sublinear expectation of lattice payoffs by monotone explicit finite
//! differences.
//!
//! The value function solves `du/dt + G(d2u/dx2) = 0` backward from the
//! terminal row, where `G(a) = (sigma_high_sq * a^+ - sigma_low_sq * a^-) / 2`.
//! One explicit step per node stays monotone exactly when
//! `dt * sigma_high_sq / h^2 <= 1`, which [`crate::grid::Grid`] enforces.
//! Each node update maximizes an affine function of the squared volatility,
//! so searching the two band endpoints is exact, not a heuristic.
//!
//! The same sweep with the concave envelope `G_low(a) = -G(-a)` produces
//! the lower expectation `-E[-X]`; [`Extremum`] selects the side. Every
//! scalar produced here carries the soft error bar
//! [`crate::grid::Grid::scheme_tol`].

use crate::boundary::TimeBoundary;
use crate::error::{ensure_finite, Error, Result};
use crate::grid::{Grid, ValueField, VolBounds};
use crate::par;
use crate::payoff::PayoffSpec;

/// Which envelope of the volatility band a sweep follows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Extremum {
    /// Supremum over the band: the sublinear expectation itself.
    Upper,
    /// Infimum over the band, i.e. `-E[-X]`.
    Lower,
}

/// `G(a)` for the upper envelope.
pub fn g_eval(a: f64, vb: &VolBounds) -> Result<f64> {
    ensure_finite(a, "second-difference argument")?;
    Ok(g_ext(a, vb, Extremum::Upper))
}

#[inline]
pub(crate) fn g_ext(a: f64, vb: &VolBounds, ext: Extremum) -> f64 {
    match ext {
        Extremum::Upper => 0.5 * (vb.high_sq() * a.max(0.0) - vb.low_sq() * (-a).max(0.0)),
        Extremum::Lower => 0.5 * (vb.low_sq() * a.max(0.0) - vb.high_sq() * (-a).max(0.0)),
    }
}

#[inline]
pub(crate) fn second_diff(row: &[f64], j: usize, h2: f64) -> f64 {
    // Boundary nodes extrapolate linearly, i.e. carry zero curvature.
    if j == 0 || j == row.len() - 1 {
        0.0
    } else {
        ((row[j + 1] - 2.0 * row[j]) + row[j - 1]) / h2
    }
}

#[inline]
pub(crate) fn first_diff(row: &[f64], j: usize, h: f64) -> f64 {
    if j == 0 {
        (row[1] - row[0]) / h
    } else if j == row.len() - 1 {
        (row[j] - row[j - 1]) / h
    } else {
        (row[j + 1] - row[j - 1]) / (2.0 * h)
    }
}

pub(crate) fn step_rows_ext(
    u_next: &[f64],
    f_row: Option<&[f64]>,
    g_row: Option<&[f64]>,
    grid: &Grid,
    vb: &VolBounds,
    ext: Extremum,
) -> Vec<f64> {
    let h2 = grid.h() * grid.h();
    let dt = grid.dt();
    par::row_map(u_next.len(), |j| {
        let mut a = second_diff(u_next, j, h2);
        if let Some(g) = g_row {
            a += 2.0 * g[j];
        }
        let mut v = u_next[j] + dt * g_ext(a, vb, ext);
        if let Some(f) = f_row {
            v += dt * f[j];
        }
        v
    })
}

/// One explicit backward step with optional source rows: returns
/// `u + dt * (G(D2 u + 2 g) + f)` nodewise.
pub fn step_back(
    u_next: &[f64],
    f_row: &[f64],
    g_row: &[f64],
    grid: &Grid,
    vb: &VolBounds,
) -> Result<Vec<f64>> {
    if u_next.len() != grid.nx() + 1 || f_row.len() != u_next.len() || g_row.len() != u_next.len() {
        return Err(Error::Mismatch(format!(
            "row lengths {} / {} / {} do not match grid width {}",
            u_next.len(),
            f_row.len(),
            g_row.len(),
            grid.nx() + 1
        )));
    }
    if grid.cfl_ratio(vb) > 1.0 + 1e-12 {
        return Err(Error::Config(
            "CFL violation: the explicit step would not be monotone".into(),
        ));
    }
    Ok(step_rows_ext(u_next, Some(f_row), Some(g_row), grid, vb, Extremum::Upper))
}

/// Full backward solve of the source-free equation from a terminal row.
pub fn solve_g_heat(terminal: &[f64], grid: &Grid, vb: &VolBounds) -> Result<ValueField> {
    solve_g_heat_ext(terminal, grid, vb, Extremum::Upper)
}

pub fn solve_g_heat_ext(
    terminal: &[f64],
    grid: &Grid,
    vb: &VolBounds,
    ext: Extremum,
) -> Result<ValueField> {
    check_row(terminal, grid)?;
    check_cfl(grid, vb)?;
    let mut rows = vec![Vec::new(); grid.nt() + 1];
    rows[grid.nt()] = terminal.to_vec();
    for i in (0..grid.nt()).rev() {
        let next = std::mem::take(&mut rows[i + 1]);
        rows[i] = step_rows_ext(&next, None, None, grid, vb, ext);
        rows[i + 1] = next;
    }
    Ok(ValueField::from_rows_unchecked(rows))
}

fn check_row(row: &[f64], grid: &Grid) -> Result<()> {
    if row.len() != grid.nx() + 1 {
        return Err(Error::Mismatch(format!(
            "row length {} does not match grid width {}",
            row.len(),
            grid.nx() + 1
        )));
    }
    for (j, v) in row.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::Domain(format!("row value at node {j} is not finite")));
        }
    }
    Ok(())
}

fn check_cfl(grid: &Grid, vb: &VolBounds) -> Result<()> {
    if grid.cfl_ratio(vb) > 1.0 + 1e-12 {
        return Err(Error::Config(
            "CFL violation: the explicit sweep would not be monotone".into(),
        ));
    }
    Ok(())
}

/// Sweep a row backward over `steps` lattice steps and return the value at
/// the spatial origin. This is the expectation of the row read as a payoff
/// of the state at time `steps * dt`, started from 0.
pub fn expect_row(
    row: &[f64],
    steps: usize,
    grid: &Grid,
    vb: &VolBounds,
    ext: Extremum,
) -> Result<f64> {
    check_row(row, grid)?;
    check_cfl(grid, vb)?;
    if steps > grid.nt() {
        return Err(Error::Alignment(format!(
            "window of {steps} steps exceeds the lattice ({} steps)",
            grid.nt()
        )));
    }
    let mut u = row.to_vec();
    for _ in 0..steps {
        u = step_rows_ext(&u, None, None, grid, vb, ext);
    }
    Ok(u[grid.center()])
}

/// Sublinear expectation of a payoff of the state at a grid-aligned time.
pub fn g_expectation(payoff: &PayoffSpec, t: f64, grid: &Grid, vb: &VolBounds) -> Result<f64> {
    payoff.validate()?;
    let steps = grid.t_index(t)?;
    expect_row(&payoff.terminal_row(grid), steps, grid, vb, Extremum::Upper)
}

/// Lower expectation `-E[-payoff]` of a payoff of the state.
pub fn g_expectation_lower(
    payoff: &PayoffSpec,
    t: f64,
    grid: &Grid,
    vb: &VolBounds,
) -> Result<f64> {
    payoff.validate()?;
    let steps = grid.t_index(t)?;
    expect_row(&payoff.terminal_row(grid), steps, grid, vb, Extremum::Lower)
}

/// Expectation of the field's slice at grid index `i`.
pub fn mean_at(field: &ValueField, i: usize, grid: &Grid, vb: &VolBounds, ext: Extremum) -> Result<f64> {
    if i >= field.n_rows() {
        return Err(Error::Alignment(format!(
            "slice index {i} outside field of {} rows",
            field.n_rows()
        )));
    }
    expect_row(field.row(i), i, grid, vb, ext)
}

/// Expectation of every slice of the field: one scalar per grid time.
pub fn mean_curve(field: &ValueField, grid: &Grid, vb: &VolBounds, ext: Extremum) -> Result<Vec<f64>> {
    (0..field.n_rows()).map(|i| mean_at(field, i, grid, vb, ext)).collect()
}

/// Expectation of a loss applied to a recentered field slice:
/// `E[ loss(t, S_t - m + x_offset) ]` where `m` is the upper (or lower)
/// expectation of `S_t` chosen by `centering`.
///
/// This is the bridge from a solved field to the deterministic boundary
/// functions fed to the Skorokhod solver and to the threshold equations.
pub fn mean_functional_centered<B: TimeBoundary + ?Sized>(
    field: &ValueField,
    loss: &B,
    t: f64,
    x_offset: f64,
    grid: &Grid,
    vb: &VolBounds,
    centering: Extremum,
) -> Result<f64> {
    ensure_finite(x_offset, "x_offset")?;
    let i = grid.t_index(t)?;
    let m = mean_at(field, i, grid, vb, centering)?;
    let row: Vec<f64> =
        field.row(i).iter().map(|&s| loss.eval(i, s - m + x_offset)).collect();
    expect_row(&row, i, grid, vb, Extremum::Upper)
}

/// Upper-centered mean functional, the common case.
pub fn mean_functional<B: TimeBoundary + ?Sized>(
    field: &ValueField,
    loss: &B,
    t: f64,
    x_offset: f64,
    grid: &Grid,
    vb: &VolBounds,
) -> Result<f64> {
    mean_functional_centered(field, loss, t, x_offset, grid, vb, Extremum::Upper)
}
