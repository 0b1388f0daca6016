//! Backward lattice solver for equations driven by the sublinear
//! expectation, with generators acting on value and gradient.
//!
//! The sweep realizes `dY = -[G(D2 Y + 2 g(t, x, Y, Z)) + f(t, x, Y, Z)] dt`
//! one explicit step at a time, reading `Y` and `Z = D1 Y` from the later
//! slice so the step stays monotone. Alongside the value field it exposes
//! the argument field `a = D2 Y + 2 g` fed to the envelope `G`, from which
//! the control-dependent defect process `K` is realized: along any selected
//! squared volatility the increment `dt (s2 a / 2 - G(a))` is nonpositive,
//! and it vanishes exactly along the per-node argmax.
//!
//! [`expect_with_k`] evaluates conditional expectations of accrued
//! functionals of a solved field by dynamic programming over the same
//! two-point control set, with the defect accrual switchable in sign.

use crate::curve::TimeCurve;
use crate::error::{ensure_finite, Error, Result};
use crate::gexp::{first_diff, g_ext, second_diff, step_rows_ext, Extremum};
use crate::grid::{Grid, ValueField, VolBounds};
use crate::par;

/// Steepest secant of the logarithmic modulus over increments of at least
/// `1e-8`: the modulus is not Lipschitz at 0, but every difference the
/// lattice can resolve is far coarser than that floor, so this slope is
/// what the monotonicity budget has to absorb.
pub const MAO_SECANT_FLOOR: f64 = 1e-8;

/// `1 - ln(MAO_SECANT_FLOOR)`, about 19.42.
pub fn mao_effective_slope() -> f64 {
    1.0 - MAO_SECANT_FLOOR.ln()
}

/// Concave modulus `u (1 - ln u)` on `(0, 1]`, `0` at `0`, `u` above `1`.
///
/// It vanishes only at 0 and `integral of du / mu(u)` diverges at `0+`
/// (substituting `v = 1 - ln u` turns it into `integral dv / v`), the
/// combination that forces uniqueness for the fixed-point policy.
pub fn mao_mu(u: f64) -> f64 {
    if u <= 0.0 {
        0.0
    } else if u <= 1.0 {
        u * (1.0 - u.ln())
    } else {
        u
    }
}

/// Odd extension `sign(y) * mao_mu(|y|)`.
pub fn mao_m(y: f64) -> f64 {
    if y < 0.0 {
        -mao_mu(-y)
    } else {
        mao_mu(y)
    }
}

/// Catalog forms for the scalar parts of a generator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GenFun {
    /// `a0 + a1 * y + a2 * z`
    Affine { a0: f64, a1: f64, a2: f64 },
    /// `a0 + a1 * sin(y) + a2 * |z|`
    LipschitzSin { a0: f64, a1: f64, a2: f64 },
    /// `a0 + a1 * m(y) + a2 * z` with the non-Lipschitz odd modulus `m`.
    Mao { a0: f64, a1: f64, a2: f64 },
}

impl GenFun {
    pub fn zero() -> Self {
        GenFun::Affine { a0: 0.0, a1: 0.0, a2: 0.0 }
    }

    pub fn eval(&self, y: f64, z: f64) -> f64 {
        match *self {
            GenFun::Affine { a0, a1, a2 } => a0 + a1 * y + a2 * z,
            GenFun::LipschitzSin { a0, a1, a2 } => a0 + a1 * y.sin() + a2 * z.abs(),
            GenFun::Mao { a0, a1, a2 } => a0 + a1 * mao_m(y) + a2 * z,
        }
    }

    fn coeffs(&self) -> (f64, f64, f64) {
        match *self {
            GenFun::Affine { a0, a1, a2 }
            | GenFun::LipschitzSin { a0, a1, a2 }
            | GenFun::Mao { a0, a1, a2 } => (a0, a1, a2),
        }
    }

    /// Coefficient of the value dependence; 0 means no dependence on `y`.
    pub fn y_coeff(&self) -> f64 {
        self.coeffs().1
    }

    /// Slope bound in `y` as the budget check sees it: for the logarithmic
    /// modulus this is the secant surrogate, not a true Lipschitz constant.
    pub fn y_slope_bound(&self) -> f64 {
        let (_, a1, _) = self.coeffs();
        match self {
            GenFun::Mao { .. } => a1.abs() * mao_effective_slope(),
            _ => a1.abs(),
        }
    }

    /// Exact slope bound in `z`.
    pub fn z_slope_bound(&self) -> f64 {
        self.coeffs().2.abs()
    }

    pub fn depends_on_z(&self) -> bool {
        self.coeffs().2 != 0.0
    }

    pub fn depends_on_y(&self) -> bool {
        self.coeffs().1 != 0.0
    }

    fn validate(&self) -> Result<()> {
        let (a0, a1, a2) = self.coeffs();
        for c in [a0, a1, a2] {
            ensure_finite(c, "generator coefficient")?;
        }
        Ok(())
    }
}

/// A generator pair `(f, g)`: `f` accrues against time, `g` against the
/// quadratic variation (it is doubled into the argument of `G`). The
/// optional `gamma` curve adds `gamma(t) * y` to `f`; it is the only
/// admissible value dependence of `f` when present, which is what the
/// transform-based solver policy relies on.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorSpec {
    pub f: GenFun,
    pub g: GenFun,
    pub gamma: Option<TimeCurve>,
    /// Declared bound on the `z`-increments of both `f` and `g`,
    /// cross-checked by sampling at construction.
    pub kappa: f64,
}

impl GeneratorSpec {
    pub fn new(f: GenFun, g: GenFun, gamma: Option<TimeCurve>, kappa: f64) -> Result<Self> {
        f.validate()?;
        g.validate()?;
        ensure_finite(kappa, "kappa")?;
        if kappa < 0.0 {
            return Err(Error::Config(format!("kappa must be nonnegative, got {kappa}")));
        }
        if let Some(c) = &gamma {
            c.validate()?;
            if f.y_coeff() != 0.0 {
                return Err(Error::Config(
                    "a generator with a gamma curve must keep f free of other \
                     value dependence (zero y-coefficient)"
                        .into(),
                ));
            }
        }
        let spec = Self { f, g, gamma, kappa };
        spec.check_kappa()?;
        Ok(spec)
    }

    /// Generator with no sources at all.
    pub fn none() -> Self {
        Self { f: GenFun::zero(), g: GenFun::zero(), gamma: None, kappa: 0.0 }
    }

    fn check_kappa(&self) -> Result<()> {
        let ys = [-2.0, -0.5, 0.0, 0.7, 1.5];
        let zs: Vec<f64> = (-6..=6).map(|k| k as f64 * 0.5).collect();
        for fun in [&self.f, &self.g] {
            for &y in &ys {
                for w in zs.windows(2) {
                    let d = (fun.eval(y, w[1]) - fun.eval(y, w[0])).abs();
                    if d > self.kappa * (w[1] - w[0]).abs() * (1.0 + 1e-9) + 1e-12 {
                        return Err(Error::Catalog(format!(
                            "declared kappa {} does not bound the z-increments \
                             (observed slope {} at y = {y})",
                            self.kappa,
                            d / (w[1] - w[0]).abs()
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// True when neither part reads `y` or `z`, the precondition of the
    /// direct one-pass reflection policy.
    pub fn is_yz_free(&self) -> bool {
        self.gamma.is_none()
            && !self.f.depends_on_y()
            && !self.f.depends_on_z()
            && !self.g.depends_on_y()
            && !self.g.depends_on_z()
    }

    fn gamma_sup(&self, horizon: f64) -> f64 {
        self.gamma.as_ref().map_or(0.0, |c| c.sup_abs(horizon))
    }

    /// Effective value-slope of `f` over `[0, horizon]`, the constant the
    /// contraction-based policies segment against.
    pub fn y_lipschitz(&self, horizon: f64) -> f64 {
        self.f.y_slope_bound() + self.gamma_sup(horizon) + self.g.y_slope_bound()
    }
}

/// Slope data consumed by the monotonicity budget.
#[derive(Debug, Clone, Copy)]
pub struct GenBounds {
    pub fy: f64,
    pub fz: f64,
    pub gy: f64,
    pub gz: f64,
}

/// Node-wise generator evaluation. `i`/`j` are the lattice indices of the
/// evaluation point (the time where the step lands), so wrappers can read
/// per-node stored data; `t`/`x` are their coordinates.
pub trait GenEval: Sync {
    fn f(&self, i: usize, j: usize, t: f64, x: f64, y: f64, z: f64) -> f64;
    fn g(&self, i: usize, j: usize, t: f64, x: f64, y: f64, z: f64) -> f64;
    /// Effective slope bounds for the budget check.
    fn bounds(&self, horizon: f64) -> GenBounds;
}

impl GenEval for GeneratorSpec {
    fn f(&self, _i: usize, _j: usize, t: f64, _x: f64, y: f64, z: f64) -> f64 {
        let base = self.f.eval(y, z);
        match &self.gamma {
            Some(c) => c.eval(t) * y + base,
            None => base,
        }
    }

    fn g(&self, _i: usize, _j: usize, _t: f64, _x: f64, y: f64, z: f64) -> f64 {
        self.g.eval(y, z)
    }

    fn bounds(&self, horizon: f64) -> GenBounds {
        GenBounds {
            fy: self.f.y_slope_bound() + self.gamma_sup(horizon),
            fz: self.f.z_slope_bound(),
            gy: self.g.y_slope_bound(),
            gz: self.g.z_slope_bound(),
        }
    }
}

/// Wrapper freezing the value slot of `f` and `g` to a stored field: the
/// slot reads `frozen(t_i, x_j)` instead of the live value, while `z`
/// stays live. The result has no value coupling at all, which is what the
/// fixed-point iteration solves against.
pub struct FrozenY<'a> {
    pub spec: &'a GeneratorSpec,
    pub frozen: &'a ValueField,
}

impl GenEval for FrozenY<'_> {
    fn f(&self, i: usize, j: usize, t: f64, x: f64, _y: f64, z: f64) -> f64 {
        self.spec.f(i, j, t, x, self.frozen.at(i, j), z)
    }

    fn g(&self, i: usize, j: usize, t: f64, x: f64, _y: f64, z: f64) -> f64 {
        self.spec.g(i, j, t, x, self.frozen.at(i, j), z)
    }

    fn bounds(&self, horizon: f64) -> GenBounds {
        let b = self.spec.bounds(horizon);
        GenBounds { fy: 0.0, fz: b.fz, gy: 0.0, gz: b.gz }
    }
}

/// Require the explicit step to stay monotone with the generator coupling
/// on top of the bare parabolic ratio: the gradient part of `g` tilts the
/// neighbor weights by `2 gz h` relative to the curvature, and the value
/// slopes erode the diagonal by `dt (fy + sigma_high_sq * gy)`. Returns
/// the remaining slack.
pub fn monotone_budget(grid: &Grid, vb: &VolBounds, b: &GenBounds) -> Result<f64> {
    let ratio = grid.cfl_ratio(vb);
    let used = ratio * (1.0 + 2.0 * b.gz * grid.h()) + grid.dt() * (b.fy + vb.high_sq() * b.gy);
    if used > 1.0 + 1e-12 {
        return Err(Error::Precondition(format!(
            "monotonicity budget exceeded: {used:.6} > 1 \
             (parabolic ratio {ratio:.6}, gz {}, fy {}, gy {})",
            b.gz, b.fy, b.gy
        )));
    }
    Ok(1.0 - used)
}

/// Solution triple on the lattice.
///
/// `z` rows hold the gradient of the later slice (the one each step read);
/// row `nt` differentiates the terminal row itself. `a` rows hold the
/// argument `D2 y + 2 g` passed to the envelope at each step; row `nt` is
/// identically 0 since no step departs from it.
#[derive(Debug, Clone)]
pub struct BsdeSolution {
    pub y: ValueField,
    pub z: ValueField,
    pub a: ValueField,
}

impl BsdeSolution {
    /// Value at the time-0 spatial origin.
    pub fn value0(&self, grid: &Grid) -> f64 {
        self.y.at(0, grid.center())
    }
}

struct StepRows {
    f_row: Vec<f64>,
    g_row: Vec<f64>,
    a_row: Vec<f64>,
    z_row: Vec<f64>,
}

/// Evaluate the generator rows a step landing on row `i` consumes, given
/// the later slice `u_next`.
fn gen_rows<E: GenEval + ?Sized>(u_next: &[f64], i: usize, gen: &E, grid: &Grid) -> StepRows {
    let h = grid.h();
    let h2 = h * h;
    let t = grid.t(i);
    let n = u_next.len();
    let z_row = par::row_map(n, |j| first_diff(u_next, j, h));
    let g_row = par::row_map(n, |j| gen.g(i, j, t, grid.x(j), u_next[j], z_row[j]));
    let f_row = par::row_map(n, |j| gen.f(i, j, t, grid.x(j), u_next[j], z_row[j]));
    let a_row = par::row_map(n, |j| second_diff(u_next, j, h2) + 2.0 * g_row[j]);
    StepRows { f_row, g_row, a_row, z_row }
}

/// Backward sweep from a terminal row at grid index `i_top` down to row 0.
/// Returns the `i_top + 1` rows in time order.
pub fn sweep_rows<E: GenEval + ?Sized>(
    terminal: &[f64],
    i_top: usize,
    gen: &E,
    grid: &Grid,
    vb: &VolBounds,
) -> Result<Vec<Vec<f64>>> {
    if terminal.len() != grid.nx() + 1 {
        return Err(Error::Mismatch(format!(
            "terminal row has {} nodes, grid expects {}",
            terminal.len(),
            grid.nx() + 1
        )));
    }
    for (j, v) in terminal.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::Domain(format!("terminal value at node {j} is not finite")));
        }
    }
    if i_top > grid.nt() {
        return Err(Error::Alignment(format!(
            "terminal index {i_top} beyond the lattice ({} steps)",
            grid.nt()
        )));
    }
    monotone_budget(grid, vb, &gen.bounds(grid.horizon()))?;
    let mut rows = vec![Vec::new(); i_top + 1];
    rows[i_top] = terminal.to_vec();
    for i in (0..i_top).rev() {
        let next = std::mem::take(&mut rows[i + 1]);
        let sr = gen_rows(&next, i, gen, grid);
        rows[i] = step_rows_ext(&next, Some(&sr.f_row), Some(&sr.g_row), grid, vb, Extremum::Upper);
        rows[i + 1] = next;
    }
    Ok(rows)
}

/// Solve over the whole lattice and keep the gradient and argument fields.
pub fn solve_bsde<E: GenEval + ?Sized>(
    terminal: &[f64],
    gen: &E,
    grid: &Grid,
    vb: &VolBounds,
) -> Result<BsdeSolution> {
    if terminal.len() != grid.nx() + 1 {
        return Err(Error::Mismatch(format!(
            "terminal row has {} nodes, grid expects {}",
            terminal.len(),
            grid.nx() + 1
        )));
    }
    monotone_budget(grid, vb, &gen.bounds(grid.horizon()))?;
    let nt = grid.nt();
    let mut y = vec![Vec::new(); nt + 1];
    let mut z = vec![Vec::new(); nt + 1];
    let mut a = vec![Vec::new(); nt + 1];
    y[nt] = terminal.to_vec();
    for (j, v) in y[nt].iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::Domain(format!("terminal value at node {j} is not finite")));
        }
    }
    let h = grid.h();
    z[nt] = par::row_map(terminal.len(), |j| first_diff(terminal, j, h));
    a[nt] = vec![0.0; terminal.len()];
    for i in (0..nt).rev() {
        let next = std::mem::take(&mut y[i + 1]);
        let sr = gen_rows(&next, i, gen, grid);
        y[i] = step_rows_ext(&next, Some(&sr.f_row), Some(&sr.g_row), grid, vb, Extremum::Upper);
        z[i] = sr.z_row;
        a[i] = sr.a_row;
        y[i + 1] = next;
    }
    Ok(BsdeSolution {
        y: ValueField::from_rows(y, grid)?,
        z: ValueField::from_rows_unchecked(z),
        a: ValueField::from_rows_unchecked(a),
    })
}

/// Source fields of a solved instance: `f` and `g` evaluated exactly as the
/// sweep evaluated them, so `step_back(y[i+1], f[i], g[i])` rebuilds `y[i]`
/// bit for bit. Row `nt` evaluates on the terminal slice for completeness.
pub struct AccrualFields {
    pub f_rows: ValueField,
    pub g_rows: ValueField,
}

pub fn accrual_fields<E: GenEval + ?Sized>(
    sol: &BsdeSolution,
    gen: &E,
    grid: &Grid,
) -> AccrualFields {
    let nt = grid.nt();
    let n = grid.nx() + 1;
    let mut f_rows = Vec::with_capacity(nt + 1);
    let mut g_rows = Vec::with_capacity(nt + 1);
    for i in 0..=nt {
        let src = if i < nt { sol.y.row(i + 1) } else { sol.y.row(nt) };
        let zr = sol.z.row(i);
        let t = grid.t(i);
        f_rows.push(par::row_map(n, |j| gen.f(i, j, t, grid.x(j), src[j], zr[j])));
        g_rows.push(par::row_map(n, |j| gen.g(i, j, t, grid.x(j), src[j], zr[j])));
    }
    AccrualFields {
        f_rows: ValueField::from_rows_unchecked(f_rows),
        g_rows: ValueField::from_rows_unchecked(g_rows),
    }
}

/// A squared-volatility selection per step and node: `nt` rows (one per
/// step) of `nx + 1` entries inside the band.
#[derive(Debug, Clone)]
pub struct ControlField {
    rows: Vec<Vec<f64>>,
}

impl ControlField {
    pub fn new(rows: Vec<Vec<f64>>, grid: &Grid, vb: &VolBounds) -> Result<Self> {
        if rows.len() != grid.nt() {
            return Err(Error::Mismatch(format!(
                "control has {} rows, grid has {} steps",
                rows.len(),
                grid.nt()
            )));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != grid.nx() + 1 {
                return Err(Error::Mismatch(format!(
                    "control row {i} has {} nodes, grid expects {}",
                    row.len(),
                    grid.nx() + 1
                )));
            }
            for (j, &v) in row.iter().enumerate() {
                if !(v >= vb.low_sq() && v <= vb.high_sq()) {
                    return Err(Error::Domain(format!(
                        "control value {v} at ({i}, {j}) leaves the band \
                         [{}, {}]",
                        vb.low_sq(),
                        vb.high_sq()
                    )));
                }
            }
        }
        Ok(Self { rows })
    }

    pub fn constant(s2: f64, grid: &Grid, vb: &VolBounds) -> Result<Self> {
        Self::new(vec![vec![s2; grid.nx() + 1]; grid.nt()], grid, vb)
    }

    /// The per-node argmax of the envelope: the high end where the stored
    /// argument is nonnegative, the low end elsewhere. Along this control
    /// the defect process vanishes identically.
    pub fn argmax(sol: &BsdeSolution, grid: &Grid, vb: &VolBounds) -> Self {
        let rows = (0..grid.nt())
            .map(|i| {
                sol.a
                    .row(i)
                    .iter()
                    .map(|&a| if a >= 0.0 { vb.high_sq() } else { vb.low_sq() })
                    .collect()
            })
            .collect();
        Self { rows }
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.rows[i][j]
    }
}

/// Cumulative defect process along a control: row 0 is zero and
/// `K[i+1][j] = K[i][j] + dt (ctrl s2 a / 2 - G(a))` with `a = a(t_i, x_j)`.
/// Every increment is nonpositive; it is exactly zero along the per-node
/// argmax control and for a degenerate band.
pub fn realize_k(
    sol: &BsdeSolution,
    ctrl: &ControlField,
    grid: &Grid,
    vb: &VolBounds,
) -> Result<ValueField> {
    if ctrl.rows.len() != grid.nt() {
        return Err(Error::Mismatch(format!(
            "control has {} rows, grid has {} steps",
            ctrl.rows.len(),
            grid.nt()
        )));
    }
    let n = grid.nx() + 1;
    let dt = grid.dt();
    let mut rows = Vec::with_capacity(grid.nt() + 1);
    rows.push(vec![0.0; n]);
    for i in 0..grid.nt() {
        let prev = &rows[i];
        let a_row = sol.a.row(i);
        let next: Vec<f64> = (0..n)
            .map(|j| {
                let a = a_row[j];
                let s2 = ctrl.at(i, j);
                prev[j] + dt * (0.5 * s2 * a - g_ext(a, vb, Extremum::Upper))
            })
            .collect();
        rows.push(next);
    }
    Ok(ValueField::from_rows_unchecked(rows))
}

/// How the defect accrues inside [`expect_with_k`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResidualMode {
    /// No defect accrual.
    Off,
    /// Accrue the defect increment itself, `s2 a / 2 - G(a)` (nonpositive).
    /// The maximizing program of this accrual alone is identically zero:
    /// the sup is attained where the increment vanishes.
    PositiveK,
    /// Accrue the negated increment `G(a) - s2 a / 2` (nonnegative), the
    /// compensation that makes the accrued functional of a solution a
    /// symmetric martingale: its max- and min-programs agree with the
    /// value field.
    NegativeK,
}

/// Dynamic program for `E_t[ sum f dt + sum g s2 dt + defect + terminal ]`
/// over the two-point control set, backward from row `i_to` (where the
/// terminal row is read) to row `i_from`; returns the value row at
/// `i_from`. `ext` picks the maximizing or minimizing program. Per node
/// the objective is affine in `s2`, so evaluating the band endpoints is
/// the exact optimization.
#[allow(clippy::too_many_arguments)]
pub fn expect_with_k(
    a_field: &ValueField,
    f_acc: Option<&ValueField>,
    g_acc: Option<&ValueField>,
    terminal: &[f64],
    window: (usize, usize),
    grid: &Grid,
    vb: &VolBounds,
    ext: Extremum,
    residual: ResidualMode,
) -> Result<Vec<f64>> {
    let (i_from, i_to) = window;
    if i_from > i_to || i_to > grid.nt() {
        return Err(Error::Alignment(format!(
            "window [{i_from}, {i_to}] is not within the lattice (0..={})",
            grid.nt()
        )));
    }
    let n = grid.nx() + 1;
    if terminal.len() != n {
        return Err(Error::Mismatch(format!(
            "terminal row has {} nodes, grid expects {n}",
            terminal.len()
        )));
    }
    for fld in [Some(a_field), f_acc, g_acc].into_iter().flatten() {
        if fld.n_rows() <= i_to.saturating_sub(1).max(i_from) {
            return Err(Error::Mismatch(format!(
                "accrual field has {} rows, window needs {}",
                fld.n_rows(),
                i_to
            )));
        }
    }
    if grid.cfl_ratio(vb) > 1.0 + 1e-12 {
        return Err(Error::Config(
            "CFL violation: the dynamic program step would not be monotone".into(),
        ));
    }
    let dt = grid.dt();
    let h2 = grid.h() * grid.h();
    let (lo, hi) = (vb.low_sq(), vb.high_sq());
    let mut w = terminal.to_vec();
    for i in (i_from..i_to).rev() {
        let a_row = a_field.row(i);
        let f_row = f_acc.map(|f| f.row(i));
        let g_row = g_acc.map(|g| g.row(i));
        let prev = w;
        w = par::row_map(n, |j| {
            let d2 = second_diff(&prev, j, h2);
            let a = a_row[j];
            let candidate = |s2: f64| {
                let mut acc = 0.5 * s2 * d2;
                if let Some(f) = f_row {
                    acc += f[j];
                }
                if let Some(g) = g_row {
                    acc += s2 * g[j];
                }
                match residual {
                    ResidualMode::Off => {}
                    ResidualMode::PositiveK => {
                        acc += 0.5 * s2 * a - g_ext(a, vb, Extremum::Upper);
                    }
                    ResidualMode::NegativeK => {
                        acc += g_ext(a, vb, Extremum::Upper) - 0.5 * s2 * a;
                    }
                }
                prev[j] + dt * acc
            };
            let (clo, chi) = (candidate(lo), candidate(hi));
            match ext {
                Extremum::Upper => clo.max(chi),
                Extremum::Lower => clo.min(chi),
            }
        });
    }
    Ok(w)
}
