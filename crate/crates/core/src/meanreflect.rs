//! Doubly mean-reflected solvers.
//!
//! A solution here is a value field `Y` together with a deterministic
//! bounded-variation compensator `A = A^R - A^L` such that the mean of the
//! value stays inside the moving corridor carved out by two loss functions,
//! `E[L(t, Y_t)] <= 0 <= E[R(t, Y_t)]`, and each one-sided part of `A` only
//! grows while its own constraint is tight (discrete Skorokhod flatness in
//! the mean). The value decomposes as `Y(t, x) = Ybar(t, x) + delta_t` with
//! `Ybar` an unreflected sweep and `delta` a function of time only, so the
//! whole reflection problem collapses to a deterministic backward Skorokhod
//! problem for the mean curve of `Ybar`.
//!
//! Four policies cover increasingly general source terms: a single pass for
//! value- and gradient-free sources, an exponential transform for linear
//! value dependence, and two fixed-point iterations (plain, and segmented
//! in time so each segment's iteration map is a contraction).

use std::io::Write;

use crate::boundary::{BoundaryKind, BoundaryPair, TabulatedBoundary, TimeBoundary};
use crate::bsde::{self, BsdeSolution, FrozenY, GenEval, GenFun, GeneratorSpec};
use crate::csvio;
use crate::error::{ensure_finite, Error, Result};
use crate::gexp::{self, first_diff, second_diff, Extremum};
use crate::grid::{Grid, ValueField, VolBounds};
use crate::par;
use crate::payoff::PayoffSpec;
use crate::skorokhod::{self, SkorokhodParams, SkorokhodSolution};

/// Default number of offsets the boundary tabulation samples per time row.
pub const DEFAULT_OFFSET_POINTS: usize = 41;

/// Default iteration tolerance on `sup_t E[|Y^n - Y^{n-1}|^beta]`.
pub const DEFAULT_TOL_ITER: f64 = 1e-6;

/// Default iteration budget of the fixed-point policies.
pub const DEFAULT_MAX_ITERS: usize = 60;

/// Default diagnostic exponent; any `beta > 1` is admissible.
pub const DEFAULT_BETA: f64 = 2.0;

/// How the reflected solve is carried out.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolvePolicy {
    /// One pass: requires a source term free of value and gradient reads.
    Constant,
    /// Exponential transform absorbing `gamma(t) * y`, then one pass on
    /// the transformed data.
    LinearY,
    /// Fixed-point iteration with the value slot frozen at the previous
    /// iterate.
    Picard,
    /// Fixed-point iteration run segment by segment, each segment short
    /// enough that its iteration map is a contraction.
    LipschitzSegmented,
}

/// A complete problem statement: terminal data, sources, loss corridor,
/// lattice, volatility band, and solver knobs.
#[derive(Debug, Clone)]
pub struct MRInstance {
    pub terminal: PayoffSpec,
    pub gen: GeneratorSpec,
    pub losses: BoundaryPair,
    pub grid: Grid,
    pub vb: VolBounds,
    pub policy: SolvePolicy,
    /// Stop the fixed-point iteration when the diagnostic drops below this.
    pub tol_iter: f64,
    /// Flatness tolerance; `None` derives `scheme_tol * (1 + TV(A))` after
    /// the solve.
    pub tol_flat: Option<f64>,
    pub max_iters: usize,
    /// Exponent of the iteration diagnostic, `> 1`.
    pub beta: f64,
    /// Offsets per time row when tabulating boundaries; affine loss pairs
    /// are detected and collapsed to 2 points (exact under interpolation).
    pub offset_points: usize,
}

impl MRInstance {
    /// Validates alignment and terminal admissibility: the terminal data
    /// must satisfy both mean constraints up to the scheme tolerance.
    pub fn new(
        terminal: PayoffSpec,
        gen: GeneratorSpec,
        losses: BoundaryPair,
        grid: Grid,
        vb: &VolBounds,
        policy: SolvePolicy,
    ) -> Result<Self> {
        terminal.validate()?;
        let nt = grid.nt();
        if losses.l.len() != nt + 1 {
            return Err(Error::Alignment(format!(
                "loss pair sampled on {} times for a lattice of {}",
                losses.l.len(),
                nt + 1
            )));
        }
        let term = terminal.terminal_row(&grid);
        let tol = grid.scheme_tol();
        let el = gexp::expect_row(
            &compose_loss_row(&term, &losses.l, nt, 0.0),
            nt,
            &grid,
            vb,
            Extremum::Upper,
        )?;
        let er = gexp::expect_row(
            &compose_loss_row(&term, &losses.r, nt, 0.0),
            nt,
            &grid,
            vb,
            Extremum::Upper,
        )?;
        if el > tol || er < -tol {
            return Err(Error::Precondition(format!(
                "terminal data leaves the mean corridor: E[L(T, xi)] = {el}, \
                 E[R(T, xi)] = {er}, tolerance {tol}"
            )));
        }
        Ok(Self {
            terminal,
            gen,
            losses,
            grid,
            vb: *vb,
            policy,
            tol_iter: DEFAULT_TOL_ITER,
            tol_flat: None,
            max_iters: DEFAULT_MAX_ITERS,
            beta: DEFAULT_BETA,
            offset_points: DEFAULT_OFFSET_POINTS,
        })
    }

    pub fn with_tol_iter(mut self, tol: f64) -> Result<Self> {
        ensure_finite(tol, "iteration tolerance")?;
        if tol <= 0.0 {
            return Err(Error::Config(format!("iteration tolerance must be positive, got {tol}")));
        }
        self.tol_iter = tol;
        Ok(self)
    }

    pub fn with_tol_flat(mut self, tol: f64) -> Result<Self> {
        ensure_finite(tol, "flatness tolerance")?;
        if tol <= 0.0 {
            return Err(Error::Config(format!("flatness tolerance must be positive, got {tol}")));
        }
        self.tol_flat = Some(tol);
        Ok(self)
    }

    pub fn with_max_iters(mut self, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Config("iteration budget must be at least 1".into()));
        }
        self.max_iters = n;
        Ok(self)
    }

    pub fn with_beta(mut self, beta: f64) -> Result<Self> {
        ensure_finite(beta, "diagnostic exponent")?;
        if beta <= 1.0 {
            return Err(Error::Config(format!("diagnostic exponent must exceed 1, got {beta}")));
        }
        self.beta = beta;
        Ok(self)
    }

    pub fn with_offset_points(mut self, n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::Config(format!("tabulation needs at least 2 offsets, got {n}")));
        }
        self.offset_points = n;
        Ok(self)
    }

    /// Dispatch on the configured policy.
    pub fn solve(&self) -> Result<MRSolution> {
        match self.policy {
            SolvePolicy::Constant => solve_constant(self),
            SolvePolicy::LinearY => solve_linear_y(self),
            SolvePolicy::Picard => solve_picard(self),
            SolvePolicy::LipschitzSegmented => solve_segmented(self),
        }
    }

    /// Tabulation width: affine loss pairs interpolate exactly through two
    /// points, so the configured count only matters for curved losses.
    pub(crate) fn effective_offsets(&self) -> usize {
        let affine = |k: BoundaryKind| matches!(k, BoundaryKind::AffineThreshold { .. });
        if affine(self.losses.l.kind()) && affine(self.losses.r.kind()) {
            2
        } else {
            self.offset_points
        }
    }
}

/// Deterministic summary rows of a solution, one value per grid time.
#[derive(Debug, Clone)]
pub struct MeanCurves {
    /// `E[Y_t]`.
    pub upper_mean: Vec<f64>,
    /// `-E[-Y_t]`.
    pub lower_mean: Vec<f64>,
    /// `E[L(t, Y_t)]`; admissible solutions keep it below `tol_flat`.
    pub slack_l: Vec<f64>,
    /// `E[R(t, Y_t)]`; admissible solutions keep it above `-tol_flat`.
    pub slack_r: Vec<f64>,
}

/// Output of a reflected solve. The value is `Y(t, x) = Ybar(t, x) +
/// delta_t` where `Ybar` is the stored sweep field; `delta` depends on time
/// only, which is what makes the compensator deterministic.
#[derive(Debug, Clone)]
pub struct MRSolution {
    /// Unreflected part `Ybar`, with its gradient and curvature fields.
    pub bsde: BsdeSolution,
    /// Offset row: `delta_t` added to every node of slice `t`.
    pub delta: Vec<f64>,
    /// Net compensator `A = A^R - A^L`.
    pub a: Vec<f64>,
    /// Floor-side part, nondecreasing from 0.
    pub a_r: Vec<f64>,
    /// Ceiling-side part, nondecreasing from 0.
    pub a_l: Vec<f64>,
    /// Per-node increments of `A^R` (node `i` holds the mass attributed to
    /// the push pinning node `i`; the cumulative lags one node behind).
    pub da_r: Vec<f64>,
    /// Per-node increments of `A^L`.
    pub da_l: Vec<f64>,
    pub curves: MeanCurves,
    /// One diagnostic per fixed-point iteration: `sup_t E[|Y^n -
    /// Y^{n-1}|^beta]`. Empty for the direct policies.
    pub iterations: Vec<f64>,
    /// Flatness tolerance the solution was accepted against.
    pub tol_flat: f64,
}

impl MRSolution {
    /// Value at node `(i, j)`.
    pub fn y_at(&self, i: usize, j: usize) -> f64 {
        self.bsde.y.at(i, j) + self.delta[i]
    }

    /// Full slice of the value at time index `i`.
    pub fn y_row(&self, i: usize) -> Vec<f64> {
        self.bsde.y.row(i).iter().map(|&v| v + self.delta[i]).collect()
    }

    /// The value as a field.
    pub fn y_field(&self, grid: &Grid) -> Result<ValueField> {
        let rows = (0..self.bsde.y.n_rows()).map(|i| self.y_row(i)).collect();
        ValueField::from_rows(rows, grid)
    }

    /// `E[Y_t]` at time index `i`.
    pub fn mean_at(&self, i: usize) -> f64 {
        self.curves.upper_mean[i]
    }

    /// Summary table: `t,E_Y,negE_negY,A,A_R,A_L,slack_L,slack_R`.
    pub fn dump_csv<W: Write>(&self, w: &mut W, grid: &Grid) -> Result<()> {
        writeln!(w, "t,E_Y,negE_negY,A,A_R,A_L,slack_L,slack_R")?;
        for i in 0..self.delta.len() {
            writeln!(
                w,
                "{}",
                csvio::line(&[
                    grid.t(i),
                    self.curves.upper_mean[i],
                    self.curves.lower_mean[i],
                    self.a[i],
                    self.a_r[i],
                    self.a_l[i],
                    self.curves.slack_l[i],
                    self.curves.slack_r[i],
                ])
            )?;
        }
        Ok(())
    }

    /// Iteration diagnostics: `iter,delta_beta_norm`, 1-based.
    pub fn dump_iterations_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "iter,delta_beta_norm")?;
        for (n, d) in self.iterations.iter().enumerate() {
            writeln!(w, "{},{}", n + 1, csvio::fmt_f64(*d))?;
        }
        Ok(())
    }
}

/// `loss(i, row[j] + shift)` for every node of a slice.
pub(crate) fn compose_loss_row<B: TimeBoundary + ?Sized>(
    row: &[f64],
    loss: &B,
    i: usize,
    shift: f64,
) -> Vec<f64> {
    row.iter().map(|&v| loss.eval(i, v + shift)).collect()
}

/// Tabulate a mean functional of a loss over a window of field rows:
/// row `v` of the result holds `E[loss(i, S_i - centers[v] + offset_k)]`
/// at the absolute index `i = i_from + v`, solved over `i` lattice steps.
/// The window indexes the returned boundary locally from 0.
pub(crate) fn tabulate_loss_window<B: TimeBoundary + ?Sized>(
    rows: &[Vec<f64>],
    i_from: usize,
    centers: &[f64],
    loss: &B,
    offsets: &[f64],
    outer: Extremum,
    grid: &Grid,
    vb: &VolBounds,
    c_lo: f64,
    c_hi: f64,
) -> Result<TabulatedBoundary> {
    let n_rows = centers.len();
    let n_off = offsets.len();
    let flat: Vec<Result<f64>> = par::task_map(n_rows * n_off, |idx| {
        let v = idx / n_off;
        let k = idx % n_off;
        let i = i_from + v;
        let composed = compose_loss_row(&rows[i], loss, i, offsets[k] - centers[v]);
        gexp::expect_row(&composed, i, grid, vb, outer)
    });
    let mut vals = vec![vec![0.0; n_off]; n_rows];
    for (idx, r) in flat.into_iter().enumerate() {
        vals[idx / n_off][idx % n_off] = r?;
    }
    TabulatedBoundary::new(offsets.to_vec(), vals, c_lo, c_hi)
}

/// Symmetric offset range wide enough to cover every mean path the
/// backward Skorokhod solve can visit, from its growth bound: the driving
/// means, plus the boundary values at zero scaled by the slope envelope,
/// plus a unit pad.
fn window_offsets<BL, BR>(
    rows: &[Vec<f64>],
    i_from: usize,
    centers: &[f64],
    loss_l: &BL,
    loss_r: &BR,
    n_points: usize,
    grid: &Grid,
    vb: &VolBounds,
) -> Result<Vec<f64>>
where
    BL: TimeBoundary + ?Sized,
    BR: TimeBoundary + ?Sized,
{
    let zero_sup = |loss: &dyn TimeBoundary| -> Result<f64> {
        let vals: Vec<Result<f64>> = par::task_map(centers.len(), |v| {
            let i = i_from + v;
            let composed = compose_loss_row(&rows[i], loss, i, -centers[v]);
            gexp::expect_row(&composed, i, grid, vb, Extremum::Upper)
        });
        let mut sup = 0.0f64;
        for r in vals {
            sup = sup.max(r?.abs());
        }
        Ok(sup)
    };
    let l0 = zero_sup(&AsDyn(loss_l))?;
    let r0 = zero_sup(&AsDyn(loss_r))?;
    let c_lo = loss_l.c_lo().min(loss_r.c_lo());
    let c_hi = loss_l.c_hi().max(loss_r.c_hi());
    let m_max = centers.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    let reach = 2.0 * (c_hi / c_lo) * m_max + (c_hi.max(1.0) / c_lo) * (l0 + r0) + 1.0;
    ensure_finite(reach, "tabulation reach")?;
    let n = n_points.max(2);
    Ok((0..n).map(|k| -reach + 2.0 * reach * k as f64 / (n - 1) as f64).collect())
}

/// Object-safe shim so a generic boundary can be passed as `&dyn`.
struct AsDyn<'a, B: TimeBoundary + ?Sized>(&'a B);

impl<B: TimeBoundary + ?Sized> TimeBoundary for AsDyn<'_, B> {
    fn len(&self) -> usize {
        self.0.len()
    }
    fn eval(&self, i: usize, x: f64) -> f64 {
        self.0.eval(i, x)
    }
    fn c_lo(&self) -> f64 {
        self.0.c_lo()
    }
    fn c_hi(&self) -> f64 {
        self.0.c_hi()
    }
    fn sup_abs_at_zero(&self) -> f64 {
        self.0.sup_abs_at_zero()
    }
}

/// Tabulate both sides of the loss corridor against a solved field: row `i`
/// of each result holds the upper expectation of the loss applied to the
/// recentered slice, `E[loss(i, S_i - E[S_i] + x)]`, on a shared offset
/// grid sized from the growth bound of the Skorokhod problem it will feed.
pub fn build_boundaries(
    field: &ValueField,
    losses: &BoundaryPair,
    grid: &Grid,
    vb: &VolBounds,
    offset_points: usize,
) -> Result<(TabulatedBoundary, TabulatedBoundary)> {
    let means = gexp::mean_curve(field, grid, vb, Extremum::Upper)?;
    tabulate_pair(field.rows(), 0, &means, &losses.l, &losses.r, offset_points, grid, vb)
}

/// Shared tabulation path: offsets from the growth bound, then both sides.
#[allow(clippy::too_many_arguments)]
pub(crate) fn tabulate_pair<BL, BR>(
    rows: &[Vec<f64>],
    i_from: usize,
    centers: &[f64],
    loss_l: &BL,
    loss_r: &BR,
    n_points: usize,
    grid: &Grid,
    vb: &VolBounds,
) -> Result<(TabulatedBoundary, TabulatedBoundary)>
where
    BL: TimeBoundary + ?Sized,
    BR: TimeBoundary + ?Sized,
{
    let offsets =
        window_offsets(rows, i_from, centers, loss_l, loss_r, n_points, grid, vb)?;
    let l_tab = tabulate_loss_window(
        rows,
        i_from,
        centers,
        loss_l,
        &offsets,
        Extremum::Upper,
        grid,
        vb,
        loss_l.c_lo(),
        loss_l.c_hi(),
    )?;
    let r_tab = tabulate_loss_window(
        rows,
        i_from,
        centers,
        loss_r,
        &offsets,
        Extremum::Upper,
        grid,
        vb,
        loss_r.c_lo(),
        loss_r.c_hi(),
    )?;
    Ok((l_tab, r_tab))
}

/// Move a point to the admissible side of one boundary row by the shortest
/// step, keeping the admissible end of the bisection bracket so the
/// returned point satisfies the constraint outright.
fn nudge_to_side<B: TimeBoundary + ?Sized>(
    b: &B,
    i: usize,
    x: f64,
    up: bool,
    xtol: f64,
) -> f64 {
    let pad = 1.0 + 1e-12;
    let viol = if up { -b.eval(i, x) } else { b.eval(i, x) };
    let dir = if up { 1.0 } else { -1.0 };
    let mut step = viol / b.c_lo() * pad;
    let ok = |p: f64| {
        if up {
            b.eval(i, p) >= 0.0
        } else {
            b.eval(i, p) <= 0.0
        }
    };
    let mut guard = 0;
    while !ok(x + dir * step) && guard < 64 {
        step *= 2.0;
        guard += 1;
    }
    let mut lo = x;
    let mut hi = x + dir * step;
    while (hi - lo).abs() > xtol {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        if ok(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// Project the final anchor into the corridor. Lattice noise can leave the
/// terminal mean a hair outside a constraint that binds exactly at the
/// final time; the projection moves it the shortest admissible distance,
/// which is within the scheme tolerance whenever the instance passed its
/// terminal admissibility check.
fn project_anchor<BL, BR>(a0: f64, l: &BL, r: &BR, n: usize, params: &SkorokhodParams) -> Result<f64>
where
    BL: TimeBoundary + ?Sized,
    BR: TimeBoundary + ?Sized,
{
    let xtol = params.tol / l.c_hi().max(r.c_hi());
    let mut a = a0;
    if r.eval(n, a) < 0.0 {
        a = nudge_to_side(r, n, a, true, xtol);
    }
    if l.eval(n, a) > 0.0 {
        a = nudge_to_side(l, n, a, false, xtol);
        if r.eval(n, a) < 0.0 {
            return Err(Error::Precondition(format!(
                "the corridor is empty at the final time: no admissible anchor near {a0}"
            )));
        }
    }
    Ok(a)
}

/// Backward Skorokhod solve driven by a mean curve: the constrained path
/// follows the means and is anchored at the (projected) final mean.
pub(crate) fn backward_from_means<BL, BR>(
    means: &[f64],
    l: &BL,
    r: &BR,
    params: &SkorokhodParams,
) -> Result<SkorokhodSolution>
where
    BL: TimeBoundary + ?Sized,
    BR: TimeBoundary + ?Sized,
{
    let n = means.len() - 1;
    let s: Vec<f64> = means.iter().map(|&m| means[0] - m).collect();
    let a = project_anchor(means[n], l, r, n, params)?;
    skorokhod::solve_backward(a, &s, l, r, params)
}

/// Compensator rows extracted from a backward solve.
struct Compensator {
    delta: Vec<f64>,
    a: Vec<f64>,
    a_r: Vec<f64>,
    a_l: Vec<f64>,
    da_r: Vec<f64>,
    da_l: Vec<f64>,
}

impl Compensator {
    fn from_backward(sk: &SkorokhodSolution) -> Self {
        let n = sk.len() - 1;
        let delta = (0..=n).map(|i| sk.k[n] - sk.k[i]).collect();
        Self {
            delta,
            a: sk.k.clone(),
            a_r: sk.kr.clone(),
            a_l: sk.kl.clone(),
            da_r: sk.dkr.clone(),
            da_l: sk.dkl.clone(),
        }
    }
}

/// Attach curves and tolerances, then verify mean admissibility.
fn assemble(inst: &MRInstance, bsde: BsdeSolution, comp: Compensator, iterations: Vec<f64>) -> Result<MRSolution> {
    let grid = &inst.grid;
    let vb = &inst.vb;
    let nt = grid.nt();
    let tv = comp.a_r[nt] + comp.a_l[nt];
    let tol_flat = inst.tol_flat.unwrap_or_else(|| grid.scheme_tol() * (1.0 + tv));
    let delta = comp.delta;
    let rows: Vec<Result<[f64; 4]>> = par::task_map(nt + 1, |i| {
        let row = bsde.y.row(i);
        let up = gexp::expect_row(row, i, grid, vb, Extremum::Upper)? + delta[i];
        let lo = gexp::expect_row(row, i, grid, vb, Extremum::Lower)? + delta[i];
        let sl = gexp::expect_row(
            &compose_loss_row(row, &inst.losses.l, i, delta[i]),
            i,
            grid,
            vb,
            Extremum::Upper,
        )?;
        let sr = gexp::expect_row(
            &compose_loss_row(row, &inst.losses.r, i, delta[i]),
            i,
            grid,
            vb,
            Extremum::Upper,
        )?;
        Ok([up, lo, sl, sr])
    });
    let mut curves = MeanCurves {
        upper_mean: Vec::with_capacity(nt + 1),
        lower_mean: Vec::with_capacity(nt + 1),
        slack_l: Vec::with_capacity(nt + 1),
        slack_r: Vec::with_capacity(nt + 1),
    };
    for r in rows {
        let [up, lo, sl, sr] = r?;
        curves.upper_mean.push(up);
        curves.lower_mean.push(lo);
        curves.slack_l.push(sl);
        curves.slack_r.push(sr);
    }
    let worst_l = curves.slack_l.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let worst_r = curves.slack_r.iter().copied().fold(f64::INFINITY, f64::min);
    if worst_l > tol_flat || worst_r < -tol_flat {
        return Err(Error::Mismatch(format!(
            "assembled solution violates the mean corridor: max E[L] = {worst_l}, \
             min E[R] = {worst_r}, tolerance {tol_flat}"
        )));
    }
    Ok(MRSolution {
        bsde,
        delta,
        a: comp.a,
        a_r: comp.a_r,
        a_l: comp.a_l,
        da_r: comp.da_r,
        da_l: comp.da_l,
        curves,
        iterations,
        tol_flat,
    })
}

/// One-pass policy for sources free of value and gradient dependence: the
/// unreflected sweep is final, so a single backward Skorokhod solve on its
/// mean curve produces the compensator.
pub fn solve_constant(inst: &MRInstance) -> Result<MRSolution> {
    if !inst.gen.is_yz_free() {
        return Err(Error::Precondition(
            "the one-pass policy needs a source term that reads neither the value \
             nor the gradient"
                .into(),
        ));
    }
    let term = inst.terminal.terminal_row(&inst.grid);
    let bsde = bsde::solve_bsde(&term, &inst.gen, &inst.grid, &inst.vb)?;
    let means = gexp::mean_curve(&bsde.y, &inst.grid, &inst.vb, Extremum::Upper)?;
    let (l_tab, r_tab) = tabulate_pair(
        bsde.y.rows(),
        0,
        &means,
        &inst.losses.l,
        &inst.losses.r,
        inst.effective_offsets(),
        &inst.grid,
        &inst.vb,
    )?;
    let sk = backward_from_means(&means, &l_tab, &r_tab, &SkorokhodParams::default())?;
    assemble(inst, bsde, Compensator::from_backward(&sk), Vec::new())
}

/// Scales `f` and `g` rows by `exp(a_t)` and reads the gradient in the
/// original scale, which is the generator of the transformed problem; the
/// linear value term is gone by construction.
struct ExpScaled<'a> {
    spec: &'a GeneratorSpec,
    scale: &'a [f64],
    inv: &'a [f64],
}

impl GenEval for ExpScaled<'_> {
    fn f(&self, i: usize, _j: usize, _t: f64, _x: f64, _y: f64, z: f64) -> f64 {
        self.scale[i] * self.spec.f.eval(0.0, self.inv[i] * z)
    }

    fn g(&self, i: usize, _j: usize, _t: f64, _x: f64, _y: f64, z: f64) -> f64 {
        self.scale[i] * self.spec.g.eval(0.0, self.inv[i] * z)
    }

    fn bounds(&self, horizon: f64) -> bsde::GenBounds {
        let b = self.spec.bounds(horizon);
        bsde::GenBounds { fy: 0.0, fz: b.fz, gy: 0.0, gz: b.gz }
    }
}

/// A boundary with its argument rescaled per time row: `eval(i, x) =
/// inner(i, inv_i * x)`. The slope envelope widens by the range of the
/// multipliers.
struct ScaledArg<'a, B: TimeBoundary + ?Sized> {
    inner: &'a B,
    inv: &'a [f64],
    lo: f64,
    hi: f64,
}

impl<'a, B: TimeBoundary + ?Sized> ScaledArg<'a, B> {
    fn new(inner: &'a B, inv: &'a [f64]) -> Self {
        let lo = inv.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = inv.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Self { inner, inv, lo, hi }
    }
}

impl<B: TimeBoundary + ?Sized> TimeBoundary for ScaledArg<'_, B> {
    fn len(&self) -> usize {
        self.inner.len()
    }

    fn eval(&self, i: usize, x: f64) -> f64 {
        self.inner.eval(i, self.inv[i] * x)
    }

    fn c_lo(&self) -> f64 {
        self.inner.c_lo() * self.lo
    }

    fn c_hi(&self) -> f64 {
        self.inner.c_hi() * self.hi
    }

    fn sup_abs_at_zero(&self) -> f64 {
        self.inner.sup_abs_at_zero()
    }
}

/// Exponential-transform data of a linear-value instance: the scaled
/// sweep, its mean curve, and the loss corridor tabulated in the scaled
/// coordinates. The transform is the identity when no rate curve is set.
pub(crate) struct ScaledParts {
    pub(crate) inv: Vec<f64>,
    pub(crate) bsde: BsdeSolution,
    pub(crate) means: Vec<f64>,
    pub(crate) l_tab: TabulatedBoundary,
    pub(crate) r_tab: TabulatedBoundary,
}

/// Scale a linear-value instance by `exp(int gamma)`: the transformed
/// sweep has no value dependence left, so its rows, means, and tabulated
/// corridor feed one-pass reflection machinery directly.
pub(crate) fn scaled_parts(inst: &MRInstance) -> Result<ScaledParts> {
    if inst.gen.f.depends_on_y() || inst.gen.g.depends_on_y() {
        return Err(Error::Catalog(
            "the transform needs f = gamma(t) y + f'(t, z) and a value-free g; \
             move any linear value dependence into the gamma curve"
                .into(),
        ));
    }
    let grid = &inst.grid;
    let vb = &inst.vb;
    let nt = grid.nt();
    let dt = grid.dt();
    let times = grid.times();
    let mut a_rate = vec![0.0; nt + 1];
    if let Some(gamma) = &inst.gen.gamma {
        for i in 1..=nt {
            a_rate[i] =
                a_rate[i - 1] + 0.5 * dt * (gamma.eval(times[i - 1]) + gamma.eval(times[i]));
        }
    }
    let scale: Vec<f64> = a_rate.iter().map(|&v| v.exp()).collect();
    let inv: Vec<f64> = a_rate.iter().map(|&v| (-v).exp()).collect();

    let term = inst.terminal.terminal_row(grid);
    let term_scaled: Vec<f64> = term.iter().map(|&v| scale[nt] * v).collect();
    let gen_scaled = ExpScaled { spec: &inst.gen, scale: &scale, inv: &inv };
    let bsde = bsde::solve_bsde(&term_scaled, &gen_scaled, grid, vb)?;

    let loss_l = ScaledArg::new(&inst.losses.l, &inv);
    let loss_r = ScaledArg::new(&inst.losses.r, &inv);
    let means = gexp::mean_curve(&bsde.y, grid, vb, Extremum::Upper)?;
    let (l_tab, r_tab) = tabulate_pair(
        bsde.y.rows(),
        0,
        &means,
        &loss_l,
        &loss_r,
        inst.effective_offsets(),
        grid,
        vb,
    )?;
    Ok(ScaledParts { inv, bsde, means, l_tab, r_tab })
}

/// Transform policy for `f = gamma(t) y + f'(t, z)` with a value-free `g`:
/// scaling the value by `exp(int gamma)` absorbs the linear term, the
/// scaled problem is solved by the one-pass machinery, and the compensator
/// increments are scaled back node by node.
pub fn solve_linear_y(inst: &MRInstance) -> Result<MRSolution> {
    let grid = &inst.grid;
    let nt = grid.nt();
    let parts = scaled_parts(inst)?;
    let ScaledParts { inv, bsde: bsde_scaled, means, l_tab, r_tab } = parts;
    let term = inst.terminal.terminal_row(grid);
    let sk = backward_from_means(&means, &l_tab, &r_tab, &SkorokhodParams::default())?;

    // Undo the scaling: fields and offsets by rows, increments by nodes.
    let unscale = |field: &ValueField| -> Vec<Vec<f64>> {
        field
            .rows()
            .iter()
            .enumerate()
            .map(|(i, row)| row.iter().map(|&v| inv[i] * v).collect())
            .collect()
    };
    let mut y_rows = unscale(&bsde_scaled.y);
    y_rows[nt] = term;
    let bsde_out = BsdeSolution {
        y: ValueField::from_rows(y_rows, grid)?,
        z: ValueField::from_rows_unchecked(unscale(&bsde_scaled.z)),
        a: ValueField::from_rows_unchecked(unscale(&bsde_scaled.a)),
    };
    let delta: Vec<f64> = (0..=nt).map(|i| inv[i] * (sk.k[nt] - sk.k[i])).collect();
    let da_r: Vec<f64> = (0..=nt).map(|i| inv[i] * sk.dkr[i]).collect();
    let da_l: Vec<f64> = (0..=nt).map(|i| inv[i] * sk.dkl[i]).collect();
    let mut a_r = vec![0.0; nt + 1];
    let mut a_l = vec![0.0; nt + 1];
    let mut a = vec![0.0; nt + 1];
    for i in 1..=nt {
        a_r[i] = a_r[i - 1] + da_r[i - 1];
        a_l[i] = a_l[i - 1] + da_l[i - 1];
        a[i] = a_r[i] - a_l[i];
    }
    let comp = Compensator { delta, a, a_r, a_l, da_r, da_l };
    assemble(inst, bsde_out, comp, Vec::new())
}

/// Converged state of a fixed-point pass over one index window.
struct WindowOutcome {
    /// Unreflected rows of the final iterate, absolute indices `i_from..=i_to`.
    ybar: Vec<Vec<f64>>,
    sk: SkorokhodSolution,
}

/// Fixed-point iteration over the window `[i_from, i_to]`: each pass
/// freezes the value slot at the previous iterate (the zero field to
/// start), sweeps, rebuilds the boundaries from the new unreflected rows,
/// re-solves the backward Skorokhod problem, and measures `sup_t E[|Y^n -
/// Y^{n-1}|^beta]`. The field `u` holds the current global iterate and is
/// updated in place on the window.
#[allow(clippy::too_many_arguments)]
fn picard_window(
    term: &[f64],
    i_from: usize,
    i_to: usize,
    inst: &MRInstance,
    u: &mut Vec<Vec<f64>>,
    diags_out: &mut Vec<f64>,
) -> Result<WindowOutcome> {
    let grid = &inst.grid;
    let vb = &inst.vb;
    let span = i_to - i_from;
    let params = SkorokhodParams::default();
    let mut local_diags = Vec::new();
    for _ in 0..inst.max_iters {
        let frozen_field = ValueField::from_rows_unchecked(u.clone());
        let frozen = FrozenY { spec: &inst.gen, frozen: &frozen_field };
        let rows = bsde::sweep_rows(term, i_to, &frozen, grid, vb)?;
        let means: Vec<Result<f64>> = par::task_map(span + 1, |v| {
            gexp::expect_row(&rows[i_from + v], i_from + v, grid, vb, Extremum::Upper)
        });
        let means: Vec<f64> = means.into_iter().collect::<Result<_>>()?;
        let (l_tab, r_tab) = tabulate_pair(
            &rows,
            i_from,
            &means,
            &inst.losses.l,
            &inst.losses.r,
            inst.effective_offsets(),
            grid,
            vb,
        )?;
        let sk = backward_from_means(&means, &l_tab, &r_tab, &params)?;
        let n = sk.len() - 1;
        // New iterate on the window and its distance from the previous one.
        let diffs: Vec<Result<f64>> = par::task_map(span + 1, |v| {
            let i = i_from + v;
            let delta = sk.k[n] - sk.k[v];
            let diff: Vec<f64> = rows[i]
                .iter()
                .zip(&u[i])
                .map(|(&yn, &yp)| (yn + delta - yp).abs().powf(inst.beta))
                .collect();
            gexp::expect_row(&diff, i, grid, vb, Extremum::Upper)
        });
        let mut d = 0.0f64;
        for r in diffs {
            d = d.max(r?);
        }
        local_diags.push(d);
        diags_out.push(d);
        for v in 0..=span {
            let delta = sk.k[n] - sk.k[v];
            u[i_from + v] = rows[i_from + v].iter().map(|&y| y + delta).collect();
        }
        if d < inst.tol_iter {
            let ybar = rows[i_from..=i_to].to_vec();
            return Ok(WindowOutcome { ybar, sk });
        }
    }
    Err(Error::NonConvergence {
        iters: inst.max_iters,
        last: local_diags.last().copied(),
        diagnostics: local_diags,
    })
}

/// Rebuild the gradient and curvature fields from unreflected rows, the
/// way the sweep computed them: both differences read the later slice, and
/// the curvature carries the doubled source with the value slot frozen at
/// the converged iterate.
fn fields_from_rows(
    ybar: Vec<Vec<f64>>,
    u: &[Vec<f64>],
    inst: &MRInstance,
    grid: &Grid,
) -> Result<BsdeSolution> {
    let nt = grid.nt();
    let h = grid.h();
    let h2 = h * h;
    let frozen_field = ValueField::from_rows_unchecked(u.to_vec());
    let frozen = FrozenY { spec: &inst.gen, frozen: &frozen_field };
    let mut z = vec![Vec::new(); nt + 1];
    let mut a = vec![Vec::new(); nt + 1];
    let n = ybar[nt].len();
    z[nt] = par::row_map(n, |j| first_diff(&ybar[nt], j, h));
    a[nt] = vec![0.0; n];
    for i in 0..nt {
        let next = &ybar[i + 1];
        let t = grid.t(i);
        let z_row = par::row_map(n, |j| first_diff(next, j, h));
        a[i] = par::row_map(n, |j| {
            second_diff(next, j, h2) + 2.0 * frozen.g(i, j, t, grid.x(j), 0.0, z_row[j])
        });
        z[i] = z_row;
    }
    Ok(BsdeSolution {
        y: ValueField::from_rows(ybar, grid)?,
        z: ValueField::from_rows_unchecked(z),
        a: ValueField::from_rows_unchecked(a),
    })
}

/// Fixed-point policy over the whole horizon. Any catalog source works;
/// the non-Lipschitz modulus is admissible here because the iteration map
/// contracts through a Bihari-type bound rather than a uniform slope.
pub fn solve_picard(inst: &MRInstance) -> Result<MRSolution> {
    let grid = &inst.grid;
    let nt = grid.nt();
    let term = inst.terminal.terminal_row(grid);
    let mut u = vec![vec![0.0; grid.nx() + 1]; nt + 1];
    let mut diags = Vec::new();
    let out = picard_window(&term, 0, nt, inst, &mut u, &mut diags)?;
    let comp = Compensator::from_backward(&out.sk);
    let bsde = fields_from_rows(out.ybar, &u, inst, grid)?;
    assemble(inst, bsde, comp, diags)
}

/// Smallest segment count `n` with `c (T/n) exp(c T/n) < 1/2`, the gate
/// that makes each segment's iteration map a contraction.
pub fn contraction_segments(c: f64, horizon: f64) -> usize {
    if c <= 0.0 {
        return 1;
    }
    let mut n = 1usize;
    loop {
        let d = c * horizon / n as f64;
        if d * d.exp() < 0.5 {
            return n;
        }
        n += 1;
    }
}

/// Contraction constant of the reflected iteration map: the value slope of
/// the sources amplified by the loss slope envelope (the reflection feeds
/// the mean error back through both boundaries).
pub fn contraction_constant(gen: &GeneratorSpec, losses: &BoundaryPair, horizon: f64) -> f64 {
    let ratio = losses.l.c_hi().max(losses.r.c_hi()) / losses.l.c_lo().min(losses.r.c_lo());
    gen.y_lipschitz(horizon) * (1.0 + 6.0 * ratio)
}

/// Segmented fixed-point policy: partition the horizon into the smallest
/// grid-aligned segment count whose length passes the contraction gate,
/// iterate each segment backward in time with the later segment's initial
/// slice as terminal data, and stitch the compensators by accumulation.
pub fn solve_segmented(inst: &MRInstance) -> Result<MRSolution> {
    if matches!(inst.gen.f, GenFun::Mao { .. }) || matches!(inst.gen.g, GenFun::Mao { .. }) {
        return Err(Error::Catalog(
            "the segmented policy needs a uniform value slope; the logarithmic \
             modulus only admits the plain fixed-point policy"
                .into(),
        ));
    }
    let grid = &inst.grid;
    let nt = grid.nt();
    let c = contraction_constant(&inst.gen, &inst.losses, grid.horizon());
    let n0 = contraction_segments(c, grid.horizon());
    if n0 > nt {
        return Err(Error::Config(format!(
            "contraction gate asks for {n0} segments but the lattice has only {nt} steps"
        )));
    }
    let n_seg = (n0..=nt).find(|d| nt % d == 0).expect("nt divides itself");
    let seg_len = nt / n_seg;

    let mut u = vec![vec![0.0; grid.nx() + 1]; nt + 1];
    let mut diags = Vec::new();
    let mut term = inst.terminal.terminal_row(grid);
    let mut da_r = vec![0.0; nt + 1];
    let mut da_l = vec![0.0; nt + 1];
    let mut ybar_shifted: Vec<Vec<f64>> = vec![Vec::new(); nt + 1];
    let mut carried = 0.0; // sum of later segments' compensator masses
    for k in (0..n_seg).rev() {
        let i_from = k * seg_len;
        let i_to = (k + 1) * seg_len;
        let out = picard_window(&term, i_from, i_to, inst, &mut u, &mut diags)?;
        let sk = &out.sk;
        let end = sk.len() - 1;
        for v in 0..end {
            da_r[i_from + v] = sk.dkr[v];
            da_l[i_from + v] = sk.dkl[v];
        }
        if k == n_seg - 1 {
            da_r[nt] = sk.dkr[end];
            da_l[nt] = sk.dkl[end];
        }
        // The global offset at node i of this segment exceeds the local one
        // by the mass of the later segments, so the glued unreflected rows
        // absorb the difference.
        let owned = if k == n_seg - 1 { end } else { end - 1 };
        for v in 0..=owned {
            ybar_shifted[i_from + v] =
                out.ybar[v].iter().map(|&y| y - carried).collect();
        }
        carried += sk.k[end];
        term = u[i_from].clone();
    }
    let mut a_r = vec![0.0; nt + 1];
    let mut a_l = vec![0.0; nt + 1];
    let mut a = vec![0.0; nt + 1];
    for i in 1..=nt {
        a_r[i] = a_r[i - 1] + da_r[i - 1];
        a_l[i] = a_l[i - 1] + da_l[i - 1];
        a[i] = a_r[i] - a_l[i];
    }
    let delta: Vec<f64> = (0..=nt).map(|i| a[nt] - a[i]).collect();
    let comp = Compensator { delta, a, a_r, a_l, da_r, da_l };
    let bsde = fields_from_rows(ybar_shifted, &u, inst, grid)?;
    assemble(inst, bsde, comp, diags)
}

/// Both Skorokhod flatness sums and the worst constraint violations of a
/// solution, with pass flags against its flatness tolerance.
#[derive(Debug, Clone, Copy)]
pub struct FlatnessReport {
    /// `sum_i E[L(t_i, Y_i)] dA^L_i`.
    pub sum_l: f64,
    /// `sum_i E[R(t_i, Y_i)] dA^R_i`.
    pub sum_r: f64,
    /// `max_i E[L(t_i, Y_i)]`; positive values violate the ceiling.
    pub max_violation_l: f64,
    /// `max_i -E[R(t_i, Y_i)]`; positive values violate the floor.
    pub max_violation_r: f64,
    pub tol_flat: f64,
    pub pass: bool,
}

/// Evaluate the discrete Skorokhod conditions of a solution.
pub fn check_flatness(sol: &MRSolution) -> FlatnessReport {
    let mut sum_l = 0.0;
    let mut sum_r = 0.0;
    for i in 0..sol.delta.len() {
        sum_l += sol.curves.slack_l[i] * sol.da_l[i];
        sum_r += sol.curves.slack_r[i] * sol.da_r[i];
    }
    let max_violation_l =
        sol.curves.slack_l.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let max_violation_r =
        sol.curves.slack_r.iter().copied().fold(f64::NEG_INFINITY, |m, v| m.max(-v));
    let tol = sol.tol_flat;
    let pass = sum_l.abs() <= tol
        && sum_r.abs() <= tol
        && max_violation_l <= tol
        && max_violation_r <= tol;
    FlatnessReport { sum_l, sum_r, max_violation_l, max_violation_r, tol_flat: tol, pass }
}

/// Observed distance of two compensators next to its diagnostic bound.
#[derive(Debug, Clone, Copy)]
pub struct AStabilityReport {
    /// `sup_t |A^1_t - A^2_t|`.
    pub lhs: f64,
    /// `c_tilde * (E[|xi^1 - xi^2|] + accrued source distance) + scheme tol`.
    pub rhs: f64,
    pub c_tilde: f64,
    pub pass: bool,
}

/// Compare the compensators of two solves sharing losses, lattice, and
/// volatility band. The bound's constant is extracted from the slope
/// envelope of the losses; the check is a diagnostic, not a certificate.
pub fn a_stability(
    sol1: &MRSolution,
    sol2: &MRSolution,
    inst1: &MRInstance,
    inst2: &MRInstance,
) -> Result<AStabilityReport> {
    if inst1.losses.l != inst2.losses.l || inst1.losses.r != inst2.losses.r {
        return Err(Error::Mismatch("stability compares solves with identical losses".into()));
    }
    if inst1.grid.nt() != inst2.grid.nt()
        || inst1.grid.nx() != inst2.grid.nx()
        || inst1.grid.horizon() != inst2.grid.horizon()
        || inst1.grid.x_half_width() != inst2.grid.x_half_width()
        || inst1.vb != inst2.vb
    {
        return Err(Error::Mismatch(
            "stability compares solves on the same lattice and volatility band".into(),
        ));
    }
    let grid = &inst1.grid;
    let vb = &inst1.vb;
    let nt = grid.nt();
    let lhs = skorokhod::sup_abs_diff(&sol1.a, &sol2.a);
    let t1 = inst1.terminal.terminal_row(grid);
    let t2 = inst2.terminal.terminal_row(grid);
    let term_row: Vec<f64> = t1.iter().zip(&t2).map(|(&a, &b)| (a - b).abs()).collect();
    let e_term = gexp::expect_row(&term_row, nt, grid, vb, Extremum::Upper)?;
    let acc1 = bsde::accrual_fields(&sol1.bsde, &inst1.gen, grid);
    let acc2 = bsde::accrual_fields(&sol2.bsde, &inst2.gen, grid);
    let mut accrued = 0.0;
    for i in 0..nt {
        let mut worst = 0.0f64;
        for j in 0..=grid.nx() {
            let df = (acc1.f_rows.at(i, j) - acc2.f_rows.at(i, j)).abs();
            let dg = (acc1.g_rows.at(i, j) - acc2.g_rows.at(i, j)).abs();
            worst = worst.max(df + vb.high_sq() * dg);
        }
        accrued += grid.dt() * worst;
    }
    let c_tilde = 4.0
        * (inst1.losses.l.c_hi().max(inst1.losses.r.c_hi())
            / inst1.losses.l.c_lo().min(inst1.losses.r.c_lo()));
    let rhs = c_tilde * (e_term + accrued) + grid.scheme_tol();
    Ok(AStabilityReport { lhs, rhs, c_tilde, pass: lhs <= rhs })
}
