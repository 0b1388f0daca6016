//! Stopping bounds and saddle points for reflected solutions.
//!
//! A solved reflected instance induces two families of deterministic
//! stopping games over grid times `s` (ceiling player) and `q` (floor
//! player). Each game entry accrues the source terms and the martingale
//! defect of the solution up to `s ∧ q` and pays a threshold constant
//! determined by whichever constraint stops first. The resulting values
//! bracket the mean of the solution from both sides, and for affine loss
//! corridors with a linear source the bracket collapses to an equality
//! with an explicit saddle point read off the mean curve.
//!
//! The module also carries the two ordering checks that compare solutions
//! across loss corridors: a pointwise comparison for ordered losses and a
//! sandwich check against solutions that keep only one side of the
//! corridor flat.

use std::collections::BTreeMap;
use std::io::Write;

use crate::boundary::{
    boundary_root, BoundaryCurve, BoundaryKind, TabulatedBoundary, TimeBoundary,
};
use crate::bsde::{self, FrozenY, ResidualMode};
use crate::csvio;
use crate::error::{ensure_finite, Error, Result};
use crate::gexp::{self, Extremum};
use crate::grid::Grid;
use crate::meanreflect::{
    backward_from_means, compose_loss_row, scaled_parts, tabulate_pair, MRInstance, MRSolution,
};
use crate::par;
use crate::skorokhod::SkorokhodParams;

/// Game-level tolerance: twice the scheme tolerance, `20 (h + dt)`.
pub fn game_tol(grid: &Grid) -> f64 {
    2.0 * grid.scheme_tol()
}

/// Threshold far enough out that a slope-one boundary can never bind on
/// any mean path the solvers produce.
const NEVER_BINDING: f64 = 1e9;

/// Contact detection scale. Binding constraints pin means to their levels
/// at the push tolerance (~1e-12 per root, accumulating to ~1e-9 over a
/// lattice), while slack constraints sit at macroscopic distance; anything
/// between separates the two cleanly.
const CONTACT_TOL: f64 = 1e-8;

/// Deterministic stopping sets for one game: a base grid index and two
/// families of candidate stopping indices between it and the final time.
///
/// Both sets are sorted, deduplicated, and must contain the final index:
/// stopping is forced at the horizon.
#[derive(Debug, Clone)]
pub struct GameGrid {
    t_idx: usize,
    s_idx: Vec<usize>,
    q_idx: Vec<usize>,
}

impl GameGrid {
    pub fn new(grid: &Grid, t: f64, s_times: &[f64], q_times: &[f64]) -> Result<Self> {
        let t_idx = grid.t_index(t)?;
        let to_indices = |times: &[f64], name: &str| -> Result<Vec<usize>> {
            let mut idx = Vec::with_capacity(times.len());
            for &v in times {
                let i = grid.t_index(v)?;
                if i < t_idx {
                    return Err(Error::Config(format!(
                        "{name} stopping time {v} lies before the base time {t}"
                    )));
                }
                idx.push(i);
            }
            idx.sort_unstable();
            idx.dedup();
            if idx.last() != Some(&grid.nt()) {
                return Err(Error::Config(format!(
                    "the {name} stopping set must contain the final time"
                )));
            }
            Ok(idx)
        };
        let s_idx = to_indices(s_times, "ceiling-side")?;
        let q_idx = to_indices(q_times, "floor-side")?;
        Ok(Self { t_idx, s_idx, q_idx })
    }

    /// `points` evenly spaced indices from the base time to the horizon,
    /// final time included.
    pub fn uniform(grid: &Grid, t: f64, points: usize) -> Result<Self> {
        if points == 0 {
            return Err(Error::Config("a stopping set needs at least one time".into()));
        }
        let t_idx = grid.t_index(t)?;
        let nt = grid.nt();
        let span = nt - t_idx;
        let mut idx: Vec<usize> = if points == 1 || span == 0 {
            vec![nt]
        } else {
            (0..points)
                .map(|k| t_idx + (span * k + (points - 1) / 2) / (points - 1))
                .collect()
        };
        idx.sort_unstable();
        idx.dedup();
        if idx.last() != Some(&nt) {
            idx.push(nt);
        }
        Ok(Self { t_idx, s_idx: idx.clone(), q_idx: idx })
    }

    pub fn t_idx(&self) -> usize {
        self.t_idx
    }

    pub fn s_indices(&self) -> &[usize] {
        &self.s_idx
    }

    pub fn q_indices(&self) -> &[usize] {
        &self.q_idx
    }

    pub fn s_times(&self, grid: &Grid) -> Vec<f64> {
        self.s_idx.iter().map(|&i| grid.t(i)).collect()
    }

    pub fn q_times(&self, grid: &Grid) -> Vec<f64> {
        self.q_idx.iter().map(|&i| grid.t(i)).collect()
    }
}

/// Which branch of the stopped payoff a pair `(s, q)` lands in. The value
/// of an entry depends on `(s, q)` only through this key, so distinct keys
/// are the unit of work.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum StopKey {
    /// `s = q = T`: the terminal data pays.
    Terminal,
    /// `q <= s`, `q < T`: the floor threshold at `q` pays.
    Floor(usize),
    /// `s < q`: the ceiling threshold at `s` pays.
    Ceiling(usize),
}

fn stop_key(is: usize, iq: usize, nt: usize) -> StopKey {
    if is < iq {
        StopKey::Ceiling(is)
    } else if iq < nt {
        StopKey::Floor(iq)
    } else {
        StopKey::Terminal
    }
}

impl StopKey {
    fn stop_index(self, nt: usize) -> usize {
        match self {
            StopKey::Terminal => nt,
            StopKey::Floor(i) | StopKey::Ceiling(i) => i,
        }
    }
}

/// Distinct payoff branches reached by a pair of stopping sets.
fn distinct_keys(gg: &GameGrid, nt: usize) -> Vec<StopKey> {
    let mut keys: Vec<StopKey> = gg
        .s_idx
        .iter()
        .flat_map(|&is| gg.q_idx.iter().map(move |&iq| stop_key(is, iq, nt)))
        .collect();
    keys.sort_unstable();
    keys.dedup();
    keys
}

/// `sup` over columns of the `inf` over rows. Returns the value and the
/// attaining `(row, col)` pair, earliest indices on ties.
pub fn sup_inf(m: &[Vec<f64>]) -> (f64, usize, usize) {
    let n_cols = m[0].len();
    let mut best = (f64::NEG_INFINITY, 0, 0);
    for qc in 0..n_cols {
        let mut inner = (f64::INFINITY, 0);
        for (sr, row) in m.iter().enumerate() {
            if row[qc] < inner.0 {
                inner = (row[qc], sr);
            }
        }
        if inner.0 > best.0 {
            best = (inner.0, inner.1, qc);
        }
    }
    best
}

/// `inf` over rows of the `sup` over columns; ties resolve earliest.
pub fn inf_sup(m: &[Vec<f64>]) -> (f64, usize, usize) {
    let mut best = (f64::INFINITY, 0, 0);
    for (sr, row) in m.iter().enumerate() {
        let mut inner = (f64::NEG_INFINITY, 0);
        for (qc, &v) in row.iter().enumerate() {
            if v > inner.0 {
                inner = (v, qc);
            }
        }
        if inner.0 < best.0 {
            best = (inner.0, sr, inner.1);
        }
    }
    best
}

/// The four threshold rows of a solved instance: for each grid time, the
/// root of the expected loss applied to the solution's centered slice.
///
/// `r_upper`/`l_upper` center the slice at its upper mean, `r_lower`/
/// `l_lower` at its lower mean; all four outer expectations are upper.
/// Each entry solves its scalar equation to the push tolerance scaled by
/// the loss slope.
#[derive(Debug, Clone)]
pub struct Thresholds {
    pub r_upper: Vec<f64>,
    pub l_upper: Vec<f64>,
    pub r_lower: Vec<f64>,
    pub l_lower: Vec<f64>,
}

/// Tabulate both centerings of the loss corridor against the unreflected
/// part of the solution and root-find every row.
pub fn thresholds(sol: &MRSolution, inst: &MRInstance) -> Result<Thresholds> {
    let grid = &inst.grid;
    let vb = &inst.vb;
    let rows = sol.bsde.y.rows();
    let n_pts = inst.effective_offsets();
    let means_up = gexp::mean_curve(&sol.bsde.y, grid, vb, Extremum::Upper)?;
    let means_lo = gexp::mean_curve(&sol.bsde.y, grid, vb, Extremum::Lower)?;
    let (l_up, r_up) =
        tabulate_pair(rows, 0, &means_up, &inst.losses.l, &inst.losses.r, n_pts, grid, vb)?;
    let (l_lo, r_lo) =
        tabulate_pair(rows, 0, &means_lo, &inst.losses.l, &inst.losses.r, n_pts, grid, vb)?;
    let roots = |tab: &TabulatedBoundary| -> Result<Vec<f64>> {
        let xtol = SkorokhodParams::default().tol / tab.c_lo();
        (0..tab.len()).map(|i| boundary_root(tab, i, 0.0, xtol)).collect()
    };
    Ok(Thresholds {
        r_upper: roots(&r_up)?,
        l_upper: roots(&l_up)?,
        r_lower: roots(&r_lo)?,
        l_lower: roots(&l_lo)?,
    })
}

/// Both stopping-game matrices of a solved instance at one base time,
/// their outer reductions, and the bracket checks against the solution's
/// mean.
///
/// `upper[si][qi]` is the maximizing program of the stopped payoff built
/// from the upper-centered thresholds; `lower[si][qi]` the minimizing
/// program with the lower-centered ones. The reductions satisfy
/// `infsup_lower <= -E[-Y_t] <= E[Y_t] <= supinf_upper` up to `tol`, with
/// all three agreeing within `3 tol` when the solution's mean has no
/// volatility spread.
#[derive(Debug, Clone)]
pub struct GameValues {
    pub s_times: Vec<f64>,
    pub q_times: Vec<f64>,
    pub upper: Vec<Vec<f64>>,
    pub lower: Vec<Vec<f64>>,
    /// `sup_q inf_s upper`.
    pub supinf_upper: f64,
    /// `inf_s sup_q lower`.
    pub infsup_lower: f64,
    /// `(s, q)` attaining `supinf_upper`.
    pub arg_upper: (f64, f64),
    /// `(s, q)` attaining `infsup_lower`.
    pub arg_lower: (f64, f64),
    pub e_y: f64,
    pub neg_e_neg_y: f64,
    pub tol: f64,
    pub chain_ok: bool,
    /// Whether the upper and lower mean curves agree to contact accuracy
    /// over the whole horizon.
    pub symmetric_means: bool,
    /// Set when `symmetric_means`: both game values within `3 tol` of the
    /// mean.
    pub equality_ok: Option<bool>,
}

impl GameValues {
    /// Matrix rows `s,q,upper,lower` followed by a one-row summary block
    /// `supinf_upper,infsup_lower,E_Y,negE_negY,s_star,q_star`, where the
    /// stars are the outer optimizers of each reduction.
    pub fn dump_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "s,q,upper,lower")?;
        for (si, &s) in self.s_times.iter().enumerate() {
            for (qi, &q) in self.q_times.iter().enumerate() {
                writeln!(w, "{}", csvio::line(&[s, q, self.upper[si][qi], self.lower[si][qi]]))?;
            }
        }
        writeln!(w, "supinf_upper,infsup_lower,E_Y,negE_negY,s_star,q_star")?;
        writeln!(
            w,
            "{}",
            csvio::line(&[
                self.supinf_upper,
                self.infsup_lower,
                self.e_y,
                self.neg_e_neg_y,
                self.arg_lower.0,
                self.arg_upper.1,
            ])
        )?;
        Ok(())
    }
}

/// Evaluate the stopping-bound matrices for a solved instance.
///
/// Entry `(s, q)` runs a dynamic program from `s ∧ q` back to the base
/// time: the terminal row is the solution's own data when `s = q = T` and
/// a threshold constant otherwise, while each step accrues the source
/// rows the solve itself produced plus the per-step defect compensation
/// `G(a) - s2 a / 2`. Entries depend on `(s, q)` only through the payoff
/// branch, so distinct branches are solved once and concurrently.
pub fn optim_bounds(sol: &MRSolution, inst: &MRInstance, gg: &GameGrid) -> Result<GameValues> {
    let grid = &inst.grid;
    let vb = &inst.vb;
    let nt = grid.nt();
    let n = grid.nx() + 1;
    let it = gg.t_idx;
    let th = thresholds(sol, inst)?;
    let y_total = sol.y_field(grid)?;
    let acc = bsde::accrual_fields(&sol.bsde, &FrozenY { spec: &inst.gen, frozen: &y_total }, grid);

    let keys = distinct_keys(gg, nt);
    let solved: Vec<Result<[f64; 2]>> = par::task_map(keys.len(), |ki| {
        let key = keys[ki];
        let tau = key.stop_index(nt);
        let (term_up, term_lo) = match key {
            StopKey::Terminal => (sol.y_row(nt), sol.y_row(nt)),
            StopKey::Floor(iq) => (vec![th.r_upper[iq]; n], vec![th.r_lower[iq]; n]),
            StopKey::Ceiling(is) => (vec![th.l_upper[is]; n], vec![th.l_lower[is]; n]),
        };
        let row_up = bsde::expect_with_k(
            &sol.bsde.a,
            Some(&acc.f_rows),
            Some(&acc.g_rows),
            &term_up,
            (it, tau),
            grid,
            vb,
            Extremum::Upper,
            ResidualMode::NegativeK,
        )?;
        let up = gexp::expect_row(&row_up, it, grid, vb, Extremum::Upper)?;
        let row_lo = bsde::expect_with_k(
            &sol.bsde.a,
            Some(&acc.f_rows),
            Some(&acc.g_rows),
            &term_lo,
            (it, tau),
            grid,
            vb,
            Extremum::Lower,
            ResidualMode::NegativeK,
        )?;
        let lo = gexp::expect_row(&row_lo, it, grid, vb, Extremum::Lower)?;
        Ok([up, lo])
    });
    let mut by_key = BTreeMap::new();
    for (ki, r) in solved.into_iter().enumerate() {
        by_key.insert(keys[ki], r?);
    }

    let entry = |is: usize, iq: usize| by_key[&stop_key(is, iq, nt)];
    let upper: Vec<Vec<f64>> =
        gg.s_idx.iter().map(|&is| gg.q_idx.iter().map(|&iq| entry(is, iq)[0]).collect()).collect();
    let lower: Vec<Vec<f64>> =
        gg.s_idx.iter().map(|&is| gg.q_idx.iter().map(|&iq| entry(is, iq)[1]).collect()).collect();

    let (supinf_upper, u_si, u_qi) = sup_inf(&upper);
    let (infsup_lower, l_si, l_qi) = inf_sup(&lower);
    let s_times = gg.s_times(grid);
    let q_times = gg.q_times(grid);
    let e_y = sol.curves.upper_mean[it];
    let neg_e_neg_y = sol.curves.lower_mean[it];
    let tol = game_tol(grid);
    let chain_ok = infsup_lower <= neg_e_neg_y + tol
        && neg_e_neg_y <= e_y + 1e-12
        && e_y <= supinf_upper + tol;
    let spread = sol
        .curves
        .upper_mean
        .iter()
        .zip(&sol.curves.lower_mean)
        .map(|(u, l)| (u - l).abs())
        .fold(0.0, f64::max);
    // Instances whose slices stay affine propagate identically under both
    // programs, so their curves agree to rounding; a genuine volatility
    // spread is macroscopic.
    let symmetric_means = spread <= CONTACT_TOL * (1.0 + e_y.abs());
    let equality_ok = symmetric_means.then(|| {
        (supinf_upper - e_y).abs() <= 3.0 * tol && (infsup_lower - e_y).abs() <= 3.0 * tol
    });
    Ok(GameValues {
        s_times: s_times.clone(),
        q_times: q_times.clone(),
        upper,
        lower,
        supinf_upper,
        infsup_lower,
        arg_upper: (s_times[u_si], q_times[u_qi]),
        arg_lower: (s_times[l_si], q_times[l_qi]),
        e_y,
        neg_e_neg_y,
        tol,
        chain_ok,
        symmetric_means,
        equality_ok,
    })
}

/// Saddle-point report for the affine-corridor linear game.
///
/// `values[si][qi]` is the upper expectation of the stopped auxiliary
/// value `y^{s ∧ q}` at the base time; both of its outer reductions equal
/// the mean of the reflected solution, attained at the first grid times
/// where the mean curve touches the ceiling (for `s_star`) or the floor
/// (for `q_star`).
#[derive(Debug, Clone)]
pub struct LinearGameReport {
    pub s_times: Vec<f64>,
    pub q_times: Vec<f64>,
    pub values: Vec<Vec<f64>>,
    /// `sup_q inf_s values`.
    pub supinf: f64,
    /// `inf_s sup_q values`.
    pub infsup: f64,
    pub e_y: f64,
    pub s_star: f64,
    pub q_star: f64,
    pub value_at_saddle: f64,
    /// Value at `(s, q_star)` for each `s` in the stopping set.
    pub saddle_row: Vec<f64>,
    /// Value at `(s_star, q)` for each `q` in the stopping set.
    pub saddle_col: Vec<f64>,
    pub tol: f64,
    /// Both reductions agree with the mean within `tol`.
    pub equalities_ok: bool,
    /// The saddle pair attains the value and dominates its row/column in
    /// the saddle directions within `tol`.
    pub saddle_ok: bool,
}

impl LinearGameReport {
    /// Same schema as the bound matrices: the single game matrix fills
    /// both value columns, and the stars are the mean-curve crossings.
    pub fn dump_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "s,q,upper,lower")?;
        for (si, &s) in self.s_times.iter().enumerate() {
            for (qi, &q) in self.q_times.iter().enumerate() {
                let v = self.values[si][qi];
                writeln!(w, "{}", csvio::line(&[s, q, v, v]))?;
            }
        }
        writeln!(w, "supinf_upper,infsup_lower,E_Y,negE_negY,s_star,q_star")?;
        writeln!(
            w,
            "{}",
            csvio::line(&[self.supinf, self.infsup, self.e_y, self.e_y, self.s_star, self.q_star])
        )?;
        Ok(())
    }
}

fn affine_slope_one(b: &BoundaryCurve) -> bool {
    matches!(b.kind(), BoundaryKind::AffineThreshold { slope } if (slope - 1.0).abs() <= 1e-12)
}

/// Solve the linear stopping game: plain sweeps of the instance's source
/// over `[t, s ∧ q]` with the corridor thresholds as stopped payoffs.
///
/// Requires the corridor to be slope-one affine and the source to be a
/// constant plus an optional linear value term, so that the constraint
/// reads directly on the mean curve.
pub fn linear_game(sol: &MRSolution, inst: &MRInstance, gg: &GameGrid) -> Result<LinearGameReport> {
    let grid = &inst.grid;
    let vb = &inst.vb;
    let nt = grid.nt();
    let it = gg.t_idx;
    if inst.gen.f.depends_on_y() || inst.gen.f.depends_on_z() {
        return Err(Error::Precondition(
            "the linear game needs a deterministic drift beside the rate curve; \
             move value dependence into the rate and drop gradient reads"
                .into(),
        ));
    }
    let g_val = inst.gen.g.eval(0.0, 0.0);
    if inst.gen.g.depends_on_y() || inst.gen.g.depends_on_z() || g_val != 0.0 {
        return Err(Error::Precondition(
            "the linear game needs a vanishing volatility source".into(),
        ));
    }
    if !affine_slope_one(&inst.losses.l) || !affine_slope_one(&inst.losses.r) {
        return Err(Error::Precondition(
            "the linear game needs slope-one affine losses on both sides".into(),
        ));
    }

    // Slope-one affine losses read the corridor directly on the mean:
    // the ceiling caps it at -L(t, 0) and the floor props it at -R(t, 0).
    let l_vals: Vec<f64> = (0..=nt).map(|i| -inst.losses.l.eval(i, 0.0)).collect();
    let r_vals: Vec<f64> = (0..=nt).map(|i| -inst.losses.r.eval(i, 0.0)).collect();
    let tol = game_tol(grid);
    // Crossings are contact detection, not value comparison: a binding
    // constraint pins the mean to its level at push accuracy.
    let cross = |vals: &[f64]| -> usize {
        (it..=nt)
            .find(|&i| {
                (sol.curves.upper_mean[i] - vals[i]).abs()
                    <= CONTACT_TOL * (1.0 + vals[i].abs())
            })
            .unwrap_or(nt)
    };
    let is_star = cross(&l_vals);
    let iq_star = cross(&r_vals);

    let mut keys = distinct_keys(gg, nt);
    for &is in &gg.s_idx {
        keys.push(stop_key(is, iq_star, nt));
    }
    for &iq in &gg.q_idx {
        keys.push(stop_key(is_star, iq, nt));
    }
    keys.push(stop_key(is_star, iq_star, nt));
    keys.sort_unstable();
    keys.dedup();

    let term_row = inst.terminal.terminal_row(grid);
    let solved: Vec<Result<f64>> = par::task_map(keys.len(), |ki| {
        let key = keys[ki];
        let tau = key.stop_index(nt);
        let term = match key {
            StopKey::Terminal => term_row.clone(),
            StopKey::Floor(iq) => vec![r_vals[iq]; grid.nx() + 1],
            StopKey::Ceiling(is) => vec![l_vals[is]; grid.nx() + 1],
        };
        let rows = bsde::sweep_rows(&term, tau, &inst.gen, grid, vb)?;
        gexp::expect_row(&rows[it], it, grid, vb, Extremum::Upper)
    });
    let mut by_key = BTreeMap::new();
    for (ki, r) in solved.into_iter().enumerate() {
        by_key.insert(keys[ki], r?);
    }

    let entry = |is: usize, iq: usize| by_key[&stop_key(is, iq, nt)];
    let values: Vec<Vec<f64>> =
        gg.s_idx.iter().map(|&is| gg.q_idx.iter().map(|&iq| entry(is, iq)).collect()).collect();
    let (supinf, _, _) = sup_inf(&values);
    let (infsup, _, _) = inf_sup(&values);
    let e_y = sol.curves.upper_mean[it];
    let value_at_saddle = entry(is_star, iq_star);
    let saddle_row: Vec<f64> = gg.s_idx.iter().map(|&is| entry(is, iq_star)).collect();
    let saddle_col: Vec<f64> = gg.q_idx.iter().map(|&iq| entry(is_star, iq)).collect();

    let equalities_ok = (supinf - e_y).abs() <= tol && (infsup - e_y).abs() <= tol;
    let saddle_ok = (value_at_saddle - supinf).abs() <= tol
        && saddle_row.iter().all(|&v| v >= value_at_saddle - tol)
        && saddle_col.iter().all(|&v| v <= value_at_saddle + tol);
    Ok(LinearGameReport {
        s_times: gg.s_times(grid),
        q_times: gg.q_times(grid),
        values,
        supinf,
        infsup,
        e_y,
        s_star: grid.t(is_star),
        q_star: grid.t(iq_star),
        value_at_saddle,
        saddle_row,
        saddle_col,
        tol,
        equalities_ok,
        saddle_ok,
    })
}

/// Pointwise ordering report for two solves differing only in their loss
/// corridors.
#[derive(Debug, Clone)]
pub struct CompareReport {
    /// `min` over all nodes of (first solution minus second).
    pub margin: f64,
    pub tol: f64,
    pub pass: bool,
}

/// Solve both instances and check that pointwise smaller losses produce a
/// pointwise larger solution.
///
/// The instances must share terminal data, source, lattice, and band;
/// the losses must satisfy `L1 <= L2` and `R1 <= R2` on a sampled net,
/// and the sources must be free of value reads so both solves are exact
/// single passes.
pub fn compare_loss(inst1: &MRInstance, inst2: &MRInstance) -> Result<CompareReport> {
    if inst1.terminal != inst2.terminal {
        return Err(Error::Mismatch("the comparison needs a shared terminal payoff".into()));
    }
    if inst1.gen != inst2.gen {
        return Err(Error::Mismatch("the comparison needs a shared source term".into()));
    }
    if inst1.grid != inst2.grid || inst1.vb != inst2.vb {
        return Err(Error::Mismatch("the comparison needs a shared lattice and band".into()));
    }
    if inst1.gen.f.depends_on_y() || inst1.gen.g.depends_on_y() {
        return Err(Error::Catalog(
            "the comparison needs sources free of value reads; \
             move linear value dependence into the rate curve"
                .into(),
        ));
    }
    let grid = &inst1.grid;
    let nt = grid.nt();
    let nx = grid.nx();
    let x_lo = grid.x(0);
    let x_hi = grid.x(nx);
    let net = 41;
    for i in 0..=nt {
        for k in 0..net {
            let x = x_lo + (x_hi - x_lo) * k as f64 / (net - 1) as f64;
            if inst1.losses.l.eval(i, x) > inst2.losses.l.eval(i, x) + 1e-12
                || inst1.losses.r.eval(i, x) > inst2.losses.r.eval(i, x) + 1e-12
            {
                return Err(Error::Precondition(format!(
                    "loss ordering fails at t = {}, x = {x}: the first corridor \
                     must lie below the second on both sides",
                    grid.t(i)
                )));
            }
        }
    }
    let sol1 = inst1.solve()?;
    let sol2 = inst2.solve()?;
    let mut margin = f64::INFINITY;
    for i in 0..=nt {
        for j in 0..=nx {
            margin = margin.min(sol1.y_at(i, j) - sol2.y_at(i, j));
        }
    }
    let tol = grid.scheme_tol();
    Ok(CompareReport { margin, tol, pass: margin >= -tol })
}

/// Outcome of one side of the sandwich check.
#[derive(Debug, Clone)]
pub enum EnvelopeOutcome {
    /// No admissible perturbed solution was found; not a failure.
    Skipped { reason: String },
    /// The envelope exists; `gap_min`/`gap_max` bound its node gap to the
    /// reflected solution, signed so ordering means `gap_min >= -tol`.
    Checked { gap_min: f64, gap_max: f64, ordered: bool },
}

impl EnvelopeOutcome {
    pub fn is_checked(&self) -> bool {
        matches!(self, EnvelopeOutcome::Checked { .. })
    }
}

/// Sandwich report: envelopes built by perturbing one side of the
/// compensator and re-solving only the other side.
#[derive(Debug, Clone)]
pub struct SandwichReport {
    pub lambda: f64,
    pub tol: f64,
    /// Solution of the system that keeps only the ceiling side flat; it
    /// must dominate the reflected solution.
    pub upper: EnvelopeOutcome,
    /// Solution of the system that keeps only the floor side flat; the
    /// reflected solution must dominate it.
    pub lower: EnvelopeOutcome,
    pub pass: bool,
}

/// Never-binding stand-in for one side of the corridor.
fn open_side(grid: &Grid, ceiling: bool) -> Result<BoundaryCurve> {
    let theta = if ceiling { NEVER_BINDING } else { -NEVER_BINDING };
    BoundaryCurve::new(
        BoundaryKind::AffineThreshold { slope: 1.0 },
        crate::curve::TimeCurve::Const(theta),
        &grid.times(),
    )
}

/// Bracket the reflected solution between one-sided envelopes.
///
/// The upper envelope keeps the floor-side pushes plus a strictly
/// increasing extra mass `lambda t` fixed and re-solves the ceiling side
/// alone; the lower envelope mirrors this. Each candidate is accepted
/// only if its mean stays inside the corridor; a candidate that cannot be
/// made admissible is reported as skipped rather than failed. Gaps are
/// constant across each time slice, so the nodewise ordering reduces to
/// the per-time gap sign.
pub fn sandwich(inst: &MRInstance, lambda: f64) -> Result<SandwichReport> {
    ensure_finite(lambda, "sandwich perturbation")?;
    if lambda < 0.0 {
        return Err(Error::Config(format!(
            "the sandwich perturbation must be nonnegative, got {lambda}"
        )));
    }
    let grid = &inst.grid;
    let vb = &inst.vb;
    let nt = grid.nt();
    let horizon = grid.horizon();
    let params = SkorokhodParams::default();
    let parts = scaled_parts(inst)?;
    let sk = backward_from_means(&parts.means, &parts.l_tab, &parts.r_tab, &params)?;
    let delta: Vec<f64> = (0..=nt).map(|i| sk.k[nt] - sk.k[i]).collect();
    let tol = grid.scheme_tol() * (1.0 + sk.total_variation());

    // Corridor slack of a candidate offset row, evaluated on the original
    // losses in the untransformed coordinates.
    let corridor_ok = |delta_scaled: &[f64]| -> Result<Option<String>> {
        let slacks: Vec<Result<[f64; 2]>> = par::task_map(nt + 1, |i| {
            let row: Vec<f64> =
                parts.bsde.y.row(i).iter().map(|&v| parts.inv[i] * v).collect();
            let shift = parts.inv[i] * delta_scaled[i];
            let sl = gexp::expect_row(
                &compose_loss_row(&row, &inst.losses.l, i, shift),
                i,
                grid,
                vb,
                Extremum::Upper,
            )?;
            let sr = gexp::expect_row(
                &compose_loss_row(&row, &inst.losses.r, i, shift),
                i,
                grid,
                vb,
                Extremum::Upper,
            )?;
            Ok([sl, sr])
        });
        for (i, s) in slacks.into_iter().enumerate() {
            let [sl, sr] = s?;
            if sl > tol || sr < -tol {
                return Ok(Some(format!(
                    "perturbed mean leaves the corridor at t = {}: E[L] = {sl}, E[R] = {sr}",
                    grid.t(i)
                )));
            }
        }
        Ok(None)
    };

    let envelope = |upper: bool| -> Result<EnvelopeOutcome> {
        let fixed: Vec<f64> = (0..=nt)
            .map(|i| {
                let extra = lambda * (horizon - grid.t(i));
                if upper {
                    (sk.kr[nt] - sk.kr[i]) + extra
                } else {
                    -(sk.kl[nt] - sk.kl[i]) - extra
                }
            })
            .collect();
        let shifted: Vec<f64> =
            (0..=nt).map(|i| parts.means[i] + fixed[i]).collect();
        let re_solved = if upper {
            let floor = open_side(grid, false)?;
            backward_from_means(&shifted, &parts.l_tab, &floor, &params)
        } else {
            let ceiling = open_side(grid, true)?;
            backward_from_means(&shifted, &ceiling, &parts.r_tab, &params)
        };
        let sk2 = match re_solved {
            Ok(s) => s,
            Err(Error::Precondition(reason)) => return Ok(EnvelopeOutcome::Skipped { reason }),
            Err(e) => return Err(e),
        };
        let delta2: Vec<f64> =
            (0..=nt).map(|i| fixed[i] + (sk2.k[nt] - sk2.k[i])).collect();
        if let Some(reason) = corridor_ok(&delta2)? {
            return Ok(EnvelopeOutcome::Skipped { reason });
        }
        let mut gap_min = f64::INFINITY;
        let mut gap_max = f64::NEG_INFINITY;
        for i in 0..=nt {
            let gap = if upper {
                parts.inv[i] * (delta2[i] - delta[i])
            } else {
                parts.inv[i] * (delta[i] - delta2[i])
            };
            gap_min = gap_min.min(gap);
            gap_max = gap_max.max(gap);
        }
        Ok(EnvelopeOutcome::Checked { gap_min, gap_max, ordered: gap_min >= -tol })
    };

    let upper = envelope(true)?;
    let lower = envelope(false)?;
    let ok = |o: &EnvelopeOutcome| match o {
        EnvelopeOutcome::Checked { ordered, .. } => *ordered,
        EnvelopeOutcome::Skipped { .. } => true,
    };
    let pass = ok(&upper) && ok(&lower);
    Ok(SandwichReport { lambda, tol, upper, lower, pass })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boundary::BoundaryPair;
    use crate::bsde::{GenFun, GeneratorSpec};
    use crate::curve::TimeCurve;
    use crate::grid::VolBounds;
    use crate::meanreflect::SolvePolicy;
    use crate::payoff::PayoffSpec;

    fn band() -> VolBounds {
        VolBounds::new(0.25, 1.0).unwrap()
    }

    fn grid(nt: usize, nx: usize) -> Grid {
        Grid::auto(1.0, nt, nx, &band()).unwrap()
    }

    fn affine_loss(grid: &Grid, theta: TimeCurve) -> BoundaryCurve {
        BoundaryCurve::new(BoundaryKind::AffineThreshold { slope: 1.0 }, theta, &grid.times())
            .unwrap()
    }

    fn corridor(grid: &Grid, theta_l: TimeCurve, theta_r: TimeCurve) -> BoundaryPair {
        BoundaryPair::new(affine_loss(grid, theta_l), affine_loss(grid, theta_r)).unwrap()
    }

    /// Ceiling x - 1, floor x - 0.5 (1 - t): the floor binds everywhere.
    fn flagship_losses(grid: &Grid) -> BoundaryPair {
        corridor(
            grid,
            TimeCurve::Const(1.0),
            TimeCurve::Affine { c0: 0.5, c1: -0.5 },
        )
    }

    fn slack_losses(grid: &Grid) -> BoundaryPair {
        corridor(grid, TimeCurve::Const(10.0), TimeCurve::Const(-10.0))
    }

    fn brownian() -> PayoffSpec {
        PayoffSpec::Affine { c0: 0.0, c1: 1.0 }
    }

    fn flagship(nt: usize, nx: usize) -> (MRInstance, MRSolution) {
        let g = grid(nt, nx);
        let inst = MRInstance::new(
            brownian(),
            GeneratorSpec::none(),
            flagship_losses(&g),
            g,
            &band(),
            SolvePolicy::Constant,
        )
        .unwrap();
        let sol = inst.solve().unwrap();
        (inst, sol)
    }

    fn slack_instance(nt: usize, nx: usize, terminal: PayoffSpec) -> (MRInstance, MRSolution) {
        let g = grid(nt, nx);
        let inst = MRInstance::new(
            terminal,
            GeneratorSpec::none(),
            slack_losses(&g),
            g,
            &band(),
            SolvePolicy::Constant,
        )
        .unwrap();
        let sol = inst.solve().unwrap();
        (inst, sol)
    }

    #[test]
    fn flagship_thresholds_follow_the_corridor() {
        let (inst, sol) = flagship(60, 240);
        let th = thresholds(&sol, &inst).unwrap();
        let g = &inst.grid;
        for i in 0..=g.nt() {
            let t = g.t(i);
            assert!(
                (th.r_upper[i] - 0.5 * (1.0 - t)).abs() < 1e-8,
                "floor threshold at t = {t}: {}",
                th.r_upper[i]
            );
            assert!((th.l_upper[i] - 1.0).abs() < 1e-8, "ceiling threshold at t = {t}");
            // The payoff slices are affine, so both centerings coincide.
            assert!((th.r_lower[i] - th.r_upper[i]).abs() < 1e-10);
            assert!((th.l_lower[i] - th.l_upper[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn threshold_rows_solve_their_equations() {
        let (inst, sol) = flagship(40, 160);
        let g = &inst.grid;
        let rows = sol.bsde.y.rows();
        let means = gexp::mean_curve(&sol.bsde.y, g, &inst.vb, Extremum::Upper).unwrap();
        let (l_tab, r_tab) =
            tabulate_pair(rows, 0, &means, &inst.losses.l, &inst.losses.r, 2, g, &inst.vb)
                .unwrap();
        let th = thresholds(&sol, &inst).unwrap();
        for i in [0, g.nt() / 2, g.nt()] {
            assert!(r_tab.eval(i, th.r_upper[i]).abs() < 1e-9, "floor residual at row {i}");
            assert!(l_tab.eval(i, th.l_upper[i]).abs() < 1e-9, "ceiling residual at row {i}");
        }
    }

    #[test]
    fn degenerate_band_collapses_the_centerings() {
        let vb = VolBounds::classical(0.5).unwrap();
        let g = Grid::auto(1.0, 40, 160, &vb).unwrap();
        let losses = corridor(&g, TimeCurve::Const(10.0), TimeCurve::Const(-10.0));
        let inst = MRInstance::new(
            PayoffSpec::Abs { c0: 0.0, c1: 1.0 },
            GeneratorSpec::none(),
            losses,
            g,
            &vb,
            SolvePolicy::Constant,
        )
        .unwrap();
        let sol = inst.solve().unwrap();
        let th = thresholds(&sol, &inst).unwrap();
        for i in 0..=inst.grid.nt() {
            assert!((th.r_upper[i] - th.r_lower[i]).abs() < 1e-12);
            assert!((th.l_upper[i] - th.l_lower[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn game_grid_validates_and_spaces_uniformly() {
        let g = grid(40, 160);
        assert!(matches!(
            GameGrid::new(&g, 0.33, &[1.0], &[1.0]),
            Err(Error::Alignment(_))
        ));
        assert!(matches!(
            GameGrid::new(&g, 0.5, &[0.25, 1.0], &[1.0]),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            GameGrid::new(&g, 0.0, &[0.0, 0.5], &[1.0]),
            Err(Error::Config(_))
        ));
        let gg = GameGrid::new(&g, 0.0, &[0.0, 0.5, 1.0], &[0.5, 1.0]).unwrap();
        assert_eq!(gg.s_indices(), &[0, 20, 40]);
        assert_eq!(gg.q_indices(), &[20, 40]);
        let uni = GameGrid::uniform(&g, 0.0, 5).unwrap();
        assert_eq!(uni.s_indices(), &[0, 10, 20, 30, 40]);
        let single = GameGrid::uniform(&g, 1.0, 3).unwrap();
        assert_eq!(single.s_indices(), &[40]);
    }

    #[test]
    fn minimax_reductions_pick_earliest_ties() {
        let m = vec![vec![1.0, 3.0], vec![2.0, 2.0]];
        let (v, si, qi) = sup_inf(&m);
        assert_eq!((v, si, qi), (2.0, 1, 1));
        let (v, si, qi) = inf_sup(&m);
        assert_eq!((v, si, qi), (2.0, 1, 0));
        // inf sup dominates sup inf on any matrix.
        assert!(inf_sup(&m).0 >= sup_inf(&m).0);
    }

    #[test]
    fn flagship_bounds_collapse_to_the_mean() {
        let (inst, sol) = flagship(60, 240);
        let gg = GameGrid::new(&inst.grid, 0.0, &[0.0, 0.5, 1.0], &[0.0, 0.5, 1.0]).unwrap();
        let gv = optim_bounds(&sol, &inst, &gg).unwrap();
        assert!((gv.e_y - 0.5).abs() < 1e-7);
        assert!((gv.supinf_upper - 0.5).abs() < 1e-6, "upper game {}", gv.supinf_upper);
        assert!((gv.infsup_lower - 0.5).abs() < 1e-6, "lower game {}", gv.infsup_lower);
        assert!(gv.chain_ok);
        assert!(gv.symmetric_means);
        assert_eq!(gv.equality_ok, Some(true));
        // Stopping at the floor immediately pays its threshold.
        assert!((gv.upper[0][0] - 0.5).abs() < 1e-9);
        // Waiting for the ceiling pays its full threshold.
        assert!((gv.upper[0][1] - 1.0).abs() < 1e-9);
        // Both players waiting to the horizon pays the raw terminal mean.
        assert!((gv.upper[2][2] - 0.0).abs() < 1e-7);
        assert!(inf_sup(&gv.upper).0 >= sup_inf(&gv.upper).0);
        assert!(inf_sup(&gv.lower).0 >= sup_inf(&gv.lower).0);
        // The outer optimizer of the upper game stops on the floor at once.
        assert_eq!(gv.arg_upper.1, 0.0);
    }

    #[test]
    fn slack_symmetric_instance_keeps_the_equality() {
        let (inst, sol) = slack_instance(60, 240, brownian());
        let gg = GameGrid::uniform(&inst.grid, 0.0, 4).unwrap();
        let gv = optim_bounds(&sol, &inst, &gg).unwrap();
        assert!(gv.chain_ok);
        assert_eq!(gv.equality_ok, Some(true));
        assert!((gv.supinf_upper - 0.0).abs() < 1e-6);
        assert!((gv.infsup_lower - 0.0).abs() < 1e-6);
    }

    #[test]
    fn squared_terminal_splits_the_chain() {
        let (inst, sol) = slack_instance(80, 320, PayoffSpec::Quadratic {
            c0: 0.0,
            c1: 0.0,
            c2: 1.0,
        });
        // A base time in the interior, where the value is genuinely random:
        // the upper mean stays flat at 1 while the lower mean has decayed
        // to 1 - 0.75 * 0.5.
        let gg =
            GameGrid::new(&inst.grid, 0.5, &[0.5, 0.75, 1.0], &[0.5, 0.75, 1.0]).unwrap();
        let gv = optim_bounds(&sol, &inst, &gg).unwrap();
        assert!(gv.chain_ok);
        assert!(!gv.symmetric_means);
        assert_eq!(gv.equality_ok, None);
        assert!((gv.e_y - 1.0).abs() < 0.05, "upper mean {}", gv.e_y);
        assert!((gv.neg_e_neg_y - 0.625).abs() < 0.05, "lower mean {}", gv.neg_e_neg_y);
        // Both reductions land on their horizon entry: the slack corridor
        // makes every threshold branch far worse than waiting.
        assert!((gv.supinf_upper - 1.0).abs() < 0.05);
        assert!((gv.infsup_lower - 0.625).abs() < 0.05);
        // Strict separation between the two game values.
        assert!(gv.supinf_upper - gv.infsup_lower > 0.3);
        assert_eq!(gv.arg_upper, (1.0, 1.0));
        assert_eq!(gv.arg_lower, (1.0, 1.0));
        // The horizon entries are the tower values of the means exactly.
        assert!((gv.upper[2][2] - gv.e_y).abs() < 1e-10);
        assert!((gv.lower[2][2] - gv.neg_e_neg_y).abs() < 1e-10);
        // The defect accrues on constant rows: waiting on the floor gains
        // dt * max(G(a) - s2 a / 2) = 0.75 per unit time with a = 2.
        assert!((gv.upper[1][1] - gv.upper[0][0] - 0.75 * 0.25).abs() < 0.02);
        assert!(inf_sup(&gv.upper).0 >= sup_inf(&gv.upper).0);
        assert!(inf_sup(&gv.lower).0 >= sup_inf(&gv.lower).0);
    }

    #[test]
    fn discounted_flagship_keeps_the_equality() {
        let g = grid(80, 320);
        let gen = GeneratorSpec::new(
            GenFun::zero(),
            GenFun::zero(),
            Some(TimeCurve::Const(-1.0)),
            1.0,
        )
        .unwrap();
        let inst = MRInstance::new(
            brownian(),
            gen,
            flagship_losses(&g),
            g,
            &band(),
            SolvePolicy::LinearY,
        )
        .unwrap();
        let sol = inst.solve().unwrap();
        let gg = GameGrid::new(&inst.grid, 0.0, &[0.0, 0.5, 1.0], &[0.0, 0.5, 1.0]).unwrap();
        let gv = optim_bounds(&sol, &inst, &gg).unwrap();
        // The floor still binds the mean to 0.5 (1 - t) at the start.
        assert!((gv.e_y - 0.5).abs() < 0.05, "discounted mean {}", gv.e_y);
        assert!(gv.chain_ok);
        assert!(gv.symmetric_means);
        assert_eq!(gv.equality_ok, Some(true));
        // The rate accrual reproduces the mean to first order in dt.
        assert!((gv.supinf_upper - gv.e_y).abs() < 0.1, "upper {}", gv.supinf_upper);
        assert!((gv.infsup_lower - gv.e_y).abs() < 0.1, "lower {}", gv.infsup_lower);
    }

    #[test]
    fn frozen_value_bounds_hold_for_a_modulus_source() {
        let g = grid(50, 200);
        let gen = GeneratorSpec::new(
            GenFun::Mao { a0: 0.0, a1: 0.5, a2: 0.0 },
            GenFun::zero(),
            None,
            0.0,
        )
        .unwrap();
        let inst = MRInstance::new(
            brownian(),
            gen,
            slack_losses(&g),
            g,
            &band(),
            SolvePolicy::Picard,
        )
        .unwrap();
        let sol = inst.solve().unwrap();
        let gg = GameGrid::uniform(&inst.grid, 0.0, 3).unwrap();
        let gv = optim_bounds(&sol, &inst, &gg).unwrap();
        assert!(gv.chain_ok, "chain: {} <= {} <= {} <= {}",
            gv.infsup_lower, gv.neg_e_neg_y, gv.e_y, gv.supinf_upper);
        assert!(inf_sup(&gv.upper).0 >= sup_inf(&gv.upper).0);
        assert!(inf_sup(&gv.lower).0 >= sup_inf(&gv.lower).0);
    }

    #[test]
    fn linear_game_flagship_saddle_sits_on_the_floor() {
        let (inst, sol) = flagship(60, 240);
        let gg = GameGrid::new(&inst.grid, 0.0, &[0.0, 0.5, 1.0], &[0.0, 0.5, 1.0]).unwrap();
        let rep = linear_game(&sol, &inst, &gg).unwrap();
        assert!((rep.supinf - 0.5).abs() < 1e-7, "sup inf {}", rep.supinf);
        assert!((rep.infsup - 0.5).abs() < 1e-7);
        assert!((rep.e_y - 0.5).abs() < 1e-7);
        // The floor binds from the start; the ceiling is never reached.
        assert_eq!(rep.q_star, 0.0);
        assert_eq!(rep.s_star, 1.0);
        assert!((rep.value_at_saddle - 0.5).abs() < 1e-7);
        assert!(rep.equalities_ok);
        assert!(rep.saddle_ok);
        // Stopping on the ceiling before the floor pays its threshold.
        assert!((rep.values[0][1] - 1.0).abs() < 1e-12);
        assert!((rep.values[1][1] - 0.25).abs() < 1e-9);
    }

    #[test]
    fn linear_game_with_slack_corridor_waits_out_the_horizon() {
        let (inst, sol) = slack_instance(60, 240, brownian());
        let gg = GameGrid::uniform(&inst.grid, 0.0, 3).unwrap();
        let rep = linear_game(&sol, &inst, &gg).unwrap();
        assert!((rep.supinf - 0.0).abs() < 1e-9);
        assert!((rep.infsup - 0.0).abs() < 1e-9);
        assert_eq!(rep.s_star, 1.0);
        assert_eq!(rep.q_star, 1.0);
        assert!(rep.equalities_ok);
        assert!(rep.saddle_ok);
    }

    #[test]
    fn interior_constant_payoff_is_the_value_everywhere() {
        let g = grid(40, 160);
        let losses = corridor(&g, TimeCurve::Const(1.0), TimeCurve::Const(-1.0));
        let inst = MRInstance::new(
            PayoffSpec::Affine { c0: 0.3, c1: 0.0 },
            GeneratorSpec::none(),
            losses,
            g,
            &band(),
            SolvePolicy::Constant,
        )
        .unwrap();
        let sol = inst.solve().unwrap();
        let gg = GameGrid::uniform(&inst.grid, 0.0, 3).unwrap();
        let rep = linear_game(&sol, &inst, &gg).unwrap();
        assert!((rep.supinf - 0.3).abs() < 1e-9);
        assert!((rep.infsup - 0.3).abs() < 1e-9);
        assert_eq!(rep.s_star, 1.0);
        assert_eq!(rep.q_star, 1.0);
        // Only the double-horizon entry reads the terminal data.
        let last = rep.values.len() - 1;
        assert!((rep.values[last][last] - 0.3).abs() < 1e-9);
        assert!(rep.saddle_ok && rep.equalities_ok);
    }

    #[test]
    fn linear_game_rejects_out_of_scope_instances() {
        let g = grid(20, 80);
        let gg = GameGrid::uniform(&g, 0.0, 2).unwrap();
        let (inst, sol) = flagship(20, 80);
        // Gradient-reading drift.
        let mut bad = inst.clone();
        bad.gen = GeneratorSpec::new(
            GenFun::Affine { a0: 0.0, a1: 0.0, a2: 0.5 },
            GenFun::zero(),
            None,
            1.0,
        )
        .unwrap();
        assert!(matches!(linear_game(&sol, &bad, &gg), Err(Error::Precondition(_))));
        // Nonvanishing volatility source.
        let mut bad = inst.clone();
        bad.gen = GeneratorSpec::new(
            GenFun::zero(),
            GenFun::Affine { a0: 0.2, a1: 0.0, a2: 0.0 },
            None,
            1.0,
        )
        .unwrap();
        assert!(matches!(linear_game(&sol, &bad, &gg), Err(Error::Precondition(_))));
        // Off-slope corridor.
        let mut bad = inst.clone();
        bad.losses = BoundaryPair::new(
            BoundaryCurve::new(
                BoundaryKind::AffineThreshold { slope: 2.0 },
                TimeCurve::Const(2.0),
                &bad.grid.times(),
            )
            .unwrap(),
            BoundaryCurve::new(
                BoundaryKind::AffineThreshold { slope: 2.0 },
                TimeCurve::Const(-2.0),
                &bad.grid.times(),
            )
            .unwrap(),
        )
        .unwrap();
        assert!(matches!(linear_game(&sol, &bad, &gg), Err(Error::Precondition(_))));
    }

    #[test]
    fn identical_corridors_compare_with_zero_margin() {
        let (inst, _) = flagship(40, 160);
        let rep = compare_loss(&inst, &inst.clone()).unwrap();
        assert_eq!(rep.margin, 0.0);
        assert!(rep.pass);
    }

    #[test]
    fn raised_floor_lifts_the_solution_by_the_raise() {
        let g = grid(60, 240);
        let raised = MRInstance::new(
            brownian(),
            GeneratorSpec::none(),
            corridor(
                &g,
                TimeCurve::Const(1.0),
                TimeCurve::Affine { c0: 0.6, c1: -0.6 },
            ),
            g.clone(),
            &band(),
            SolvePolicy::Constant,
        )
        .unwrap();
        let (base, _) = flagship(60, 240);
        let rep = compare_loss(&raised, &base).unwrap();
        assert!(rep.pass);
        assert!(rep.margin.abs() < 1e-9, "terminal rows coincide, margin {}", rep.margin);
        let sol1 = raised.solve().unwrap();
        let sol2 = base.solve().unwrap();
        for i in 0..=g.nt() {
            let want = 0.1 * (1.0 - g.t(i));
            for j in [0, g.nx() / 2, g.nx()] {
                assert!(
                    (sol1.y_at(i, j) - sol2.y_at(i, j) - want).abs() < 1e-8,
                    "gap at ({i}, {j})"
                );
            }
        }
    }

    #[test]
    fn slack_ceilings_do_not_move_the_solution() {
        let g = grid(40, 160);
        let make = |theta_l: f64| {
            MRInstance::new(
                brownian(),
                GeneratorSpec::none(),
                corridor(&g, TimeCurve::Const(theta_l), TimeCurve::Const(-10.0)),
                g.clone(),
                &band(),
                SolvePolicy::Constant,
            )
            .unwrap()
        };
        let rep = compare_loss(&make(20.0), &make(10.0)).unwrap();
        assert_eq!(rep.margin, 0.0);
        assert!(rep.pass);
    }

    #[test]
    fn comparison_guards_reject_bad_pairs() {
        let (base, _) = flagship(40, 160);
        let g = base.grid.clone();
        let raised = MRInstance::new(
            brownian(),
            GeneratorSpec::none(),
            corridor(
                &g,
                TimeCurve::Const(1.0),
                TimeCurve::Affine { c0: 0.6, c1: -0.6 },
            ),
            g.clone(),
            &band(),
            SolvePolicy::Constant,
        )
        .unwrap();
        // The flagship floor lies above the raised floor as a function.
        assert!(matches!(compare_loss(&base, &raised), Err(Error::Precondition(_))));
        let mut other = base.clone();
        other.terminal = PayoffSpec::Affine { c0: 0.1, c1: 1.0 };
        assert!(matches!(compare_loss(&base, &other), Err(Error::Mismatch(_))));
    }

    fn checked(o: &EnvelopeOutcome) -> (f64, f64, bool) {
        match o {
            EnvelopeOutcome::Checked { gap_min, gap_max, ordered } => {
                (*gap_min, *gap_max, *ordered)
            }
            EnvelopeOutcome::Skipped { reason } => panic!("unexpectedly skipped: {reason}"),
        }
    }

    #[test]
    fn sandwich_lifts_the_slack_ceiling_side_only() {
        let (inst, _) = flagship(60, 240);
        let rep = sandwich(&inst, 0.05).unwrap();
        assert!(rep.pass);
        let (up_min, up_max, up_ord) = checked(&rep.upper);
        // Extra floor mass shifts the envelope by exactly 0.05 (1 - t).
        assert!(up_ord);
        assert!(up_min.abs() < 1e-9, "gap vanishes at the horizon, got {up_min}");
        assert!((up_max - 0.05).abs() < 1e-9, "gap peaks at the start, got {up_max}");
        // The binding floor forces the lower envelope back onto the value.
        let (lo_min, lo_max, lo_ord) = checked(&rep.lower);
        assert!(lo_ord);
        assert!(lo_min.abs() < 1e-9 && lo_max.abs() < 1e-9);
    }

    #[test]
    fn sandwich_mirror_instance_pushes_only_downward() {
        let g = grid(60, 240);
        let inst = MRInstance::new(
            brownian(),
            GeneratorSpec::none(),
            corridor(
                &g,
                TimeCurve::Affine { c0: -0.5, c1: 0.5 },
                TimeCurve::Const(-10.0),
            ),
            g,
            &band(),
            SolvePolicy::Constant,
        )
        .unwrap();
        let rep = sandwich(&inst, 0.05).unwrap();
        assert!(rep.pass);
        let (up_min, up_max, _) = checked(&rep.upper);
        assert!(up_min.abs() < 1e-9 && up_max.abs() < 1e-9, "ceiling re-binds the envelope");
        let (lo_min, lo_max, lo_ord) = checked(&rep.lower);
        assert!(lo_ord);
        assert!(lo_min.abs() < 1e-9);
        assert!((lo_max - 0.05).abs() < 1e-9);
    }

    #[test]
    fn zero_perturbation_reproduces_the_reflected_solution() {
        let (inst, _) = flagship(40, 160);
        let rep = sandwich(&inst, 0.0).unwrap();
        assert!(rep.pass);
        let (up_min, up_max, _) = checked(&rep.upper);
        let (lo_min, lo_max, _) = checked(&rep.lower);
        assert!(up_min.abs() < 1e-12 && up_max.abs() < 1e-12);
        assert!(lo_min.abs() < 1e-12 && lo_max.abs() < 1e-12);
    }

    #[test]
    fn discounted_instance_keeps_the_sandwich_order() {
        let g = grid(60, 240);
        let gen = GeneratorSpec::new(
            GenFun::zero(),
            GenFun::zero(),
            Some(TimeCurve::Const(-1.0)),
            1.0,
        )
        .unwrap();
        let inst = MRInstance::new(
            brownian(),
            gen,
            flagship_losses(&g),
            g,
            &band(),
            SolvePolicy::LinearY,
        )
        .unwrap();
        let rep = sandwich(&inst, 0.05).unwrap();
        assert!(rep.pass);
        let (up_min, up_max, up_ord) = checked(&rep.upper);
        assert!(up_ord);
        assert!(up_min >= -1e-12);
        // Gap scale: lambda times a discount factor within [e^-1, e].
        assert!(up_max > 0.0125 && up_max < 0.2, "discounted gap scale, got {up_max}");
        let (_, _, lo_ord) = checked(&rep.lower);
        assert!(lo_ord);
    }

    #[test]
    fn sandwich_rejects_value_coupled_sources() {
        let g = grid(20, 80);
        let gen = GeneratorSpec::new(
            GenFun::Mao { a0: 0.0, a1: 0.5, a2: 0.0 },
            GenFun::zero(),
            None,
            0.0,
        )
        .unwrap();
        let inst = MRInstance::new(
            brownian(),
            gen,
            slack_losses(&g),
            g,
            &band(),
            SolvePolicy::Picard,
        )
        .unwrap();
        assert!(matches!(sandwich(&inst, 0.05), Err(Error::Catalog(_))));
    }

    #[test]
    fn csv_schemas_round_trip() {
        let (inst, sol) = flagship(20, 80);
        let gg = GameGrid::uniform(&inst.grid, 0.0, 3).unwrap();
        let gv = optim_bounds(&sol, &inst, &gg).unwrap();
        let mut buf = Vec::new();
        gv.dump_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "s,q,upper,lower");
        assert_eq!(lines.len(), 1 + 9 + 2);
        assert_eq!(lines[10], "supinf_upper,infsup_lower,E_Y,negE_negY,s_star,q_star");
        let summary: Vec<f64> =
            lines[11].split(',').map(|v| v.parse().unwrap()).collect();
        assert_eq!(summary.len(), 6);
        assert!((summary[0] - gv.supinf_upper).abs() < 1e-15);

        let rep = linear_game(&sol, &inst, &gg).unwrap();
        let mut buf = Vec::new();
        rep.dump_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "s,q,upper,lower");
        assert_eq!(lines.len(), 1 + 9 + 2);
    }
}
