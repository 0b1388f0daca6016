//! Discrete Skorokhod problems between two nonlinear boundaries.
//!
//! Given a free path `s_0, ..., s_n`, a ceiling-side function `l` and a
//! floor-side function `r` (both strongly increasing in `x`), the forward
//! problem finds the unique path `x_i = s_i + k_i` with per-node pushes
//! `k_i = kr_i - kl_i` such that
//!
//! * `l(i, x_i) <= 0 <= r(i, x_i)` at every node (admissibility),
//! * `kr` and `kl` are nondecreasing from 0 (minimality of effort),
//! * `kr` grows only at nodes where `r(i, x_i) = 0`, and `kl` only where
//!   `l(i, x_i) = 0` (flatness).
//!
//! Each node needs at most one push: monotonicity in `x` turns the
//! admissible set into an interval `[root_r, root_l]`, and the update is a
//! clamp of the carried value onto it. Push sizes are found by bisection
//! with an exact bracket from the slope bounds; the kept endpoint of the
//! final bracket lies on the admissible side, so constraints hold without
//! tolerance while the flatness defect stays below [`SkorokhodParams::tol`]
//! per unit of push.
//!
//! The backward problem anchors the path at its final value `a` and lets a
//! push at node `i` move every earlier node instead: `x_i = a + (s_n - s_i)
//! + (k_n - k_i)`. Reversing time maps it onto the forward problem with
//! free path `s~_v = (a + s_n) - s_{n-v}` and reversed boundaries, which is
//! how [`solve_backward`] computes it.

use crate::boundary::{Reversed, TimeBoundary};
use crate::csvio;
use crate::error::{ensure_finite, Error, Result};
use std::io::Write;

/// Tolerances of the push root search.
#[derive(Debug, Clone, Copy)]
pub struct SkorokhodParams {
    /// Value tolerance: at a push node the boundary value lands in
    /// `[0, tol]` on the admissible side.
    pub tol: f64,
}

impl Default for SkorokhodParams {
    fn default() -> Self {
        Self { tol: 1e-12 }
    }
}

impl SkorokhodParams {
    fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(Error::Config(format!(
                "push tolerance must be positive, got {}",
                self.tol
            )));
        }
        Ok(())
    }
}

/// Solution of a discrete Skorokhod problem.
///
/// All vectors have one entry per node. `dkr`/`dkl` attribute each push to
/// the node whose boundary value they pin to 0; the cumulatives satisfy
/// `kr[i] - kr[i-1] = dkr[i]` for forward solutions and
/// `kr[i] - kr[i-1] = dkr[i-1]` for backward ones (a backward push at node
/// `i` lifts the nodes before it, so it enters the running sum one step
/// later), and likewise for `kl`.
#[derive(Debug, Clone, PartialEq)]
pub struct SkorokhodSolution {
    /// Constrained path.
    pub x: Vec<f64>,
    /// Net push `kr - kl`, accumulated in the same order as `kr`/`kl`.
    pub k: Vec<f64>,
    /// Cumulative floor-side (upward) pushes.
    pub kr: Vec<f64>,
    /// Cumulative ceiling-side (downward) pushes.
    pub kl: Vec<f64>,
    /// Per-node upward push sizes.
    pub dkr: Vec<f64>,
    /// Per-node downward push sizes.
    pub dkl: Vec<f64>,
}

impl SkorokhodSolution {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// Total variation of the net push process.
    pub fn total_variation(&self) -> f64 {
        self.kr.last().copied().unwrap_or(0.0) + self.kl.last().copied().unwrap_or(0.0)
    }

    /// Dump as CSV with header `t,x,k,kr,kl`.
    pub fn dump_csv<W: Write>(&self, w: &mut W, times: &[f64]) -> Result<()> {
        if times.len() != self.x.len() {
            return Err(Error::Mismatch(format!(
                "{} times for {} nodes",
                times.len(),
                self.x.len()
            )));
        }
        writeln!(w, "t,x,k,kr,kl")?;
        for i in 0..self.x.len() {
            writeln!(
                w,
                "{}",
                csvio::line(&[times[i], self.x[i], self.k[i], self.kr[i], self.kl[i]])
            )?;
        }
        Ok(())
    }
}

fn validate_inputs<BL, BR>(s: &[f64], l: &BL, r: &BR) -> Result<()>
where
    BL: TimeBoundary + ?Sized,
    BR: TimeBoundary + ?Sized,
{
    if s.is_empty() {
        return Err(Error::Config("free path must have at least one node".into()));
    }
    for (i, v) in s.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::Domain(format!("free path value at node {i} is not finite")));
        }
    }
    if l.len() != s.len() || r.len() != s.len() {
        return Err(Error::Mismatch(format!(
            "boundary rows ({}, {}) do not match the {} path nodes",
            l.len(),
            r.len(),
            s.len()
        )));
    }
    for (name, c, ch) in [("ceiling", l.c_lo(), l.c_hi()), ("floor", r.c_lo(), r.c_hi())] {
        if !(c > 0.0 && c.is_finite() && ch >= c && ch.is_finite()) {
            return Err(Error::Config(format!(
                "{name} boundary needs slope bounds 0 < c_lo <= c_hi, got [{c}, {ch}]"
            )));
        }
    }
    Ok(())
}

/// Upward push: smallest `d >= 0` with `b(i, x_hat + d) >= 0`, given
/// `v = b(i, x_hat) < 0`. The slope squeeze brackets the root in
/// `[-v / c_hi, -v / c_lo]`; bisection returns the admissible end.
fn push_up<B: TimeBoundary + ?Sized>(b: &B, i: usize, x_hat: f64, v: f64, xtol: f64) -> Result<f64> {
    let pad = 1.0 + 1e-12;
    // The absolute xtol pad keeps the bracket valid when the violation is
    // at rounding scale and the relative pad alone would vanish in the
    // boundary evaluation's own roundoff.
    let mut lo = -v / b.c_hi() / pad;
    let mut hi = -v / b.c_lo() * pad + xtol;
    if b.eval(i, x_hat + hi) < 0.0 {
        return Err(Error::Catalog(format!(
            "declared slope bounds do not bracket the floor root at node {i}"
        )));
    }
    while hi - lo > xtol {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if b.eval(i, x_hat + mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi)
}

/// Downward push: smallest `d >= 0` with `b(i, x_hat - d) <= 0`, given
/// `v = b(i, x_hat) > 0`.
fn push_down<B: TimeBoundary + ?Sized>(b: &B, i: usize, x_hat: f64, v: f64, xtol: f64) -> Result<f64> {
    let pad = 1.0 + 1e-12;
    let mut lo = v / b.c_hi() / pad;
    let mut hi = v / b.c_lo() * pad + xtol;
    if b.eval(i, x_hat - hi) > 0.0 {
        return Err(Error::Catalog(format!(
            "declared slope bounds do not bracket the ceiling root at node {i}"
        )));
    }
    while hi - lo > xtol {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if b.eval(i, x_hat - mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi)
}

/// Solve the forward problem. The first node may itself be pushed when the
/// free path starts outside the corridor.
pub fn solve_forward<BL, BR>(
    s: &[f64],
    l: &BL,
    r: &BR,
    params: &SkorokhodParams,
) -> Result<SkorokhodSolution>
where
    BL: TimeBoundary + ?Sized,
    BR: TimeBoundary + ?Sized,
{
    params.validate()?;
    validate_inputs(s, l, r)?;
    let n = s.len();
    let xtol_r = params.tol / r.c_hi();
    let xtol_l = params.tol / l.c_hi();
    let mut x = Vec::with_capacity(n);
    let mut dkr = vec![0.0; n];
    let mut dkl = vec![0.0; n];
    let mut k_prev = 0.0;
    for i in 0..n {
        let x_hat = s[i] + k_prev;
        let rv = r.eval(i, x_hat);
        let xi = if rv < 0.0 {
            let d = push_up(r, i, x_hat, rv, xtol_r)?;
            let xi = x_hat + d;
            if l.eval(i, xi) > 0.0 {
                return Err(Error::Precondition(format!(
                    "boundaries are not separated: the corridor is empty at node {i}"
                )));
            }
            dkr[i] = d;
            k_prev += d;
            xi
        } else {
            let lv = l.eval(i, x_hat);
            if lv > 0.0 {
                let d = push_down(l, i, x_hat, lv, xtol_l)?;
                let xi = x_hat - d;
                if r.eval(i, xi) < 0.0 {
                    return Err(Error::Precondition(format!(
                        "boundaries are not separated: the corridor is empty at node {i}"
                    )));
                }
                dkl[i] = d;
                k_prev -= d;
                xi
            } else {
                x_hat
            }
        };
        x.push(xi);
    }
    let mut kr = vec![0.0; n];
    let mut kl = vec![0.0; n];
    let mut k = vec![0.0; n];
    for i in 0..n {
        let (pr, pl) = if i == 0 { (0.0, 0.0) } else { (kr[i - 1], kl[i - 1]) };
        kr[i] = pr + dkr[i];
        kl[i] = pl + dkl[i];
        k[i] = kr[i] - kl[i];
    }
    Ok(SkorokhodSolution { x, k, kr, kl, dkr, dkl })
}

/// Solve the backward problem anchored at the final value `a`.
///
/// The data must be admissible at the final node, since no push can move
/// it. On success `x[n] == a` exactly and `x[i] = a + (s[n] - s[i]) +
/// (k[n] - k[i])` up to the push tolerance.
pub fn solve_backward<BL, BR>(
    a: f64,
    s: &[f64],
    l: &BL,
    r: &BR,
    params: &SkorokhodParams,
) -> Result<SkorokhodSolution>
where
    BL: TimeBoundary + ?Sized,
    BR: TimeBoundary + ?Sized,
{
    ensure_finite(a, "final anchor")?;
    params.validate()?;
    validate_inputs(s, l, r)?;
    let n = s.len() - 1;
    let rv = r.eval(n, a);
    let lv = l.eval(n, a);
    if rv < 0.0 || lv > 0.0 {
        return Err(Error::Precondition(format!(
            "final anchor {a} is not admissible: floor value {rv}, ceiling value {lv}"
        )));
    }
    let shift = a + s[n];
    let s_rev: Vec<f64> = (0..=n).map(|v| shift - s[n - v]).collect();
    let fwd = solve_forward(&s_rev, &Reversed(l), &Reversed(r), params)?;
    debug_assert_eq!(fwd.dkr[0], 0.0);
    debug_assert_eq!(fwd.dkl[0], 0.0);
    let mut x = vec![0.0; n + 1];
    let mut dkr = vec![0.0; n + 1];
    let mut dkl = vec![0.0; n + 1];
    for i in 0..=n {
        x[i] = fwd.x[n - i];
        dkr[i] = fwd.dkr[n - i];
        dkl[i] = fwd.dkl[n - i];
    }
    let mut kr = vec![0.0; n + 1];
    let mut kl = vec![0.0; n + 1];
    let mut k = vec![0.0; n + 1];
    for i in 1..=n {
        kr[i] = kr[i - 1] + dkr[i - 1];
        kl[i] = kl[i - 1] + dkl[i - 1];
        k[i] = kr[i] - kl[i];
    }
    Ok(SkorokhodSolution { x, k, kr, kl, dkr, dkl })
}

/// Which reflecting boundary a one-sided problem keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    /// Only the ceiling constrains; the floor is treated as `-inf`.
    Ceiling,
    /// Only the floor constrains; the ceiling is treated as `+inf`.
    Floor,
}

/// Stand-in for an absent boundary: unit slope with its root placed far
/// outside the reachable range, so it can never trigger a push.
struct Unbounded {
    n: usize,
    root: f64,
}

impl TimeBoundary for Unbounded {
    fn len(&self) -> usize {
        self.n
    }

    fn eval(&self, _i: usize, x: f64) -> f64 {
        x - self.root
    }

    fn c_lo(&self) -> f64 {
        1.0
    }

    fn c_hi(&self) -> f64 {
        1.0
    }

    fn sup_abs_at_zero(&self) -> f64 {
        self.root.abs()
    }
}

/// Solve the backward problem against a single boundary.
///
/// The absent side is replaced by a stand-in whose root lies an order of
/// magnitude beyond every value the solution can reach (anchor plus path
/// oscillation plus the kept boundary's own root range), so only the kept
/// side can push: exactly one of `kr`/`kl` may be nonzero.
pub fn solve_one_sided<B: TimeBoundary + ?Sized>(
    a: f64,
    s: &[f64],
    b: &B,
    side: Side,
    params: &SkorokhodParams,
) -> Result<SkorokhodSolution> {
    if s.is_empty() {
        return Err(Error::Config("free path must have at least one node".into()));
    }
    let osc = s.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let reach = 10.0 * (1.0 + a.abs() + 2.0 * osc + b.sup_abs_at_zero() / b.c_lo());
    match side {
        Side::Ceiling => {
            let floor = Unbounded { n: s.len(), root: -reach };
            solve_backward(a, s, b, &floor, params)
        }
        Side::Floor => {
            let ceiling = Unbounded { n: s.len(), root: reach };
            solve_backward(a, s, &ceiling, b, params)
        }
    }
}

/// `sup_i |a_i - b_i|` over paired nodes.
pub fn sup_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "paths of different lengths");
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Observed distance of two solution paths next to its a priori bound.
#[derive(Debug, Clone, Copy)]
pub struct StabilityCheck {
    pub lhs: f64,
    pub rhs: f64,
}

impl StabilityCheck {
    pub fn holds(&self) -> bool {
        self.lhs <= self.rhs
    }
}

/// Stability of backward solutions in their data: the path distance is
/// controlled by the anchor gap, the free-path distance and the boundary
/// distance, with constants depending only on the slope bounds.
///
/// `sup_boundary_diff` is `sup_{t, x}` of the larger of the two boundary
/// gaps `|l1 - l2|`, `|r1 - r2|`.
pub fn stability_bound(
    x1: &[f64],
    x2: &[f64],
    a_pair: (f64, f64),
    s1: &[f64],
    s2: &[f64],
    c_lo: f64,
    c_hi: f64,
    sup_boundary_diff: f64,
) -> StabilityCheck {
    let lhs = sup_abs_diff(x1, x2);
    let ratio = c_hi / c_lo;
    let rhs = 2.0 * ratio * (a_pair.0 - a_pair.1).abs()
        + 4.0 * ratio * sup_abs_diff(s1, s2)
        + 2.0 / c_lo * sup_boundary_diff;
    StabilityCheck { lhs, rhs }
}

/// Smallest slack of the a priori size bound for a backward solution:
/// `min_i (rhs_i - |x_i|)` where `rhs_i` grows with the free-path
/// magnitude `|a + s_n - s_i|` and the boundary values at 0. Nonnegative
/// when the bound holds.
pub fn growth_margin<BL, BR>(
    sol: &SkorokhodSolution,
    a: f64,
    s: &[f64],
    l: &BL,
    r: &BR,
    tol: f64,
) -> f64
where
    BL: TimeBoundary + ?Sized,
    BR: TimeBoundary + ?Sized,
{
    let n = s.len() - 1;
    let c = l.c_lo().min(r.c_lo());
    let ch = l.c_hi().max(r.c_hi());
    let zero_term = (ch.max(1.0) / c) * (l.sup_abs_at_zero() + r.sup_abs_at_zero());
    let mut margin = f64::INFINITY;
    for i in 0..=n {
        let free = (a + s[n] - s[i]).abs();
        let rhs = 2.0 * (ch / c) * free + zero_term + tol;
        margin = margin.min(rhs - sol.x[i].abs());
    }
    margin
}

/// Flatness defects: `(sum_i l(i, x_i) dkl_i, sum_i r(i, x_i) dkr_i)`.
/// Both vanish up to `tol` per unit of total push.
pub fn flatness_sums<BL, BR>(sol: &SkorokhodSolution, l: &BL, r: &BR) -> (f64, f64)
where
    BL: TimeBoundary + ?Sized,
    BR: TimeBoundary + ?Sized,
{
    let mut sum_l = 0.0;
    let mut sum_r = 0.0;
    for i in 0..sol.x.len() {
        if sol.dkl[i] != 0.0 {
            sum_l += l.eval(i, sol.x[i]) * sol.dkl[i];
        }
        if sol.dkr[i] != 0.0 {
            sum_r += r.eval(i, sol.x[i]) * sol.dkr[i];
        }
    }
    (sum_l, sum_r)
}

/// Worst admissibility slack: `min_i min(r(i, x_i), -l(i, x_i))`.
/// Nonnegative iff the path is admissible at every node.
pub fn admissibility_margin<BL, BR>(sol: &SkorokhodSolution, l: &BL, r: &BR) -> f64
where
    BL: TimeBoundary + ?Sized,
    BR: TimeBoundary + ?Sized,
{
    (0..sol.x.len())
        .map(|i| r.eval(i, sol.x[i]).min(-l.eval(i, sol.x[i])))
        .fold(f64::INFINITY, f64::min)
}
