//! Deterministic constraint functions `b(t, x)`, strongly increasing in `x`.
//!
//! A boundary function squeezes `x` through `c * d <= b(t, x + d) - b(t, x)
//! <= C * d` with `0 < c <= C`, so every level set is a single root and the
//! admissible corridor `{x : l(t, x) <= 0 <= r(t, x)}` is an interval.
//! The solvers consume boundaries through [`TimeBoundary`], which also
//! covers curves tabulated from lattice expectations and time-reversed
//! views of either.

use crate::curve::TimeCurve;
use crate::error::{ensure_finite, Error, Result};

/// Shape of the `x`-dependence of a catalog boundary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BoundaryKind {
    /// `slope * x - theta(t)`, slope > 0.
    AffineThreshold { slope: f64 },
    /// `x + gamma * sin(x) - theta(t)`, |gamma| < 1.
    SinPerturbed { gamma: f64 },
}

impl BoundaryKind {
    fn validate(&self) -> Result<()> {
        match *self {
            BoundaryKind::AffineThreshold { slope } => {
                ensure_finite(slope, "boundary slope")?;
                if slope <= 0.0 {
                    return Err(Error::Catalog(format!(
                        "boundary slope must be positive, got {slope}"
                    )));
                }
            }
            BoundaryKind::SinPerturbed { gamma } => {
                ensure_finite(gamma, "boundary gamma")?;
                if gamma.abs() >= 1.0 {
                    return Err(Error::Catalog(format!(
                        "sin perturbation needs |gamma| < 1 to stay increasing, got {gamma}"
                    )));
                }
            }
        }
        Ok(())
    }

    fn base(&self, x: f64) -> f64 {
        match *self {
            BoundaryKind::AffineThreshold { slope } => slope * x,
            BoundaryKind::SinPerturbed { gamma } => x + gamma * x.sin(),
        }
    }

    fn c_lo(&self) -> f64 {
        match *self {
            BoundaryKind::AffineThreshold { slope } => slope,
            BoundaryKind::SinPerturbed { gamma } => 1.0 - gamma.abs(),
        }
    }

    fn c_hi(&self) -> f64 {
        match *self {
            BoundaryKind::AffineThreshold { slope } => slope,
            BoundaryKind::SinPerturbed { gamma } => 1.0 + gamma.abs(),
        }
    }

    /// Linear part plus the range of what is left over (time residual
    /// excluded), used by the separation check.
    fn residual_range(&self) -> (f64, f64) {
        match *self {
            BoundaryKind::AffineThreshold { .. } => (0.0, 0.0),
            BoundaryKind::SinPerturbed { gamma } => (-gamma.abs(), gamma.abs()),
        }
    }

    fn linear_slope(&self) -> f64 {
        match *self {
            BoundaryKind::AffineThreshold { slope } => slope,
            BoundaryKind::SinPerturbed { .. } => 1.0,
        }
    }
}

/// Boundaries seen by the reflection solvers: one value per grid time.
/// `Sync` is a supertrait so tabulation can fan rows out across threads.
pub trait TimeBoundary: Sync {
    /// Number of time rows (`nt + 1` on a full lattice).
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    fn eval(&self, i: usize, x: f64) -> f64;
    /// Lower bound on the increments: `eval(i, x + d) - eval(i, x) >= c_lo * d`.
    fn c_lo(&self) -> f64;
    /// Upper bound on the increments.
    fn c_hi(&self) -> f64;
    /// `sup_i |eval(i, 0)|`, the constant term of the growth bound.
    fn sup_abs_at_zero(&self) -> f64;
}

/// Catalog boundary: a [`BoundaryKind`] with a time-dependent threshold
/// sampled on the grid times.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryCurve {
    kind: BoundaryKind,
    thetas: Vec<f64>,
}

impl BoundaryCurve {
    pub fn new(kind: BoundaryKind, theta: TimeCurve, times: &[f64]) -> Result<Self> {
        kind.validate()?;
        theta.validate()?;
        if times.is_empty() {
            return Err(Error::Config("boundary needs at least one grid time".into()));
        }
        let thetas = times.iter().map(|&t| theta.eval(t)).collect();
        Ok(Self { kind, thetas })
    }

    pub fn kind(&self) -> BoundaryKind {
        self.kind
    }

    /// The same boundary with every threshold moved by `d`: boundary
    /// values drop by `d` uniformly, so the corridor side shifts with it.
    pub fn with_theta_shift(&self, d: f64) -> Result<Self> {
        if !d.is_finite() {
            return Err(Error::Config(format!("threshold shift must be finite, got {d}")));
        }
        Ok(Self { kind: self.kind, thetas: self.thetas.iter().map(|t| t + d).collect() })
    }

    fn theta_min(&self) -> f64 {
        self.thetas.iter().copied().fold(f64::INFINITY, f64::min)
    }

    fn theta_max(&self) -> f64 {
        self.thetas.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

impl TimeBoundary for BoundaryCurve {
    fn len(&self) -> usize {
        self.thetas.len()
    }

    fn eval(&self, i: usize, x: f64) -> f64 {
        self.kind.base(x) - self.thetas[i]
    }

    fn c_lo(&self) -> f64 {
        self.kind.c_lo()
    }

    fn c_hi(&self) -> f64 {
        self.kind.c_hi()
    }

    fn sup_abs_at_zero(&self) -> f64 {
        self.theta_min().abs().max(self.theta_max().abs())
    }
}

/// Require a uniform corridor `inf_{t, x} (r(t, x) - l(t, x)) > 0` between a
/// ceiling-side boundary `l` and a floor-side boundary `r`.
///
/// The difference of two catalog boundaries is `(s_r - s_l) x` plus bounded
/// terms; unequal linear slopes make the infimum over the real line minus
/// infinity, so such pairs are rejected outright rather than probed.
/// Returns the guaranteed gap.
pub fn check_separation(l: &BoundaryCurve, r: &BoundaryCurve) -> Result<f64> {
    let sl = l.kind.linear_slope();
    let sr = r.kind.linear_slope();
    if (sl - sr).abs() > 1e-12 * sl.abs().max(sr.abs()).max(1.0) {
        return Err(Error::Catalog(format!(
            "boundary pair has unequal linear slopes ({sl} vs {sr}); \
             their gap is unbounded below"
        )));
    }
    if l.len() != r.len() {
        return Err(Error::Mismatch(format!(
            "boundary pair sampled on different time grids ({} vs {})",
            l.len(),
            r.len()
        )));
    }
    let (r_res_lo, _) = r.kind.residual_range();
    let (_, l_res_hi) = l.kind.residual_range();
    let mut gap = f64::INFINITY;
    for i in 0..l.len() {
        let diff = (r_res_lo - r.thetas[i]) - (l_res_hi - l.thetas[i]);
        gap = gap.min(diff);
    }
    if gap <= 0.0 {
        return Err(Error::Catalog(format!(
            "boundary pair is not separated: guaranteed corridor gap {gap} <= 0"
        )));
    }
    Ok(gap)
}

/// A ceiling/floor pair with a verified corridor.
#[derive(Debug, Clone)]
pub struct BoundaryPair {
    pub l: BoundaryCurve,
    pub r: BoundaryCurve,
    gap: f64,
}

impl BoundaryPair {
    pub fn new(l: BoundaryCurve, r: BoundaryCurve) -> Result<Self> {
        let gap = check_separation(&l, &r)?;
        Ok(Self { l, r, gap })
    }

    pub fn gap(&self) -> f64 {
        self.gap
    }
}

/// Time-reversed view of a boundary: row `i` reads the original row
/// `len - 1 - i`.
pub struct Reversed<'a, B: TimeBoundary + ?Sized>(pub &'a B);

impl<B: TimeBoundary + ?Sized> TimeBoundary for Reversed<'_, B> {
    fn len(&self) -> usize {
        self.0.len()
    }

    fn eval(&self, i: usize, x: f64) -> f64 {
        self.0.eval(self.0.len() - 1 - i, x)
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

/// Boundary tabulated from lattice expectations: per time row, values on a
/// shared increasing offset grid, interpolated piecewise linearly in `x` and
/// extended beyond the sampled range with the clamped edge secant slope.
#[derive(Debug, Clone)]
pub struct TabulatedBoundary {
    offsets: Vec<f64>,
    vals: Vec<Vec<f64>>,
    c_lo: f64,
    c_hi: f64,
}

impl TabulatedBoundary {
    /// `c_lo`/`c_hi` are inherited from the loss whose expectations were
    /// tabulated; expectation preserves both bounds. Secants are checked
    /// against them with slack for scheme noise.
    pub fn new(offsets: Vec<f64>, vals: Vec<Vec<f64>>, c_lo: f64, c_hi: f64) -> Result<Self> {
        if offsets.len() < 2 {
            return Err(Error::Config(format!(
                "tabulated boundary needs at least 2 offsets, got {}",
                offsets.len()
            )));
        }
        if !(c_lo.is_finite() && c_hi.is_finite() && 0.0 < c_lo && c_lo <= c_hi) {
            return Err(Error::Config(format!(
                "tabulated boundary needs 0 < c_lo <= c_hi, got [{c_lo}, {c_hi}]"
            )));
        }
        for w in offsets.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::Config(
                    "tabulated boundary offsets must be strictly increasing".into(),
                ));
            }
        }
        if vals.is_empty() {
            return Err(Error::Config("tabulated boundary needs at least one row".into()));
        }
        let slack = 1e-6 * c_hi.max(1.0);
        for (i, row) in vals.iter().enumerate() {
            if row.len() != offsets.len() {
                return Err(Error::Mismatch(format!(
                    "tabulated row {i} has {} values for {} offsets",
                    row.len(),
                    offsets.len()
                )));
            }
            for (k, w) in offsets.windows(2).enumerate() {
                ensure_finite(row[k], "tabulated boundary value")?;
                let secant = (row[k + 1] - row[k]) / (w[1] - w[0]);
                if secant < c_lo - slack || secant > c_hi + slack {
                    return Err(Error::Domain(format!(
                        "tabulated row {i} secant {secant} at offset {} leaves [{c_lo}, {c_hi}]",
                        w[0]
                    )));
                }
            }
            ensure_finite(*row.last().unwrap(), "tabulated boundary value")?;
        }
        Ok(Self { offsets, vals, c_lo, c_hi })
    }

    pub fn offsets(&self) -> &[f64] {
        &self.offsets
    }

    fn edge_slope(&self, row: &[f64], first: bool) -> f64 {
        let n = self.offsets.len();
        let (a, b) = if first { (0, 1) } else { (n - 2, n - 1) };
        let secant = (row[b] - row[a]) / (self.offsets[b] - self.offsets[a]);
        secant.clamp(self.c_lo, self.c_hi)
    }
}

impl TimeBoundary for TabulatedBoundary {
    fn len(&self) -> usize {
        self.vals.len()
    }

    fn eval(&self, i: usize, x: f64) -> f64 {
        let row = &self.vals[i];
        let xs = &self.offsets;
        let n = xs.len();
        if x <= xs[0] {
            return row[0] + self.edge_slope(row, true) * (x - xs[0]);
        }
        if x >= xs[n - 1] {
            return row[n - 1] + self.edge_slope(row, false) * (x - xs[n - 1]);
        }
        let k = match xs.binary_search_by(|v| v.partial_cmp(&x).unwrap()) {
            Ok(k) => return row[k],
            Err(k) => k - 1,
        };
        let w = (x - xs[k]) / (xs[k + 1] - xs[k]);
        row[k] + w * (row[k + 1] - row[k])
    }

    fn c_lo(&self) -> f64 {
        self.c_lo
    }

    fn c_hi(&self) -> f64 {
        self.c_hi
    }

    fn sup_abs_at_zero(&self) -> f64 {
        (0..self.len()).map(|i| self.eval(i, 0.0).abs()).fold(0.0, f64::max)
    }
}

/// Root of `b(i, x) = target` by bisection.
///
/// The squeeze `c_lo * d <= b(i, x + d) - b(i, x) <= c_hi * d` makes the
/// bracket `[(target - b(i, 0)) / c_hi, (target - b(i, 0)) / c_lo]` exact;
/// bisection then narrows it to `xtol`, so the returned point carries a
/// value error of at most `c_hi * xtol`.
pub fn boundary_root<B: TimeBoundary + ?Sized>(b: &B, i: usize, target: f64, xtol: f64) -> Result<f64> {
    ensure_finite(target, "root target")?;
    if !(xtol > 0.0 && xtol.is_finite()) {
        return Err(Error::Config(format!("root tolerance must be positive, got {xtol}")));
    }
    let v0 = b.eval(i, 0.0);
    let d = target - v0;
    if d == 0.0 {
        return Ok(0.0);
    }
    let pad = 1.0 + 1e-12;
    let (mut lo, mut hi) = if d > 0.0 {
        (d / b.c_hi() / pad, d / b.c_lo() * pad)
    } else {
        (d / b.c_lo() * pad, d / b.c_hi() / pad)
    };
    debug_assert!(b.eval(i, lo) <= target + 1e-9 && b.eval(i, hi) >= target - 1e-9);
    while hi - lo > xtol {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if b.eval(i, mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn times() -> Vec<f64> {
        (0..=10).map(|i| i as f64 / 10.0).collect()
    }

    fn affine(slope: f64, c0: f64, c1: f64) -> BoundaryCurve {
        BoundaryCurve::new(
            BoundaryKind::AffineThreshold { slope },
            TimeCurve::Affine { c0, c1 },
            &times(),
        )
        .unwrap()
    }

    #[test]
    fn catalog_validation() {
        assert!(BoundaryCurve::new(
            BoundaryKind::AffineThreshold { slope: 0.0 },
            TimeCurve::Const(0.0),
            &times()
        )
        .is_err());
        assert!(BoundaryCurve::new(
            BoundaryKind::SinPerturbed { gamma: 1.0 },
            TimeCurve::Const(0.0),
            &times()
        )
        .is_err());
        let b = BoundaryCurve::new(
            BoundaryKind::SinPerturbed { gamma: -0.5 },
            TimeCurve::Const(0.0),
            &times(),
        )
        .unwrap();
        assert_eq!(b.c_lo(), 0.5);
        assert_eq!(b.c_hi(), 1.5);
    }

    #[test]
    fn eval_and_threshold_sampling() {
        let b = affine(2.0, 1.0, -0.5);
        // Row 4 sits at t = 0.4, theta = 1 - 0.2.
        assert!((b.eval(4, 3.0) - (6.0 - 0.8)).abs() < 1e-15);
        assert!((b.sup_abs_at_zero() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn separation_accepts_nested_thresholds() {
        // Ceiling x - 1, floor x - 0.5 (1 - t): gap 0.5 at t = 0.
        let l = affine(1.0, 1.0, 0.0);
        let r = affine(1.0, 0.5, -0.5);
        let pair = BoundaryPair::new(l, r).unwrap();
        assert!((pair.gap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn separation_rejects_bad_pairs() {
        let l = affine(1.0, 1.0, 0.0);
        let steep = affine(2.0, -1.0, 0.0);
        assert!(matches!(check_separation(&l, &steep), Err(Error::Catalog(_))));
        // Same slope but corridor collapses: floor above the ceiling.
        let high_floor = affine(1.0, 2.0, 0.0);
        assert!(check_separation(&l, &high_floor).is_err());
    }

    #[test]
    fn reversal_flips_rows() {
        let b = affine(1.0, 0.0, 1.0);
        let rev = Reversed(&b);
        for i in 0..b.len() {
            assert_eq!(rev.eval(i, 0.3), b.eval(b.len() - 1 - i, 0.3));
        }
        assert_eq!(rev.c_lo(), b.c_lo());
    }

    #[test]
    fn tabulated_reproduces_affine_exactly() {
        let b = affine(1.5, 0.7, 0.2);
        let offsets = vec![-1.0, 1.0];
        let vals: Vec<Vec<f64>> = (0..b.len())
            .map(|i| offsets.iter().map(|&x| b.eval(i, x)).collect())
            .collect();
        let tab = TabulatedBoundary::new(offsets, vals, 1.5, 1.5).unwrap();
        for i in 0..b.len() {
            for x in [-5.0, -1.0, -0.3, 0.0, 0.9, 1.0, 4.0] {
                assert!((tab.eval(i, x) - b.eval(i, x)).abs() < 1e-12, "i={i} x={x}");
            }
        }
    }

    #[test]
    fn tabulated_interpolation_respects_envelope() {
        let b = BoundaryCurve::new(
            BoundaryKind::SinPerturbed { gamma: 0.5 },
            TimeCurve::Const(0.3),
            &times(),
        )
        .unwrap();
        let offsets: Vec<f64> = (-20..=20).map(|k| k as f64 * 0.25).collect();
        let vals: Vec<Vec<f64>> = (0..b.len())
            .map(|i| offsets.iter().map(|&x| b.eval(i, x)).collect())
            .collect();
        let tab = TabulatedBoundary::new(offsets, vals, b.c_lo(), b.c_hi()).unwrap();
        for i in [0, 5, 10] {
            let mut prev_x = -5.0;
            let mut prev_v = tab.eval(i, prev_x);
            for k in 1..=100 {
                let x = -5.0 + 0.1 * k as f64;
                let v = tab.eval(i, x);
                let slope = (v - prev_v) / (x - prev_x);
                assert!(
                    slope >= tab.c_lo() - 1e-9 && slope <= tab.c_hi() + 1e-9,
                    "slope {slope} at x={x}"
                );
                prev_x = x;
                prev_v = v;
            }
        }
    }

    #[test]
    fn tabulated_rejects_flat_rows() {
        let offsets = vec![-1.0, 0.0, 1.0];
        let vals = vec![vec![0.0, 0.0, 1.0]];
        assert!(TabulatedBoundary::new(offsets, vals, 1.0, 1.0).is_err());
    }

    #[test]
    fn root_finding_hits_targets() {
        let b = affine(2.0, 1.0, 0.0);
        // 2 x - 1 = 0 at x = 0.5.
        let x = boundary_root(&b, 0, 0.0, 1e-13).unwrap();
        assert!((x - 0.5).abs() < 1e-12);

        let s = BoundaryCurve::new(
            BoundaryKind::SinPerturbed { gamma: 0.7 },
            TimeCurve::Const(-0.4),
            &times(),
        )
        .unwrap();
        for target in [-2.0, -0.1, 0.0, 0.3, 5.0] {
            let x = boundary_root(&s, 3, target, 1e-12).unwrap();
            assert!(
                (s.eval(3, x) - target).abs() <= s.c_hi() * 1e-11,
                "target {target}: residual {}",
                s.eval(3, x) - target
            );
        }
    }
}
