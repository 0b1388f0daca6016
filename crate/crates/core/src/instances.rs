//! Named solver instances shared by the verification suites, the
//! acceptance tests and the command line front end.
//!
//! Every entry lives on the unit horizon with the squared-volatility band
//! `[0.25, 1.0]` and is parameterized by lattice resolution only, so the
//! same name refers to the same problem at any refinement.

use crate::boundary::{BoundaryCurve, BoundaryKind, BoundaryPair};
use crate::bsde::{GenFun, GeneratorSpec};
use crate::curve::TimeCurve;
use crate::error::{Error, Result};
use crate::grid::{Grid, VolBounds};
use crate::meanreflect::{MRInstance, SolvePolicy};
use crate::payoff::PayoffSpec;

/// Squared-volatility band shared by the whole catalog.
pub fn default_band() -> VolBounds {
    VolBounds::new(0.25, 1.0).expect("static band")
}

/// Unit-horizon lattice on the default band.
pub fn default_grid(nt: usize, nx: usize) -> Result<Grid> {
    Grid::auto(1.0, nt, nx, &default_band())
}

fn times(grid: &Grid) -> Vec<f64> {
    (0..=grid.nt()).map(|i| grid.t(i)).collect()
}

fn affine_loss(grid: &Grid, slope: f64, theta: TimeCurve) -> Result<BoundaryCurve> {
    BoundaryCurve::new(BoundaryKind::AffineThreshold { slope }, theta, &times(grid))
}

/// Ceiling at 1, floor root descending along `0.5 (1 - t)`: the corridor
/// whose floor the unit-slope terminal rides.
pub fn ramp_losses(grid: &Grid) -> Result<BoundaryPair> {
    BoundaryPair::new(
        affine_loss(grid, 1.0, TimeCurve::Const(1.0))?,
        affine_loss(grid, 1.0, TimeCurve::Affine { c0: 0.5, c1: -0.5 })?,
    )
}

/// Corridor at `[-10, 10]`, slack for every catalog terminal.
pub fn slack_losses(grid: &Grid) -> Result<BoundaryPair> {
    BoundaryPair::new(
        affine_loss(grid, 1.0, TimeCurve::Const(10.0))?,
        affine_loss(grid, 1.0, TimeCurve::Const(-10.0))?,
    )
}

/// One catalog entry: a constructor plus the traits consumers key on.
pub struct CatalogEntry {
    pub name: &'static str,
    /// One-line description for listings.
    pub summary: &'static str,
    /// Whether the two mean curves of the solution coincide (deterministic
    /// mean), which the game equality checks require.
    pub symmetric_means: bool,
    ctor: fn(usize, usize) -> Result<MRInstance>,
}

impl CatalogEntry {
    /// Build the instance at the given lattice resolution.
    pub fn build(&self, nt: usize, nx: usize) -> Result<MRInstance> {
        (self.ctor)(nt, nx)
    }
}

fn unit_terminal() -> PayoffSpec {
    PayoffSpec::Affine { c0: 0.0, c1: 1.0 }
}

fn flagship(nt: usize, nx: usize) -> Result<MRInstance> {
    let grid = default_grid(nt, nx)?;
    let losses = ramp_losses(&grid)?;
    MRInstance::new(
        unit_terminal(),
        GeneratorSpec::none(),
        losses,
        grid,
        &default_band(),
        SolvePolicy::Constant,
    )
}

fn wide_corridor(nt: usize, nx: usize) -> Result<MRInstance> {
    let grid = default_grid(nt, nx)?;
    let losses = slack_losses(&grid)?;
    MRInstance::new(
        unit_terminal(),
        GeneratorSpec::none(),
        losses,
        grid,
        &default_band(),
        SolvePolicy::Constant,
    )
}

fn discounted(nt: usize, nx: usize) -> Result<MRInstance> {
    let grid = default_grid(nt, nx)?;
    let losses = ramp_losses(&grid)?;
    let gen = GeneratorSpec::new(GenFun::zero(), GenFun::zero(), Some(TimeCurve::Const(-1.0)), 0.0)?;
    MRInstance::new(unit_terminal(), gen, losses, grid, &default_band(), SolvePolicy::LinearY)
}

fn vol_source(nt: usize, nx: usize) -> Result<MRInstance> {
    let grid = default_grid(nt, nx)?;
    let losses = ramp_losses(&grid)?;
    let gen = GeneratorSpec::new(
        GenFun::zero(),
        GenFun::Affine { a0: 0.2, a1: 0.0, a2: 0.0 },
        None,
        0.0,
    )?;
    MRInstance::new(unit_terminal(), gen, losses, grid, &default_band(), SolvePolicy::Constant)
}

fn squared(nt: usize, nx: usize) -> Result<MRInstance> {
    let grid = default_grid(nt, nx)?;
    let losses = slack_losses(&grid)?;
    MRInstance::new(
        PayoffSpec::Quadratic { c0: 0.0, c1: 0.0, c2: 1.0 },
        GeneratorSpec::none(),
        losses,
        grid,
        &default_band(),
        SolvePolicy::Constant,
    )
}

fn modulus(nt: usize, nx: usize) -> Result<MRInstance> {
    let grid = default_grid(nt, nx)?;
    let losses = ramp_losses(&grid)?;
    MRInstance::new(
        PayoffSpec::Abs { c0: 0.0, c1: 1.0 },
        GeneratorSpec::none(),
        losses,
        grid,
        &default_band(),
        SolvePolicy::Constant,
    )
}

fn sin_drift(nt: usize, nx: usize) -> Result<MRInstance> {
    let grid = default_grid(nt, nx)?;
    let losses = BoundaryPair::new(
        affine_loss(&grid, 1.0, TimeCurve::Const(2.0))?,
        affine_loss(&grid, 1.0, TimeCurve::Affine { c0: 0.5, c1: -0.5 })?,
    )?;
    let gen = GeneratorSpec::new(
        GenFun::LipschitzSin { a0: 0.1, a1: 0.3, a2: 0.2 },
        GenFun::zero(),
        None,
        0.25,
    )?;
    MRInstance::new(unit_terminal(), gen, losses, grid, &default_band(), SolvePolicy::Picard)
}

fn curved_losses(nt: usize, nx: usize) -> Result<MRInstance> {
    let grid = default_grid(nt, nx)?;
    let ts = times(&grid);
    let l = BoundaryCurve::new(
        BoundaryKind::SinPerturbed { gamma: 0.3 },
        TimeCurve::Const(1.2),
        &ts,
    )?;
    let r = BoundaryCurve::new(
        BoundaryKind::SinPerturbed { gamma: -0.3 },
        TimeCurve::Affine { c0: 0.3, c1: -0.6 },
        &ts,
    )?;
    MRInstance::new(
        unit_terminal(),
        GeneratorSpec::none(),
        BoundaryPair::new(l, r)?,
        grid,
        &default_band(),
        SolvePolicy::Constant,
    )
}

fn log_modulus(nt: usize, nx: usize) -> Result<MRInstance> {
    let grid = default_grid(nt, nx)?;
    let losses = BoundaryPair::new(
        affine_loss(&grid, 1.0, TimeCurve::Const(3.0))?,
        affine_loss(&grid, 1.0, TimeCurve::Affine { c0: 0.3, c1: -0.6 })?,
    )?;
    let gen = GeneratorSpec::new(
        GenFun::Mao { a0: 0.0, a1: 0.4, a2: 0.0 },
        GenFun::zero(),
        None,
        0.0,
    )?;
    MRInstance::new(unit_terminal(), gen, losses, grid, &default_band(), SolvePolicy::Picard)
}

/// The named instances, in listing order.
pub fn catalog() -> &'static [CatalogEntry] {
    &[
        CatalogEntry {
            name: "flagship",
            summary: "unit-slope terminal, source-free, floor ramp binding at every time",
            symmetric_means: true,
            ctor: flagship,
        },
        CatalogEntry {
            name: "wide_corridor",
            summary: "unit-slope terminal inside a corridor too wide to ever bind",
            symmetric_means: true,
            ctor: wide_corridor,
        },
        CatalogEntry {
            name: "discounted",
            summary: "flagship data with a unit discount rate on the value",
            symmetric_means: true,
            ctor: discounted,
        },
        CatalogEntry {
            name: "vol_source",
            summary: "constant quadratic-variation source accruing along the ramp corridor",
            symmetric_means: true,
            ctor: vol_source,
        },
        CatalogEntry {
            name: "squared",
            summary: "squared terminal in a slack corridor; convex, mean-uncertain",
            symmetric_means: false,
            ctor: squared,
        },
        CatalogEntry {
            name: "modulus",
            summary: "absolute-value terminal riding the floor ramp near the start",
            symmetric_means: false,
            ctor: modulus,
        },
        CatalogEntry {
            name: "sin_drift",
            summary: "bounded nonlinear drift with gradient coupling, fixed-point policies",
            symmetric_means: false,
            ctor: sin_drift,
        },
        CatalogEntry {
            name: "curved_losses",
            summary: "sine-perturbed corridor exercising the curved tabulation path",
            symmetric_means: true,
            ctor: curved_losses,
        },
        CatalogEntry {
            name: "log_modulus",
            summary: "logarithmic continuity modulus in y, plain fixed-point only",
            symmetric_means: false,
            ctor: log_modulus,
        },
    ]
}

/// Look an entry up by name.
pub fn by_name(name: &str) -> Result<&'static CatalogEntry> {
    catalog().iter().find(|e| e.name == name).ok_or_else(|| {
        let known: Vec<&str> = catalog().iter().map(|e| e.name).collect();
        Error::Config(format!("unknown instance '{name}'; known: {}", known.join(", ")))
    })
}

/// All entry names, in listing order.
pub fn names() -> Vec<&'static str> {
    catalog().iter().map(|e| e.name).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique_and_resolvable() {
        let ns = names();
        for (i, a) in ns.iter().enumerate() {
            assert!(!ns[i + 1..].contains(a), "duplicate {a}");
            assert_eq!(by_name(a).unwrap().name, *a);
        }
        assert!(by_name("nope").is_err());
    }

    #[test]
    fn every_entry_builds_and_solves_admissibly() {
        for e in catalog() {
            let inst = e.build(48, 96).unwrap_or_else(|err| panic!("{}: {err}", e.name));
            let sol = inst.solve().unwrap_or_else(|err| panic!("{}: {err}", e.name));
            let tol = sol.tol_flat;
            for i in 0..=inst.grid.nt() {
                assert!(sol.curves.slack_l[i] <= tol, "{} ceiling at {i}", e.name);
                assert!(sol.curves.slack_r[i] >= -tol, "{} floor at {i}", e.name);
                assert!(
                    sol.curves.lower_mean[i] <= sol.curves.upper_mean[i] + 1e-9,
                    "{} mean order at {i}",
                    e.name
                );
            }
        }
    }

    #[test]
    fn symmetric_flags_match_the_mean_curves() {
        for e in catalog() {
            let inst = e.build(48, 96).unwrap();
            let sol = inst.solve().unwrap();
            let spread = (0..=inst.grid.nt())
                .map(|i| sol.curves.upper_mean[i] - sol.curves.lower_mean[i])
                .fold(0.0f64, f64::max);
            if e.symmetric_means {
                assert!(spread <= 1e-6, "{}: spread {spread}", e.name);
            } else {
                assert!(spread > 1e-4, "{}: spread {spread}", e.name);
            }
        }
    }

    #[test]
    fn flagship_tracks_the_ramp() {
        let inst = by_name("flagship").unwrap().build(100, 200).unwrap();
        let sol = inst.solve().unwrap();
        for i in 0..=100 {
            let t = inst.grid.t(i);
            assert!((sol.curves.upper_mean[i] - 0.5 * (1.0 - t)).abs() < 1e-2, "t = {t}");
        }
    }
}
