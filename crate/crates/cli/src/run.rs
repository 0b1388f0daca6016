//! The four operations behind the command line verbs: solve, verify, game
//! and regress. Each writes its outputs plus a manifest into one directory
//! and reports a coarse outcome; hard errors bubble up as [`Error`].

use crate::config::{ExperimentConfig, OUT_DIR_ENV};
use crate::manifest::{strip_volatile, CheckStatus, RunManifest};
use mrbsde::game::{self, GameGrid, GameValues, LinearGameReport};
use mrbsde::meanreflect::{check_flatness, MRSolution};
use mrbsde::suites::{run_suite, SuiteReport};
use mrbsde::{Error, Result};
use std::fs;
use std::path::{Path, PathBuf};

/// Coarse outcome of an operation that ran to completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    /// A property or acceptance check failed.
    SuiteFailure,
    /// A regression comparison found differences.
    RegressionDiff,
}

impl Outcome {
    pub fn exit_code(self) -> i32 {
        match self {
            Outcome::Success => 0,
            Outcome::SuiteFailure => 4,
            Outcome::RegressionDiff => 5,
        }
    }
}

/// Exit code for an operation that did not complete.
pub fn exit_code_for(e: &Error) -> i32 {
    match e {
        Error::NonConvergence { .. } => 3,
        _ => 2,
    }
}

/// Output directory: the environment override wins over the config value.
pub fn resolve_out_dir(cfg: &ExperimentConfig) -> PathBuf {
    match std::env::var_os(OUT_DIR_ENV) {
        Some(v) => PathBuf::from(v),
        None => cfg.out_dir.clone(),
    }
}

fn write_file(dir: &Path, name: &str, bytes: &[u8]) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(name), bytes)?;
    Ok(())
}

/// Solve the configured instance and write `effective.cfg`,
/// `solution.csv`, `iterations.csv` (fixed-point policies only) and
/// `manifest.txt` into `dir`.
pub fn solve_outputs(cfg: &ExperimentConfig, dir: &Path) -> Result<(MRSolution, RunManifest)> {
    let sol = cfg.inst.solve()?;
    let mut m = RunManifest::new("solve", &cfg.echo, cfg.seed);

    write_file(dir, "effective.cfg", cfg.echo.as_bytes())?;
    m.push_file("effective.cfg");

    let mut buf = Vec::new();
    sol.dump_csv(&mut buf, &cfg.inst.grid)?;
    write_file(dir, "solution.csv", &buf)?;
    m.push_file("solution.csv");

    if !sol.iterations.is_empty() {
        let mut it = Vec::new();
        sol.dump_iterations_csv(&mut it)?;
        write_file(dir, "iterations.csv", &it)?;
        m.push_file("iterations.csv");
    }

    let flat = check_flatness(&sol);
    let tol = flat.tol_flat;
    m.push_check(
        "flatness",
        CheckStatus::from_pass(flat.sum_l.abs() <= tol && flat.sum_r.abs() <= tol),
    );
    m.push_check(
        "admissibility",
        CheckStatus::from_pass(flat.max_violation_l <= tol && flat.max_violation_r <= tol),
    );

    write_file(dir, "manifest.txt", m.render().as_bytes())?;
    Ok((sol, m))
}

pub fn run_solve(cfg: &ExperimentConfig, dir: &Path) -> Result<Outcome> {
    print!("# effective config\n{}", cfg.echo);
    let (sol, m) = solve_outputs(cfg, dir)?;
    let flat = check_flatness(&sol);
    println!("# run");
    for (name, st) in &m.checks {
        println!("check {name}: {}", st.word());
    }
    println!(
        "flatness sums |L| = {:.3e}, |R| = {:.3e}; worst violations L = {:.3e}, R = {:.3e}; tol = {:.3e}",
        flat.sum_l.abs(),
        flat.sum_r.abs(),
        flat.max_violation_l,
        flat.max_violation_r,
        flat.tol_flat
    );
    if !sol.iterations.is_empty() {
        println!(
            "fixed point iterations: {} (final diagnostic {:.3e})",
            sol.iterations.len(),
            sol.iterations.last().copied().unwrap_or(0.0)
        );
    }
    for f in &m.files {
        println!("wrote {}", dir.join(f).display());
    }
    println!("wrote {}", dir.join("manifest.txt").display());
    Ok(if m.pass() { Outcome::Success } else { Outcome::SuiteFailure })
}

/// Run one verification suite and write `report.csv`, `effective.cfg` and
/// `manifest.txt` into `dir`.
pub fn verify_outputs(
    cfg: &ExperimentConfig,
    suite: &str,
    dir: &Path,
) -> Result<(SuiteReport, RunManifest)> {
    let rep = run_suite(suite, cfg.inst.grid.nt(), cfg.inst.grid.nx(), cfg.seed)?;
    let mut m = RunManifest::new("verify", &cfg.echo, cfg.seed);
    m.suite = Some(suite.to_string());

    write_file(dir, "effective.cfg", cfg.echo.as_bytes())?;
    m.push_file("effective.cfg");

    let mut buf = Vec::new();
    rep.dump_csv(&mut buf)?;
    write_file(dir, "report.csv", &buf)?;
    m.push_file("report.csv");

    for c in &rep.checks {
        // Advisory exceedances never gate a run; the report carries them.
        let st = if c.advisory && !c.pass {
            CheckStatus::Skipped
        } else {
            CheckStatus::from_pass(c.pass)
        };
        m.push_check(&c.name, st);
    }

    write_file(dir, "manifest.txt", m.render().as_bytes())?;
    Ok((rep, m))
}

pub fn run_verify(cfg: &ExperimentConfig, suite: &str, dir: &Path) -> Result<Outcome> {
    let (rep, m) = verify_outputs(cfg, suite, dir)?;
    for line in rep.lines() {
        println!("{line}");
    }
    for f in &m.files {
        println!("wrote {}", dir.join(f).display());
    }
    println!("wrote {}", dir.join("manifest.txt").display());
    Ok(if rep.pass() { Outcome::Success } else { Outcome::SuiteFailure })
}

fn stopping_times(cfg: &ExperimentConfig, points: usize) -> Result<Vec<f64>> {
    let grid = &cfg.inst.grid;
    let base = grid.t_index(cfg.game_t)?;
    let nt = grid.nt();
    let span = nt - base;
    let mut idx: Vec<usize> = if points == 1 || span == 0 {
        vec![nt]
    } else {
        (0..points)
            .map(|j| base + (span * j + (points - 1) / 2) / (points - 1))
            .collect()
    };
    idx.dedup();
    Ok(idx.into_iter().map(|i| grid.t(i)).collect())
}

/// Evaluate the stopping game and write `bounds.csv`, `linear.csv` (when
/// the instance admits the exact representation), `effective.cfg` and
/// `manifest.txt` into `dir`.
pub fn game_outputs(
    cfg: &ExperimentConfig,
    dir: &Path,
) -> Result<(GameValues, Option<LinearGameReport>, RunManifest)> {
    let sol = cfg.inst.solve()?;
    let s_times = stopping_times(cfg, cfg.game_s_points)?;
    let q_times = stopping_times(cfg, cfg.game_q_points)?;
    let gg = GameGrid::new(&cfg.inst.grid, cfg.game_t, &s_times, &q_times)?;

    let gv = game::optim_bounds(&sol, &cfg.inst, &gg)?;
    let mut m = RunManifest::new("game", &cfg.echo, cfg.seed);

    write_file(dir, "effective.cfg", cfg.echo.as_bytes())?;
    m.push_file("effective.cfg");

    let mut buf = Vec::new();
    gv.dump_csv(&mut buf)?;
    write_file(dir, "bounds.csv", &buf)?;
    m.push_file("bounds.csv");

    m.push_check("chain", CheckStatus::from_pass(gv.chain_ok));
    m.push_check(
        "mean_equality",
        match gv.equality_ok {
            Some(b) => CheckStatus::from_pass(b),
            None => CheckStatus::Skipped,
        },
    );

    let linear = match game::linear_game(&sol, &cfg.inst, &gg) {
        Ok(lg) => {
            let mut lbuf = Vec::new();
            lg.dump_csv(&mut lbuf)?;
            write_file(dir, "linear.csv", &lbuf)?;
            m.push_file("linear.csv");
            m.push_check("saddle", CheckStatus::from_pass(lg.saddle_ok));
            m.push_check("reductions", CheckStatus::from_pass(lg.equalities_ok));
            Some(lg)
        }
        Err(Error::Precondition(_)) => {
            m.push_check("saddle", CheckStatus::Skipped);
            m.push_check("reductions", CheckStatus::Skipped);
            None
        }
        Err(e) => return Err(e),
    };

    write_file(dir, "manifest.txt", m.render().as_bytes())?;
    Ok((gv, linear, m))
}

pub fn run_game(cfg: &ExperimentConfig, dir: &Path) -> Result<Outcome> {
    let (gv, linear, m) = game_outputs(cfg, dir)?;
    println!(
        "bounds: inf_s sup_q = {:.6}, -E[-Y] = {:.6}, E[Y] = {:.6}, sup_q inf_s = {:.6} (chain {})",
        gv.infsup_lower,
        gv.neg_e_neg_y,
        gv.e_y,
        gv.supinf_upper,
        if gv.chain_ok { "ok" } else { "VIOLATED" }
    );
    match gv.equality_ok {
        Some(b) => println!(
            "deterministic mean: game values collapse onto E[Y] {}",
            if b { "(ok)" } else { "(VIOLATED)" }
        ),
        None => println!("mean carries volatility spread; equality not applicable"),
    }
    match &linear {
        Some(lg) => println!(
            "saddle: value {:.6} at (s*, q*) = ({:.6}, {:.6}), reductions {}, saddle {}",
            lg.value_at_saddle,
            lg.s_star,
            lg.q_star,
            if lg.equalities_ok { "ok" } else { "VIOLATED" },
            if lg.saddle_ok { "ok" } else { "VIOLATED" }
        ),
        None => println!("exact saddle representation not applicable to this instance"),
    }
    for f in &m.files {
        println!("wrote {}", dir.join(f).display());
    }
    println!("wrote {}", dir.join("manifest.txt").display());
    Ok(if m.pass() { Outcome::Success } else { Outcome::SuiteFailure })
}

// ---------------------------------------------------------------------------
// Regression comparison.

/// Float tolerance of the regression comparison: parsed values within this
/// distance count as equal even when their digits differ.
pub const REGRESS_FLOAT_TOL: f64 = 1e-12;

fn manifest_field<'a>(text: &'a str, key: &str) -> Option<&'a str> {
    text.lines().find_map(|l| {
        let (k, v) = l.split_once('=')?;
        (k.trim() == key).then(|| v.trim())
    })
}

fn cells_equal(a: &str, b: &str) -> bool {
    if a == b {
        return true;
    }
    match (a.parse::<f64>(), b.parse::<f64>()) {
        (Ok(x), Ok(y)) => (x - y).abs() <= REGRESS_FLOAT_TOL,
        _ => false,
    }
}

/// Per-column comparison of two CSV texts; returns human-readable diff
/// lines, empty when the files agree.
fn csv_diffs(golden: &str, regen: &str) -> Vec<String> {
    if golden == regen {
        return Vec::new();
    }
    let g_lines: Vec<&str> = golden.lines().collect();
    let r_lines: Vec<&str> = regen.lines().collect();
    let mut out = Vec::new();
    if g_lines.len() != r_lines.len() {
        out.push(format!(
            "row count differs: golden {} vs regenerated {}",
            g_lines.len(),
            r_lines.len()
        ));
    }
    let header: Vec<&str> = g_lines.first().map(|h| h.split(',').collect()).unwrap_or_default();
    struct ColDiff {
        count: usize,
        max_abs: f64,
        example_row: usize,
    }
    let mut cols: Vec<ColDiff> = Vec::new();
    let mut ragged = 0usize;
    for (i, (gl, rl)) in g_lines.iter().zip(&r_lines).enumerate() {
        let gc: Vec<&str> = gl.split(',').collect();
        let rc: Vec<&str> = rl.split(',').collect();
        if gc.len() != rc.len() {
            ragged += 1;
            continue;
        }
        for (j, (ga, ra)) in gc.iter().zip(&rc).enumerate() {
            if cells_equal(ga, ra) {
                continue;
            }
            while cols.len() <= j {
                cols.push(ColDiff { count: 0, max_abs: 0.0, example_row: 0 });
            }
            let c = &mut cols[j];
            if c.count == 0 {
                c.example_row = i + 1;
            }
            c.count += 1;
            if let (Ok(x), Ok(y)) = (ga.parse::<f64>(), ra.parse::<f64>()) {
                c.max_abs = c.max_abs.max((x - y).abs());
            }
        }
    }
    if ragged > 0 {
        out.push(format!("{ragged} row(s) have differing cell counts"));
    }
    for (j, c) in cols.iter().enumerate() {
        if c.count == 0 {
            continue;
        }
        let name = header.get(j).copied().unwrap_or("?");
        out.push(format!(
            "column {name}: {} value(s) differ (first at row {}, max abs delta {:.3e})",
            c.count, c.example_row, c.max_abs
        ));
    }
    if out.is_empty() {
        // Same parsed content in different bytes still counts as a diff
        // only when a cell comparison failed; reaching here means all
        // cells matched within tolerance.
        return Vec::new();
    }
    out
}

fn sorted_file_names(dir: &Path) -> Result<Vec<String>> {
    let mut names = Vec::new();
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        if entry.file_type()?.is_file() {
            names.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    names.sort();
    Ok(names)
}

/// Regenerate the golden run from the config and compare every file.
/// Differences land in `regress_report.txt`; parsed floats within
/// [`REGRESS_FLOAT_TOL`] count as equal, and the manifest comparison
/// ignores its timestamp line.
pub fn run_regress(cfg: &ExperimentConfig, golden: &Path, dir: &Path) -> Result<Outcome> {
    let golden_manifest = fs::read_to_string(golden.join("manifest.txt")).map_err(|_| {
        Error::Config(format!(
            "golden directory {} has no readable manifest.txt",
            golden.display()
        ))
    })?;
    let verb = manifest_field(&golden_manifest, "verb").unwrap_or("solve").to_string();

    let regen = dir.join("regen");
    match verb.as_str() {
        "solve" => {
            solve_outputs(cfg, &regen)?;
        }
        "game" => {
            game_outputs(cfg, &regen)?;
        }
        "verify" => {
            let suite = manifest_field(&golden_manifest, "suite").ok_or_else(|| {
                Error::Config("golden verify manifest does not name its suite".into())
            })?;
            let suite = suite.to_string();
            verify_outputs(cfg, &suite, &regen)?;
        }
        other => {
            return Err(Error::Config(format!(
                "golden manifest names unknown verb '{other}'"
            )))
        }
    }

    let golden_names = sorted_file_names(golden)?;
    let regen_names = sorted_file_names(&regen)?;
    let mut report: Vec<String> = Vec::new();
    let mut diffs = 0usize;

    for name in &golden_names {
        let g_bytes = fs::read(golden.join(name))?;
        let r_path = regen.join(name);
        if !r_path.is_file() {
            report.push(format!("file {name}: DIFF (missing from regenerated run)"));
            diffs += 1;
            continue;
        }
        let r_bytes = fs::read(&r_path)?;
        let file_diffs: Vec<String> = if name == "manifest.txt" {
            let g = String::from_utf8_lossy(&g_bytes).into_owned();
            let r = String::from_utf8_lossy(&r_bytes).into_owned();
            let gl = strip_volatile(&g);
            let rl = strip_volatile(&r);
            if gl == rl {
                Vec::new()
            } else {
                gl.iter()
                    .zip(rl.iter())
                    .filter(|(a, b)| a != b)
                    .map(|(a, b)| format!("golden '{a}' vs regenerated '{b}'"))
                    .chain((gl.len() != rl.len()).then(|| {
                        format!("line count {} vs {}", gl.len(), rl.len())
                    }))
                    .collect()
            }
        } else if name.ends_with(".csv") {
            match (std::str::from_utf8(&g_bytes), std::str::from_utf8(&r_bytes)) {
                (Ok(g), Ok(r)) => csv_diffs(g, r),
                _ => {
                    if g_bytes == r_bytes {
                        Vec::new()
                    } else {
                        vec!["binary contents differ".into()]
                    }
                }
            }
        } else if g_bytes == r_bytes {
            Vec::new()
        } else {
            vec!["byte contents differ".into()]
        };

        if file_diffs.is_empty() {
            report.push(format!("file {name}: OK"));
        } else {
            diffs += 1;
            report.push(format!("file {name}: DIFF"));
            for d in file_diffs {
                report.push(format!("  {d}"));
            }
        }
    }
    for name in &regen_names {
        if !golden_names.contains(name) {
            report.push(format!("file {name}: DIFF (absent from golden directory)"));
            diffs += 1;
        }
    }

    let summary = if diffs == 0 {
        format!("regression: all {} file(s) match", golden_names.len())
    } else {
        format!("regression: {diffs} file(s) differ")
    };
    report.push(summary);

    let text = report.join("\n") + "\n";
    write_file(dir, "regress_report.txt", text.as_bytes())?;
    print!("{text}");
    println!("wrote {}", dir.join("regress_report.txt").display());

    Ok(if diffs == 0 { Outcome::Success } else { Outcome::RegressionDiff })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_partition_error_classes() {
        assert_eq!(
            exit_code_for(&Error::NonConvergence {
                iters: 1,
                last: Some(1.0),
                diagnostics: vec![1.0]
            }),
            3
        );
        assert_eq!(exit_code_for(&Error::Config("x".into())), 2);
        assert_eq!(exit_code_for(&Error::Domain("x".into())), 2);
        assert_eq!(Outcome::Success.exit_code(), 0);
        assert_eq!(Outcome::SuiteFailure.exit_code(), 4);
        assert_eq!(Outcome::RegressionDiff.exit_code(), 5);
    }

    #[test]
    fn csv_comparison_is_float_aware() {
        let a = "t,v\n0,1.0000000000000000e0\n";
        let b = "t,v\n0,9.9999999999999995e-1\n";
        assert!(csv_diffs(a, b).is_empty());
        let c = "t,v\n0,1.0001e0\n";
        let d = csv_diffs(a, c);
        assert_eq!(d.len(), 1);
        assert!(d[0].contains("column v"), "{d:?}");
    }

    #[test]
    fn uniform_stopping_sets_cover_base_and_horizon() {
        let cfg = crate::config::load_config("instance = flagship\ngrid.nt = 20\ngrid.nx = 40\n")
            .unwrap();
        let s = stopping_times(&cfg, 5).unwrap();
        assert_eq!(s.first().copied(), Some(0.0));
        assert_eq!(s.last().copied(), Some(1.0));
        assert_eq!(s.len(), 5);
        let one = stopping_times(&cfg, 1).unwrap();
        assert_eq!(one, vec![1.0]);
    }
}
