//! End-to-end tests of the `mrbsde` binary: every verb, every exit-code
//! class, and the regression round trip, all inside temp directories.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn write_cfg(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

/// Run the binary with the output directory pinned through the
/// environment override.
fn run(out_dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mrbsde"))
        .args(args)
        .env("MRBSDE_OUT_DIR", out_dir)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

/// Parse a dumped CSV into (header, rows of f64 cells).
fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header: Vec<String> = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines
        .take_while(|l| l.split(',').all(|c| c.parse::<f64>().is_ok()))
        .map(|l| l.split(',').map(|c| c.parse::<f64>().unwrap()).collect())
        .collect();
    (header, rows)
}

fn col(header: &[String], name: &str) -> usize {
    header.iter().position(|h| h == name).unwrap_or_else(|| panic!("column {name}"))
}

const SMALL: &str = "grid.nt = 48\ngrid.nx = 96\n";

#[test]
fn solve_flagship_defaults_track_the_ramp() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path(), "run.cfg", "instance = flagship\n");
    let out = tmp.path().join("out");
    let o = run(&out, &["solve", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "stderr: {}", stderr(&o));

    let text = stdout(&o);
    assert!(text.contains("grid.nt = 200"), "{text}");
    assert!(text.contains("grid.nx = 400"), "{text}");
    assert!(text.contains("check flatness: pass"), "{text}");
    assert!(text.contains("check admissibility: pass"), "{text}");

    let (header, rows) = read_csv(&out.join("solution.csv"));
    assert_eq!(rows.len(), 201);
    let (it, iy) = (col(&header, "t"), col(&header, "E_Y"));
    for r in &rows {
        let target = 0.5 * (1.0 - r[it]);
        assert!((r[iy] - target).abs() <= 1e-2, "t = {}, E_Y = {}", r[it], r[iy]);
    }

    let manifest = fs::read_to_string(out.join("manifest.txt")).unwrap();
    assert!(manifest.contains("verb = solve"));
    assert!(manifest.contains("config_sha256 = "));
    assert!(manifest.contains("check.flatness = pass"));
    assert!(manifest.contains("check.admissibility = pass"));
    assert!(out.join("effective.cfg").is_file());
}

#[test]
fn solve_wide_corridor_never_reflects() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path(), "run.cfg", &format!("instance = wide_corridor\n{SMALL}"));
    let out = tmp.path().join("out");
    let o = run(&out, &["solve", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "stderr: {}", stderr(&o));

    let (header, rows) = read_csv(&out.join("solution.csv"));
    for name in ["A", "A_R", "A_L"] {
        let j = col(&header, name);
        assert!(rows.iter().all(|r| r[j] == 0.0), "{name} not identically zero");
    }
}

#[test]
fn solve_fixed_point_instance_writes_iteration_diagnostics() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path(), "run.cfg", &format!("instance = log_modulus\n{SMALL}"));
    let out = tmp.path().join("out");
    let o = run(&out, &["solve", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "stderr: {}", stderr(&o));

    let (header, rows) = read_csv(&out.join("iterations.csv"));
    let j = col(&header, "delta_beta_norm");
    assert!(!rows.is_empty());
    assert!(rows.iter().all(|r| r[j] > 0.0), "diagnostics must stay positive");
    assert!(
        rows.last().unwrap()[j] < rows.first().unwrap()[j],
        "diagnostics must come down"
    );
    let manifest = fs::read_to_string(out.join("manifest.txt")).unwrap();
    assert!(manifest.contains("file = iterations.csv"));
}

#[test]
fn inverted_band_exits_config_class_naming_the_invariant() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(
        tmp.path(),
        "run.cfg",
        "band.sigma_low_sq = 1.0\nband.sigma_high_sq = 0.25\nterminal.kind = affine\n",
    );
    let o = run(&tmp.path().join("out"), &["solve", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("VolBounds invariant"), "{}", stderr(&o));
}

#[test]
fn unseparated_losses_exit_config_class_naming_the_invariant() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(
        tmp.path(),
        "run.cfg",
        &format!("terminal.kind = affine\n{SMALL}loss.l.theta.c0 = 0.0\nloss.r.theta.c0 = 0.5\n"),
    );
    let o = run(&tmp.path().join("out"), &["solve", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("not separated"), "{}", stderr(&o));
}

#[test]
fn unknown_key_exits_config_class_with_line_number() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path(), "run.cfg", "instance = flagship\n\ngrid.ntt = 7\n");
    let o = run(&tmp.path().join("out"), &["solve", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    let e = stderr(&o);
    assert!(e.contains("line 3") && e.contains("grid.ntt"), "{e}");
}

#[test]
fn starved_iteration_budget_exits_nonconvergence_class() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(
        tmp.path(),
        "run.cfg",
        &format!("instance = log_modulus\n{SMALL}solver.max_iters = 1\n"),
    );
    let o = run(&tmp.path().join("out"), &["solve", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 3, "stderr: {}", stderr(&o));
}

#[test]
fn verify_suite_writes_machine_readable_report() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path(), "run.cfg", "instance = flagship\ngrid.nt = 64\ngrid.nx = 128\n");
    let out = tmp.path().join("out");
    let o = run(&out, &["verify", cfg.to_str().unwrap(), "--suite", "classical-limit"]);
    assert_eq!(code(&o), 0, "stderr: {}", stderr(&o));

    let report = fs::read_to_string(out.join("report.csv")).unwrap();
    assert!(report.starts_with("suite,check,status,detail"), "{report}");
    assert!(report.contains("classical-limit,collapse,PASS"), "{report}");
    assert!(report.contains("dominates_constant_controls,PASS"), "{report}");
    let manifest = fs::read_to_string(out.join("manifest.txt")).unwrap();
    assert!(manifest.contains("suite = classical-limit"));
    assert!(manifest.contains("check.call_price = pass"));
}

#[test]
fn verify_unknown_suite_exits_config_class() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path(), "run.cfg", "instance = flagship\n");
    let o = run(&tmp.path().join("out"), &["verify", cfg.to_str().unwrap(), "--suite", "nope"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("skorokhod"), "{}", stderr(&o));
}

#[test]
fn game_writes_bounds_and_exact_saddle() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(
        tmp.path(),
        "run.cfg",
        &format!("instance = flagship\n{SMALL}game.s_points = 4\ngame.q_points = 3\n"),
    );
    let out = tmp.path().join("out");
    let o = run(&out, &["game", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "stderr: {}", stderr(&o));

    let bounds = fs::read_to_string(out.join("bounds.csv")).unwrap();
    assert!(bounds.starts_with("s,q,upper,lower"), "{bounds}");
    assert!(out.join("linear.csv").is_file());
    let manifest = fs::read_to_string(out.join("manifest.txt")).unwrap();
    for line in [
        "check.chain = pass",
        "check.mean_equality = pass",
        "check.saddle = pass",
        "check.reductions = pass",
    ] {
        assert!(manifest.contains(line), "missing '{line}' in:\n{manifest}");
    }
    assert!(stdout(&o).contains("saddle: value"), "{}", stdout(&o));
}

#[test]
fn game_without_exact_representation_skips_the_saddle_checks() {
    let tmp = tempfile::tempdir().unwrap();
    // Curved boundaries break the affine loss structure the exact
    // representation needs; the bounds must still hold.
    let cfg = write_cfg(tmp.path(), "run.cfg", &format!("instance = curved_losses\n{SMALL}"));
    let out = tmp.path().join("out");
    let o = run(&out, &["game", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "stderr: {}", stderr(&o));
    let manifest = fs::read_to_string(out.join("manifest.txt")).unwrap();
    assert!(manifest.contains("check.chain = pass"), "{manifest}");
    assert!(manifest.contains("check.saddle = skipped"), "{manifest}");
    assert!(!out.join("linear.csv").exists());
}

fn strip_timestamp(text: &str) -> Vec<&str> {
    text.lines().filter(|l| !l.starts_with("timestamp_unix")).collect()
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path(), "run.cfg", &format!("instance = flagship\n{SMALL}"));
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(code(&run(&a, &["solve", cfg.to_str().unwrap()])), 0);
    assert_eq!(code(&run(&b, &["solve", cfg.to_str().unwrap()])), 0);

    for name in ["solution.csv", "effective.cfg"] {
        let x = fs::read(a.join(name)).unwrap();
        let y = fs::read(b.join(name)).unwrap();
        assert_eq!(x, y, "{name} differs between identical runs");
    }
    let ma = fs::read_to_string(a.join("manifest.txt")).unwrap();
    let mb = fs::read_to_string(b.join("manifest.txt")).unwrap();
    assert_eq!(strip_timestamp(&ma), strip_timestamp(&mb));
}

#[test]
fn regress_passes_on_an_unchanged_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path(), "run.cfg", &format!("instance = flagship\n{SMALL}"));
    let golden = tmp.path().join("golden");
    assert_eq!(code(&run(&golden, &["solve", cfg.to_str().unwrap()])), 0);

    let out = tmp.path().join("out");
    let o = run(&out, &["regress", cfg.to_str().unwrap(), "--golden", golden.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "stdout: {}\nstderr: {}", stdout(&o), stderr(&o));
    assert!(stdout(&o).contains("file(s) match"), "{}", stdout(&o));
    assert!(out.join("regress_report.txt").is_file());
}

#[test]
fn regress_flags_value_drift_per_column() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path(), "run.cfg", &format!("instance = flagship\n{SMALL}"));
    let golden = tmp.path().join("golden");
    assert_eq!(code(&run(&golden, &["solve", cfg.to_str().unwrap()])), 0);

    // Perturb one mean value well past the comparison tolerance.
    let path = golden.join("solution.csv");
    let text = fs::read_to_string(&path).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let mut cells: Vec<String> = lines[5].split(',').map(String::from).collect();
    let v: f64 = cells[1].parse().unwrap();
    cells[1] = format!("{:.16e}", v + 1e-3);
    lines[5] = cells.join(",");
    fs::write(&path, lines.join("\n") + "\n").unwrap();

    let out = tmp.path().join("out");
    let o = run(&out, &["regress", cfg.to_str().unwrap(), "--golden", golden.to_str().unwrap()]);
    assert_eq!(code(&o), 5, "stdout: {}", stdout(&o));
    let rep = stdout(&o);
    assert!(rep.contains("file solution.csv: DIFF"), "{rep}");
    assert!(rep.contains("column E_Y"), "{rep}");
    assert!(rep.contains("file manifest.txt: OK"), "{rep}");
}

#[test]
fn regress_reports_tolerance_changes_as_manifest_only_diffs() {
    let tmp = tempfile::tempdir().unwrap();
    let base = format!("instance = flagship\n{SMALL}");
    let cfg = write_cfg(tmp.path(), "run.cfg", &base);
    let golden = tmp.path().join("golden");
    assert_eq!(code(&run(&golden, &["solve", cfg.to_str().unwrap()])), 0);

    // A looser flatness tolerance leaves every CSV untouched; only the
    // manifest's config hash (and echoed config) move.
    let cfg2 = write_cfg(tmp.path(), "run2.cfg", &format!("{base}tol.flat = 0.05\n"));
    let out = tmp.path().join("out");
    let o = run(&out, &["regress", cfg2.to_str().unwrap(), "--golden", golden.to_str().unwrap()]);
    assert_eq!(code(&o), 5, "stdout: {}", stdout(&o));
    let rep = stdout(&o);
    assert!(rep.contains("file solution.csv: OK"), "{rep}");
    assert!(rep.contains("file manifest.txt: DIFF"), "{rep}");
}

#[test]
fn regress_regenerates_game_and_verify_runs_from_their_manifests() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path(), "run.cfg", &format!("instance = flagship\n{SMALL}"));

    let golden_game = tmp.path().join("gg");
    assert_eq!(code(&run(&golden_game, &["game", cfg.to_str().unwrap()])), 0);
    let o = run(
        &tmp.path().join("og"),
        &["regress", cfg.to_str().unwrap(), "--golden", golden_game.to_str().unwrap()],
    );
    assert_eq!(code(&o), 0, "stdout: {}\nstderr: {}", stdout(&o), stderr(&o));

    let golden_verify = tmp.path().join("gv");
    let o = run(&golden_verify, &["verify", cfg.to_str().unwrap(), "--suite", "gexp"]);
    assert_eq!(code(&o), 0, "stderr: {}", stderr(&o));
    let o = run(
        &tmp.path().join("ov"),
        &["regress", cfg.to_str().unwrap(), "--golden", golden_verify.to_str().unwrap()],
    );
    assert_eq!(code(&o), 0, "stdout: {}\nstderr: {}", stdout(&o), stderr(&o));
}
