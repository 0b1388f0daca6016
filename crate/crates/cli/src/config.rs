//! Line-oriented `key = value` experiment configs.
//!
//! A config either names a catalog preset (`instance = flagship`) or
//! specifies the problem componentwise (band, grid, terminal, generator,
//! losses). Unknown and duplicate keys are rejected with their line
//! number; every defaulted value is echoed back, so the effective config
//! is always explicit.

use mrbsde::boundary::{BoundaryCurve, BoundaryKind, BoundaryPair};
use mrbsde::bsde::{GenFun, GeneratorSpec};
use mrbsde::csvio;
use mrbsde::curve::TimeCurve;
use mrbsde::grid::{Grid, VolBounds};
use mrbsde::instances;
use mrbsde::meanreflect::{MRInstance, SolvePolicy};
use mrbsde::payoff::PayoffSpec;
use mrbsde::{Error, Result};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

/// A fully resolved run description: the solvable instance plus the
/// run-level settings that live outside it.
#[derive(Debug)]
pub struct ExperimentConfig {
    pub inst: MRInstance,
    pub instance_name: Option<String>,
    /// Base time of the stopping game.
    pub game_t: f64,
    pub game_s_points: usize,
    pub game_q_points: usize,
    pub seed: u64,
    /// Output directory as configured; the environment override is applied
    /// at run time and never enters the config hash.
    pub out_dir: PathBuf,
    /// Canonical echo of the effective config, sorted by key. This text is
    /// what the manifest hashes.
    pub echo: String,
}

/// Environment variable overriding the output directory only.
pub const OUT_DIR_ENV: &str = "MRBSDE_OUT_DIR";

struct Entry {
    value: String,
    line: usize,
    used: bool,
}

/// Raw key/value table with line numbers and per-key consumption marks.
struct Table {
    entries: BTreeMap<String, Entry>,
}

impl Table {
    fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let Some((k, v)) = trimmed.split_once('=') else {
                return Err(Error::Config(format!(
                    "line {line}: expected 'key = value', got '{trimmed}'"
                )));
            };
            let key = k.trim().to_string();
            let value = v.trim().to_string();
            if key.is_empty() {
                return Err(Error::Config(format!("line {line}: empty key")));
            }
            if let Some(prev) = entries.get(&key) {
                let Entry { line: first, .. } = prev;
                return Err(Error::Config(format!(
                    "line {line}: duplicate key '{key}' (first set on line {first})"
                )));
            }
            entries.insert(key, Entry { value, line, used: false });
        }
        Ok(Self { entries })
    }

    fn take_str(&mut self, key: &str) -> Option<String> {
        self.entries.get_mut(key).map(|e| {
            e.used = true;
            e.value.clone()
        })
    }

    fn take_f64(&mut self, key: &str) -> Result<Option<f64>> {
        match self.entries.get_mut(key) {
            None => Ok(None),
            Some(e) => {
                e.used = true;
                e.value.parse::<f64>().map(Some).map_err(|_| {
                    Error::Config(format!(
                        "line {}: key '{key}': invalid float '{}'",
                        e.line, e.value
                    ))
                })
            }
        }
    }

    fn take_usize(&mut self, key: &str) -> Result<Option<usize>> {
        match self.entries.get_mut(key) {
            None => Ok(None),
            Some(e) => {
                e.used = true;
                e.value.parse::<usize>().map(Some).map_err(|_| {
                    Error::Config(format!(
                        "line {}: key '{key}': invalid integer '{}'",
                        e.line, e.value
                    ))
                })
            }
        }
    }

    fn take_u64(&mut self, key: &str) -> Result<Option<u64>> {
        match self.entries.get_mut(key) {
            None => Ok(None),
            Some(e) => {
                e.used = true;
                e.value.parse::<u64>().map(Some).map_err(|_| {
                    Error::Config(format!(
                        "line {}: key '{key}': invalid integer '{}'",
                        e.line, e.value
                    ))
                })
            }
        }
    }

    /// Error for the first key never consumed by the resolver.
    fn reject_unused(&self, preset: bool) -> Result<()> {
        for (key, e) in &self.entries {
            if e.used {
                continue;
            }
            let component = ["band.", "grid.horizon", "terminal.", "gen.", "loss."]
                .iter()
                .any(|p| key.starts_with(p));
            if preset && component {
                return Err(Error::Config(format!(
                    "line {}: key '{key}' cannot be combined with an instance preset; \
                     drop 'instance' to specify components directly",
                    e.line
                )));
            }
            return Err(Error::Config(format!("line {}: unknown key '{key}'", e.line)));
        }
        Ok(())
    }
}

/// Ordered list of effective settings, rendered as the canonical echo.
struct Echo {
    items: Vec<(String, String)>,
}

impl Echo {
    fn new() -> Self {
        Self { items: Vec::new() }
    }

    fn put(&mut self, key: &str, value: impl Into<String>) {
        self.items.push((key.to_string(), value.into()));
    }

    fn put_f64(&mut self, key: &str, v: f64) {
        self.put(key, csvio::fmt_f64(v));
    }

    fn render(mut self) -> String {
        self.items.sort();
        let mut s = String::new();
        for (k, v) in &self.items {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}

fn parse_policy(s: &str, line_hint: &str) -> Result<SolvePolicy> {
    match s {
        "constant" => Ok(SolvePolicy::Constant),
        "linear_y" => Ok(SolvePolicy::LinearY),
        "picard" => Ok(SolvePolicy::Picard),
        "segmented" => Ok(SolvePolicy::LipschitzSegmented),
        other => Err(Error::Config(format!(
            "{line_hint}: unknown policy '{other}'; known: constant, linear_y, picard, segmented"
        ))),
    }
}

fn policy_name(p: SolvePolicy) -> &'static str {
    match p {
        SolvePolicy::Constant => "constant",
        SolvePolicy::LinearY => "linear_y",
        SolvePolicy::Picard => "picard",
        SolvePolicy::LipschitzSegmented => "segmented",
    }
}

/// Parse and fully validate a config text. Every constructor invariant of
/// the core types runs here, so a returned config is solvable as stated.
pub fn load_config(text: &str) -> Result<ExperimentConfig> {
    let mut tab = Table::parse(text)?;
    let mut echo = Echo::new();

    let instance_name = tab.take_str("instance");
    let nt = tab.take_usize("grid.nt")?.unwrap_or(200);
    let nx = tab.take_usize("grid.nx")?.unwrap_or(400);
    echo.put("grid.nt", nt.to_string());
    echo.put("grid.nx", nx.to_string());

    let mut inst = match &instance_name {
        Some(name) => {
            echo.put("instance", name.clone());
            instances::by_name(name)?.build(nt, nx)?
        }
        None => build_component_instance(&mut tab, &mut echo, nt, nx)?,
    };

    if let Some(p) = tab.take_str("policy") {
        inst.policy = parse_policy(&p, "key 'policy'")?;
    }
    echo.put("policy", policy_name(inst.policy));

    if let Some(v) = tab.take_f64("tol.iter")? {
        inst = inst.with_tol_iter(v)?;
        echo.put_f64("tol.iter", v);
    }
    if let Some(v) = tab.take_f64("tol.flat")? {
        inst = inst.with_tol_flat(v)?;
        echo.put_f64("tol.flat", v);
    }
    if let Some(v) = tab.take_usize("solver.max_iters")? {
        inst = inst.with_max_iters(v)?;
    }
    echo.put("solver.max_iters", inst.max_iters.to_string());
    if let Some(v) = tab.take_f64("solver.beta")? {
        inst = inst.with_beta(v)?;
    }
    echo.put_f64("solver.beta", inst.beta);
    if let Some(v) = tab.take_usize("solver.offset_points")? {
        inst = inst.with_offset_points(v)?;
    }
    echo.put("solver.offset_points", inst.offset_points.to_string());

    let game_t = tab.take_f64("game.t")?.unwrap_or(0.0);
    let game_s_points = tab.take_usize("game.s_points")?.unwrap_or(5);
    let game_q_points = tab.take_usize("game.q_points")?.unwrap_or(5);
    if game_s_points == 0 || game_q_points == 0 {
        return Err(Error::Config("game stopping sets need at least one point each".into()));
    }
    inst.grid.t_index(game_t).map_err(|_| {
        Error::Config(format!(
            "game.t = {game_t} does not lie on the time lattice (horizon {}, nt {nt})",
            inst.grid.horizon()
        ))
    })?;
    echo.put_f64("game.t", game_t);
    echo.put("game.s_points", game_s_points.to_string());
    echo.put("game.q_points", game_q_points.to_string());

    let seed = tab.take_u64("seed")?.unwrap_or(0);
    echo.put("seed", seed.to_string());
    let out_dir = PathBuf::from(tab.take_str("output.dir").unwrap_or_else(|| "out".into()));
    echo.put("output.dir", out_dir.display().to_string());

    tab.reject_unused(instance_name.is_some())?;

    Ok(ExperimentConfig {
        inst,
        instance_name,
        game_t,
        game_s_points,
        game_q_points,
        seed,
        out_dir,
        echo: echo.render(),
    })
}

fn take_genfun(tab: &mut Table, echo: &mut Echo, prefix: &str) -> Result<GenFun> {
    let kind = tab.take_str(&format!("{prefix}.kind")).unwrap_or_else(|| "zero".into());
    let a0 = tab.take_f64(&format!("{prefix}.a0"))?.unwrap_or(0.0);
    let a1 = tab.take_f64(&format!("{prefix}.a1"))?.unwrap_or(0.0);
    let a2 = tab.take_f64(&format!("{prefix}.a2"))?.unwrap_or(0.0);
    let fun = match kind.as_str() {
        "zero" => {
            if a0 != 0.0 || a1 != 0.0 || a2 != 0.0 {
                return Err(Error::Config(format!(
                    "'{prefix}.kind = zero' admits no coefficients; set a kind to use them"
                )));
            }
            GenFun::zero()
        }
        "affine" => GenFun::Affine { a0, a1, a2 },
        "sin" => GenFun::LipschitzSin { a0, a1, a2 },
        "mao" => GenFun::Mao { a0, a1, a2 },
        other => {
            return Err(Error::Config(format!(
                "key '{prefix}.kind': unknown generator kind '{other}'; \
                 known: zero, affine, sin, mao"
            )))
        }
    };
    echo.put(&format!("{prefix}.kind"), kind);
    if !matches!(fun, GenFun::Affine { a0, a1, a2 } if a0 == 0.0 && a1 == 0.0 && a2 == 0.0) {
        echo.put_f64(&format!("{prefix}.a0"), a0);
        echo.put_f64(&format!("{prefix}.a1"), a1);
        echo.put_f64(&format!("{prefix}.a2"), a2);
    }
    Ok(fun)
}

fn take_theta(tab: &mut Table, echo: &mut Echo, prefix: &str, default_c0: f64) -> Result<TimeCurve> {
    let kind = tab.take_str(&format!("{prefix}.kind")).unwrap_or_else(|| "const".into());
    let c0 = tab.take_f64(&format!("{prefix}.c0"))?.unwrap_or(default_c0);
    let c1 = tab.take_f64(&format!("{prefix}.c1"))?.unwrap_or(0.0);
    echo.put(&format!("{prefix}.kind"), kind.clone());
    echo.put_f64(&format!("{prefix}.c0"), c0);
    match kind.as_str() {
        "const" => {
            if c1 != 0.0 {
                return Err(Error::Config(format!(
                    "'{prefix}.kind = const' admits no slope; use kind = affine for '{prefix}.c1'"
                )));
            }
            Ok(TimeCurve::Const(c0))
        }
        "affine" => {
            echo.put_f64(&format!("{prefix}.c1"), c1);
            Ok(TimeCurve::Affine { c0, c1 })
        }
        other => Err(Error::Config(format!(
            "key '{prefix}.kind': unknown curve kind '{other}'; known: const, affine"
        ))),
    }
}

fn take_loss(
    tab: &mut Table,
    echo: &mut Echo,
    side: &str,
    default_theta_c0: f64,
    times: &[f64],
) -> Result<BoundaryCurve> {
    let kind_key = format!("loss.{side}.kind");
    let kind = tab.take_str(&kind_key).unwrap_or_else(|| "affine".into());
    let slope = tab.take_f64(&format!("loss.{side}.slope"))?.unwrap_or(1.0);
    let gamma = tab.take_f64(&format!("loss.{side}.gamma"))?;
    let bk = match kind.as_str() {
        "affine" => {
            if gamma.is_some() {
                return Err(Error::Config(format!(
                    "'loss.{side}.gamma' only applies to kind = sin"
                )));
            }
            BoundaryKind::AffineThreshold { slope }
        }
        "sin" => {
            if slope != 1.0 {
                return Err(Error::Config(format!(
                    "'loss.{side}.slope' only applies to kind = affine"
                )));
            }
            let g = gamma.unwrap_or(0.1);
            echo.put_f64(&format!("loss.{side}.gamma"), g);
            BoundaryKind::SinPerturbed { gamma: g }
        }
        other => {
            return Err(Error::Config(format!(
                "key '{kind_key}': unknown loss kind '{other}'; known: affine, sin"
            )))
        }
    };
    echo.put(&kind_key, kind.clone());
    if kind == "affine" {
        echo.put_f64(&format!("loss.{side}.slope"), slope);
    }
    let theta = take_theta(tab, echo, &format!("loss.{side}.theta"), default_theta_c0)?;
    BoundaryCurve::new(bk, theta, times)
}

fn take_terminal(tab: &mut Table, echo: &mut Echo) -> Result<PayoffSpec> {
    let Some(kind) = tab.take_str("terminal.kind") else {
        return Err(Error::Config(
            "config names neither 'instance' nor 'terminal.kind'; \
             one of the two is required"
                .into(),
        ));
    };
    let c0 = tab.take_f64("terminal.c0")?.unwrap_or(0.0);
    let c1 = tab.take_f64("terminal.c1")?.unwrap_or(1.0);
    let c2 = tab.take_f64("terminal.c2")?;
    let strike = tab.take_f64("terminal.strike")?;
    echo.put("terminal.kind", kind.clone());
    echo.put_f64("terminal.c0", c0);
    echo.put_f64("terminal.c1", c1);
    let reject_c2 = |c2: Option<f64>, kind: &str| -> Result<()> {
        if c2.is_some() {
            return Err(Error::Config(format!(
                "'terminal.c2' does not apply to terminal.kind = {kind}"
            )));
        }
        Ok(())
    };
    let reject_strike = |s: Option<f64>, kind: &str| -> Result<()> {
        if s.is_some() {
            return Err(Error::Config(format!(
                "'terminal.strike' only applies to terminal.kind = call, not {kind}"
            )));
        }
        Ok(())
    };
    let spec = match kind.as_str() {
        "affine" => {
            reject_c2(c2, "affine")?;
            reject_strike(strike, "affine")?;
            PayoffSpec::Affine { c0, c1 }
        }
        "quadratic" => {
            reject_strike(strike, "quadratic")?;
            let c2 = c2.unwrap_or(1.0);
            echo.put_f64("terminal.c2", c2);
            PayoffSpec::Quadratic { c0, c1, c2 }
        }
        "abs" => {
            reject_c2(c2, "abs")?;
            reject_strike(strike, "abs")?;
            PayoffSpec::Abs { c0, c1 }
        }
        "call" => {
            reject_c2(c2, "call")?;
            let strike = strike.unwrap_or(0.0);
            echo.put_f64("terminal.strike", strike);
            PayoffSpec::Call { c0, c1, strike }
        }
        "sin" => {
            reject_strike(strike, "sin")?;
            let c2 = c2.unwrap_or(1.0);
            echo.put_f64("terminal.c2", c2);
            PayoffSpec::BoundedLipschitzSin { c0, c1, c2 }
        }
        other => {
            return Err(Error::Config(format!(
                "key 'terminal.kind': unknown payoff '{other}'; \
                 known: affine, quadratic, abs, call, sin"
            )))
        }
    };
    spec.validate()?;
    Ok(spec)
}

fn build_component_instance(
    tab: &mut Table,
    echo: &mut Echo,
    nt: usize,
    nx: usize,
) -> Result<MRInstance> {
    let lo = tab.take_f64("band.sigma_low_sq")?.unwrap_or(0.25);
    let hi = tab.take_f64("band.sigma_high_sq")?.unwrap_or(1.0);
    echo.put_f64("band.sigma_low_sq", lo);
    echo.put_f64("band.sigma_high_sq", hi);
    let vb = VolBounds::new(lo, hi)?;

    let horizon = tab.take_f64("grid.horizon")?.unwrap_or(1.0);
    echo.put_f64("grid.horizon", horizon);
    let grid = Grid::auto(horizon, nt, nx, &vb)?;

    let terminal = take_terminal(tab, echo)?;

    let f = take_genfun(tab, echo, "gen.f")?;
    let g = take_genfun(tab, echo, "gen.g")?;
    let gamma = match tab.take_str("gen.gamma.kind").as_deref() {
        None | Some("none") => {
            echo.put("gen.gamma.kind", "none");
            None
        }
        Some("const") => {
            let c0 = tab.take_f64("gen.gamma.c0")?.unwrap_or(0.0);
            echo.put("gen.gamma.kind", "const");
            echo.put_f64("gen.gamma.c0", c0);
            Some(TimeCurve::Const(c0))
        }
        Some("affine") => {
            let c0 = tab.take_f64("gen.gamma.c0")?.unwrap_or(0.0);
            let c1 = tab.take_f64("gen.gamma.c1")?.unwrap_or(0.0);
            echo.put("gen.gamma.kind", "affine");
            echo.put_f64("gen.gamma.c0", c0);
            echo.put_f64("gen.gamma.c1", c1);
            Some(TimeCurve::Affine { c0, c1 })
        }
        Some(other) => {
            return Err(Error::Config(format!(
                "key 'gen.gamma.kind': unknown curve kind '{other}'; known: none, const, affine"
            )))
        }
    };
    let default_kappa = f.z_slope_bound().max(g.z_slope_bound());
    let kappa = tab.take_f64("gen.kappa")?.unwrap_or(default_kappa);
    echo.put_f64("gen.kappa", kappa);
    let gen = GeneratorSpec::new(f, g, gamma, kappa)?;

    let times: Vec<f64> = (0..=nt).map(|i| grid.t(i)).collect();
    let l = take_loss(tab, echo, "l", 1.0, &times)?;
    let r = take_loss(tab, echo, "r", 0.0, &times)?;
    let losses = BoundaryPair::new(l, r)?;

    // Policy is applied by the caller; start from the general default.
    MRInstance::new(terminal, gen, losses, grid, &vb, SolvePolicy::Picard)
}
