//! Run manifests: a line-oriented record of what a run did, hashed back to
//! its effective config.
//!
//! Everything except the `timestamp_unix` line is a pure function of the
//! config text and the code version, so regenerating a run reproduces the
//! manifest bit for bit once that line is dropped. [`strip_volatile`] is
//! the comparison view regression checks use.

use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::time::{SystemTime, UNIX_EPOCH};

/// Status of one named check inside a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckStatus {
    Pass,
    Fail,
    /// Recorded but not applicable to this run; never fails it.
    Skipped,
}

impl CheckStatus {
    pub fn word(self) -> &'static str {
        match self {
            CheckStatus::Pass => "pass",
            CheckStatus::Fail => "fail",
            CheckStatus::Skipped => "skipped",
        }
    }

    pub fn from_pass(pass: bool) -> Self {
        if pass {
            CheckStatus::Pass
        } else {
            CheckStatus::Fail
        }
    }
}

/// Record of one run: config identity, code versions, timestamp, the
/// per-check outcomes, and the files written.
#[derive(Debug, Clone)]
pub struct RunManifest {
    pub verb: String,
    pub config_sha256: String,
    pub core_version: String,
    pub cli_version: String,
    pub seed: u64,
    /// Suite identifier, verify runs only; regress reads it back to know
    /// what to regenerate.
    pub suite: Option<String>,
    pub timestamp_unix: u64,
    pub checks: Vec<(String, CheckStatus)>,
    pub files: Vec<String>,
}

impl RunManifest {
    pub fn new(verb: &str, config_echo: &str, seed: u64) -> Self {
        let mut h = Sha256::new();
        h.update(config_echo.as_bytes());
        let ts = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        Self {
            verb: verb.into(),
            config_sha256: format!("{:x}", h.finalize()),
            core_version: mrbsde::VERSION.into(),
            cli_version: env!("CARGO_PKG_VERSION").into(),
            seed,
            suite: None,
            timestamp_unix: ts,
            checks: Vec::new(),
            files: Vec::new(),
        }
    }

    pub fn push_check(&mut self, name: &str, status: CheckStatus) {
        self.checks.push((name.into(), status));
    }

    pub fn push_file(&mut self, name: &str) {
        self.files.push(name.into());
    }

    /// True when no check failed (skipped checks do not count).
    pub fn pass(&self) -> bool {
        self.checks.iter().all(|(_, s)| *s != CheckStatus::Fail)
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "verb = {}", self.verb);
        let _ = writeln!(s, "config_sha256 = {}", self.config_sha256);
        let _ = writeln!(s, "core_version = {}", self.core_version);
        let _ = writeln!(s, "cli_version = {}", self.cli_version);
        let _ = writeln!(s, "seed = {}", self.seed);
        if let Some(id) = &self.suite {
            let _ = writeln!(s, "suite = {id}");
        }
        let _ = writeln!(s, "timestamp_unix = {}", self.timestamp_unix);
        for (name, st) in &self.checks {
            let _ = writeln!(s, "check.{name} = {}", st.word());
        }
        for f in &self.files {
            let _ = writeln!(s, "file = {f}");
        }
        s
    }
}

/// Comparison view of a manifest text: every line except the volatile
/// timestamp.
pub fn strip_volatile(text: &str) -> Vec<&str> {
    text.lines().filter(|l| !l.starts_with("timestamp_unix")).collect()
}
