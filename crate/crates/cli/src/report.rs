//! Scenario execution and the JSON report.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::checks::{run_check, CheckKind, Outcome};
use crate::config::{CheckSpec, ScenarioConfig};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckRecord {
    pub name: String,
    pub anchor: String,
    pub lhs: Option<f64>,
    pub rhs: Option<f64>,
    /// `null` in JSON when the computation failed.
    pub residual: f64,
    pub tolerance: f64,
    pub pass: bool,
    pub detail: Option<String>,
}

/// Deterministic for a fixed configuration: no timings, records in config
/// order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioReport {
    pub tool: String,
    pub version: String,
    pub scenario: String,
    pub config_hash: String,
    pub seed: u64,
    pub checks: Vec<CheckRecord>,
    pub passed: usize,
    pub total: usize,
    pub pass: bool,
}

impl ScenarioReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn record(&self, name: &str) -> Option<&CheckRecord> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Per-check generator: the scenario seed mixed with the check name, so a
/// check draws the same inputs regardless of its neighbours.
pub fn check_rng(seed: u64, name: &str) -> ChaCha8Rng {
    let digest = Sha256::digest(name.as_bytes());
    let salt = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"));
    ChaCha8Rng::seed_from_u64(seed ^ salt)
}

fn evaluate(cfg: &ScenarioConfig, spec: &CheckSpec, kind: CheckKind) -> CheckRecord {
    let tolerance = spec.tolerance.unwrap_or(kind.default_tolerance());
    let mut rng = check_rng(cfg.seed, kind.name());
    let outcome = match catch_unwind(AssertUnwindSafe(|| run_check(cfg, spec, kind, &mut rng))) {
        Ok(Ok(o)) => o,
        Ok(Err(e)) => Outcome {
            lhs: None,
            rhs: None,
            residual: f64::NAN,
            detail: Some(format!("error: {e}")),
        },
        Err(panic) => {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "unknown panic".into());
            Outcome {
                lhs: None,
                rhs: None,
                residual: f64::NAN,
                detail: Some(format!("panic: {msg}")),
            }
        }
    };
    CheckRecord {
        name: kind.name().to_string(),
        anchor: kind.anchor().to_string(),
        lhs: outcome.lhs,
        rhs: outcome.rhs,
        residual: outcome.residual,
        tolerance,
        pass: outcome.residual <= tolerance,
        detail: outcome.detail,
    }
}

/// Runs every configured check on the current rayon pool and returns the
/// report together with the wall time of each check.
pub fn verify_all_timed(cfg: &ScenarioConfig) -> (ScenarioReport, Vec<Duration>) {
    let kinds = cfg.kinds();
    let results: Vec<(CheckRecord, Duration)> = cfg
        .checks
        .par_iter()
        .zip(kinds.par_iter())
        .map(|(spec, &kind)| {
            let start = Instant::now();
            let rec = evaluate(cfg, spec, kind);
            (rec, start.elapsed())
        })
        .collect();
    let (checks, times): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let passed = checks.iter().filter(|c| c.pass).count();
    let report = ScenarioReport {
        tool: "cgkahler".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        scenario: cfg.name.clone(),
        config_hash: cfg.hash(),
        seed: cfg.seed,
        total: checks.len(),
        pass: passed == checks.len(),
        passed,
        checks,
    };
    (report, times)
}

pub fn verify_all(cfg: &ScenarioConfig) -> ScenarioReport {
    verify_all_timed(cfg).0
}
