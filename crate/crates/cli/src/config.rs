//! Scenario files: TOML parsing, validation and the canonical hash.

use std::path::Path;

use cgkahler::expr::Expr;
use cgkahler::field_core::Polytope;
use cgkahler::flow::FlowConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::checks::CheckKind;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read scenario `{path}`: {message}")]
    Io { path: String, message: String },
    #[error("line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("`{key}`: unknown check `{name}`; known checks are {known}")]
    UnknownCheck {
        key: String,
        name: String,
        known: String,
    },
    #[error("`{key}`: {message}")]
    Invalid { key: String, message: String },
}

impl ConfigError {
    fn invalid(key: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError::Invalid {
            key: key.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Torus,
    Toric,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometrySpec {
    pub backend: BackendKind,
    /// Complex dimension; required to match the polytope on toric charts.
    #[serde(default)]
    pub m: Option<usize>,
    /// Grid points per axis (torus) or quadrature nodes per axis (toric).
    pub resolution: usize,
    pub potential: String,
    /// Second potential in the same class, used by `futaki_invariance`.
    #[serde(default)]
    pub alternate_potential: Option<String>,
    #[serde(default)]
    pub normals: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub offsets: Option<Vec<f64>>,
    #[serde(default = "default_jet_order")]
    pub jet_order: usize,
}

fn default_jet_order() -> usize {
    8
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckSpec {
    pub name: String,
    #[serde(default)]
    pub tolerance: Option<f64>,
    /// Number of random draws; the worst one is reported.
    #[serde(default)]
    pub samples: Option<usize>,
    /// Overrides `geometry.resolution` for this check.
    #[serde(default)]
    pub resolution: Option<usize>,
    /// Finite-difference step of checks that differentiate along a curve.
    #[serde(default)]
    pub step: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default)]
    pub report: Option<String>,
    #[serde(default)]
    pub trace: Option<String>,
    #[serde(default)]
    pub fields: Option<String>,
}

/// A validated scenario. After [`ScenarioConfig::parse`] every check has a
/// tolerance and a sample count, so the serialized form is the effective
/// configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub geometry: GeometrySpec,
    #[serde(default, rename = "check")]
    pub checks: Vec<CheckSpec>,
    #[serde(default)]
    pub flow: Option<FlowConfig>,
    #[serde(default)]
    pub output: OutputSpec,
}

const BUNDLED: [(&str, &str); 4] = [
    ("flat_torus", include_str!("../scenarios/flat_torus.toml")),
    (
        "perturbed_torus",
        include_str!("../scenarios/perturbed_torus.toml"),
    ),
    ("cp1", include_str!("../scenarios/cp1.toml")),
    ("f1_blowup", include_str!("../scenarios/f1_blowup.toml")),
];

/// Names of the scenarios compiled into the binary.
pub fn bundled_names() -> impl Iterator<Item = &'static str> {
    BUNDLED.iter().map(|(n, _)| *n)
}

/// Source text of a bundled scenario, by name with or without `.toml`.
pub fn bundled(name: &str) -> Option<&'static str> {
    let stem = name.strip_suffix(".toml").unwrap_or(name);
    let stem = if stem == "perturbed" {
        "perturbed_torus"
    } else {
        stem
    };
    BUNDLED
        .iter()
        .find(|(n, _)| *n == stem)
        .map(|(_, text)| *text)
}

impl ScenarioConfig {
    /// Reads `arg` as a file path, falling back to a bundled scenario name.
    pub fn load(arg: &str) -> Result<Self, ConfigError> {
        let path = Path::new(arg);
        if path.is_file() {
            let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
                path: arg.to_string(),
                message: e.to_string(),
            })?;
            return Self::parse(&text);
        }
        match bundled(arg) {
            Some(text) => Self::parse(text),
            None => Err(ConfigError::Io {
                path: arg.to_string(),
                message: format!(
                    "no such file and not a bundled scenario ({})",
                    bundled_names().collect::<Vec<_>>().join(", ")
                ),
            }),
        }
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg: ScenarioConfig = toml::from_str(text).map_err(|e| {
            let (line, column) = e.span().map_or((0, 0), |s| line_column(text, s.start));
            ConfigError::Parse {
                line,
                column,
                message: e.message().to_string(),
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&mut self) -> Result<(), ConfigError> {
        let geo = &self.geometry;
        Expr::parse(&geo.potential)
            .map_err(|e| ConfigError::invalid("geometry.potential", e.to_string()))?;
        if let Some(alt) = &geo.alternate_potential {
            Expr::parse(alt)
                .map_err(|e| ConfigError::invalid("geometry.alternate_potential", e.to_string()))?;
        }
        match geo.backend {
            BackendKind::Torus => {
                check_power_of_two("geometry.resolution", geo.resolution)?;
                if geo.normals.is_some() || geo.offsets.is_some() {
                    return Err(ConfigError::invalid(
                        "geometry.normals",
                        "a torus geometry takes no polytope",
                    ));
                }
                if !matches!(geo.m, Some(1..=2) | None) {
                    return Err(ConfigError::invalid(
                        "geometry.m",
                        "torus dimension must be 1 or 2",
                    ));
                }
            }
            BackendKind::Toric => {
                let poly = self.polytope()?.expect("toric backend");
                if geo.m.is_some_and(|m| m != poly.dim()) {
                    return Err(ConfigError::invalid(
                        "geometry.m",
                        "must equal the polytope dimension",
                    ));
                }
                if geo.resolution < 2 {
                    return Err(ConfigError::invalid(
                        "geometry.resolution",
                        "need at least 2 quadrature nodes",
                    ));
                }
            }
        }
        let known = CheckKind::ALL
            .iter()
            .map(|k| k.name())
            .collect::<Vec<_>>()
            .join(", ");
        for (i, spec) in self.checks.iter_mut().enumerate() {
            let kind =
                CheckKind::from_name(&spec.name).ok_or_else(|| ConfigError::UnknownCheck {
                    key: format!("check[{i}].name"),
                    name: spec.name.clone(),
                    known: known.clone(),
                })?;
            if kind.torus_only() && self.geometry.backend == BackendKind::Toric {
                return Err(ConfigError::invalid(
                    format!("check[{i}].name"),
                    "check needs a torus geometry",
                ));
            }
            if kind == CheckKind::FutakiInvariance && self.geometry.alternate_potential.is_none() {
                return Err(ConfigError::invalid(
                    "geometry.alternate_potential",
                    "futaki_invariance compares two potentials",
                ));
            }
            let tol = *spec.tolerance.get_or_insert(kind.default_tolerance());
            if !(tol > 0.0 && tol.is_finite()) {
                return Err(ConfigError::invalid(
                    format!("check[{i}].tolerance"),
                    "must be positive and finite",
                ));
            }
            let samples = *spec.samples.get_or_insert(kind.default_samples());
            if samples == 0 {
                return Err(ConfigError::invalid(
                    format!("check[{i}].samples"),
                    "must be at least 1",
                ));
            }
            if let Some(h) = spec.step {
                if !(h > 0.0 && h.is_finite()) {
                    return Err(ConfigError::invalid(
                        format!("check[{i}].step"),
                        "must be positive and finite",
                    ));
                }
            }
            if let Some(n) = spec.resolution {
                if self.geometry.backend == BackendKind::Torus {
                    check_power_of_two(&format!("check[{i}].resolution"), n)?;
                }
            }
        }
        if let Some(flow) = &self.flow {
            if !(flow.backtrack > 0.0 && flow.backtrack < 1.0) {
                return Err(ConfigError::invalid("flow.backtrack", "must lie in (0, 1)"));
            }
            if flow.growth < 1.0 || flow.eta0.is_nan() || flow.eta0 <= 0.0 {
                return Err(ConfigError::invalid(
                    "flow.eta0",
                    "step size must be positive and growth at least 1",
                ));
            }
        }
        Ok(())
    }

    /// The polytope of a toric geometry, `None` on a torus.
    pub fn polytope(&self) -> Result<Option<Polytope>, ConfigError> {
        let geo = &self.geometry;
        if geo.backend == BackendKind::Torus {
            return Ok(None);
        }
        let normals = geo
            .normals
            .clone()
            .ok_or_else(|| ConfigError::invalid("geometry.normals", "missing"))?;
        let offsets = geo
            .offsets
            .clone()
            .ok_or_else(|| ConfigError::invalid("geometry.offsets", "missing"))?;
        Polytope::new(normals, offsets)
            .map(Some)
            .map_err(|e| ConfigError::invalid("geometry.normals", e.to_string()))
    }

    /// Complex dimension.
    pub fn m(&self) -> usize {
        match self.geometry.backend {
            BackendKind::Torus => self.geometry.m.unwrap_or(1),
            BackendKind::Toric => self.geometry.normals.as_ref().map_or(0, |n| n[0].len()),
        }
    }

    pub fn kinds(&self) -> Vec<CheckKind> {
        self.checks
            .iter()
            .map(|c| CheckKind::from_name(&c.name).expect("validated"))
            .collect()
    }

    /// SHA-256 of the compact JSON form of the effective configuration.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&bytes)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

fn check_power_of_two(key: &str, n: usize) -> Result<(), ConfigError> {
    if n < 4 || !n.is_power_of_two() {
        return Err(ConfigError::invalid(
            key,
            format!("{n} is not a power of two >= 4"),
        ));
    }
    Ok(())
}

/// 1-based line and column of a byte offset.
fn line_column(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before
        .rfind('\n')
        .map_or(before.len(), |p| before.len() - p - 1)
        + 1;
    (line, column)
}
