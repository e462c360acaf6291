//! Computations behind the `mu`, `fut`, `spectrum` and `flow` subcommands.

use std::path::Path;

use cgkahler::expr::Expr;
use cgkahler::field_core::{dump_fields, Chart, Field};
use cgkahler::flow::{run_flow, FlowConfig, FlowState, TraceRow};
use cgkahler::geometry::GeometryState;
use cgkahler::moment_map::{calabi_functional, mean_and_stddev, mu_terms};
use cgkahler::operators::{interior_probes, lichnerowicz, rayleigh_ritz, trig_basis};
use serde::Serialize;

use crate::checks::{build_geometry, CheckError, Geometry, ScenarioField};
use crate::config::{BackendKind, ScenarioConfig};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MuSummary {
    pub scenario: String,
    pub resolution: usize,
    pub mean: f64,
    pub stddev: f64,
    /// `stddev / max(|mean|, max |Ric·Ric|, 1)`.
    pub relative_stddev: f64,
    pub max_abs: f64,
    pub calabi_functional: f64,
    pub volume: f64,
}

fn mu_of<F: Field>(
    cfg: &ScenarioConfig,
    geom: &GeometryState<F>,
    dump: Option<&Path>,
) -> Result<MuSummary, CheckError> {
    let terms = mu_terms(geom, geom.connection())?;
    let mu = terms.total();
    let (mean, stddev) = mean_and_stddev(geom, &mu)?;
    let scale = mean.abs().max(terms.ricci_square.max_abs()).max(1.0);
    if let Some(path) = dump {
        dump_fields(
            path,
            &[
                ("mu", &mu),
                ("ricci_square", &terms.ricci_square),
                ("density", geom.density()),
            ],
        )?;
    }
    Ok(MuSummary {
        scenario: cfg.name.clone(),
        resolution: cfg.geometry.resolution,
        mean,
        stddev,
        relative_stddev: stddev / scale,
        max_abs: mu.max_abs(),
        calabi_functional: calabi_functional(geom)?,
        volume: geom.volume()?,
    })
}

/// Statistics of `μ(∇^J)` on the primary potential; optionally dumps `μ`,
/// `Ric·Ric` and the volume density as CSV.
pub fn mu_summary(cfg: &ScenarioConfig, dump: Option<&Path>) -> Result<MuSummary, CheckError> {
    match build_geometry(cfg, cfg.geometry.resolution, &cfg.geometry.potential)? {
        Geometry::Torus(g) => mu_of(cfg, &g, dump),
        Geometry::Toric(g) => mu_of(cfg, &g, dump),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FutakiRow {
    pub function: String,
    pub primary: f64,
    pub alternate: Option<f64>,
}

fn futaki_rows<F: ScenarioField>(cfg: &ScenarioConfig) -> Result<Vec<FutakiRow>, CheckError> {
    let n = cfg.geometry.resolution;
    let geom = F::build(cfg, n, &cfg.geometry.potential)?;
    let other = cfg
        .geometry
        .alternate_potential
        .as_deref()
        .map(|p| F::build(cfg, n, p))
        .transpose()?;
    let mut rows = Vec::new();
    for (name, f) in F::kernel_elements(geom.chart())? {
        let alternate = match &other {
            Some(o) => {
                let g = F::from_expr(o.chart(), &Expr::parse(&name)?)?;
                Some(cgkahler::moment_map::futaki(o, &g)?)
            }
            None => None,
        };
        rows.push(FutakiRow {
            primary: cgkahler::moment_map::futaki(&geom, &f)?,
            function: name,
            alternate,
        });
    }
    Ok(rows)
}

/// Futaki invariant of every known kernel potential, on both potentials.
pub fn futaki_table(cfg: &ScenarioConfig) -> Result<Vec<FutakiRow>, CheckError> {
    match cfg.geometry.backend {
        BackendKind::Torus => futaki_rows::<cgkahler::field_core::GridField>(cfg),
        BackendKind::Toric => futaki_rows::<cgkahler::field_core::JetField>(cfg),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Spectrum {
    pub basis: String,
    pub values: Vec<f64>,
}

/// Rayleigh-Ritz values of `L` on `count` trigonometric modes (torus) or
/// facet-vanishing polynomial probes (toric).
pub fn spectrum(cfg: &ScenarioConfig, count: usize) -> Result<Spectrum, CheckError> {
    match build_geometry(cfg, cfg.geometry.resolution, &cfg.geometry.potential)? {
        Geometry::Torus(g) => {
            let basis = trig_basis(g.chart(), count);
            let values = rayleigh_ritz(&g, &lichnerowicz(&g)?, &basis)?;
            Ok(Spectrum {
                basis: format!("{count} lowest non-constant Fourier modes"),
                values,
            })
        }
        Geometry::Toric(g) => {
            let basis = toric_basis(g.chart(), count)?;
            let values = rayleigh_ritz(&g, &lichnerowicz(&g)?, &basis)?;
            Ok(Spectrum {
                basis: format!("{count} facet-vanishing polynomial probes"),
                values,
            })
        }
    }
}

fn toric_basis(
    chart: &std::sync::Arc<Chart>,
    count: usize,
) -> Result<Vec<cgkahler::field_core::JetField>, CheckError> {
    for degree in 0.. {
        let mut probes = interior_probes(chart, degree)?;
        if probes.len() >= count {
            probes.truncate(count);
            return Ok(probes);
        }
    }
    unreachable!("probe count grows with degree")
}

/// The scenario's flow configuration with an optional step-count override.
pub fn flow_config(cfg: &ScenarioConfig, steps: Option<usize>) -> FlowConfig {
    let mut flow = cfg.flow.clone().unwrap_or_default();
    if let Some(s) = steps {
        flow.max_steps = s;
    }
    flow
}

/// Runs the gradient flow of `Φ` from the primary potential.
pub fn run_scenario_flow(
    cfg: &ScenarioConfig,
    flow: &FlowConfig,
    on_step: impl FnMut(&TraceRow),
) -> Result<FlowState, CheckError> {
    if cfg.geometry.backend != BackendKind::Torus {
        return Err(CheckError::Unsupported(
            "the flow runs on torus geometries only",
        ));
    }
    let chart = Chart::torus(cfg.m(), cfg.geometry.resolution)?;
    Ok(run_flow(
        &Expr::parse(&cfg.geometry.potential)?,
        &chart,
        flow,
        on_step,
    )?)
}
