//! Descent of `Φ = ∫ μ² ω_m` in Kähler-potential space on the torus.
//!
//! The potential is an expression plus a grid correction; each accepted step
//! adds `2η f*/‖f*‖` to the correction with `f* = -(L + L̄)μ` made mean-free,
//! so `η` is the L² length of the potential step over two.

use std::fmt::Write as _;
use std::sync::Arc;

use num_complex::Complex64 as C64;
use serde::Serialize;
use thiserror::Error;

use crate::expr::Expr;
use crate::field_core::{Chart, Field, FieldError, GridField};
use crate::geometry::{build_torus_geometry_corrected, GeometryError, GeometryState};
use crate::moment_map::{calabi_functional, mu_levi_civita};
use crate::operators::{lichnerowicz, OperatorError};

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("metric degenerated on every trial step down to eta = {eta:e}")]
    MetricDegenerated { eta: f64 },
    #[error("flow needs a periodic torus chart")]
    NotTorus,
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

impl From<FieldError> for FlowError {
    fn from(e: FieldError) -> Self {
        FlowError::Geometry(e.into())
    }
}

/// `Φ` for the Levi-Civita connection of `geom`.
pub fn phi<F: Field>(geom: &GeometryState<F>) -> Result<f64, GeometryError> {
    calabi_functional(geom)
}

/// `(L + L̄) μ`, which vanishes exactly at critical points of `Φ`.
///
/// `μ` is first restricted to `|k_a| ≤ N/4`: its top band holds rounding
/// noise amplified by four derivatives, which the six further derivatives of
/// `L + L̄` would otherwise lift above the resolution guard.
pub fn extremal_field(geom: &GeometryState<GridField>) -> Result<GridField, OperatorError> {
    let band = geom.chart().resolution().ok_or(OperatorError::NotTorus)? / 4;
    let mu = band_limit(&mu_levi_civita(geom)?, band)?;
    let op = lichnerowicz(geom)?;
    Ok(op.apply(&mu)?.add(&op.apply_bar(&mu)?).real())
}

/// `f* = -(L + L̄) μ` with zero mean. `dΦ` along the potential curve
/// `φ + 2tf` is `2⟨f, (L + L̄) μ⟩`, so this is the steepest descent direction.
pub fn descent_direction(geom: &GeometryState<GridField>) -> Result<GridField, OperatorError> {
    Ok(geom.mean_free(&extremal_field(geom)?)?.neg().real())
}

/// Orthogonal projection onto Fourier modes with `max_a |k_a| ≤ band`.
pub fn band_limit(f: &GridField, band: usize) -> Result<GridField, FieldError> {
    let band = band as i64;
    f.fourier_multiplier(|k| {
        if k.iter().all(|k| k.abs() <= band) {
            1.0
        } else {
            0.0
        }
    })
}

/// Expression potential plus grid correction.
#[derive(Debug, Clone)]
pub struct Potential {
    pub base: Expr,
    pub correction: GridField,
}

impl Potential {
    pub fn new(base: Expr, chart: &Arc<Chart>) -> Self {
        Potential {
            base,
            correction: GridField::zeros(chart),
        }
    }

    pub fn geometry(&self) -> Result<GeometryState<GridField>, GeometryError> {
        let chart = self.correction.chart();
        build_torus_geometry_corrected(&self.base, Some(&self.correction), chart.m(), chart)
    }

    /// `φ + s f`.
    pub fn shifted(&self, f: &GridField, s: f64) -> Potential {
        let mut correction = self.correction.clone();
        correction.axpy(C64::new(s, 0.0), f);
        Potential {
            base: self.base.clone(),
            correction,
        }
    }
}

/// Central difference quotient `[Φ(φ + 2tf) - Φ(φ - 2tf)] / 2t`, with one
/// Richardson level against `t/2`, compared with the
/// predicted `2⟨f, (L + L̄) μ⟩`, with `f` rescaled so its Hessian has unit
/// sup norm and `2t` bounds the metric change.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FirstVariation {
    pub t: f64,
    pub difference_quotient: f64,
    pub predicted: f64,
    pub relative: f64,
}

pub fn first_variation(
    potential: &Potential,
    geom: &GeometryState<GridField>,
    f: &GridField,
    t: f64,
) -> Result<FirstVariation, FlowError> {
    let chart = f.chart();
    let mut scale: f64 = 0.0;
    for a in 0..chart.geo_dim() {
        let da = f.deriv_unchecked(a)?;
        for b in a..chart.geo_dim() {
            scale = scale.max(da.deriv_unchecked(b)?.max_abs());
        }
    }
    if scale == 0.0 {
        return Ok(FirstVariation {
            t,
            difference_quotient: 0.0,
            predicted: 0.0,
            relative: 0.0,
        });
    }
    let f = &f.scale(C64::new(1.0 / scale, 0.0));
    let central = |s: f64| -> Result<f64, FlowError> {
        let forward = phi(&potential.shifted(f, 2.0 * s).geometry()?)?;
        let backward = phi(&potential.shifted(f, -2.0 * s).geometry()?)?;
        Ok((forward - backward) / (2.0 * s))
    };
    let difference_quotient = (4.0 * central(0.5 * t)? - central(t)?) / 3.0;
    let predicted = 2.0 * geom.inner(f, &extremal_field(geom)?)?.re;
    let relative = (difference_quotient - predicted).abs() / predicted.abs().max(f64::MIN_POSITIVE);
    Ok(FirstVariation {
        t,
        difference_quotient,
        predicted,
        relative,
    })
}

/// Positive Fourier multiplier applied to the gradient before the step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preconditioner {
    /// Plain steepest descent.
    #[default]
    None,
    /// Inverse square of the flat-torus symbol of `L + L̄`, `(4π⁶|k|⁶)⁻²`,
    /// which equalises the decay rates of all modes near a flat metric.
    FlatInverse,
}

impl Preconditioner {
    fn apply(self, f: &GridField, band: usize) -> Result<GridField, FieldError> {
        let band = band as i64;
        let pi6 = std::f64::consts::PI.powi(6);
        f.fourier_multiplier(|k| {
            if k.iter().any(|k| k.abs() > band) {
                return 0.0;
            }
            match self {
                Preconditioner::None => 1.0,
                Preconditioner::FlatInverse => {
                    let k2 = k.iter().map(|k| (k * k) as f64).sum::<f64>();
                    if k2 == 0.0 {
                        0.0
                    } else {
                        (4.0 * pi6 * k2.powi(3)).powi(-2)
                    }
                }
            }
        })
    }
}

#[derive(Debug, Clone, Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowConfig {
    pub max_steps: usize,
    /// Initial step size.
    pub eta0: f64,
    /// Factor applied to `η` on a rejected trial, in `(0, 1)`.
    pub backtrack: f64,
    /// Factor applied to `η` after an accepted step, `≥ 1`.
    pub growth: f64,
    /// Stop once `‖(L + L̄) μ‖ ≤ tol`.
    pub tol: f64,
    /// Give up once `η` falls below this.
    pub eta_min: f64,
    /// Run the first-variation check every this many steps; 0 disables it.
    pub consistency_every: usize,
    /// Difference step of the first-variation check.
    pub consistency_t: f64,
    pub preconditioner: Preconditioner,
    /// Steps are restricted to Fourier modes with `|k_a| ≤ band`; `None`
    /// means `N/8`. The projected gradient is still a descent direction.
    pub band: Option<usize>,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            max_steps: 200,
            eta0: 1e-3,
            backtrack: 0.5,
            growth: 2.0,
            tol: 1e-10,
            eta_min: 1e-30,
            consistency_every: 10,
            consistency_t: 1e-4,
            band: None,
            preconditioner: Preconditioner::None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRow {
    pub step: usize,
    pub phi: f64,
    pub residual: f64,
    pub eta: f64,
    pub min_metric_eig: f64,
}

pub const TRACE_HEADER: &str = "step,phi,residual,eta,min_metric_eig";

impl TraceRow {
    /// One CSV line matching [`TRACE_HEADER`], without the newline.
    pub fn csv_line(&self) -> String {
        format!(
            "{},{:e},{:e},{:e},{:e}",
            self.step, self.phi, self.residual, self.eta, self.min_metric_eig
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    MaxSteps,
    StepUnderflow,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConsistencyRecord {
    pub step: usize,
    pub check: FirstVariation,
}

#[derive(Debug, Clone)]
pub struct FlowState {
    pub potential: Potential,
    pub steps: usize,
    pub eta: f64,
    pub phi: f64,
    /// `‖(L + L̄) μ‖`.
    pub residual: f64,
    pub min_metric_eig: f64,
    pub rejected: usize,
    pub trace: Vec<TraceRow>,
    pub consistency: Vec<ConsistencyRecord>,
    pub termination: Termination,
}

/// JSON-facing summary of a finished flow.
#[derive(Debug, Clone, Serialize)]
pub struct FlowSummary {
    pub base_potential: String,
    pub correction_max_abs: f64,
    pub steps: usize,
    pub rejected: usize,
    pub eta: f64,
    pub initial_phi: f64,
    pub phi: f64,
    pub initial_residual: f64,
    pub residual: f64,
    pub min_metric_eig: f64,
    pub max_consistency_relative: f64,
    pub termination: Termination,
}

impl FlowState {
    pub fn summary(&self) -> FlowSummary {
        let first = self.trace.first().copied().unwrap_or(TraceRow {
            step: 0,
            phi: self.phi,
            residual: self.residual,
            eta: self.eta,
            min_metric_eig: self.min_metric_eig,
        });
        FlowSummary {
            base_potential: self.potential.base.to_string(),
            correction_max_abs: self.potential.correction.max_abs(),
            steps: self.steps,
            rejected: self.rejected,
            eta: self.eta,
            initial_phi: first.phi,
            phi: self.phi,
            initial_residual: first.residual,
            residual: self.residual,
            min_metric_eig: self.min_metric_eig,
            max_consistency_relative: self
                .consistency
                .iter()
                .map(|c| c.check.relative)
                .fold(0.0, f64::max),
            termination: self.termination,
        }
    }

    pub fn trace_csv(&self) -> String {
        let mut out = format!("{TRACE_HEADER}\n");
        for r in &self.trace {
            writeln!(out, "{}", r.csv_line()).expect("writing to a String cannot fail");
        }
        out
    }

    /// Every accepted step strictly decreased `Φ`.
    pub fn is_monotone(&self) -> bool {
        self.trace.windows(2).all(|w| w[1].phi < w[0].phi)
    }
}

/// Trial states whose fields outrun the grid are rejected like uphill ones.
fn is_under_resolved(e: &FlowError) -> bool {
    matches!(
        e,
        FlowError::Geometry(GeometryError::Field(FieldError::Nyquist { .. }))
            | FlowError::Operator(OperatorError::Geometry(GeometryError::Field(
                FieldError::Nyquist { .. }
            )))
    )
}

fn min_metric_eig(geom: &GeometryState<GridField>) -> Result<f64, GeometryError> {
    Ok(geom.validate()?.min_metric_eigenvalue)
}

/// Steepest descent with backtracking: a trial step is accepted iff it keeps
/// the metric positive and strictly lowers `Φ`. `on_step` sees every trace
/// row as it is produced.
pub fn run_flow(
    initial: &Expr,
    chart: &Arc<Chart>,
    config: &FlowConfig,
    mut on_step: impl FnMut(&TraceRow),
) -> Result<FlowState, FlowError> {
    let Some(n) = chart.resolution() else {
        return Err(FlowError::NotTorus);
    };
    let band = config.band.unwrap_or(n / 8);
    // (projected direction, ‖(L + L̄)μ - mean‖, ‖projected direction‖)
    let descend = |geom: &GeometryState<GridField>| -> Result<(GridField, f64, f64), FlowError> {
        let full = descent_direction(geom)?;
        let step = config.preconditioner.apply(&full, band)?;
        let (r, s) = (geom.norm(&full)?, geom.norm(&step)?);
        Ok((step, r, s))
    };
    let mut potential = Potential::new(initial.clone(), chart);
    let mut geom = potential.geometry()?;
    let mut value = phi(&geom)?;
    let (mut direction, mut residual, mut step_norm) = descend(&geom)?;
    let mut eta = config.eta0;
    let mut row = TraceRow {
        step: 0,
        phi: value,
        residual,
        eta,
        min_metric_eig: min_metric_eig(&geom)?,
    };
    on_step(&row);
    let mut trace = vec![row];
    let mut consistency = Vec::new();
    let mut rejected = 0;
    let mut steps = 0;
    let termination = loop {
        if residual <= config.tol || step_norm == 0.0 {
            break Termination::Converged;
        }
        if steps >= config.max_steps {
            break Termination::MaxSteps;
        }
        if config.consistency_every > 0 && steps % config.consistency_every == 0 {
            let check = first_variation(&potential, &geom, &direction, config.consistency_t)?;
            consistency.push(ConsistencyRecord { step: steps, check });
        }
        let mut degenerated = false;
        let accepted = loop {
            if eta < config.eta_min {
                break None;
            }
            let trial = potential.shifted(&direction, 2.0 * eta / step_norm);
            match trial.geometry().and_then(|g| Ok((phi(&g)?, g))) {
                Ok((v, g)) if v < value => match descend(&g) {
                    Ok(next) => break Some((trial, g, v, next)),
                    Err(e) if is_under_resolved(&e) => {}
                    Err(e) => return Err(e),
                },
                Ok(_) => {}
                Err(GeometryError::NonPositiveMetric { .. }) => degenerated = true,
                Err(GeometryError::Field(FieldError::Nyquist { .. })) => {}
                Err(e) => return Err(e.into()),
            }
            rejected += 1;
            eta *= config.backtrack;
        };
        let Some((p, g, v, next)) = accepted else {
            if degenerated {
                return Err(FlowError::MetricDegenerated { eta });
            }
            break Termination::StepUnderflow;
        };
        steps += 1;
        potential = p;
        geom = g;
        value = v;
        (direction, residual, step_norm) = next;
        row = TraceRow {
            step: steps,
            phi: value,
            residual,
            eta,
            min_metric_eig: min_metric_eig(&geom)?,
        };
        on_step(&row);
        trace.push(row);
        eta *= config.growth;
    };
    Ok(FlowState {
        potential,
        steps,
        eta,
        phi: value,
        residual,
        min_metric_eig: row.min_metric_eig,
        rejected,
        trace,
        consistency,
        termination,
    })
}
