//! The named verification checks a scenario can request.

use std::sync::Arc;

use cgkahler::expr::{Expr, ExprError};
use cgkahler::field_core::{
    random_complex_field, random_trig_expr, random_trig_field, Chart, Field, FieldError, GridField,
    JetField, Slot, Tensor,
};
use cgkahler::flow::FlowError;
use cgkahler::geometry::{
    build_toric_geometry, build_torus_geometry, Deformation, GeometryError, GeometryState,
};
use cgkahler::moment_map::{
    equivariance, futaki, moment_identity, mu_terms, three_way_agreement, MomentError, Residual,
    FD_STEP,
};
use cgkahler::operators::{
    hessian_form, interior_probes, lichnerowicz, mu_variation, poisson_relation, positivity_check,
    trig_basis, weak_kernel_residual, OperatorError, POTENTIAL_FD_STEP,
};
use num_complex::Complex64 as C64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::config::{BackendKind, CheckSpec, ScenarioConfig};

#[derive(Debug, Error)]
pub enum CheckError {
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Moment(#[from] MomentError),
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error("{0}")]
    Unsupported(&'static str),
}

/// A geometry on either backend.
pub enum Geometry {
    Torus(GeometryState<GridField>),
    Toric(GeometryState<JetField>),
}

/// Builds the scenario's geometry at `resolution` with the given potential.
pub fn build_geometry(
    cfg: &ScenarioConfig,
    resolution: usize,
    potential: &str,
) -> Result<Geometry, CheckError> {
    Ok(match cfg.geometry.backend {
        BackendKind::Torus => Geometry::Torus(GridField::build(cfg, resolution, potential)?),
        BackendKind::Toric => Geometry::Toric(JetField::build(cfg, resolution, potential)?),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckKind {
    MomentIdentity,
    Symmetry,
    ThreeWay,
    Equivariance,
    PoissonRelation,
    MuVariation,
    Positivity,
    Kernel,
    FutakiInvariance,
    HessianAtCritical,
    MuConstancy,
}

impl CheckKind {
    pub const ALL: [CheckKind; 11] = [
        CheckKind::MomentIdentity,
        CheckKind::Symmetry,
        CheckKind::ThreeWay,
        CheckKind::Equivariance,
        CheckKind::PoissonRelation,
        CheckKind::MuVariation,
        CheckKind::Positivity,
        CheckKind::Kernel,
        CheckKind::FutakiInvariance,
        CheckKind::HessianAtCritical,
        CheckKind::MuConstancy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CheckKind::MomentIdentity => "moment_identity",
            CheckKind::Symmetry => "symmetry",
            CheckKind::ThreeWay => "three_way",
            CheckKind::Equivariance => "equivariance",
            CheckKind::PoissonRelation => "poisson_relation",
            CheckKind::MuVariation => "mu_variation",
            CheckKind::Positivity => "positivity",
            CheckKind::Kernel => "kernel",
            CheckKind::FutakiInvariance => "futaki_invariance",
            CheckKind::HessianAtCritical => "hessian_at_critical",
            CheckKind::MuConstancy => "mu_constancy",
        }
    }

    pub fn from_name(name: &str) -> Option<CheckKind> {
        CheckKind::ALL.into_iter().find(|k| k.name() == name)
    }

    /// Label of the statement the check certifies.
    pub fn anchor(self) -> &'static str {
        match self {
            CheckKind::MomentIdentity => "Eq. moment2",
            CheckKind::Symmetry => "Lemma 3.1",
            CheckKind::ThreeWay => "Lemma 2.2",
            CheckKind::Equivariance => "Lemma 4.3",
            CheckKind::PoissonRelation => "Lemma 4.4",
            CheckKind::MuVariation => "Lemma 4.2",
            CheckKind::Positivity => "Eq. non-negative",
            CheckKind::Kernel => "Thm. 4.8(a)",
            CheckKind::FutakiInvariance => "Cor. 2.4",
            CheckKind::HessianAtCritical => "Thm. 4.7",
            CheckKind::MuConstancy => "Thm. 4.1",
        }
    }

    pub fn default_tolerance(self) -> f64 {
        match self {
            CheckKind::MomentIdentity
            | CheckKind::Kernel
            | CheckKind::FutakiInvariance
            | CheckKind::MuConstancy => 1e-6,
            CheckKind::Symmetry => 1e-9,
            CheckKind::ThreeWay | CheckKind::Positivity => 1e-8,
            CheckKind::Equivariance | CheckKind::PoissonRelation | CheckKind::MuVariation => 1e-5,
            CheckKind::HessianAtCritical => 1e-10,
        }
    }

    pub fn default_samples(self) -> usize {
        match self {
            CheckKind::MomentIdentity => 10,
            CheckKind::Symmetry | CheckKind::ThreeWay | CheckKind::Equivariance => 3,
            CheckKind::PoissonRelation | CheckKind::MuVariation | CheckKind::Positivity => 2,
            CheckKind::Kernel
            | CheckKind::FutakiInvariance
            | CheckKind::HessianAtCritical
            | CheckKind::MuConstancy => 1,
        }
    }

    /// Checks whose construction needs a periodic grid or symbolic potential
    /// shifts.
    pub fn torus_only(self) -> bool {
        matches!(self, CheckKind::MuVariation | CheckKind::HessianAtCritical)
    }
}

/// Both sides (when the check compares two numbers), the residual that is
/// held against the tolerance, and free-form context.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub lhs: Option<f64>,
    pub rhs: Option<f64>,
    pub residual: f64,
    pub detail: Option<String>,
}

impl Outcome {
    fn pair(lhs: f64, rhs: f64, residual: f64) -> Self {
        Outcome {
            lhs: Some(lhs),
            rhs: Some(rhs),
            residual,
            detail: None,
        }
    }

    fn single(residual: f64) -> Self {
        Outcome {
            lhs: None,
            rhs: None,
            residual,
            detail: None,
        }
    }

    fn with_detail(mut self, detail: String) -> Self {
        self.detail = Some(detail);
        self
    }
}

/// Field types a scenario can run on, with the random inputs each check
/// draws.
pub(crate) trait ScenarioField: Field {
    fn build(
        cfg: &ScenarioConfig,
        resolution: usize,
        potential: &str,
    ) -> Result<GeometryState<Self>, CheckError>;
    fn function(chart: &Arc<Chart>, rng: &mut ChaCha8Rng) -> Result<Self, CheckError>;
    fn complex_function(chart: &Arc<Chart>, rng: &mut ChaCha8Rng) -> Result<Self, CheckError>;
    /// Random symmetric 3-tensor that is smooth on the compact manifold.
    fn deformation(
        geom: &GeometryState<Self>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Deformation<Self>, CheckError>;
    /// Potentials known to lie in the kernel of `L`.
    fn kernel_elements(chart: &Arc<Chart>) -> Result<Vec<(String, Self)>, CheckError>;
    fn kernel_probes(chart: &Arc<Chart>) -> Result<Vec<Self>, CheckError>;
}

impl ScenarioField for GridField {
    fn build(
        cfg: &ScenarioConfig,
        resolution: usize,
        potential: &str,
    ) -> Result<GeometryState<Self>, CheckError> {
        let chart = Chart::torus(cfg.m(), resolution)?;
        Ok(build_torus_geometry(
            &Expr::parse(potential)?,
            cfg.m(),
            &chart,
        )?)
    }

    fn function(chart: &Arc<Chart>, rng: &mut ChaCha8Rng) -> Result<Self, CheckError> {
        Ok(random_trig_field(chart, 2, rng))
    }

    fn complex_function(chart: &Arc<Chart>, rng: &mut ChaCha8Rng) -> Result<Self, CheckError> {
        Ok(random_complex_field(chart, 3, rng))
    }

    fn deformation(
        geom: &GeometryState<Self>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Deformation<Self>, CheckError> {
        let n = geom.dim();
        let comps = (0..n * n * n)
            .map(|_| random_trig_field(geom.chart(), 2, rng))
            .collect();
        Ok(Deformation::symmetrized(&Tensor::from_comps(
            n,
            vec![Slot::Down; 3],
            comps,
        )?)?)
    }

    fn kernel_elements(chart: &Arc<Chart>) -> Result<Vec<(String, Self)>, CheckError> {
        Ok(vec![(
            "1".into(),
            GridField::constant(chart, C64::new(1.0, 0.0)),
        )])
    }

    fn kernel_probes(chart: &Arc<Chart>) -> Result<Vec<Self>, CheckError> {
        Ok(trig_basis(chart, 8))
    }
}

/// Random polynomial of total degree `<= degree` in the action coordinates.
fn random_polynomial(dim: usize, degree: u32, rng: &mut ChaCha8Rng) -> Expr {
    let mut out = Expr::constant(0.0);
    let mut exps = vec![0u32; dim];
    loop {
        if exps.iter().sum::<u32>() <= degree {
            let mut term = Expr::constant(rng.random_range(-1.0..1.0));
            for (a, &k) in exps.iter().enumerate() {
                if k > 0 {
                    term = Expr::mul(term, Expr::powi(Expr::var(a), k as i32));
                }
            }
            out = Expr::add(out, term);
        }
        let mut a = 0;
        loop {
            if a == dim {
                return out;
            }
            exps[a] += 1;
            if exps[a] <= degree {
                break;
            }
            exps[a] = 0;
            a += 1;
        }
    }
}

impl ScenarioField for JetField {
    fn build(
        cfg: &ScenarioConfig,
        resolution: usize,
        potential: &str,
    ) -> Result<GeometryState<Self>, CheckError> {
        let poly = cfg
            .polytope()
            .ok()
            .flatten()
            .ok_or(CheckError::Unsupported("toric geometry needs a polytope"))?;
        let chart = Chart::on_polytope(poly.clone(), resolution, cfg.geometry.jet_order)?;
        Ok(build_toric_geometry(
            &poly,
            &Expr::parse(potential)?,
            &chart,
        )?)
    }

    fn function(chart: &Arc<Chart>, rng: &mut ChaCha8Rng) -> Result<Self, CheckError> {
        Ok(JetField::from_expr(
            chart,
            &random_polynomial(chart.node_dim(), 3, rng),
        )?)
    }

    fn complex_function(chart: &Arc<Chart>, rng: &mut ChaCha8Rng) -> Result<Self, CheckError> {
        Self::function(chart, rng)
    }

    /// Components are `Π l_k⁴` times random quadratics, so the tensor
    /// vanishes to fourth order on the facets where the angle coordinates
    /// degenerate.
    fn deformation(
        geom: &GeometryState<Self>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Deformation<Self>, CheckError> {
        let chart = geom.chart();
        let bump = chart.polytope().expect("toric chart").facet_bump(4);
        let n = geom.dim();
        let comps = (0..n * n * n)
            .map(|_| {
                JetField::from_expr(
                    chart,
                    &Expr::mul(bump.clone(), random_polynomial(chart.node_dim(), 2, rng)),
                )
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Deformation::symmetrized(&Tensor::from_comps(
            n,
            vec![Slot::Down; 3],
            comps,
        )?)?)
    }

    fn kernel_elements(chart: &Arc<Chart>) -> Result<Vec<(String, Self)>, CheckError> {
        (0..chart.node_dim())
            .map(|a| {
                Ok((
                    format!("x{}", a + 1),
                    JetField::from_expr(chart, &Expr::var(a))?,
                ))
            })
            .collect()
    }

    fn kernel_probes(chart: &Arc<Chart>) -> Result<Vec<Self>, CheckError> {
        Ok(interior_probes(chart, 3)?)
    }
}

/// The outcome with the largest residual (NaN counts as largest).
fn worst(outcomes: Vec<Outcome>) -> Outcome {
    let n = outcomes.len();
    let mut it = outcomes.into_iter();
    let first = it.next().expect("at least one sample");
    let w = it.fold(first, |a, b| {
        if b.residual.is_nan() || b.residual > a.residual {
            b
        } else {
            a
        }
    });
    if n > 1 {
        let note = format!("worst of {n} samples");
        let detail = match w.detail {
            Some(d) => format!("{note}; {d}"),
            None => note,
        };
        Outcome {
            detail: Some(detail),
            ..w
        }
    } else {
        w
    }
}

fn sampled(
    samples: usize,
    mut one: impl FnMut() -> Result<Outcome, CheckError>,
) -> Result<Outcome, CheckError> {
    Ok(worst(
        (0..samples).map(|_| one()).collect::<Result<_, _>>()?,
    ))
}

/// Runs one check on a freshly built geometry.
pub fn run_check(
    cfg: &ScenarioConfig,
    spec: &CheckSpec,
    kind: CheckKind,
    rng: &mut ChaCha8Rng,
) -> Result<Outcome, CheckError> {
    let resolution = spec.resolution.unwrap_or(cfg.geometry.resolution);
    let samples = spec.samples.unwrap_or(kind.default_samples());
    let step = spec.step;
    match (kind, cfg.geometry.backend) {
        (CheckKind::MuVariation, BackendKind::Torus) => {
            mu_variation_check(cfg, resolution, samples, step, rng)
        }
        (CheckKind::HessianAtCritical, BackendKind::Torus) => {
            hessian_check(cfg, resolution, samples, rng)
        }
        (k, _) if k.torus_only() => Err(CheckError::Unsupported("check needs a torus geometry")),
        (_, BackendKind::Torus) => generic::<GridField>(cfg, kind, resolution, samples, step, rng),
        (_, BackendKind::Toric) => generic::<JetField>(cfg, kind, resolution, samples, step, rng),
    }
}

fn generic<F: ScenarioField>(
    cfg: &ScenarioConfig,
    kind: CheckKind,
    resolution: usize,
    samples: usize,
    step: Option<f64>,
    rng: &mut ChaCha8Rng,
) -> Result<Outcome, CheckError> {
    let geom = F::build(cfg, resolution, &cfg.geometry.potential)?;
    let chart = geom.chart().clone();
    match kind {
        CheckKind::MomentIdentity => sampled(samples, || {
            let f = F::function(&chart, rng)?;
            let a = F::deformation(&geom, rng)?;
            let id = moment_identity(&geom, &f, &a, step.unwrap_or(FD_STEP))?;
            Ok(Outcome::pair(id.fd.value, id.pairing, id.residual.residual))
        }),
        CheckKind::Symmetry => sampled(samples, || {
            let t = three_way_agreement(&geom, &F::function(&chart, rng)?)?;
            Ok(Outcome::single(t.symmetry))
        }),
        CheckKind::ThreeWay => sampled(samples, || {
            let t = three_way_agreement(&geom, &F::function(&chart, rng)?)?;
            Ok(Outcome::single(t.max_disagreement()).with_detail(format!("scale {:e}", t.scale)))
        }),
        CheckKind::Equivariance => sampled(samples, || {
            let h = F::function(&chart, rng)?;
            let f = F::function(&chart, rng)?;
            let r = equivariance(&geom, &h, &f)?;
            Ok(Outcome::pair(r.lhs, r.rhs, r.residual))
        }),
        CheckKind::PoissonRelation => {
            let op = lichnerowicz(&geom)?;
            sampled(samples, || {
                let r = poisson_relation(&geom, &op, &F::function(&chart, rng)?)?;
                let scale = r.lhs_norm.max(r.rhs_norm).max(r.scale);
                let residual = if scale > 0.0 {
                    r.difference / scale
                } else {
                    0.0
                };
                Ok(Outcome::pair(r.lhs_norm, r.rhs_norm, residual)
                    .with_detail(format!("|Lf| = {:e}", r.scale)))
            })
        }
        CheckKind::Positivity => {
            let op = lichnerowicz(&geom)?;
            sampled(samples, || {
                match positivity_check(&geom, &op, &F::complex_function(&chart, rng)?) {
                    Ok(p) => {
                        let residual = (-p.margin).max(0.0) / p.lhs.abs().max(p.rhs.abs()).max(1.0);
                        let d = (p.d1_norm_sq - p.d2_norm_sq).abs()
                            / p.d1_norm_sq.max(p.d2_norm_sq).max(1.0);
                        Ok(Outcome::pair(p.lhs, p.rhs, residual).with_detail(format!(
                            "min Ric {:e}; |D1f|^2 vs |D2f|^2 relative gap {d:e}",
                            p.min_ricci
                        )))
                    }
                    Err(OperatorError::RicciNotNonNegative { min_eigenvalue }) => {
                        Ok(Outcome::single(0.0).with_detail(format!(
                            "skipped: Ric has eigenvalue {min_eigenvalue:e} < 0"
                        )))
                    }
                    Err(e) => Err(e.into()),
                }
            })
        }
        CheckKind::Kernel => {
            let op = lichnerowicz(&geom)?;
            let probes = F::kernel_probes(&chart)?;
            let outcomes = F::kernel_elements(&chart)?
                .into_iter()
                .map(|(name, f)| {
                    let r = weak_kernel_residual(&geom, &op, &f, &probes)?;
                    Ok(Outcome::single(r)
                        .with_detail(format!("f = {name} against {} probes", probes.len())))
                })
                .collect::<Result<Vec<_>, CheckError>>()?;
            Ok(worst(outcomes))
        }
        CheckKind::FutakiInvariance => {
            let alt = cfg
                .geometry
                .alternate_potential
                .as_deref()
                .ok_or(CheckError::Unsupported("no alternate potential"))?;
            let other = F::build(cfg, resolution, alt)?;
            let mut values = Vec::new();
            let mut outcomes = Vec::new();
            for ((name, f), (_, g)) in F::kernel_elements(&chart)?
                .into_iter()
                .zip(F::kernel_elements(other.chart())?)
            {
                let (a, b) = (futaki(&geom, &f)?, futaki(&other, &g)?);
                values.push(format!("Fut({name}) = {a:.9e} / {b:.9e}"));
                let r = Residual::new(a, b);
                outcomes.push(Outcome::pair(a, b, r.residual));
            }
            Ok(worst(outcomes).with_detail(values.join("; ")))
        }
        CheckKind::MuConstancy => {
            let terms = mu_terms(&geom, geom.connection())?;
            let mu = terms.total();
            let (mean, stddev) = cgkahler::moment_map::mean_and_stddev(&geom, &mu)?;
            let scale = mean.abs().max(terms.ricci_square.max_abs()).max(1.0);
            Ok(Outcome::pair(mean, stddev, stddev / scale)
                .with_detail(format!("mean {mean:e}, stddev {stddev:e}")))
        }
        CheckKind::MuVariation | CheckKind::HessianAtCritical => unreachable!("dispatched before"),
    }
}

fn mu_variation_check(
    cfg: &ScenarioConfig,
    resolution: usize,
    samples: usize,
    step: Option<f64>,
    rng: &mut ChaCha8Rng,
) -> Result<Outcome, CheckError> {
    let geom = GridField::build(cfg, resolution, &cfg.geometry.potential)?;
    sampled(samples, || {
        let f = random_trig_expr(geom.chart().geo_dim(), 1, rng);
        let v = mu_variation(&geom, &f, step.unwrap_or(POTENTIAL_FD_STEP))?;
        Ok(
            Outcome::pair(v.fit.lhs_norm, v.fit.rhs_norm, v.fit.residual)
                .with_detail(format!("transport norm {:e}", v.transport_norm)),
        )
    })
}

/// `8 Re⟨f, L L̄ h⟩` against `8 Re⟨f, L̄ L h⟩`; the residual also covers
/// the relative commutator `‖(L L̄ - L̄ L) h‖ / ‖L L̄ h‖`.
fn hessian_check(
    cfg: &ScenarioConfig,
    resolution: usize,
    samples: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Outcome, CheckError> {
    let geom = GridField::build(cfg, resolution, &cfg.geometry.potential)?;
    let op = lichnerowicz(&geom)?;
    let chart = geom.chart().clone();
    sampled(samples, || {
        let f = random_trig_field(&chart, 1, rng);
        let h = random_trig_field(&chart, 1, rng);
        let form = hessian_form(&geom, &op, &f, &h)?;
        let swapped = 8.0 * geom.inner(&f, &op.apply_bar(&op.apply(&h)?)?)?.re;
        let r = Residual::new(form.value, swapped);
        Ok(Outcome::pair(
            form.value,
            swapped,
            r.residual.max(form.commutator_relative),
        )
        .with_detail(format!(
            "commutator relative {:e}",
            form.commutator_relative
        )))
    })
}
