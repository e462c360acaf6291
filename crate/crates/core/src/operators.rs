//! Third covariant derivatives in the complex frame, the sixth-order
//! Lichnerowicz operators `L` and `L̄` assembled from them, and the identities
//! tying them to the moment map.
//!
//! `L` is never written in strong form. It is the composition
//! `ρ⁻¹ (3 D1ᴴ W₁ D1 - D2ᴴ W₂ D2)` where `ᴴ` is the coordinate adjoint and
//! `W` carries the Hermitian frame weights and the density `ρ`, so
//! `⟨h, L f⟩ = 3⟨D1 h, D1 f⟩ - ⟨D2 h, D2 f⟩` holds by construction.

use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64 as C64;
use serde::Serialize;
use thiserror::Error;

use crate::expr::Expr;
use crate::field_core::{
    compose_adjoint, inner_product, Chart, ElementaryMap, Field, FieldError, GridField,
    LinearOperatorHandle, Pointwise, Slot, Tensor,
};
use crate::geometry::{
    build_torus_geometry, build_torus_geometry_from_field, covariant_derivative,
    covariant_derivative_adjoint, ricci, split_gradient, Backend, GeometryError, GeometryState,
};
use crate::moment_map::{calabi_functional, mu_levi_civita, MomentError, STEP_GUARD};

const ONE: C64 = C64::new(1.0, 0.0);
const I: C64 = C64::new(0.0, 1.0);

/// Frame kinds of `D1 f = ∇_i ∇_j̄ ∇_k̄ f`, listed in differentiation order
/// (slot 0 is `k̄`, differentiated first).
pub const D1_KINDS: [Slot; 3] = [Slot::AntiHol, Slot::AntiHol, Slot::Hol];
/// Frame kinds of `D2 f = ∇_ī ∇_j̄ ∇_k̄ f`.
pub const D2_KINDS: [Slot; 3] = [Slot::AntiHol; 3];
/// Smallest Ricci eigenvalue for which the positivity inequality is asserted.
pub const RICCI_GATE: f64 = -1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OperatorError {
    #[error("Ricci curvature is not non-negative (minimum eigenvalue {min_eigenvalue:.6e}); positivity check skipped")]
    RicciNotNonNegative { min_eigenvalue: f64 },
    #[error("potential-picture variations need the torus backend")]
    NotTorus,
    #[error(transparent)]
    Moment(#[from] MomentError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

impl From<FieldError> for OperatorError {
    fn from(e: FieldError) -> Self {
        OperatorError::Geometry(GeometryError::Field(e))
    }
}

// Slots handed to the covariant derivative are real, so only field errors
// can come back.
fn field_error(e: GeometryError) -> FieldError {
    match e {
        GeometryError::Field(f) => f,
        other => FieldError::InvalidChart(other.to_string()),
    }
}

/// `T ↦ ∇T` on covariant tensors of the given rank.
struct CovariantDerivativeMap<F: Field> {
    gamma: Tensor<F>,
    rank: usize,
}

impl<F: Field> ElementaryMap<F> for CovariantDerivativeMap<F> {
    fn name(&self) -> String {
        format!("nabla{}", self.rank)
    }
    fn in_len(&self) -> usize {
        self.gamma.dim().pow(self.rank as u32)
    }
    fn out_len(&self) -> usize {
        self.gamma.dim().pow(self.rank as u32 + 1)
    }
    fn apply(&self, x: &[F]) -> Result<Vec<F>, FieldError> {
        let t = Tensor::from_comps(self.gamma.dim(), vec![Slot::Down; self.rank], x.to_vec())?;
        Ok(covariant_derivative(&self.gamma, &t)
            .map_err(field_error)?
            .into_comps())
    }
    fn adjoint(&self, y: &[F]) -> Result<Vec<F>, FieldError> {
        let s = Tensor::from_comps(
            self.gamma.dim(),
            vec![Slot::Down; self.rank + 1],
            y.to_vec(),
        )?;
        let out = covariant_derivative_adjoint(&self.gamma, &s, &vec![Slot::Down; self.rank])
            .map_err(field_error)?;
        Ok(out.into_comps())
    }
}

/// Swaps `apply` and `adjoint` of a handle.
struct AdjointOf<F: Field>(LinearOperatorHandle<F>);

impl<F: Field> ElementaryMap<F> for AdjointOf<F> {
    fn name(&self) -> String {
        format!("adj({})", self.0.describe())
    }
    fn in_len(&self) -> usize {
        self.0.out_len()
    }
    fn out_len(&self) -> usize {
        self.0.in_len()
    }
    fn apply(&self, x: &[F]) -> Result<Vec<F>, FieldError> {
        self.0.adjoint_apply(x)
    }
    fn adjoint(&self, y: &[F]) -> Result<Vec<F>, FieldError> {
        self.0.apply(y)
    }
}

fn digits(mut k: usize, base: usize, len: usize) -> Vec<usize> {
    let mut out = vec![0; len];
    for d in out.iter_mut().rev() {
        *d = k % base;
        k /= base;
    }
    out
}

/// Pointwise evaluation of a lowered real tensor on frame vectors.
fn frame_projection<F: Field>(geom: &GeometryState<F>, kinds: &[Slot]) -> Pointwise<F> {
    let (n, m, r) = (geom.dim(), geom.m(), kinds.len());
    let vec_of = |k: Slot, a: usize, i: usize| -> F {
        match k {
            Slot::Hol => geom.frame()[a][i].clone(),
            _ => geom.frame()[a][i].conj(),
        }
    };
    let mut entries = Vec::new();
    for row in 0..m.pow(r as u32) {
        let a = digits(row, m, r);
        'col: for col in 0..n.pow(r as u32) {
            let i = digits(col, n, r);
            let mut coef = F::constant(geom.chart(), ONE);
            for s in 0..r {
                let v = vec_of(kinds[s], a[s], i[s]);
                if v.max_abs() == 0.0 {
                    continue 'col;
                }
                coef = coef.mul(&v);
            }
            entries.push((row, col, coef));
        }
    }
    Pointwise {
        label: "frame".into(),
        rows: m.pow(r as u32),
        cols: n.pow(r as u32),
        entries,
    }
}

/// `ρ W` with `W` the Hermitian inner product on frame components: `Q_{ab}`
/// for an antiholomorphic slot and `Q_{ba}` for a holomorphic one.
fn hermitian_weight<F: Field>(geom: &GeometryState<F>, kinds: &[Slot]) -> Pointwise<F> {
    let (m, r) = (geom.m(), kinds.len());
    let q = geom.frame_q();
    let w = |k: Slot, a: usize, b: usize| -> &F {
        match k {
            Slot::Hol => &q[b * m + a],
            _ => &q[a * m + b],
        }
    };
    let len = m.pow(r as u32);
    let mut entries = Vec::new();
    for row in 0..len {
        let a = digits(row, m, r);
        'col: for col in 0..len {
            let b = digits(col, m, r);
            let mut coef = geom.density().clone();
            for s in 0..r {
                let v = w(kinds[s], a[s], b[s]);
                if v.max_abs() == 0.0 {
                    continue 'col;
                }
                coef = coef.mul(v);
            }
            entries.push((row, col, coef));
        }
    }
    Pointwise {
        label: "weight".into(),
        rows: len,
        cols: len,
        entries,
    }
}

fn third_derivative<F: Field>(
    geom: &GeometryState<F>,
    kinds: &[Slot],
) -> Result<LinearOperatorHandle<F>, FieldError> {
    let gamma = geom.connection().gamma().clone();
    let nabla = |rank| -> Arc<dyn ElementaryMap<F>> {
        Arc::new(CovariantDerivativeMap {
            gamma: gamma.clone(),
            rank,
        })
    };
    compose_adjoint(vec![
        nabla(0),
        nabla(1),
        nabla(2),
        Arc::new(frame_projection(geom, kinds)),
    ])
}

/// The Lichnerowicz operator `L` of a Kähler geometry and its conjugate
/// `L̄u = conj(L conj u)`.
#[derive(Clone)]
pub struct SixthOrderOperator<F: Field> {
    d1: LinearOperatorHandle<F>,
    d2: LinearOperatorHandle<F>,
    w1: Arc<Pointwise<F>>,
    w2: Arc<Pointwise<F>>,
    /// `3 D1ᴴ W₁ D1 - D2ᴴ W₂ D2`, self-adjoint for the coordinate pairing.
    weak: LinearOperatorHandle<F>,
    handle: LinearOperatorHandle<F>,
    inv_density: F,
    m: usize,
}

impl<F: Field> std::fmt::Debug for SixthOrderOperator<F> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "SixthOrderOperator({})", self.handle.describe())
    }
}

pub fn lichnerowicz<F: Field>(
    geom: &GeometryState<F>,
) -> Result<SixthOrderOperator<F>, OperatorError> {
    let d1 = third_derivative(geom, &D1_KINDS)?;
    let d2 = third_derivative(geom, &D2_KINDS)?;
    let w1 = Arc::new(hermitian_weight(geom, &D1_KINDS));
    let w2 = Arc::new(hermitian_weight(geom, &D2_KINDS));
    let square = |d: &LinearOperatorHandle<F>,
                  w: &Arc<Pointwise<F>>|
     -> Result<LinearOperatorHandle<F>, FieldError> {
        compose_adjoint(vec![
            Arc::new(d.clone()),
            w.clone(),
            Arc::new(AdjointOf(d.clone())),
        ])
    };
    let weak = LinearOperatorHandle::sum(vec![
        (C64::new(3.0, 0.0), square(&d1, &w1)?),
        (-ONE, square(&d2, &w2)?),
    ])?;
    let inv_density = geom.density().recip()?;
    let handle = compose_adjoint(vec![
        Arc::new(weak.clone()),
        Arc::new(Pointwise::scalar(inv_density.clone())),
    ])?;
    Ok(SixthOrderOperator {
        d1,
        d2,
        w1,
        w2,
        weak,
        handle,
        inv_density,
        m: geom.m(),
    })
}

impl<F: Field> SixthOrderOperator<F> {
    /// `L` as a matrix-free handle on scalar fields.
    pub fn handle(&self) -> &LinearOperatorHandle<F> {
        &self.handle
    }

    /// The coordinate-self-adjoint weak form `ρ L`.
    pub fn weak_handle(&self) -> &LinearOperatorHandle<F> {
        &self.weak
    }

    pub fn apply(&self, f: &F) -> Result<F, OperatorError> {
        Ok(self.weak.apply_scalar(f)?.mul(&self.inv_density))
    }

    /// `L̄u = conj(L conj u)`.
    pub fn apply_bar(&self, u: &F) -> Result<F, OperatorError> {
        Ok(self.apply(&u.conj())?.conj())
    }

    pub fn d1(&self, f: &F) -> Result<Tensor<F>, OperatorError> {
        Ok(Tensor::from_comps(
            self.m,
            D1_KINDS.to_vec(),
            self.d1.apply(std::slice::from_ref(f))?,
        )?)
    }

    pub fn d2(&self, f: &F) -> Result<Tensor<F>, OperatorError> {
        Ok(Tensor::from_comps(
            self.m,
            D2_KINDS.to_vec(),
            self.d2.apply(std::slice::from_ref(f))?,
        )?)
    }

    fn weighted(w: &Pointwise<F>, a: &Tensor<F>, b: &Tensor<F>) -> Result<C64, OperatorError> {
        let wb = w.apply(b.comps())?;
        let mut acc = C64::new(0.0, 0.0);
        for (x, y) in a.comps().iter().zip(&wb) {
            acc += inner_product(x, y)?;
        }
        Ok(acc)
    }

    /// `⟨D1 h, D1 f⟩` with the Hermitian frame metric and geometric measure.
    pub fn d1_inner(&self, h: &F, f: &F) -> Result<C64, OperatorError> {
        Self::weighted(&self.w1, &self.d1(h)?, &self.d1(f)?)
    }

    pub fn d2_inner(&self, h: &F, f: &F) -> Result<C64, OperatorError> {
        Self::weighted(&self.w2, &self.d2(h)?, &self.d2(f)?)
    }

    /// `3⟨D1 h, D1 f⟩ - ⟨D2 h, D2 f⟩`, the defining form of `⟨h, L f⟩`.
    pub fn weak_form(&self, h: &F, f: &F) -> Result<C64, OperatorError> {
        Ok(self.d1_inner(h, f)? * 3.0 - self.d2_inner(h, f)?)
    }
}

pub fn d1<F: Field>(geom: &GeometryState<F>, f: &F) -> Result<Tensor<F>, OperatorError> {
    Ok(Tensor::from_comps(
        geom.m(),
        D1_KINDS.to_vec(),
        third_derivative(geom, &D1_KINDS)?.apply(std::slice::from_ref(f))?,
    )?)
}

pub fn d2<F: Field>(geom: &GeometryState<F>, f: &F) -> Result<Tensor<F>, OperatorError> {
    Ok(Tensor::from_comps(
        geom.m(),
        D2_KINDS.to_vec(),
        third_derivative(geom, &D2_KINDS)?.apply(std::slice::from_ref(f))?,
    )?)
}

/// `|⟨h, L f⟩ - conj⟨f, L h⟩| / (‖h‖‖Lf‖ + ‖f‖‖Lh‖)` in the geometric
/// inner product.
pub fn self_adjointness_defect<F: Field>(
    geom: &GeometryState<F>,
    op: &SixthOrderOperator<F>,
    f: &F,
    h: &F,
) -> Result<f64, OperatorError> {
    let (lf, lh) = (op.apply(f)?, op.apply(h)?);
    let a = geom.inner(h, &lf)?;
    let b = geom.inner(f, &lh)?.conj();
    let scale = geom.norm(h)? * geom.norm(&lf)? + geom.norm(f)? * geom.norm(&lh)?;
    Ok(if scale > 0.0 {
        (a - b).norm() / scale
    } else {
        0.0
    })
}

/// `{h, f} = X_h f`.
pub fn poisson_bracket<F: Field>(
    geom: &GeometryState<F>,
    h: &F,
    f: &F,
) -> Result<F, GeometryError> {
    let xh = split_gradient(geom, h)?.hamiltonian;
    let mut out = F::zeros(geom.chart());
    for (i, xi) in xh.iter().enumerate() {
        out.fma(ONE, xi, &f.deriv(i)?);
    }
    Ok(out)
}

/// `√-1 (f^α h_α - f_α h^α)`, the complex-frame form of `{h, f}`.
pub fn poisson_bracket_complex<F: Field>(
    geom: &GeometryState<F>,
    h: &F,
    f: &F,
) -> Result<F, GeometryError> {
    let sf = split_gradient(geom, f)?;
    let sh = split_gradient(geom, h)?;
    let (df, dh) = (gradient(f)?, gradient(h)?);
    let mut out = F::zeros(geom.chart());
    for a in 0..geom.m() {
        let (mut ef, mut eh) = (F::zeros(geom.chart()), F::zeros(geom.chart()));
        for (i, e) in geom.frame()[a].iter().enumerate() {
            ef.fma(ONE, e, &df[i]);
            eh.fma(ONE, e, &dh[i]);
        }
        out.fma(I, &sf.hol_coeffs[a], &eh);
        out.fma(-I, &ef, &sh.hol_coeffs[a]);
    }
    Ok(out)
}

fn gradient<F: Field>(f: &F) -> Result<Vec<F>, FieldError> {
    (0..f.chart().geo_dim()).map(|k| f.deriv(k)).collect()
}

/// `(X) u = Σ X^i ∂_i u`.
fn directional<F: Field>(x: &[F], u: &F) -> Result<F, FieldError> {
    let mut out = F::zeros(u.chart());
    for (i, xi) in x.iter().enumerate() {
        out.fma(ONE, xi, &u.deriv(i)?);
    }
    Ok(out)
}

/// L² sizes of the two sides of a field identity. `residual` is relative to
/// the larger side; `against_scale` is relative to an external scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FieldResidual {
    pub lhs_norm: f64,
    pub rhs_norm: f64,
    pub difference: f64,
    pub residual: f64,
    pub scale: f64,
    pub against_scale: f64,
}

impl FieldResidual {
    fn new<F: Field>(
        geom: &GeometryState<F>,
        lhs: &F,
        rhs: &F,
        scale: f64,
    ) -> Result<Self, GeometryError> {
        let (lhs_norm, rhs_norm) = (geom.norm(lhs)?, geom.norm(rhs)?);
        let difference = geom.norm(&lhs.sub(rhs))?;
        let side = lhs_norm.max(rhs_norm);
        Ok(FieldResidual {
            lhs_norm,
            rhs_norm,
            difference,
            residual: if side > 0.0 { difference / side } else { 0.0 },
            scale,
            against_scale: if scale > 0.0 { side / scale } else { side },
        })
    }
}

/// `(L̄ - L) f` against `√-1 {f, μ}` on a Levi-Civita geometry. The external
/// scale is `‖L f‖`.
pub fn poisson_relation<F: Field>(
    geom: &GeometryState<F>,
    op: &SixthOrderOperator<F>,
    f: &F,
) -> Result<FieldResidual, OperatorError> {
    let lf = op.apply(f)?;
    let lhs = op.apply_bar(f)?.sub(&lf);
    let mu = mu_levi_civita(geom)?;
    let rhs = poisson_bracket(geom, f, &mu)?.scale(I);
    Ok(FieldResidual::new(geom, &lhs, &rhs, geom.norm(&lf)?)?)
}

pub fn poisson_relation_residual<F: Field>(
    geom: &GeometryState<F>,
    f: &F,
) -> Result<f64, OperatorError> {
    Ok(poisson_relation(geom, &lichnerowicz(geom)?, f)?.residual)
}

/// Default step for derivatives along potential curves. `μ` depends on the
/// potential through up to six derivatives, so the curve bends faster than
/// the connection line and wants a smaller step than the moment identity.
pub const POTENTIAL_FD_STEP: f64 = 1e-4;

/// Torus geometry with potential `φ + s f`. Expression potentials stay
/// symbolic so the Hessian is exact.
pub fn shifted_potential(
    geom: &GeometryState<GridField>,
    f: &Expr,
    s: f64,
) -> Result<GeometryState<GridField>, OperatorError> {
    match geom.backend() {
        Backend::Torus {
            expr: Some(phi), ..
        } => {
            let e = Expr::add(phi.clone(), Expr::mul(Expr::constant(s), f.clone()));
            Ok(build_torus_geometry(&e, geom.m(), geom.chart())?)
        }
        Backend::Torus {
            potential,
            expr: None,
        } => {
            let shifted =
                potential.add(&GridField::from_expr(geom.chart(), f)?.scale(C64::new(s, 0.0)));
            Ok(build_torus_geometry_from_field(&shifted)?)
        }
        Backend::Toric { .. } => Err(OperatorError::NotTorus),
    }
}

/// Central difference of a field-valued curve with one Richardson level and
/// the same step guard as the scalar moment identity (on L² norms).
fn field_derivative(
    geom: &GeometryState<GridField>,
    h: f64,
    mut curve: impl FnMut(f64) -> Result<GridField, OperatorError>,
) -> Result<GridField, OperatorError> {
    let mut diff = |s: f64| -> Result<GridField, OperatorError> {
        Ok(curve(s)?.sub(&curve(-s)?).scale(C64::new(0.5 / s, 0.0)))
    };
    let coarse = diff(h)?;
    let fine = diff(0.5 * h)?;
    let (nc, nf) = (geom.norm(&coarse)?, geom.norm(&fine)?);
    if geom.norm(&coarse.sub(&fine))? > STEP_GUARD * nc.max(nf).max(1.0) {
        return Err(MomentError::StepTooLarge {
            h,
            coarse: nc,
            fine: nf,
        }
        .into());
    }
    Ok(fine
        .scale(C64::new(4.0 / 3.0, 0.0))
        .sub(&coarse.scale(C64::new(1.0 / 3.0, 0.0))))
}

/// The first variation of μ under a potential change, in the fixed-ω
/// picture. The curve `φ + 2tf` changes `ω` by `L_{JX_f}ω`; pulling back by
/// the Moser flow of `-JX_f` turns it into `J̇ = -L_{JX_f}J` at fixed `ω`,
/// along which `μ̇ = FD_t μ(φ + 2tf) - (JX_f) μ`. This is compared with
/// `(L + L̄) f`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MuVariation {
    pub potential_derivative_norm: f64,
    pub transport_norm: f64,
    pub fit: FieldResidual,
}

pub fn mu_variation(
    geom: &GeometryState<GridField>,
    f: &Expr,
    h: f64,
) -> Result<MuVariation, OperatorError> {
    let fg = GridField::from_expr(geom.chart(), f)?;
    let dmu = field_derivative(geom, h, |t| {
        Ok(mu_levi_civita(&shifted_potential(geom, f, 2.0 * t)?)?)
    })?;
    let mu = mu_levi_civita(geom)?;
    let transport = directional(&j_hamiltonian(geom, &fg)?, &mu)?;
    let lhs = dmu.sub(&transport);
    let op = lichnerowicz(geom)?;
    let rhs = op.apply(&fg)?.add(&op.apply_bar(&fg)?);
    Ok(MuVariation {
        potential_derivative_norm: geom.norm(&dmu)?,
        transport_norm: geom.norm(&transport)?,
        fit: FieldResidual::new(geom, &lhs, &rhs, geom.norm(&rhs)?)?,
    })
}

pub fn mu_variation_residual(
    geom: &GeometryState<GridField>,
    f: &Expr,
    h: f64,
) -> Result<f64, OperatorError> {
    Ok(mu_variation(geom, f, h)?.fit.residual)
}

/// `J X_f` as a real-coordinate vector.
fn j_hamiltonian<F: Field>(geom: &GeometryState<F>, f: &F) -> Result<Vec<F>, GeometryError> {
    let x = split_gradient(geom, f)?.hamiltonian;
    let n = geom.dim();
    Ok((0..n)
        .map(|i| {
            let mut acc = F::zeros(geom.chart());
            for (j, xj) in x.iter().enumerate() {
                acc.fma(ONE, geom.j().get(&[i, j]), xj);
            }
            acc
        })
        .collect())
}

/// `8 Re⟨f, L L̄ h⟩` and the commutator `‖(L L̄ - L̄ L) h‖`, absolute and
/// relative to `‖L L̄ h‖`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HessianForm {
    pub value: f64,
    pub commutator: f64,
    pub commutator_relative: f64,
}

pub fn hessian_form<F: Field>(
    geom: &GeometryState<F>,
    op: &SixthOrderOperator<F>,
    f: &F,
    h: &F,
) -> Result<HessianForm, OperatorError> {
    let llbar = op.apply(&op.apply_bar(h)?)?;
    let lbarl = op.apply_bar(&op.apply(h)?)?;
    let value = 8.0 * geom.inner(f, &llbar)?.re;
    let commutator = geom.norm(&llbar.sub(&lbarl))?;
    let scale = geom.norm(&llbar)?;
    Ok(HessianForm {
        value,
        commutator,
        commutator_relative: if scale > 0.0 { commutator / scale } else { 0.0 },
    })
}

/// Second derivative at `t = 0` of `Φ` along the potential curve `φ + 2tf`,
/// by central second differences at `h` and `h/2` with one Richardson level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SecondDifference {
    pub h: f64,
    pub coarse: f64,
    pub fine: f64,
    pub value: f64,
}

pub fn calabi_second_difference(
    geom: &GeometryState<GridField>,
    f: &Expr,
    h: f64,
) -> Result<SecondDifference, OperatorError> {
    let phi = |t: f64| -> Result<f64, OperatorError> {
        Ok(calabi_functional(&shifted_potential(geom, f, 2.0 * t)?)?)
    };
    let p0 = phi(0.0)?;
    let second =
        |s: f64| -> Result<f64, OperatorError> { Ok((phi(s)? - 2.0 * p0 + phi(-s)?) / (s * s)) };
    let coarse = second(h)?;
    let fine = second(0.5 * h)?;
    Ok(SecondDifference {
        h,
        coarse,
        fine,
        value: (4.0 * fine - coarse) / 3.0,
    })
}

/// Smallest eigenvalue of `Ric` relative to `g` over all nodes.
pub fn min_ricci_eigenvalue<F: Field>(geom: &GeometryState<F>) -> Result<f64, OperatorError> {
    let n = geom.dim();
    let ric = ricci(geom.connection())?;
    let rv: Vec<Vec<C64>> = ric.comps().iter().map(|c| c.values()).collect();
    let gv: Vec<Vec<C64>> = geom.metric().comps().iter().map(|c| c.values()).collect();
    let mut worst = f64::INFINITY;
    for node in 0..geom.chart().len() {
        let g = DMatrix::from_fn(n, n, |a, b| gv[a * n + b][node].re);
        let r = DMatrix::from_fn(n, n, |a, b| {
            0.5 * (rv[a * n + b][node].re + rv[b * n + a][node].re)
        });
        let chol = g.cholesky().ok_or(GeometryError::NonPositiveMetric {
            node,
            min_eigenvalue: f64::NAN,
        })?;
        let linv = chol
            .l()
            .try_inverse()
            .expect("Cholesky factor is invertible");
        let c = &linv * r * linv.transpose();
        let c = (&c + c.transpose()) * 0.5;
        worst = worst.min(SymmetricEigen::new(c).eigenvalues.min());
    }
    Ok(worst)
}

/// Both sides of `(f, L f) ≥ 2(D1 f, D1 f)` and the norms feeding them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Positivity {
    pub lhs: f64,
    pub rhs: f64,
    pub margin: f64,
    pub d1_norm_sq: f64,
    pub d2_norm_sq: f64,
    pub min_ricci: f64,
}

/// Fails with [`OperatorError::RicciNotNonNegative`] when the inequality is
/// not implied by the geometry.
pub fn positivity_check<F: Field>(
    geom: &GeometryState<F>,
    op: &SixthOrderOperator<F>,
    f: &F,
) -> Result<Positivity, OperatorError> {
    let min_ricci = min_ricci_eigenvalue(geom)?;
    if min_ricci < RICCI_GATE {
        return Err(OperatorError::RicciNotNonNegative {
            min_eigenvalue: min_ricci,
        });
    }
    let lhs = geom.inner(f, &op.apply(f)?)?.re;
    let d1 = op.d1_inner(f, f)?.re;
    let d2 = op.d2_inner(f, f)?.re;
    let rhs = 2.0 * d1;
    Ok(Positivity {
        lhs,
        rhs,
        margin: lhs - rhs,
        d1_norm_sq: d1,
        d2_norm_sq: d2,
        min_ricci,
    })
}

/// `max_h |⟨h, L f⟩| / (‖h‖ max(‖f‖, 1))` over the probes.
pub fn weak_kernel_residual<F: Field>(
    geom: &GeometryState<F>,
    op: &SixthOrderOperator<F>,
    f: &F,
    probes: &[F],
) -> Result<f64, OperatorError> {
    let lf = op.apply(f)?;
    let scale = geom.norm(f)?.max(1.0);
    let mut worst: f64 = 0.0;
    for h in probes {
        let nh = geom.norm(h)?;
        if nh > 0.0 {
            worst = worst.max(geom.inner(h, &lf)?.norm() / (nh * scale));
        }
    }
    Ok(worst)
}

/// Probes `Π_j ℓ_j(x)^4 · x^a` (`|a| ≤ degree`) vanishing to fourth order on
/// every facet of the chart's polytope, or plain monomials on a torus chart.
pub fn interior_probes<F: Field>(chart: &Arc<Chart>, degree: u32) -> Result<Vec<F>, FieldError> {
    let d = chart.node_dim();
    let bump = chart
        .polytope()
        .map_or(Expr::constant(1.0), |p| p.facet_bump(4));
    let mut out = Vec::new();
    let mut exps = vec![0u32; d];
    loop {
        if exps.iter().sum::<u32>() <= degree {
            let mut e = bump.clone();
            for (a, &k) in exps.iter().enumerate() {
                if k > 0 {
                    e = Expr::mul(e, Expr::powi(Expr::var(a), k as i32));
                }
            }
            out.push(F::from_expr(chart, &e)?);
        }
        let mut a = 0;
        loop {
            if a == d {
                return Ok(out);
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

/// Real trigonometric functions `cos, sin (2π k·x)` for the `count` lowest
/// nonzero modes `k` (half-space representatives, ordered by `|k|²` then
/// lexicographically).
pub fn trig_basis(chart: &Arc<Chart>, count: usize) -> Vec<GridField> {
    let d = chart.geo_dim();
    let mut radius = 1;
    loop {
        let modes = half_space_modes(d, radius);
        if 2 * modes.len() >= count || radius > 64 {
            let mut out = Vec::with_capacity(count);
            for k in modes {
                for sine in [false, true] {
                    if out.len() == count {
                        return out;
                    }
                    let k = k.clone();
                    out.push(GridField::from_fn(chart, move |p| {
                        let phase: f64 = 2.0
                            * std::f64::consts::PI
                            * k.iter().zip(p).map(|(&ki, &x)| ki as f64 * x).sum::<f64>();
                        C64::new(if sine { phase.sin() } else { phase.cos() }, 0.0)
                    }));
                }
            }
            return out;
        }
        radius += 1;
    }
}

fn half_space_modes(d: usize, radius: i32) -> Vec<Vec<i32>> {
    let mut out = Vec::new();
    let mut k = vec![-radius; d];
    loop {
        let first = k.iter().find(|&&v| v != 0);
        if matches!(first, Some(&v) if v > 0)
            && k.iter().map(|v| v * v).sum::<i32>() <= radius * radius
        {
            out.push(k.clone());
        }
        let mut a = 0;
        loop {
            if a == d {
                out.sort_by_key(|k| (k.iter().map(|v| v * v).sum::<i32>(), k.clone()));
                return out;
            }
            k[a] += 1;
            if k[a] <= radius {
                break;
            }
            k[a] = -radius;
            a += 1;
        }
    }
}

/// Rayleigh-Ritz values of `L` on `span(basis)` in the geometric inner
/// product, ascending.
pub fn rayleigh_ritz<F: Field>(
    geom: &GeometryState<F>,
    op: &SixthOrderOperator<F>,
    basis: &[F],
) -> Result<Vec<f64>, OperatorError> {
    let k = basis.len();
    let images: Vec<F> = basis
        .iter()
        .map(|b| op.apply(b))
        .collect::<Result<_, _>>()?;
    let mut a = DMatrix::<C64>::zeros(k, k);
    let mut b = DMatrix::<C64>::zeros(k, k);
    for i in 0..k {
        for j in 0..k {
            a[(i, j)] = geom.inner(&basis[i], &images[j])?;
            b[(i, j)] = geom.inner(&basis[i], &basis[j])?;
        }
    }
    let chol = b.cholesky().ok_or_else(|| {
        GeometryError::Invalid("Rayleigh-Ritz basis is linearly dependent".into())
    })?;
    let linv = chol
        .l()
        .try_inverse()
        .expect("Cholesky factor is invertible");
    let c = &linv * a * linv.adjoint();
    let c = (&c + c.adjoint()) * C64::new(0.5, 0.0);
    let mut vals: Vec<f64> = SymmetricEigen::new(c).eigenvalues.iter().copied().collect();
    vals.sort_by(f64::total_cmp);
    Ok(vals)
}

/// `⟨e, L e⟩ / ⟨e, e⟩` for `e = exp(2πi k·x)` and the relative defect
/// `‖L e - λ e‖ / ‖L e‖` measuring how far `e` is from an eigenfunction.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModeMultiplier {
    pub mode: Vec<i32>,
    pub multiplier: f64,
    pub imaginary: f64,
    pub defect: f64,
}

pub fn mode_multiplier(
    geom: &GeometryState<GridField>,
    op: &SixthOrderOperator<GridField>,
    mode: &[i32],
) -> Result<ModeMultiplier, OperatorError> {
    let k = mode.to_vec();
    let e = GridField::from_fn(geom.chart(), move |p| {
        let phase: f64 = 2.0
            * std::f64::consts::PI
            * k.iter().zip(p).map(|(&ki, &x)| ki as f64 * x).sum::<f64>();
        C64::from_polar(1.0, phase)
    });
    let le = op.apply(&e)?;
    let lambda = geom.inner(&e, &le)? / geom.inner(&e, &e)?;
    let scale = geom.norm(&le)?;
    let defect = geom.norm(&le.sub(&e.scale(lambda)))?;
    Ok(ModeMultiplier {
        mode: mode.to_vec(),
        multiplier: lambda.re,
        imaginary: lambda.im,
        defect: if scale > 0.0 { defect / scale } else { 0.0 },
    })
}
