//! The Cahen-Gutt moment map on the space of symplectic connections, the
//! natural pairing of deformations, and three independent constructions of
//! the infinitesimal Hamiltonian action `L_{X_f}∇`.

use num_complex::Complex64 as C64;
use serde::Serialize;
use thiserror::Error;

use crate::field_core::{Field, FieldError, Slot, Tensor};
use crate::geometry::linalg::{inverse, transpose};
use crate::geometry::{
    covariant_derivative, curvature_from_connection, frame_project, ricci_from_riemann, riemann,
    slots, split_gradient, Deformation, GeometryError, GeometryState, SymplecticConnection,
};
use crate::operators::poisson_bracket;

const ONE: C64 = C64::new(1.0, 0.0);

/// Default finite-difference step for derivatives along a curve of connections.
pub const FD_STEP: f64 = 1e-3;
/// Largest accepted relative disagreement between the `h` and `h/2` central
/// differences.
pub const STEP_GUARD: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MomentError {
    #[error("finite-difference step {h:e} too large: D(h) = {coarse:.12e}, D(h/2) = {fine:.12e}")]
    StepTooLarge { h: f64, coarse: f64, fine: f64 },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

impl From<FieldError> for MomentError {
    fn from(e: FieldError) -> Self {
        MomentError::Geometry(GeometryError::Field(e))
    }
}

/// Two sides of an identity and their relative disagreement
/// `|lhs - rhs| / max(|lhs|, |rhs|, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Residual {
    pub lhs: f64,
    pub rhs: f64,
    pub residual: f64,
}

impl Residual {
    pub fn new(lhs: f64, rhs: f64) -> Self {
        let scale = lhs.abs().max(rhs.abs()).max(1.0);
        Residual {
            lhs,
            rhs,
            residual: (lhs - rhs).abs() / scale,
        }
    }
}

/// Central difference with one Richardson level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FdDerivative {
    pub h: f64,
    /// `[F(h) - F(-h)] / 2h`.
    pub coarse: f64,
    /// Same with `h/2`.
    pub fine: f64,
    /// `(4 fine - coarse) / 3`.
    pub value: f64,
}

/// Derivative at 0 of a real function of one variable; fails with
/// [`MomentError::StepTooLarge`] when the two step sizes disagree by more
/// than [`STEP_GUARD`] relative.
pub fn central_difference(
    h: f64,
    mut f: impl FnMut(f64) -> Result<f64, MomentError>,
) -> Result<FdDerivative, MomentError> {
    let coarse = (f(h)? - f(-h)?) / (2.0 * h);
    let fine = (f(0.5 * h)? - f(-0.5 * h)?) / h;
    let scale = coarse.abs().max(fine.abs()).max(1.0);
    if (coarse - fine).abs() > STEP_GUARD * scale {
        return Err(MomentError::StepTooLarge { h, coarse, fine });
    }
    Ok(FdDerivative {
        h,
        coarse,
        fine,
        value: (4.0 * fine - coarse) / 3.0,
    })
}

/// Raise every slot so that contracting with `B` gives
/// `Σ ω^{ij} A_i B_j` with `(ω^{ij}) = (ω_{ij})⁻¹`.
fn raise_all<F: Field>(geom: &GeometryState<F>, t: &Tensor<F>) -> Tensor<F> {
    let n = geom.dim();
    let r = t.rank();
    let mut cur = t.comps().to_vec();
    for s in 0..r {
        let outer = n.pow(s as u32);
        let inner = n.pow((r - s - 1) as u32);
        let mut next = vec![F::zeros(geom.chart()); cur.len()];
        for o in 0..outer {
            for i in 0..n {
                for j in 0..n {
                    let w = geom.omega_inv().get(&[j, i]);
                    for x in 0..inner {
                        next[(o * n + i) * inner + x].fma(ONE, w, &cur[(o * n + j) * inner + x]);
                    }
                }
            }
        }
        cur = next;
    }
    Tensor::from_comps(n, vec![Slot::Up; r], cur).expect("same shape")
}

/// Full contraction `Σ a_{i..} b_{i..}` (no conjugation).
fn contract<F: Field>(a: &Tensor<F>, b: &Tensor<F>) -> F {
    let mut acc = F::zeros(a.comps()[0].chart());
    for (x, y) in a.comps().iter().zip(b.comps()) {
        acc.fma(ONE, x, y);
    }
    acc
}

/// Pointwise `μ(∇)` for a symplectic connection on `geom`'s `ω`:
/// `∇_p∇_q Ric^{pq} - ½ Ric_{pq} Ric^{pq} + ¼ R_{pqrs} R^{pqrs}`.
pub fn mu<F: Field>(
    geom: &GeometryState<F>,
    conn: &SymplecticConnection<F>,
) -> Result<F, GeometryError> {
    Ok(mu_terms(geom, conn)?.total())
}

/// The three summands of `μ` separately.
#[derive(Debug, Clone)]
pub struct MuTerms<F> {
    pub divergence: F,
    pub ricci_square: F,
    pub riemann_square: F,
}

impl<F: Field> MuTerms<F> {
    pub fn total(&self) -> F {
        self.divergence
            .add(&self.ricci_square.scale(C64::new(-0.5, 0.0)))
            .add(&self.riemann_square.scale(C64::new(0.25, 0.0)))
    }
}

pub fn mu_terms<F: Field>(
    geom: &GeometryState<F>,
    conn: &SymplecticConnection<F>,
) -> Result<MuTerms<F>, GeometryError> {
    let n = geom.dim();
    let gamma = conn.gamma();
    let riem = riemann(gamma)?;
    let ric = ricci_from_riemann(&riem);
    let ric_up = raise_all(geom, &ric);
    let r_low = curvature_from_connection(geom, conn)?;
    let r_up = raise_all(geom, &r_low);
    // ∇_q Ric^{pq}, then ∇_p of the resulting vector.
    let d_ric = covariant_derivative(gamma, &ric_up)?;
    let mut v = Vec::with_capacity(n);
    for p in 0..n {
        let mut acc = F::zeros(geom.chart());
        for q in 0..n {
            acc.axpy(ONE, d_ric.get(&[p, q, q]));
        }
        v.push(acc);
    }
    let v = Tensor::from_comps(n, slots("u"), v)?;
    let dv = covariant_derivative(gamma, &v)?;
    let mut div = F::zeros(geom.chart());
    for p in 0..n {
        div.axpy(ONE, dv.get(&[p, p]));
    }
    Ok(MuTerms {
        divergence: div,
        ricci_square: contract(&ric, &ric_up),
        riemann_square: contract(&r_low, &r_up),
    })
}

/// `μ` of the Levi-Civita connection.
pub fn mu_levi_civita<F: Field>(geom: &GeometryState<F>) -> Result<F, GeometryError> {
    mu(geom, geom.connection())
}

/// Pointwise integrand `ω^{i1j1}ω^{i2j2}ω^{i3j3} A_{i1i2i3} B_{j1j2j3}`.
fn pairing_density<F: Field>(geom: &GeometryState<F>, a: &Tensor<F>, b: &Tensor<F>) -> F {
    contract(&raise_all(geom, a), b)
}

/// `Ω^E(A, B)`, complex-bilinear, integrated against the geometric measure.
pub fn omega_e_pairing_complex<F: Field>(
    geom: &GeometryState<F>,
    a: &Tensor<F>,
    b: &Tensor<F>,
) -> Result<C64, GeometryError> {
    a.comps()[0].same_chart(&b.comps()[0])?;
    if a.rank() != 3 || b.rank() != 3 {
        return Err(GeometryError::Invalid(
            "the pairing takes rank-3 tensors".into(),
        ));
    }
    geom.integrate(&pairing_density(geom, a, b))
}

/// `Ω^E(A, B)` of two real deformations.
pub fn omega_e_pairing<F: Field>(
    geom: &GeometryState<F>,
    a: &Deformation<F>,
    b: &Deformation<F>,
) -> Result<f64, GeometryError> {
    Ok(omega_e_pairing_complex(geom, a.tensor(), b.tensor())?.re)
}

/// `L_{X_f}∇` lowered by `ω`, from the curvature and the second covariant
/// derivative of `X_f`:
/// `A_{qut} = X^s R_{squt} + (∇_q∇_u X^s) ω_{st}`.
///
/// The result is returned without symmetrisation.
pub fn lie_derivative_connection<F: Field>(
    geom: &GeometryState<F>,
    f: &F,
) -> Result<Deformation<F>, GeometryError> {
    lie_derivative_of(geom, geom.connection(), f)
}

/// As [`lie_derivative_connection`] for an arbitrary symplectic connection.
pub fn lie_derivative_of<F: Field>(
    geom: &GeometryState<F>,
    conn: &SymplecticConnection<F>,
    f: &F,
) -> Result<Deformation<F>, GeometryError> {
    let n = geom.dim();
    let x = split_gradient(geom, f)?.hamiltonian;
    let r = curvature_from_connection(geom, conn)?;
    let xt = Tensor::from_comps(n, slots("u"), x.clone())?;
    // d2[s][u][q] = ∇_q ∇_u X^s
    let d2 = covariant_derivative(conn.gamma(), &covariant_derivative(conn.gamma(), &xt)?)?;
    let mut out = Tensor::zeros(geom.chart(), n, slots("ddd"));
    for q in 0..n {
        for u in 0..n {
            for t in 0..n {
                let c: &mut F = out.get_mut(&[q, u, t]);
                for (s, xs) in x.iter().enumerate() {
                    c.fma(ONE, xs, r.get(&[s, q, u, t]));
                    c.fma(ONE, d2.get(&[s, u, q]), geom.omega().get(&[s, t]));
                }
            }
        }
    }
    Deformation::new(out)
}

/// Inverse of the frame matrix `E[i][c]` (`e_α` for `c < m`, `ē_α` for
/// `c >= m`); its rows are the dual coframe.
fn coframe<F: Field>(geom: &GeometryState<F>) -> Result<Vec<F>, GeometryError> {
    let n = geom.dim();
    let m = geom.m();
    let mut e = vec![F::zeros(geom.chart()); n * n];
    for a in 0..m {
        for i in 0..n {
            e[i * n + a] = geom.frame()[a][i].clone();
            e[i * n + m + a] = geom.frame()[a][i].conj();
        }
    }
    Ok(inverse(&e, n)?)
}

/// Change the basis of every slot: `out_{c..} = Σ M[c][i] t_{i..}`.
fn transform_slots<F: Field>(t: &[F], n: usize, rank: usize, mat: &[F]) -> Vec<F> {
    let mut cur = t.to_vec();
    for s in 0..rank {
        let outer = n.pow(s as u32);
        let inner = n.pow((rank - s - 1) as u32);
        let chart = cur[0].chart().clone();
        let mut next = vec![F::zeros(&chart); cur.len()];
        for o in 0..outer {
            for c in 0..n {
                for i in 0..n {
                    let w = &mat[c * n + i];
                    for x in 0..inner {
                        next[(o * n + c) * inner + x].fma(ONE, w, &cur[(o * n + i) * inner + x]);
                    }
                }
            }
        }
        cur = next;
    }
    cur
}

/// Real lowered tensor from its values on the complex frame, indexed by
/// `c ∈ 0..n` (holomorphic first) in each slot.
fn from_complex_basis<F: Field>(
    geom: &GeometryState<F>,
    b: &[F],
    rank: usize,
) -> Result<Tensor<F>, GeometryError> {
    let n = geom.dim();
    let inv = coframe(geom)?;
    // A_i = Σ_c B_c θ^c_i with θ^c_i = inv[c][i].
    let mt = transpose(&inv, n);
    Ok(Tensor::from_comps(
        n,
        vec![Slot::Down; rank],
        transform_slots(b, n, rank, &mt),
    )?)
}

/// Block structure of `L_{X_f}∇` in the complex frame: each block is the
/// third covariant derivative of `f` with the slot of the minority type
/// differentiated last.
pub fn lie_derivative_connection_kahler<F: Field>(
    geom: &GeometryState<F>,
    f: &F,
) -> Result<Deformation<F>, GeometryError> {
    let n = geom.dim();
    let m = geom.m();
    let gamma = geom.connection().gamma();
    let t1 = covariant_derivative(gamma, &Tensor::scalar(f.clone()))?;
    let t3 = covariant_derivative(gamma, &covariant_derivative(gamma, &t1)?)?;
    let mut full = vec![F::zeros(geom.chart()); n * n * n];
    for code in 0..8usize {
        let kinds: Vec<Slot> = (0..3)
            .map(|s| {
                if code >> s & 1 == 0 {
                    Slot::Hol
                } else {
                    Slot::AntiHol
                }
            })
            .collect();
        let hol = kinds.iter().filter(|k| **k == Slot::Hol).count();
        let minority = match hol {
            2 => kinds.iter().position(|k| *k == Slot::AntiHol),
            1 => kinds.iter().position(|k| *k == Slot::Hol),
            _ => None,
        };
        let order: Vec<usize> = match minority {
            Some(p) => (0..3)
                .filter(|&s| s != p)
                .chain(std::iter::once(p))
                .collect(),
            None => vec![0, 1, 2],
        };
        let sorted: Vec<Slot> = order.iter().map(|&s| kinds[s]).collect();
        let proj = frame_project(geom, &t3, &sorted)?;
        let offset = |s: usize| if kinds[s] == Slot::Hol { 0 } else { m };
        for a in 0..m {
            for b in 0..m {
                for c in 0..m {
                    let idx = [a, b, c];
                    let src: Vec<usize> = order.iter().map(|&s| idx[s]).collect();
                    let dst = ((a + offset(0)) * n + b + offset(1)) * n + c + offset(2);
                    full[dst] = proj.get(&src).clone();
                }
            }
        }
    }
    Deformation::new(from_complex_basis(geom, &full, 3)?)
}

/// Intermediate quantities of the metric-variation route.
#[derive(Debug, Clone)]
pub struct ConnectionVariation<F> {
    /// `∇̇` lowered by `ω` in the last slot.
    pub deformation: Deformation<F>,
    /// `J̇ = -L_{X_f}J`.
    pub j_dot: Tensor<F>,
    /// `ġ_{ij} = ω_{ik} J̇^k_j`.
    pub g_dot: Tensor<F>,
    /// Largest frame component `|ġ(e_α, ē_β)|`; vanishes identically.
    pub mixed_block: f64,
}

/// `d/dt ∇^{J_t}` at `t = 0` along the curve `J_t` pushed forward by the
/// flow of `X_f` (so `J̇ = -L_{X_f}J`) with `ω` fixed:
/// `ġ = ω J̇`, `Γ̇^i_{kj} = ½ g^{il}(∇_k ġ_{lj} + ∇_j ġ_{lk} - ∇_l ġ_{kj})`,
/// lowered by `ω` in the last slot.
pub fn connection_variation<F: Field>(
    geom: &GeometryState<F>,
    f: &F,
) -> Result<ConnectionVariation<F>, GeometryError> {
    let n = geom.dim();
    let chart = geom.chart();
    let x = split_gradient(geom, f)?.hamiltonian;
    let mut dx = Vec::with_capacity(n);
    for xi in &x {
        let row: Result<Vec<F>, _> = (0..n).map(|k| xi.deriv(k)).collect();
        dx.push(row?);
    }
    let j = geom.j();
    let mut jdot = Tensor::zeros(chart, n, slots("ud"));
    for i in 0..n {
        for jx in 0..n {
            // (L_X J)^i_j = X^k ∂_k J^i_j - J^k_j ∂_k X^i + J^i_k ∂_j X^k
            let mut acc = F::zeros(chart);
            for k in 0..n {
                acc.fma(ONE, &x[k], &j.get(&[i, jx]).deriv(k)?);
                acc.fma(-ONE, j.get(&[k, jx]), &dx[i][k]);
                acc.fma(ONE, j.get(&[i, k]), &dx[k][jx]);
            }
            *jdot.get_mut(&[i, jx]) = acc.neg();
        }
    }
    let mut gdot = Tensor::zeros(chart, n, slots("dd"));
    for i in 0..n {
        for jx in 0..n {
            let c: &mut F = gdot.get_mut(&[i, jx]);
            for k in 0..n {
                c.fma(ONE, geom.omega().get(&[i, k]), jdot.get(&[k, jx]));
            }
        }
    }
    let mixed = frame_project(geom, &gdot, &[Slot::Hol, Slot::AntiHol])?.max_abs();
    // dg[l][j][k] = ∇_k ġ_{lj}
    let dg = covariant_derivative(geom.connection().gamma(), &gdot)?;
    let half = C64::new(0.5, 0.0);
    let mut gamma_dot = Tensor::zeros(chart, n, slots("udd"));
    for i in 0..n {
        for k in 0..n {
            for jx in 0..n {
                let c: &mut F = gamma_dot.get_mut(&[i, k, jx]);
                for l in 0..n {
                    let t = dg
                        .get(&[l, jx, k])
                        .add(dg.get(&[l, k, jx]))
                        .sub(dg.get(&[k, jx, l]));
                    c.fma(half, geom.metric_inv().get(&[i, l]), &t);
                }
            }
        }
    }
    let mut lowered = Tensor::zeros(chart, n, slots("ddd"));
    for k in 0..n {
        for jx in 0..n {
            for t in 0..n {
                let c: &mut F = lowered.get_mut(&[k, jx, t]);
                for l in 0..n {
                    c.fma(ONE, gamma_dot.get(&[l, k, jx]), geom.omega().get(&[l, t]));
                }
            }
        }
    }
    Ok(ConnectionVariation {
        deformation: Deformation::new(lowered)?,
        j_dot: jdot,
        g_dot: gdot,
        mixed_block: mixed,
    })
}

/// Largest componentwise disagreement among the three constructions of
/// `L_{X_f}∇` (the variation route enters with its sign flipped), and the
/// symmetry defect of the curvature route, all relative to
/// `max(scale, 1)` where `scale = max |L_{X_f}∇|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ThreeWay {
    pub curvature_vs_frame: f64,
    pub curvature_vs_variation: f64,
    pub frame_vs_variation: f64,
    pub symmetry: f64,
    pub scale: f64,
}

impl ThreeWay {
    pub fn max_disagreement(&self) -> f64 {
        self.curvature_vs_frame
            .max(self.curvature_vs_variation)
            .max(self.frame_vs_variation)
    }
}

pub fn three_way_agreement<F: Field>(
    geom: &GeometryState<F>,
    f: &F,
) -> Result<ThreeWay, GeometryError> {
    let a = lie_derivative_connection(geom, f)?;
    let b = lie_derivative_connection_kahler(geom, f)?;
    let c = connection_variation(geom, f)?.deformation.scale(-1.0);
    let scale = a.max_abs();
    let rel = scale.max(1.0);
    Ok(ThreeWay {
        curvature_vs_frame: a.sub(&b).max_abs() / rel,
        curvature_vs_variation: a.sub(&c).max_abs() / rel,
        frame_vs_variation: b.sub(&c).max_abs() / rel,
        symmetry: a.symmetry_residual() / rel,
        scale,
    })
}

/// `∫ μ(∇ + tA) f` along the straight line of connections.
pub fn mu_pairing_along<F: Field>(
    geom: &GeometryState<F>,
    f: &F,
    a: &Deformation<F>,
    t: f64,
) -> Result<f64, GeometryError> {
    let conn = geom.connection().perturbed(geom, a, t);
    Ok(geom.integrate(&mu(geom, &conn)?.mul(f))?.re)
}

/// Both sides of `d/dt ∫ μ(∇+tA) f = Ω^E(L_{X_f}∇, A)` with the
/// finite-difference diagnostics of the left side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MomentIdentity {
    pub fd: FdDerivative,
    pub pairing: f64,
    pub residual: Residual,
}

pub fn moment_identity<F: Field>(
    geom: &GeometryState<F>,
    f: &F,
    a: &Deformation<F>,
    h: f64,
) -> Result<MomentIdentity, MomentError> {
    let fd = central_difference(h, |t| Ok(mu_pairing_along(geom, f, a, t)?))?;
    let pairing = omega_e_pairing(geom, &lie_derivative_connection(geom, f)?, a)?;
    Ok(MomentIdentity {
        fd,
        pairing,
        residual: Residual::new(fd.value, pairing),
    })
}

/// Relative residual of the moment-map identity.
pub fn moment_identity_residual<F: Field>(
    geom: &GeometryState<F>,
    f: &F,
    a: &Deformation<F>,
    h: f64,
) -> Result<f64, MomentError> {
    Ok(moment_identity(geom, f, a, h)?.residual.residual)
}

/// `Ω^E(L_{X_h}∇, L_{X_f}∇)` against `∫ {h,f} μ(∇)`. The sign is the one
/// forced by the moment identity, since `∫ f μ(σ_t∇) = ∫ (f∘σ_t) μ(∇)` for
/// the flow `σ_t` of `X_h`.
pub fn equivariance<F: Field>(
    geom: &GeometryState<F>,
    h: &F,
    f: &F,
) -> Result<Residual, GeometryError> {
    let ah = lie_derivative_connection(geom, h)?;
    let af = lie_derivative_connection(geom, f)?;
    let lhs = omega_e_pairing(geom, &ah, &af)?;
    let mu = mu_levi_civita(geom)?;
    let rhs = geom.integrate(&poisson_bracket(geom, h, f)?.mul(&mu))?.re;
    Ok(Residual::new(lhs, rhs))
}

pub fn equivariance_residual<F: Field>(
    geom: &GeometryState<F>,
    h: &F,
    f: &F,
) -> Result<f64, GeometryError> {
    Ok(equivariance(geom, h, f)?.residual)
}

/// `∫ μ(∇^J) (f - mean f)`.
pub fn futaki<F: Field>(geom: &GeometryState<F>, f: &F) -> Result<f64, GeometryError> {
    futaki_with(geom, &mu_levi_civita(geom)?, f)
}

/// [`futaki`] with a precomputed `μ`.
pub fn futaki_with<F: Field>(geom: &GeometryState<F>, mu: &F, f: &F) -> Result<f64, GeometryError> {
    let ft = geom.mean_free(f)?;
    Ok(geom.integrate(&mu.mul(&ft))?.re)
}

/// `Φ = ∫ μ(∇)² ω_m` for the Levi-Civita connection.
pub fn calabi_functional<F: Field>(geom: &GeometryState<F>) -> Result<f64, GeometryError> {
    let mu = mu_levi_civita(geom)?;
    Ok(geom.integrate(&mu.conj().mul(&mu))?.re)
}

/// Mean and standard deviation of the real part of a field against the
/// geometric measure.
pub fn mean_and_stddev<F: Field>(
    geom: &GeometryState<F>,
    f: &F,
) -> Result<(f64, f64), GeometryError> {
    let vol = geom.volume()?;
    let mean = geom.integrate(f)?.re / vol;
    let dev = f.sub(&F::constant(geom.chart(), C64::new(mean, 0.0)));
    let var = geom.integrate(&dev.conj().mul(&dev))?.re / vol;
    Ok((mean, var.max(0.0).sqrt()))
}
