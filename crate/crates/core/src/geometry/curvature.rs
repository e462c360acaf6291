use num_complex::Complex64 as C64;

use super::{slots, GeometryError, GeometryState};
use crate::field_core::{Field, Slot, Tensor};

const ONE: C64 = C64::new(1.0, 0.0);

/// Torsion-free connection given by its Christoffels `gamma[i][k][j] = Γ^i_{kj}`.
#[derive(Debug, Clone)]
pub struct SymplecticConnection<F> {
    pub(crate) gamma: Tensor<F>,
}

impl<F: Field> SymplecticConnection<F> {
    pub fn new(gamma: Tensor<F>) -> Self {
        SymplecticConnection { gamma }
    }

    pub fn gamma(&self) -> &Tensor<F> {
        &self.gamma
    }

    /// `∇ + t A` with `A^l_{jk} = Σ_i A_{jki} ω^{il}`.
    pub fn perturbed(&self, geom: &GeometryState<F>, a: &Deformation<F>, t: f64) -> Self {
        let raised = a.raise(geom);
        SymplecticConnection {
            gamma: self.gamma.add(&raised.scale(C64::new(t, 0.0))),
        }
    }

    /// Max over nodes of `|∇ω|` for the given geometry's `ω`.
    pub fn nabla_omega_residual(&self, geom: &GeometryState<F>) -> Result<f64, GeometryError> {
        Ok(covariant_derivative(&self.gamma, &geom.omega)?.max_abs())
    }

    /// Max over nodes of `|Γ^i_{kj} - Γ^i_{jk}|`.
    pub fn torsion(&self) -> f64 {
        self.gamma.sub(&self.gamma.permute(&[0, 2, 1])).max_abs()
    }
}

/// Lowered totally symmetric 3-tensor `A_{ijk}`: a tangent vector to the
/// space of symplectic connections.
#[derive(Debug, Clone)]
pub struct Deformation<F> {
    pub(crate) a: Tensor<F>,
}

impl<F: Field> Deformation<F> {
    pub fn new(a: Tensor<F>) -> Result<Self, GeometryError> {
        if a.rank() != 3 {
            return Err(GeometryError::Invalid(format!(
                "deformation must have rank 3, got {}",
                a.rank()
            )));
        }
        Ok(Deformation {
            a: a.with_slots(slots("ddd")),
        })
    }

    /// Symmetrise an arbitrary rank-3 tensor.
    pub fn symmetrized(t: &Tensor<F>) -> Result<Self, GeometryError> {
        let perms = [
            [0, 1, 2],
            [0, 2, 1],
            [1, 0, 2],
            [1, 2, 0],
            [2, 0, 1],
            [2, 1, 0],
        ];
        let mut acc = t.permute(&perms[0]);
        for p in &perms[1..] {
            acc = acc.add(&t.permute(p));
        }
        Self::new(acc.scale(C64::new(1.0 / 6.0, 0.0)))
    }

    pub fn tensor(&self) -> &Tensor<F> {
        &self.a
    }

    pub fn symmetry_residual(&self) -> f64 {
        self.a.symmetry_residual()
    }

    /// `A^l_{jk} = Σ_i ω^{li} A_{jki}` in Christoffel layout `[l][j][k]`, with
    /// `ω^{li} = (ω⁻¹)_{il}` so that lowering by `ω_{lk}` undoes it.
    pub fn raise(&self, geom: &GeometryState<F>) -> Tensor<F> {
        let n = geom.dim();
        let mut out: Tensor<F> = Tensor::zeros(&geom.chart, n, slots("udd"));
        for l in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let c: &mut F = out.get_mut(&[l, j, k]);
                    for i in 0..n {
                        c.fma(ONE, self.a.get(&[j, k, i]), geom.omega_inv.get(&[i, l]));
                    }
                }
            }
        }
        out
    }

    pub fn scale(&self, c: f64) -> Self {
        Deformation {
            a: self.a.scale(C64::new(c, 0.0)),
        }
    }

    pub fn add(&self, o: &Self) -> Self {
        Deformation {
            a: self.a.add(&o.a),
        }
    }

    pub fn sub(&self, o: &Self) -> Self {
        Deformation {
            a: self.a.sub(&o.a),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.a.max_abs()
    }
}

/// `R^i_{jkl}` with `R(∂k,∂l)∂j = R^i_{jkl} ∂i`, layout `[i][j][k][l]`.
pub fn riemann<F: Field>(gamma: &Tensor<F>) -> Result<Tensor<F>, GeometryError> {
    let n = gamma.dim();
    let chart = gamma.comps()[0].chart().clone();
    let mut dgamma = Vec::with_capacity(gamma.comps().len() * n);
    for c in gamma.comps() {
        for k in 0..n {
            dgamma.push(c.deriv(k)?);
        }
    }
    let dg = |i: usize, l: usize, j: usize, k: usize| &dgamma[gamma.flat(&[i, l, j]) * n + k];
    let mut r = Tensor::zeros(&chart, n, slots("uddd"));
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                for l in k + 1..n {
                    let mut acc = dg(i, l, j, k).sub(dg(i, k, j, l));
                    for p in 0..n {
                        acc.fma(ONE, gamma.get(&[i, k, p]), gamma.get(&[p, l, j]));
                        acc.fma(-ONE, gamma.get(&[i, l, p]), gamma.get(&[p, k, j]));
                    }
                    *r.get_mut(&[i, j, l, k]) = acc.neg();
                    *r.get_mut(&[i, j, k, l]) = acc;
                }
            }
        }
    }
    Ok(r)
}

/// `R(∇,ω)_{pqrs} = ω(R(∂p,∂q)∂r, ∂s) = Σ_i R^i_{rpq} ω_{is}`.
pub fn curvature_from_connection<F: Field>(
    geom: &GeometryState<F>,
    conn: &SymplecticConnection<F>,
) -> Result<Tensor<F>, GeometryError> {
    let riem = riemann(&conn.gamma)?;
    Ok(lower_riemann(geom, &riem))
}

pub(crate) fn lower_riemann<F: Field>(geom: &GeometryState<F>, riem: &Tensor<F>) -> Tensor<F> {
    let n = geom.dim();
    let mut out = Tensor::zeros(&geom.chart, n, slots("dddd"));
    for p in 0..n {
        for q in p + 1..n {
            for r in 0..n {
                for s in 0..n {
                    let mut acc = F::zeros(&geom.chart);
                    for i in 0..n {
                        acc.fma(ONE, riem.get(&[i, r, p, q]), geom.omega.get(&[i, s]));
                    }
                    *out.get_mut(&[q, p, r, s]) = acc.neg();
                    *out.get_mut(&[p, q, r, s]) = acc;
                }
            }
        }
    }
    out
}

/// `Ric_{ab} = -Σ_i R^i_{bai}`.
pub fn ricci_from_riemann<F: Field>(riem: &Tensor<F>) -> Tensor<F> {
    let n = riem.dim();
    let chart = riem.comps()[0].chart().clone();
    let mut out = Tensor::zeros(&chart, n, slots("dd"));
    for a in 0..n {
        for b in 0..n {
            let mut acc = F::zeros(&chart);
            for i in 0..n {
                acc.axpy(-ONE, riem.get(&[i, b, a, i]));
            }
            *out.get_mut(&[a, b]) = acc;
        }
    }
    out
}

pub fn ricci<F: Field>(conn: &SymplecticConnection<F>) -> Result<Tensor<F>, GeometryError> {
    Ok(ricci_from_riemann(&riemann(&conn.gamma)?))
}

/// Gauss curvature `K = ½ g^{ab} Ric_{ab}` of a real surface.
pub fn gauss_curvature<F: Field>(geom: &GeometryState<F>) -> Result<F, GeometryError> {
    if geom.dim() != 2 {
        return Err(GeometryError::Invalid(
            "Gauss curvature needs a real surface".into(),
        ));
    }
    let ric = ricci(&geom.connection)?;
    let mut k = F::zeros(&geom.chart);
    for a in 0..2 {
        for b in 0..2 {
            k.fma(
                C64::new(0.5, 0.0),
                geom.g_inv.get(&[a, b]),
                ric.get(&[a, b]),
            );
        }
    }
    Ok(k)
}

/// `∇T` with the derivative slot appended last. Real slots only.
pub fn covariant_derivative<F: Field>(
    gamma: &Tensor<F>,
    t: &Tensor<F>,
) -> Result<Tensor<F>, GeometryError> {
    let n = gamma.dim();
    let r = t.rank();
    let chart = gamma.comps()[0].chart().clone();
    check_real_slots(t.slots())?;
    let mut out_slots = t.slots().to_vec();
    out_slots.push(Slot::Down);
    let mut out = Tensor::zeros(&chart, n, out_slots);
    for (c, comp) in t.comps().iter().enumerate() {
        for k in 0..n {
            out.comps_mut()[c * n + k] = comp.deriv(k)?;
        }
    }
    for c in 0..t.comps().len() {
        let idx = t.unflat(c);
        for k in 0..n {
            let target = c * n + k;
            for s in 0..r {
                for p in 0..n {
                    let mut src = idx.clone();
                    src[s] = p;
                    let tv = t.get(&src);
                    let (coef, gm) = match t.slots()[s] {
                        Slot::Up => (ONE, gamma.get(&[idx[s], k, p])),
                        _ => (-ONE, gamma.get(&[p, k, idx[s]])),
                    };
                    out.comps_mut()[target].fma(coef, gm, tv);
                }
            }
        }
    }
    Ok(out)
}

/// Adjoint of `T ↦ ∇T` for the plain componentwise coordinate pairing.
/// `in_slots` are the slots of `T`; `s` has one more (derivative) slot.
pub fn covariant_derivative_adjoint<F: Field>(
    gamma: &Tensor<F>,
    s: &Tensor<F>,
    in_slots: &[Slot],
) -> Result<Tensor<F>, GeometryError> {
    let n = gamma.dim();
    let r = in_slots.len();
    let chart = gamma.comps()[0].chart().clone();
    check_real_slots(in_slots)?;
    let mut out = Tensor::zeros(&chart, n, in_slots.to_vec());
    let count = out.comps().len();
    for c in 0..count {
        let mut acc = F::zeros(&chart);
        for k in 0..n {
            acc.axpy(-ONE, &s.comps()[c * n + k].deriv(k)?);
        }
        out.comps_mut()[c] = acc;
    }
    let gamma_conj: Vec<F> = gamma.comps().iter().map(|g| g.conj()).collect();
    let gc = |i: usize, k: usize, j: usize| &gamma_conj[(i * n + k) * n + j];
    for c in 0..count {
        let idx = out.unflat(c);
        let mut acc = F::zeros(&chart);
        for slot in 0..r {
            for q in 0..n {
                let mut src = idx.clone();
                src[slot] = q;
                let base = out.flat(&src) * n;
                for k in 0..n {
                    let sv = &s.comps()[base + k];
                    match in_slots[slot] {
                        Slot::Up => acc.fma(ONE, gc(q, k, idx[slot]), sv),
                        _ => acc.fma(-ONE, gc(idx[slot], k, q), sv),
                    }
                }
            }
        }
        out.comps_mut()[c] = out.comps()[c].add(&acc);
    }
    Ok(out)
}

fn check_real_slots(s: &[Slot]) -> Result<(), GeometryError> {
    if s.iter().any(|x| matches!(x, Slot::Hol | Slot::AntiHol)) {
        return Err(GeometryError::Invalid(
            "covariant derivative takes real-index tensors".into(),
        ));
    }
    Ok(())
}

/// Evaluate a lowered real tensor on frame vectors: slot `s` receives `e_α`
/// for [`Slot::Hol`] and `ē_α` for [`Slot::AntiHol`]. Result has dimension m.
pub fn frame_project<F: Field>(
    geom: &GeometryState<F>,
    t: &Tensor<F>,
    kinds: &[Slot],
) -> Result<Tensor<F>, GeometryError> {
    if kinds.len() != t.rank() {
        return Err(GeometryError::Invalid(
            "one frame kind per slot required".into(),
        ));
    }
    let n = geom.dim();
    let m = geom.m();
    let vecs: Vec<Vec<Vec<F>>> = kinds
        .iter()
        .map(|k| match k {
            Slot::Hol => geom.frame.clone(),
            Slot::AntiHol => geom
                .frame
                .iter()
                .map(|e| e.iter().map(|c| c.conj()).collect())
                .collect(),
            _ => unreachable!("frame projection slots must be Hol or AntiHol"),
        })
        .collect();
    // Contract one slot at a time, from the last, to keep the cost n^r·m.
    let mut cur: Vec<F> = t.comps().to_vec();
    let mut dims: Vec<usize> = vec![n; t.rank()];
    for s in (0..t.rank()).rev() {
        let outer: usize = dims[..s].iter().product();
        let inner: usize = dims[s + 1..].iter().product();
        let mut next = vec![F::zeros(&geom.chart); outer * m * inner];
        for o in 0..outer {
            for a in 0..m {
                for i in 0..n {
                    for x in 0..inner {
                        let src = &cur[(o * n + i) * inner + x];
                        next[(o * m + a) * inner + x].fma(ONE, &vecs[s][a][i], src);
                    }
                }
            }
        }
        cur = next;
        dims[s] = m;
    }
    Ok(Tensor::from_comps(m, kinds.to_vec(), cur)?)
}

/// `X_f` (with `i(X_f)ω = df`), the metric gradient, and its
/// holomorphic / antiholomorphic parts as real-coordinate vectors.
#[derive(Debug, Clone)]
pub struct SplitGradient<F> {
    pub hamiltonian: Vec<F>,
    pub gradient: Vec<F>,
    pub grad_hol: Vec<F>,
    pub grad_antihol: Vec<F>,
    /// Frame coefficients `f^α` with `grad′f = Σ f^α e_α`.
    pub hol_coeffs: Vec<F>,
}

pub fn split_gradient<F: Field>(
    geom: &GeometryState<F>,
    f: &F,
) -> Result<SplitGradient<F>, GeometryError> {
    let n = geom.dim();
    let m = geom.m();
    let mut df = Vec::with_capacity(n);
    for k in 0..n {
        df.push(f.deriv(k)?);
    }
    let mut x = vec![F::zeros(&geom.chart); n];
    let mut grad = vec![F::zeros(&geom.chart); n];
    for i in 0..n {
        for (jx, d) in df.iter().enumerate() {
            x[i].fma(ONE, geom.omega_inv.get(&[jx, i]), d);
            grad[i].fma(ONE, geom.g_inv.get(&[i, jx]), d);
        }
    }
    // ē_β f, then f^α = Σ_β Q_{αβ} ē_β f.
    let ebar_f: Vec<F> = (0..m)
        .map(|b| {
            let mut acc = F::zeros(&geom.chart);
            for (i, d) in df.iter().enumerate() {
                acc.fma(ONE, &geom.frame[b][i].conj(), d);
            }
            acc
        })
        .collect();
    let mut coeffs = vec![F::zeros(&geom.chart); m];
    for (a, c) in coeffs.iter_mut().enumerate() {
        for (b, eb) in ebar_f.iter().enumerate() {
            c.fma(ONE, &geom.q[a * m + b], eb);
        }
    }
    let mut hol = vec![F::zeros(&geom.chart); n];
    for (a, c) in coeffs.iter().enumerate() {
        for (i, h) in hol.iter_mut().enumerate() {
            h.fma(ONE, c, &geom.frame[a][i]);
        }
    }
    let anti = grad.iter().zip(&hol).map(|(g, h)| g.sub(h)).collect();
    Ok(SplitGradient {
        hamiltonian: x,
        gradient: grad,
        grad_hol: hol,
        grad_antihol: anti,
        hol_coeffs: coeffs,
    })
}
