use std::fmt;
use std::sync::Arc;

use num_complex::Complex64 as C64;

use super::{Field, FieldError};

/// A linear map between lists of component fields with a known adjoint.
///
/// The adjoint is taken with respect to `Σ_comp ⟨a_c, b_c⟩`, where `⟨,⟩` is
/// the chart's coordinate quadrature.
pub trait ElementaryMap<F: Field>: Send + Sync {
    fn name(&self) -> String;
    fn in_len(&self) -> usize;
    fn out_len(&self) -> usize;
    fn apply(&self, x: &[F]) -> Result<Vec<F>, FieldError>;
    fn adjoint(&self, y: &[F]) -> Result<Vec<F>, FieldError>;
}

/// Coordinate derivatives of each input component:
/// `out[c * dim + k] = ∂_k in[c]`. Adjoint: `-Σ_k ∂_k`.
pub struct Gradient {
    pub components: usize,
    pub dim: usize,
}

impl<F: Field> ElementaryMap<F> for Gradient {
    fn name(&self) -> String {
        format!("grad[{}x{}]", self.components, self.dim)
    }
    fn in_len(&self) -> usize {
        self.components
    }
    fn out_len(&self) -> usize {
        self.components * self.dim
    }
    fn apply(&self, x: &[F]) -> Result<Vec<F>, FieldError> {
        let mut out = Vec::with_capacity(self.components * self.dim);
        for f in x {
            for k in 0..self.dim {
                out.push(f.deriv(k)?);
            }
        }
        Ok(out)
    }
    fn adjoint(&self, y: &[F]) -> Result<Vec<F>, FieldError> {
        let mut out = Vec::with_capacity(self.components);
        for c in 0..self.components {
            let mut acc = F::zeros(y[0].chart());
            for k in 0..self.dim {
                acc.axpy(C64::new(-1.0, 0.0), &y[c * self.dim + k].deriv(k)?);
            }
            out.push(acc);
        }
        Ok(out)
    }
}

/// Single partial derivative of a scalar field. Adjoint: `-∂_axis`.
pub struct Deriv {
    pub axis: usize,
}

impl<F: Field> ElementaryMap<F> for Deriv {
    fn name(&self) -> String {
        format!("d{}", self.axis)
    }
    fn in_len(&self) -> usize {
        1
    }
    fn out_len(&self) -> usize {
        1
    }
    fn apply(&self, x: &[F]) -> Result<Vec<F>, FieldError> {
        Ok(vec![x[0].deriv(self.axis)?])
    }
    fn adjoint(&self, y: &[F]) -> Result<Vec<F>, FieldError> {
        Ok(vec![y[0].deriv(self.axis)?.neg()])
    }
}

/// Sparse pointwise matrix: `out[r] = Σ m_{rc} in[c]`. Adjoint: conjugate
/// transpose.
pub struct Pointwise<F> {
    pub label: String,
    pub rows: usize,
    pub cols: usize,
    pub entries: Vec<(usize, usize, F)>,
}

impl<F: Field> Pointwise<F> {
    /// Multiplication of a single scalar field by `w`.
    pub fn scalar(w: F) -> Self {
        Pointwise {
            label: "mul".into(),
            rows: 1,
            cols: 1,
            entries: vec![(0, 0, w)],
        }
    }

    /// Multiplication by `w` of each of `n` components.
    pub fn diagonal(label: &str, n: usize, w: F) -> Self {
        Pointwise {
            label: label.into(),
            rows: n,
            cols: n,
            entries: (0..n).map(|i| (i, i, w.clone())).collect(),
        }
    }
}

impl<F: Field> ElementaryMap<F> for Pointwise<F> {
    fn name(&self) -> String {
        format!("{}[{}x{}]", self.label, self.rows, self.cols)
    }
    fn in_len(&self) -> usize {
        self.cols
    }
    fn out_len(&self) -> usize {
        self.rows
    }
    fn apply(&self, x: &[F]) -> Result<Vec<F>, FieldError> {
        let chart = x[0].chart();
        let mut out = vec![F::zeros(chart); self.rows];
        for (r, c, m) in &self.entries {
            out[*r].fma(C64::new(1.0, 0.0), m, &x[*c]);
        }
        Ok(out)
    }
    fn adjoint(&self, y: &[F]) -> Result<Vec<F>, FieldError> {
        let chart = y[0].chart();
        let mut out = vec![F::zeros(chart); self.cols];
        for (r, c, m) in &self.entries {
            out[*c].fma(C64::new(1.0, 0.0), &m.conj(), &y[*r]);
        }
        Ok(out)
    }
}

#[derive(Clone)]
enum Node<F: Field> {
    /// Maps applied first to last.
    Chain(Vec<Arc<dyn ElementaryMap<F>>>),
    Sum(Vec<(C64, LinearOperatorHandle<F>)>),
}

/// Matrix-free linear operator with an adjoint built from its parts.
#[derive(Clone)]
pub struct LinearOperatorHandle<F: Field> {
    node: Node<F>,
    in_len: usize,
    out_len: usize,
}

impl<F: Field> fmt::Debug for LinearOperatorHandle<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "LinearOperatorHandle({} -> {}: {})",
            self.in_len,
            self.out_len,
            self.describe()
        )
    }
}

/// Compose elementary maps (applied first to last). The adjoint applies the
/// elementary adjoints in reverse order.
pub fn compose_adjoint<F: Field>(
    maps: Vec<Arc<dyn ElementaryMap<F>>>,
) -> Result<LinearOperatorHandle<F>, FieldError> {
    let first = maps.first().ok_or(FieldError::EmptyComposition)?;
    for (i, w) in maps.windows(2).enumerate() {
        if w[0].out_len() != w[1].in_len() {
            return Err(FieldError::SignatureMismatch {
                position: i + 1,
                expected: w[0].out_len(),
                found: w[1].in_len(),
            });
        }
    }
    let in_len = first.in_len();
    let out_len = maps.last().expect("non-empty").out_len();
    Ok(LinearOperatorHandle {
        node: Node::Chain(maps),
        in_len,
        out_len,
    })
}

impl<F: Field> LinearOperatorHandle<F> {
    /// `Σ c_i op_i`; all terms must share a signature.
    pub fn sum(terms: Vec<(C64, LinearOperatorHandle<F>)>) -> Result<Self, FieldError> {
        let (_, first) = terms.first().ok_or(FieldError::EmptyComposition)?;
        let (in_len, out_len) = (first.in_len, first.out_len);
        for (i, (_, t)) in terms.iter().enumerate() {
            if t.in_len != in_len || t.out_len != out_len {
                return Err(FieldError::SignatureMismatch {
                    position: i,
                    expected: in_len,
                    found: t.in_len,
                });
            }
        }
        Ok(LinearOperatorHandle {
            node: Node::Sum(terms),
            in_len,
            out_len,
        })
    }

    /// `self` after `inner`.
    pub fn after(&self, inner: &LinearOperatorHandle<F>) -> Result<Self, FieldError> {
        if inner.out_len != self.in_len {
            return Err(FieldError::SignatureMismatch {
                position: 1,
                expected: inner.out_len,
                found: self.in_len,
            });
        }
        let wrap =
            |h: &LinearOperatorHandle<F>| -> Arc<dyn ElementaryMap<F>> { Arc::new(h.clone()) };
        compose_adjoint(vec![wrap(inner), wrap(self)])
    }

    pub fn in_len(&self) -> usize {
        self.in_len
    }

    pub fn out_len(&self) -> usize {
        self.out_len
    }

    pub fn describe(&self) -> String {
        match &self.node {
            Node::Chain(maps) => maps
                .iter()
                .rev()
                .map(|m| m.name())
                .collect::<Vec<_>>()
                .join(" . "),
            Node::Sum(terms) => terms
                .iter()
                .map(|(c, t)| format!("{c}*({})", t.describe()))
                .collect::<Vec<_>>()
                .join(" + "),
        }
    }

    pub fn apply(&self, x: &[F]) -> Result<Vec<F>, FieldError> {
        self.check_len(x.len(), self.in_len)?;
        match &self.node {
            Node::Chain(maps) => {
                let mut cur = x.to_vec();
                for m in maps {
                    cur = m.apply(&cur)?;
                }
                Ok(cur)
            }
            Node::Sum(terms) => self.sum_apply(terms, x, false),
        }
    }

    pub fn adjoint_apply(&self, y: &[F]) -> Result<Vec<F>, FieldError> {
        self.check_len(y.len(), self.out_len)?;
        match &self.node {
            Node::Chain(maps) => {
                let mut cur = y.to_vec();
                for m in maps.iter().rev() {
                    cur = m.adjoint(&cur)?;
                }
                Ok(cur)
            }
            Node::Sum(terms) => self.sum_apply(terms, y, true),
        }
    }

    /// Scalar-to-scalar convenience.
    pub fn apply_scalar(&self, f: &F) -> Result<F, FieldError> {
        Ok(self.apply(std::slice::from_ref(f))?.swap_remove(0))
    }

    pub fn adjoint_scalar(&self, f: &F) -> Result<F, FieldError> {
        Ok(self.adjoint_apply(std::slice::from_ref(f))?.swap_remove(0))
    }

    fn check_len(&self, got: usize, want: usize) -> Result<(), FieldError> {
        if got != want {
            return Err(FieldError::SignatureMismatch {
                position: 0,
                expected: want,
                found: got,
            });
        }
        Ok(())
    }

    fn sum_apply(
        &self,
        terms: &[(C64, LinearOperatorHandle<F>)],
        x: &[F],
        adjoint: bool,
    ) -> Result<Vec<F>, FieldError> {
        let n = if adjoint { self.in_len } else { self.out_len };
        let chart = x[0].chart();
        let mut out = vec![F::zeros(chart); n];
        for (c, t) in terms {
            let (part, coef) = if adjoint {
                (t.adjoint_apply(x)?, c.conj())
            } else {
                (t.apply(x)?, *c)
            };
            for (o, p) in out.iter_mut().zip(&part) {
                o.axpy(coef, p);
            }
        }
        Ok(out)
    }
}

impl<F: Field> ElementaryMap<F> for LinearOperatorHandle<F> {
    fn name(&self) -> String {
        format!("({})", self.describe())
    }
    fn in_len(&self) -> usize {
        self.in_len
    }
    fn out_len(&self) -> usize {
        self.out_len
    }
    fn apply(&self, x: &[F]) -> Result<Vec<F>, FieldError> {
        LinearOperatorHandle::apply(self, x)
    }
    fn adjoint(&self, y: &[F]) -> Result<Vec<F>, FieldError> {
        self.adjoint_apply(y)
    }
}

/// Worst relative adjoint defect `|⟨h, A f⟩ - ⟨A* h, f⟩| / (‖h‖‖Af‖ + ‖A*h‖‖f‖)`
/// over the given probe pairs.
pub fn adjoint_defect<F: Field>(
    op: &LinearOperatorHandle<F>,
    probes: &[(Vec<F>, Vec<F>)],
) -> Result<f64, FieldError> {
    let ip = |a: &[F], b: &[F]| -> Result<C64, FieldError> {
        let mut acc = C64::new(0.0, 0.0);
        for (x, y) in a.iter().zip(b) {
            acc += super::inner_product(x, y)?;
        }
        Ok(acc)
    };
    let mut worst: f64 = 0.0;
    for (f, h) in probes {
        let af = op.apply(f)?;
        let ah = op.adjoint_apply(h)?;
        let lhs = ip(h, &af)?;
        let rhs = ip(&ah, f)?;
        let norm = |v: &[F]| ip(v, v).map(|z| z.re.max(0.0).sqrt());
        let scale = norm(h)? * norm(&af)? + norm(&ah)? * norm(f)?;
        let defect = (lhs - rhs).norm();
        worst = worst.max(if scale > 0.0 { defect / scale } else { defect });
    }
    Ok(worst)
}
