//! Kähler structures on the two backends and the curvature pipeline.
//!
//! Index conventions (shared by every module):
//! - `∇_{∂k} ∂j = Γ^i_{kj} ∂i`; Christoffels are stored as `gamma[i][k][j]`.
//! - `R(∂k,∂l)∂j = R^i_{jkl} ∂i`, stored as `riem[i][j][k][l]`.
//! - `R(∇,ω)_{pqrs} = ω(R(∂p,∂q)∂r, ∂s)` and `Ric_{ab} = -Σ_i R^i_{bai}`.
//! - `ω^{ij}` is the matrix inverse of `ω_{ij}`; raising is `A^i = ω^{ij} A_j`.
//! - `ω(X,Y) = g(JX,Y)`, so `g = ω(·, J·)`, and `i(X_f)ω = df`.
//! - Covariant derivatives append the new slot last.
//! - The measure is `ρ · (coordinate quadrature)` with `ρ` the density of
//!   `ω_m / 2^m`; on the flat unit torus the volume is 1.

mod build;
mod curvature;
pub(crate) mod linalg;

use std::sync::Arc;

use num_complex::Complex64 as C64;
use thiserror::Error;

use crate::expr::{Expr, ExprError};
use crate::field_core::{Chart, Field, FieldError, Slot, Tensor};

pub use build::{
    build_toric_geometry, build_torus_geometry, build_torus_geometry_corrected,
    build_torus_geometry_from_field,
};
pub use curvature::{
    covariant_derivative, covariant_derivative_adjoint, curvature_from_connection, frame_project,
    gauss_curvature, ricci, ricci_from_riemann, riemann, split_gradient, Deformation,
    SplitGradient, SymplecticConnection,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error(
        "metric is not positive definite: minimum eigenvalue {min_eigenvalue:.6e} at node {node}"
    )]
    NonPositiveMetric { node: usize, min_eigenvalue: f64 },
    #[error("potential is not strictly convex: Hessian minimum eigenvalue {min_eigenvalue:.6e} at node {node}")]
    NonConvexPotential { node: usize, min_eigenvalue: f64 },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Field(#[from] FieldError),
}

impl From<ExprError> for GeometryError {
    fn from(e: ExprError) -> Self {
        match e {
            ExprError::Domain(msg) => GeometryError::Domain(msg),
            other => GeometryError::Field(FieldError::Expr(other)),
        }
    }
}

/// Which model produced a geometry.
#[derive(Debug, Clone)]
pub enum Backend<F> {
    /// Flat torus with fixed standard `J` and Kähler potential `φ`; `expr` is
    /// set when the potential came from an expression.
    Torus { potential: F, expr: Option<Expr> },
    /// Toric manifold in action-angle coordinates with symplectic potential `u`.
    Toric { potential: Expr },
}

/// One Kähler structure with every derived coefficient field.
#[derive(Debug, Clone)]
pub struct GeometryState<F: Field> {
    pub(crate) chart: Arc<Chart>,
    pub(crate) backend: Backend<F>,
    /// `ω_{ij}`.
    pub(crate) omega: Tensor<F>,
    /// `ω^{ij}` (matrix inverse).
    pub(crate) omega_inv: Tensor<F>,
    /// `J^i_j`.
    pub(crate) j: Tensor<F>,
    pub(crate) g: Tensor<F>,
    pub(crate) g_inv: Tensor<F>,
    /// Levi-Civita connection.
    pub(crate) connection: SymplecticConnection<F>,
    /// Density of the integration measure against coordinate quadrature.
    pub(crate) density: F,
    /// Frame vectors `e_α = ½(∂_{x^α} - i J ∂_{x^α})`, stored `frame[α][i]`.
    pub(crate) frame: Vec<Vec<F>>,
    /// `Q = (Gᵀ)⁻¹` with `G_{βα} = g(e_β, ē_α)`; stored row-major `m x m`.
    pub(crate) q: Vec<F>,
}

impl<F: Field> GeometryState<F> {
    pub fn chart(&self) -> &Arc<Chart> {
        &self.chart
    }

    pub fn backend(&self) -> &Backend<F> {
        &self.backend
    }

    /// Real dimension `2m`.
    pub fn dim(&self) -> usize {
        self.chart.geo_dim()
    }

    /// Complex dimension `m`.
    pub fn m(&self) -> usize {
        self.chart.m()
    }

    pub fn omega(&self) -> &Tensor<F> {
        &self.omega
    }

    pub fn omega_inv(&self) -> &Tensor<F> {
        &self.omega_inv
    }

    pub fn j(&self) -> &Tensor<F> {
        &self.j
    }

    pub fn metric(&self) -> &Tensor<F> {
        &self.g
    }

    pub fn metric_inv(&self) -> &Tensor<F> {
        &self.g_inv
    }

    pub fn connection(&self) -> &SymplecticConnection<F> {
        &self.connection
    }

    pub fn density(&self) -> &F {
        &self.density
    }

    pub fn frame(&self) -> &[Vec<F>] {
        &self.frame
    }

    pub fn frame_q(&self) -> &[F] {
        &self.q
    }

    /// `∫ f ω_m / 2^m`; on polytope charts the density carries the angle
    /// integral.
    pub fn integrate(&self, f: &F) -> Result<C64, GeometryError> {
        let w = f.mul(&self.density);
        Ok(self.chart.integrate(&w.values()))
    }

    /// `∫ conj(f) h` against the geometric measure.
    pub fn inner(&self, f: &F, h: &F) -> Result<C64, GeometryError> {
        f.same_chart(h)?;
        self.integrate(&f.conj().mul(h))
    }

    pub fn norm(&self, f: &F) -> Result<f64, GeometryError> {
        Ok(self.inner(f, f)?.re.max(0.0).sqrt())
    }

    /// Total volume of the manifold.
    pub fn volume(&self) -> Result<f64, GeometryError> {
        Ok(self
            .integrate(&F::constant(&self.chart, C64::new(1.0, 0.0)))?
            .re)
    }

    /// `f - (∫f)/vol`.
    pub fn mean_free(&self, f: &F) -> Result<F, GeometryError> {
        let mean = self.integrate(f)? / self.volume()?;
        Ok(f.sub(&F::constant(&self.chart, mean)))
    }

    /// `A^i = ω^{ij} A_j`.
    pub fn raise_index(&self, v: &[F]) -> Vec<F> {
        let n = self.dim();
        (0..n)
            .map(|i| {
                let mut acc = F::zeros(&self.chart);
                for (jdx, vj) in v.iter().enumerate() {
                    acc.fma(C64::new(1.0, 0.0), self.omega_inv.get(&[i, jdx]), vj);
                }
                acc
            })
            .collect()
    }

    /// Pointwise invariants of the structure.
    pub fn validate(&self) -> Result<Validation, GeometryError> {
        let n = self.dim();
        let chart = &self.chart;
        let one = C64::new(1.0, 0.0);
        let mut j_sq: f64 = 0.0;
        let mut omega_j: f64 = 0.0;
        let mut g_sym: f64 = 0.0;
        let mut g_from_omega: f64 = 0.0;
        for a in 0..n {
            for b in 0..n {
                let mut jj = F::constant(chart, if a == b { one } else { C64::new(0.0, 0.0) });
                let mut ojj = self.omega.get(&[a, b]).neg();
                let mut oj = self.g.get(&[a, b]).neg();
                for k in 0..n {
                    jj.fma(one, self.j.get(&[a, k]), self.j.get(&[k, b]));
                    oj.fma(one, self.omega.get(&[a, k]), self.j.get(&[k, b]));
                    for l in 0..n {
                        let t = self.j.get(&[k, a]).mul(self.j.get(&[l, b]));
                        ojj.fma(one, &t, self.omega.get(&[k, l]));
                    }
                }
                j_sq = j_sq.max(jj.max_abs());
                omega_j = omega_j.max(ojj.max_abs());
                g_from_omega = g_from_omega.max(oj.max_abs());
                g_sym = g_sym.max(self.g.get(&[a, b]).sub(self.g.get(&[b, a])).max_abs());
            }
        }
        let gamma = &self.connection.gamma;
        let mut torsion: f64 = 0.0;
        for i in 0..n {
            for k in 0..n {
                for jx in 0..n {
                    torsion =
                        torsion.max(gamma.get(&[i, k, jx]).sub(gamma.get(&[i, jx, k])).max_abs());
                }
            }
        }
        let min_eig = linalg::min_eigenvalues(self.g.comps(), n)
            .into_iter()
            .fold(f64::INFINITY, f64::min);
        let nabla_omega = covariant_derivative(gamma, &self.omega)?.max_abs();
        let nabla_j = covariant_derivative(gamma, &self.j)?.max_abs();
        let nabla_g = covariant_derivative(gamma, &self.g)?.max_abs();
        Ok(Validation {
            j_squared: j_sq,
            omega_j_invariance: omega_j,
            g_from_omega,
            g_symmetry: g_sym,
            min_metric_eigenvalue: min_eig,
            torsion,
            nabla_omega,
            nabla_j,
            nabla_g,
        })
    }
}

/// Residuals of the structural invariants (all should be ~0 except the
/// eigenvalue, which must be positive).
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct Validation {
    pub j_squared: f64,
    pub omega_j_invariance: f64,
    pub g_from_omega: f64,
    pub g_symmetry: f64,
    pub min_metric_eigenvalue: f64,
    pub torsion: f64,
    pub nabla_omega: f64,
    pub nabla_j: f64,
    pub nabla_g: f64,
}

pub(crate) fn slots(spec: &str) -> Vec<Slot> {
    spec.chars()
        .map(|c| match c {
            'u' => Slot::Up,
            'd' => Slot::Down,
            'h' => Slot::Hol,
            'a' => Slot::AntiHol,
            _ => unreachable!("slot code {c}"),
        })
        .collect()
}
