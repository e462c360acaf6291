use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64 as C64;

use super::linalg::{self, inverse, matmul};
use super::{slots, Backend, GeometryError, GeometryState, SymplecticConnection};
use crate::expr::Expr;
use crate::field_core::{Chart, ChartKind, Field, GridField, JetField, Polytope, Tensor};

const ONE: C64 = C64::new(1.0, 0.0);

/// Torus `[0,1)^{2m}` with the standard complex structure
/// (`z^a = x^a + i x^{m+a}`) and Kähler potential `φ`.
pub fn build_torus_geometry(
    phi: &Expr,
    m: usize,
    chart: &Arc<Chart>,
) -> Result<GeometryState<GridField>, GeometryError> {
    build_torus_geometry_corrected(phi, None, m, chart)
}

/// Torus geometry with potential `φ + c`, `φ` symbolic and `c` a grid
/// correction whose Hessian is taken spectrally.
pub fn build_torus_geometry_corrected(
    phi: &Expr,
    correction: Option<&GridField>,
    m: usize,
    chart: &Arc<Chart>,
) -> Result<GeometryState<GridField>, GeometryError> {
    if chart.kind() != ChartKind::PeriodicTorus || chart.m() != m {
        return Err(GeometryError::Invalid(format!(
            "torus geometry of complex dimension {m} needs a periodic chart of real dimension {}",
            2 * m
        )));
    }
    let n = chart.geo_dim();
    let mut d2 = vec![GridField::zeros(chart); n * n];
    for a in 0..n {
        let da = phi.derive(a, 1)?;
        for b in a..n {
            let v = GridField::from_expr(chart, &da.derive(b, 1)?)?;
            d2[b * n + a] = v.clone();
            d2[a * n + b] = v;
        }
    }
    let mut potential = GridField::from_expr(chart, phi)?;
    if let Some(c) = correction {
        if !Arc::ptr_eq(c.chart(), chart) {
            return Err(GeometryError::Invalid(
                "potential correction lives on another chart".into(),
            ));
        }
        let spectral = spectral_hessian(c)?;
        for (d, s) in d2.iter_mut().zip(&spectral) {
            *d = d.add(s);
        }
        potential = potential.add(c);
    }
    let expr = correction.is_none().then(|| phi.clone());
    from_hessian(chart, potential, expr, d2)
}

/// As [`build_torus_geometry`], from grid values of the potential. The
/// Hessian is spectral, so this path loses two orders of roundoff relative
/// to the expression path.
pub fn build_torus_geometry_from_field(
    phi: &GridField,
) -> Result<GeometryState<GridField>, GeometryError> {
    let chart = phi.chart().clone();
    if chart.kind() != ChartKind::PeriodicTorus {
        return Err(GeometryError::Invalid(
            "torus geometry needs a periodic chart".into(),
        ));
    }
    let d2 = spectral_hessian(phi)?;
    from_hessian(&chart, phi.clone(), None, d2)
}

fn spectral_hessian(phi: &GridField) -> Result<Vec<GridField>, GeometryError> {
    let chart = phi.chart();
    let n = chart.geo_dim();
    let mut d1 = Vec::with_capacity(n);
    for a in 0..n {
        d1.push(phi.deriv(a)?);
    }
    let mut d2 = vec![GridField::zeros(chart); n * n];
    for a in 0..n {
        for b in a..n {
            let v = d1[a].deriv(b)?;
            d2[b * n + a] = v.clone();
            d2[a * n + b] = v;
        }
    }
    Ok(d2)
}

fn from_hessian(
    chart: &Arc<Chart>,
    phi: GridField,
    expr: Option<Expr>,
    d2: Vec<GridField>,
) -> Result<GeometryState<GridField>, GeometryError> {
    let chart = chart.clone();
    let n = chart.geo_dim();
    let m = n / 2;
    let half = C64::new(0.5, 0.0);
    let mut g = vec![GridField::zeros(&chart); n * n];
    for a in 0..m {
        for b in 0..m {
            let mut re = d2[a * n + b].add(&d2[(m + a) * n + m + b]).scale(half);
            if a == b {
                re = re.add(&GridField::constant(&chart, C64::new(2.0, 0.0)));
            }
            let im = d2[a * n + m + b].sub(&d2[(m + a) * n + b]).scale(half);
            g[a * n + b] = re.clone();
            g[(m + a) * n + m + b] = re;
            g[a * n + m + b] = im.clone();
            g[(m + b) * n + a] = im;
        }
    }
    for (node, e) in linalg::min_eigenvalues(&g, n).into_iter().enumerate() {
        if e <= 0.0 {
            // g restricted to real coordinates has eigenvalues 2·eig(G).
            return Err(GeometryError::NonPositiveMetric {
                node,
                min_eigenvalue: 0.5 * e,
            });
        }
    }
    let g_inv = inverse(&g, n)?;
    let mut jvals = vec![0.0; n * n];
    for a in 0..m {
        jvals[(m + a) * n + a] = 1.0;
        jvals[a * n + m + a] = -1.0;
    }
    let j: Vec<GridField> = linalg::constant(&chart, &jvals);
    let omega: Vec<GridField> = matmul(&g, &j, n).iter().map(|f| f.neg()).collect();
    let omega_inv = matmul(&j, &g_inv, n);
    let scale = 0.5f64.powi(m as i32);
    let density: Vec<f64> = linalg::determinants(&g, n)
        .into_iter()
        .map(|d| d.max(0.0).sqrt() * scale)
        .collect();
    let density = GridField::from_real(&chart, &density)?;
    assemble(
        chart,
        Backend::Torus {
            potential: phi,
            expr,
        },
        g,
        g_inv,
        j,
        omega,
        omega_inv,
        density,
    )
}

/// Toric manifold over `polytope` in action-angle coordinates
/// `(x^1..x^m, θ^1..θ^m)` with symplectic potential `u`.
///
/// `g = diag(Hess u, (Hess u)⁻¹)`, `ω = Σ dx^a ∧ dθ^a` and
/// `J = [[0, -(Hess u)⁻¹], [Hess u, 0]]`.
pub fn build_toric_geometry(
    polytope: &Polytope,
    u: &Expr,
    chart: &Arc<Chart>,
) -> Result<GeometryState<JetField>, GeometryError> {
    if chart.kind() != ChartKind::PolytopeInterior || chart.polytope() != Some(polytope) {
        return Err(GeometryError::Invalid(
            "toric geometry needs the chart of its own polytope".into(),
        ));
    }
    let m = chart.m();
    let n = 2 * m;
    let space = chart.jet_space().expect("polytope charts carry jets");
    if space.order() < 4 {
        return Err(GeometryError::Invalid(
            "toric geometry needs jets of order >= 4".into(),
        ));
    }
    for i in 0..chart.len() {
        if let Some((k, l)) = polytope
            .ell(chart.node(i))
            .iter()
            .enumerate()
            .find(|(_, &l)| l <= 0.0)
        {
            return Err(GeometryError::Domain(format!(
                "node {i} violates facet {k} (l = {l})"
            )));
        }
    }
    let uf = JetField::from_expr(chart, u)?;
    let mut hess = vec![JetField::zeros(chart); m * m];
    for a in 0..m {
        let da = uf.deriv(a)?;
        for b in 0..m {
            hess[a * m + b] = da.deriv(b)?;
        }
    }
    for (node, e) in linalg::min_eigenvalues(&hess, m).into_iter().enumerate() {
        if e <= 0.0 {
            return Err(GeometryError::NonConvexPotential {
                node,
                min_eigenvalue: e,
            });
        }
    }
    let hess_inv = inverse(&hess, m)?;
    let zero = JetField::zeros(chart);
    let mut g = vec![zero.clone(); n * n];
    let mut g_inv = vec![zero.clone(); n * n];
    let mut j = vec![zero.clone(); n * n];
    let mut w = vec![0.0; n * n];
    for a in 0..m {
        w[a * n + m + a] = 1.0;
        w[(m + a) * n + a] = -1.0;
        for b in 0..m {
            g[a * n + b] = hess[a * m + b].clone();
            g[(m + a) * n + m + b] = hess_inv[a * m + b].clone();
            g_inv[a * n + b] = hess_inv[a * m + b].clone();
            g_inv[(m + a) * n + m + b] = hess[a * m + b].clone();
            j[a * n + m + b] = hess_inv[a * m + b].neg();
            j[(m + a) * n + b] = hess[a * m + b].clone();
        }
    }
    let omega: Vec<JetField> = linalg::constant(chart, &w);
    let w_inv: Vec<f64> = w.iter().map(|v| -v).collect();
    let omega_inv: Vec<JetField> = linalg::constant(chart, &w_inv);
    let density = JetField::constant(chart, C64::new(PI.powi(m as i32), 0.0));
    assemble(
        chart.clone(),
        Backend::Toric {
            potential: u.clone(),
        },
        g,
        g_inv,
        j,
        omega,
        omega_inv,
        density,
    )
}

#[allow(clippy::too_many_arguments)]
fn assemble<F: Field>(
    chart: Arc<Chart>,
    backend: Backend<F>,
    g: Vec<F>,
    g_inv: Vec<F>,
    j: Vec<F>,
    omega: Vec<F>,
    omega_inv: Vec<F>,
    density: F,
) -> Result<GeometryState<F>, GeometryError> {
    let n = chart.geo_dim();
    let m = n / 2;
    let mut dg = Vec::with_capacity(n * n * n);
    for comp in &g {
        for k in 0..n {
            dg.push(comp.deriv(k)?);
        }
    }
    let dgc = |l: usize, jx: usize, k: usize| &dg[(l * n + jx) * n + k];
    let half = C64::new(0.5, 0.0);
    let mut gamma = Tensor::zeros(&chart, n, slots("udd"));
    for i in 0..n {
        for k in 0..n {
            for jx in k..n {
                let mut acc = F::zeros(&chart);
                for l in 0..n {
                    let t = dgc(l, jx, k).add(dgc(l, k, jx)).sub(dgc(k, jx, l));
                    acc.fma(half, &g_inv[i * n + l], &t);
                }
                *gamma.get_mut(&[i, jx, k]) = acc.clone();
                *gamma.get_mut(&[i, k, jx]) = acc;
            }
        }
    }
    let mut frame = Vec::with_capacity(m);
    for a in 0..m {
        let comps: Vec<F> = (0..n)
            .map(|i| {
                let delta = F::constant(&chart, if i == a { ONE } else { C64::new(0.0, 0.0) });
                delta
                    .sub(&j[i * n + a].scale(C64::new(0.0, 1.0)))
                    .scale(half)
            })
            .collect();
        frame.push(comps);
    }
    // G_{βα} = g(e_β, ē_α); Q = (Gᵀ)⁻¹.
    let mut gt = vec![F::zeros(&chart); m * m];
    for beta in 0..m {
        for alpha in 0..m {
            let mut acc = F::zeros(&chart);
            for i in 0..n {
                for jx in 0..n {
                    let t = frame[beta][i].mul(&frame[alpha][jx].conj());
                    acc.fma(ONE, &t, &g[i * n + jx]);
                }
            }
            gt[alpha * m + beta] = acc;
        }
    }
    let q = inverse(&gt, m)?;
    let tensor = |v: Vec<F>, s: &str| Tensor::from_comps(n, slots(s), v).expect("n x n");
    Ok(GeometryState {
        chart,
        backend,
        omega: tensor(omega, "dd"),
        omega_inv: tensor(omega_inv, "uu"),
        j: tensor(j, "ud"),
        g: tensor(g, "dd"),
        g_inv: tensor(g_inv, "uu"),
        connection: SymplecticConnection { gamma },
        density,
        frame,
        q,
    })
}
