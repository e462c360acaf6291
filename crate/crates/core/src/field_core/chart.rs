use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64 as C64;
use rustfft::{Fft, FftPlanner};

use super::FieldError;
use crate::expr::Expr;
use crate::jet::JetSpace;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChartKind {
    PeriodicTorus,
    PolytopeInterior,
}

/// Convex polytope `{x : <a_k, x> + c_k >= 0}` in dimension 1 or 2.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct Polytope {
    pub normals: Vec<Vec<f64>>,
    pub offsets: Vec<f64>,
    vertices: Vec<Vec<f64>>,
}

impl Polytope {
    pub fn new(normals: Vec<Vec<f64>>, offsets: Vec<f64>) -> Result<Polytope, FieldError> {
        if normals.is_empty() || normals.len() != offsets.len() {
            return Err(FieldError::InvalidChart(
                "polytope needs matching normals and offsets".into(),
            ));
        }
        let dim = normals[0].len();
        if !(1..=2).contains(&dim) || normals.iter().any(|a| a.len() != dim) {
            return Err(FieldError::InvalidChart(format!(
                "polytopes are supported in dimension 1 or 2, got {dim}"
            )));
        }
        let mut p = Polytope {
            normals,
            offsets,
            vertices: Vec::new(),
        };
        p.vertices = p.compute_vertices();
        let min_count = dim + 1;
        if p.vertices.len() < min_count {
            return Err(FieldError::InvalidChart(
                "polytope is empty or unbounded".into(),
            ));
        }
        Ok(p)
    }

    pub fn dim(&self) -> usize {
        self.normals[0].len()
    }

    pub fn vertices(&self) -> &[Vec<f64>] {
        &self.vertices
    }

    /// Values `l_k(x)` of every defining affine function.
    pub fn ell(&self, x: &[f64]) -> Vec<f64> {
        self.normals
            .iter()
            .zip(&self.offsets)
            .map(|(a, c)| a.iter().zip(x).map(|(ai, xi)| ai * xi).sum::<f64>() + c)
            .collect()
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        self.ell(x).iter().all(|&l| l >= -tol)
    }

    /// `Π_k l_k(x)^power`, vanishing to order `power` on every facet.
    pub fn facet_bump(&self, power: i32) -> Expr {
        let mut bump = Expr::constant(1.0);
        for (normal, &offset) in self.normals.iter().zip(&self.offsets) {
            let mut l = Expr::constant(offset);
            for (a, &c) in normal.iter().enumerate() {
                l = Expr::add(l, Expr::mul(Expr::constant(c), Expr::var(a)));
            }
            bump = Expr::mul(bump, Expr::powi(l, power));
        }
        bump
    }

    fn compute_vertices(&self) -> Vec<Vec<f64>> {
        let tol = 1e-12;
        let mut out: Vec<Vec<f64>> = Vec::new();
        let push = |v: Vec<f64>, out: &mut Vec<Vec<f64>>| {
            if self.contains(&v, 1e-10)
                && !out
                    .iter()
                    .any(|w| w.iter().zip(&v).all(|(a, b)| (a - b).abs() < 1e-10))
            {
                out.push(v);
            }
        };
        match self.dim() {
            1 => {
                for (a, c) in self.normals.iter().zip(&self.offsets) {
                    if a[0].abs() > tol {
                        push(vec![-c / a[0]], &mut out);
                    }
                }
            }
            _ => {
                let n = self.normals.len();
                for i in 0..n {
                    for j in i + 1..n {
                        let (a, b) = (&self.normals[i], &self.normals[j]);
                        let det = a[0] * b[1] - a[1] * b[0];
                        if det.abs() < tol {
                            continue;
                        }
                        let (ci, cj) = (-self.offsets[i], -self.offsets[j]);
                        let x = (ci * b[1] - a[1] * cj) / det;
                        let y = (a[0] * cj - ci * b[0]) / det;
                        push(vec![x, y], &mut out);
                    }
                }
            }
        }
        out.sort_by(|p, q| p.partial_cmp(q).expect("finite vertices"));
        out
    }

    /// Interval `[lo, hi]` of the first coordinate at height `y` (2D only).
    fn x_range(&self, y: f64) -> (f64, f64) {
        let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
        for (a, c) in self.normals.iter().zip(&self.offsets) {
            let rest = a[1] * y + c;
            if a[0] > 1e-14 {
                lo = lo.max(-rest / a[0]);
            } else if a[0] < -1e-14 {
                hi = hi.min(-rest / a[0]);
            }
        }
        (lo, hi)
    }

    /// Lebesgue measure, from the vertex list (shoelace in 2D).
    pub fn volume(&self) -> f64 {
        if self.dim() == 1 {
            return self.vertices[self.vertices.len() - 1][0] - self.vertices[0][0];
        }
        let c: Vec<f64> = (0..2)
            .map(|k| self.vertices.iter().map(|v| v[k]).sum::<f64>() / self.vertices.len() as f64)
            .collect();
        let mut vs = self.vertices.clone();
        vs.sort_by(|p, q| {
            let a = (p[1] - c[1]).atan2(p[0] - c[0]);
            let b = (q[1] - c[1]).atan2(q[0] - c[0]);
            a.partial_cmp(&b).expect("finite angles")
        });
        let n = vs.len();
        0.5 * (0..n)
            .map(|i| {
                let (p, q) = (&vs[i], &vs[(i + 1) % n]);
                p[0] * q[1] - q[0] * p[1]
            })
            .sum::<f64>()
            .abs()
    }
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

/// `(P_n(x), P_n'(x))` by the three-term recurrence.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

pub(crate) struct AxisFft {
    pub forward: Arc<dyn Fft<f64>>,
    pub inverse: Arc<dyn Fft<f64>>,
}

/// Discretised chart: periodic unit torus or the interior of a polytope.
///
/// Nodes are stored row-major with the last grid axis fastest. The geometric
/// dimension `geo_dim` counts every real coordinate of the manifold; on a
/// polytope chart the angle coordinates are implicit and fields are constant
/// along them.
pub struct Chart {
    kind: ChartKind,
    geo_dim: usize,
    shape: Vec<usize>,
    coords: Vec<f64>,
    weights: Vec<f64>,
    volume: f64,
    polytope: Option<Polytope>,
    jet_space: Option<Arc<JetSpace>>,
    ffts: Vec<AxisFft>,
}

impl fmt::Debug for Chart {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Chart")
            .field("kind", &self.kind)
            .field("geo_dim", &self.geo_dim)
            .field("shape", &self.shape)
            .field("nodes", &self.len())
            .finish()
    }
}

impl Chart {
    /// Unit torus `[0,1)^{2m}` with `n` uniform nodes per axis.
    pub fn torus(m: usize, n: usize) -> Result<Arc<Chart>, FieldError> {
        if m == 0 || n < 4 || !n.is_power_of_two() {
            return Err(FieldError::InvalidChart(format!(
                "torus needs m >= 1 and a power-of-two resolution >= 4, got m={m}, n={n}"
            )));
        }
        let dim = 2 * m;
        let shape = vec![n; dim];
        let total = n.pow(dim as u32);
        let mut coords = Vec::with_capacity(total * dim);
        for idx in 0..total {
            let mut rem = idx;
            let mut pt = vec![0.0; dim];
            for a in (0..dim).rev() {
                pt[a] = (rem % n) as f64 / n as f64;
                rem /= n;
            }
            coords.extend(pt);
        }
        let mut planner = FftPlanner::new();
        let ffts = (0..dim)
            .map(|_| AxisFft {
                forward: planner.plan_fft_forward(n),
                inverse: planner.plan_fft_inverse(n),
            })
            .collect();
        Ok(Arc::new(Chart {
            kind: ChartKind::PeriodicTorus,
            geo_dim: dim,
            shape,
            coords,
            weights: vec![1.0 / total as f64; total],
            volume: 1.0,
            polytope: None,
            jet_space: None,
            ffts,
        }))
    }

    /// Gauss-Legendre nodes strictly inside `poly`, `n` per axis per slab,
    /// carrying jets of order `jet_order` for exact differentiation.
    pub fn on_polytope(
        poly: Polytope,
        n: usize,
        jet_order: usize,
    ) -> Result<Arc<Chart>, FieldError> {
        if n == 0 {
            return Err(FieldError::InvalidChart(
                "need at least one node per axis".into(),
            ));
        }
        let dim = poly.dim();
        let (gx, gw) = gauss_legendre(n);
        let mut coords = Vec::new();
        let mut weights = Vec::new();
        let shape = if dim == 1 {
            let (a, b) = (
                poly.vertices[0][0],
                poly.vertices[poly.vertices.len() - 1][0],
            );
            for (x, w) in gx.iter().zip(&gw) {
                coords.push(a + (x + 1.0) * 0.5 * (b - a));
                weights.push(w * 0.5 * (b - a));
            }
            vec![n]
        } else {
            let mut levels: Vec<f64> = poly.vertices.iter().map(|v| v[1]).collect();
            levels.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
            levels.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
            for win in levels.windows(2) {
                let (y0, y1) = (win[0], win[1]);
                for (ty, wy) in gx.iter().zip(&gw) {
                    let y = y0 + (ty + 1.0) * 0.5 * (y1 - y0);
                    let (lo, hi) = poly.x_range(y);
                    for (tx, wx) in gx.iter().zip(&gw) {
                        coords.push(lo + (tx + 1.0) * 0.5 * (hi - lo));
                        coords.push(y);
                        weights.push(wx * wy * 0.25 * (hi - lo) * (y1 - y0));
                    }
                }
            }
            vec![weights.len()]
        };
        for node in coords.chunks(dim) {
            if poly.ell(node).iter().any(|&l| l <= 0.0) {
                return Err(FieldError::InvalidChart(
                    "quadrature node on the polytope boundary".into(),
                ));
            }
        }
        let volume = poly.volume();
        Ok(Arc::new(Chart {
            kind: ChartKind::PolytopeInterior,
            geo_dim: 2 * dim,
            shape,
            coords,
            weights,
            volume,
            polytope: Some(poly),
            jet_space: Some(JetSpace::new(dim, jet_order)),
            ffts: Vec::new(),
        }))
    }

    pub fn kind(&self) -> ChartKind {
        self.kind
    }

    /// Real dimension of the manifold (2m).
    pub fn geo_dim(&self) -> usize {
        self.geo_dim
    }

    /// Complex dimension m.
    pub fn m(&self) -> usize {
        self.geo_dim / 2
    }

    /// Number of coordinates per node.
    pub fn node_dim(&self) -> usize {
        match self.kind {
            ChartKind::PeriodicTorus => self.geo_dim,
            ChartKind::PolytopeInterior => self.geo_dim / 2,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn node(&self, i: usize) -> &[f64] {
        let d = self.node_dim();
        &self.coords[i * d..(i + 1) * d]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Coordinate volume (sum of quadrature weights up to rounding).
    pub fn volume(&self) -> f64 {
        self.volume
    }

    pub fn polytope(&self) -> Option<&Polytope> {
        self.polytope.as_ref()
    }

    pub fn jet_space(&self) -> Option<&Arc<JetSpace>> {
        self.jet_space.as_ref()
    }

    /// Resolution along each periodic axis (torus only).
    pub fn resolution(&self) -> Option<usize> {
        match self.kind {
            ChartKind::PeriodicTorus => Some(self.shape[0]),
            ChartKind::PolytopeInterior => None,
        }
    }

    pub(crate) fn fft(&self, axis: usize) -> &AxisFft {
        &self.ffts[axis]
    }

    /// Σ conj(f)·h·w in fixed node order.
    pub fn quadrature(&self, f: &[C64], h: &[C64]) -> C64 {
        let mut acc = C64::new(0.0, 0.0);
        for ((a, b), w) in f.iter().zip(h).zip(&self.weights) {
            acc += a.conj() * b * w;
        }
        acc
    }

    /// Σ f·w in fixed node order.
    pub fn integrate(&self, f: &[C64]) -> C64 {
        let mut acc = C64::new(0.0, 0.0);
        for (a, w) in f.iter().zip(&self.weights) {
            acc += a * w;
        }
        acc
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_is_exact_to_degree_2n_minus_1() {
        for n in [1usize, 2, 5, 12, 24] {
            let (x, w) = gauss_legendre(n);
            for deg in 0..2 * n {
                let q: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(deg as i32)).sum();
                let exact = if deg % 2 == 1 {
                    0.0
                } else {
                    2.0 / (deg as f64 + 1.0)
                };
                assert!((q - exact).abs() < 1e-13, "n={n} deg={deg}: {q} vs {exact}");
            }
        }
    }

    #[test]
    fn trapezoid_vertices_and_volume() {
        let p = Polytope::new(
            vec![
                vec![1.0, 0.0],
                vec![0.0, 1.0],
                vec![0.0, -1.0],
                vec![-1.0, -1.0],
            ],
            vec![0.0, 0.0, 1.0, 2.0],
        )
        .unwrap();
        assert_eq!(p.vertices().len(), 4);
        assert!((p.volume() - 1.5).abs() < 1e-15);
        let chart = Chart::on_polytope(p, 8, 2).unwrap();
        let s: f64 = chart.weights().iter().sum();
        assert!((s - 1.5).abs() < 1e-12 * 1.5);
        assert!(chart.weights().iter().all(|&w| w > 0.0));
        // x1^3 x2^2 over the trapezoid: ∫_0^1 y^2 (2-y)^4 / 4 dy = 0.54...
        let q: f64 = (0..chart.len())
            .map(|i| {
                let p = chart.node(i);
                chart.weights()[i] * p[0].powi(3) * p[1].powi(2)
            })
            .sum();
        let exact = {
            // ∫_0^1 y^2 (2-y)^4 dy / 4, expanded by hand.
            let poly = |y: f64| {
                y.powi(3) * 16.0 / 3.0 - 32.0 * y.powi(4) / 4.0 + 24.0 * y.powi(5) / 5.0
                    - 8.0 * y.powi(6) / 6.0
                    + y.powi(7) / 7.0
            };
            poly(1.0) / 4.0
        };
        assert!((q - exact).abs() < 1e-13, "{q} vs {exact}");
    }

    #[test]
    fn torus_weights_sum_to_one() {
        let c = Chart::torus(1, 16).unwrap();
        let s: f64 = c.weights().iter().sum();
        assert!((s - 1.0).abs() < 1e-14);
        assert_eq!(c.node(17), &[1.0 / 16.0, 1.0 / 16.0]);
    }
}
