//! Discretised fields: charts, quadrature, spectral and jet differentiation,
//! tensors and matrix-free linear operators with compositional adjoints.

mod chart;
mod field;
mod linop;
mod tensor;

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use num_complex::Complex64 as C64;
use rand::Rng;
use thiserror::Error;

pub use chart::{gauss_legendre, Chart, ChartKind, Polytope};
pub use field::{inner_product, Field, GridField, JetField, NYQUIST_FLOOR, NYQUIST_FRACTION};
pub use linop::{
    adjoint_defect, compose_adjoint, Deriv, ElementaryMap, Gradient, LinearOperatorHandle,
    Pointwise,
};
pub use tensor::{Slot, Tensor};

use crate::expr::{Expr, ExprError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FieldError {
    #[error("axis {axis} out of range for dimension {dim}")]
    AxisOutOfRange { axis: usize, dim: usize },
    #[error(
        "field under-resolved along axis {axis}: high-frequency energy fraction {fraction:.3e}"
    )]
    Nyquist { axis: usize, fraction: f64 },
    #[error("grid differentiation is forbidden on polytope charts; derivatives must come from expressions")]
    PolytopeDifferentiationForbidden,
    #[error("jet order exhausted while differentiating along axis {axis}")]
    JetOrderExhausted { axis: usize },
    #[error("chart has no jet space")]
    NoJetSpace,
    #[error("fields live on different charts")]
    ChartMismatch,
    #[error(
        "signature mismatch at position {position}: expected {expected} components, found {found}"
    )]
    SignatureMismatch {
        position: usize,
        expected: usize,
        found: usize,
    },
    #[error("empty operator composition")]
    EmptyComposition,
    #[error("division by zero at node {node}")]
    Singular { node: usize },
    #[error("invalid chart: {0}")]
    InvalidChart(String),
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for FieldError {
    fn from(e: std::io::Error) -> Self {
        FieldError::Io(e.to_string())
    }
}

/// Random real trigonometric polynomial with modes `|k_a| <= max_mode` and
/// coefficients decaying like `1/(1+|k|^2)`.
pub fn random_trig_field<R: Rng>(chart: &Arc<Chart>, max_mode: i32, rng: &mut R) -> GridField {
    let terms = trig_terms(chart.geo_dim(), max_mode, rng);
    GridField::from_fn(chart, |p| C64::new(eval_trig(&terms, p), 0.0))
}

/// The same random trigonometric polynomial as [`random_trig_field`] (for
/// the same rng state) as an expression in `dim` variables.
pub fn random_trig_expr<R: Rng>(dim: usize, max_mode: i32, rng: &mut R) -> Expr {
    let mut out = Expr::constant(0.0);
    for (k, a, b) in trig_terms(dim, max_mode, rng) {
        let mut phase = Expr::constant(0.0);
        for (i, &ki) in k.iter().enumerate() {
            if ki != 0 {
                phase = Expr::add(
                    phase,
                    Expr::mul(Expr::constant(2.0 * PI * ki as f64), Expr::var(i)),
                );
            }
        }
        out = Expr::add(out, Expr::mul(Expr::constant(a), Expr::cos(phase.clone())));
        out = Expr::add(out, Expr::mul(Expr::constant(b), Expr::sin(phase)));
    }
    out
}

/// Random complex band-limited field (real and imaginary parts independent).
pub fn random_complex_field<R: Rng>(chart: &Arc<Chart>, max_mode: i32, rng: &mut R) -> GridField {
    let re = trig_terms(chart.geo_dim(), max_mode, rng);
    let im = trig_terms(chart.geo_dim(), max_mode, rng);
    GridField::from_fn(chart, |p| C64::new(eval_trig(&re, p), eval_trig(&im, p)))
}

type TrigTerm = (Vec<i32>, f64, f64);

fn trig_terms<R: Rng>(dim: usize, max_mode: i32, rng: &mut R) -> Vec<TrigTerm> {
    let mut out = Vec::new();
    let mut k = vec![-max_mode; dim];
    loop {
        let k2: i32 = k.iter().map(|v| v * v).sum();
        let decay = 1.0 / (1.0 + k2 as f64);
        out.push((
            k.clone(),
            decay * rng.random_range(-1.0..1.0),
            decay * rng.random_range(-1.0..1.0),
        ));
        let mut a = 0;
        loop {
            if a == dim {
                return out;
            }
            k[a] += 1;
            if k[a] <= max_mode {
                break;
            }
            k[a] = -max_mode;
            a += 1;
        }
    }
}

fn eval_trig(terms: &[TrigTerm], p: &[f64]) -> f64 {
    terms
        .iter()
        .map(|(k, a, b)| {
            let phase: f64 = 2.0 * PI * k.iter().zip(p).map(|(&ki, &x)| ki as f64 * x).sum::<f64>();
            a * phase.cos() + b * phase.sin()
        })
        .sum()
}

/// Write node coordinates and named component fields as CSV, plus a JSON
/// sidecar (`<path>.json`) with chart metadata.
pub fn dump_fields<F: Field>(path: &Path, fields: &[(&str, &F)]) -> Result<(), FieldError> {
    let chart = match fields.first() {
        Some((_, f)) => f.chart().clone(),
        None => return Err(FieldError::InvalidChart("nothing to dump".into())),
    };
    for (_, f) in fields {
        if !Arc::ptr_eq(f.chart(), &chart) {
            return Err(FieldError::ChartMismatch);
        }
    }
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    let mut header: Vec<String> = (1..=chart.node_dim()).map(|a| format!("x{a}")).collect();
    for (name, _) in fields {
        header.push(format!("{name}_re"));
        header.push(format!("{name}_im"));
    }
    writeln!(out, "{}", header.join(","))?;
    let values: Vec<Vec<C64>> = fields.iter().map(|(_, f)| f.values()).collect();
    for i in 0..chart.len() {
        let mut row: Vec<String> = chart.node(i).iter().map(|x| format!("{x:?}")).collect();
        for v in &values {
            row.push(format!("{:?}", v[i].re));
            row.push(format!("{:?}", v[i].im));
        }
        writeln!(out, "{}", row.join(","))?;
    }
    out.flush()?;
    let meta = serde_json::json!({
        "kind": chart.kind(),
        "geo_dim": chart.geo_dim(),
        "node_dim": chart.node_dim(),
        "shape": chart.shape(),
        "nodes": chart.len(),
        "volume": chart.volume(),
        "polytope": chart.polytope(),
        "components": fields.iter().map(|(n, _)| *n).collect::<Vec<_>>(),
    });
    let mut side = path.as_os_str().to_owned();
    side.push(".json");
    std::fs::write(side, serde_json::to_string_pretty(&meta).expect("json"))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn derivative_adjoint_is_minus_derivative() {
        let chart = Chart::torus(1, 16).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let op = compose_adjoint::<GridField>(vec![Arc::new(Deriv { axis: 1 })]).unwrap();
        let probes: Vec<_> = (0..20)
            .map(|_| {
                (
                    vec![random_complex_field(&chart, 4, &mut rng)],
                    vec![random_complex_field(&chart, 4, &mut rng)],
                )
            })
            .collect();
        assert!(adjoint_defect(&op, &probes).unwrap() < 1e-12);
    }

    #[test]
    fn multiplier_after_derivative() {
        // w·h carries modes up to 7, resolved at 32 nodes.
        let chart = Chart::torus(1, 32).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let w = random_complex_field(&chart, 3, &mut rng);
        let op = compose_adjoint::<GridField>(vec![
            Arc::new(Deriv { axis: 0 }),
            Arc::new(Pointwise::scalar(w)),
        ])
        .unwrap();
        let probes: Vec<_> = (0..20)
            .map(|_| {
                (
                    vec![random_complex_field(&chart, 4, &mut rng)],
                    vec![random_complex_field(&chart, 4, &mut rng)],
                )
            })
            .collect();
        let d = adjoint_defect(&op, &probes).unwrap();
        assert!(d < 1e-12, "{d}");
    }

    #[test]
    fn trig_expr_matches_trig_field() {
        let chart = Chart::torus(1, 16).unwrap();
        let f = random_trig_field(&chart, 2, &mut ChaCha8Rng::seed_from_u64(4));
        let e = random_trig_expr(2, 2, &mut ChaCha8Rng::seed_from_u64(4));
        let g = GridField::from_expr(&chart, &e).unwrap();
        assert!(f.sub(&g).max_abs() < 1e-13);
    }

    #[test]
    fn signature_mismatch_is_reported() {
        let err = compose_adjoint::<GridField>(vec![
            Arc::new(Gradient {
                components: 1,
                dim: 2,
            }),
            Arc::new(Deriv { axis: 0 }),
        ])
        .unwrap_err();
        assert_eq!(
            err,
            FieldError::SignatureMismatch {
                position: 1,
                expected: 2,
                found: 1
            }
        );
    }

    #[test]
    fn dump_writes_csv_and_sidecar() {
        let chart = Chart::torus(1, 4).unwrap();
        let f = GridField::constant(&chart, C64::new(1.0, -2.0));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.csv");
        dump_fields(&path, &[("f", &f)]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("x1,x2,f_re,f_im\n"));
        assert_eq!(text.lines().count(), 17);
        let side: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("f.csv.json")).unwrap())
                .unwrap();
        assert_eq!(side["kind"], "periodic-torus");
    }
}
