use std::f64::consts::PI;

use cgkahler::expr::Expr;
use cgkahler::field_core::{Chart, Field, GridField, JetField, Polytope, Slot, Tensor};
use cgkahler::geometry::*;
use num_complex::Complex64 as C64;

fn torus(phi: &str, n: usize) -> GeometryState<GridField> {
    let chart = Chart::torus(1, n).unwrap();
    build_torus_geometry(&Expr::parse(phi).unwrap(), 1, &chart).unwrap()
}

fn cp1(u: &str) -> GeometryState<JetField> {
    let poly = Polytope::new(vec![vec![1.0], vec![-1.0]], vec![0.0, 2.0]).unwrap();
    let chart = Chart::on_polytope(poly.clone(), 16, 8).unwrap();
    build_toric_geometry(&poly, &Expr::parse(u).unwrap(), &chart).unwrap()
}

fn f1_polytope() -> Polytope {
    Polytope::new(
        vec![
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![0.0, -1.0],
            vec![-1.0, -1.0],
        ],
        vec![0.0, 0.0, 1.0, 2.0],
    )
    .unwrap()
}

const CP1_U: &str = "0.5*(x1*log(x1) + (2-x1)*log(2-x1))";

#[test]
fn flat_torus_is_flat() {
    let g = torus("0", 32);
    for a in 0..2 {
        for b in 0..2 {
            let expect = if a == b { 2.0 } else { 0.0 };
            let dev = g
                .metric()
                .get(&[a, b])
                .sub(&GridField::constant(g.chart(), C64::new(expect, 0.0)));
            assert!(dev.max_abs() < 1e-15);
        }
    }
    assert_eq!(g.connection().gamma().max_abs(), 0.0);
    assert!((g.volume().unwrap() - 1.0).abs() < 1e-14);
}

#[test]
fn perturbed_torus_metric_coefficient() {
    let g = torus("0.05*cos(2*pi*x1)", 32);
    // G_{zz̄} = 1 + ¼Δφ is the measure density in complex dimension one.
    for (i, v) in g.density().data().iter().enumerate() {
        let x = g.chart().node(i)[0];
        let expect = 1.0 - 0.05 * PI * PI * (2.0 * PI * x).cos();
        assert!((v.re - expect).abs() < 1e-12);
    }
    let q = g.frame_q()[0].data()[5].re;
    assert!((q * g.density().data()[5].re - 1.0).abs() < 1e-12);
}

#[test]
fn degenerate_potential_is_rejected() {
    let chart = Chart::torus(1, 32).unwrap();
    let err =
        build_torus_geometry(&Expr::parse("0.2*cos(2*pi*x1)").unwrap(), 1, &chart).unwrap_err();
    match err {
        GeometryError::NonPositiveMetric { min_eigenvalue, .. } => {
            assert!((min_eigenvalue - (1.0 - 0.2 * PI * PI)).abs() < 1e-10)
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn perturbed_torus_invariants() {
    let g = torus("0.05*cos(2*pi*x1) + 0.01*sin(2*pi*(x1+x2))", 32);
    let v = g.validate().unwrap();
    assert!(v.j_squared < 1e-14, "{v:?}");
    assert!(v.omega_j_invariance < 1e-12, "{v:?}");
    assert!(v.g_from_omega < 1e-12, "{v:?}");
    assert!(v.torsion < 1e-14, "{v:?}");
    assert!(v.nabla_omega < 1e-10, "{v:?}");
    assert!(v.nabla_j < 1e-9, "{v:?}");
    assert!(v.nabla_g < 1e-10, "{v:?}");
    assert!(v.min_metric_eigenvalue > 0.0);
}

#[test]
fn curvature_symmetries_for_levi_civita() {
    let g = torus("0.05*cos(2*pi*x1) + 0.01*sin(2*pi*(x1+x2))", 64);
    let r = curvature_from_connection(&g, g.connection()).unwrap();
    let n = 2;
    let mut antisym: f64 = 0.0;
    let mut bianchi: f64 = 0.0;
    for p in 0..n {
        for q in 0..n {
            for s in 0..n {
                for t in 0..n {
                    antisym = antisym.max(r.get(&[p, q, s, t]).add(r.get(&[q, p, s, t])).max_abs());
                    let b = r
                        .get(&[p, q, s, t])
                        .add(r.get(&[q, s, p, t]))
                        .add(r.get(&[s, p, q, t]));
                    bianchi = bianchi.max(b.max_abs());
                }
            }
        }
    }
    assert!(antisym < 1e-14);
    assert!(bianchi < 1e-9, "{bianchi}");
    let ric = ricci(g.connection()).unwrap();
    let asym = ric.get(&[0, 1]).sub(ric.get(&[1, 0])).max_abs();
    assert!(
        asym < 1e-10 * ric.max_abs(),
        "ricci asym {asym} scale {}",
        ric.max_abs()
    );
    // Three holomorphic slots vanish on a Kähler manifold.
    let hol = frame_project(&g, &r, &[Slot::Hol, Slot::Hol, Slot::Hol, Slot::AntiHol]).unwrap();
    assert!(hol.max_abs() < 1e-9, "{}", hol.max_abs());
}

#[test]
fn perturbed_connection_stays_symplectic() {
    let g = torus("0.05*cos(2*pi*x1)", 32);
    let chart = g.chart().clone();
    let comps: Vec<GridField> = (0..8)
        .map(|k| {
            GridField::from_fn(&chart, |p| {
                C64::new((2.0 * PI * (p[0] + k as f64 * p[1])).sin(), 0.0)
            })
        })
        .collect();
    let raw = Tensor::from_comps(2, vec![Slot::Down; 3], comps).unwrap();
    let a = Deformation::symmetrized(&raw).unwrap();
    assert!(a.symmetry_residual() < 1e-15);
    let conn = g.connection().perturbed(&g, &a, 0.3);
    assert!(conn.nabla_omega_residual(&g).unwrap() < 1e-12);
    assert!(conn.torsion() < 1e-15);
}

#[test]
fn ricci_matches_linearisation_at_small_amplitude() {
    // For g = 2(1+¼Δφ)δ the conformal factor gives Ric = -½Δ log(1+¼Δφ)·δ,
    // whose first-order part is -⅛ΔΔφ·δ = -⅛(2π)^4 ε cos(2πx)·δ.
    for eps in [1e-3, 2e-3] {
        let g = torus(&format!("{eps}*cos(2*pi*x1)"), 32);
        let ric = ricci(g.connection()).unwrap();
        let lin = GridField::from_fn(g.chart(), |p| {
            C64::new(
                -(2.0 * PI).powi(4) * eps * (2.0 * PI * p[0]).cos() / 8.0,
                0.0,
            )
        });
        let err = ric.get(&[0, 0]).sub(&lin).max_abs();
        let scale = lin.max_abs();
        // O(ε²) remainder: relative error proportional to ε.
        assert!(err / scale < 40.0 * eps, "eps={eps}: {}", err / scale);
    }
}

#[test]
fn split_gradient_on_flat_torus() {
    let g = torus("0", 32);
    let f = GridField::from_expr(g.chart(), &Expr::parse("sin(2*pi*x1)").unwrap()).unwrap();
    let s = split_gradient(&g, &f).unwrap();
    assert!(s.hamiltonian[0].max_abs() < 1e-13);
    for (i, v) in s.hamiltonian[1].data().iter().enumerate() {
        let x = g.chart().node(i)[0];
        assert!((v.re + PI * (2.0 * PI * x).cos()).abs() < 1e-12);
    }
    // i(X_f)ω = df
    for jx in 0..2 {
        let mut lhs = GridField::zeros(g.chart());
        for i in 0..2 {
            lhs.fma(
                C64::new(1.0, 0.0),
                &s.hamiltonian[i],
                g.omega().get(&[i, jx]),
            );
        }
        assert!(lhs.sub(&f.deriv(jx).unwrap()).max_abs() < 1e-12);
    }
    let total: Vec<GridField> = s
        .grad_hol
        .iter()
        .zip(&s.grad_antihol)
        .map(|(a, b)| a.add(b))
        .collect();
    assert!(total[0].sub(&s.gradient[0]).max_abs() < 1e-15);
    // The antiholomorphic part is the conjugate of the holomorphic part for real f.
    assert!(s.grad_antihol[0].sub(&s.grad_hol[0].conj()).max_abs() < 1e-13);
}

#[test]
fn third_derivative_in_holomorphic_frame() {
    let g = torus("0", 32);
    let f = GridField::from_expr(g.chart(), &Expr::parse("cos(2*pi*x1)").unwrap()).unwrap();
    let gamma = g.connection().gamma();
    let t1 = covariant_derivative(gamma, &Tensor::scalar(f)).unwrap();
    let t2 = covariant_derivative(gamma, &t1).unwrap();
    let t3 = covariant_derivative(gamma, &t2).unwrap();
    let zzz = frame_project(&g, &t3, &[Slot::Hol; 3]).unwrap();
    for (i, v) in zzz.comps()[0].data().iter().enumerate() {
        let x = g.chart().node(i)[0];
        assert!((v - C64::new(PI.powi(3) * (2.0 * PI * x).sin(), 0.0)).norm() < 1e-10);
    }
}

#[test]
fn round_cp1_has_constant_curvature() {
    let g = cp1(CP1_U);
    let v = g.validate().unwrap();
    assert!(
        v.j_squared < 1e-12 && v.nabla_j < 1e-9 && v.nabla_omega < 1e-10,
        "{v:?}"
    );
    let k = gauss_curvature(&g).unwrap().values();
    let mean = k.iter().map(|c| c.re).sum::<f64>() / k.len() as f64;
    let sd = (k.iter().map(|c| (c.re - mean).powi(2)).sum::<f64>() / k.len() as f64).sqrt();
    assert!((mean - 1.0).abs() < 1e-12, "{mean}");
    assert!(sd / mean < 1e-8);
    // Ric = K g
    let ric = ricci(g.connection()).unwrap();
    for a in 0..2 {
        for b in 0..2 {
            let d = ric.get(&[a, b]).sub(g.metric().get(&[a, b]));
            assert!(d.max_abs() < 1e-10 * g.metric().get(&[a, b]).max_abs().max(1.0));
        }
    }
    // Area 4π·(1/2^m) = 2π under the ω_m/2^m measure.
    assert!((g.volume().unwrap() - 2.0 * PI).abs() < 1e-12);
}

#[test]
fn f1_blowup_is_valid() {
    let poly = f1_polytope();
    let chart = Chart::on_polytope(poly.clone(), 8, 6).unwrap();
    let u =
        Expr::parse("0.5*(x1*log(x1) + x2*log(x2) + (1-x2)*log(1-x2) + (2-x1-x2)*log(2-x1-x2))")
            .unwrap();
    let g = build_toric_geometry(&poly, &u, &chart).unwrap();
    let v = g.validate().unwrap();
    assert!(v.min_metric_eigenvalue > 0.0);
    assert!(
        v.j_squared < 1e-12 && v.nabla_j < 1e-8 && v.nabla_omega < 1e-10 && v.nabla_g < 1e-9,
        "{v:?}"
    );
    let concave = Expr::parse("-(x1^2 + x2^2)").unwrap();
    assert!(matches!(
        build_toric_geometry(&poly, &concave, &chart),
        Err(GeometryError::NonConvexPotential { .. })
    ));
}
