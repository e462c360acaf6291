use std::f64::consts::PI;

use cgkahler::expr::Expr;
use cgkahler::field_core::{
    random_complex_field, random_trig_field, Chart, Field, GridField, JetField, Polytope,
};
use cgkahler::geometry::*;
use cgkahler::moment_map::mu_levi_civita;
use cgkahler::operators::*;
use num_complex::Complex64 as C64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const PHI: &str = "0.05*cos(2*pi*x1)";
const CP1_U: &str = "0.5*(x1*log(x1) + (2-x1)*log(2-x1))";

fn torus(phi: &str, n: usize) -> GeometryState<GridField> {
    let chart = Chart::torus(1, n).unwrap();
    build_torus_geometry(&Expr::parse(phi).unwrap(), 1, &chart).unwrap()
}

fn field(g: &GeometryState<GridField>, e: &str) -> GridField {
    GridField::from_expr(g.chart(), &Expr::parse(e).unwrap()).unwrap()
}

fn cp1(n: usize) -> GeometryState<JetField> {
    let poly = Polytope::new(vec![vec![1.0], vec![-1.0]], vec![0.0, 2.0]).unwrap();
    let chart = Chart::on_polytope(poly.clone(), n, 8).unwrap();
    build_toric_geometry(&poly, &Expr::parse(CP1_U).unwrap(), &chart).unwrap()
}

fn jet(g: &GeometryState<JetField>, e: &str) -> JetField {
    JetField::from_expr(g.chart(), &Expr::parse(e).unwrap()).unwrap()
}

#[test]
fn flat_third_derivative_norms() {
    let g = torus("0", 32);
    let op = lichnerowicz(&g).unwrap();
    let f = field(&g, "cos(2*pi*x1)");
    let target = PI.powi(6) / 2.0;
    assert!((op.d1_inner(&f, &f).unwrap().re - target).abs() < 1e-10 * target);
    assert!((op.d2_inner(&f, &f).unwrap().re - target).abs() < 1e-10 * target);
    let c = GridField::constant(g.chart(), C64::new(2.0, 0.0));
    assert_eq!(op.d1(&c).unwrap().max_abs(), 0.0);
    assert_eq!(op.apply(&c).unwrap().max_abs(), 0.0);
}

#[test]
fn flat_fourier_multipliers() {
    let g = torus("0", 32);
    let op = lichnerowicz(&g).unwrap();
    for p in -3i32..=3 {
        for q in -3i32..=3 {
            let k2 = (p * p + q * q) as f64;
            if k2 > 8.0 {
                continue;
            }
            let m = mode_multiplier(&g, &op, &[p, q]).unwrap();
            let target = 2.0 * PI.powi(6) * k2.powi(3);
            assert!(
                (m.multiplier - target).abs() <= 1e-10 * target.max(1.0),
                "{m:?} vs {target}"
            );
            assert!(
                m.imaginary.abs() <= 1e-10 * target.max(1.0) && m.defect < 1e-8,
                "{m:?}"
            );
        }
    }
}

#[test]
fn operator_is_self_adjoint_and_conjugate_consistent() {
    let g = torus(PHI, 32);
    let op = lichnerowicz(&g).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..3 {
        let f = random_complex_field(g.chart(), 3, &mut rng);
        let h = random_complex_field(g.chart(), 3, &mut rng);
        let d = self_adjointness_defect(&g, &op, &f, &h).unwrap();
        assert!(d < 1e-11, "{d:e}");
        let direct = g.inner(&h, &op.apply(&f).unwrap()).unwrap();
        let weak = op.weak_form(&h, &f).unwrap();
        assert!(
            (direct - weak).norm() <= 1e-12 * direct.norm().max(1.0),
            "{direct} {weak}"
        );
        let lbar = op.apply_bar(&f).unwrap();
        let via_conj = op.apply(&f.conj()).unwrap().conj();
        assert_eq!(lbar.sub(&via_conj).max_abs(), 0.0);
    }
    let c = GridField::constant(g.chart(), C64::new(1.0, 0.0));
    assert!(op.apply(&c).unwrap().max_abs() < 1e-11);
}

#[test]
fn d2_is_symmetric_on_kahler_input() {
    let g = torus(PHI, 64);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let f = random_trig_field(g.chart(), 2, &mut rng);
    let t = d2(&g, &f).unwrap();
    assert!(
        t.symmetry_residual() < 1e-9 * t.max_abs().max(1.0),
        "{}",
        t.symmetry_residual()
    );
    let c = GridField::constant(g.chart(), C64::new(1.0, 0.0));
    assert_eq!(d2(&g, &c).unwrap().max_abs(), 0.0);
}

#[test]
fn poisson_bracket_properties() {
    let g = torus("0", 32);
    let (h, f) = (field(&g, "sin(2*pi*x1)"), field(&g, "sin(2*pi*x2)"));
    let b = poisson_bracket(&g, &h, &f).unwrap();
    // X_h = -π cos(2πx) ∂_y under ω = 2 dx∧dy.
    let expected = field(&g, "-2*pi^2*cos(2*pi*x1)*cos(2*pi*x2)");
    assert!(b.sub(&expected).max_abs() < 1e-10);

    let g = torus(PHI, 64);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (a, b, c) = (
        random_trig_field(g.chart(), 2, &mut rng),
        random_trig_field(g.chart(), 2, &mut rng),
        random_trig_field(g.chart(), 2, &mut rng),
    );
    assert!(poisson_bracket(&g, &a, &a).unwrap().max_abs() < 1e-11);
    let ab = poisson_bracket(&g, &a, &b).unwrap();
    let ba = poisson_bracket(&g, &b, &a).unwrap();
    assert!(ab.add(&ba).max_abs() < 1e-11 * ab.max_abs());
    let cx = poisson_bracket_complex(&g, &a, &b).unwrap();
    assert!(
        ab.sub(&cx).max_abs() < 1e-10 * ab.max_abs().max(1.0),
        "{}",
        ab.sub(&cx).max_abs()
    );
    let jac = poisson_bracket(&g, &a, &poisson_bracket(&g, &b, &c).unwrap())
        .unwrap()
        .add(&poisson_bracket(&g, &b, &poisson_bracket(&g, &c, &a).unwrap()).unwrap())
        .add(&poisson_bracket(&g, &c, &poisson_bracket(&g, &a, &b).unwrap()).unwrap());
    assert!(jac.max_abs() < 1e-9, "{}", jac.max_abs());
}

#[test]
fn poisson_relation_on_torus() {
    let flat = torus("0", 32);
    let r = poisson_relation(
        &flat,
        &lichnerowicz(&flat).unwrap(),
        &field(&flat, "sin(2*pi*x1)"),
    )
    .unwrap();
    assert!(r.lhs_norm < 1e-9 * r.scale && r.rhs_norm == 0.0, "{r:?}");
    let mut res = Vec::new();
    for n in [32, 64] {
        let g = torus(PHI, n);
        let f = field(&g, "sin(2*pi*x2) + 0.5*sin(2*pi*x1)");
        res.push(poisson_relation(&g, &lichnerowicz(&g).unwrap(), &f).unwrap());
    }
    assert!(res[1].residual < 1e-5 && res[1].rhs_norm > 1.0, "{res:?}");
    assert!(res[1].residual <= res[0].residual, "{res:?}");
}

#[test]
fn poisson_relation_on_cp1() {
    let g = cp1(16);
    let op = lichnerowicz(&g).unwrap();
    for e in ["x1", "x1^2", "x1^3 - x1"] {
        let r = poisson_relation(&g, &op, &jet(&g, e)).unwrap();
        assert!(r.against_scale < 1e-6, "{e}: {r:?}");
    }
}

#[test]
fn mu_variation_flat_multiplier() {
    let g = torus("0", 32);
    let f = Expr::parse("cos(2*pi*x1)").unwrap();
    let v = mu_variation(&g, &f, POTENTIAL_FD_STEP).unwrap();
    assert_eq!(v.transport_norm, 0.0);
    let target = 4.0 * PI.powi(6) / 2f64.sqrt();
    assert!((v.fit.rhs_norm - target).abs() < 1e-10 * target);
    assert!(v.fit.residual < 1e-6, "{v:?}");
}

#[test]
fn mu_variation_on_perturbed_torus() {
    let g = torus(PHI, 64);
    // μ depends on x1 only, so the transport term vanishes for the first.
    for (e, moving) in [
        ("sin(2*pi*x2)", false),
        ("sin(2*pi*x1) + 0.3*cos(2*pi*(x1+x2))", true),
    ] {
        let v = mu_variation(&g, &Expr::parse(e).unwrap(), POTENTIAL_FD_STEP).unwrap();
        assert!(v.fit.residual < 1e-5, "{e}: {v:?}");
        assert_eq!(v.transport_norm > 1.0, moving, "{e}: {v:?}");
    }
    let c = Expr::parse("1").unwrap();
    let v = mu_variation(&g, &c, POTENTIAL_FD_STEP).unwrap();
    assert!(v.fit.lhs_norm < 1e-6 && v.fit.rhs_norm < 1e-9, "{v:?}");
}

#[test]
fn hessian_on_flat_torus() {
    let g = torus("0", 32);
    let op = lichnerowicz(&g).unwrap();
    let f = field(&g, "cos(2*pi*x1)");
    let h = hessian_form(&g, &op, &f, &f).unwrap();
    let target = 16.0 * PI.powi(12);
    assert!((h.value - target).abs() < 1e-8 * target, "{h:?}");
    // Twelve nested spectral derivatives amplify roundoff like N^12; the
    // commutator is resolved only on the coarsest grid that carries the mode.
    let coarse = torus("0", 8);
    let cop = lichnerowicz(&coarse).unwrap();
    let cf = field(&coarse, "cos(2*pi*x1)");
    let ch = hessian_form(&coarse, &cop, &cf, &cf).unwrap();
    assert!(ch.commutator_relative < 1e-10, "{ch:?}");
    assert!((ch.value - target).abs() < 1e-8 * target, "{ch:?}");
    let sd = calabi_second_difference(&g, &Expr::parse("cos(2*pi*x1)").unwrap(), 1e-3).unwrap();
    assert!((sd.value - target).abs() < 1e-4 * target, "{sd:?}");
}

#[test]
fn positivity_and_gate() {
    let g = torus("0", 32);
    let op = lichnerowicz(&g).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let f = random_complex_field(g.chart(), 3, &mut rng);
    let p = positivity_check(&g, &op, &f).unwrap();
    assert!(p.margin.abs() < 1e-10 * p.lhs.abs().max(1.0), "{p:?}");
    assert!(
        (p.d1_norm_sq - p.d2_norm_sq).abs() < 1e-10 * p.d1_norm_sq.max(1.0),
        "{p:?}"
    );

    let s = cp1(16);
    let sop = lichnerowicz(&s).unwrap();
    for e in ["x1^2", "x1^3 - x1^2", "x1^4"] {
        let p = positivity_check(&s, &sop, &jet(&s, e)).unwrap();
        assert!(p.min_ricci > 0.0 && p.margin >= -1e-8, "{e}: {p:?}");
    }

    let bumpy = torus(PHI, 32);
    let bop = lichnerowicz(&bumpy).unwrap();
    let err = positivity_check(&bumpy, &bop, &field(&bumpy, "cos(2*pi*x1)")).unwrap_err();
    assert!(
        matches!(err, OperatorError::RicciNotNonNegative { min_eigenvalue } if min_eigenvalue < 0.0)
    );
}

#[test]
fn kernel_probes() {
    let g = torus(PHI, 32);
    let op = lichnerowicz(&g).unwrap();
    let probes = trig_basis(g.chart(), 8);
    let c = GridField::constant(g.chart(), C64::new(1.0, 0.0));
    assert!(weak_kernel_residual(&g, &op, &c, &probes).unwrap() < 1e-11);
    assert!(weak_kernel_residual(&g, &op, &probes[0], &probes).unwrap() > 1.0);

    let s = cp1(16);
    let sop = lichnerowicz(&s).unwrap();
    let probes = interior_probes::<JetField>(s.chart(), 3).unwrap();
    let r = weak_kernel_residual(&s, &sop, &jet(&s, "x1"), &probes).unwrap();
    assert!(r < 1e-6, "{r:e}");
    let r2 = weak_kernel_residual(&s, &sop, &jet(&s, "x1^2"), &probes).unwrap();
    assert!(r2 > 1e-3, "{r2:e}");
}

#[test]
fn flat_rayleigh_quotients_are_positive() {
    let g = torus("0", 16);
    let op = lichnerowicz(&g).unwrap();
    let basis = trig_basis(g.chart(), 20);
    let vals = rayleigh_ritz(&g, &op, &basis).unwrap();
    assert_eq!(vals.len(), 20);
    let smallest = 2.0 * PI.powi(6);
    assert!((vals[0] - smallest).abs() < 1e-9 * smallest, "{vals:?}");
}

#[test]
fn mu_of_test_geometry_is_nonconstant() {
    let g = torus(PHI, 32);
    assert!(mu_levi_civita(&g).unwrap().max_abs() > 1.0);
}
