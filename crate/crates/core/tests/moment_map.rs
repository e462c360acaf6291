use std::f64::consts::PI;

use cgkahler::expr::Expr;
use cgkahler::field_core::{
    random_trig_field, Chart, Field, GridField, JetField, Polytope, Slot, Tensor,
};
use cgkahler::geometry::*;
use cgkahler::moment_map::*;
use num_complex::Complex64 as C64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const PHI: &str = "0.05*cos(2*pi*x1)";
const CP1_U: &str = "0.5*(x1*log(x1) + (2-x1)*log(2-x1))";
const CP1_U2: &str = "0.5*(x1*log(x1) + (2-x1)*log(2-x1)) + 0.1*x1^2 + 0.05*x1^3";

fn torus(phi: &str, n: usize) -> GeometryState<GridField> {
    let chart = Chart::torus(1, n).unwrap();
    build_torus_geometry(&Expr::parse(phi).unwrap(), 1, &chart).unwrap()
}

fn field(g: &GeometryState<GridField>, e: &str) -> GridField {
    GridField::from_expr(g.chart(), &Expr::parse(e).unwrap()).unwrap()
}

fn cp1(u: &str, n: usize) -> GeometryState<JetField> {
    let poly = Polytope::new(vec![vec![1.0], vec![-1.0]], vec![0.0, 2.0]).unwrap();
    let chart = Chart::on_polytope(poly.clone(), n, 8).unwrap();
    build_toric_geometry(&poly, &Expr::parse(u).unwrap(), &chart).unwrap()
}

fn random_deformation(
    g: &GeometryState<GridField>,
    rng: &mut ChaCha8Rng,
) -> Deformation<GridField> {
    let comps: Vec<GridField> = (0..8)
        .map(|_| random_trig_field(g.chart(), 2, rng))
        .collect();
    Deformation::symmetrized(&Tensor::from_comps(2, vec![Slot::Down; 3], comps).unwrap()).unwrap()
}

#[test]
fn mu_vanishes_on_flat_torus() {
    let g = torus("0", 32);
    assert_eq!(mu_levi_civita(&g).unwrap().max_abs(), 0.0);
}

#[test]
fn mu_converges_under_refinement() {
    let refine = |n: usize| {
        let coarse = mu_levi_civita(&torus(PHI, n)).unwrap();
        let fine = mu_levi_civita(&torus(PHI, 2 * n)).unwrap();
        let diff = (0..coarse.data().len())
            .map(|i| {
                let (r, c) = (i / n, i % n);
                (coarse.data()[i] - fine.data()[2 * r * 2 * n + 2 * c]).norm()
            })
            .fold(0.0, f64::max);
        (diff, fine)
    };
    let (d32, _) = refine(32);
    let (d64, fine) = refine(64);
    let scale = fine.max_abs();
    assert!(d64 < 1e-8 * scale.max(1.0), "diff {d64:e}, scale {scale:e}");
    assert!(d64 < d32);
    let im = fine.values().iter().map(|v| v.im.abs()).fold(0.0, f64::max);
    assert!(im < 1e-10 * scale.max(1.0));
    let g = torus(PHI, 128);
    let div = mu_terms(&g, g.connection()).unwrap().divergence;
    assert!(
        g.integrate(&div).unwrap().norm() < 1e-8,
        "{}",
        g.integrate(&div).unwrap()
    );
}

#[test]
fn mu_vanishes_on_round_cp1() {
    let g = cp1(CP1_U, 16);
    let terms = mu_terms(&g, g.connection()).unwrap();
    let total = terms.total();
    let scale = terms.ricci_square.max_abs();
    // Ric = g gives Ric·Ric = 2 and R·R = 4 with the divergence absent.
    assert!((scale - 2.0).abs() < 1e-10, "{scale}");
    assert!((terms.riemann_square.max_abs() - 4.0).abs() < 1e-10);
    assert!(total.max_abs() < 1e-9 * scale, "{}", total.max_abs());
}

#[test]
fn omega_e_pairing_flat_constants() {
    let g = torus("0", 16);
    let c = |v: f64| GridField::constant(g.chart(), C64::new(v, 0.0));
    let mut a = Tensor::zeros(g.chart(), 2, vec![Slot::Down; 3]);
    *a.get_mut(&[0, 0, 0]) = c(2.0);
    let mut b = Tensor::zeros(g.chart(), 2, vec![Slot::Down; 3]);
    *b.get_mut(&[1, 1, 1]) = c(3.0);
    let (a, b) = (Deformation::new(a).unwrap(), Deformation::new(b).unwrap());
    // ω^{12} = -1/2 under ω = 2 dx∧dy.
    assert!((omega_e_pairing(&g, &a, &b).unwrap() + 0.75).abs() < 1e-14);
    assert!((omega_e_pairing(&g, &b, &a).unwrap() - 0.75).abs() < 1e-14);
}

#[test]
fn omega_e_pairing_is_antisymmetric() {
    let g = torus(PHI, 32);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let a = random_deformation(&g, &mut rng);
    let b = random_deformation(&g, &mut rng);
    let ab = omega_e_pairing(&g, &a, &b).unwrap();
    let ba = omega_e_pairing(&g, &b, &a).unwrap();
    assert!((ab + ba).abs() < 1e-12 * ab.abs().max(1.0));
    assert!(omega_e_pairing(&g, &a, &a).unwrap().abs() < 1e-12 * ab.abs().max(1.0));
}

#[test]
fn lie_derivative_flat_component() {
    let g = torus("0", 32);
    let f = field(&g, "cos(2*pi*x1)");
    let a = lie_derivative_connection(&g, &f).unwrap();
    let zzz = frame_project(&g, a.tensor(), &[Slot::Hol; 3]).unwrap();
    for (i, v) in zzz.comps()[0].data().iter().enumerate() {
        let x = g.chart().node(i)[0];
        assert!((v - C64::new(PI.powi(3) * (2.0 * PI * x).sin(), 0.0)).norm() < 1e-10);
    }
    let k = lie_derivative_connection_kahler(&g, &f).unwrap();
    let zzzbar = frame_project(&g, k.tensor(), &[Slot::Hol, Slot::Hol, Slot::AntiHol]).unwrap();
    for (i, v) in zzzbar.comps()[0].data().iter().enumerate() {
        let x = g.chart().node(i)[0];
        assert!((v - C64::new(PI.powi(3) * (2.0 * PI * x).sin(), 0.0)).norm() < 1e-10);
    }
    let c = GridField::constant(g.chart(), C64::new(3.0, 0.0));
    assert_eq!(lie_derivative_connection(&g, &c).unwrap().max_abs(), 0.0);
    assert_eq!(
        lie_derivative_connection_kahler(&g, &c).unwrap().max_abs(),
        0.0
    );
}

#[test]
fn three_routes_agree_on_perturbed_torus() {
    let g = torus(PHI, 64);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for f in [
        field(&g, "sin(2*pi*x1)"),
        random_trig_field(g.chart(), 2, &mut rng),
    ] {
        let t = three_way_agreement(&g, &f).unwrap();
        assert!(t.max_disagreement() < 1e-8, "{t:?}");
        assert!(t.symmetry < 1e-9, "{t:?}");
        let v = connection_variation(&g, &f).unwrap();
        assert!(v.mixed_block < 1e-10, "{}", v.mixed_block);
    }
}

#[test]
fn moment_identity_on_perturbed_torus() {
    let g = torus(PHI, 32);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let f = random_trig_field(g.chart(), 2, &mut rng);
    let a = random_deformation(&g, &mut rng);
    let id = moment_identity(&g, &f, &a, FD_STEP).unwrap();
    assert!(id.residual.residual < 1e-6, "{id:?}");
}

#[test]
fn moment_identity_flat_constant() {
    let g = torus("0", 16);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let f = GridField::constant(g.chart(), C64::new(1.0, 0.0));
    let a = random_deformation(&g, &mut rng);
    let id = moment_identity(&g, &f, &a, FD_STEP).unwrap();
    assert_eq!(id.pairing, 0.0);
    assert!(id.residual.residual < 1e-10, "{id:?}");
}

#[test]
fn equivariance_on_perturbed_torus() {
    for seed in 0..3 {
        let g = torus(PHI, 32);
        let mut rng = ChaCha8Rng::seed_from_u64(20 + seed);
        let h = random_trig_field(g.chart(), 2, &mut rng);
        let f = random_trig_field(g.chart(), 2, &mut rng);
        let r = equivariance(&g, &h, &f).unwrap();
        assert!(r.residual < 1e-5 && r.lhs.abs() > 1.0, "{r:?}");
    }
    let g = torus(PHI, 32);
    let f = field(&g, "sin(2*pi*x2)");
    let same = equivariance(&g, &f, &f).unwrap();
    assert!(same.lhs.abs() < 1e-9 && same.rhs.abs() < 1e-9, "{same:?}");
}

#[test]
fn futaki_on_cp1_is_potential_independent() {
    let a = cp1(CP1_U, 32);
    let b = cp1(CP1_U2, 32);
    let fa = futaki(
        &a,
        &JetField::from_expr(a.chart(), &Expr::parse("x1").unwrap()).unwrap(),
    )
    .unwrap();
    let fb = futaki(
        &b,
        &JetField::from_expr(b.chart(), &Expr::parse("x1").unwrap()).unwrap(),
    )
    .unwrap();
    assert!(fa.abs() < 1e-6 && fb.abs() < 1e-6, "{fa} {fb}");
    let c = JetField::constant(a.chart(), C64::new(2.0, 0.0));
    assert!(futaki(&a, &c).unwrap().abs() < 1e-12);
}
