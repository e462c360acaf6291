use cgkahler::expr::Expr;
use cgkahler::field_core::{random_trig_field, Chart, Field, GridField, Polytope};
use cgkahler::flow::*;
use cgkahler::geometry::{build_toric_geometry, build_torus_geometry};
use cgkahler::moment_map::mu_levi_civita;
use num_complex::Complex64 as C64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const PHI: &str = "0.05*cos(2*pi*x1)";

fn expr(s: &str) -> Expr {
    Expr::parse(s).unwrap()
}

#[test]
fn flat_torus_is_critical() {
    let chart = Chart::torus(1, 16).unwrap();
    let g = build_torus_geometry(&expr("0"), 1, &chart).unwrap();
    assert_eq!(phi(&g).unwrap(), 0.0);
    assert_eq!(descent_direction(&g).unwrap().max_abs(), 0.0);
    let s = run_flow(&expr("0"), &chart, &FlowConfig::default(), |_| {}).unwrap();
    assert_eq!(s.steps, 0);
    assert_eq!(s.termination, Termination::Converged);
    assert_eq!(s.residual, 0.0);
}

#[test]
fn round_cp1_has_zero_phi() {
    let poly = Polytope::new(vec![vec![1.0], vec![-1.0]], vec![0.0, 2.0]).unwrap();
    let chart = Chart::on_polytope(poly.clone(), 16, 8).unwrap();
    let g =
        build_toric_geometry(&poly, &expr("0.5*(x1*log(x1) + (2-x1)*log(2-x1))"), &chart).unwrap();
    // μ is constant (zero) on the round sphere, so Φ = vol·μ² = 0.
    let mu0 = mu_levi_civita(&g).unwrap().values()[0].re;
    let vol = g.volume().unwrap();
    assert!(
        (phi(&g).unwrap() - vol * mu0 * mu0).abs() < 1e-8,
        "{}",
        phi(&g).unwrap()
    );
}

fn log_slope(eps: &[f64], vals: &[f64]) -> f64 {
    let n = eps.len() as f64;
    let (lx, ly): (Vec<f64>, Vec<f64>) =
        eps.iter().zip(vals).map(|(e, v)| (e.ln(), v.ln())).unzip();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    lx.iter()
        .zip(&ly)
        .map(|(x, y)| (x - mx) * (y - my))
        .sum::<f64>()
        / lx.iter().map(|x| (x - mx).powi(2)).sum::<f64>()
}

#[test]
fn phi_is_quadratic_in_epsilon() {
    let chart = Chart::torus(1, 64).unwrap();
    let phi_at = |e: f64| {
        phi(&build_torus_geometry(&expr(&format!("{e}*cos(2*pi*x1)")), 1, &chart).unwrap()).unwrap()
    };
    let eps = [1e-4, 2e-4, 4e-4];
    let vals: Vec<f64> = eps.iter().map(|&e| phi_at(e)).collect();
    let slope = log_slope(&eps, &vals);
    assert!((slope - 2.0).abs() < 0.05, "slope {slope}, {vals:?}");
    // Linearised μ is 2π⁶ ε cos 2πx, so Φ/ε² → 2π¹².
    let c = vals[0] / (eps[0] * eps[0]) / (2.0 * std::f64::consts::PI.powi(12));
    assert!((c - 1.0).abs() < 1e-3, "{c}");
    // At ε ~ 10⁻² the metric moves by ~10% and quartic terms dominate.
    let wide = [0.01, 0.02, 0.04];
    let wide_vals: Vec<f64> = wide.iter().map(|&e| phi_at(e)).collect();
    assert!(log_slope(&wide, &wide_vals) > 3.0);
}

#[test]
fn descent_direction_is_downhill_and_mean_free() {
    let chart = Chart::torus(1, 64).unwrap();
    let g = build_torus_geometry(&expr(PHI), 1, &chart).unwrap();
    let f = descent_direction(&g).unwrap();
    assert!(g.integrate(&f).unwrap().norm() < 1e-9 * g.norm(&f).unwrap());
    let grad = extremal_field(&g).unwrap();
    let pairing = g.inner(&f, &grad).unwrap().re;
    let n2 = g.norm(&f).unwrap().powi(2);
    assert!(
        pairing < 0.0 && (pairing + n2).abs() < 1e-10 * n2,
        "{pairing} {n2}"
    );
}

#[test]
fn first_variation_matches_gradient() {
    let chart = Chart::torus(1, 64).unwrap();
    let pot = Potential::new(expr(PHI), &chart);
    let g = pot.geometry().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..3 {
        let f = random_trig_field(&chart, 2, &mut rng).real();
        let c = first_variation(&pot, &g, &f, 1e-4).unwrap();
        assert!(c.relative < 1e-4, "{c:?}");
    }
}

#[test]
fn steepest_descent_is_monotone_and_consistent() {
    let chart = Chart::torus(1, 64).unwrap();
    let cfg = FlowConfig {
        max_steps: 40,
        ..Default::default()
    };
    let mut streamed = 0;
    let s = run_flow(&expr(PHI), &chart, &cfg, |_| streamed += 1).unwrap();
    assert_eq!(streamed, s.trace.len());
    assert_eq!(s.steps, 40);
    assert!(s.is_monotone());
    assert!(s.phi < s.trace[0].phi);
    assert_eq!(s.consistency.len(), 4);
    assert!(
        s.consistency.iter().all(|c| c.check.relative < 1e-3),
        "{:?}",
        s.consistency
    );
    assert!(s.min_metric_eig > 0.0);
    let csv = s.trace_csv();
    assert!(csv.starts_with("step,phi,residual,eta,min_metric_eig\n"));
    assert_eq!(csv.lines().count(), s.trace.len() + 1);
}

#[test]
fn absurd_step_engages_backtracking() {
    let chart = Chart::torus(1, 64).unwrap();
    let cfg = FlowConfig {
        max_steps: 5,
        eta0: 1e3,
        consistency_every: 0,
        ..Default::default()
    };
    let s = run_flow(&expr(PHI), &chart, &cfg, |_| {}).unwrap();
    assert!(s.rejected > 0);
    assert!(s.is_monotone());
    assert!(s.trace.iter().skip(1).all(|r| r.eta < 1e3));
}

#[test]
fn preconditioned_flow_reaches_flat_metric() {
    let chart = Chart::torus(1, 64).unwrap();
    let cfg = FlowConfig {
        preconditioner: Preconditioner::FlatInverse,
        ..Default::default()
    };
    let s = run_flow(&expr(PHI), &chart, &cfg, |_| {}).unwrap();
    let first = s.trace[0];
    assert!(s.is_monotone());
    assert!(s.phi < 1e-6 * first.phi, "{:?}", s.summary());
    assert!(s.residual < 1e-6 * first.residual, "{:?}", s.summary());
    // The correction cancels the initial cosine.
    let target = GridField::from_expr(&chart, &expr("-0.05*cos(2*pi*x1)")).unwrap();
    let miss = s.potential.correction.sub(&target);
    let miss = Field::sub(
        &miss,
        &GridField::constant(&chart, C64::new(miss.values()[0].re, 0.0)),
    );
    assert!(miss.max_abs() < 1e-5, "{}", miss.max_abs());
    assert!(
        s.consistency.iter().all(|c| c.check.relative < 1e-3),
        "{:?}",
        s.consistency
    );
}

#[test]
fn flow_rejects_polytope_charts() {
    let poly = Polytope::new(vec![vec![1.0], vec![-1.0]], vec![0.0, 2.0]).unwrap();
    let chart = Chart::on_polytope(poly, 8, 4).unwrap();
    assert!(matches!(
        run_flow(&expr("0"), &chart, &FlowConfig::default(), |_| {}),
        Err(FlowError::NotTorus)
    ));
}
