use approx::assert_relative_eq;
use cgkahler::expr::Expr;
use cgkahler::field_core::{inner_product, random_complex_field, Chart, Field};
use cgkahler::geometry::build_torus_geometry;
use cgkahler::operators::{lichnerowicz, self_adjointness_defect};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Smooth expressions in x1, x2 without poles.
fn smooth_expr() -> impl Strategy<Value = Expr> {
    let leaf = prop_oneof![
        (-2.0f64..2.0).prop_map(Expr::constant),
        (0usize..2).prop_map(Expr::var)
    ];
    leaf.prop_recursive(3, 16, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::add(a, b)),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::sub(a, b)),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::mul(a, b)),
            inner.clone().prop_map(Expr::sin),
            inner.clone().prop_map(Expr::cos),
            inner.clone().prop_map(Expr::neg),
            (inner.clone(), 0i32..4).prop_map(|(a, n)| Expr::powi(a, n)),
            inner.prop_map(|a| Expr::exp(Expr::mul(Expr::constant(0.3), a))),
        ]
    })
}

fn point() -> impl Strategy<Value = [f64; 2]> {
    [0.0f64..1.0, 0.0f64..1.0]
}

fn shifted(p: [f64; 2], axis: usize, h: f64) -> [f64; 2] {
    let mut q = p;
    q[axis] += h;
    q
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn display_round_trips_through_parse(e in smooth_expr(), p in point()) {
        let text = e.to_string();
        let back = Expr::parse(&text).map_err(|err| TestCaseError::fail(format!("{text}: {err}")))?;
        let (a, b) = (e.eval(&p).unwrap(), back.eval(&p).unwrap());
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0), "{text}: {a} vs {b}");
    }

    #[test]
    fn symbolic_derivative_matches_central_differences(e in smooth_expr(), p in point(), axis in 0usize..2) {
        let exact = e.derive(axis, 1).unwrap().eval(&p).unwrap();
        let central = |h: f64| {
            (e.eval(&shifted(p, axis, h)).unwrap() - e.eval(&shifted(p, axis, -h)).unwrap()) / (2.0 * h)
        };
        let (coarse, fine) = ((central(1e-2) - exact).abs(), (central(5e-3) - exact).abs());
        let scale = exact.abs().max(1.0);
        prop_assert!(fine <= 1e-3 * scale, "{e}: error {fine:e} at h = 5e-3");
        // Below 1e-9 the error is roundoff and carries no order information.
        if coarse > 1e-9 * scale {
            prop_assert!((coarse / fine).log2() >= 1.9, "{e}: observed order {}", (coarse / fine).log2());
        }
    }

    #[test]
    fn mixed_partials_commute(e in smooth_expr(), p in point()) {
        let xy = e.derive(0, 1).unwrap().derive(1, 1).unwrap().eval(&p).unwrap();
        let yx = e.derive(1, 1).unwrap().derive(0, 1).unwrap().eval(&p).unwrap();
        assert_relative_eq!(xy, yx, epsilon = 1e-10, max_relative = 1e-10);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn flat_lichnerowicz_is_self_adjoint(seed in any::<u64>()) {
        let chart = Chart::torus(1, 16).unwrap();
        let g = build_torus_geometry(&Expr::constant(0.0), 1, &chart).unwrap();
        let op = lichnerowicz(&g).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = random_complex_field(g.chart(), 3, &mut rng);
        let h = random_complex_field(g.chart(), 3, &mut rng);
        prop_assert!(self_adjointness_defect(&g, &op, &f, &h).unwrap() <= 1e-11);
    }

    #[test]
    fn inner_product_is_hermitian(seed in any::<u64>()) {
        let chart = Chart::torus(1, 16).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = random_complex_field(&chart, 3, &mut rng);
        let h = random_complex_field(&chart, 3, &mut rng);
        let (fh, hf) = (inner_product(&f, &h).unwrap(), inner_product(&h, &f).unwrap());
        assert_relative_eq!(fh.re, hf.re, epsilon = 1e-12);
        assert_relative_eq!(fh.im, -hf.im, epsilon = 1e-12);
        prop_assert!(inner_product(&f, &f).unwrap().re >= 0.0);
        prop_assert!(f.max_abs() > 0.0);
    }
}
