use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use polytube::case_study;
use polytube::ensemble::{self, IntersectionMode};
use polytube::polytope::{self, VPolytope};
use polytube::qp::{self, QpBuilder, Settings};
use polytube::template::{MetaTemplate, SensorTemplate};

fn meta() -> &'static MetaTemplate {
    static META: OnceLock<MetaTemplate> = OnceLock::new();
    META.get_or_init(|| case_study::meta_template().unwrap())
}

fn point() -> impl Strategy<Value = DVector<f64>> {
    prop::collection::vec(-10.0..10.0f64, 2).prop_map(DVector::from_vec)
}

fn planar() -> impl Strategy<Value = VPolytope> {
    prop::collection::vec(point(), 1..8).prop_map(|p| VPolytope::from_points(p).unwrap())
}

fn direction() -> impl Strategy<Value = DVector<f64>> {
    point().prop_filter("nonzero", |d| d.norm() > 1e-3)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn support_is_sublinear(x in planar(), d1 in direction(), d2 in direction(), s in 0.0..5.0f64) {
        let h = |d: &DVector<f64>| x.support(d).unwrap();
        prop_assert!(h(&(&d1 + &d2)) <= h(&d1) + h(&d2) + 1e-9);
        prop_assert!((h(&(&d1 * s)) - s * h(&d1)).abs() <= 1e-9 * (1.0 + s * h(&d1).abs()));
    }

    #[test]
    fn support_is_translation_covariant(x in planar(), a in point(), d in direction()) {
        let lhs = x.translate(&a).support(&d).unwrap();
        prop_assert!((lhs - x.support(&d).unwrap() - d.dot(&a)).abs() <= 1e-9);
    }

    #[test]
    fn hausdorff_is_a_metric(a in planar(), b in planar(), c in planar()) {
        let d = |p: &VPolytope, q: &VPolytope| polytope::hausdorff(p, q).unwrap();
        prop_assert!(d(&a, &a) <= 1e-9);
        prop_assert!((d(&a, &b) - d(&b, &a)).abs() <= 1e-9);
        prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c) + 1e-9);
    }

    #[test]
    fn hausdorff_of_translate_is_shift_length(x in planar(), a in point()) {
        let h = polytope::hausdorff(&x, &x.translate(&a)).unwrap();
        prop_assert!((h - a.norm()).abs() <= 1e-9 * (1.0 + a.norm()));
    }

    #[test]
    fn hull_keeps_supports(pts in prop::collection::vec(point(), 1..12), d in direction()) {
        let hull = polytope::convex_hull_2d(&pts);
        let best = pts.iter().map(|p| p.dot(&d)).fold(f64::NEG_INFINITY, f64::max);
        let on_hull = hull.iter().map(|p| p.dot(&d)).fold(f64::NEG_INFINITY, f64::max);
        prop_assert!((best - on_hull).abs() <= 1e-9 * (1.0 + best.abs()));
    }
}

/// An ensemble parameter strictly inside the case-study meta cone
/// (`Hζ ≤ −s`), scaled and translated.
fn zeta_strategy() -> impl Strategy<Value = DVector<f64>> {
    (1.0..3.0f64, point()).prop_map(|(s, a)| {
        let m = meta();
        let base = DVector::from_vec(vec![2.0, 6.0, 18.0, 8.0, 15.0, 19.0, 9.0, 15.0]);
        let zy = m.ensemble() * m.family().facets();
        base * s + zy * a
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn union_hull_matches_extreme_supports(zeta in zeta_strategy(), d in direction()) {
        let m = meta();
        prop_assume!(m.in_meta_cone(&zeta, -1e-6));
        let hull = ensemble::extrinsic_hull(m, &zeta).unwrap();
        let best = ensemble::extreme_polytopes(m, &zeta)
            .iter()
            .map(|p| p.support(&d).unwrap())
            .fold(f64::NEG_INFINITY, f64::max);
        prop_assert!((hull.support(&d).unwrap() - best).abs() <= 1e-8 * (1.0 + best.abs()));
    }

    #[test]
    fn intersection_is_monotone(zeta in zeta_strategy(), extra in prop::collection::vec(0.0..3.0f64, 8), vbar in 0.5..4.0f64) {
        let m = meta();
        let sensor = SensorTemplate { vbar: DVector::from_element(1, vbar) };
        let bigger = &zeta + DVector::from_vec(extra);
        for mode in [IntersectionMode::Exact, IntersectionMode::Relaxed] {
            let a = ensemble::intersect_sensor(m, &zeta, &sensor, mode).unwrap();
            let b = ensemble::intersect_sensor(m, &bigger, &sensor, mode).unwrap();
            prop_assert!((&b - &a).min() >= -1e-12);
            prop_assert!(a[0] <= vbar + 1e-12);
        }
        let exact = ensemble::intersect_sensor(m, &zeta, &sensor, IntersectionMode::Exact).unwrap();
        prop_assert!((&zeta - &exact).min() >= -1e-12);
    }

    #[test]
    fn ensemble_step_is_translation_covariant(
        zeta in zeta_strategy(),
        u in prop::collection::vec(-5.0..5.0f64, 60),
        shift in -5.0..5.0f64,
    ) {
        let m = meta();
        let sys = case_study::system();
        prop_assume!(m.in_meta_cone(&zeta, -1e-6));
        let controls: Vec<DVector<f64>> = u.iter().map(|&v| DVector::from_element(1, v)).collect();
        let shifted: Vec<DVector<f64>> = u.iter().map(|&v| DVector::from_element(1, v + shift)).collect();
        let a = ensemble::ensemble_step(m, &sys, &zeta, &controls, IntersectionMode::Exact).unwrap();
        let b = ensemble::ensemble_step(m, &sys, &zeta, &shifted, IntersectionMode::Exact).unwrap();
        let zyb = m.ensemble() * m.family().facets() * &sys.b * DVector::from_element(1, shift);
        prop_assert!((&b - &a - zyb).amax() <= 1e-9 * (1.0 + a.amax()));
    }

    #[test]
    fn translates_are_intrinsically_equivalent(zeta in zeta_strategy(), a in point()) {
        let m = meta();
        let moved = &zeta + m.ensemble() * m.family().facets() * a;
        prop_assert!(ensemble::intrinsically_equivalent(m, &zeta, m, &moved).unwrap());
        let wider = &zeta * 1.5;
        prop_assert!(!ensemble::intrinsically_equivalent(m, &zeta, m, &wider).unwrap());
    }
}

fn random_qp(seed: u64) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>, DVector<f64>) {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let n = 4;
    let l = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    let p = &l * l.transpose() + DMatrix::identity(n, n);
    let q = DVector::from_fn(n, |_, _| rng.gen_range(-5.0..5.0));
    let a = DMatrix::from_fn(6, n, |_, _| rng.gen_range(-1.0..1.0));
    let b = DVector::from_fn(6, |_, _| rng.gen_range(0.1..2.0));
    (p, q, a, b)
}

fn solve_scaled(p: &DMatrix<f64>, q: &DVector<f64>, a: &DMatrix<f64>, b: &DVector<f64>, c: f64) -> (Vec<f64>, f64) {
    let n = q.len();
    let mut builder = QpBuilder::new(n);
    for i in 0..n {
        for j in 0..n {
            builder.add_quad(i, j, c * p[(i, j)]);
        }
        builder.add_linear(i, c * q[i]);
    }
    for r in 0..a.nrows() {
        builder.add_row((0..n).map(|j| (j, a[(r, j)])).collect(), f64::NEG_INFINITY, b[r]);
    }
    let res = qp::solve(&builder.build().unwrap(), &Settings::precise()).unwrap();
    assert!(res.status.is_optimal());
    (res.x, res.objective)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn qp_solution_is_invariant_to_cost_scaling(seed in any::<u64>(), c in 0.01..100.0f64) {
        let (p, q, a, b) = random_qp(seed);
        let (x1, f1) = solve_scaled(&p, &q, &a, &b, 1.0);
        let (xc, fc) = solve_scaled(&p, &q, &a, &b, c);
        for (u, v) in x1.iter().zip(&xc) {
            prop_assert!((u - v).abs() <= 1e-6 * (1.0 + u.abs()));
        }
        prop_assert!((fc - c * f1).abs() <= 1e-6 * (1.0 + (c * f1).abs()));
    }
}
