use proptest::prelude::*;

use pbf_core::harness::{read_matrix_market, write_matrix_market};
use pbf_core::ocp::gap;
use pbf_core::problems;
use pbf_core::quadrature::{composite_integral, gauss_legendre};
use pbf_core::solver::solve_warm;
use pbf_core::{solve, transcribe, Mesh, Method, SolveOptions};

fn method_strategy() -> impl Strategy<Value = Method> {
    prop::sample::select(Method::ALL.to_vec())
}

proptest! {
    #[test]
    fn gauss_rules_are_exact_to_degree_2q_minus_1(q in 1usize..=10, seed in 0usize..1000) {
        let rule = gauss_legendre(q).unwrap();
        prop_assert!(rule.weights().iter().all(|&w| w > 0.0));
        prop_assert!((rule.weights().iter().sum::<f64>() - 1.0).abs() <= 1e-14);
        let m = seed % (2 * q);
        let err = rule.integrate(|s| s.powi(m as i32)) - 1.0 / (m as f64 + 1.0);
        prop_assert!(err.abs() <= 1e-12);
    }

    #[test]
    fn composite_integral_is_linear_and_refinement_invariant(k in 1usize..12, q in 1usize..6, a in -3.0f64..3.0) {
        let mesh = Mesh::uniform(0.0, 2.0, k).unwrap();
        let rule = gauss_legendre(q).unwrap();
        let f = |t: f64| (a * t).sin();
        let g = |t: f64| t.powi(2 * q as i32 - 1);
        let lhs = composite_integral(&mesh, &rule, |t| a * f(t) + g(t)).unwrap();
        let rhs = a * composite_integral(&mesh, &rule, f).unwrap() + composite_integral(&mesh, &rule, g).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-12);
        let exact = 2f64.powi(2 * q as i32) / (2 * q) as f64;
        let fine = composite_integral(&mesh.refine(2), &rule, g).unwrap();
        prop_assert!((fine - exact).abs() <= 1e-12 * exact);
        prop_assert!((composite_integral(&mesh, &rule, g).unwrap() - exact).abs() <= 1e-12 * exact);
    }

    #[test]
    fn gap_is_nonnegative(j in -10.0f64..10.0, js in -10.0f64..10.0) {
        let g = gap(j, js);
        prop_assert!(g >= 0.0);
        prop_assert_eq!(g == 0.0, j <= js);
    }

    #[test]
    fn matrix_market_round_trips(entries in prop::collection::vec((0usize..30, 0usize..20), 0..60), symmetric: bool) {
        let mut buf = Vec::new();
        write_matrix_market(&mut buf, 30, 20, &entries, symmetric).unwrap();
        let pat = read_matrix_market(buf.as_slice()).unwrap();
        prop_assert_eq!((pat.nrows, pat.ncols, pat.symmetric), (30, 20, symmetric));
        prop_assert_eq!(pat.entries, entries);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn solves_stay_interior_and_warm_starts_finish(
        name in prop::sample::select(vec!["x1", "x2"]),
        method in method_strategy(),
        k in 4usize..12,
    ) {
        let (problem, _) = problems::by_name(name).unwrap();
        let (t0, tf) = problem.horizon();
        let mesh = Mesh::uniform(t0, tf, k).unwrap();
        let p = if matches!(method, Method::Pbf | Method::Lgr) { 3 } else { 1 };
        let q = match method {
            Method::Pbf => 6,
            Method::Lgr => 3,
            Method::HermiteSimpson => 3,
            Method::Trapezoidal => 2,
            Method::ExplicitEuler => 1,
        };
        let omega = if method == Method::Pbf { 1e-8 } else { 0.0 };
        let nlp = transcribe(problem.as_ref(), &mesh, method, p, q, omega, 1e-8).unwrap();
        let opts = SolveOptions::default();
        let (state, report) = solve(&nlp, &nlp.initial_guess(), &opts).unwrap();
        prop_assert_eq!(report.history.len(), report.iterations);
        prop_assert!(nlp.slacks(state.x.as_slice()).iter().all(|&s| s > 0.0));
        prop_assert!(state.z.iter().all(|&z| z > 0.0));
        if report.converged {
            let (_, again) = solve_warm(&nlp, state, &opts).unwrap();
            prop_assert!(again.iterations <= 2, "warm start took {}", again.iterations);
        }
    }
}
