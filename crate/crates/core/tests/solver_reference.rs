//! Both solver methods against an independent coordinate-descent reference
//! on a bank of random instances.

mod common;

use common::{coordinate_descent_reference, objective_value, random_dictionary, random_target, seeded};
use rand::Rng;
use ttmix_core::solver::{solve, LassoProblem, SolverMethod, SolverOptions};

fn check_case(case: u64, method: SolverMethod) {
    let mut rng = seeded(case);
    let n = rng.random_range(20..=100);
    let m = rng.random_range(10..=200.min(2 * n));
    let dict = random_dictionary(n, m, &mut rng);
    let p_hat = random_target(n, &mut rng);
    // weights from near-zero up to a good fraction of the critical value
    let w_frac: f64 = rng.random::<f64>();
    let w = 0.5 * w_frac * dict.phi().t().dot(&p_hat).iter().cloned().fold(0.0f64, f64::max);

    let reference = coordinate_descent_reference(&dict.phi().to_owned(), &p_hat, w, None, 1e-12, 20_000);
    let f_ref = objective_value(&dict.phi().to_owned(), &p_hat, w, None, &reference);

    let problem = LassoProblem::new(&dict, p_hat.clone(), w).unwrap();
    let opts = SolverOptions { method, ..Default::default() };
    let sol = solve(&problem, &opts).unwrap();
    let f_sol = objective_value(&dict.phi().to_owned(), &p_hat, w, None, &sol.theta);

    assert!(sol.theta.iter().all(|t| *t >= 0.0), "case {case}: negative weight");
    let rel = (f_sol - f_ref).abs() / (1.0 + f_ref.abs());
    assert!(
        rel <= 1e-6,
        "case {case} ({method:?}): objective {f_sol:.12e} vs reference {f_ref:.12e}, rel gap {rel:.3e}"
    );
}

#[test]
fn projected_gradient_matches_reference_on_random_instances() {
    for case in 0..50 {
        check_case(case, SolverMethod::ProjectedGradient);
    }
}

#[test]
fn interior_point_matches_reference_on_random_instances() {
    for case in 0..50 {
        check_case(case, SolverMethod::InteriorPoint);
    }
}

#[test]
fn scaled_penalties_also_match_reference() {
    for case in 100..110 {
        let mut rng = seeded(case);
        let n = rng.random_range(20..=60);
        let m = rng.random_range(10..=80.min(2 * n));
        let dict = random_dictionary(n, m, &mut rng);
        let p_hat = random_target(n, &mut rng);
        let scaling: Vec<f64> = (0..m).map(|_| 0.5 + rng.random::<f64>()).collect();
        let w = 1e-3;

        let reference = coordinate_descent_reference(
            &dict.phi().to_owned(),
            &p_hat,
            w,
            Some(&scaling),
            1e-12,
            20_000,
        );
        let f_ref = objective_value(&dict.phi().to_owned(), &p_hat, w, Some(&scaling), &reference);

        for method in [SolverMethod::ProjectedGradient, SolverMethod::InteriorPoint] {
            let problem = LassoProblem::new(&dict, p_hat.clone(), w)
                .unwrap()
                .with_scaling(scaling.clone())
                .unwrap();
            let opts = SolverOptions { method, ..Default::default() };
            let sol = solve(&problem, &opts).unwrap();
            let f_sol =
                objective_value(&dict.phi().to_owned(), &p_hat, w, Some(&scaling), &sol.theta);
            let rel = (f_sol - f_ref).abs() / (1.0 + f_ref.abs());
            assert!(rel <= 1e-6, "case {case} ({method:?}): rel gap {rel:.3e}");
        }
    }
}
