//! Randomized invariants over the pipeline building blocks.

mod common;

use std::sync::Arc;

use common::{objective_value, random_dictionary, random_target, seeded};
use ndarray::Array1;
use proptest::prelude::*;
use rand::Rng;

use ttmix_core::dictionary::{Dictionary, DictionaryConfig, EXACT_SUM_TOL};
use ttmix_core::grid::TimeGrid;
use ttmix_core::parzen::{parzen_batch, KernelMatrix, KernelSpec, ParzenState, UpdateMode};
use ttmix_core::postprocess::threshold_support;
use ttmix_core::regularization::{sweep, SweepConfig};
use ttmix_core::solver::{solve, LassoProblem, SolverOptions};

fn sample_vec(n_max: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0..45.0f64, 3..n_max)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 16, ..ProptestConfig::default() })]

    #[test]
    fn sequential_recursion_matches_batch(samples in sample_vec(60), bw in 0.6..3.0f64) {
        let grid = TimeGrid::new(1.0, 50, 20, 1).unwrap();
        let km = Arc::new(KernelMatrix::build(&grid, KernelSpec { bandwidth: bw }));
        let batch = parzen_batch(&samples, &km).unwrap();
        let state = ParzenState::from_samples(km, UpdateMode::Sequential, &samples).unwrap();
        for (a, b) in state.p_hat().iter().zip(batch.iter()) {
            prop_assert!((a - b).abs() <= 1e-10, "sequential {a} vs batch {b}");
        }
    }

    #[test]
    fn rolling_state_matches_batch_of_window(samples in sample_vec(80), w in 4..25usize) {
        let grid = TimeGrid::new(1.0, 50, 20, 1).unwrap();
        let km = Arc::new(KernelMatrix::build(&grid, KernelSpec { bandwidth: 1.2 }));
        let state =
            ParzenState::from_samples(km.clone(), UpdateMode::Rolling { window: w }, &samples)
                .unwrap();
        let tail: Vec<f64> =
            samples.iter().skip(samples.len().saturating_sub(w)).cloned().collect();
        let batch = parzen_batch(&tail, &km).unwrap();
        if samples.len() >= w {
            for (a, b) in state.p_hat().iter().zip(batch.iter()) {
                prop_assert!((a - b).abs() <= 1e-9, "rolling {a} vs window batch {b}");
            }
        }
    }

    #[test]
    fn corrected_gamma_columns_are_stochastic(m in 5..30usize) {
        let grid = TimeGrid::new(1.0, 3 * m + 20, m, 1).unwrap();
        let cfg = DictionaryConfig::new(vec![1.0]).unwrap();
        let dict = Dictionary::build_gamma(&grid, 1.0, &cfg).unwrap();
        for j in 0..dict.n_cols() {
            let s: f64 = dict.phi().column(j).sum();
            prop_assert!((s - 1.0).abs() <= EXACT_SUM_TOL, "column {j} sums to {s}");
        }
    }

    #[test]
    fn corrected_ml_columns_are_stochastic(scale in 1.0..3.0f64) {
        let grid = TimeGrid::new(1.0, 160, 25, 1).unwrap();
        let cfg = DictionaryConfig::new(vec![scale]).unwrap();
        let dict = Dictionary::build_ml(&grid, &cfg).unwrap();
        for j in 0..dict.n_cols() {
            let s: f64 = dict.phi().column(j).sum();
            prop_assert!((s - 1.0).abs() <= EXACT_SUM_TOL, "column {j} sums to {s}");
        }
    }

    #[test]
    fn threshold_support_is_scale_invariant(
        theta in prop::collection::vec(0.0..1.0f64, 1..40),
        c in 1e-6..1e6f64,
    ) {
        let base = Array1::from(theta.clone());
        let scaled = Array1::from(theta.iter().map(|t| t * c).collect::<Vec<_>>());
        prop_assert_eq!(
            threshold_support(base.view(), 1e-3),
            threshold_support(scaled.view(), 1e-3)
        );
    }

    #[test]
    fn solutions_stay_feasible_and_decompose(case in 0u64..1000) {
        let mut rng = seeded(7000 + case);
        let n = rng.random_range(15..=40);
        let m = rng.random_range(5..=30);
        let dict = random_dictionary(n, m, &mut rng);
        let p_hat = random_target(n, &mut rng);
        let w = 1e-3 * rng.random::<f64>();
        let problem = LassoProblem::new(&dict, p_hat.clone(), w).unwrap();
        let sol = solve(&problem, &SolverOptions::default()).unwrap();

        prop_assert!(sol.theta.iter().all(|t| *t >= 0.0));
        let recomputed = objective_value(&dict.phi().to_owned(), &p_hat, w, None, &sol.theta);
        prop_assert!(
            (recomputed - sol.objective).abs() <= 1e-10 * (1.0 + recomputed.abs()),
            "objective field {} vs recomputed {}",
            sol.objective,
            recomputed
        );
        // residual_norm is the euclidean misfit of the returned point
        let r = dict.phi().dot(&sol.theta) - &p_hat;
        prop_assert!((r.dot(&r).sqrt() - sol.residual_norm).abs() <= 1e-10);
    }

    #[test]
    fn sweep_path_residuals_fall_as_w_falls(case in 0u64..1000) {
        let mut rng = seeded(9000 + case);
        let n = rng.random_range(15..=40);
        let m = rng.random_range(5..=25);
        let dict = random_dictionary(n, m, &mut rng);
        let p_hat = random_target(n, &mut rng);
        let problem = LassoProblem::new(&dict, p_hat, 0.0).unwrap();
        let cfg = SweepConfig { eta: 0.7, max_steps: 40, ..Default::default() };
        let report = sweep(&problem, &SolverOptions::default(), &cfg).unwrap();

        prop_assert!(report.selected < report.steps.len());
        for pair in report.steps.windows(2) {
            prop_assert!(pair[1].w < pair[0].w, "weights must descend");
            prop_assert!(
                pair[1].residual_norm <= pair[0].residual_norm + 1e-9,
                "residual rose from {} to {} as w fell",
                pair[0].residual_norm,
                pair[1].residual_norm
            );
        }
    }
}
