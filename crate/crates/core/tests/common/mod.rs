//! Shared helpers for integration tests: an independent reference solver
//! and random problem generators.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ttmix_core::dictionary::Dictionary;
use ttmix_core::grid::TimeGrid;

/// Cyclic coordinate descent for the non-negative l1 least-squares problem,
/// kept deliberately simple so it shares no code path with the library
/// solvers. Solves min 0.5||Phi theta - p||^2 + w * s' theta, theta >= 0.
pub fn coordinate_descent_reference(
    phi: &Array2<f64>,
    p_hat: &Array1<f64>,
    w: f64,
    scaling: Option<&[f64]>,
    tol: f64,
    max_sweeps: usize,
) -> Array1<f64> {
    let m = phi.ncols();
    let gram = phi.t().dot(phi);
    let c = phi.t().dot(p_hat);
    let mut theta = Array1::<f64>::zeros(m);
    for _ in 0..max_sweeps {
        let mut biggest_move = 0.0f64;
        for j in 0..m {
            let s_j = scaling.map_or(1.0, |s| s[j]);
            let g_jj = gram[[j, j]];
            if g_jj <= 0.0 {
                continue;
            }
            // residual correlation with coordinate j excluded
            let mut cross = 0.0;
            for k in 0..m {
                if k != j {
                    cross += gram[[j, k]] * theta[k];
                }
            }
            let new = ((c[j] - cross - w * s_j) / g_jj).max(0.0);
            biggest_move = biggest_move.max((new - theta[j]).abs());
            theta[j] = new;
        }
        if biggest_move < tol {
            break;
        }
    }
    theta
}

/// Objective value matching the reference solver's formulation.
pub fn objective_value(
    phi: &Array2<f64>,
    p_hat: &Array1<f64>,
    w: f64,
    scaling: Option<&[f64]>,
    theta: &Array1<f64>,
) -> f64 {
    let r = phi.dot(theta) - p_hat;
    let penalty: f64 = theta
        .iter()
        .enumerate()
        .map(|(j, t)| w * scaling.map_or(1.0, |s| s[j]) * t)
        .sum();
    0.5 * r.dot(&r) + penalty
}

/// A random column-normalized non-negative dictionary on a trivial grid.
pub fn random_dictionary(n: usize, m: usize, rng: &mut ChaCha8Rng) -> Dictionary {
    let grid = TimeGrid::new(1.0, n, m.min(n - 1), 0).unwrap();
    let mut phi = Array2::<f64>::zeros((n, m));
    for j in 0..m {
        let mut sum = 0.0;
        for i in 0..n {
            let v: f64 = rng.random::<f64>();
            // sparsify somewhat so instances vary in conditioning
            let v = if rng.random::<f64>() < 0.6 { 0.0 } else { v };
            phi[[i, j]] = v;
            sum += v;
        }
        if sum == 0.0 {
            let i = rng.random_range(0..n);
            phi[[i, j]] = 1.0;
            sum = 1.0;
        }
        for i in 0..n {
            phi[[i, j]] /= sum;
        }
    }
    let columns = (0..m)
        .map(|j| ttmix_core::dictionary::ColumnInfo {
            location: (j + 1) as f64,
            scale: 1.0,
            shape_step: 1.0,
        })
        .collect();
    Dictionary::from_matrix(&grid, phi, columns).unwrap()
}

/// A random non-negative target with roughly unit mass.
pub fn random_target(n: usize, rng: &mut ChaCha8Rng) -> Array1<f64> {
    let mut p = Array1::<f64>::zeros(n);
    let mut sum = 0.0;
    for v in p.iter_mut() {
        let x: f64 = rng.random::<f64>();
        *v = x * x;
        sum += *v;
    }
    p.mapv_inplace(|v| v / sum);
    p
}

/// Deterministic per-case rng.
pub fn seeded(case: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(0xABCD_0000 + case)
}
