//! Expectation-maximization baseline: plain Gaussian mixtures.
//!
//! Serves as the comparison fit. Restarts run in parallel from independent
//! seeded initializations (means uniform over the sample range, variances at
//! the sample variance, uniform weights) and the winner is the restart whose
//! grid density lands closest to the reference density, the same
//! root-mean-square metric the default stopping rule watches; the best final
//! log-likelihood seen across restarts is kept as a diagnostic, since the
//! attainable likelihood is what grows with K. Responsibilities are
//! computed in log space, variances are floored to keep components from
//! collapsing onto a single sample, and a component that sits on the floor
//! for several consecutive iterations is pruned with a warning.

use ndarray::{Array1, ArrayView1};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::synthetic::rmse;

/// Consecutive floored iterations before a component is dropped.
const FLOOR_PATIENCE: usize = 5;

/// One Gaussian component.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GaussianComponent {
    pub mean: f64,
    pub variance: f64,
    pub weight: f64,
}

impl GaussianComponent {
    fn log_pdf(&self, x: f64) -> f64 {
        let d = x - self.mean;
        -0.5 * (2.0 * std::f64::consts::PI * self.variance).ln() - d * d / (2.0 * self.variance)
    }
}

/// A fitted Gaussian mixture with its fit diagnostics.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GaussianMixture {
    /// Kernel tag, always "gaussian"; keeps the schema aligned with the
    /// sparse model output.
    pub kernel: String,
    pub components: Vec<GaussianComponent>,
    pub restarts_used: usize,
    /// Iterations of the winning restart.
    pub iterations: usize,
    pub log_likelihood: f64,
    /// Best final log-likelihood over all restarts, whichever run won;
    /// this is the likelihood the fit could attain at this K.
    pub ll_best_restart: f64,
    /// Root-mean-square gap to the reference density on the grid.
    pub rmse: f64,
    /// Log-likelihood after each iteration of the winning restart.
    pub ll_trace: Vec<f64>,
    /// Degeneracy notices accumulated during the winning restart.
    pub warnings: Vec<String>,
}

impl GaussianMixture {
    /// Mixture density at t.
    pub fn density(&self, t: f64) -> f64 {
        self.components.iter().map(|c| c.weight * c.log_pdf(t).exp()).sum()
    }

    /// Cell masses on a grid: density at each support point times the width.
    pub fn masses_on_grid(&self, grid: &TimeGrid) -> Array1<f64> {
        Array1::from_iter(grid.support_times().iter().map(|&t| self.density(t) * grid.delta()))
    }
}

/// Stopping rule for one EM run, applied to successive iterations.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum EmStop {
    /// Stop when the grid RMSE changes by less than this.
    RmseChange(f64),
    /// Stop when the log-likelihood changes by less than this.
    LogLikChange(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EmOptions {
    pub restarts: usize,
    pub max_iters: usize,
    pub stop: EmStop,
    /// Lower bound on component variances.
    pub var_floor: f64,
    pub seed: u64,
}

impl Default for EmOptions {
    fn default() -> Self {
        Self {
            restarts: 10,
            max_iters: 500,
            stop: EmStop::RmseChange(1e-3),
            var_floor: 1e-4,
            seed: 0,
        }
    }
}

impl EmOptions {
    pub fn validate(&self) -> Result<()> {
        if self.restarts == 0 {
            return Err(Error::InvalidInput("need at least one restart".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidInput("need at least one iteration".into()));
        }
        let tol = match self.stop {
            EmStop::RmseChange(t) | EmStop::LogLikChange(t) => t,
        };
        if !(tol > 0.0 && tol.is_finite()) {
            return Err(Error::InvalidInput(format!("stopping tolerance must be positive, got {tol}")));
        }
        if !(self.var_floor > 0.0 && self.var_floor.is_finite()) {
            return Err(Error::InvalidInput(format!("variance floor must be positive, got {}", self.var_floor)));
        }
        Ok(())
    }
}

/// Log-likelihood of samples under a component set, via log-sum-exp.
pub fn log_likelihood(components: &[GaussianComponent], samples: &[f64]) -> f64 {
    samples
        .iter()
        .map(|&x| {
            let logs: Vec<f64> = components
                .iter()
                .filter(|c| c.weight > 0.0)
                .map(|c| c.weight.ln() + c.log_pdf(x))
                .collect();
            let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            m + logs.iter().map(|l| (l - m).exp()).sum::<f64>().ln()
        })
        .sum()
}

struct RunResult {
    components: Vec<GaussianComponent>,
    iterations: usize,
    rmse: f64,
    ll: f64,
    ll_trace: Vec<f64>,
    warnings: Vec<String>,
}

/// One seeded EM run from a random initialization.
fn run_once(
    samples: &[f64],
    k: usize,
    grid: &TimeGrid,
    p_hat: ArrayView1<'_, f64>,
    opts: &EmOptions,
    seed: u64,
) -> RunResult {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = (samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).max(opts.var_floor);
    let lo = samples.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut comps: Vec<GaussianComponent> = (0..k)
        .map(|_| GaussianComponent {
            mean: lo + rng.random::<f64>() * (hi - lo),
            variance: var,
            weight: 1.0 / k as f64,
        })
        .collect();

    let grid_rmse = |comps: &[GaussianComponent]| {
        let masses: Vec<f64> = grid
            .support_times()
            .iter()
            .map(|&t| comps.iter().map(|c| c.weight * c.log_pdf(t).exp()).sum::<f64>() * grid.delta())
            .collect();
        rmse(&masses, p_hat.as_slice().expect("contiguous")).expect("equal lengths")
    };

    let mut floored = vec![0usize; comps.len()];
    let mut warnings = Vec::new();
    let mut ll_trace = Vec::new();
    let mut prev_metric = f64::INFINITY;
    let mut iterations = 0;

    for _ in 0..opts.max_iters {
        iterations += 1;

        // e step: responsibilities in log space, one sample at a time
        let kk = comps.len();
        let mut weight_sum = vec![0.0; kk];
        let mut mean_sum = vec![0.0; kk];
        for &x in samples {
            let logs: Vec<f64> =
                comps.iter().map(|c| c.weight.max(1e-300).ln() + c.log_pdf(x)).collect();
            let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let denom: f64 = logs.iter().map(|l| (l - m).exp()).sum();
            for j in 0..kk {
                let r = (logs[j] - m).exp() / denom;
                weight_sum[j] += r;
                mean_sum[j] += r * x;
            }
        }

        // m step: means first, then responsibility-weighted spread
        let new_means: Vec<f64> =
            (0..kk).map(|j| if weight_sum[j] > 0.0 { mean_sum[j] / weight_sum[j] } else { comps[j].mean }).collect();
        let mut var_sum = vec![0.0; kk];
        for &x in samples {
            let logs: Vec<f64> =
                comps.iter().map(|c| c.weight.max(1e-300).ln() + c.log_pdf(x)).collect();
            let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let denom: f64 = logs.iter().map(|l| (l - m).exp()).sum();
            for j in 0..kk {
                let r = (logs[j] - m).exp() / denom;
                let d = x - new_means[j];
                var_sum[j] += r * d * d;
            }
        }
        for j in 0..kk {
            comps[j].mean = new_means[j];
            let v = if weight_sum[j] > 0.0 { var_sum[j] / weight_sum[j] } else { opts.var_floor };
            if v < opts.var_floor {
                comps[j].variance = opts.var_floor;
                floored[j] += 1;
            } else {
                comps[j].variance = v;
                floored[j] = 0;
            }
            comps[j].weight = weight_sum[j] / n;
        }

        // drop components stuck on the variance floor, keeping at least one
        while comps.len() > 1 {
            let Some(j) = (0..comps.len()).find(|&j| floored[j] >= FLOOR_PATIENCE) else { break };
            let msg = format!(
                "pruned component at mean {:.6}: variance floored {} iterations in a row",
                comps[j].mean, floored[j]
            );
            log::warn!("{msg}");
            warnings.push(msg);
            comps.remove(j);
            floored.remove(j);
            let total: f64 = comps.iter().map(|c| c.weight).sum();
            for c in comps.iter_mut() {
                c.weight /= total;
            }
        }

        ll_trace.push(log_likelihood(&comps, samples));

        let metric = match opts.stop {
            EmStop::RmseChange(_) => grid_rmse(&comps),
            EmStop::LogLikChange(_) => *ll_trace.last().expect("just pushed"),
        };
        let tol = match opts.stop {
            EmStop::RmseChange(t) | EmStop::LogLikChange(t) => t,
        };
        // a component sitting on the variance floor is still headed for
        // pruning, so the run is not converged yet
        let pending_prune = comps.len() > 1 && floored.iter().any(|&f| f > 0);
        if !pending_prune && (metric - prev_metric).abs() < tol {
            break;
        }
        prev_metric = metric;
    }

    RunResult {
        rmse: grid_rmse(&comps),
        ll: log_likelihood(&comps, samples),
        components: comps,
        iterations,
        ll_trace,
        warnings,
    }
}

/// Fit a K-component Gaussian mixture by EM with parallel random restarts,
/// keeping the restart whose grid density is closest to `p_hat`.
pub fn fit_em(
    samples: &[f64],
    k: usize,
    grid: &TimeGrid,
    p_hat: ArrayView1<'_, f64>,
    opts: &EmOptions,
) -> Result<GaussianMixture> {
    opts.validate()?;
    if k == 0 {
        return Err(Error::InvalidInput("need at least one component".into()));
    }
    if samples.len() <= k {
        return Err(Error::InvalidInput(format!(
            "need more than {k} samples to fit {k} components, got {}",
            samples.len()
        )));
    }
    if samples.iter().any(|t| !t.is_finite()) {
        return Err(Error::InvalidInput("samples must be finite".into()));
    }
    if p_hat.len() != grid.n_support() {
        return Err(Error::DimensionMismatch(format!(
            "density has {} entries, grid has {} support points",
            p_hat.len(),
            grid.n_support()
        )));
    }

    let runs: Vec<RunResult> = (0..opts.restarts)
        .into_par_iter()
        .map(|r| run_once(samples, k, grid, p_hat, opts, opts.seed.wrapping_add(r as u64)))
        .collect();
    // the winner is the run closest to the reference density, the reported
    // metric; strict < keeps the earliest restart on ties, independent of
    // scheduling
    let ll_best_restart = runs.iter().map(|r| r.ll).fold(f64::NEG_INFINITY, f64::max);
    let best = runs
        .into_iter()
        .reduce(|acc, r| if r.rmse < acc.rmse { r } else { acc })
        .expect("at least one restart");

    let mut components = best.components;
    components.sort_by(|a, b| a.mean.total_cmp(&b.mean));
    let ll = log_likelihood(&components, samples);
    Ok(GaussianMixture {
        kernel: "gaussian".to_string(),
        components,
        restarts_used: opts.restarts,
        iterations: best.iterations,
        log_likelihood: ll,
        ll_best_restart,
        rmse: best.rmse,
        ll_trace: best.ll_trace,
        warnings: best.warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parzen::{parzen_batch, KernelMatrix, KernelSpec};
    use approx::assert_abs_diff_eq;

    fn small_grid(n: usize) -> TimeGrid {
        TimeGrid::new(1.0, n, n - 1, 0).unwrap()
    }

    fn parzen_of(samples: &[f64], grid: &TimeGrid) -> Array1<f64> {
        let km = KernelMatrix::build(grid, KernelSpec { bandwidth: 1.0 });
        parzen_batch(samples, &km).unwrap()
    }

    #[test]
    fn single_component_recovers_sample_moments() {
        let samples = [3.0, 7.0, 11.0, 12.0, 20.0, 4.5, 9.25];
        let grid = small_grid(30);
        let p_hat = parzen_of(&samples, &grid);
        let model = fit_em(&samples, 1, &grid, p_hat.view(), &EmOptions::default()).unwrap();

        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        assert_eq!(model.components.len(), 1);
        assert_abs_diff_eq!(model.components[0].mean, mean, epsilon = 1e-8);
        assert_abs_diff_eq!(model.components[0].variance, var, epsilon = 1e-8);
        assert_abs_diff_eq!(model.components[0].weight, 1.0, epsilon = 1e-12);
        assert!(model.warnings.is_empty());
    }

    #[test]
    fn two_separated_clusters_recover_their_means() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut samples = Vec::new();
        let cluster = |center: f64, n: usize, rng: &mut ChaCha8Rng, out: &mut Vec<f64>| {
            let norm = rand_distr::Normal::new(center, 1.0).unwrap();
            let start = out.len();
            for _ in 0..n {
                out.push(rand_distr::Distribution::sample(&norm, rng));
            }
            out[start..].iter().sum::<f64>() / n as f64
        };
        let m_low = cluster(12.0, 250, &mut rng, &mut samples);
        let m_high = cluster(48.0, 250, &mut rng, &mut samples);

        let grid = small_grid(64);
        let p_hat = parzen_of(&samples, &grid);
        let model = fit_em(&samples, 2, &grid, p_hat.view(), &EmOptions::default()).unwrap();

        assert_eq!(model.components.len(), 2);
        assert!((model.components[0].mean - m_low).abs() <= 0.02 * m_low);
        assert!((model.components[1].mean - m_high).abs() <= 0.02 * m_high);
        let wsum: f64 = model.components.iter().map(|c| c.weight).sum();
        assert_abs_diff_eq!(wsum, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn log_likelihood_closed_forms() {
        let c = [GaussianComponent { mean: 5.0, variance: 1.0, weight: 1.0 }];
        let one = log_likelihood(&c, &[5.0]);
        assert_abs_diff_eq!(one, -0.5 * (2.0 * std::f64::consts::PI).ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(log_likelihood(&c, &[5.0, 5.0]), 2.0 * one, epsilon = 1e-12);
    }

    #[test]
    fn likelihood_trace_is_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let norm_a = rand_distr::Normal::new(15.0, 2.0).unwrap();
        let norm_b = rand_distr::Normal::new(40.0, 3.0).unwrap();
        let mut samples: Vec<f64> = Vec::new();
        for _ in 0..150 {
            samples.push(rand_distr::Distribution::sample(&norm_a, &mut rng));
            samples.push(rand_distr::Distribution::sample(&norm_b, &mut rng));
        }
        let grid = small_grid(60);
        let p_hat = parzen_of(&samples, &grid);
        let model = fit_em(&samples, 2, &grid, p_hat.view(), &EmOptions::default()).unwrap();
        for pair in model.ll_trace.windows(2) {
            assert!(pair[1] >= pair[0] - 1e-10, "log-likelihood fell: {} -> {}", pair[0], pair[1]);
        }
    }

    #[test]
    fn repeated_point_component_is_pruned_with_warning() {
        // two exact atoms: any two-component run collapses onto them and
        // must shed at least one floored component
        let mut samples = vec![20.0; 60];
        samples.extend(std::iter::repeat(45.0).take(60));
        let grid = small_grid(70);
        let p_hat = parzen_of(&samples, &grid);
        // a tight stop keeps the run alive until the collapse resolves
        let opts =
            EmOptions { restarts: 1, stop: EmStop::LogLikChange(1e-9), ..Default::default() };
        let model = fit_em(&samples, 2, &grid, p_hat.view(), &opts).unwrap();

        assert!(!model.warnings.is_empty(), "expected a degeneracy warning");
        assert!(model.components.len() < 2);
        let wsum: f64 = model.components.iter().map(|c| c.weight).sum();
        assert_abs_diff_eq!(wsum, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn fit_is_seed_deterministic() {
        let samples: Vec<f64> = (0..80).map(|i| 10.0 + (i % 17) as f64 * 1.37).collect();
        let grid = small_grid(40);
        let p_hat = parzen_of(&samples, &grid);
        let opts = EmOptions { restarts: 4, seed: 5, ..Default::default() };
        let a = fit_em(&samples, 2, &grid, p_hat.view(), &opts).unwrap();
        let b = fit_em(&samples, 2, &grid, p_hat.view(), &opts).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.restarts_used, 4);
        assert_eq!(a.kernel, "gaussian");
        assert!(a.ll_best_restart >= a.log_likelihood - 1e-9);
    }

    #[test]
    fn preconditions_are_enforced() {
        let grid = small_grid(10);
        let p_hat = Array1::from_elem(10, 0.1);
        assert!(fit_em(&[1.0, 2.0], 2, &grid, p_hat.view(), &EmOptions::default()).is_err());
        assert!(fit_em(&[1.0, 2.0, 3.0], 0, &grid, p_hat.view(), &EmOptions::default()).is_err());
        let short = Array1::from_elem(7, 0.1);
        assert!(fit_em(&[1.0, 2.0, 3.0], 1, &grid, short.view(), &EmOptions::default()).is_err());
        let bad = EmOptions { restarts: 0, ..Default::default() };
        assert!(fit_em(&[1.0, 2.0, 3.0], 1, &grid, p_hat.view(), &bad).is_err());
    }

    #[test]
    fn loglik_stop_mode_also_converges() {
        let samples: Vec<f64> = (0..60).map(|i| 20.0 + (i % 11) as f64).collect();
        let grid = small_grid(40);
        let p_hat = parzen_of(&samples, &grid);
        let opts = EmOptions { stop: EmStop::LogLikChange(1e-6), restarts: 2, ..Default::default() };
        let model = fit_em(&samples, 2, &grid, p_hat.view(), &opts).unwrap();
        assert!(model.iterations < 500);
        assert!(model.rmse.is_finite());
    }
}
