//! Regularization weight selection along a geometric path.
//!
//! The critical weight w0 = max_m (Phi^T p_hat)_m / s_m is the smallest
//! weight at which the all-zero solution is optimal. The sweep walks
//! w_k = eta^k w0 downward, warm-starting every solve from the previous
//! step, scores each visited weight by S2 = r^2 / (M - s) (residual norm
//! squared over unused columns; infinite when every column is active), and
//! returns the weight minimizing the score. A bisection mode instead targets
//! an exact support size.
//!
//! The path stops when the residual stagnates between steps. Near w0 the
//! residual barely moves for many steps before the fit picks up, so the
//! stagnation test arms only after the first non-stagnant step; otherwise it
//! would fire immediately and the path would never leave the flat region.

use std::path::Path;

use ndarray::Array1;

use crate::dictionary::Dictionary;
use crate::error::{Error, Result};
use crate::postprocess::threshold_support;
use crate::solver::{solve, LassoProblem, SolverOptions, SparseSolution};

/// Path parameters.
#[derive(Debug, Clone)]
pub struct SweepConfig {
    /// Geometric decay of the weight per step.
    pub eta: f64,
    /// Relative residual change below which a (post-arming) step stagnates.
    pub eps_stop: f64,
    /// Cap on path steps.
    pub max_steps: usize,
    /// Relative threshold used to count the support at each step.
    pub threshold_eps: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { eta: 0.95, eps_stop: 1e-3, max_steps: 500, threshold_eps: 1e-3 }
    }
}

impl SweepConfig {
    fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return Err(Error::InvalidInput(format!("eta must lie in (0, 1), got {}", self.eta)));
        }
        if !(self.eps_stop > 0.0 && self.threshold_eps > 0.0) {
            return Err(Error::InvalidInput("stagnation and threshold tolerances must be positive".into()));
        }
        if self.max_steps == 0 {
            return Err(Error::InvalidInput("max_steps must be at least 1".into()));
        }
        Ok(())
    }
}

/// One visited weight on the path.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct SweepStep {
    pub w: f64,
    pub objective: f64,
    pub residual_norm: f64,
    pub support_size: usize,
    /// S2 score; +inf when the support saturates the dictionary.
    pub metric: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Path outcome: visited steps in decreasing-w order, the selected index,
/// and the selected solution.
#[derive(Debug, Clone)]
pub struct SweepReport {
    pub steps: Vec<SweepStep>,
    pub selected: usize,
    pub selected_solution: SparseSolution,
    /// The critical weight the path started from.
    pub w_initial: f64,
    /// False only for bisection runs that never bracketed the target.
    pub bracket_found: bool,
}

impl SweepReport {
    pub fn selected_step(&self) -> &SweepStep {
        &self.steps[self.selected]
    }

    /// Write the path as CSV: weight, root-mean-square residual over the
    /// support rows, support size, score.
    pub fn write_csv(&self, path: &Path, n_rows: usize) -> std::io::Result<()> {
        use std::io::Write;
        let f = std::fs::File::create(path)?;
        let mut out = std::io::BufWriter::new(f);
        writeln!(out, "w,rmse,s_w,S2w")?;
        let root_n = (n_rows as f64).sqrt();
        for s in &self.steps {
            writeln!(out, "{},{},{},{}", s.w, s.residual_norm / root_n, s.support_size, s.metric)?;
        }
        out.flush()
    }
}

/// Largest entry of Phi^T p_hat: the unscaled critical weight.
pub fn w_max(dict: &Dictionary, p_hat: &Array1<f64>) -> f64 {
    dict.phi().t().dot(p_hat).iter().fold(0.0f64, |a, v| a.max(*v))
}

/// Critical weight under per-column regularizer weights: the origin is
/// optimal iff w >= max_m c_m / s_m.
pub fn critical_weight(problem: &LassoProblem) -> f64 {
    let c = problem.dictionary().phi().t().dot(problem.p_hat());
    match problem.scaling() {
        None => c.iter().fold(0.0f64, |a, v| a.max(*v)),
        Some(s) => c.iter().zip(s.iter()).fold(0.0f64, |a, (cv, sv)| a.max(cv / sv)),
    }
}

/// The path score: squared residual per unused column; +inf at full support.
pub fn sw_metric(residual_sq: f64, support_size: usize, m: usize) -> f64 {
    debug_assert!(support_size <= m);
    if support_size >= m {
        f64::INFINITY
    } else {
        residual_sq / (m - support_size) as f64
    }
}

struct PathState<'p, 'd> {
    problem: LassoProblem<'d>,
    solver_opts: &'p SolverOptions,
    threshold_eps: f64,
    m: usize,
}

impl<'p, 'd> PathState<'p, 'd> {
    fn solve_at(&mut self, w: f64, warm: Option<&Array1<f64>>) -> Result<(SweepStep, SparseSolution)> {
        self.problem.set_w(w)?;
        let opts = SolverOptions { warm_start: warm.cloned(), ..self.solver_opts.clone() };
        let sol = solve(&self.problem, &opts)?;
        let support_size = threshold_support(sol.theta.view(), self.threshold_eps).len();
        let step = SweepStep {
            w,
            objective: sol.objective,
            residual_norm: sol.residual_norm,
            support_size,
            metric: sw_metric(sol.residual_norm * sol.residual_norm, support_size, self.m),
            iterations: sol.iterations,
            converged: sol.converged,
        };
        Ok((step, sol))
    }
}

/// Walk the geometric path from the critical weight and select the score
/// minimizer. The problem's own `w` is ignored; scaling and dictionary are
/// taken as given. The Gram matrix is built up front since every step
/// reuses it.
pub fn sweep(
    problem: &LassoProblem,
    solver_opts: &SolverOptions,
    cfg: &SweepConfig,
) -> Result<SweepReport> {
    cfg.validate()?;
    let dict = problem.dictionary();
    dict.gram();
    let m = dict.n_cols();
    let w0 = critical_weight(problem);

    let mut state = PathState {
        problem: problem.clone(),
        solver_opts,
        threshold_eps: cfg.threshold_eps,
        m,
    };

    if w0 <= 0.0 {
        // degenerate target: the zero solution is the whole path
        let (step, sol) = state.solve_at(0.0, None)?;
        return Ok(SweepReport {
            steps: vec![step],
            selected: 0,
            selected_solution: sol,
            w_initial: 0.0,
            bracket_found: true,
        });
    }

    let mut steps = Vec::new();
    let mut best: Option<(usize, f64, SparseSolution)> = None;
    let mut warm: Option<Array1<f64>> = None;
    let mut prev_residual: Option<f64> = None;
    let mut armed = false;

    for k in 0..cfg.max_steps {
        let w = cfg.eta.powi(k as i32) * w0;
        let (step, sol) = state.solve_at(w, warm.as_ref())?;
        warm = Some(sol.theta.clone());

        let idx = steps.len();
        if best.as_ref().is_none_or(|(_, bm, _)| step.metric < *bm) {
            best = Some((idx, step.metric, sol));
        }
        steps.push(step);

        if let Some(prev) = prev_residual {
            if prev <= f64::EPSILON {
                break;
            }
            let rel = (step.residual_norm - prev).abs() / prev;
            if rel >= cfg.eps_stop {
                armed = true;
            } else if armed {
                break;
            }
        }
        prev_residual = Some(step.residual_norm);
    }

    let (selected, _, selected_solution) = best.expect("at least one step was taken");
    Ok(SweepReport { steps, selected, selected_solution, w_initial: w0, bracket_found: true })
}

/// Find a weight whose post-threshold support size hits `target`, walking
/// down from the critical weight until the target is bracketed and then
/// bisecting on log w. Returns the closest-achieving weight when the exact
/// size is unattainable (supports jump by more than one) and flags a missing
/// bracket in `bracket_found`.
pub fn bisect_to_sparsity(
    problem: &LassoProblem,
    target: usize,
    solver_opts: &SolverOptions,
    cfg: &SweepConfig,
) -> Result<SweepReport> {
    cfg.validate()?;
    let dict = problem.dictionary();
    if target > dict.n_cols() {
        return Err(Error::InvalidInput(format!(
            "target support {target} exceeds the dictionary's {} columns",
            dict.n_cols()
        )));
    }
    dict.gram();
    let w0 = critical_weight(problem);
    let mut state = PathState {
        problem: problem.clone(),
        solver_opts,
        threshold_eps: cfg.threshold_eps,
        m: dict.n_cols(),
    };

    // the origin solution answers target 0 (and any target when p_hat = 0)
    if target == 0 || w0 <= 0.0 {
        let (step, sol) = state.solve_at(w0 * 1.000001, None)?;
        return Ok(SweepReport {
            steps: vec![step],
            selected: 0,
            selected_solution: sol,
            w_initial: w0,
            bracket_found: true,
        });
    }

    struct Visit {
        step: SweepStep,
        sol: SparseSolution,
    }
    let mut visits: Vec<Visit> = Vec::new();

    // geometric walk until the support reaches the target
    let mut warm: Option<Array1<f64>> = None;
    let mut bracket: Option<(f64, f64)> = None; // (w_dense, w_sparse)
    let mut bracket_warm: Option<Array1<f64>> = None;
    for k in 0..cfg.max_steps {
        let w = cfg.eta.powi(k as i32) * w0;
        let (step, sol) = state.solve_at(w, warm.as_ref())?;
        warm = Some(sol.theta.clone());
        let s = step.support_size;
        visits.push(Visit { step, sol });
        if s >= target {
            if s == target {
                break;
            }
            // overshot: previous step (sparser, larger w) closes the bracket
            let w_prev = if k == 0 { w0 / cfg.eta } else { cfg.eta.powi(k as i32 - 1) * w0 };
            bracket = Some((w, w_prev));
            bracket_warm = warm.clone();
            break;
        }
    }

    let exact_found = visits.iter().any(|v| v.step.support_size == target);
    let mut bracket_found = exact_found;
    if let (false, Some((mut w_lo, mut w_hi))) = (exact_found, bracket) {
        bracket_found = true;
        // bisection on log w; warm from the dense end, which shrinks cheaply
        let mut warm = bracket_warm;
        for _ in 0..60 {
            if w_hi / w_lo < 1.0 + 1e-6 {
                break;
            }
            let mid = (w_lo * w_hi).sqrt();
            let (step, sol) = state.solve_at(mid, warm.as_ref())?;
            warm = Some(sol.theta.clone());
            let s = step.support_size;
            visits.push(Visit { step, sol });
            if s == target {
                break;
            } else if s > target {
                w_lo = mid;
            } else {
                w_hi = mid;
            }
        }
    }

    // closest support size wins; ties prefer the larger weight
    let selected_visit = (0..visits.len())
        .min_by(|&a, &b| {
            let da = visits[a].step.support_size.abs_diff(target);
            let db = visits[b].step.support_size.abs_diff(target);
            da.cmp(&db).then(
                visits[b]
                    .step
                    .w
                    .partial_cmp(&visits[a].step.w)
                    .unwrap(),
            )
        })
        .expect("at least one visit");
    let selected_w = visits[selected_visit].step.w;
    let selected_solution = visits[selected_visit].sol.clone();

    let mut steps: Vec<SweepStep> = visits.into_iter().map(|v| v.step).collect();
    steps.sort_by(|a, b| b.w.partial_cmp(&a.w).unwrap());
    let selected = steps
        .iter()
        .position(|s| s.w == selected_w)
        .expect("selected step present");

    Ok(SweepReport { steps, selected, selected_solution, w_initial: w0, bracket_found })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dictionary::DictionaryConfig;
    use crate::grid::TimeGrid;
    use approx::assert_abs_diff_eq;

    fn test_dict() -> Dictionary {
        let grid = TimeGrid::new(1.0, 40, 10, 1).unwrap();
        let cfg = DictionaryConfig::new(vec![1.0]).unwrap();
        Dictionary::build_gamma(&grid, 1.0, &cfg).unwrap()
    }

    #[test]
    fn critical_weight_is_zero_for_zero_target() {
        let d = test_dict();
        assert_eq!(w_max(&d, &Array1::zeros(40)), 0.0);
    }

    #[test]
    fn critical_weight_matches_direct_product() {
        let d = test_dict();
        let mut p = Array1::zeros(40);
        p[3] = 0.6;
        p[9] = 0.4;
        let direct = d.phi().t().dot(&p).iter().fold(0.0f64, |a, v| a.max(*v));
        assert_abs_diff_eq!(w_max(&d, &p), direct, epsilon = 1e-15);
        // scaled variant divides per column
        let scaling: Vec<f64> = (0..d.n_cols()).map(|k| 1.0 / (1.0 + k as f64)).collect();
        let pr = LassoProblem::new(&d, p.clone(), 0.0)
            .unwrap()
            .with_scaling(scaling.clone())
            .unwrap();
        let c = d.phi().t().dot(&p);
        let want = (0..d.n_cols()).map(|k| c[k] / scaling[k]).fold(0.0f64, f64::max);
        assert_abs_diff_eq!(critical_weight(&pr), want, epsilon = 1e-15);
    }

    #[test]
    fn metric_handles_edge_cases() {
        assert_eq!(sw_metric(0.5, 10, 10), f64::INFINITY);
        assert_eq!(sw_metric(0.0, 3, 10), 0.0);
        assert_abs_diff_eq!(sw_metric(0.04, 5, 105), 4e-4, epsilon = 1e-18);
    }

    #[test]
    fn sweep_recovers_a_single_column_target() {
        let d = test_dict();
        let p_hat = d.phi().column(4).to_owned();
        let pr = LassoProblem::new(&d, p_hat.clone(), 0.0).unwrap();
        let report = sweep(&pr, &SolverOptions::default(), &SweepConfig::default()).unwrap();

        // first step sits at the critical weight with the zero solution
        let first = &report.steps[0];
        assert_abs_diff_eq!(first.w, report.w_initial, epsilon = 1e-15);
        assert_eq!(first.support_size, 0);
        assert_abs_diff_eq!(
            first.metric,
            p_hat.dot(&p_hat) / d.n_cols() as f64,
            epsilon = 1e-12
        );

        // the selected weight isolates exactly the planted column
        assert_eq!(report.selected_step().support_size, 1);
        let support = threshold_support(report.selected_solution.theta.view(), 1e-3);
        assert_eq!(support, vec![4]);
    }

    #[test]
    fn sweep_steps_are_ordered_and_selection_is_minimal() {
        let d = test_dict();
        let mut p_hat = Array1::zeros(40);
        p_hat.scaled_add(0.5, &d.phi().column(2));
        p_hat.scaled_add(0.5, &d.phi().column(7));
        let pr = LassoProblem::new(&d, p_hat, 0.0).unwrap();
        let report = sweep(&pr, &SolverOptions::default(), &SweepConfig::default()).unwrap();
        for pair in report.steps.windows(2) {
            assert!(pair[1].w < pair[0].w);
            // residual is non-increasing as the weight decreases
            assert!(pair[1].residual_norm <= pair[0].residual_norm * (1.0 + 1e-9));
        }
        let best = report.selected_step().metric;
        for s in &report.steps {
            assert!(best <= s.metric * (1.0 + 1e-12));
        }
    }

    #[test]
    fn sweep_handles_zero_target() {
        let d = test_dict();
        let pr = LassoProblem::new(&d, Array1::zeros(40), 0.0).unwrap();
        let report = sweep(&pr, &SolverOptions::default(), &SweepConfig::default()).unwrap();
        assert_eq!(report.steps.len(), 1);
        assert_eq!(report.w_initial, 0.0);
        assert!(report.selected_solution.theta.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn bisect_target_zero_returns_the_origin() {
        let d = test_dict();
        let p_hat = d.phi().column(3).to_owned();
        let pr = LassoProblem::new(&d, p_hat, 0.0).unwrap();
        let report =
            bisect_to_sparsity(&pr, 0, &SolverOptions::default(), &SweepConfig::default()).unwrap();
        assert!(report.bracket_found);
        assert_eq!(report.selected_step().support_size, 0);
        assert!(report.selected_step().w > report.w_initial);
    }

    #[test]
    fn bisect_reaches_an_attainable_target() {
        let d = test_dict();
        let mut p_hat = Array1::zeros(40);
        p_hat.scaled_add(0.6, &d.phi().column(2));
        p_hat.scaled_add(0.4, &d.phi().column(8));
        let pr = LassoProblem::new(&d, p_hat, 0.0).unwrap();
        for target in [1usize, 2] {
            let report =
                bisect_to_sparsity(&pr, target, &SolverOptions::default(), &SweepConfig::default())
                    .unwrap();
            assert!(report.bracket_found);
            assert_eq!(report.selected_step().support_size, target, "target {target}");
        }
    }

    #[test]
    fn bisect_report_is_sorted_and_support_monotone() {
        let d = test_dict();
        let mut p_hat = Array1::zeros(40);
        p_hat.scaled_add(0.4, &d.phi().column(1));
        p_hat.scaled_add(0.3, &d.phi().column(5));
        p_hat.scaled_add(0.3, &d.phi().column(9));
        let pr = LassoProblem::new(&d, p_hat, 0.0).unwrap();
        let report =
            bisect_to_sparsity(&pr, 3, &SolverOptions::default(), &SweepConfig::default()).unwrap();
        for pair in report.steps.windows(2) {
            assert!(pair[1].w <= pair[0].w);
            assert!(pair[1].support_size >= pair[0].support_size);
        }
    }

    #[test]
    fn report_writes_csv() {
        let d = test_dict();
        let p_hat = d.phi().column(4).to_owned();
        let pr = LassoProblem::new(&d, p_hat, 0.0).unwrap();
        let report = sweep(&pr, &SolverOptions::default(), &SweepConfig::default()).unwrap();
        let path = std::env::temp_dir().join("ttmix_sweep_report.csv");
        report.write_csv(&path, d.n_rows()).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        std::fs::remove_file(&path).ok();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "w,rmse,s_w,S2w");
        assert_eq!(lines.count(), report.steps.len());
        // first data row reflects the critical-weight step
        let first = text.lines().nth(1).unwrap();
        let fields: Vec<&str> = first.split(',').collect();
        assert_abs_diff_eq!(fields[0].parse::<f64>().unwrap(), report.w_initial, epsilon = 1e-12);
        assert_eq!(fields[2], "0");
    }
}
