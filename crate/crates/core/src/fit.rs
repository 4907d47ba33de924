//! Batch fitting pipeline: target density in, cleaned mixture model out.
//!
//! One call runs regularization selection (fixed weight or path sweep),
//! thresholds and optionally merges the support, de-biases the surviving
//! weights, and applies the unity-sum repair. The fitted grid density and
//! its distance to the target come back alongside the model so callers need
//! no second pass.

use ndarray::Array1;

use crate::dictionary::Dictionary;
use crate::error::Result;
use crate::postprocess::{
    debias, merge_nearby, threshold_support, MixtureModel, RepairPlan,
};
use crate::regularization::{sweep, SweepConfig, SweepReport};
use crate::solver::{solve, LassoProblem, SolverOptions, SparseSolution};

/// How the regularization weight is chosen for a fit.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum RegChoice {
    /// Use this weight as given.
    Fixed(f64),
    /// Run the geometric path and keep its selection.
    Sweep,
}

/// Pipeline parameters.
#[derive(Debug, Clone)]
pub struct FitOptions {
    pub reg: RegChoice,
    /// Penalize each column by the reciprocal of its scale, which evens out
    /// the penalty across narrow and wide components.
    pub scale_penalty: bool,
    /// Relative support threshold.
    pub threshold_eps: f64,
    /// Merge distance in seconds; 0 disables merging.
    pub merge_dist: f64,
    pub debias: bool,
    /// Per-row ceiling for the repair component's grid contribution.
    pub repair_eps: f64,
    pub solver: SolverOptions,
    pub sweep: SweepConfig,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            reg: RegChoice::Sweep,
            scale_penalty: false,
            threshold_eps: 1e-3,
            merge_dist: 0.0,
            debias: true,
            repair_eps: 1e-6,
            solver: SolverOptions::default(),
            sweep: SweepConfig::default(),
        }
    }
}

/// Everything a fit produces.
#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub model: MixtureModel,
    /// Raw solver solution at the selected weight, before cleanup.
    pub solution: SparseSolution,
    /// Present when the weight came from a path sweep.
    pub sweep: Option<SweepReport>,
    /// Final support column indices, post-merge.
    pub support: Vec<usize>,
    /// Model density on the grid, repair included.
    pub fitted: Array1<f64>,
    /// Root-mean-square distance between `fitted` and the target.
    pub rmse_to_target: f64,
}

/// Per-column regularizer weights implied by the options.
pub fn penalty_scaling(dict: &Dictionary, opts: &FitOptions) -> Option<Vec<f64>> {
    opts.scale_penalty
        .then(|| dict.columns().iter().map(|c| 1.0 / c.scale).collect())
}

/// Run the full pipeline against a target grid density.
pub fn fit_density(
    dict: &Dictionary,
    p_hat: &Array1<f64>,
    opts: &FitOptions,
    plan: Option<&RepairPlan>,
) -> Result<FitOutcome> {
    let mut problem = LassoProblem::new(dict, p_hat.clone(), 0.0)?;
    if let Some(scaling) = penalty_scaling(dict, opts) {
        problem = problem.with_scaling(scaling)?;
    }

    let (solution, w_used, sweep_report) = match opts.reg {
        RegChoice::Fixed(w) => {
            problem.set_w(w)?;
            let sol = solve(&problem, &opts.solver)?;
            (sol, w, None)
        }
        RegChoice::Sweep => {
            let report = sweep(&problem, &opts.solver, &opts.sweep)?;
            let w = report.selected_step().w;
            (report.selected_solution.clone(), w, Some(report))
        }
    };

    let mut theta = solution.theta.clone();
    let mut support = threshold_support(theta.view(), opts.threshold_eps);
    if opts.merge_dist > 0.0 {
        support = merge_nearby(&support, &mut theta, dict.columns(), opts.merge_dist);
    }

    let mut weights: Vec<f64> = if support.is_empty() {
        Vec::new()
    } else if opts.debias {
        let start: Vec<f64> = support.iter().map(|&k| theta[k]).collect();
        debias(p_hat, dict, &support, &start)?
    } else {
        support.iter().map(|&k| theta[k]).collect()
    };

    // de-biasing regularly zeroes companion columns the shrinkage kept
    // marginally alive; re-apply the support rule so the model carries no
    // dead components
    if opts.debias && !weights.is_empty() {
        let keep = threshold_support(Array1::from(weights.clone()).view(), opts.threshold_eps);
        support = keep.iter().map(|&k| support[k]).collect();
        weights = keep.iter().map(|&k| weights[k]).collect();
    }

    let mut model = MixtureModel::from_solution(dict, &support, &weights, w_used)?;

    let hold;
    let plan = match plan {
        Some(p) => p,
        None => {
            hold = RepairPlan::cached(dict.grid().delta(), opts.repair_eps)?;
            &hold
        }
    };
    plan.apply(&mut model);

    // evaluate through the dictionary columns (bit-identical to the fit),
    // then layer the repair on top; when the repair step rescaled the
    // weights to unit mass, mirror that here
    let raw_sum: f64 = weights.iter().sum();
    let factor =
        if raw_sum > 0.0 { model.component_weight_sum() / raw_sum } else { 1.0 };
    let mut fitted = Array1::zeros(dict.n_rows());
    for (&idx, &w) in support.iter().zip(weights.iter()) {
        fitted.scaled_add(w * factor, &dict.phi().column(idx));
    }
    if let Some(r) = model.repair {
        for (n, v) in fitted.iter_mut().enumerate() {
            *v += r.weight * plan.psi_at(n);
        }
    }
    let mut diff_sq = 0.0;
    for (f, p) in fitted.iter().zip(p_hat.iter()) {
        diff_sq += (f - p) * (f - p);
    }
    let rmse_to_target = (diff_sq / dict.n_rows() as f64).sqrt();

    Ok(FitOutcome { model, solution, sweep: sweep_report, support, fitted, rmse_to_target })
}
