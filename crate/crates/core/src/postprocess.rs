//! Solution cleanup and the unity-sum repair component.
//!
//! Raw solver output carries numerical dust and split peaks. The cleanup
//! steps: threshold tiny weights relative to the largest, merge same-scale
//! components whose locations nearly coincide, then re-fit the surviving
//! weights without regularization (de-biasing). Finally, because the fitted
//! weights rarely sum to exactly 1, a single wide component with negligible
//! per-row contribution is appended carrying the missing mass, making the
//! mixture a proper density without visibly changing it on the grid: with
//! location t' = sigma' the appended pmf is psi_n = 1 / (Gamma(1 + n d) E),
//! d = delta/sigma', E = E_d(1), and choosing sigma' so that
//! E >= 1/(0.88 eps) caps every psi_n at eps via Gamma's global minimum
//! 0.885603 > 0.88.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use ndarray::{Array1, ArrayView1};

use crate::dictionary::{component_column, ColumnInfo, Dictionary};
use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::solver::{solve, LassoProblem, SolverMethod, SolverOptions};
use crate::special::{ln_gamma_raw, mittag_leffler, MLSeriesOptions};

/// One mixture component on the grid.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Component {
    pub location: f64,
    pub scale: f64,
    pub weight: f64,
}

/// The appended unity-sum component. `normalizer` is E_{delta/scale}(1),
/// kept so the component can be evaluated without redoing the series.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RepairComponent {
    pub location: f64,
    pub scale: f64,
    pub weight: f64,
    pub normalizer: f64,
}

/// A fitted sparse mixture: cleaned components, optional repair component,
/// and provenance.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MixtureModel {
    /// Sorted by location, then scale.
    pub components: Vec<Component>,
    pub repair: Option<RepairComponent>,
    pub dictionary_id: String,
    pub reg_weight: f64,
}

impl MixtureModel {
    /// Assemble a model from a solver solution restricted to a support set.
    pub fn from_solution(
        dict: &Dictionary,
        support: &[usize],
        weights: &[f64],
        reg_weight: f64,
    ) -> Result<Self> {
        if support.len() != weights.len() {
            return Err(Error::DimensionMismatch(format!(
                "support has {} indices, weights has {} entries",
                support.len(),
                weights.len()
            )));
        }
        let mut components = Vec::with_capacity(support.len());
        for (&idx, &w) in support.iter().zip(weights.iter()) {
            let info = dict
                .columns()
                .get(idx)
                .ok_or_else(|| Error::InvalidInput(format!("support index {idx} out of range")))?;
            components.push(Component { location: info.location, scale: info.scale, weight: w });
        }
        components.sort_by(|a, b| {
            (a.location, a.scale).partial_cmp(&(b.location, b.scale)).unwrap()
        });
        Ok(Self { components, repair: None, dictionary_id: dict.id(), reg_weight })
    }

    /// Sum of the cleaned component weights, excluding the repair.
    pub fn component_weight_sum(&self) -> f64 {
        self.components.iter().map(|c| c.weight).sum()
    }

    /// Total mixture mass including the repair component.
    pub fn total_weight(&self) -> f64 {
        self.component_weight_sum() + self.repair.map_or(0.0, |r| r.weight)
    }

    /// Evaluate the mixture on a grid, rebuilding each component column.
    /// `corrected` must match the dictionary the model was fitted against so
    /// the columns agree bit-for-bit with the fit.
    pub fn density_on_grid(&self, grid: &TimeGrid, corrected: bool) -> Result<Array1<f64>> {
        let n = grid.n_support();
        let opts = MLSeriesOptions::default();
        let mut out = Array1::zeros(n);
        for c in &self.components {
            let col = component_column(n, c.location, c.scale, grid.delta(), corrected, &opts)?;
            for (o, v) in out.iter_mut().zip(col.iter()) {
                *o += c.weight * v;
            }
        }
        if let Some(r) = self.repair {
            let d = grid.delta() / r.scale;
            for (i, o) in out.iter_mut().enumerate() {
                *o += r.weight / (ln_gamma_raw(1.0 + i as f64 * d).exp() * r.normalizer);
            }
        }
        Ok(out)
    }
}

/// Indices whose weight reaches `eps_rel` times the largest weight.
/// An all-zero vector yields an empty support.
pub fn threshold_support(theta: ArrayView1<f64>, eps_rel: f64) -> Vec<usize> {
    let max = theta.iter().fold(0.0f64, |a, v| a.max(*v));
    if max <= 0.0 {
        return Vec::new();
    }
    let cut = eps_rel * max;
    (0..theta.len()).filter(|&m| theta[m] >= cut).collect()
}

/// Merge supported components that share a scale and sit within `dist`
/// seconds of each other: the heaviest keeps its location and absorbs the
/// others' weights. Heaviest-first greedy; weight ties go to the smaller
/// location. Returns the surviving support; `theta` is updated in place.
pub fn merge_nearby(
    support: &[usize],
    theta: &mut Array1<f64>,
    columns: &[ColumnInfo],
    dist: f64,
) -> Vec<usize> {
    if dist <= 0.0 || support.len() < 2 {
        return support.to_vec();
    }
    // heaviest first, ties toward the smaller location
    let mut order: Vec<usize> = support.to_vec();
    order.sort_by(|&a, &b| {
        theta[b]
            .partial_cmp(&theta[a])
            .unwrap()
            .then(columns[a].location.partial_cmp(&columns[b].location).unwrap())
    });
    let mut absorbed: Vec<bool> = vec![false; order.len()];
    let mut survivors = Vec::new();
    for i in 0..order.len() {
        if absorbed[i] {
            continue;
        }
        let rep = order[i];
        survivors.push(rep);
        for j in (i + 1)..order.len() {
            if absorbed[j] {
                continue;
            }
            let other = order[j];
            if columns[other].scale == columns[rep].scale
                && (columns[other].location - columns[rep].location).abs() <= dist
            {
                theta[rep] += theta[other];
                theta[other] = 0.0;
                absorbed[j] = true;
            }
        }
    }
    survivors.sort_unstable();
    survivors
}

/// Re-fit the weights on a fixed support by non-negative least squares,
/// warm-started from the current weights so the residual cannot increase.
/// Returns the new weights in support order.
pub fn debias(
    p_hat: &Array1<f64>,
    dict: &Dictionary,
    support: &[usize],
    theta0: &[f64],
) -> Result<Vec<f64>> {
    if support.is_empty() {
        return Err(Error::EmptySupport);
    }
    if support.len() != theta0.len() {
        return Err(Error::DimensionMismatch(format!(
            "support has {} indices, starting weights has {} entries",
            support.len(),
            theta0.len()
        )));
    }
    let n = dict.n_rows();
    let mut sub_phi = ndarray::Array2::zeros((n, support.len()));
    let mut sub_cols = Vec::with_capacity(support.len());
    for (k, &idx) in support.iter().enumerate() {
        sub_phi.column_mut(k).assign(&dict.phi().column(idx));
        sub_cols.push(dict.columns()[idx]);
    }
    let sub_dict = Dictionary::from_matrix(dict.grid(), sub_phi, sub_cols)?;
    let problem = LassoProblem::new(&sub_dict, p_hat.clone(), 0.0)?;
    let opts = SolverOptions {
        method: SolverMethod::ProjectedGradient,
        warm_start: Some(Array1::from(theta0.to_vec())),
        ..Default::default()
    };
    let sol = solve(&problem, &opts)?;
    Ok(sol.theta.to_vec())
}

/// Precomputed repair component for one (delta, eps) pair: the scale search
/// and the costly E series run once, then every model reuses the result.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RepairPlan {
    pub delta: f64,
    pub eps: f64,
    pub sigma_prime: f64,
    /// E_{delta/sigma_prime}(1), the appended pmf's normalizer.
    pub normalizer: f64,
}

/// Widest scale the geometric search will try, as a multiple 2^k of delta.
const REPAIR_SEARCH_MAX_DOUBLINGS: usize = 24;

impl RepairPlan {
    /// Search sigma' in {delta, 2 delta, 4 delta, ...} for the first scale
    /// with E_{delta/sigma'}(1) >= 1/(0.88 eps). The condition is monotone
    /// in sigma', so the first hit is the smallest suitable grid point.
    pub fn for_delta(delta: f64, eps: f64) -> Result<Self> {
        if !(delta.is_finite() && delta > 0.0) {
            return Err(Error::Domain(format!("grid step must be positive, got {delta}")));
        }
        if !(eps > 0.0 && eps < 1.0) {
            return Err(Error::Domain(format!("eps must lie in (0, 1), got {eps}")));
        }
        let target = 1.0 / (0.88 * eps);
        for k in 0..=REPAIR_SEARCH_MAX_DOUBLINGS {
            let factor = (1u64 << k) as f64;
            let b = 1.0 / factor;
            // terms decay once Gamma(1 + n b) dominates; ~25/b terms suffice
            let opts = MLSeriesOptions {
                max_terms: ((30.0 / b) as usize).max(1000),
                ..Default::default()
            };
            let e = mittag_leffler(b, 1.0, &opts)?;
            if e >= target {
                return Ok(Self { delta, eps, sigma_prime: factor * delta, normalizer: e });
            }
        }
        Err(Error::RepairSearch(REPAIR_SEARCH_MAX_DOUBLINGS))
    }

    /// Process-wide cache: the search result depends only on (delta, eps).
    pub fn cached(delta: f64, eps: f64) -> Result<Arc<Self>> {
        static CACHE: OnceLock<Mutex<HashMap<(u64, u64), Arc<RepairPlan>>>> = OnceLock::new();
        let key = (delta.to_bits(), eps.to_bits());
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        if let Some(plan) = cache.lock().unwrap().get(&key) {
            return Ok(plan.clone());
        }
        let plan = Arc::new(Self::for_delta(delta, eps)?);
        cache.lock().unwrap().insert(key, plan.clone());
        Ok(plan)
    }

    /// The appended component's pmf value at support row n. The location
    /// equals the scale, so the shape argument collapses to 1 and the value
    /// is 1 / (Gamma(1 + n delta/sigma') E).
    pub fn psi_at(&self, n: usize) -> f64 {
        let d = self.delta / self.sigma_prime;
        1.0 / (ln_gamma_raw(1.0 + n as f64 * d).exp() * self.normalizer)
    }

    /// Largest grid contribution of the appended component.
    pub fn max_grid_contribution(&self, grid: &TimeGrid) -> f64 {
        (0..grid.n_support()).map(|n| self.psi_at(n)).fold(0.0, f64::max)
    }

    /// Make the model's weights sum to exactly 1. Deficit mass goes to the
    /// appended component; excess mass is rescaled away proportionally (the
    /// append can only add mass, never remove it).
    pub fn apply(&self, model: &mut MixtureModel) {
        let sum = model.component_weight_sum();
        if sum > 1.0 {
            for c in &mut model.components {
                c.weight /= sum;
            }
            model.repair = None;
        } else {
            model.repair = Some(RepairComponent {
                location: self.sigma_prime,
                scale: self.sigma_prime,
                weight: 1.0 - sum,
                normalizer: self.normalizer,
            });
        }
    }
}

/// Convenience wrapper: plan lookup (cached) plus apply.
pub fn repair_unity(model: &mut MixtureModel, delta: f64, eps: f64) -> Result<()> {
    let plan = RepairPlan::cached(delta, eps)?;
    plan.apply(model);
    Ok(())
}
