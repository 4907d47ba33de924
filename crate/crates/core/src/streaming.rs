//! Online estimation: a kernel state, a warm-started solver, and the
//! current model under one roof.
//!
//! Each accepted sample updates the empirical density in O(N). On the
//! configured cadence the sparse problem is re-solved from the previous
//! weights, which costs a fraction of a cold solve because the support
//! rarely moves between consecutive samples. The regularization weight is
//! either fixed up front, selected once by a sweep on the warm-up window,
//! or re-selected every k-th refit. The dictionary is shared and immutable
//! for the estimator's lifetime.

use std::sync::Arc;

use ndarray::Array1;

use crate::dictionary::Dictionary;
use crate::error::{Error, Result};
use crate::fit::{fit_density, FitOptions, RegChoice};
use crate::parzen::{KernelMatrix, ParzenState, UpdateMode};
use crate::postprocess::{MixtureModel, RepairPlan};

/// How the regularization weight is chosen across refits.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum RegPolicy {
    /// Sweep once on the first refit, then keep that weight.
    SweepThenFixed,
    /// Use this weight for every refit.
    Fixed(f64),
    /// Re-run the sweep every k-th refit, keeping the weight in between.
    ResweepEvery(usize),
}

#[derive(Debug, Clone)]
pub struct StreamConfig {
    pub mode: UpdateMode,
    /// Solve after every this many accepted samples.
    pub refit_every: usize,
    /// Accepted samples required before the first solve.
    pub warmup_samples: usize,
    pub reg: RegPolicy,
    /// Cleanup and solver settings shared by all refits; its `reg` and any
    /// preset warm start are overridden by the stream policy.
    pub fit: FitOptions,
    /// Start each solve from the previous weights.
    pub warm_start: bool,
}

impl Default for StreamConfig {
    fn default() -> Self {
        Self {
            mode: UpdateMode::Sequential,
            refit_every: 1,
            warmup_samples: 2,
            reg: RegPolicy::SweepThenFixed,
            fit: FitOptions::default(),
            warm_start: true,
        }
    }
}

impl StreamConfig {
    pub fn validate(&self) -> Result<()> {
        if self.refit_every == 0 {
            return Err(Error::InvalidInput("refit cadence must be at least 1".into()));
        }
        if self.warmup_samples == 0 {
            return Err(Error::InvalidInput("need at least one warm-up sample".into()));
        }
        match self.reg {
            RegPolicy::Fixed(w) if !(w >= 0.0 && w.is_finite()) => {
                Err(Error::InvalidInput(format!("fixed regularization weight must be non-negative, got {w}")))
            }
            RegPolicy::ResweepEvery(0) => {
                Err(Error::InvalidInput("re-sweep interval must be at least 1".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Work counters accumulated over the stream's lifetime.
#[derive(Debug, Clone, Copy, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RefitStats {
    pub refits: usize,
    /// Solver iterations of the per-refit solves at the working weight.
    pub total_iterations: usize,
    /// Solver iterations spent inside weight-selection sweeps.
    pub sweep_iterations: usize,
    /// Samples dropped for falling outside the grid window.
    pub out_of_range: usize,
}

/// A frozen model with its stream position.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Snapshot {
    pub model: MixtureModel,
    /// Timestamp string of the sample that triggered the refit, if any.
    pub timestamp: Option<String>,
    pub samples_seen: usize,
    pub refits: usize,
}

/// Single-writer online estimator over a fixed dictionary.
#[derive(Debug)]
pub struct StreamEstimator {
    dict: Arc<Dictionary>,
    state: ParzenState,
    cfg: StreamConfig,
    /// Previous solution, the warm start for the next refit.
    theta: Option<Array1<f64>>,
    /// Working regularization weight once selected.
    w: Option<f64>,
    plan: Arc<RepairPlan>,
    current: Option<Snapshot>,
    stats: RefitStats,
    since_refit: usize,
}

impl StreamEstimator {
    pub fn new(dict: Arc<Dictionary>, km: Arc<KernelMatrix>, cfg: StreamConfig) -> Result<Self> {
        cfg.validate()?;
        if km.grid() != dict.grid() {
            return Err(Error::InvalidInput(
                "kernel matrix and dictionary are built on different grids".into(),
            ));
        }
        // one-off costs up front so refits stay cheap
        let plan = RepairPlan::cached(dict.grid().delta(), cfg.fit.repair_eps)?;
        dict.gram();
        let state = ParzenState::new(km, cfg.mode)?;
        Ok(Self {
            dict,
            state,
            cfg,
            theta: None,
            w: None,
            plan,
            current: None,
            stats: RefitStats::default(),
            since_refit: 0,
        })
    }

    /// Feed one sample. Returns the fresh snapshot when this sample
    /// triggered a refit. Samples outside the grid window are counted and
    /// skipped, not errors.
    pub fn ingest(&mut self, t: f64, timestamp: Option<&str>) -> Result<Option<&Snapshot>> {
        match self.state.ingest(t) {
            Err(Error::OutOfRange { .. }) => {
                self.stats.out_of_range += 1;
                return Ok(None);
            }
            Err(e) => return Err(e),
            Ok(()) => {}
        }
        self.since_refit += 1;
        if self.state.count() >= self.cfg.warmup_samples && self.since_refit >= self.cfg.refit_every
        {
            return self.refit_now(timestamp).map(Some);
        }
        Ok(None)
    }

    /// Solve against the current density regardless of cadence.
    pub fn refit_now(&mut self, timestamp: Option<&str>) -> Result<&Snapshot> {
        if self.state.count() == 0 {
            return Err(Error::InvalidInput("no samples ingested yet".into()));
        }
        let sweep_due = match self.cfg.reg {
            RegPolicy::Fixed(w) => {
                self.w = Some(w);
                false
            }
            RegPolicy::SweepThenFixed => self.w.is_none(),
            RegPolicy::ResweepEvery(k) => self.w.is_none() || self.stats.refits % k == 0,
        };

        let mut opts = self.cfg.fit.clone();
        opts.reg = if sweep_due { RegChoice::Sweep } else { RegChoice::Fixed(self.w.expect("weight from an earlier sweep")) };
        opts.solver.warm_start = if self.cfg.warm_start { self.theta.clone() } else { None };

        let outcome = fit_density(&self.dict, self.state.p_hat(), &opts, Some(&self.plan))?;
        match &outcome.sweep {
            Some(report) => {
                // the selected step's iterations are already in the path sum
                self.w = Some(report.selected_step().w);
                self.stats.sweep_iterations +=
                    report.steps.iter().map(|s| s.iterations).sum::<usize>();
            }
            None => self.stats.total_iterations += outcome.solution.iterations,
        }
        self.theta = Some(outcome.solution.theta.clone());
        self.stats.refits += 1;
        self.since_refit = 0;
        self.current = Some(Snapshot {
            model: outcome.model,
            timestamp: timestamp.map(String::from),
            samples_seen: self.state.count(),
            refits: self.stats.refits,
        });
        Ok(self.current.as_ref().expect("just set"))
    }

    /// The latest model; an error before the first refit.
    pub fn snapshot(&self) -> Result<&Snapshot> {
        self.current.as_ref().ok_or_else(|| Error::InvalidInput("no refit has completed yet".into()))
    }

    pub fn stats(&self) -> &RefitStats {
        &self.stats
    }

    pub fn dictionary(&self) -> &Dictionary {
        &self.dict
    }

    pub fn p_hat(&self) -> &Array1<f64> {
        self.state.p_hat()
    }

    /// Accepted samples so far.
    pub fn samples_seen(&self) -> usize {
        self.state.count()
    }

    /// The weight the next refit will use, once one has been selected.
    pub fn working_weight(&self) -> Option<f64> {
        self.w
    }
}
