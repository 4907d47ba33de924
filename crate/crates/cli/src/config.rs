//! Layered run configuration: built-in defaults, then a TOML file, then
//! command-line overrides. Unknown keys are rejected so a typo cannot fall
//! back to a default silently, and every section is validated before any
//! computation touches data.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use ttmix_core::dictionary::DictionaryKind;
use ttmix_core::fit::RegChoice;
use ttmix_core::parzen::UpdateMode;
use ttmix_core::regularization::SweepConfig;
use ttmix_core::solver::{SolverMethod, SolverOptions};
use ttmix_core::streaming::{RegPolicy, StreamConfig};
use ttmix_core::{Dictionary, DictionaryConfig, FitOptions, TimeGrid};

use crate::Failure;

/// The whole run configuration; one TOML document.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub grid: GridSection,
    pub dictionary: DictSection,
    pub kernel: KernelSection,
    pub solver: SolverSection,
    pub sweep: SweepSection,
    pub fit: FitSection,
    pub streaming: StreamSection,
    pub io: IoSection,
}

/// Uniform estimation grid; locations run from `(location_offset) * delta`
/// in steps of `delta`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    pub delta: f64,
    pub n_support: usize,
    pub m_locations: usize,
    pub location_offset: usize,
}

impl Default for GridSection {
    fn default() -> Self {
        Self { delta: 1.0, n_support: 600, m_locations: 300, location_offset: 1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DictMode {
    Gamma,
    Ml,
}

/// Which component family to expand over the grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DictSection {
    pub mode: DictMode,
    pub scales: Vec<f64>,
    /// Base width of the gamma family; must equal the grid step and
    /// defaults to it when omitted.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    pub eps_tail: f64,
    pub corrected: bool,
}

impl Default for DictSection {
    fn default() -> Self {
        Self {
            mode: DictMode::Ml,
            scales: (1..=10).map(|k| k as f64).collect(),
            sigma: None,
            eps_tail: 1e-6,
            corrected: true,
        }
    }
}

/// Either the word "auto" or a fixed width in seconds.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Bandwidth {
    Fixed(f64),
    Named(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelSection {
    pub bandwidth: Bandwidth,
}

impl Default for KernelSection {
    fn default() -> Self {
        Self { bandwidth: Bandwidth::Named("auto".into()) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodTag {
    Pg,
    Ip,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub method: MethodTag,
    pub max_iters: usize,
    pub grad_tol: f64,
    pub barrier_init: f64,
    pub barrier_growth: f64,
    pub barrier_gap: f64,
    pub newton_tol: f64,
}

impl Default for SolverSection {
    fn default() -> Self {
        let d = SolverOptions::default();
        Self {
            method: MethodTag::Pg,
            max_iters: d.max_iters,
            grad_tol: d.grad_tol,
            barrier_init: d.barrier_init,
            barrier_growth: d.barrier_growth,
            barrier_gap: d.barrier_gap,
            newton_tol: d.newton_tol,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub eta: f64,
    pub eps_stop: f64,
    pub max_steps: usize,
    pub threshold_eps: f64,
}

impl Default for SweepSection {
    fn default() -> Self {
        let d = SweepConfig::default();
        Self {
            eta: d.eta,
            eps_stop: d.eps_stop,
            max_steps: d.max_steps,
            threshold_eps: d.threshold_eps,
        }
    }
}

/// Either the word "sweep" or a fixed regularization weight.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RegCfg {
    Fixed(f64),
    Named(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitSection {
    pub reg: RegCfg,
    pub scale_penalty: bool,
    pub threshold_eps: f64,
    pub merge_dist: f64,
    pub debias: bool,
    pub repair_eps: f64,
}

impl Default for FitSection {
    fn default() -> Self {
        let d = FitOptions::default();
        Self {
            reg: RegCfg::Named("sweep".into()),
            scale_penalty: d.scale_penalty,
            threshold_eps: d.threshold_eps,
            merge_dist: d.merge_dist,
            debias: d.debias,
            repair_eps: d.repair_eps,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StreamMode {
    Sequential,
    Rolling,
}

/// Either a policy name ("sweep-then-fixed", "resweep") or a fixed weight.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RegPolicyCfg {
    Fixed(f64),
    Named(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StreamSection {
    pub mode: StreamMode,
    /// Window size in samples; only read in rolling mode.
    pub window: usize,
    pub refit_every: usize,
    pub warmup_samples: usize,
    pub reg_policy: RegPolicyCfg,
    /// Sweep cadence in refits; only read under the "resweep" policy.
    pub resweep_every: usize,
    pub warm_start: bool,
    /// Emit every k-th refit snapshot (the final one always).
    pub snapshot_every: usize,
}

impl Default for StreamSection {
    fn default() -> Self {
        Self {
            mode: StreamMode::Sequential,
            window: 100,
            refit_every: 1,
            warmup_samples: 2,
            reg_policy: RegPolicyCfg::Named("sweep-then-fixed".into()),
            resweep_every: 1,
            warm_start: true,
            snapshot_every: 1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IoSection {
    /// Directory all artifacts are written into.
    pub out_dir: PathBuf,
    /// Dictionary dump reused across runs when the path exists.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dict_cache: Option<PathBuf>,
}

impl Default for IoSection {
    fn default() -> Self {
        Self { out_dir: PathBuf::from("."), dict_cache: None }
    }
}

/// Read the file when given, otherwise start from defaults.
pub fn load(path: Option<&Path>) -> Result<RunConfig, Failure> {
    match path {
        None => Ok(RunConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Failure::Config(format!("cannot read {}: {e}", p.display())))?;
            toml::from_str(&text)
                .map_err(|e| Failure::Config(format!("{}: {e}", p.display())))
        }
    }
}

fn positive(name: &str, v: f64) -> Result<(), Failure> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Failure::Config(format!("{name} must be positive and finite, got {v}")))
    }
}

impl RunConfig {
    /// The effective configuration as a TOML document.
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), Failure> {
        self.build_grid()?;
        self.build_dict_config()?;
        if let Some(sigma) = self.dictionary.sigma {
            if self.dictionary.mode != DictMode::Gamma {
                return Err(Failure::Config("sigma only applies to the gamma dictionary".into()));
            }
            if sigma != self.grid.delta {
                return Err(Failure::Config(format!(
                    "gamma sigma must equal the grid step {}, got {sigma}",
                    self.grid.delta
                )));
            }
        }
        match &self.kernel.bandwidth {
            Bandwidth::Fixed(h) => positive("kernel.bandwidth", *h)?,
            Bandwidth::Named(s) if s == "auto" => {}
            Bandwidth::Named(s) => {
                return Err(Failure::Config(format!(
                    "kernel.bandwidth must be a width in seconds or \"auto\", got \"{s}\""
                )))
            }
        }
        if self.solver.max_iters == 0 {
            return Err(Failure::Config("solver.max_iters must be at least 1".into()));
        }
        positive("solver.grad_tol", self.solver.grad_tol)?;
        positive("solver.barrier_init", self.solver.barrier_init)?;
        positive("solver.barrier_gap", self.solver.barrier_gap)?;
        positive("solver.newton_tol", self.solver.newton_tol)?;
        if !(self.solver.barrier_growth > 1.0 && self.solver.barrier_growth.is_finite()) {
            return Err(Failure::Config(format!(
                "solver.barrier_growth must exceed 1, got {}",
                self.solver.barrier_growth
            )));
        }
        if !(self.sweep.eta > 0.0 && self.sweep.eta < 1.0) {
            return Err(Failure::Config(format!(
                "sweep.eta must lie in (0, 1), got {}",
                self.sweep.eta
            )));
        }
        positive("sweep.eps_stop", self.sweep.eps_stop)?;
        if self.sweep.max_steps == 0 {
            return Err(Failure::Config("sweep.max_steps must be at least 1".into()));
        }
        positive("sweep.threshold_eps", self.sweep.threshold_eps)?;
        match &self.fit.reg {
            RegCfg::Fixed(w) if w.is_finite() && *w >= 0.0 => {}
            RegCfg::Fixed(w) => {
                return Err(Failure::Config(format!(
                    "fit.reg must be a non-negative weight, got {w}"
                )))
            }
            RegCfg::Named(s) if s == "sweep" => {}
            RegCfg::Named(s) => {
                return Err(Failure::Config(format!(
                    "fit.reg must be a weight or \"sweep\", got \"{s}\""
                )))
            }
        }
        positive("fit.threshold_eps", self.fit.threshold_eps)?;
        if !(self.fit.merge_dist >= 0.0 && self.fit.merge_dist.is_finite()) {
            return Err(Failure::Config(format!(
                "fit.merge_dist must be non-negative, got {}",
                self.fit.merge_dist
            )));
        }
        positive("fit.repair_eps", self.fit.repair_eps)?;
        match &self.streaming.reg_policy {
            RegPolicyCfg::Fixed(w) if w.is_finite() && *w >= 0.0 => {}
            RegPolicyCfg::Fixed(w) => {
                return Err(Failure::Config(format!(
                    "streaming.reg_policy must be a non-negative weight, got {w}"
                )))
            }
            RegPolicyCfg::Named(s) if s == "sweep-then-fixed" || s == "resweep" => {}
            RegPolicyCfg::Named(s) => {
                return Err(Failure::Config(format!(
                    "streaming.reg_policy must be a weight, \"sweep-then-fixed\", or \
                     \"resweep\", got \"{s}\""
                )))
            }
        }
        if self.streaming.snapshot_every == 0 {
            return Err(Failure::Config("streaming.snapshot_every must be at least 1".into()));
        }
        // cadence, warm-up, and window bounds are owned by the estimator
        self.build_stream_config(false).map(drop)
    }

    pub fn build_grid(&self) -> Result<TimeGrid, Failure> {
        TimeGrid::new(
            self.grid.delta,
            self.grid.n_support,
            self.grid.m_locations,
            self.grid.location_offset,
        )
        .map_err(|e| Failure::Config(format!("grid: {e}")))
    }

    pub fn build_dict_config(&self) -> Result<DictionaryConfig, Failure> {
        let cfg = DictionaryConfig::new(self.dictionary.scales.clone())
            .and_then(|c| c.with_eps_tail(self.dictionary.eps_tail))
            .map_err(|e| Failure::Config(format!("dictionary: {e}")))?;
        Ok(if self.dictionary.corrected { cfg } else { cfg.uncorrected() })
    }

    /// Build the configured dictionary from scratch.
    pub fn build_dictionary(&self) -> Result<Dictionary, Failure> {
        let grid = self.build_grid()?;
        let cfg = self.build_dict_config()?;
        let built = match self.dictionary.mode {
            DictMode::Gamma => {
                let sigma = self.dictionary.sigma.unwrap_or(self.grid.delta);
                Dictionary::build_gamma(&grid, sigma, &cfg)
            }
            DictMode::Ml => Dictionary::build_ml(&grid, &cfg),
        };
        built.map_err(|e| Failure::Config(format!("dictionary: {e}")))
    }

    /// Load the cached dump when configured and present, else build fresh.
    pub fn obtain_dictionary(&self) -> Result<Arc<Dictionary>, Failure> {
        if let Some(path) = &self.io.dict_cache {
            if path.exists() {
                let d = Dictionary::read_csv(path)
                    .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
                self.check_cached(&d, path)?;
                return Ok(Arc::new(d));
            }
        }
        Ok(Arc::new(self.build_dictionary()?))
    }

    /// A cached dictionary must describe exactly what the config would build.
    fn check_cached(&self, d: &Dictionary, path: &Path) -> Result<(), Failure> {
        let mismatch = |what: &str| {
            Err(Failure::Config(format!(
                "dictionary cache {} does not match the configuration ({what}); \
                 rebuild it with dict-cache",
                path.display()
            )))
        };
        let want_kind = match self.dictionary.mode {
            DictMode::Gamma => DictionaryKind::Gamma,
            DictMode::Ml => DictionaryKind::MittagLeffler,
        };
        if d.kind() != want_kind {
            return mismatch("family");
        }
        if *d.grid() != self.build_grid()? {
            return mismatch("grid");
        }
        let mut have: Vec<f64> = Vec::new();
        for c in d.columns() {
            if !have.contains(&c.scale) {
                have.push(c.scale);
            }
        }
        let mut want = self.dictionary.scales.clone();
        have.sort_by(f64::total_cmp);
        want.sort_by(f64::total_cmp);
        if have != want {
            return mismatch("scales");
        }
        if d.eps_tail() != self.dictionary.eps_tail {
            return mismatch("tail bound");
        }
        if d.is_corrected() != self.dictionary.corrected {
            return mismatch("correction");
        }
        Ok(())
    }

    pub fn build_solver_options(&self) -> SolverOptions {
        SolverOptions {
            method: match self.solver.method {
                MethodTag::Pg => SolverMethod::ProjectedGradient,
                MethodTag::Ip => SolverMethod::InteriorPoint,
            },
            max_iters: self.solver.max_iters,
            grad_tol: self.solver.grad_tol,
            barrier_init: self.solver.barrier_init,
            barrier_growth: self.solver.barrier_growth,
            barrier_gap: self.solver.barrier_gap,
            newton_tol: self.solver.newton_tol,
            warm_start: None,
            track_objective: false,
        }
    }

    pub fn build_sweep_config(&self) -> SweepConfig {
        SweepConfig {
            eta: self.sweep.eta,
            eps_stop: self.sweep.eps_stop,
            max_steps: self.sweep.max_steps,
            threshold_eps: self.sweep.threshold_eps,
        }
    }

    pub fn build_fit_options(&self) -> FitOptions {
        FitOptions {
            reg: match &self.fit.reg {
                RegCfg::Fixed(w) => RegChoice::Fixed(*w),
                RegCfg::Named(_) => RegChoice::Sweep,
            },
            scale_penalty: self.fit.scale_penalty,
            threshold_eps: self.fit.threshold_eps,
            merge_dist: self.fit.merge_dist,
            debias: self.fit.debias,
            repair_eps: self.fit.repair_eps,
            solver: self.build_solver_options(),
            sweep: self.build_sweep_config(),
        }
    }

    /// Assemble the streaming configuration; `cold` restarts every refit
    /// from scratch with a fresh sweep, the no-reuse baseline.
    pub fn build_stream_config(&self, cold: bool) -> Result<StreamConfig, Failure> {
        let s = &self.streaming;
        let cfg = StreamConfig {
            mode: match s.mode {
                StreamMode::Sequential => UpdateMode::Sequential,
                StreamMode::Rolling => UpdateMode::Rolling { window: s.window },
            },
            refit_every: s.refit_every,
            warmup_samples: s.warmup_samples,
            reg: if cold {
                RegPolicy::ResweepEvery(1)
            } else {
                match &s.reg_policy {
                    RegPolicyCfg::Fixed(w) => RegPolicy::Fixed(*w),
                    RegPolicyCfg::Named(n) if n == "resweep" => {
                        RegPolicy::ResweepEvery(s.resweep_every)
                    }
                    RegPolicyCfg::Named(_) => RegPolicy::SweepThenFixed,
                }
            },
            fit: self.build_fit_options(),
            warm_start: if cold { false } else { s.warm_start },
        };
        cfg.validate().map_err(|e| Failure::Config(format!("streaming: {e}")))?;
        Ok(cfg)
    }
}
