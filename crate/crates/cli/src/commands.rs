//! The six subcommands: batch fit, streaming replay, synthetic generation,
//! the EM reference fit, the regularization path trace, and the dictionary
//! cache builder. Each writes its artifacts into the configured directory
//! and keeps timing out of them, so artifacts are reproducible bit for bit.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use chrono::{DateTime, Duration as ChronoDuration, SecondsFormat};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use ttmix_core::em::{fit_em, EmOptions, EmStop};
use ttmix_core::fit::penalty_scaling;
use ttmix_core::parzen::{parzen_batch, silverman_bandwidth};
use ttmix_core::regularization::sweep;
use ttmix_core::streaming::{RefitStats, Snapshot, StreamConfig};
use ttmix_core::synthetic::{
    sample_gauss_laplace_seeded, sample_travel_times, GaussLaplaceSpec, TrafficParams,
};
use ttmix_core::{
    fit_density, Dictionary, KernelMatrix, KernelSpec, LassoProblem, StreamEstimator, TimeGrid,
};

use crate::config::{Bandwidth, RunConfig};
use crate::io::{
    self, ComponentDoc, InputData, MetricsDoc, ModelDoc, RepairDoc, Row,
};
use crate::{Failure, Generator};

fn write_err(path: &Path, e: std::io::Error) -> Failure {
    Failure::Io(format!("cannot write {}: {e}", path.display()))
}

fn ensure_out_dir(cfg: &RunConfig) -> Result<PathBuf, Failure> {
    let dir = cfg.io.out_dir.clone();
    std::fs::create_dir_all(&dir).map_err(|e| write_err(&dir, e))?;
    Ok(dir)
}

/// Fixed width from the config, or the plug-in rule on the samples.
fn resolve_bandwidth(cfg: &RunConfig, samples: &[f64]) -> Result<f64, Failure> {
    match cfg.kernel.bandwidth {
        Bandwidth::Fixed(h) => Ok(h),
        _ => silverman_bandwidth(samples, cfg.grid.delta)
            .map_err(|e| Failure::Input(format!("bandwidth selection: {e}"))),
    }
}

struct Smoothed {
    grid: TimeGrid,
    p_hat: ndarray::Array1<f64>,
    bandwidth: f64,
}

/// Shared batch front half: grid, kernel, smoothed density.
fn smooth_batch(cfg: &RunConfig, samples: &[f64]) -> Result<Smoothed, Failure> {
    let grid = cfg.build_grid()?;
    let bandwidth = resolve_bandwidth(cfg, samples)?;
    let km = KernelMatrix::build(&grid, KernelSpec { bandwidth });
    let p_hat =
        parzen_batch(samples, &km).map_err(|e| Failure::Input(format!("smoothing: {e}")))?;
    Ok(Smoothed { grid, p_hat, bandwidth })
}

fn batch_samples(input: &Path) -> Result<(InputData, Vec<f64>), Failure> {
    let data = io::read_input(input)?;
    let samples = data.travel_times();
    if samples.len() < 2 {
        return Err(Failure::Input(format!(
            "need at least 2 samples, got {}",
            samples.len()
        )));
    }
    Ok((data, samples))
}

/// Batch fit: smooth, select, solve, clean up, repair, write artifacts.
pub fn fit(cfg: &RunConfig, input: &Path) -> Result<(), Failure> {
    let t0 = Instant::now();
    let (_, samples) = batch_samples(input)?;
    let dict = cfg.obtain_dictionary()?;
    let sm = smooth_batch(cfg, &samples)?;
    let opts = cfg.build_fit_options();
    let out = fit_density(&dict, &sm.p_hat, &opts, None)
        .map_err(|e| Failure::Input(format!("fit: {e}")))?;

    let dir = ensure_out_dir(cfg)?;
    let metrics = MetricsDoc {
        samples: samples.len(),
        bandwidth_s: sm.bandwidth,
        reg_weight: out.model.reg_weight,
        support_size: out.model.components.len(),
        objective: out.solution.objective,
        rmse_to_target: out.rmse_to_target,
        iterations: out.solution.iterations,
        converged: out.solution.converged,
        dictionary_id: dict.id(),
    };
    let model_path = dir.join("model.json");
    io::write_json(&model_path, &ModelDoc::new(&sm.grid, &out.model, metrics))
        .map_err(|e| write_err(&model_path, e))?;
    let density_path = dir.join("density.csv");
    io::write_density_csv(&density_path, &sm.grid, &sm.p_hat, &out.fitted)
        .map_err(|e| write_err(&density_path, e))?;
    let mut wrote = vec!["model.json", "density.csv"];
    if let Some(report) = &out.sweep {
        let sweep_path = dir.join("sweep.csv");
        report
            .write_csv(&sweep_path, sm.grid.n_support())
            .map_err(|e| write_err(&sweep_path, e))?;
        wrote.push("sweep.csv");
    }

    println!("fit: {} samples, bandwidth {:.4} s, dictionary {}", samples.len(), sm.bandwidth, dict.id());
    println!(
        "fit: w {:.6e}, {} components, rmse-to-target {:.4e}, {} iterations, converged {}",
        out.model.reg_weight,
        out.model.components.len(),
        out.rmse_to_target,
        out.solution.iterations,
        out.solution.converged
    );
    println!("fit: wrote {} in {} ({} ms)", wrote.join(", "), dir.display(), t0.elapsed().as_millis());
    if !out.solution.converged {
        return Err(Failure::NonConvergence(
            "solver hit its iteration cap before reaching tolerance; artifacts are \
             written and flagged converged=false"
                .into(),
        ));
    }
    Ok(())
}

/// Trace the regularization path and write it as a plot-ready CSV.
pub fn sweep_cmd(cfg: &RunConfig, input: &Path) -> Result<(), Failure> {
    let t0 = Instant::now();
    let (_, samples) = batch_samples(input)?;
    let dict = cfg.obtain_dictionary()?;
    let sm = smooth_batch(cfg, &samples)?;
    let mut problem = LassoProblem::new(&dict, sm.p_hat.clone(), 0.0)
        .map_err(|e| Failure::Input(format!("sweep: {e}")))?;
    let opts = cfg.build_fit_options();
    if let Some(scaling) = penalty_scaling(&dict, &opts) {
        problem = problem
            .with_scaling(scaling)
            .map_err(|e| Failure::Input(format!("sweep: {e}")))?;
    }
    let report = sweep(&problem, &opts.solver, &opts.sweep)
        .map_err(|e| Failure::Input(format!("sweep: {e}")))?;

    let dir = ensure_out_dir(cfg)?;
    let path = dir.join("sweep.csv");
    report.write_csv(&path, sm.grid.n_support()).map_err(|e| write_err(&path, e))?;

    let sel = report.selected_step();
    println!(
        "sweep: {} steps from w {:.6e}, selected w {:.6e} with support {}",
        report.steps.len(),
        report.w_initial,
        sel.w,
        sel.support_size
    );
    println!("sweep: wrote sweep.csv in {} ({} ms)", dir.display(), t0.elapsed().as_millis());
    if !report.selected_solution.converged {
        return Err(Failure::NonConvergence(
            "selected path step hit the iteration cap; sweep.csv is written".into(),
        ));
    }
    Ok(())
}

/// Generate seeded samples in the ingestion schema.
pub fn synth(
    cfg: &RunConfig,
    generator: Generator,
    n: usize,
    start: &str,
    period_s: f64,
    links: usize,
) -> Result<(), Failure> {
    if n == 0 {
        return Err(Failure::Config("--n must be at least 1".into()));
    }
    if !(period_s > 0.0 && period_s.is_finite()) {
        return Err(Failure::Config(format!("--period-s must be positive, got {period_s}")));
    }
    let start = DateTime::parse_from_rfc3339(start)
        .map_err(|e| Failure::Config(format!("--start: bad timestamp '{start}': {e}")))?;

    let times = match generator {
        Generator::GaussLaplace => {
            sample_gauss_laplace_seeded(&GaussLaplaceSpec::default(), n, cfg.seed)
        }
        Generator::Traffic => sample_travel_times(&TrafficParams::default(), n, cfg.seed),
    }
    .map_err(|e| Failure::Config(format!("generator: {e}")))?;

    let rows: Vec<Row> = times
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let at = start + ChronoDuration::milliseconds((i as f64 * period_s * 1000.0).round() as i64);
            Row {
                timestamp: Some(at.to_rfc3339_opts(SecondsFormat::Millis, true)),
                parsed: Some(at),
                travel_time_s: t,
                link: (links > 0).then(|| format!("link{}", i % links)),
            }
        })
        .collect();

    let dir = ensure_out_dir(cfg)?;
    let path = dir.join("samples.csv");
    io::write_samples_csv(&path, &rows, links > 0).map_err(|e| write_err(&path, e))?;
    println!(
        "synth: {n} samples ({:?}, seed {}) every {period_s} s from {} -> {}",
        generator,
        cfg.seed,
        rows[0].timestamp.as_deref().unwrap_or_default(),
        path.display()
    );
    Ok(())
}

/// Diagnostics of the EM reference fit; mirrors the sparse model schema
/// with a kernel tag.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmMetricsDoc {
    pub samples: usize,
    pub bandwidth_s: f64,
    pub log_likelihood: f64,
    pub ll_best_restart: f64,
    pub rmse_grid: f64,
    pub iterations: usize,
    pub restarts: usize,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmModelDoc {
    pub grid: TimeGrid,
    pub kernel: String,
    pub components: Vec<ComponentDoc>,
    pub repair: Option<RepairDoc>,
    pub metrics: EmMetricsDoc,
}

/// Fit a Gaussian mixture by EM as the reference comparison.
pub fn em(
    cfg: &RunConfig,
    input: &Path,
    k: usize,
    restarts: usize,
    max_iters: usize,
    stop: EmStop,
) -> Result<(), Failure> {
    let t0 = Instant::now();
    let (_, samples) = batch_samples(input)?;
    let sm = smooth_batch(cfg, &samples)?;
    let opts = EmOptions { restarts, max_iters, stop, seed: cfg.seed, ..Default::default() };
    let mix = fit_em(&samples, k, &sm.grid, sm.p_hat.view(), &opts)
        .map_err(|e| Failure::Input(format!("em: {e}")))?;

    let dir = ensure_out_dir(cfg)?;
    let doc = EmModelDoc {
        grid: sm.grid.clone(),
        kernel: mix.kernel.clone(),
        components: mix
            .components
            .iter()
            .map(|c| ComponentDoc { t_s: c.mean, sigma_s: c.variance.sqrt(), weight: c.weight })
            .collect(),
        repair: None,
        metrics: EmMetricsDoc {
            samples: samples.len(),
            bandwidth_s: sm.bandwidth,
            log_likelihood: mix.log_likelihood,
            ll_best_restart: mix.ll_best_restart,
            rmse_grid: mix.rmse,
            iterations: mix.iterations,
            restarts: mix.restarts_used,
            warnings: mix.warnings.clone(),
        },
    };
    let model_path = dir.join("em_model.json");
    io::write_json(&model_path, &doc).map_err(|e| write_err(&model_path, e))?;
    let density_path = dir.join("em_density.csv");
    io::write_density_csv(&density_path, &sm.grid, &sm.p_hat, &mix.masses_on_grid(&sm.grid))
        .map_err(|e| write_err(&density_path, e))?;

    println!(
        "em: k {k}, {} restarts, log-likelihood {:.4} (best {:.4}), grid rmse {:.4e}, {} iterations",
        restarts, mix.log_likelihood, mix.ll_best_restart, mix.rmse, mix.iterations
    );
    for w in &mix.warnings {
        println!("em: warning: {w}");
    }
    println!(
        "em: wrote em_model.json, em_density.csv in {} ({} ms)",
        dir.display(),
        t0.elapsed().as_millis()
    );
    Ok(())
}

/// Build the configured dictionary and dump it for reuse.
pub fn dict_cache(cfg: &RunConfig, out: Option<PathBuf>) -> Result<(), Failure> {
    let t0 = Instant::now();
    let path = match out.or_else(|| cfg.io.dict_cache.clone()) {
        Some(p) => p,
        None => ensure_out_dir(cfg)?.join("dictionary.csv"),
    };
    let dict = cfg.build_dictionary()?;
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| write_err(parent, e))?;
        }
    }
    dict.write_csv(&path).map_err(|e| write_err(&path, e))?;
    println!(
        "dict-cache: {} ({} x {}) -> {} ({} ms)",
        dict.id(),
        dict.n_rows(),
        dict.n_cols(),
        path.display(),
        t0.elapsed().as_millis()
    );
    Ok(())
}

/// One emitted snapshot: the model document plus stream position.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SnapshotLine {
    pub link: Option<String>,
    pub timestamp: Option<String>,
    pub samples_seen: usize,
    pub refits: usize,
    pub reg_weight: f64,
    pub grid: TimeGrid,
    pub components: Vec<ComponentDoc>,
    pub repair: Option<RepairDoc>,
}

impl SnapshotLine {
    fn new(link: &Option<String>, grid: &TimeGrid, s: &Snapshot) -> Self {
        Self {
            link: link.clone(),
            timestamp: s.timestamp.clone(),
            samples_seen: s.samples_seen,
            refits: s.refits,
            reg_weight: s.model.reg_weight,
            grid: grid.clone(),
            components: s.model.components.iter().map(ComponentDoc::from).collect(),
            repair: s.model.repair.as_ref().map(RepairDoc::from),
        }
    }
}

struct LinkReport {
    link: Option<String>,
    samples: usize,
    stats: RefitStats,
    wall: Duration,
    lines: Vec<String>,
}

fn link_label(link: &Option<String>) -> &str {
    link.as_deref().unwrap_or("-")
}

fn run_link(
    link: Option<String>,
    rows: Vec<Row>,
    dict: Arc<Dictionary>,
    km: Arc<KernelMatrix>,
    scfg: StreamConfig,
    snapshot_every: usize,
) -> Result<LinkReport, Failure> {
    let t0 = Instant::now();
    let mut est = StreamEstimator::new(dict, km, scfg)
        .map_err(|e| Failure::Config(format!("streaming: {e}")))?;
    let grid = est.dictionary().grid().clone();
    let mut lines = Vec::new();
    let mut pending: Option<SnapshotLine> = None;
    for row in &rows {
        let snap = est
            .ingest(row.travel_time_s, row.timestamp.as_deref())
            .map_err(|e| Failure::Input(format!("link {}: {e}", link_label(&link))))?;
        if let Some(s) = snap {
            let line = SnapshotLine::new(&link, &grid, s);
            if (s.refits - 1) % snapshot_every == 0 {
                lines.push(serde_json::to_string(&line).expect("snapshot serializes"));
                pending = None;
            } else {
                pending = Some(line);
            }
        }
    }
    // the final state is always worth keeping
    if let Some(line) = pending {
        lines.push(serde_json::to_string(&line).expect("snapshot serializes"));
    }
    Ok(LinkReport {
        link,
        samples: rows.len(),
        stats: *est.stats(),
        wall: t0.elapsed(),
        lines,
    })
}

/// Replay a timestamped CSV through one estimator per link.
pub fn stream(cfg: &RunConfig, input: &Path, sort: bool, cold: bool) -> Result<(), Failure> {
    let t0 = Instant::now();
    let data = io::read_input(input)?;
    if !data.has_timestamps {
        return Err(Failure::Input(
            "stream requires the timestamp_iso8601 column".into(),
        ));
    }
    if data.rows.is_empty() {
        return Err(Failure::Input("empty stream".into()));
    }
    let mut rows = data.rows;
    if sort {
        io::sort_rows(&mut rows);
    } else {
        io::ensure_ordered(&rows)?;
    }

    let samples: Vec<f64> = rows.iter().map(|r| r.travel_time_s).collect();
    let grid = cfg.build_grid()?;
    let dict = cfg.obtain_dictionary()?;
    let bandwidth = resolve_bandwidth(cfg, &samples)?;
    let km = Arc::new(KernelMatrix::build(&grid, KernelSpec { bandwidth }));
    let scfg = cfg.build_stream_config(cold)?;

    // per-link estimators; BTreeMap fixes the output order regardless of
    // worker scheduling
    let mut by_link: BTreeMap<Option<String>, Vec<Row>> = BTreeMap::new();
    for row in rows {
        by_link.entry(row.link.clone()).or_default().push(row);
    }
    let groups: Vec<(Option<String>, Vec<Row>)> = by_link.into_iter().collect();
    let reports: Vec<LinkReport> = groups
        .into_par_iter()
        .map(|(link, rows)| {
            run_link(link, rows, dict.clone(), km.clone(), scfg.clone(), cfg.streaming.snapshot_every)
        })
        .collect::<Result<_, _>>()?;

    let dir = ensure_out_dir(cfg)?;
    let path = dir.join("snapshots.jsonl");
    let mut body = String::new();
    for r in &reports {
        for line in &r.lines {
            body.push_str(line);
            body.push('\n');
        }
    }
    std::fs::write(&path, body).map_err(|e| write_err(&path, e))?;

    let mut tot = RefitStats::default();
    let mut tot_samples = 0;
    for r in &reports {
        println!(
            "link {}: samples={} accepted={} out_of_range={} refits={} iterations={} \
             sweep_iterations={} wall_ms={}",
            link_label(&r.link),
            r.samples,
            r.samples - r.stats.out_of_range,
            r.stats.out_of_range,
            r.stats.refits,
            r.stats.total_iterations,
            r.stats.sweep_iterations,
            r.wall.as_millis()
        );
        tot.refits += r.stats.refits;
        tot.total_iterations += r.stats.total_iterations;
        tot.sweep_iterations += r.stats.sweep_iterations;
        tot.out_of_range += r.stats.out_of_range;
        tot_samples += r.samples;
    }
    println!(
        "stream totals: links={} samples={} refits={} iterations={} sweep_iterations={} \
         snapshots={} wall_ms={}",
        reports.len(),
        tot_samples,
        tot.refits,
        tot.total_iterations,
        tot.sweep_iterations,
        reports.iter().map(|r| r.lines.len()).sum::<usize>(),
        t0.elapsed().as_millis()
    );
    Ok(())
}
