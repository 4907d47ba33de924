//! Command-line front end for sparse travel-time density estimation.
//!
//! Subcommands cover the whole workflow: `synth` makes seeded sample files,
//! `fit` runs the batch pipeline, `stream` replays a timestamped file
//! through the recursive estimator, `em` fits the Gaussian-mixture
//! reference, `sweep` traces the regularization path, and `dict-cache`
//! saves the dictionary for reuse. Configuration is layered: defaults,
//! then a TOML file, then flags; `--print-config` shows the result.

mod commands;
mod config;
mod io;

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use ttmix_core::em::EmStop;

use config::RegCfg;

/// A command failure carrying its process exit code.
#[derive(Debug)]
pub enum Failure {
    /// Exit 1: an environment problem such as an unwritable artifact path.
    Io(String),
    /// Exit 2: the input data cannot be used.
    Input(String),
    /// Exit 3: the configuration is invalid.
    Config(String),
    /// Exit 4: the solver stopped before reaching its tolerance; artifacts
    /// are still written, flagged as unconverged.
    NonConvergence(String),
}

impl Failure {
    fn code(&self) -> i32 {
        match self {
            Failure::Io(_) => 1,
            Failure::Input(_) => 2,
            Failure::Config(_) => 3,
            Failure::NonConvergence(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Io(m) | Failure::Input(m) | Failure::Config(m) | Failure::NonConvergence(m) => m,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Generator {
    /// Two-mode benchmark: a Gaussian and a Laplace component.
    GaussLaplace,
    /// Traffic-model travel times: pace at a Beta-distributed density.
    Traffic,
}

#[derive(Parser)]
#[command(name = "ttmix", version, about = "Sparse travel-time density estimation")]
struct Cli {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Print the effective configuration as TOML and exit.
    #[arg(long, global = true)]
    print_config: bool,
    /// Override the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the configured artifact directory.
    #[arg(long, global = true, value_name = "DIR")]
    out_dir: Option<PathBuf>,
    /// Override the configured dictionary cache path.
    #[arg(long, global = true, value_name = "FILE")]
    dict_cache: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Option<Cmd>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Batch-fit a sparse mixture to samples from a CSV file.
    Fit {
        input: PathBuf,
        /// Fix the regularization weight instead of sweeping.
        #[arg(long)]
        w: Option<f64>,
    },
    /// Replay a timestamped CSV through the streaming estimator.
    Stream {
        input: PathBuf,
        /// Sort rows by timestamp instead of rejecting unordered input.
        #[arg(long)]
        sort: bool,
        /// Restart every refit from scratch: the no-reuse baseline.
        #[arg(long)]
        cold: bool,
    },
    /// Generate seeded synthetic samples in the ingestion schema.
    Synth {
        #[arg(long, value_enum, default_value_t = Generator::GaussLaplace)]
        generator: Generator,
        /// Number of samples.
        #[arg(long, default_value_t = 2000)]
        n: usize,
        /// Timestamp of the first sample.
        #[arg(long, default_value = "2026-01-01T00:00:00Z")]
        start: String,
        /// Seconds between consecutive samples.
        #[arg(long, default_value_t = 2.7)]
        period_s: f64,
        /// Spread samples round-robin over this many links; 0 omits the
        /// link column.
        #[arg(long, default_value_t = 0)]
        links: usize,
    },
    /// Fit a Gaussian mixture by EM as a reference comparison.
    Em {
        input: PathBuf,
        /// Component count.
        #[arg(long, default_value_t = 2)]
        k: usize,
        #[arg(long, default_value_t = 10)]
        restarts: usize,
        #[arg(long, default_value_t = 500)]
        max_iters: usize,
        /// Stop a run when the grid error changes less than this.
        #[arg(long, conflicts_with = "stop_loglik")]
        stop_rmse: Option<f64>,
        /// Stop a run when the log-likelihood changes less than this.
        #[arg(long)]
        stop_loglik: Option<f64>,
    },
    /// Trace the regularization path and write it as CSV.
    Sweep { input: PathBuf },
    /// Build the configured dictionary and save it for reuse.
    DictCache {
        /// Dump path; defaults to the configured cache path, then to
        /// dictionary.csv in the artifact directory.
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), Failure> {
    let mut cfg = config::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = cli.out_dir {
        cfg.io.out_dir = dir;
    }
    if let Some(path) = cli.dict_cache {
        cfg.io.dict_cache = Some(path);
    }
    if let Some(Cmd::Fit { w: Some(w), .. }) = &cli.cmd {
        cfg.fit.reg = RegCfg::Fixed(*w);
    }
    cfg.validate()?;
    if cli.print_config {
        print!("{}", cfg.to_toml());
        return Ok(());
    }

    match cli.cmd {
        None => Err(Failure::Config("a subcommand is required; see --help".into())),
        Some(Cmd::Fit { input, .. }) => commands::fit(&cfg, &input),
        Some(Cmd::Stream { input, sort, cold }) => commands::stream(&cfg, &input, sort, cold),
        Some(Cmd::Synth { generator, n, start, period_s, links }) => {
            commands::synth(&cfg, generator, n, &start, period_s, links)
        }
        Some(Cmd::Em { input, k, restarts, max_iters, stop_rmse, stop_loglik }) => {
            let stop = match (stop_rmse, stop_loglik) {
                (_, Some(tol)) => EmStop::LogLikChange(tol),
                (Some(tol), None) => EmStop::RmseChange(tol),
                (None, None) => EmStop::RmseChange(1e-3),
            };
            commands::em(&cfg, &input, k, restarts, max_iters, stop)
        }
        Some(Cmd::Sweep { input }) => commands::sweep_cmd(&cfg, &input),
        Some(Cmd::DictCache { out }) => commands::dict_cache(&cfg, out),
    }
}

fn main() {
    env_logger::init();
    let cli = Cli::parse();
    std::process::exit(match run(cli) {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {}", f.message());
            f.code()
        }
    });
}
