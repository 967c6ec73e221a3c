//! Configuration-driven experiment runner.
//!
//! A run evolves every disorder realization of every requested bound, writes
//! one CSV per observable (plus JSON sidecars for matrices) into the output
//! directory and records a manifest with checksums. Realizations run on the
//! current rayon pool and are reduced in index order, so the observable files
//! do not depend on the worker count.

pub mod config;
mod experiments;
pub mod output;
pub mod summary;

use std::time::{Instant, SystemTime, UNIX_EPOCH};

pub use config::{
    EvolutionMode, ExperimentConfig, ExperimentKind, GridSpec, InitialState, ShotSpec, Spacing,
    Subsystem, SubsystemPreset,
};
pub use experiments::bound_tag;
pub use output::{FileEntry, MatrixJson, RunManifest};
pub use summary::{logfit_entropy, quasi_steady_summary, LogFit, WindowSummary};

use crate::error::{Error, Result};

/// Run `cfg` on the current rayon pool and write its outputs.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunManifest> {
    cfg.validate()?;
    let started = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let clock = Instant::now();
    let mut out = output::RunOutput::create(cfg.output_dir())?;
    experiments::dispatch(cfg, &mut out)?;
    out.finish(cfg, started, clock.elapsed().as_secs_f64(), rayon::current_num_threads())
}

/// [`run_experiment`] on a dedicated pool of `workers` threads (all cores
/// when `None`).
pub fn run_with_workers(cfg: &ExperimentConfig, workers: Option<usize>) -> Result<RunManifest> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = workers {
        if w == 0 {
            return Err(Error::Config("--workers must be positive".into()));
        }
        builder = builder.num_threads(w);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot start worker pool: {e}")))?;
    pool.install(|| run_experiment(cfg))
}
