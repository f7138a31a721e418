//! Ratio-sweep orchestration, report emission and figures.

use std::path::PathBuf;

use thiserror::Error;

use crate::corpus::CorpusError;

pub mod config;
pub mod plot;
pub mod report;
pub mod run;

pub use config::{ExperimentConfig, TopK};
pub use plot::{emit_figures, plot_confusion, plot_lmi, render_confusion, render_lmi};
pub use report::{emit_report, DiagnosticsReport};
pub use run::{load_inputs, run_experiment, run_with_inputs, Inputs};

/// Overrides the configured output directory.
pub const OUT_DIR_ENV: &str = "FSDIAG_OUT_DIR";
/// Worker threads for the sweep; defaults to one per core.
pub const WORKERS_ENV: &str = "FSDIAG_WORKERS";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("dataset {path}: {source}")]
    Dataset {
        path: PathBuf,
        #[source]
        source: CorpusError,
    },
    #[error("invalid report: {0}")]
    Report(String),
    #[error("cannot plot: {0}")]
    Plot(String),
}

pub type Result<T> = std::result::Result<T, PipelineError>;

/// Worker count from [`WORKERS_ENV`], if set.
pub fn workers_from_env() -> Result<Option<usize>> {
    match std::env::var(WORKERS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(PipelineError::Config(format!(
                "{WORKERS_ENV} must be a positive integer, got `{v}`"
            ))),
        },
        Err(_) => Ok(None),
    }
}

/// Output directory from [`OUT_DIR_ENV`], if set and non-empty.
pub fn out_dir_from_env() -> Option<PathBuf> {
    std::env::var_os(OUT_DIR_ENV)
        .filter(|v| !v.is_empty())
        .map(PathBuf::from)
}
