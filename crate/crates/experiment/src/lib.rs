//! Experiment orchestration: synthetic jaws, dataset ingestion, seeded
//! splits, the per-resolution train/evaluate/upsample sweep and reports.

pub mod config;
pub mod ingest;
pub mod report;
pub mod split;
pub mod sweep;
pub mod synth;

use meshres_core::decimate::DecimateError;
use meshres_core::features::FeatureError;
use meshres_core::upsample::TransferError;
use meshres_core::MeshError;
use meshres_model::ModelError;
use thiserror::Error;

pub use config::ExperimentConfig;
pub use ingest::{ingest_dataset, write_dataset, IngestReport, Scan};
pub use report::{emit_report, ReportFormat};
pub use split::{split, Split};
pub use sweep::{run_sweep, RunRecord, SweepOutcome};
pub use synth::{synth_generate, synth_jaw, SynthJawSpec};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid experiment configuration: {0}")]
    Config(String),
    #[error("dataset has {n} surfaces; at least 5 are needed to split")]
    DatasetTooSmall { n: usize },
    #[error("no usable scans in {root} ({skipped} skipped, {failed} failed)")]
    NoUsableScans { root: String, skipped: usize, failed: usize },
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Decimate(#[from] DecimateError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Transfer(#[from] TransferError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metrics(#[from] meshres_core::metrics::MetricsError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
