//! Orchestration: run configuration, label completion, the end-to-end
//! batch run with its manifest, and the HTTP service used by the viewer.
//!
//! Data root layout:
//!
//! ```text
//! <data_root>/patients.csv            id,time,event[,...]
//! <data_root>/images/<pid>_<phase>.nii[.gz] | .json (raw sidecar)
//! <data_root>/labels/<case>.nii[.gz]  optional, possibly partial
//! ```

mod config;
pub mod jobs;
mod labels;
mod run;
pub mod server;
mod study;

use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use thiserror::Error;

pub use config::{CvPlan, FeatureToggles, RunConfig, SeedPrompt, ServerConfig};
pub use labels::{
    complete_labels, merge_structures, samonai_runner, CaseInput, CasePlan, CompletedCase, CompletionReport,
    LabelCompletionPlan, Provenance, STRUCTURES,
};
pub use run::{
    cross_validate, discover_cases, mean_c_index, read_patients, run_end_to_end, run_until, Artifact, CaseFile, CvRecord,
    Exclusion, PatientBags, RunManifest, Stage, StageRecord,
};
pub use study::{simulate_study, StudySpec};

use crate::evalkit::EvalError;
use crate::promptseg::SegmentError;
use crate::radiomics::RadiomicsError;
use crate::samonai::SamonaiError;
use crate::survaminn::ModelError;
use crate::survstats::StatsError;
use crate::synthgen::SynthError;
use crate::volgrid::VolumeError;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Box<PipelineError>,
        /// Manifest of the stages that completed before the failure.
        manifest: Box<RunManifest>,
    },
    #[error("invalid input: {0}")]
    Input(String),
    #[error("i/o on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Volume(#[from] VolumeError),
    #[error(transparent)]
    Segment(#[from] SegmentError),
    #[error(transparent)]
    Samonai(#[from] SamonaiError),
    #[error(transparent)]
    Radiomics(#[from] RadiomicsError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Synth(#[from] SynthError),
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io { path: path.display().to_string(), source }
}

/// Lower-case hex SHA-256.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String, PipelineError> {
    Ok(sha256_hex(&std::fs::read(path).map_err(io_err(path))?))
}

pub(crate) fn create_dir(path: &Path) -> Result<PathBuf, PipelineError> {
    std::fs::create_dir_all(path).map_err(io_err(path))?;
    Ok(path.to_path_buf())
}
