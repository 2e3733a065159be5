use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{io_err, PipelineError};
use crate::evalkit::PostprocessConfig;
use crate::promptseg::{segmenter_by_name, PromptPoint};
use crate::radiomics::RadiomicsConfig;
use crate::samonai::PropagationConfig;
use crate::survaminn::{PoolingKind, TrainConfig};
use crate::volgrid::{Label, View};

/// Point prompt used to pseudo-label one structure of one case without a UI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedPrompt {
    pub case: String,
    pub structure: Label,
    pub view: View,
    pub index: usize,
    pub points: Vec<PromptPoint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CvPlan {
    pub folds: usize,
    pub repeats: usize,
}

impl Default for CvPlan {
    fn default() -> Self {
        Self { folds: 3, repeats: 5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureToggles {
    pub postprocess: bool,
    /// Drop tumors at or below the 1st percentile of cohort diameters.
    pub exclude_small: bool,
}

impl Default for FeatureToggles {
    fn default() -> Self {
        Self { postprocess: true, exclude_small: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServerConfig {
    pub addr: String,
    /// Concurrent propagation jobs.
    pub workers: usize,
    /// Directory of viewer assets served under `/`.
    pub static_dir: Option<PathBuf>,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self { addr: "127.0.0.1:8080".into(), workers: 2, static_dir: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub data_root: PathBuf,
    pub output_root: PathBuf,
    pub segmenter: String,
    pub samonai: PropagationConfig,
    pub radiomics: RadiomicsConfig,
    pub features: FeatureToggles,
    pub postprocess: PostprocessConfig,
    pub train: TrainConfig,
    pub cv: CvPlan,
    /// Poolings evaluated by cross-validation; the first is the primary one
    /// used for the statistics report.
    pub poolings: Vec<PoolingKind>,
    pub prompts: Vec<SeedPrompt>,
    /// Label shuffles of the randomization test (0 skips it).
    pub randomization_shuffles: usize,
    pub bootstrap_resamples: usize,
    pub seed: u64,
    pub server: ServerConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data_root: PathBuf::from("data"),
            output_root: PathBuf::from("out"),
            segmenter: "region-grow".into(),
            samonai: PropagationConfig::default(),
            radiomics: RadiomicsConfig::default(),
            features: FeatureToggles::default(),
            postprocess: PostprocessConfig::default(),
            train: TrainConfig::default(),
            cv: CvPlan::default(),
            poolings: vec![PoolingKind::Lse, PoolingKind::Mean, PoolingKind::Max],
            prompts: Vec::new(),
            randomization_shuffles: 0,
            bootstrap_resamples: 0,
            seed: 0,
            server: ServerConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<(), PipelineError> {
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(io_err(path))
    }

    /// Parameter checks that need no filesystem access.
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        segmenter_by_name(&self.segmenter).map_err(|e| PipelineError::Config(e.to_string()))?;
        self.samonai.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        self.train.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        if self.cv.folds < 2 || self.cv.repeats == 0 {
            return bad(format!("cross-validation needs >= 2 folds and >= 1 repeat, got {:?}", self.cv));
        }
        if self.poolings.is_empty() {
            return bad("at least one pooling is required".into());
        }
        if self.radiomics.bin_width <= 0.0 {
            return bad("bin width must be positive".into());
        }
        for p in &self.prompts {
            if p.structure == Label::Background {
                return bad(format!("prompt for case {} targets the background", p.case));
            }
        }
        Ok(())
    }

    /// Checks that every input the batch run reads exists.
    pub fn validate_paths(&self) -> Result<(), PipelineError> {
        for p in [self.data_root.clone(), self.data_root.join("images"), self.data_root.join("patients.csv")] {
            if !p.exists() {
                return Err(PipelineError::Config(format!("missing input path {}", p.display())));
            }
        }
        Ok(())
    }
}
