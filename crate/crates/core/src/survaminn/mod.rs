//! Multiple-instance survival network: an autoencoder compresses each
//! tumor's feature vector, a regressor on the bottleneck scores each tumor,
//! and the scores are pooled into one patient hazard trained with the Cox
//! partial likelihood. The objective shifts from reconstruction to survival
//! over the epochs.

mod loss;
mod model;
mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use loss::{
    alpha_schedule, batch_gradients, batch_loss, coxph_loss, coxph_loss_grad, mse_loss, pool, pool_grad, total_loss,
    BatchLoss, CoxLoss,
};
pub use model::{Architecture, BagForward, Dense, DropoutMask, ModelParams, TumorForward};
pub use train::{
    late_fuse, load_checkpoint, predict_hazard, save_checkpoint, train, write_history_csv, AdamW, EpochRecord,
    TrainConfig, TrainedModel,
};

use crate::survstats::SurvivalLabel;
use crate::volgrid::Phase;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("bag for patient `{0}` has no tumors")]
    EmptyBag(String),
    #[error("{0} pooling needs per-tumor sizes")]
    MissingSizes(PoolingKind),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("dataset has no events")]
    NoEvents,
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("need at least {0} epochs")]
    TooFewEpochs(usize),
    #[error("both phases are empty")]
    NoPhases,
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint format: {0}")]
    Format(String),
}

/// How tumor scores are combined into a patient score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolingKind {
    Mean,
    /// Score of the tumor with the largest volume.
    Largest,
    /// Score of the tumor with the longest axial diameter.
    LargestDiameter,
    Max,
    /// Log-sum-exp.
    Lse,
}

impl PoolingKind {
    pub const ALL: [PoolingKind; 5] =
        [PoolingKind::Mean, PoolingKind::Largest, PoolingKind::LargestDiameter, PoolingKind::Max, PoolingKind::Lse];

    pub fn name(self) -> &'static str {
        match self {
            PoolingKind::Mean => "mean",
            PoolingKind::Largest => "largest",
            PoolingKind::LargestDiameter => "largest_diameter",
            PoolingKind::Max => "max",
            PoolingKind::Lse => "lse",
        }
    }
}

impl std::fmt::Display for PoolingKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for PoolingKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PoolingKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown pooling `{s}`"))
    }
}

/// One patient's tumors in one phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TumorFeatureBag {
    pub patient_id: String,
    pub phase: Phase,
    /// `T` rows of `d` normalised features.
    pub features: Vec<Vec<f64>>,
    /// Per-tumor volume in mm³.
    pub volumes: Vec<f64>,
    /// Per-tumor longest axial diameter in mm.
    #[serde(default)]
    pub diameters: Vec<f64>,
}

impl TumorFeatureBag {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn validate(&self, d: usize) -> Result<(), ModelError> {
        if self.features.is_empty() {
            return Err(ModelError::EmptyBag(self.patient_id.clone()));
        }
        if let Some(row) = self.features.iter().find(|r| r.len() != d) {
            return Err(ModelError::Shape(format!(
                "patient `{}`: tumor has {} features, model expects {d}",
                self.patient_id,
                row.len()
            )));
        }
        if self.features.iter().flatten().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite(format!("features of `{}`", self.patient_id)));
        }
        Ok(())
    }

    /// Sizes used by the size-based pooling kinds.
    pub fn sizes(&self, kind: PoolingKind) -> Option<&[f64]> {
        let s = match kind {
            PoolingKind::Largest => &self.volumes,
            PoolingKind::LargestDiameter => &self.diameters,
            _ => return None,
        };
        (s.len() == self.features.len()).then_some(s.as_slice())
    }
}

/// Training examples: one bag and its label per patient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalDataset {
    pub bags: Vec<TumorFeatureBag>,
    pub labels: Vec<SurvivalLabel>,
}

impl SurvivalDataset {
    pub fn new(bags: Vec<TumorFeatureBag>, labels: Vec<SurvivalLabel>) -> Result<Self, ModelError> {
        if bags.len() != labels.len() {
            return Err(ModelError::Shape(format!("{} bags vs {} labels", bags.len(), labels.len())));
        }
        Ok(Self { bags, labels })
    }

    pub fn len(&self) -> usize {
        self.bags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bags.is_empty()
    }

    pub fn subset(&self, idx: &[usize]) -> SurvivalDataset {
        SurvivalDataset {
            bags: idx.iter().map(|&i| self.bags[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    pub fn feature_dim(&self) -> Option<usize> {
        self.bags.iter().flat_map(|b| b.features.first()).map(|r| r.len()).next()
    }
}
