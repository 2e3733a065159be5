//! Survival statistics: concordance, Cox regression with Wald and bootstrap
//! intervals, Kaplan-Meier with log-rank, rank-sum tests, label-permutation
//! testing and repeated k-fold splitting.

mod bootstrap;
mod cindex;
mod cox;
mod km;
mod resampling;
mod wilcoxon;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bootstrap::{bootstrap_hr, BootstrapInterval, BootstrapReport};
pub use cindex::{concordance_counts, concordance_index, ConcordanceCounts};
pub use cox::{coxph_fit, coxph_fit_matrix, partial_log_likelihood, CovariateFit, CoxOptions, FitReport};
pub use km::{kaplan_meier, logrank_test, median_dichotomize, KMCurve, LogRankResult};
pub use resampling::{randomization_test, repeated_kfold, RandomizationResult, SplitPlan};
pub use wilcoxon::{wilcoxon_rank_sum, WilcoxonMethod, WilcoxonResult};

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("input lengths differ: {0}")]
    LengthMismatch(String),
    #[error("no permissible pairs for the concordance index")]
    NoPermissiblePairs,
    #[error("no events observed")]
    NoEvents,
    #[error("Cox fit did not converge within {iterations} iterations")]
    NonConvergence { iterations: usize },
    #[error("information matrix is singular")]
    Singular,
    #[error("{failed} of {total} bootstrap resamples failed to converge")]
    BootstrapFailures { failed: usize, total: usize },
    #[error("group `{0}` is empty")]
    EmptyGroup(&'static str),
    #[error("invalid survival time {0}")]
    InvalidTime(f64),
    #[error("non-finite value in `{0}`")]
    NonFinite(String),
    #[error("unknown covariate `{0}`")]
    UnknownCovariate(String),
    #[error("duplicate patient id `{0}`")]
    DuplicateId(String),
    #[error("need at least {k} subjects for {k} folds, got {n}")]
    TooFewSubjects { n: usize, k: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("evaluation callback failed: {0}")]
    Callback(String),
}

/// Observed follow-up time and event indicator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurvivalLabel {
    /// Months, strictly positive.
    pub time: f64,
    /// `true` when the event (death) was observed, `false` when censored.
    pub event: bool,
}

impl SurvivalLabel {
    pub fn new(time: f64, event: bool) -> Result<Self, StatsError> {
        if !(time.is_finite() && time > 0.0) {
            return Err(StatsError::InvalidTime(time));
        }
        Ok(Self { time, event })
    }
}

pub(crate) fn split_labels(labels: &[SurvivalLabel]) -> (Vec<f64>, Vec<bool>) {
    (labels.iter().map(|l| l.time).collect(), labels.iter().map(|l| l.event).collect())
}

/// Patients with named covariates and survival outcomes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortTable {
    pub ids: Vec<String>,
    pub covariate_names: Vec<String>,
    /// One column per covariate, each of length `ids.len()`.
    pub covariates: Vec<Vec<f64>>,
    pub labels: Vec<SurvivalLabel>,
}

impl CohortTable {
    pub fn new(
        ids: Vec<String>,
        covariate_names: Vec<String>,
        covariates: Vec<Vec<f64>>,
        labels: Vec<SurvivalLabel>,
    ) -> Result<Self, StatsError> {
        let n = ids.len();
        if labels.len() != n || covariates.len() != covariate_names.len() || covariates.iter().any(|c| c.len() != n) {
            return Err(StatsError::LengthMismatch(format!(
                "{n} ids, {} labels, {} covariate columns",
                labels.len(),
                covariates.len()
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for id in &ids {
            if !seen.insert(id) {
                return Err(StatsError::DuplicateId(id.clone()));
            }
        }
        for (name, col) in covariate_names.iter().zip(&covariates) {
            if col.iter().any(|v| !v.is_finite()) {
                return Err(StatsError::NonFinite(name.clone()));
            }
        }
        for l in &labels {
            SurvivalLabel::new(l.time, l.event)?;
        }
        Ok(Self { ids, covariate_names, covariates, labels })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn column(&self, name: &str) -> Result<&[f64], StatsError> {
        self.covariate_names
            .iter()
            .position(|c| c == name)
            .map(|k| self.covariates[k].as_slice())
            .ok_or_else(|| StatsError::UnknownCovariate(name.to_string()))
    }

    /// Rows selected by index (duplicates allowed); ids are suffixed to stay
    /// unique.
    pub fn subset(&self, rows: &[usize]) -> CohortTable {
        CohortTable {
            ids: rows.iter().enumerate().map(|(k, &r)| format!("{}#{k}", self.ids[r])).collect(),
            covariate_names: self.covariate_names.clone(),
            covariates: self.covariates.iter().map(|c| rows.iter().map(|&r| c[r]).collect()).collect(),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
        }
    }
}
