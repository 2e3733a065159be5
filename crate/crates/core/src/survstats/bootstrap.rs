use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cox::{coxph_fit_with, CoxOptions};
use super::{CohortTable, StatsError};
use crate::volgrid::percentile;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapInterval {
    pub name: String,
    pub hazard_ratio: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapReport {
    pub intervals: Vec<BootstrapInterval>,
    pub resamples: usize,
    pub failed: usize,
}

/// Percentile 95% intervals of the hazard ratios over `b` patient-level
/// resamples. Resample `k` draws from stream `k` of the seeded generator, so
/// the result does not depend on scheduling. Failed fits are dropped and
/// counted; more than 10% failures is an error.
pub fn bootstrap_hr(table: &CohortTable, covariates: &[&str], b: usize, seed: u64) -> Result<BootstrapReport, StatsError> {
    if b == 0 {
        return Err(StatsError::InvalidArgument("bootstrap needs at least one resample".into()));
    }
    let point = coxph_fit_with(table, covariates, &CoxOptions::default())?;
    let n = table.len();
    let fits: Vec<Option<Vec<f64>>> = (0..b)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64);
            let rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            coxph_fit_with(&table.subset(&rows), covariates, &CoxOptions::default())
                .ok()
                .map(|f| f.covariates.iter().map(|c| c.hazard_ratio).collect())
        })
        .collect();
    let failed = fits.iter().filter(|f| f.is_none()).count();
    if failed * 10 > b {
        return Err(StatsError::BootstrapFailures { failed, total: b });
    }
    let ok: Vec<&Vec<f64>> = fits.iter().flatten().collect();
    let intervals = point
        .covariates
        .iter()
        .enumerate()
        .map(|(j, c)| {
            let mut hr: Vec<f64> = ok.iter().map(|f| f[j]).collect();
            hr.sort_by(|a, b| a.total_cmp(b));
            BootstrapInterval {
                name: c.name.clone(),
                hazard_ratio: c.hazard_ratio,
                ci_lower: percentile(&hr, 2.5),
                ci_upper: percentile(&hr, 97.5),
            }
        })
        .collect();
    Ok(BootstrapReport { intervals, resamples: b, failed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::survstats::SurvivalLabel;

    fn cohort(n: usize, seed: u64) -> CohortTable {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let labels = x
            .iter()
            .map(|&v| {
                let t = -rng.random::<f64>().ln() / (0.3 * (0.7 * v).exp());
                SurvivalLabel::new(t, rng.random::<f64>() < 0.85).unwrap()
            })
            .collect();
        CohortTable::new((0..n).map(|i| format!("p{i}")).collect(), vec!["x".into()], vec![x], labels).unwrap()
    }

    #[test]
    fn single_resample_is_degenerate() {
        let t = cohort(120, 3);
        let r = bootstrap_hr(&t, &["x"], 1, 9).unwrap();
        assert_eq!(r.intervals[0].ci_lower, r.intervals[0].ci_upper);
    }

    #[test]
    fn point_estimate_inside_and_reproducible() {
        let t = cohort(200, 4);
        let a = bootstrap_hr(&t, &["x"], 200, 17).unwrap();
        let b = bootstrap_hr(&t, &["x"], 200, 17).unwrap();
        assert_eq!(a, b);
        let iv = &a.intervals[0];
        assert!(iv.ci_lower <= iv.hazard_ratio && iv.hazard_ratio <= iv.ci_upper, "{iv:?}");
        assert_eq!(a.failed, 0);
    }
}
