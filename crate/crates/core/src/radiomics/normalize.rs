use serde::{Deserialize, Serialize};

use super::RadiomicsError;

/// Per-feature statistics of the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationParams {
    pub min: Vec<f64>,
    /// Mean and population std of `ln(f - min + 1)` on the training rows.
    pub log_mean: Vec<f64>,
    pub log_std: Vec<f64>,
}

impl NormalizationParams {
    pub fn len(&self) -> usize {
        self.min.len()
    }

    pub fn is_empty(&self) -> bool {
        self.min.is_empty()
    }

    /// Fits on training rows (each of equal width).
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self, RadiomicsError> {
        let width = rows.first().map(Vec::len).ok_or(RadiomicsError::EmptyTrainingSet)?;
        if rows.iter().any(|r| r.len() != width) {
            return Err(RadiomicsError::Width { expected: width });
        }
        let n = rows.len() as f64;
        let mut p = Self { min: vec![0.0; width], log_mean: vec![0.0; width], log_std: vec![0.0; width] };
        for k in 0..width {
            let min = rows.iter().map(|r| r[k]).fold(f64::INFINITY, f64::min);
            let logs: Vec<f64> = rows.iter().map(|r| (r[k] - min + 1.0).ln()).collect();
            let mean = logs.iter().sum::<f64>() / n;
            let var = logs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            p.min[k] = min;
            p.log_mean[k] = mean;
            p.log_std[k] = var.sqrt();
        }
        Ok(p)
    }

    /// Shifted log then z-score. Values below the training minimum are
    /// clamped to it; zero-variance features map to 0.
    pub fn apply(&self, row: &[f64]) -> Result<Vec<f64>, RadiomicsError> {
        if row.len() != self.len() {
            return Err(RadiomicsError::Width { expected: self.len() });
        }
        Ok(row
            .iter()
            .enumerate()
            .map(|(k, &f)| {
                if self.log_std[k] > 0.0 {
                    let l = (f.max(self.min[k]) - self.min[k] + 1.0).ln();
                    (l - self.log_mean[k]) / self.log_std[k]
                } else {
                    0.0
                }
            })
            .collect())
    }
}

pub fn two_step_normalize(rows: &[Vec<f64>], params: &NormalizationParams) -> Result<Vec<Vec<f64>>, RadiomicsError> {
    rows.iter().map(|r| params.apply(r)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_example() {
        let rows = vec![vec![0.0, 5.0], vec![std::f64::consts::E - 1.0, 5.0]];
        let p = NormalizationParams::fit(&rows).unwrap();
        assert!((p.log_mean[0] - 0.5).abs() < 1e-15);
        let out = two_step_normalize(&rows, &p).unwrap();
        assert!((out[0][0] + 1.0).abs() < 1e-12 && (out[1][0] - 1.0).abs() < 1e-12);
        assert_eq!((out[0][1], out[1][1]), (0.0, 0.0));
        // below the training minimum clamps to the minimum
        assert_eq!(p.apply(&[-10.0, 1.0]).unwrap()[0], p.apply(&[0.0, 1.0]).unwrap()[0]);
        assert!(p.apply(&[1.0]).is_err());
    }
}
