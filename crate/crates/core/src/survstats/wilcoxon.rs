use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::StatsError;

/// Largest pooled sample size evaluated exactly.
pub const EXACT_LIMIT: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WilcoxonMethod {
    Exact,
    Normal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// Rank sum of the first sample (midranks for ties).
    pub statistic: f64,
    pub p_value: f64,
    pub method: WilcoxonMethod,
}

/// Doubled midranks, so ties stay integral.
fn doubled_midranks(values: &[f64]) -> Vec<u64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0u64; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        // positions i+1..=j share rank (i+1+j)/2
        for &k in &order[i..j] {
            ranks[k] = (i + 1 + j) as u64;
        }
        i = j;
    }
    ranks
}

/// Two-sided Wilcoxon rank-sum test. Pooled samples of at most
/// [`EXACT_LIMIT`] use the exact permutation distribution of the midrank sum;
/// larger samples use the normal approximation with tie and continuity
/// corrections.
pub fn wilcoxon_rank_sum(a: &[f64], b: &[f64]) -> Result<WilcoxonResult, StatsError> {
    if a.is_empty() {
        return Err(StatsError::EmptyGroup("a"));
    }
    if b.is_empty() {
        return Err(StatsError::EmptyGroup("b"));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite("samples".into()));
    }
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let (na, n) = (a.len(), pooled.len());
    let ranks = doubled_midranks(&pooled);
    let w2: u64 = ranks[..na].iter().sum();
    let statistic = w2 as f64 / 2.0;

    if n <= EXACT_LIMIT {
        let e2 = (na * (n + 1)) as i64;
        let max_sum = ranks.iter().sum::<u64>() as usize;
        // ways[k][s]: subsets of size k with doubled rank sum s
        let mut ways = vec![vec![0u64; max_sum + 1]; na + 1];
        ways[0][0] = 1;
        for &r in &ranks {
            for k in (1..=na).rev() {
                for s in (r as usize..=max_sum).rev() {
                    ways[k][s] += ways[k - 1][s - r as usize];
                }
            }
        }
        let observed = (w2 as i64 - e2).abs();
        let total: u64 = ways[na].iter().sum();
        let extreme: u64 = ways[na]
            .iter()
            .enumerate()
            .filter(|&(s, _)| (s as i64 - e2).abs() >= observed)
            .map(|(_, &c)| c)
            .sum();
        return Ok(WilcoxonResult {
            statistic,
            p_value: (extreme as f64 / total as f64).min(1.0),
            method: WilcoxonMethod::Exact,
        });
    }

    let (naf, nbf, nf) = (na as f64, b.len() as f64, n as f64);
    let mean = naf * (nf + 1.0) / 2.0;
    let mut sorted = pooled.clone();
    sorted.sort_by(|x, y| x.total_cmp(y));
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j < sorted.len() && sorted[j] == sorted[i] {
            j += 1;
        }
        let t = (j - i) as f64;
        tie_term += t * t * t - t;
        i = j;
    }
    let var = naf * nbf / 12.0 * ((nf + 1.0) - tie_term / (nf * (nf - 1.0)));
    let p_value = if var <= 0.0 {
        1.0
    } else {
        let z = ((statistic - mean).abs() - 0.5).max(0.0) / var.sqrt();
        (2.0 * Normal::standard().sf(z)).min(1.0)
    };
    Ok(WilcoxonResult { statistic, p_value, method: WilcoxonMethod::Normal })
}
