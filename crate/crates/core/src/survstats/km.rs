use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use super::{split_labels, StatsError, SurvivalLabel};

/// Product-limit estimate. The first point is time 0 with survival 1; each
/// further point is a distinct event time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMCurve {
    pub times: Vec<f64>,
    pub survival: Vec<f64>,
    pub at_risk: Vec<usize>,
    pub events: Vec<usize>,
}

impl KMCurve {
    /// Right-continuous step value at `t`.
    pub fn survival_at(&self, t: f64) -> f64 {
        let k = self.times.partition_point(|&x| x <= t);
        self.survival[k.saturating_sub(1)]
    }
}

pub fn kaplan_meier(labels: &[SurvivalLabel]) -> KMCurve {
    let mut sorted: Vec<SurvivalLabel> = labels.to_vec();
    sorted.sort_by(|a, b| a.time.total_cmp(&b.time));
    let mut curve = KMCurve { times: vec![0.0], survival: vec![1.0], at_risk: vec![labels.len()], events: vec![0] };
    let mut s = 1.0;
    let mut i = 0;
    while i < sorted.len() {
        let t = sorted[i].time;
        let at_risk = sorted.len() - i;
        let mut d = 0;
        while i < sorted.len() && sorted[i].time == t {
            d += sorted[i].event as usize;
            i += 1;
        }
        if d > 0 {
            s *= 1.0 - d as f64 / at_risk as f64;
            curve.times.push(t);
            curve.survival.push(s);
            curve.at_risk.push(at_risk);
            curve.events.push(d);
        }
    }
    curve
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRankResult {
    pub chi2: f64,
    pub p_value: f64,
    pub observed_group1: f64,
    pub expected_group1: f64,
    pub variance: f64,
}

/// Two-sample log-rank test; `group[i]` marks membership of the second group.
pub fn logrank_test(labels: &[SurvivalLabel], group: &[bool]) -> Result<LogRankResult, StatsError> {
    if labels.len() != group.len() {
        return Err(StatsError::LengthMismatch(format!("{} labels, {} group flags", labels.len(), group.len())));
    }
    if !group.iter().any(|&g| !g) {
        return Err(StatsError::EmptyGroup("first"));
    }
    if !group.iter().any(|&g| g) {
        return Err(StatsError::EmptyGroup("second"));
    }
    let (times, events) = split_labels(labels);
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.sort_by(|&a, &b| times[a].total_cmp(&times[b]));
    let (mut n, mut n1) = (labels.len() as f64, group.iter().filter(|&&g| g).count() as f64);
    let (mut o1, mut e1, mut v) = (0.0, 0.0, 0.0);
    let mut i = 0;
    while i < order.len() {
        let t = times[order[i]];
        let (mut d, mut d1, mut leave, mut leave1) = (0.0, 0.0, 0.0, 0.0);
        while i < order.len() && times[order[i]] == t {
            let k = order[i];
            leave += 1.0;
            if group[k] {
                leave1 += 1.0;
            }
            if events[k] {
                d += 1.0;
                if group[k] {
                    d1 += 1.0;
                }
            }
            i += 1;
        }
        if d > 0.0 {
            o1 += d1;
            e1 += d * n1 / n;
            if n > 1.0 {
                v += d * (n1 / n) * (1.0 - n1 / n) * (n - d) / (n - 1.0);
            }
        }
        n -= leave;
        n1 -= leave1;
    }
    let chi2 = if v > 0.0 { (o1 - e1).powi(2) / v } else { 0.0 };
    let p_value = ChiSquared::new(1.0).expect("one degree of freedom").sf(chi2);
    Ok(LogRankResult { chi2, p_value, observed_group1: o1, expected_group1: e1, variance: v })
}

/// High-risk flags: risk strictly above the median; ties at the median go
/// to the low-risk group.
pub fn median_dichotomize(risks: &[f64]) -> Vec<bool> {
    if risks.is_empty() {
        return Vec::new();
    }
    let mut s = risks.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let med = crate::volgrid::percentile(&s, 50.0);
    risks.iter().map(|&r| r > med).collect()
}
