//! Prompt-selection criteria: intensity, location and homogeneity costs,
//! combined after min-max normalisation over the candidate set.

use serde::{Deserialize, Serialize};

use super::SamonaiError;
use crate::volgrid::Image2D;

/// In-slice pixel `(row, col)`.
pub type Pixel = (usize, usize);

/// Weights of the intensity, location and homogeneity criteria.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PromptCostWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for PromptCostWeights {
    fn default() -> Self {
        Self { alpha: 1.0, beta: 1.0, gamma: 2.0 }
    }
}

impl PromptCostWeights {
    pub fn validate(&self) -> Result<(), SamonaiError> {
        let w = [self.alpha, self.beta, self.gamma];
        if w.iter().any(|x| !(x.is_finite() && *x >= 0.0)) || w.iter().sum::<f64>() <= 0.0 {
            return Err(SamonaiError::InvalidConfig(format!(
                "cost weights ({}, {}, {}) must be nonnegative with a positive sum",
                self.alpha, self.beta, self.gamma
            )));
        }
        Ok(())
    }
}

/// Candidate prompt locations within one slice.
#[derive(Debug, Clone)]
pub struct CandidateSet<'a> {
    image: &'a Image2D,
    points: Vec<Pixel>,
}

impl<'a> CandidateSet<'a> {
    pub fn new(image: &'a Image2D, points: Vec<Pixel>) -> Result<Self, SamonaiError> {
        if points.is_empty() {
            return Err(SamonaiError::EmptyCandidates);
        }
        if let Some(&(r, c)) = points.iter().find(|&&(r, c)| !image.contains(r, c)) {
            return Err(SamonaiError::CandidateOutOfBounds { row: r, col: c });
        }
        Ok(Self { image, points })
    }

    pub fn points(&self) -> &[Pixel] {
        &self.points
    }

    pub fn image(&self) -> &Image2D {
        self.image
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn intensity(&self, p: Pixel) -> f64 {
        self.image.get(p.0, p.1)
    }

    /// Median intensity over the set; even-sized sets average the middle two.
    pub fn median_intensity(&self) -> f64 {
        let mut v: Vec<f64> = self.points.iter().map(|&p| self.intensity(p)).collect();
        v.sort_by(|a, b| a.total_cmp(b));
        let n = v.len();
        if n % 2 == 1 {
            v[n / 2]
        } else {
            0.5 * (v[n / 2 - 1] + v[n / 2])
        }
    }

    pub fn centroid(&self) -> (f64, f64) {
        let n = self.points.len() as f64;
        let (sr, sc) = self
            .points
            .iter()
            .fold((0.0, 0.0), |(a, b), &(r, c)| (a + r as f64, b + c as f64));
        (sr / n, sc / n)
    }

    /// |I(p) - median of I over the set|.
    pub fn intensity_cost(&self, p: Pixel) -> f64 {
        (self.intensity(p) - self.median_intensity()).abs()
    }

    /// Euclidean distance (pixels) from `p` to the set centroid.
    pub fn location_cost(&self, p: Pixel) -> f64 {
        let (cr, cc) = self.centroid();
        ((p.0 as f64 - cr).powi(2) + (p.1 as f64 - cc).powi(2)).sqrt()
    }

    /// Weighted sum of the min-max normalised criteria for every point, in
    /// set order.
    pub fn total_costs(&self, w: &PromptCostWeights, window: usize) -> Vec<f64> {
        let median = self.median_intensity();
        let (cr, cc) = self.centroid();
        let ci: Vec<f64> = self.points.iter().map(|&p| (self.intensity(p) - median).abs()).collect();
        let cl: Vec<f64> = self
            .points
            .iter()
            .map(|&(r, c)| ((r as f64 - cr).powi(2) + (c as f64 - cc).powi(2)).sqrt())
            .collect();
        let ch: Vec<f64> = self.points.iter().map(|&p| homogeneity_cost(self.image, p, window)).collect();
        let (ni, nl, nh) = (min_max_normalize(&ci), min_max_normalize(&cl), min_max_normalize(&ch));
        (0..self.points.len())
            .map(|k| w.alpha * ni[k] + w.beta * nl[k] + w.gamma * nh[k])
            .collect()
    }

    /// Total cost of one member of the set.
    pub fn total_cost(&self, p: Pixel, w: &PromptCostWeights, window: usize) -> Option<f64> {
        let k = self.points.iter().position(|&q| q == p)?;
        Some(self.total_costs(w, window)[k])
    }
}

/// Population standard deviation of the `window`x`window` neighbourhood of
/// `p`, clipped at the image border.
pub fn homogeneity_cost(image: &Image2D, p: Pixel, window: usize) -> f64 {
    let half = window / 2;
    let r0 = p.0.saturating_sub(half);
    let r1 = (p.0 + half).min(image.rows - 1);
    let c0 = p.1.saturating_sub(half);
    let c1 = (p.1 + half).min(image.cols - 1);
    let n = ((r1 - r0 + 1) * (c1 - c0 + 1)) as f64;
    let mut sum = 0.0;
    for r in r0..=r1 {
        for c in c0..=c1 {
            sum += image.get(r, c);
        }
    }
    let mean = sum / n;
    let mut ss = 0.0;
    for r in r0..=r1 {
        for c in c0..=c1 {
            let d = image.get(r, c) - mean;
            ss += d * d;
        }
    }
    (ss / n).sqrt()
}

/// Maps values to `[0, 1]`; a constant criterion maps to all zeros.
pub fn min_max_normalize(v: &[f64]) -> Vec<f64> {
    let (lo, hi) = v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    if !(hi > lo) {
        return vec![0.0; v.len()];
    }
    v.iter().map(|x| (x - lo) / (hi - lo)).collect()
}

fn argmin_raster(points: &[Pixel], costs: &[f64]) -> Pixel {
    let mut best = 0;
    for k in 1..points.len() {
        let better = costs[k] < costs[best] || (costs[k] == costs[best] && points[k] < points[best]);
        if better {
            best = k;
        }
    }
    points[best]
}

/// Candidate with the lowest total cost; ties go to the first pixel in
/// raster order.
pub fn select_positive_prompt(set: &CandidateSet<'_>, w: &PromptCostWeights, window: usize) -> Pixel {
    argmin_raster(set.points(), &set.total_costs(w, window))
}

/// Drops the darkest `floor(fraction * n)` candidates (keeping at least one)
/// and returns the lowest-cost survivor.
pub fn select_negative_prompt(
    set: &CandidateSet<'_>,
    w: &PromptCostWeights,
    window: usize,
    exclusion_fraction: f64,
) -> Result<Pixel, SamonaiError> {
    let survivors = drop_darkest(set, exclusion_fraction);
    let reduced = CandidateSet::new(set.image(), survivors)?;
    Ok(select_positive_prompt(&reduced, w, window))
}

pub(crate) fn drop_darkest(set: &CandidateSet<'_>, fraction: f64) -> Vec<Pixel> {
    let n = set.len();
    let drop = ((fraction * n as f64).floor() as usize).min(n - 1);
    let mut order: Vec<Pixel> = set.points().to_vec();
    order.sort_by(|&a, &b| {
        set.image()
            .get(a.0, a.1)
            .total_cmp(&set.image().get(b.0, b.1))
            .then(a.cmp(&b))
    });
    let dropped: std::collections::HashSet<Pixel> = order[..drop].iter().copied().collect();
    set.points().iter().copied().filter(|p| !dropped.contains(p)).collect()
}
