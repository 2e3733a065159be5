//! Promptable 2D segmenter contract and the deterministic region-growing
//! reference implementation used in place of a foundation model.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::volgrid::Image2D;

#[derive(Debug, Error, PartialEq)]
pub enum SegmentError {
    #[error("at least one positive prompt is required")]
    NoPositivePrompt,
    #[error("prompt ({row}, {col}) outside a {rows}x{cols} image")]
    PromptOutOfBounds { row: usize, col: usize, rows: usize, cols: usize },
    #[error("invalid segmenter parameter: {0}")]
    InvalidParameter(String),
    #[error("unknown segmenter `{0}`")]
    UnknownSegmenter(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Positive,
    Negative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PromptPoint {
    pub row: usize,
    pub col: usize,
    pub polarity: Polarity,
}

impl PromptPoint {
    pub fn positive(row: usize, col: usize) -> Self {
        Self { row, col, polarity: Polarity::Positive }
    }

    pub fn negative(row: usize, col: usize) -> Self {
        Self { row, col, polarity: Polarity::Negative }
    }
}

/// Per-pixel foreground score, same shape as the segmented image.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitMap2D {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl LogitMap2D {
    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    /// Foreground where the logit is strictly positive.
    pub fn binarize(&self) -> Vec<bool> {
        self.data.iter().map(|&s| s > 0.0).collect()
    }

    pub fn as_image(&self) -> Image2D {
        Image2D { rows: self.rows, cols: self.cols, data: self.data.clone() }
    }
}

/// A model that turns a slice plus point prompts into a logit map.
///
/// Implementations must be deterministic and safe to call concurrently.
pub trait Segmenter2D: Send + Sync {
    fn name(&self) -> &str;

    fn is_deterministic(&self) -> bool {
        true
    }

    fn segment(&self, image: &Image2D, prompts: &[PromptPoint]) -> Result<LogitMap2D, SegmentError>;
}

pub(crate) fn validate_prompts(image: &Image2D, prompts: &[PromptPoint]) -> Result<(), SegmentError> {
    for p in prompts {
        if !image.contains(p.row, p.col) {
            return Err(SegmentError::PromptOutOfBounds {
                row: p.row,
                col: p.col,
                rows: image.rows,
                cols: image.cols,
            });
        }
    }
    if !prompts.iter().any(|p| p.polarity == Polarity::Positive) {
        return Err(SegmentError::NoPositivePrompt);
    }
    Ok(())
}

/// Region growing from the positive prompts with a shrinking intensity
/// tolerance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionGrowSegmenter {
    /// Initial tolerance; `None` uses a quarter of the slice's intensity range.
    pub tolerance: Option<f64>,
    pub shrink: f64,
    pub max_iter: usize,
}

impl Default for RegionGrowSegmenter {
    fn default() -> Self {
        Self { tolerance: None, shrink: 0.5, max_iter: 8 }
    }
}

impl RegionGrowSegmenter {
    pub const NAME: &'static str = "region-grow";
}

impl Segmenter2D for RegionGrowSegmenter {
    fn name(&self) -> &str {
        Self::NAME
    }

    fn segment(&self, image: &Image2D, prompts: &[PromptPoint]) -> Result<LogitMap2D, SegmentError> {
        validate_prompts(image, prompts)?;
        let tau0 = match self.tolerance {
            Some(t) => t,
            None => {
                let (lo, hi) = image.min_max();
                0.25 * (hi - lo)
            }
        };
        grow_with_shrinkage(image, prompts, tau0, self.shrink, self.max_iter)
    }
}

/// Looks up a segmenter by its configured name.
pub fn segmenter_by_name(name: &str) -> Result<Box<dyn Segmenter2D>, SegmentError> {
    match name {
        RegionGrowSegmenter::NAME | "reference" => Ok(Box::new(RegionGrowSegmenter::default())),
        other => Err(SegmentError::UnknownSegmenter(other.to_string())),
    }
}

/// Union of the 4-connected regions reachable from each seed whose pixels lie
/// within `tau` of that seed's intensity.
pub fn grow_region(image: &Image2D, seeds: &[(usize, usize)], tau: f64) -> Vec<bool> {
    let mut region = vec![false; image.rows * image.cols];
    let mut visited = vec![false; image.rows * image.cols];
    let mut queue = VecDeque::new();
    for &(r0, c0) in seeds {
        let reference = image.get(r0, c0);
        visited.iter_mut().for_each(|v| *v = false);
        visited[r0 * image.cols + c0] = true;
        queue.push_back((r0, c0));
        while let Some((r, c)) = queue.pop_front() {
            region[r * image.cols + c] = true;
            let mut visit = |rr: usize, cc: usize, q: &mut VecDeque<(usize, usize)>| {
                let k = rr * image.cols + cc;
                if !visited[k] && (image.data[k] - reference).abs() <= tau {
                    visited[k] = true;
                    q.push_back((rr, cc));
                }
            };
            if r > 0 {
                visit(r - 1, c, &mut queue);
            }
            if r + 1 < image.rows {
                visit(r + 1, c, &mut queue);
            }
            if c > 0 {
                visit(r, c - 1, &mut queue);
            }
            if c + 1 < image.cols {
                visit(r, c + 1, &mut queue);
            }
        }
    }
    region
}

/// Reference segmentation: grow at `tau0`, multiply the tolerance by `shrink`
/// while any negative prompt falls inside the region, and after `max_iter`
/// shrinkages fall back to the positive seed pixels alone. Logits are +1
/// inside the region and -1 elsewhere.
pub fn grow_with_shrinkage(
    image: &Image2D,
    prompts: &[PromptPoint],
    tau0: f64,
    shrink: f64,
    max_iter: usize,
) -> Result<LogitMap2D, SegmentError> {
    validate_prompts(image, prompts)?;
    if !(tau0 >= 0.0 && tau0.is_finite()) {
        return Err(SegmentError::InvalidParameter(format!("tolerance {tau0}")));
    }
    if !(shrink > 0.0 && shrink < 1.0) {
        return Err(SegmentError::InvalidParameter(format!("shrink factor {shrink}")));
    }
    let seeds: Vec<(usize, usize)> = prompts
        .iter()
        .filter(|p| p.polarity == Polarity::Positive)
        .map(|p| (p.row, p.col))
        .collect();
    let negatives: Vec<usize> = prompts
        .iter()
        .filter(|p| p.polarity == Polarity::Negative)
        .map(|p| p.row * image.cols + p.col)
        .collect();

    let mut tau = tau0;
    for _ in 0..=max_iter {
        let region = grow_region(image, &seeds, tau);
        if !negatives.iter().any(|&k| region[k]) {
            return Ok(to_logits(image, &region));
        }
        tau *= shrink;
    }
    let mut region = vec![false; image.rows * image.cols];
    for &(r, c) in &seeds {
        region[r * image.cols + c] = true;
    }
    Ok(to_logits(image, &region))
}

/// Entry point with explicit parameters; `tau0` must be positive.
pub fn reference_region_grow(
    image: &Image2D,
    prompts: &[PromptPoint],
    tau0: f64,
    shrink: f64,
    max_iter: usize,
) -> Result<LogitMap2D, SegmentError> {
    if !(tau0 > 0.0) {
        return Err(SegmentError::InvalidParameter(format!("tolerance {tau0} must be positive")));
    }
    grow_with_shrinkage(image, prompts, tau0, shrink, max_iter)
}

fn to_logits(image: &Image2D, region: &[bool]) -> LogitMap2D {
    LogitMap2D {
        rows: image.rows,
        cols: image.cols,
        data: region.iter().map(|&b| if b { 1.0 } else { -1.0 }).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn disk(n: usize, r: f64) -> Image2D {
        let c = (n as f64 - 1.0) / 2.0;
        Image2D::from_fn(n, n, |i, j| {
            let d2 = (i as f64 - c).powi(2) + (j as f64 - c).powi(2);
            if d2 <= r * r { 10.0 } else { 0.0 }
        })
    }

    #[test]
    fn disk_recovered_exactly() {
        let img = disk(31, 9.0);
        let seg = RegionGrowSegmenter::default();
        let out = seg.segment(&img, &[PromptPoint::positive(15, 15)]).unwrap();
        for k in 0..img.data.len() {
            assert_eq!(out.data[k] > 0.0, img.data[k] == 10.0);
        }
    }

    #[test]
    fn constant_image_cases() {
        let img = Image2D::from_fn(8, 8, |_, _| 3.0);
        let seg = RegionGrowSegmenter::default();
        let all = seg.segment(&img, &[PromptPoint::positive(2, 2)]).unwrap();
        assert!(all.data.iter().all(|&s| s == 1.0));

        let fallback = seg.segment(&img, &[PromptPoint::positive(2, 2), PromptPoint::negative(4, 4)]).unwrap();
        let fg: Vec<usize> = (0..64).filter(|&k| fallback.data[k] > 0.0).collect();
        assert_eq!(fg, vec![2 * 8 + 2]);
    }

    #[test]
    fn two_intensity_object() {
        let img = Image2D::from_fn(10, 10, |r, c| if (3..7).contains(&r) && (2..9).contains(&c) { 5.0 } else { 0.0 });
        let out = reference_region_grow(&img, &[PromptPoint::positive(4, 4)], 2.0, 0.5, 8).unwrap();
        for k in 0..100 {
            assert_eq!(out.data[k] > 0.0, img.data[k] == 5.0);
        }
    }

    #[test]
    fn ramp_shrinks_until_negative_excluded() {
        // 1x16 ramp I(c) = c, seed at 0, negative at 12.
        // tau: 20 -> contains 12; 10 -> region [0, 10], negative excluded.
        let img = Image2D::from_fn(1, 16, |_, c| c as f64);
        let out = reference_region_grow(&img, &[PromptPoint::positive(0, 0), PromptPoint::negative(0, 12)], 20.0, 0.5, 8)
            .unwrap();
        let fg: Vec<usize> = (0..16).filter(|&c| out.data[c] > 0.0).collect();
        assert_eq!(fg, (0..=10).collect::<Vec<_>>());
    }

    #[test]
    fn single_pixel_object() {
        let img = Image2D::from_fn(5, 5, |r, c| if (r, c) == (2, 3) { 9.0 } else { 0.0 });
        let out = RegionGrowSegmenter::default().segment(&img, &[PromptPoint::positive(2, 3)]).unwrap();
        assert_eq!(out.data.iter().filter(|&&s| s > 0.0).count(), 1);
        assert_eq!(out.get(2, 3), 1.0);
    }

    #[test]
    fn error_paths() {
        let img = Image2D::from_fn(4, 4, |_, _| 0.0);
        let seg = RegionGrowSegmenter::default();
        assert_eq!(seg.segment(&img, &[PromptPoint::negative(1, 1)]), Err(SegmentError::NoPositivePrompt));
        assert!(matches!(
            seg.segment(&img, &[PromptPoint::positive(4, 0)]),
            Err(SegmentError::PromptOutOfBounds { .. })
        ));
        assert!(segmenter_by_name("sam").is_err());
    }

    fn small_image() -> impl Strategy<Value = Image2D> {
        (2usize..12, 2usize..12).prop_flat_map(|(r, c)| {
            prop::collection::vec(0u8..6, r * c)
                .prop_map(move |v| Image2D::from_fn(r, c, |i, j| v[i * c + j] as f64))
        })
    }

    fn is_4_connected(region: &[bool], rows: usize, cols: usize) -> bool {
        let Some(start) = region.iter().position(|&b| b) else { return true };
        let mut seen = vec![false; region.len()];
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(k) = stack.pop() {
            let (r, c) = (k / cols, k % cols);
            let mut nb = Vec::new();
            if r > 0 { nb.push(k - cols); }
            if r + 1 < rows { nb.push(k + cols); }
            if c > 0 { nb.push(k - 1); }
            if c + 1 < cols { nb.push(k + 1); }
            for n in nb {
                if region[n] && !seen[n] {
                    seen[n] = true;
                    stack.push(n);
                }
            }
        }
        region.iter().zip(&seen).all(|(r, s)| !r || *s)
    }

    proptest! {
        #[test]
        fn deterministic_and_connected(img in small_image(), seed in any::<(u8, u8)>(), tau in 0.5f64..6.0) {
            let p = PromptPoint::positive(seed.0 as usize % img.rows, seed.1 as usize % img.cols);
            let a = reference_region_grow(&img, &[p], tau, 0.5, 8).unwrap();
            let b = reference_region_grow(&img, &[p], tau, 0.5, 8).unwrap();
            prop_assert_eq!(&a, &b);
            let region = a.binarize();
            prop_assert!(region[p.row * img.cols + p.col]);
            prop_assert!(is_4_connected(&region, img.rows, img.cols));
        }

        #[test]
        fn monotone_in_tolerance(img in small_image(), seed in any::<(u8, u8)>(), t1 in 0.0f64..6.0, dt in 0.0f64..3.0) {
            let s = (seed.0 as usize % img.rows, seed.1 as usize % img.cols);
            let small = grow_region(&img, &[s], t1);
            let large = grow_region(&img, &[s], t1 + dt);
            prop_assert!(small.iter().zip(&large).all(|(a, b)| !a || *b));
        }
    }
}
