//! Prompt propagation that lifts a promptable 2D segmenter to 3D.
//!
//! A user prompt on one slice is segmented, the result is projected as
//! positive lines onto the two orthogonal views, the slices holding the
//! longest lines are segmented, and each of the three orientations is then
//! swept across the bounding box of the seed segmentations. The three sweeps
//! are averaged and binarized with an adaptive threshold.

pub mod cost;
pub mod lines;
pub mod propagate;

use std::sync::atomic::AtomicBool;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cost::{
    homogeneity_cost, min_max_normalize, select_negative_prompt, select_positive_prompt, CandidateSet, Pixel,
    PromptCostWeights,
};
pub use lines::{project_lines, segment_orthogonal, PositiveLine, SliceMask, SliceSegmentation};
pub use propagate::{
    adaptive_threshold, fuse_and_binarize, propagate_orientation, sampled_slices, seed_bounding_box, BACKGROUND_LOGIT,
};

use crate::promptseg::{PromptPoint, SegmentError, Segmenter2D};
use crate::volgrid::{extract_slice, BinaryMask, SliceAddress, View, Volume3D, VolumeError};

#[derive(Debug, Error)]
pub enum SamonaiError {
    #[error("invalid propagation config: {0}")]
    InvalidConfig(String),
    #[error("candidate set is empty")]
    EmptyCandidates,
    #[error("candidate ({row}, {col}) lies outside the slice")]
    CandidateOutOfBounds { row: usize, col: usize },
    #[error("no positive line falls in any {0} slice")]
    NoLines(View),
    #[error("seed bounding box is empty for the {0} sweep")]
    DegenerateBox(View),
    #[error("no object found in the initial slice")]
    NoObjectFound,
    #[error("orientation volumes have different geometries")]
    GeometryMismatch,
    #[error("propagation cancelled")]
    Cancelled,
    #[error(transparent)]
    Segment(#[from] SegmentError),
    #[error(transparent)]
    Volume(#[from] VolumeError),
}

/// Propagation parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PropagationConfig {
    pub weights: PromptCostWeights,
    /// Side of the homogeneity window (odd).
    pub neighborhood: usize,
    pub negative_exclusion_fraction: f64,
    pub slice_density: f64,
    pub threshold_k: f64,
}

impl Default for PropagationConfig {
    fn default() -> Self {
        Self {
            weights: PromptCostWeights::default(),
            neighborhood: 11,
            negative_exclusion_fraction: 0.10,
            slice_density: 1.0 / 3.0,
            threshold_k: 2.0,
        }
    }
}

impl PropagationConfig {
    pub fn validate(&self) -> Result<(), SamonaiError> {
        self.weights.validate()?;
        if self.neighborhood < 3 || self.neighborhood % 2 == 0 {
            return Err(SamonaiError::InvalidConfig(format!(
                "neighborhood {} must be odd and at least 3",
                self.neighborhood
            )));
        }
        if !(0.0..1.0).contains(&self.negative_exclusion_fraction) {
            return Err(SamonaiError::InvalidConfig(format!(
                "exclusion fraction {} not in [0, 1)",
                self.negative_exclusion_fraction
            )));
        }
        if !(self.slice_density > 0.0 && self.slice_density <= 1.0) {
            return Err(SamonaiError::InvalidConfig(format!("slice density {} not in (0, 1]", self.slice_density)));
        }
        if !self.threshold_k.is_finite() {
            return Err(SamonaiError::InvalidConfig("threshold k must be finite".into()));
        }
        Ok(())
    }
}

/// Output of a full propagation run.
#[derive(Debug, Clone)]
pub struct SamonaiResult {
    pub mask: BinaryMask,
    pub threshold: f64,
    /// Initial slice followed by the two orthogonal seed slices.
    pub seeds: Vec<SliceSegmentation>,
    pub bounding_box: ([usize; 3], [usize; 3]),
}

/// Runs the full propagation from prompts on one slice.
pub fn samonai_segment(
    volume: &Volume3D,
    initial: SliceAddress,
    prompts: &[PromptPoint],
    segmenter: &dyn Segmenter2D,
    cfg: &PropagationConfig,
) -> Result<SamonaiResult, SamonaiError> {
    samonai_segment_cancellable(volume, initial, prompts, segmenter, cfg, None)
}

/// As [`samonai_segment`], checking `cancel` before every slice.
pub fn samonai_segment_cancellable(
    volume: &Volume3D,
    initial: SliceAddress,
    prompts: &[PromptPoint],
    segmenter: &dyn Segmenter2D,
    cfg: &PropagationConfig,
    cancel: Option<&AtomicBool>,
) -> Result<SamonaiResult, SamonaiError> {
    cfg.validate()?;
    initial.validate(volume.dims())?;
    let image = extract_slice(volume, initial)?;
    let logits = segmenter.segment(&image, prompts)?;
    let first = SliceSegmentation {
        mask: SliceMask::from_logits(initial, &logits),
        logits,
        prompts: prompts.to_vec(),
    };
    if first.mask.is_empty() {
        return Err(SamonaiError::NoObjectFound);
    }

    let lines = project_lines(&first.mask);
    let mut seeds = vec![first];
    for view in initial.view.others() {
        if cancel.is_some_and(|c| c.load(std::sync::atomic::Ordering::Relaxed)) {
            return Err(SamonaiError::Cancelled);
        }
        seeds.push(segment_orthogonal(volume, &lines, view, segmenter, cfg)?);
    }
    let seed_masks: Vec<SliceMask> = seeds.iter().map(|s| s.mask.clone()).collect();
    let bounding_box = seed_bounding_box(&seed_masks).ok_or(SamonaiError::NoObjectFound)?;

    let sweeps = View::ALL
        .iter()
        .map(|&v| propagate_orientation(volume, &seed_masks, v, segmenter, cfg, cancel))
        .collect::<Result<Vec<_>, _>>()?;
    let (mask, threshold) = fuse_and_binarize([&sweeps[0], &sweeps[1], &sweeps[2]], cfg.threshold_k)?;
    Ok(SamonaiResult { mask, threshold, seeds, bounding_box })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::promptseg::RegionGrowSegmenter;
    use crate::volgrid::Geometry;

    fn ball(n: usize, centre: [f64; 3], r: f64) -> impl Fn(usize, usize, usize) -> bool {
        move |x, y, z| {
            let d = [x as f64 - centre[0], y as f64 - centre[1], z as f64 - centre[2]];
            let _ = n;
            d.iter().map(|v| v * v).sum::<f64>() <= r * r
        }
    }

    fn dice(a: &BinaryMask, b: &BinaryMask) -> f64 {
        let inter = a.data().iter().zip(b.data()).filter(|(x, y)| **x && **y).count() as f64;
        2.0 * inter / (a.count() + b.count()) as f64
    }

    #[test]
    fn noiseless_sphere() {
        let n = 40;
        let g = Geometry::unit([n, n, n]).unwrap();
        let inside = ball(n, [20.0, 20.0, 20.0], 8.0);
        let v = Volume3D::from_fn(g, |x, y, z| if inside(x, y, z) { 300.0 } else { 100.0 }).unwrap();
        let truth = BinaryMask::from_fn(g, &inside);
        let seg = RegionGrowSegmenter::default();
        let res = samonai_segment(
            &v,
            SliceAddress::new(View::Axial, 20),
            &[PromptPoint::positive(20, 20)],
            &seg,
            &PropagationConfig::default(),
        )
        .unwrap();
        let d = dice(&res.mask, &truth);
        assert!(d >= 0.9, "dice {d}");
        let (lo, hi) = res.bounding_box;
        for (i, &b) in res.mask.data().iter().enumerate() {
            if b {
                let c = g.coords(i);
                assert!((0..3).all(|a| (lo[a]..=hi[a]).contains(&c[a])));
            }
        }
    }

    #[test]
    fn two_spheres_mask_stays_in_box() {
        let g = Geometry::unit([48, 32, 32]).unwrap();
        let a = ball(0, [12.0, 16.0, 16.0], 6.0);
        let b = ball(0, [36.0, 16.0, 16.0], 6.0);
        let v = Volume3D::from_fn(g, |x, y, z| if a(x, y, z) || b(x, y, z) { 300.0 } else { 100.0 }).unwrap();
        let res = samonai_segment(
            &v,
            SliceAddress::new(View::Axial, 16),
            &[PromptPoint::positive(16, 12)],
            &RegionGrowSegmenter::default(),
            &PropagationConfig::default(),
        )
        .unwrap();
        assert!(res.mask.count() > 0);
        for (i, &m) in res.mask.data().iter().enumerate() {
            if m {
                assert!(g.coords(i)[0] < 24);
            }
        }
    }

    #[test]
    fn empty_initial_segmentation_errors() {
        struct Nothing;
        impl Segmenter2D for Nothing {
            fn name(&self) -> &str {
                "nothing"
            }
            fn segment(
                &self,
                image: &crate::volgrid::Image2D,
                _: &[PromptPoint],
            ) -> Result<crate::promptseg::LogitMap2D, SegmentError> {
                Ok(crate::promptseg::LogitMap2D {
                    rows: image.rows,
                    cols: image.cols,
                    data: vec![-1.0; image.rows * image.cols],
                })
            }
        }
        let g = Geometry::unit([8, 8, 8]).unwrap();
        let v = Volume3D::filled(g, 1.0);
        let r = samonai_segment(
            &v,
            SliceAddress::new(View::Axial, 2),
            &[PromptPoint::positive(1, 1)],
            &Nothing,
            &PropagationConfig::default(),
        );
        assert!(matches!(r, Err(SamonaiError::NoObjectFound)));
    }

    #[test]
    fn cancelled_run() {
        let g = Geometry::unit([16, 16, 16]).unwrap();
        let v = Volume3D::from_fn(g, |x, _, _| if (4..12).contains(&x) { 5.0 } else { 0.0 }).unwrap();
        let flag = AtomicBool::new(true);
        let r = samonai_segment_cancellable(
            &v,
            SliceAddress::new(View::Axial, 8),
            &[PromptPoint::positive(8, 8)],
            &RegionGrowSegmenter::default(),
            &PropagationConfig::default(),
            Some(&flag),
        );
        assert!(matches!(r, Err(SamonaiError::Cancelled)));
    }

    #[test]
    fn config_validation() {
        let mut c = PropagationConfig::default();
        assert!(c.validate().is_ok());
        c.neighborhood = 10;
        assert!(c.validate().is_err());
        c = PropagationConfig { slice_density: 0.0, ..Default::default() };
        assert!(c.validate().is_err());
        c = PropagationConfig { negative_exclusion_fraction: 1.0, ..Default::default() };
        assert!(c.validate().is_err());
    }
}
