use serde::{Deserialize, Serialize};

use super::cost::{select_negative_prompt, select_positive_prompt, CandidateSet, Pixel};
use super::{PropagationConfig, SamonaiError};
use crate::promptseg::{LogitMap2D, PromptPoint, Segmenter2D};
use crate::volgrid::{extract_slice, SliceAddress, View, Volume3D};

/// Binarized segmentation of one slice.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceMask {
    pub address: SliceAddress,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<bool>,
}

impl SliceMask {
    pub fn from_logits(address: SliceAddress, logits: &LogitMap2D) -> Self {
        Self { address, rows: logits.rows, cols: logits.cols, data: logits.binarize() }
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.data[row * self.cols + col]
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    /// Voxel coordinates of the foreground pixels.
    pub fn foreground_voxels(&self) -> impl Iterator<Item = [usize; 3]> + '_ {
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| self.address.voxel(i / self.cols, i % self.cols))
    }
}

/// Run of foreground voxels from a segmented slice, lying in one slice
/// (`host`) of an orthogonal view.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PositiveLine {
    pub host: SliceAddress,
    /// Slice the run was taken from.
    pub source: SliceAddress,
    /// 3D axis along which the run extends.
    pub axis: usize,
    pub voxels: Vec<[usize; 3]>,
}

impl PositiveLine {
    pub fn len(&self) -> usize {
        self.voxels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voxels.is_empty()
    }

    /// In-slice pixels of the run within its host slice.
    pub fn pixels(&self) -> Vec<Pixel> {
        self.voxels.iter().filter_map(|&v| self.host.pixel(v)).collect()
    }

    /// Every pixel of the host slice on the infinite extension of the run.
    pub fn full_extension(&self, dims: [usize; 3]) -> Vec<Pixel> {
        let base = self.voxels[0];
        (0..dims[self.axis])
            .map(|t| {
                let mut v = base;
                v[self.axis] = t;
                self.host.pixel(v).expect("extension stays in the host slice")
            })
            .collect()
    }
}

/// Projects the foreground of a segmented slice onto both orthogonal views.
/// Every orthogonal slice crossing the foreground receives one line per
/// contiguous run. Lines are ordered by view, then slice index, then
/// position along the run axis.
pub fn project_lines(mask: &SliceMask) -> Vec<PositiveLine> {
    let host_view = mask.address.view;
    let mut out = Vec::new();
    for view in host_view.others() {
        let fixed_axis = view.normal_axis();
        let fixed_is_row = fixed_axis == host_view.row_axis();
        let (n_fixed, n_run) = if fixed_is_row { (mask.rows, mask.cols) } else { (mask.cols, mask.rows) };
        let run_axis = if fixed_is_row { host_view.col_axis() } else { host_view.row_axis() };
        for j in 0..n_fixed {
            let at = |t: usize| if fixed_is_row { (j, t) } else { (t, j) };
            let mut t = 0;
            while t < n_run {
                let (r, c) = at(t);
                if !mask.get(r, c) {
                    t += 1;
                    continue;
                }
                let mut voxels = Vec::new();
                while t < n_run {
                    let (r, c) = at(t);
                    if !mask.get(r, c) {
                        break;
                    }
                    voxels.push(mask.address.voxel(r, c));
                    t += 1;
                }
                out.push(PositiveLine {
                    host: SliceAddress::new(view, j),
                    source: mask.address,
                    axis: run_axis,
                    voxels,
                });
            }
        }
    }
    out
}

/// Outcome of segmenting one slice during propagation.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceSegmentation {
    pub mask: SliceMask,
    pub logits: LogitMap2D,
    pub prompts: Vec<PromptPoint>,
}

/// Segments the slice of `view` holding the longest line. The positive
/// prompt is chosen among the line's pixels; the negative prompt among the
/// remaining pixels of the line's full in-slice extension.
pub fn segment_orthogonal(
    volume: &Volume3D,
    lines: &[PositiveLine],
    view: View,
    segmenter: &dyn Segmenter2D,
    cfg: &PropagationConfig,
) -> Result<SliceSegmentation, SamonaiError> {
    let mut best: Option<&PositiveLine> = None;
    for line in lines.iter().filter(|l| l.host.view == view && !l.is_empty()) {
        best = match best {
            None => Some(line),
            Some(b) if line.len() > b.len() || (line.len() == b.len() && line.host.index < b.host.index) => {
                Some(line)
            }
            keep => keep,
        };
    }
    let line = best.ok_or(SamonaiError::NoLines(view))?;
    let image = extract_slice(volume, line.host)?;

    let positive_px = line.pixels();
    let pos = select_positive_prompt(&CandidateSet::new(&image, positive_px.clone())?, &cfg.weights, cfg.neighborhood);
    let mut prompts = vec![PromptPoint::positive(pos.0, pos.1)];

    let run: std::collections::HashSet<Pixel> = positive_px.into_iter().collect();
    let negatives: Vec<Pixel> =
        line.full_extension(volume.dims()).into_iter().filter(|p| !run.contains(p)).collect();
    if !negatives.is_empty() {
        let set = CandidateSet::new(&image, negatives)?;
        let neg = select_negative_prompt(&set, &cfg.weights, cfg.neighborhood, cfg.negative_exclusion_fraction)?;
        prompts.push(PromptPoint::negative(neg.0, neg.1));
    }

    let logits = segmenter.segment(&image, &prompts)?;
    Ok(SliceSegmentation { mask: SliceMask::from_logits(line.host, &logits), logits, prompts })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn disk_mask(n: usize, r: f64, c: (f64, f64)) -> SliceMask {
        let data = (0..n * n)
            .map(|i| {
                let (y, x) = ((i / n) as f64, (i % n) as f64);
                (y - c.0).powi(2) + (x - c.1).powi(2) <= r * r
            })
            .collect();
        SliceMask { address: SliceAddress::new(View::Axial, 5), rows: n, cols: n, data }
    }

    #[test]
    fn disk_chords() {
        let m = disk_mask(31, 10.0, (15.0, 15.0));
        let lines = project_lines(&m);
        // axial row axis is y, which is the coronal normal
        let coronal: Vec<_> = lines.iter().filter(|l| l.host.view == View::Coronal).collect();
        assert_eq!(coronal.len(), 21);
        for l in &coronal {
            let dy = l.host.index as f64 - 15.0;
            let half = (100.0 - dy * dy).sqrt().floor() as usize;
            assert_eq!(l.len(), 2 * half + 1, "slice {}", l.host.index);
            assert_eq!(l.axis, 0);
            assert!(l.voxels.iter().all(|v| v[1] == l.host.index && v[2] == 5));
        }
        let sagittal = lines.iter().filter(|l| l.host.view == View::Sagittal).count();
        assert_eq!(sagittal, 21);
    }

    #[test]
    fn single_pixel_and_empty() {
        let mut m = disk_mask(9, 0.0, (4.0, 4.0));
        let lines = project_lines(&m);
        assert_eq!(lines.len(), 2);
        assert!(lines.iter().all(|l| l.len() == 1));
        m.data.iter_mut().for_each(|b| *b = false);
        assert!(project_lines(&m).is_empty());
    }

    #[test]
    fn split_runs() {
        let mut m = disk_mask(6, 0.0, (0.0, 0.0));
        m.data[0] = false;
        for c in [0, 1, 4] {
            m.data[2 * 6 + c] = true;
        }
        let coronal: Vec<_> = project_lines(&m).into_iter().filter(|l| l.host.view == View::Coronal).collect();
        assert_eq!(coronal.len(), 2);
        assert_eq!(coronal[0].len(), 2);
        assert_eq!(coronal[1].len(), 1);
    }
}
