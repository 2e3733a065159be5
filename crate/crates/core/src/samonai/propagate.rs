use std::sync::atomic::{AtomicBool, Ordering};

use rayon::prelude::*;

use super::cost::{select_negative_prompt, select_positive_prompt, CandidateSet, Pixel};
use super::lines::{project_lines, SliceMask};
use super::{PropagationConfig, SamonaiError};
use crate::promptseg::{PromptPoint, Segmenter2D};
use crate::volgrid::{extract_slice, BinaryMask, SliceAddress, View, Volume3D};

/// Logit assigned to voxels that receive no segmentation.
pub const BACKGROUND_LOGIT: f64 = -1.0;

/// Inclusive voxel box enclosing the foreground of the seed slices.
pub fn seed_bounding_box(seeds: &[SliceMask]) -> Option<([usize; 3], [usize; 3])> {
    let mut lo = [usize::MAX; 3];
    let mut hi = [0usize; 3];
    let mut any = false;
    for v in seeds.iter().flat_map(|s| s.foreground_voxels()) {
        any = true;
        for a in 0..3 {
            lo[a] = lo[a].min(v[a]);
            hi[a] = hi[a].max(v[a]);
        }
    }
    any.then_some((lo, hi))
}

/// Slice indices in `[lo, hi]` that are segmented: every `step`-th from
/// `lo`, the last one, and the anchor if it falls inside.
pub fn sampled_slices(lo: usize, hi: usize, density: f64, anchor: Option<usize>) -> Vec<usize> {
    let step = ((1.0 / density) - 1e-9).ceil().max(1.0) as usize;
    let mut out: Vec<usize> = (lo..=hi).step_by(step).collect();
    out.push(hi);
    if let Some(a) = anchor.filter(|a| (lo..=hi).contains(a)) {
        out.push(a);
    }
    out.sort_unstable();
    out.dedup();
    out
}

/// Sweeps the orientation `view` across the seed box: sampled slices are
/// segmented with prompts derived from the seed lines, skipped slices are
/// linearly interpolated and slices outside the box get [`BACKGROUND_LOGIT`].
pub fn propagate_orientation(
    volume: &Volume3D,
    seeds: &[SliceMask],
    view: View,
    segmenter: &dyn Segmenter2D,
    cfg: &PropagationConfig,
    cancel: Option<&AtomicBool>,
) -> Result<Volume3D, SamonaiError> {
    let geom = *volume.geometry();
    let (lo, hi) = seed_bounding_box(seeds).ok_or(SamonaiError::DegenerateBox(view))?;
    let n = view.normal_axis();
    let (ra, ca) = (view.row_axis(), view.col_axis());

    let mut line_px: Vec<Vec<Pixel>> = vec![Vec::new(); geom.dims[n]];
    for seed in seeds.iter().filter(|s| s.address.view != view) {
        for line in project_lines(seed).into_iter().filter(|l| l.host.view == view) {
            line_px[line.host.index].extend(line.pixels());
        }
    }
    for px in &mut line_px {
        px.sort_unstable();
        px.dedup();
    }

    let anchor = seeds.iter().find(|s| s.address.view == view).map(|s| s.address.index);
    let sampled = sampled_slices(lo[n], hi[n], cfg.slice_density, anchor);
    let (rows, cols) = SliceAddress::shape(view, geom.dims);
    let outside: Vec<Pixel> = (0..rows)
        .flat_map(|r| (0..cols).map(move |c| (r, c)))
        .filter(|&(r, c)| !(lo[ra]..=hi[ra]).contains(&r) || !(lo[ca]..=hi[ca]).contains(&c))
        .collect();

    let planes: Vec<Vec<f64>> = sampled
        .par_iter()
        .map(|&k| {
            if cancel.is_some_and(|c| c.load(Ordering::Relaxed)) {
                return Err(SamonaiError::Cancelled);
            }
            if line_px[k].is_empty() {
                return Ok(vec![BACKGROUND_LOGIT; rows * cols]);
            }
            let addr = SliceAddress::new(view, k);
            let image = extract_slice(volume, addr)?;
            let pos = select_positive_prompt(
                &CandidateSet::new(&image, line_px[k].clone())?,
                &cfg.weights,
                cfg.neighborhood,
            );
            let mut prompts = vec![PromptPoint::positive(pos.0, pos.1)];
            if !outside.is_empty() {
                let set = CandidateSet::new(&image, outside.clone())?;
                let neg =
                    select_negative_prompt(&set, &cfg.weights, cfg.neighborhood, cfg.negative_exclusion_fraction)?;
                prompts.push(PromptPoint::negative(neg.0, neg.1));
            }
            Ok(segmenter.segment(&image, &prompts)?.data)
        })
        .collect::<Result<_, SamonaiError>>()?;

    let mut out = vec![BACKGROUND_LOGIT; geom.len()];
    let mut write_plane = |k: usize, value: &dyn Fn(usize) -> f64| {
        let addr = SliceAddress::new(view, k);
        for r in 0..rows {
            for c in 0..cols {
                let [x, y, z] = addr.voxel(r, c);
                out[geom.index(x, y, z)] = value(r * cols + c);
            }
        }
    };
    for (i, &k) in sampled.iter().enumerate() {
        write_plane(k, &|p| planes[i][p]);
    }
    for w in 0..sampled.len().saturating_sub(1) {
        let (k0, k1) = (sampled[w], sampled[w + 1]);
        for k in k0 + 1..k1 {
            let t = (k - k0) as f64 / (k1 - k0) as f64;
            write_plane(k, &|p| (1.0 - t) * planes[w][p] + t * planes[w + 1][p]);
        }
    }
    Ok(volume.with_data(out)?)
}

/// Adaptive threshold `mean + k * std` (population) over all voxels.
pub fn adaptive_threshold(values: &[f64], k: f64) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    mean + k * var.sqrt()
}

/// Voxelwise mean of the orientation logits, binarized strictly above the
/// adaptive threshold. Returns the mask and the threshold.
pub fn fuse_and_binarize(volumes: [&Volume3D; 3], k: f64) -> Result<(BinaryMask, f64), SamonaiError> {
    let geom = *volumes[0].geometry();
    for v in &volumes[1..] {
        if !v.geometry().same_lattice(&geom) {
            return Err(SamonaiError::GeometryMismatch);
        }
    }
    let fused: Vec<f64> = (0..geom.len())
        .map(|i| {
            // sorted summation keeps the mean independent of argument order
            let mut t = [volumes[0].data()[i], volumes[1].data()[i], volumes[2].data()[i]];
            t.sort_by(|a, b| a.total_cmp(b));
            (t[0] + t[1] + t[2]) / 3.0
        })
        .collect();
    let thr = adaptive_threshold(&fused, k);
    let mask = BinaryMask::new(geom, fused.iter().map(|&f| f > thr).collect())?;
    Ok((mask, thr))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volgrid::Geometry;

    #[test]
    fn sampling_index_arithmetic() {
        assert_eq!(sampled_slices(0, 8, 1.0 / 3.0, None), vec![0, 3, 6, 8]);
        assert_eq!(sampled_slices(0, 8, 1.0 / 3.0, Some(4)), vec![0, 3, 4, 6, 8]);
        assert_eq!(sampled_slices(5, 5, 1.0 / 3.0, Some(5)), vec![5]);
        assert_eq!(sampled_slices(2, 6, 1.0, None), vec![2, 3, 4, 5, 6]);
        assert_eq!(sampled_slices(0, 8, 1.0 / 3.0, Some(20)), vec![0, 3, 6, 8]);
    }

    #[test]
    fn threshold_example() {
        let mut v = vec![0.0; 96];
        v.extend([10.0; 4]);
        let t = adaptive_threshold(&v, 2.0);
        assert!((t - (0.4 + 2.0 * 3.84f64.sqrt())).abs() < 1e-12);
        assert!((t - 4.319).abs() < 1e-3);
    }

    #[test]
    fn fusion_cases() {
        let g = Geometry::unit([10, 10, 1]).unwrap();
        let c = Volume3D::filled(g, 0.3);
        let (m, _) = fuse_and_binarize([&c, &c, &c], 2.0).unwrap();
        assert!(m.is_empty());

        let v = Volume3D::from_fn(g, |x, y, _| if x < 2 && y < 2 { 10.0 } else { 0.0 }).unwrap();
        let (m, thr) = fuse_and_binarize([&v, &v, &v], 2.0).unwrap();
        assert_eq!(m.count(), 4);
        assert!((thr - 4.319).abs() < 1e-3);

        let other = Geometry::unit([10, 10, 2]).unwrap();
        let w = Volume3D::filled(other, 0.0);
        assert!(matches!(fuse_and_binarize([&v, &v, &w], 2.0), Err(SamonaiError::GeometryMismatch)));
    }
}
