use super::{BinaryMask, Volume3D, VolumeError};

/// Linear-interpolation percentile (order statistic at rank `p/100 * (n-1)`).
/// `sorted` must be ascending and nonempty.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of empty sample");
    let rank = (p / 100.0).clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

fn sorted_copy(values: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(|a, b| a.total_cmp(b));
    v
}

/// Clamps intensities above the `p`-th percentile of the whole volume.
pub fn clip_percentile(v: &Volume3D, p: f64) -> Result<Volume3D, VolumeError> {
    if !(p > 0.0 && p <= 100.0) {
        return Err(VolumeError::InvalidParameter(format!("percentile {p} not in (0, 100]")));
    }
    let sorted = sorted_copy(v.data().iter().copied());
    let cap = percentile(&sorted, p);
    v.with_data(v.data().iter().map(|&x| x.min(cap)).collect())
}

/// Affine map of the intensity range onto `[lo, hi]`. A constant volume maps
/// entirely to `lo`.
pub fn normalize_range(v: &Volume3D, lo: f64, hi: f64) -> Result<Volume3D, VolumeError> {
    if !(lo < hi) {
        return Err(VolumeError::InvalidParameter(format!("range [{lo}, {hi}] is empty")));
    }
    let (min, max) = v.min_max();
    if max == min {
        return v.with_data(vec![lo; v.data().len()]);
    }
    let scale = (hi - lo) / (max - min);
    v.with_data(v.data().iter().map(|&x| lo + (x - min) * scale).collect())
}

/// Statistics used by [`clip_sigma_zscore`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZScoreStats {
    /// Mean and population standard deviation of the raw roi intensities.
    pub raw_mean: f64,
    pub raw_std: f64,
    /// Statistics of the clipped intensities used for the z-score.
    pub mean: f64,
    pub std: f64,
    pub clipped: usize,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Within `roi`: clamp to `mean ± 3 std`, z-score the clamped values
/// (population statistics) and multiply by 100. Voxels outside the roi are
/// returned unchanged. A zero-variance roi maps to zeros.
pub fn clip_sigma_zscore(v: &Volume3D, roi: &BinaryMask) -> Result<(Volume3D, ZScoreStats), VolumeError> {
    v.geometry().ensure_same(roi.geometry())?;
    let idx: Vec<usize> = roi.data().iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i).collect();
    if idx.is_empty() {
        return Err(VolumeError::EmptyRoi);
    }
    let raw: Vec<f64> = idx.iter().map(|&i| v.data()[i]).collect();
    let (raw_mean, raw_std) = mean_std(&raw);
    let (lo, hi) = (raw_mean - 3.0 * raw_std, raw_mean + 3.0 * raw_std);
    let mut clipped = 0;
    let vals: Vec<f64> = raw
        .iter()
        .map(|&x| {
            let c = x.clamp(lo, hi);
            if c != x {
                clipped += 1;
            }
            c
        })
        .collect();
    let (mean, std) = mean_std(&vals);
    let mut out = v.data().to_vec();
    for (&i, &x) in idx.iter().zip(&vals) {
        out[i] = if std > 0.0 { (x - mean) / std * 100.0 } else { 0.0 };
    }
    Ok((v.with_data(out)?, ZScoreStats { raw_mean, raw_std, mean, std, clipped }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volgrid::Geometry;

    fn line(values: &[f64]) -> Volume3D {
        let g = Geometry::unit([values.len(), 1, 1]).unwrap();
        Volume3D::new(g, values.to_vec()).unwrap()
    }

    #[test]
    fn percentile_clip_of_1_to_1000() {
        let v = line(&(1..=1000).map(|x| x as f64).collect::<Vec<_>>());
        // sort-based oracle: rank 0.999 * 999 = 998.001 between 999 and 1000
        let expected = 999.0 + 0.001;
        let c = clip_percentile(&v, 99.9).unwrap();
        let max = c.min_max().1;
        assert!((max - expected).abs() < 1e-9, "{max}");
        assert_eq!(c.data()[..998], v.data()[..998]);
    }

    #[test]
    fn normalize_cases() {
        let c = normalize_range(&line(&[5.0, 5.0, 5.0]), -1.0, 1.0).unwrap();
        assert!(c.data().iter().all(|&x| x == -1.0));
        let t = normalize_range(&line(&[0.0, 10.0]), -1.0, 1.0).unwrap();
        assert_eq!(t.data(), &[-1.0, 1.0]);
        assert!(normalize_range(&line(&[0.0]), 1.0, 1.0).is_err());
    }

    #[test]
    fn zscore_symmetric_pair() {
        let v = line(&[-1.0, 1.0, 7.0]);
        let roi = BinaryMask::new(*v.geometry(), vec![true, true, false]).unwrap();
        let (z, _) = clip_sigma_zscore(&v, &roi).unwrap();
        assert!((z.data()[0] + 100.0).abs() < 1e-12);
        assert!((z.data()[1] - 100.0).abs() < 1e-12);
        assert_eq!(z.data()[2], 7.0);
    }

    #[test]
    fn zscore_constant_and_empty() {
        let v = line(&[3.0, 3.0]);
        let roi = BinaryMask::new(*v.geometry(), vec![true, true]).unwrap();
        assert_eq!(clip_sigma_zscore(&v, &roi).unwrap().0.data(), &[0.0, 0.0]);
        let none = BinaryMask::empty(*v.geometry());
        assert!(matches!(clip_sigma_zscore(&v, &none), Err(VolumeError::EmptyRoi)));
    }

    #[test]
    fn zscore_clips_far_outlier_first() {
        let mut vals = vec![0.0; 20];
        for (i, x) in vals.iter_mut().enumerate() {
            *x = (i % 5) as f64;
        }
        vals.push(1000.0);
        let v = line(&vals);
        let roi = BinaryMask::new(*v.geometry(), vec![true; vals.len()]).unwrap();
        let (z, stats) = clip_sigma_zscore(&v, &roi).unwrap();
        assert_eq!(stats.clipped, 1);

        // direct recomputation
        let n = vals.len() as f64;
        let mu = vals.iter().sum::<f64>() / n;
        let sd = (vals.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / n).sqrt();
        let cl: Vec<f64> = vals.iter().map(|x| x.min(mu + 3.0 * sd).max(mu - 3.0 * sd)).collect();
        assert!(cl[20] < 1000.0);
        let mu2 = cl.iter().sum::<f64>() / n;
        let sd2 = (cl.iter().map(|x| (x - mu2).powi(2)).sum::<f64>() / n).sqrt();
        for (a, c) in z.data().iter().zip(&cl) {
            assert!((a - (c - mu2) / sd2 * 100.0).abs() < 1e-9);
        }
    }

    #[test]
    fn zscore_moments_without_clipping() {
        let vals: Vec<f64> = (0..50).map(|i| ((i * 37) % 11) as f64 + 0.25 * i as f64).collect();
        let v = line(&vals);
        let roi = BinaryMask::new(*v.geometry(), vec![true; vals.len()]).unwrap();
        let (z, stats) = clip_sigma_zscore(&v, &roi).unwrap();
        assert_eq!(stats.clipped, 0);
        let (m, s) = mean_std(z.data());
        assert!(m.abs() < 1e-9 && (s - 100.0).abs() < 1e-6);
    }
}
