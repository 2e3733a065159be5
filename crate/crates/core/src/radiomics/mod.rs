//! Per-tumor radiomic features: 18 first-order, 14 shape, 22 GLCM,
//! 16 GLRLM, 16 GLSZM and 14 GLDM descriptors, in that order.
//!
//! Each tumor is cropped with a small margin, resampled to isotropic
//! spacing (cubic B-spline image, nearest-neighbour mask), clipped to
//! `mean ± 3 std` inside the roi, z-scored, scaled by 100 and binned with a
//! fixed bin width starting at the roi minimum. Shape descriptors use the
//! resampled mask.

mod firstorder;
mod normalize;
mod shape;
mod texture;

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use firstorder::{first_order, FIRST_ORDER_NAMES};
pub use normalize::{two_step_normalize, NormalizationParams};
pub use shape::{shape, surface_mesh, SurfaceMesh, SHAPE_NAMES};
pub use texture::{
    glcm, glcm_features_of, glcm_matrix, gldm, gldm_matrix, glrlm, glrlm_matrix, glszm, glszm_matrix,
    size_features_of, CountMatrix, GLCM_NAMES, GLDM_NAMES, GLRLM_NAMES, GLSZM_NAMES, OFFSETS,
};

use crate::volgrid::{
    clip_sigma_zscore, connected_components, percentile, resample, resample_binary, BinaryMask, Geometry,
    Interpolation, Phase, Volume3D, VolumeError,
};

pub const FEATURE_COUNT: usize = 100;

#[derive(Debug, Error)]
pub enum RadiomicsError {
    #[error("roi vanished after resampling")]
    RoiVanished,
    #[error("roi has {0} voxels, texture needs at least 2")]
    TooFewVoxels(usize),
    #[error("empty roi")]
    EmptyRoi,
    #[error("feature row width differs from {expected}")]
    Width { expected: usize },
    #[error("normalization needs at least one training row")]
    EmptyTrainingSet,
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Volume(#[from] VolumeError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("bad feature table: {0}")]
    Table(String),
}

/// The 100 feature names in output order, prefixed by their class.
pub fn feature_names() -> Vec<String> {
    let classes: [(&str, &[&str]); 6] = [
        ("firstorder", &FIRST_ORDER_NAMES),
        ("shape", &SHAPE_NAMES),
        ("glcm", &GLCM_NAMES),
        ("glrlm", &GLRLM_NAMES),
        ("glszm", &GLSZM_NAMES),
        ("gldm", &GLDM_NAMES),
    ];
    classes.iter().flat_map(|(c, names)| names.iter().map(move |n| format!("{c}_{n}"))).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RadiomicsConfig {
    /// Isotropic resampling spacing in mm; `None` keeps the native grid.
    pub target_spacing: Option<f64>,
    pub bin_width: f64,
    pub scale: f64,
    /// Voxels of context kept around the roi before resampling.
    pub margin: usize,
}

impl Default for RadiomicsConfig {
    fn default() -> Self {
        Self { target_spacing: Some(2.0), bin_width: 5.0, scale: 100.0, margin: 4 }
    }
}

/// Gray levels on a lattice; level 0 marks voxels outside the roi.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretizedVolume {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub levels: Vec<u32>,
    pub ng: u32,
    pub bin_width: f64,
    /// Preprocessed intensities (meaningful inside the roi only).
    pub values: Vec<f64>,
}

impl DiscretizedVolume {
    /// Wraps explicit levels; `values` are set equal to the levels.
    pub fn from_levels(dims: [usize; 3], spacing: [f64; 3], levels: Vec<u32>) -> Result<Self, RadiomicsError> {
        if levels.len() != dims.iter().product::<usize>() {
            return Err(RadiomicsError::InvalidConfig("level buffer does not match dims".into()));
        }
        let ng = levels.iter().copied().max().unwrap_or(0);
        if ng == 0 {
            return Err(RadiomicsError::EmptyRoi);
        }
        let values = levels.iter().map(|&l| l as f64).collect();
        Ok(Self { dims, spacing, levels, ng, bin_width: 1.0, values })
    }

    #[inline]
    pub fn index(&self, c: [usize; 3]) -> usize {
        c[0] + self.dims[0] * (c[1] + self.dims[1] * c[2])
    }

    #[inline]
    pub fn coords(&self, i: usize) -> [usize; 3] {
        let x = i % self.dims[0];
        let r = i / self.dims[0];
        [x, r % self.dims[1], r / self.dims[1]]
    }

    pub fn roi_count(&self) -> usize {
        self.levels.iter().filter(|&&l| l > 0).count()
    }

    pub fn roi_mask(&self) -> BinaryMask {
        let g = Geometry::new(self.dims, self.spacing, [0.0; 3]).expect("valid lattice");
        BinaryMask::new(g, self.levels.iter().map(|&l| l > 0).collect()).expect("matching length")
    }

    /// Roi intensities and levels in raster order.
    pub fn roi_values(&self) -> (Vec<f64>, Vec<u32>) {
        self.levels.iter().zip(&self.values).filter(|(&l, _)| l > 0).map(|(&l, &v)| (v, l)).unzip()
    }
}

/// Level `floor((x - min) / width) + 1` for every roi voxel.
pub fn discretize(values: &Volume3D, roi: &BinaryMask, bin_width: f64) -> Result<DiscretizedVolume, RadiomicsError> {
    if !(bin_width > 0.0) {
        return Err(RadiomicsError::InvalidConfig("bin width must be positive".into()));
    }
    let data = values.data();
    let min = roi
        .data()
        .iter()
        .zip(data)
        .filter(|(&b, _)| b)
        .map(|(_, &v)| v)
        .fold(f64::INFINITY, f64::min);
    if !min.is_finite() {
        return Err(RadiomicsError::EmptyRoi);
    }
    let levels: Vec<u32> = roi
        .data()
        .iter()
        .zip(data)
        .map(|(&b, &v)| if b { ((v - min) / bin_width).floor() as u32 + 1 } else { 0 })
        .collect();
    let g = values.geometry();
    Ok(DiscretizedVolume {
        dims: g.dims,
        spacing: g.spacing,
        ng: levels.iter().copied().max().unwrap_or(0),
        levels,
        bin_width,
        values: data.to_vec(),
    })
}

/// Resample, clip, z-score, scale and discretize one roi.
pub fn preprocess_for_radiomics(
    volume: &Volume3D,
    roi: &BinaryMask,
    cfg: &RadiomicsConfig,
) -> Result<DiscretizedVolume, RadiomicsError> {
    if roi.is_empty() {
        return Err(RadiomicsError::EmptyRoi);
    }
    let (img, mask) = match cfg.target_spacing {
        Some(s) => (resample(volume, [s; 3], Interpolation::CubicBspline)?, resample_binary(roi, [s; 3])?),
        None => (volume.clone(), roi.clone()),
    };
    if mask.is_empty() {
        return Err(RadiomicsError::RoiVanished);
    }
    let (z, _) = clip_sigma_zscore(&img, &mask)?;
    // clip_sigma_zscore already multiplies by 100
    let scaled = if cfg.scale == 100.0 { z } else { z.with_data(z.data().iter().map(|v| v * cfg.scale / 100.0).collect())? };
    discretize(&scaled, &mask, cfg.bin_width)
}

/// Crop box (inclusive lo, exclusive hi) around the roi with `margin`
/// voxels of context, clamped to the lattice.
fn crop_box(roi: &BinaryMask, margin: usize) -> Option<([usize; 3], [usize; 3])> {
    let (lo, hi) = roi.bounding_box()?;
    let dims = roi.geometry().dims;
    Some((std::array::from_fn(|a| lo[a].saturating_sub(margin)), std::array::from_fn(|a| (hi[a] + 1 + margin).min(dims[a]))))
}

/// One connected tumor of a patient in one phase.
#[derive(Debug, Clone, PartialEq)]
pub struct TumorInstance {
    pub patient_id: String,
    pub phase: Phase,
    pub instance_id: u32,
    pub mask: BinaryMask,
    pub diameter_mm: f64,
    pub volume_mm3: f64,
}

/// Splits a tumor mask into 26-connected instances.
pub fn tumor_instances(patient_id: &str, phase: Phase, tumors: &BinaryMask) -> Vec<TumorInstance> {
    let lab = connected_components(tumors);
    lab.instances()
        .iter()
        .map(|info| TumorInstance {
            patient_id: patient_id.to_string(),
            phase,
            instance_id: info.id,
            mask: lab.instance_mask(info.id),
            diameter_mm: info.longest_axial_diameter_mm,
            volume_mm3: info.volume_mm3,
        })
        .collect()
}

/// Drops instances whose diameter is at or below the 1st percentile of the
/// training diameters.
pub fn exclude_small(instances: Vec<TumorInstance>, train_diameters: &[f64]) -> Vec<TumorInstance> {
    if train_diameters.is_empty() {
        return instances;
    }
    let mut d = train_diameters.to_vec();
    d.sort_by(|a, b| a.total_cmp(b));
    let cut = percentile(&d, 1.0);
    instances.into_iter().filter(|t| t.diameter_mm > cut).collect()
}

/// All 100 features of one roi.
pub fn extract_features(volume: &Volume3D, roi: &BinaryMask, cfg: &RadiomicsConfig) -> Result<Vec<f64>, RadiomicsError> {
    volume.geometry().ensure_same(roi.geometry())?;
    let (lo, hi) = crop_box(roi, cfg.margin).ok_or(RadiomicsError::EmptyRoi)?;
    let dv = preprocess_for_radiomics(&volume.crop(lo, hi)?, &roi.crop(lo, hi)?, cfg)?;
    let (values, levels) = dv.roi_values();
    let mut out = Vec::with_capacity(FEATURE_COUNT);
    out.extend(first_order(&values, &levels));
    out.extend(shape(&dv.roi_mask()));
    out.extend(glcm(&dv)?);
    out.extend(glrlm(&dv)?);
    out.extend(glszm(&dv)?);
    out.extend(gldm(&dv)?);
    debug_assert_eq!(out.len(), FEATURE_COUNT);
    Ok(out)
}

/// One row of the feature table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub patient_id: String,
    pub phase: Phase,
    pub instance_id: u32,
    pub diameter_mm: f64,
    pub volume_mm3: f64,
    pub features: Vec<f64>,
}

/// Extracts every instance in parallel. Output is ordered by
/// `(patient, phase, instance id)`; failures are returned per instance.
pub fn extract_all<'v>(
    volume_for: impl Fn(&TumorInstance) -> Option<&'v Volume3D> + Sync,
    instances: &[TumorInstance],
    cfg: &RadiomicsConfig,
) -> Vec<(TumorInstance, Result<FeatureRow, RadiomicsError>)> {
    let mut out: Vec<(TumorInstance, Result<FeatureRow, RadiomicsError>)> = instances
        .par_iter()
        .map(|t| {
            let row = volume_for(t)
                .ok_or(RadiomicsError::EmptyRoi)
                .and_then(|v| extract_features(v, &t.mask, cfg))
                .map(|features| FeatureRow {
                    patient_id: t.patient_id.clone(),
                    phase: t.phase,
                    instance_id: t.instance_id,
                    diameter_mm: t.diameter_mm,
                    volume_mm3: t.volume_mm3,
                    features,
                });
            (t.clone(), row)
        })
        .collect();
    out.sort_by(|a, b| {
        (&a.0.patient_id, a.0.phase, a.0.instance_id).cmp(&(&b.0.patient_id, b.0.phase, b.0.instance_id))
    });
    out
}

const META: [&str; 5] = ["patient_id", "phase", "instance_id", "diameter_mm", "volume_mm3"];

pub fn write_feature_csv(rows: &[FeatureRow], path: &Path) -> Result<(), RadiomicsError> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = META.iter().map(|s| s.to_string()).collect();
    header.extend(feature_names());
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![
            r.patient_id.clone(),
            r.phase.to_string(),
            r.instance_id.to_string(),
            r.diameter_mm.to_string(),
            r.volume_mm3.to_string(),
        ];
        rec.extend(r.features.iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_feature_csv(path: &Path) -> Result<Vec<FeatureRow>, RadiomicsError> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    let expect: Vec<String> = META.iter().map(|s| s.to_string()).chain(feature_names()).collect();
    if header.iter().ne(expect.iter().map(String::as_str)) {
        return Err(RadiomicsError::Table("unexpected header".into()));
    }
    let num = |s: &str| s.parse::<f64>().map_err(|e| RadiomicsError::Table(format!("`{s}`: {e}")));
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        rows.push(FeatureRow {
            patient_id: rec[0].to_string(),
            phase: rec[1].parse().map_err(RadiomicsError::Table)?,
            instance_id: rec[2].parse().map_err(|e| RadiomicsError::Table(format!("instance id: {e}")))?,
            diameter_mm: num(&rec[3])?,
            volume_mm3: num(&rec[4])?,
            features: rec.iter().skip(META.len()).map(num).collect::<Result<_, _>>()?,
        });
    }
    Ok(rows)
}
