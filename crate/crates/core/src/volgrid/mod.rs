//! Volumetric data model, file I/O and the geometric and intensity
//! preprocessing every other module builds on.
//!
//! Axis convention: `x` varies fastest in memory. An axial slice fixes `z`,
//! a coronal slice fixes `y` and a sagittal slice fixes `x`.

mod components;
mod geometry;
mod intensity;
mod io;
mod resample;
mod slice;

use thiserror::Error;

pub use components::{connected_components, longest_axial_diameter, InstanceInfo, InstanceLabeling};
pub use geometry::{BinaryMask, Geometry, Label, Mask3D, Phase, Volume3D};
pub use intensity::{clip_percentile, clip_sigma_zscore, normalize_range, percentile, ZScoreStats};
pub use io::{
    load_mask, load_volume, mask_from_nifti_bytes, mask_to_nifti_bytes, save_mask, save_volume, write_raw_volume, RawDtype, RawHeader,
};
pub use resample::{resample, resample_mask, resample_binary, Interpolation};
pub use slice::{extract_slice, insert_slice, Image2D, SliceAddress, View};

#[derive(Debug, Error)]
pub enum VolumeError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic: not a NIfTI-1 file")]
    BadMagic,
    #[error("non-positive dimensions {0:?}")]
    NonPositiveDims([i64; 3]),
    #[error("truncated payload: expected {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("unsupported datatype code {0}")]
    UnsupportedDatatype(i32),
    #[error("invalid voxel spacing {0:?}")]
    InvalidSpacing([f64; 3]),
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("voxel buffer holds {actual} values, lattice needs {expected}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("non-finite intensity")]
    NonFinite,
    #[error("value {0} is not a mask label")]
    InvalidLabel(f64),
    #[error("malformed sidecar header: {0}")]
    Sidecar(String),
    #[error("slice index {index} out of range for extent {extent}")]
    SliceOutOfRange { index: usize, extent: usize },
    #[error("pixel ({row}, {col}) outside a {rows}x{cols} slice")]
    PixelOutOfRange { row: usize, col: usize, rows: usize, cols: usize },
    #[error("geometry mismatch between paired volumes")]
    GeometryMismatch,
    #[error("region of interest is empty")]
    EmptyRoi,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}
