use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{Volume3D, VolumeError};

/// Slice orientation.
///
/// | view     | fixed axis | row axis | col axis |
/// |----------|------------|----------|----------|
/// | axial    | z          | y        | x        |
/// | coronal  | y          | z        | x        |
/// | sagittal | x          | z        | y        |
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum View {
    Axial,
    Coronal,
    Sagittal,
}

impl View {
    pub const ALL: [View; 3] = [View::Axial, View::Coronal, View::Sagittal];

    /// Axis held constant by slices of this view.
    pub fn normal_axis(self) -> usize {
        match self {
            View::Axial => 2,
            View::Coronal => 1,
            View::Sagittal => 0,
        }
    }

    pub fn row_axis(self) -> usize {
        match self {
            View::Axial => 1,
            View::Coronal | View::Sagittal => 2,
        }
    }

    pub fn col_axis(self) -> usize {
        match self {
            View::Axial | View::Coronal => 0,
            View::Sagittal => 1,
        }
    }

    pub fn from_normal_axis(axis: usize) -> View {
        match axis {
            2 => View::Axial,
            1 => View::Coronal,
            0 => View::Sagittal,
            _ => panic!("axis {axis} out of range"),
        }
    }

    /// The two views whose slices intersect a slice of this view in a line.
    pub fn others(self) -> [View; 2] {
        match self {
            View::Axial => [View::Coronal, View::Sagittal],
            View::Coronal => [View::Axial, View::Sagittal],
            View::Sagittal => [View::Axial, View::Coronal],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            View::Axial => "axial",
            View::Coronal => "coronal",
            View::Sagittal => "sagittal",
        }
    }
}

impl fmt::Display for View {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for View {
    type Err = VolumeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "axial" => Ok(View::Axial),
            "coronal" => Ok(View::Coronal),
            "sagittal" => Ok(View::Sagittal),
            other => Err(VolumeError::InvalidParameter(format!("unknown view `{other}`"))),
        }
    }
}

/// One slice of a volume.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SliceAddress {
    pub view: View,
    pub index: usize,
}

impl SliceAddress {
    pub fn new(view: View, index: usize) -> Self {
        Self { view, index }
    }

    /// `(rows, cols)` of this view's slices on a volume of `dims`.
    pub fn shape(view: View, dims: [usize; 3]) -> (usize, usize) {
        (dims[view.row_axis()], dims[view.col_axis()])
    }

    pub fn validate(&self, dims: [usize; 3]) -> Result<(), VolumeError> {
        let extent = dims[self.view.normal_axis()];
        if self.index >= extent {
            return Err(VolumeError::SliceOutOfRange { index: self.index, extent });
        }
        Ok(())
    }

    /// Voxel coordinate of pixel `(row, col)`.
    #[inline]
    pub fn voxel(&self, row: usize, col: usize) -> [usize; 3] {
        let mut c = [0usize; 3];
        c[self.view.normal_axis()] = self.index;
        c[self.view.row_axis()] = row;
        c[self.view.col_axis()] = col;
        c
    }

    /// Pixel `(row, col)` of a voxel lying in this slice.
    #[inline]
    pub fn pixel(&self, voxel: [usize; 3]) -> Option<(usize, usize)> {
        (voxel[self.view.normal_axis()] == self.index)
            .then(|| (voxel[self.view.row_axis()], voxel[self.view.col_axis()]))
    }
}

/// Row-major 2D image.
#[derive(Debug, Clone, PartialEq)]
pub struct Image2D {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Image2D {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, VolumeError> {
        if rows == 0 || cols == 0 {
            return Err(VolumeError::NonPositiveDims([rows as i64, cols as i64, 1]));
        }
        if data.len() != rows * cols {
            return Err(VolumeError::LengthMismatch { expected: rows * cols, actual: data.len() });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(VolumeError::NonFinite);
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    #[inline]
    pub fn contains(&self, row: usize, col: usize) -> bool {
        row < self.rows && col < self.cols
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }
}

pub fn extract_slice(v: &Volume3D, addr: SliceAddress) -> Result<Image2D, VolumeError> {
    let dims = v.dims();
    addr.validate(dims)?;
    let (rows, cols) = SliceAddress::shape(addr.view, dims);
    Ok(Image2D::from_fn(rows, cols, |r, c| {
        let [x, y, z] = addr.voxel(r, c);
        v.get(x, y, z)
    }))
}

/// Writes `img` into the slice `addr` of a voxel buffer laid out on `dims`.
pub fn insert_slice(
    buf: &mut [f64],
    dims: [usize; 3],
    addr: SliceAddress,
    img: &Image2D,
) -> Result<(), VolumeError> {
    addr.validate(dims)?;
    let shape = SliceAddress::shape(addr.view, dims);
    if (img.rows, img.cols) != shape {
        return Err(VolumeError::InvalidGeometry(format!(
            "slice shape {}x{} does not match {}x{}",
            img.rows, img.cols, shape.0, shape.1
        )));
    }
    for r in 0..img.rows {
        for c in 0..img.cols {
            let [x, y, z] = addr.voxel(r, c);
            buf[x + dims[0] * (y + dims[1] * z)] = img.get(r, c);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volgrid::Geometry;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn axial_slice_of_z_ramp_is_constant() {
        let g = Geometry::unit([5, 6, 7]).unwrap();
        let v = Volume3D::from_fn(g, |_, _, z| z as f64).unwrap();
        for k in 0..7 {
            let img = extract_slice(&v, SliceAddress::new(View::Axial, k)).unwrap();
            assert_eq!((img.rows, img.cols), (6, 5));
            assert!(img.data.iter().all(|&p| p == k as f64));
        }
    }

    #[test]
    fn views_agree_with_voxel_values() {
        let g = Geometry::unit([4, 5, 6]).unwrap();
        let v = Volume3D::from_fn(g, |x, y, z| (x * 100 + y * 10 + z) as f64).unwrap();
        let cor = extract_slice(&v, SliceAddress::new(View::Coronal, 3)).unwrap();
        let sag = extract_slice(&v, SliceAddress::new(View::Sagittal, 2)).unwrap();
        // voxel (2, 3, 4)
        assert_eq!(cor.get(4, 2), v.get(2, 3, 4));
        assert_eq!(sag.get(4, 3), v.get(2, 3, 4));
        let addr = SliceAddress::new(View::Sagittal, 2);
        assert_eq!(addr.pixel(addr.voxel(4, 3)), Some((4, 3)));
        assert_eq!(addr.pixel([1, 3, 4]), None);
    }

    #[test]
    fn out_of_range_index() {
        let g = Geometry::unit([4, 5, 6]).unwrap();
        let v = Volume3D::filled(g, 0.0);
        assert!(matches!(
            extract_slice(&v, SliceAddress::new(View::Coronal, 5)),
            Err(VolumeError::SliceOutOfRange { index: 5, extent: 5 })
        ));
    }

    #[test]
    fn reassembly_reproduces_volume_for_every_view() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = Geometry::unit([5, 5, 5]).unwrap();
        let v = Volume3D::from_fn(g, |_, _, _| rng.random::<f64>()).unwrap();
        for view in View::ALL {
            let mut buf = vec![f64::NAN; g.len()];
            for k in 0..5 {
                let addr = SliceAddress::new(view, k);
                insert_slice(&mut buf, g.dims, addr, &extract_slice(&v, addr).unwrap()).unwrap();
            }
            assert_eq!(buf, v.data());
        }
    }
}
