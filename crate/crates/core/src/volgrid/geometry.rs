use serde::{Deserialize, Serialize};

use super::VolumeError;

/// Voxel lattice description shared by images and masks.
///
/// Voxel `(x, y, z)` lives at linear index `x + nx * (y + ny * z)`; its
/// centre sits at `origin + (x, y, z) * spacing` in millimetres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub origin: [f64; 3],
}

impl Geometry {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3]) -> Result<Self, VolumeError> {
        if dims.iter().any(|&d| d == 0) {
            return Err(VolumeError::NonPositiveDims(dims.map(|d| d as i64)));
        }
        if spacing.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(VolumeError::InvalidSpacing(spacing));
        }
        if origin.iter().any(|o| !o.is_finite()) {
            return Err(VolumeError::InvalidGeometry("origin must be finite".into()));
        }
        Ok(Self { dims, spacing, origin })
    }

    /// Unit spacing, zero origin.
    pub fn unit(dims: [usize; 3]) -> Result<Self, VolumeError> {
        Self::new(dims, [1.0; 3], [0.0; 3])
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        debug_assert!(x < self.dims[0] && y < self.dims[1] && z < self.dims[2]);
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let nx = self.dims[0];
        let ny = self.dims[1];
        [idx % nx, (idx / nx) % ny, idx / (nx * ny)]
    }

    /// Bounds-checked index for signed coordinates.
    #[inline]
    pub fn checked_index(&self, x: i64, y: i64, z: i64) -> Option<usize> {
        if x < 0 || y < 0 || z < 0 {
            return None;
        }
        let (x, y, z) = (x as usize, y as usize, z as usize);
        if x >= self.dims[0] || y >= self.dims[1] || z >= self.dims[2] {
            return None;
        }
        Some(self.index(x, y, z))
    }

    pub fn voxel_volume(&self) -> f64 {
        self.spacing[0] * self.spacing[1] * self.spacing[2]
    }

    /// Physical position of a voxel centre.
    pub fn world(&self, c: [usize; 3]) -> [f64; 3] {
        [
            self.origin[0] + c[0] as f64 * self.spacing[0],
            self.origin[1] + c[1] as f64 * self.spacing[1],
            self.origin[2] + c[2] as f64 * self.spacing[2],
        ]
    }

    /// Physical extent covered by the voxels (cell edges, not centres).
    pub fn extent(&self) -> [f64; 3] {
        [
            self.dims[0] as f64 * self.spacing[0],
            self.dims[1] as f64 * self.spacing[1],
            self.dims[2] as f64 * self.spacing[2],
        ]
    }

    pub fn same_lattice(&self, other: &Geometry) -> bool {
        const TOL: f64 = 1e-6;
        self.dims == other.dims
            && self
                .spacing
                .iter()
                .zip(other.spacing.iter())
                .all(|(a, b)| (a - b).abs() <= TOL * a.abs().max(1.0))
            && self
                .origin
                .iter()
                .zip(other.origin.iter())
                .all(|(a, b)| (a - b).abs() <= TOL * a.abs().max(1.0))
    }

    pub(crate) fn ensure_same(&self, other: &Geometry) -> Result<(), VolumeError> {
        if self.same_lattice(other) {
            Ok(())
        } else {
            Err(VolumeError::GeometryMismatch)
        }
    }
}

/// Scalar image on a voxel lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume3D {
    geom: Geometry,
    data: Vec<f64>,
}

impl Volume3D {
    pub fn new(geom: Geometry, data: Vec<f64>) -> Result<Self, VolumeError> {
        if data.len() != geom.len() {
            return Err(VolumeError::LengthMismatch { expected: geom.len(), actual: data.len() });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(VolumeError::NonFinite);
        }
        Ok(Self { geom, data })
    }

    pub fn filled(geom: Geometry, value: f64) -> Self {
        Self { geom, data: vec![value; geom.len()] }
    }

    /// Builds a volume by evaluating `f` at every voxel coordinate.
    pub fn from_fn(geom: Geometry, mut f: impl FnMut(usize, usize, usize) -> f64) -> Result<Self, VolumeError> {
        let mut data = Vec::with_capacity(geom.len());
        for z in 0..geom.dims[2] {
            for y in 0..geom.dims[1] {
                for x in 0..geom.dims[0] {
                    data.push(f(x, y, z));
                }
            }
        }
        Self::new(geom, data)
    }

    #[inline]
    pub fn geometry(&self) -> &Geometry {
        &self.geom
    }

    #[inline]
    pub fn dims(&self) -> [usize; 3] {
        self.geom.dims
    }

    #[inline]
    pub fn spacing(&self) -> [f64; 3] {
        self.geom.spacing
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f64 {
        self.data[self.geom.index(x, y, z)]
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    /// Replaces the intensities, keeping the lattice.
    pub fn with_data(&self, data: Vec<f64>) -> Result<Self, VolumeError> {
        Self::new(self.geom, data)
    }

    /// Sub-volume `[lo, hi)` per axis with the origin moved accordingly.
    pub fn crop(&self, lo: [usize; 3], hi: [usize; 3]) -> Result<Self, VolumeError> {
        let geom = crop_geometry(&self.geom, lo, hi)?;
        let mut data = Vec::with_capacity(geom.len());
        for z in lo[2]..hi[2] {
            for y in lo[1]..hi[1] {
                let start = self.geom.index(lo[0], y, z);
                data.extend_from_slice(&self.data[start..start + (hi[0] - lo[0])]);
            }
        }
        Ok(Self { geom, data })
    }
}

pub(crate) fn crop_geometry(g: &Geometry, lo: [usize; 3], hi: [usize; 3]) -> Result<Geometry, VolumeError> {
    for a in 0..3 {
        if lo[a] >= hi[a] || hi[a] > g.dims[a] {
            return Err(VolumeError::InvalidGeometry(format!(
                "crop range {}..{} invalid on axis {a} of extent {}",
                lo[a], hi[a], g.dims[a]
            )));
        }
    }
    Geometry::new(
        [hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]],
        g.spacing,
        g.world(lo),
    )
}

/// Structure labels carried by segmentation masks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
#[repr(u8)]
pub enum Label {
    Background = 0,
    Liver = 1,
    Tumor = 2,
    Spleen = 3,
}

impl Label {
    pub const ALL: [Label; 4] = [Label::Background, Label::Liver, Label::Tumor, Label::Spleen];

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Label::Background),
            1 => Some(Label::Liver),
            2 => Some(Label::Tumor),
            3 => Some(Label::Spleen),
            _ => None,
        }
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn name(self) -> &'static str {
        match self {
            Label::Background => "background",
            Label::Liver => "liver",
            Label::Tumor => "tumor",
            Label::Spleen => "spleen",
        }
    }
}

/// Acquisition phase of a scan.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    /// Pre-contrast.
    Pre,
    /// Post-contrast (hepatobiliary).
    Post,
}

impl Phase {
    pub const ALL: [Phase; 2] = [Phase::Pre, Phase::Post];

    pub fn name(self) -> &'static str {
        match self {
            Phase::Pre => "pre",
            Phase::Post => "post",
        }
    }
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Phase {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "pre" => Ok(Phase::Pre),
            "post" => Ok(Phase::Post),
            other => Err(format!("unknown phase `{other}`")),
        }
    }
}

/// Multi-label segmentation.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask3D {
    geom: Geometry,
    labels: Vec<Label>,
}

impl Mask3D {
    pub fn new(geom: Geometry, labels: Vec<Label>) -> Result<Self, VolumeError> {
        if labels.len() != geom.len() {
            return Err(VolumeError::LengthMismatch { expected: geom.len(), actual: labels.len() });
        }
        Ok(Self { geom, labels })
    }

    pub fn empty(geom: Geometry) -> Self {
        Self { geom, labels: vec![Label::Background; geom.len()] }
    }

    pub fn from_codes(geom: Geometry, codes: &[u8]) -> Result<Self, VolumeError> {
        let labels = codes
            .iter()
            .map(|&c| Label::from_code(c).ok_or(VolumeError::InvalidLabel(c as f64)))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(geom, labels)
    }

    #[inline]
    pub fn geometry(&self) -> &Geometry {
        &self.geom
    }

    #[inline]
    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn labels_mut(&mut self) -> &mut [Label] {
        &mut self.labels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> Label {
        self.labels[self.geom.index(x, y, z)]
    }

    /// Binary view of one structure.
    pub fn binary(&self, label: Label) -> BinaryMask {
        BinaryMask {
            geom: self.geom,
            data: self.labels.iter().map(|&l| l == label).collect(),
        }
    }

    pub fn count(&self, label: Label) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }
}

/// Foreground/background mask.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMask {
    geom: Geometry,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(geom: Geometry, data: Vec<bool>) -> Result<Self, VolumeError> {
        if data.len() != geom.len() {
            return Err(VolumeError::LengthMismatch { expected: geom.len(), actual: data.len() });
        }
        Ok(Self { geom, data })
    }

    pub fn empty(geom: Geometry) -> Self {
        Self { geom, data: vec![false; geom.len()] }
    }

    pub fn from_fn(geom: Geometry, mut f: impl FnMut(usize, usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(geom.len());
        for z in 0..geom.dims[2] {
            for y in 0..geom.dims[1] {
                for x in 0..geom.dims[0] {
                    data.push(f(x, y, z));
                }
            }
        }
        Self { geom, data }
    }

    #[inline]
    pub fn geometry(&self) -> &Geometry {
        &self.geom
    }

    #[inline]
    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [bool] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> bool {
        self.data[self.geom.index(x, y, z)]
    }

    pub fn set(&mut self, x: usize, y: usize, z: usize, v: bool) {
        let i = self.geom.index(x, y, z);
        self.data[i] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    pub fn volume_mm3(&self) -> f64 {
        self.count() as f64 * self.geom.voxel_volume()
    }

    /// Inclusive voxel bounding box of the foreground, if any.
    pub fn bounding_box(&self) -> Option<([usize; 3], [usize; 3])> {
        let mut lo = [usize::MAX; 3];
        let mut hi = [0usize; 3];
        let mut any = false;
        for (i, _) in self.data.iter().enumerate().filter(|(_, &b)| b) {
            let c = self.geom.coords(i);
            for a in 0..3 {
                lo[a] = lo[a].min(c[a]);
                hi[a] = hi[a].max(c[a]);
            }
            any = true;
        }
        any.then_some((lo, hi))
    }

    pub fn to_mask(&self, label: Label) -> Mask3D {
        Mask3D {
            geom: self.geom,
            labels: self.data.iter().map(|&b| if b { label } else { Label::Background }).collect(),
        }
    }

    pub fn crop(&self, lo: [usize; 3], hi: [usize; 3]) -> Result<Self, VolumeError> {
        let geom = crop_geometry(&self.geom, lo, hi)?;
        let mut data = Vec::with_capacity(geom.len());
        for z in lo[2]..hi[2] {
            for y in lo[1]..hi[1] {
                let start = self.geom.index(lo[0], y, z);
                data.extend_from_slice(&self.data[start..start + (hi[0] - lo[0])]);
            }
        }
        Ok(Self { geom, data })
    }
}
