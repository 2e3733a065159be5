//! NIfTI-1 (`.nii`, `.nii.gz`) and raw+JSON sidecar readers and writers.
//!
//! Sidecar layout: `name.json` holds
//! `{"dims":[nx,ny,nz],"spacing":[..],"origin":[..],"dtype":"f32"}` and an
//! optional `"data_file"`; the payload (default `name.raw`) is the voxel
//! buffer in little-endian order, `x` fastest.

use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use serde::{Deserialize, Serialize};

use super::{Geometry, Label, Mask3D, Volume3D, VolumeError};

const NIFTI_HEADER_SIZE: usize = 348;
const NIFTI_VOX_OFFSET: usize = 352;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> VolumeError + '_ {
    move |source| VolumeError::Io { path: path.display().to_string(), source }
}

fn read_all(path: &Path) -> Result<Vec<u8>, VolumeError> {
    let mut raw = Vec::new();
    File::open(path).and_then(|mut f| f.read_to_end(&mut raw)).map_err(io_err(path))?;
    if raw.len() >= 2 && raw[0] == 0x1f && raw[1] == 0x8b {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..]).read_to_end(&mut out).map_err(io_err(path))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn is_sidecar(path: &Path) -> bool {
    matches!(path.extension().and_then(|e| e.to_str()), Some("json") | Some("raw"))
}

/// Loads a scalar volume. Integer datatypes are widened to `f64` and the
/// NIfTI intensity scaling (`scl_slope`, `scl_inter`) is applied.
pub fn load_volume(path: impl AsRef<Path>) -> Result<Volume3D, VolumeError> {
    let path = path.as_ref();
    let (geom, data) = if is_sidecar(path) { read_raw(path)? } else { read_nifti(path)? };
    Volume3D::new(geom, data)
}

/// Loads a label mask; every voxel must carry one of the declared label codes.
pub fn load_mask(path: impl AsRef<Path>) -> Result<Mask3D, VolumeError> {
    let path = path.as_ref();
    let (geom, data) = if is_sidecar(path) { read_raw(path)? } else { read_nifti(path)? };
    labels_from_values(geom, &data)
}

/// Decodes an in-memory (uncompressed) NIfTI-1 label mask.
pub fn mask_from_nifti_bytes(bytes: &[u8]) -> Result<Mask3D, VolumeError> {
    let (geom, data) = parse_nifti(bytes)?;
    labels_from_values(geom, &data)
}

fn labels_from_values(geom: Geometry, data: &[f64]) -> Result<Mask3D, VolumeError> {
    let labels = data
        .iter()
        .map(|&v| {
            if v.fract() != 0.0 || !(0.0..=255.0).contains(&v) {
                return Err(VolumeError::InvalidLabel(v));
            }
            Label::from_code(v as u8).ok_or(VolumeError::InvalidLabel(v))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Mask3D::new(geom, labels)
}

/// Writes a float64 NIfTI-1 volume; gzip-compressed when the path ends in `.gz`.
pub fn save_volume(path: impl AsRef<Path>, v: &Volume3D) -> Result<(), VolumeError> {
    let mut payload = Vec::with_capacity(v.data().len() * 8);
    for x in v.data() {
        payload.extend_from_slice(&x.to_le_bytes());
    }
    write_nifti(path.as_ref(), v.geometry(), 64, 64, &payload)
}

/// Writes a uint8 NIfTI-1 label mask.
pub fn save_mask(path: impl AsRef<Path>, m: &Mask3D) -> Result<(), VolumeError> {
    let payload: Vec<u8> = m.labels().iter().map(|l| l.code()).collect();
    write_nifti(path.as_ref(), m.geometry(), 2, 8, &payload)
}

struct Endian {
    big: bool,
}

impl Endian {
    fn i16(&self, b: &[u8], off: usize) -> i16 {
        let a = [b[off], b[off + 1]];
        if self.big { i16::from_be_bytes(a) } else { i16::from_le_bytes(a) }
    }
    fn f32(&self, b: &[u8], off: usize) -> f32 {
        let a = [b[off], b[off + 1], b[off + 2], b[off + 3]];
        if self.big { f32::from_be_bytes(a) } else { f32::from_le_bytes(a) }
    }
}

fn read_nifti(path: &Path) -> Result<(Geometry, Vec<f64>), VolumeError> {
    let bytes = read_all(path)?;
    parse_nifti(&bytes)
}

pub(crate) fn parse_nifti(bytes: &[u8]) -> Result<(Geometry, Vec<f64>), VolumeError> {
    if bytes.len() < NIFTI_HEADER_SIZE {
        return Err(VolumeError::Truncated { expected: NIFTI_HEADER_SIZE, actual: bytes.len() });
    }
    let magic = &bytes[344..348];
    if magic != b"n+1\0" && magic != b"ni1\0" {
        return Err(VolumeError::BadMagic);
    }
    let le = i32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]);
    let be = i32::from_be_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]);
    let e = match (le, be) {
        (348, _) => Endian { big: false },
        (_, 348) => Endian { big: true },
        _ => return Err(VolumeError::BadMagic),
    };

    let ndim = e.i16(bytes, 40);
    if !(1..=7).contains(&ndim) {
        return Err(VolumeError::InvalidGeometry(format!("dim[0] = {ndim}")));
    }
    let mut dims = [1i64; 3];
    for (a, d) in dims.iter_mut().enumerate().take((ndim as usize).min(3)) {
        *d = e.i16(bytes, 42 + 2 * a) as i64;
    }
    if dims.iter().any(|&d| d <= 0) {
        return Err(VolumeError::NonPositiveDims(dims));
    }
    let datatype = e.i16(bytes, 70) as i32;
    let mut spacing = [1.0f64; 3];
    for (a, s) in spacing.iter_mut().enumerate().take((ndim as usize).min(3)) {
        *s = (e.f32(bytes, 80 + 4 * a) as f64).abs();
    }
    let vox_offset = e.f32(bytes, 108).max(0.0) as usize;
    let slope = e.f32(bytes, 112) as f64;
    let inter = e.f32(bytes, 116) as f64;
    let qform = e.i16(bytes, 252);
    let sform = e.i16(bytes, 254);
    let origin = if qform > 0 {
        [e.f32(bytes, 268) as f64, e.f32(bytes, 272) as f64, e.f32(bytes, 276) as f64]
    } else if sform > 0 {
        [e.f32(bytes, 292) as f64, e.f32(bytes, 308) as f64, e.f32(bytes, 324) as f64]
    } else {
        [0.0; 3]
    };

    let geom = Geometry::new(dims.map(|d| d as usize), spacing, origin)?;
    let width = datatype_width(datatype)?;
    let n = geom.len();
    let start = vox_offset.max(NIFTI_HEADER_SIZE);
    let needed = start + n * width;
    if bytes.len() < needed {
        return Err(VolumeError::Truncated { expected: needed, actual: bytes.len() });
    }
    let mut data = decode(&bytes[start..needed], datatype, e.big)?;
    if slope != 0.0 && slope.is_finite() && inter.is_finite() && !(slope == 1.0 && inter == 0.0) {
        for v in &mut data {
            *v = *v * slope + inter;
        }
    }
    Ok((geom, data))
}

fn datatype_width(code: i32) -> Result<usize, VolumeError> {
    Ok(match code {
        2 | 256 => 1,
        4 | 512 => 2,
        8 | 16 | 768 => 4,
        64 => 8,
        other => return Err(VolumeError::UnsupportedDatatype(other)),
    })
}

fn decode(buf: &[u8], code: i32, big: bool) -> Result<Vec<f64>, VolumeError> {
    macro_rules! chunks {
        ($t:ty, $w:expr) => {
            buf.chunks_exact($w)
                .map(|c| {
                    let a: [u8; $w] = c.try_into().unwrap();
                    (if big { <$t>::from_be_bytes(a) } else { <$t>::from_le_bytes(a) }) as f64
                })
                .collect()
        };
    }
    Ok(match code {
        2 => buf.iter().map(|&b| b as f64).collect(),
        256 => buf.iter().map(|&b| b as i8 as f64).collect(),
        4 => chunks!(i16, 2),
        512 => chunks!(u16, 2),
        8 => chunks!(i32, 4),
        768 => chunks!(u32, 4),
        16 => chunks!(f32, 4),
        64 => chunks!(f64, 8),
        other => return Err(VolumeError::UnsupportedDatatype(other)),
    })
}

/// Uncompressed single-file NIfTI-1 encoding of a label mask.
pub fn mask_to_nifti_bytes(m: &Mask3D) -> Vec<u8> {
    let mut out = nifti_header(m.geometry(), 2, 8);
    out.extend(m.labels().iter().map(|l| l.code()));
    out
}

fn nifti_header(g: &Geometry, datatype: i16, bitpix: i16) -> Vec<u8> {
    let mut h = vec![0u8; NIFTI_VOX_OFFSET];
    let put_i16 = |h: &mut [u8], off: usize, v: i16| h[off..off + 2].copy_from_slice(&v.to_le_bytes());
    let put_f32 = |h: &mut [u8], off: usize, v: f32| h[off..off + 4].copy_from_slice(&v.to_le_bytes());
    h[0..4].copy_from_slice(&(NIFTI_HEADER_SIZE as i32).to_le_bytes());
    put_i16(&mut h, 40, 3);
    for a in 0..3 {
        put_i16(&mut h, 42 + 2 * a, g.dims[a] as i16);
    }
    for a in 3..7 {
        put_i16(&mut h, 42 + 2 * a, 1);
    }
    put_i16(&mut h, 70, datatype);
    put_i16(&mut h, 72, bitpix);
    put_f32(&mut h, 76, 1.0);
    for a in 0..3 {
        put_f32(&mut h, 80 + 4 * a, g.spacing[a] as f32);
    }
    put_f32(&mut h, 108, NIFTI_VOX_OFFSET as f32);
    put_f32(&mut h, 112, 1.0);
    h[123] = 2; // xyzt_units: millimetres
    put_i16(&mut h, 252, 1);
    put_i16(&mut h, 254, 1);
    put_f32(&mut h, 268, g.origin[0] as f32);
    put_f32(&mut h, 272, g.origin[1] as f32);
    put_f32(&mut h, 276, g.origin[2] as f32);
    // srow_x/y/z: diagonal spacing with the origin in the last column
    for a in 0..3 {
        let row = 280 + 16 * a;
        put_f32(&mut h, row + 4 * a, g.spacing[a] as f32);
        put_f32(&mut h, row + 12, g.origin[a] as f32);
    }
    h[344..348].copy_from_slice(b"n+1\0");
    h
}

fn write_nifti(path: &Path, g: &Geometry, datatype: i16, bitpix: i16, payload: &[u8]) -> Result<(), VolumeError> {
    let h = nifti_header(g, datatype, bitpix);
    let gz = path.to_string_lossy().ends_with(".gz");
    let file = File::create(path).map_err(io_err(path))?;
    let result = if gz {
        let mut enc = GzEncoder::new(file, Compression::default());
        enc.write_all(&h).and_then(|_| enc.write_all(payload)).and_then(|_| enc.finish().map(|_| ()))
    } else {
        let mut f = file;
        f.write_all(&h).and_then(|_| f.write_all(payload))
    };
    result.map_err(io_err(path))
}

/// Element type of a raw payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RawDtype {
    U8,
    I16,
    U16,
    I32,
    F32,
    F64,
}

impl RawDtype {
    fn nifti_code(self) -> i32 {
        match self {
            RawDtype::U8 => 2,
            RawDtype::I16 => 4,
            RawDtype::U16 => 512,
            RawDtype::I32 => 8,
            RawDtype::F32 => 16,
            RawDtype::F64 => 64,
        }
    }
}

/// JSON sidecar describing a raw little-endian voxel payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawHeader {
    pub dims: [i64; 3],
    pub spacing: [f64; 3],
    #[serde(default)]
    pub origin: [f64; 3],
    pub dtype: RawDtype,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_file: Option<String>,
}

fn sidecar_paths(path: &Path) -> (PathBuf, PathBuf) {
    match path.extension().and_then(|e| e.to_str()) {
        Some("raw") => (path.with_extension("json"), path.to_path_buf()),
        _ => (path.to_path_buf(), path.with_extension("raw")),
    }
}

fn read_raw(path: &Path) -> Result<(Geometry, Vec<f64>), VolumeError> {
    let (json_path, default_payload) = sidecar_paths(path);
    let text = std::fs::read_to_string(&json_path).map_err(io_err(&json_path))?;
    let header: RawHeader = serde_json::from_str(&text).map_err(|e| VolumeError::Sidecar(e.to_string()))?;
    if header.dims.iter().any(|&d| d <= 0) {
        return Err(VolumeError::NonPositiveDims(header.dims));
    }
    let payload_path = match &header.data_file {
        Some(name) => json_path.parent().unwrap_or(Path::new(".")).join(name),
        None => default_payload,
    };
    let bytes = read_all(&payload_path)?;
    let geom = Geometry::new(header.dims.map(|d| d as usize), header.spacing, header.origin)?;
    let code = header.dtype.nifti_code();
    let needed = geom.len() * datatype_width(code)?;
    if bytes.len() < needed {
        return Err(VolumeError::Truncated { expected: needed, actual: bytes.len() });
    }
    let data = decode(&bytes[..needed], code, false)?;
    Ok((geom, data))
}

/// Writes `v` as a raw payload plus JSON sidecar. `path` names either file;
/// the other is derived by swapping the extension.
pub fn write_raw_volume(path: impl AsRef<Path>, v: &Volume3D, dtype: RawDtype) -> Result<(), VolumeError> {
    let (json_path, payload_path) = sidecar_paths(path.as_ref());
    let g = v.geometry();
    let header = RawHeader {
        dims: g.dims.map(|d| d as i64),
        spacing: g.spacing,
        origin: g.origin,
        dtype,
        data_file: payload_path.file_name().map(|f| f.to_string_lossy().into_owned()),
    };
    let mut payload = Vec::new();
    for &x in v.data() {
        match dtype {
            RawDtype::U8 => payload.push(x as u8),
            RawDtype::I16 => payload.extend_from_slice(&(x as i16).to_le_bytes()),
            RawDtype::U16 => payload.extend_from_slice(&(x as u16).to_le_bytes()),
            RawDtype::I32 => payload.extend_from_slice(&(x as i32).to_le_bytes()),
            RawDtype::F32 => payload.extend_from_slice(&(x as f32).to_le_bytes()),
            RawDtype::F64 => payload.extend_from_slice(&x.to_le_bytes()),
        }
    }
    let json = serde_json::to_string_pretty(&header).map_err(|e| VolumeError::Sidecar(e.to_string()))?;
    std::fs::write(&json_path, json).map_err(io_err(&json_path))?;
    std::fs::write(&payload_path, payload).map_err(io_err(&payload_path))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header_bytes(dims: [i16; 3], pixdim: [f32; 3], datatype: i16) -> Vec<u8> {
        let mut h = vec![0u8; NIFTI_VOX_OFFSET];
        h[0..4].copy_from_slice(&348i32.to_le_bytes());
        h[40..42].copy_from_slice(&3i16.to_le_bytes());
        for a in 0..3 {
            h[42 + 2 * a..44 + 2 * a].copy_from_slice(&dims[a].to_le_bytes());
            h[80 + 4 * a..84 + 4 * a].copy_from_slice(&pixdim[a].to_le_bytes());
        }
        h[70..72].copy_from_slice(&datatype.to_le_bytes());
        h[108..112].copy_from_slice(&352f32.to_le_bytes());
        h[344..348].copy_from_slice(b"n+1\0");
        h
    }

    #[test]
    fn header_transcription() {
        let mut b = header_bytes([96, 96, 40], [0.8, 0.8, 3.0], 2);
        b.resize(352 + 96 * 96 * 40, 0);
        let (g, data) = parse_nifti(&b).unwrap();
        assert_eq!(g.dims, [96, 96, 40]);
        assert!((g.spacing[0] - 0.8).abs() < 1e-6 && (g.spacing[2] - 3.0).abs() < 1e-12);
        assert_eq!(data.len(), 96 * 96 * 40);
    }

    #[test]
    fn distinct_errors() {
        let mut bad = header_bytes([2, 2, 2], [1.0; 3], 2);
        bad[344..348].copy_from_slice(b"xyz\0");
        assert!(matches!(parse_nifti(&bad), Err(VolumeError::BadMagic)));

        let zero = header_bytes([2, 0, 2], [1.0; 3], 2);
        assert!(matches!(parse_nifti(&zero), Err(VolumeError::NonPositiveDims(_))));

        let short = header_bytes([2, 2, 2], [1.0; 3], 16);
        assert!(matches!(parse_nifti(&short), Err(VolumeError::Truncated { expected: 384, .. })));
    }

    #[test]
    fn big_endian_header() {
        let mut h = vec![0u8; 352 + 8];
        h[0..4].copy_from_slice(&348i32.to_be_bytes());
        h[40..42].copy_from_slice(&3i16.to_be_bytes());
        for a in 0..3 {
            h[42 + 2 * a..44 + 2 * a].copy_from_slice(&[1i16, 2, 2][a].to_be_bytes());
            h[80 + 4 * a..84 + 4 * a].copy_from_slice(&1f32.to_be_bytes());
        }
        h[70..72].copy_from_slice(&4i16.to_be_bytes());
        h[108..112].copy_from_slice(&352f32.to_be_bytes());
        h[344..348].copy_from_slice(b"n+1\0");
        for (i, v) in [1i16, -2, 3, 300].iter().enumerate() {
            h[352 + 2 * i..354 + 2 * i].copy_from_slice(&v.to_be_bytes());
        }
        let (g, data) = parse_nifti(&h).unwrap();
        assert_eq!(g.dims, [1, 2, 2]);
        assert_eq!(data, vec![1.0, -2.0, 3.0, 300.0]);
    }

    #[test]
    fn scaling_applied() {
        let mut b = header_bytes([2, 1, 1], [1.0; 3], 2);
        b[112..116].copy_from_slice(&2f32.to_le_bytes());
        b[116..120].copy_from_slice(&(-1f32).to_le_bytes());
        b.extend_from_slice(&[3, 5]);
        let (_, data) = parse_nifti(&b).unwrap();
        assert_eq!(data, vec![5.0, 9.0]);
    }
}
