//! Grid resampling: nearest neighbour for label maps, interpolating cubic
//! B-spline (recursive prefilter, mirror boundaries) for intensities.
//!
//! The output lattice covers the same physical extent as the input:
//! `dims = ceil(extent / spacing)`, with the first output voxel centred half
//! an output voxel inside the input's leading cell edge.

use serde::{Deserialize, Serialize};

use super::{BinaryMask, Geometry, Label, Mask3D, Volume3D, VolumeError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Interpolation {
    Nearest,
    CubicBspline,
}

const POLE: f64 = -0.267_949_192_431_122_7; // sqrt(3) - 2

fn target_geometry(g: &Geometry, target: [f64; 3]) -> Result<Geometry, VolumeError> {
    if target.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(VolumeError::InvalidSpacing(target));
    }
    let ext = g.extent();
    let mut dims = [0usize; 3];
    let mut origin = [0.0; 3];
    for a in 0..3 {
        dims[a] = ((ext[a] / target[a]) - 1e-9).ceil().max(1.0) as usize;
        origin[a] = g.origin[a] - 0.5 * g.spacing[a] + 0.5 * target[a];
    }
    Geometry::new(dims, target, origin)
}

/// Continuous input index sampled by output voxel `j` along an axis.
#[inline]
fn source_position(j: usize, s_in: f64, s_out: f64) -> f64 {
    (j as f64 * s_out + 0.5 * (s_out - s_in)) / s_in
}

fn mirror(mut k: i64, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as i64 - 1);
    k = k.rem_euclid(period);
    if k >= n as i64 {
        k = period - k;
    }
    k as usize
}

/// In-place conversion of samples into cubic B-spline coefficients.
fn prefilter(c: &mut [f64]) {
    let n = c.len();
    if n < 2 {
        return;
    }
    let z = POLE;
    let lambda = (1.0 - z) * (1.0 - 1.0 / z);
    for v in c.iter_mut() {
        *v *= lambda;
    }
    // causal initialisation under mirror-symmetric extension
    let zn = z.powi(n as i32 - 1);
    let mut sum = c[0] + zn * c[n - 1];
    let z2n = zn * zn;
    let mut zk = z;
    let mut zk_back = zn * zn / z;
    for v in c.iter().take(n - 1).skip(1) {
        sum += (zk + zk_back) * v;
        zk *= z;
        zk_back /= z;
    }
    c[0] = sum / (1.0 - z2n);
    for k in 1..n {
        c[k] += z * c[k - 1];
    }
    c[n - 1] = (z / (z * z - 1.0)) * (c[n - 1] + z * c[n - 2]);
    for k in (0..n - 1).rev() {
        c[k] = z * (c[k + 1] - c[k]);
    }
}

#[inline]
fn bspline_weights(t: f64) -> [f64; 4] {
    let t2 = t * t;
    let t3 = t2 * t;
    let omt = 1.0 - t;
    [
        omt * omt * omt / 6.0,
        (3.0 * t3 - 6.0 * t2 + 4.0) / 6.0,
        (-3.0 * t3 + 3.0 * t2 + 3.0 * t + 1.0) / 6.0,
        t3 / 6.0,
    ]
}

/// Interpolates a prefiltered line at the requested continuous positions.
fn eval_line(coef: &[f64], positions: &[f64], out: &mut [f64]) {
    let n = coef.len();
    for (o, &u) in out.iter_mut().zip(positions) {
        let base = u.floor();
        let w = bspline_weights(u - base);
        let b = base as i64;
        *o = (0..4).map(|i| w[i] * coef[mirror(b - 1 + i as i64, n)]).sum();
    }
}

/// One separable pass along `axis`, from `src` on `in_dims` to a buffer with
/// `out_len` samples on that axis.
fn pass(
    src: &[f64],
    in_dims: [usize; 3],
    axis: usize,
    out_len: usize,
    s_in: f64,
    s_out: f64,
    order: Interpolation,
) -> (Vec<f64>, [usize; 3]) {
    let mut out_dims = in_dims;
    out_dims[axis] = out_len;
    let n_in = in_dims[axis];
    let positions: Vec<f64> = (0..out_len).map(|j| source_position(j, s_in, s_out)).collect();
    let nearest: Vec<usize> = positions
        .iter()
        .map(|&u| (u.round().max(0.0) as usize).min(n_in - 1))
        .collect();
    let stride_in = [1, in_dims[0], in_dims[0] * in_dims[1]];
    let stride_out = [1, out_dims[0], out_dims[0] * out_dims[1]];
    let others: Vec<usize> = (0..3).filter(|&a| a != axis).collect();
    let (a1, a2) = (others[0], others[1]);

    let mut dst = vec![0.0; out_dims[0] * out_dims[1] * out_dims[2]];
    let mut line = vec![0.0; n_in];
    let mut res = vec![0.0; out_len];
    for i2 in 0..in_dims[a2] {
        for i1 in 0..in_dims[a1] {
            let base_in = i1 * stride_in[a1] + i2 * stride_in[a2];
            let base_out = i1 * stride_out[a1] + i2 * stride_out[a2];
            for (k, l) in line.iter_mut().enumerate() {
                *l = src[base_in + k * stride_in[axis]];
            }
            match order {
                Interpolation::Nearest => {
                    for (r, &k) in res.iter_mut().zip(&nearest) {
                        *r = line[k];
                    }
                }
                Interpolation::CubicBspline => {
                    prefilter(&mut line);
                    eval_line(&line, &positions, &mut res);
                }
            }
            for (j, r) in res.iter().enumerate() {
                dst[base_out + j * stride_out[axis]] = *r;
            }
        }
    }
    (dst, out_dims)
}

fn resample_buffer(
    data: &[f64],
    g: &Geometry,
    target: [f64; 3],
    order: Interpolation,
) -> Result<(Geometry, Vec<f64>), VolumeError> {
    let out = target_geometry(g, target)?;
    if g.spacing == target {
        return Ok((*g, data.to_vec()));
    }
    let mut buf = data.to_vec();
    let mut dims = g.dims;
    for axis in 0..3 {
        if g.spacing[axis] == target[axis] {
            continue;
        }
        let (next, nd) = pass(&buf, dims, axis, out.dims[axis], g.spacing[axis], target[axis], order);
        buf = next;
        dims = nd;
    }
    Ok((out, buf))
}

/// Resamples an image onto an isotropic or anisotropic target spacing.
pub fn resample(v: &Volume3D, target_spacing: [f64; 3], order: Interpolation) -> Result<Volume3D, VolumeError> {
    let (g, data) = resample_buffer(v.data(), v.geometry(), target_spacing, order)?;
    Volume3D::new(g, data)
}

/// Nearest-neighbour resampling of a label mask.
pub fn resample_mask(m: &Mask3D, target_spacing: [f64; 3]) -> Result<Mask3D, VolumeError> {
    let codes: Vec<f64> = m.labels().iter().map(|l| l.code() as f64).collect();
    let (g, data) = resample_buffer(&codes, m.geometry(), target_spacing, Interpolation::Nearest)?;
    let labels = data
        .into_iter()
        .map(|c| Label::from_code(c as u8).ok_or(VolumeError::InvalidLabel(c)))
        .collect::<Result<Vec<_>, _>>()?;
    Mask3D::new(g, labels)
}

pub fn resample_binary(m: &BinaryMask, target_spacing: [f64; 3]) -> Result<BinaryMask, VolumeError> {
    let codes: Vec<f64> = m.data().iter().map(|&b| b as u8 as f64).collect();
    let (g, data) = resample_buffer(&codes, m.geometry(), target_spacing, Interpolation::Nearest)?;
    BinaryMask::new(g, data.into_iter().map(|c| c != 0.0).collect())
}
