//! C ABI over `crlm-core`.
//!
//! Volumes and masks cross the boundary as opaque handles that the caller
//! releases with the matching `*_free` function. Every fallible call returns
//! a [`CrlmStatus`]; on failure the message is available from
//! [`crlm_last_error`] on the same thread. Panics never unwind into C.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use crlm_core::evalkit::dice;
use crlm_core::pipeline::{run_end_to_end, RunConfig};
use crlm_core::promptseg::{segmenter_by_name, PromptPoint};
use crlm_core::samonai::{samonai_segment, PropagationConfig};
use crlm_core::survstats::concordance_index;
use crlm_core::volgrid::{load_mask, load_volume, save_mask, Geometry, Label, Mask3D, SliceAddress, View, Volume3D};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CrlmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Failed = 4,
    Panic = 5,
}

/// Opaque image volume.
pub struct CrlmVolume(Volume3D);

/// Opaque label mask (0 background, 1 liver, 2 tumor, 3 spleen).
pub struct CrlmMask(Mask3D);

thread_local! {
    static LAST_ERROR: RefCell<Vec<u8>> = const { RefCell::new(Vec::new()) };
}

fn set_error(msg: &str) {
    LAST_ERROR.with(|e| {
        let mut v = e.borrow_mut();
        v.clear();
        v.extend(msg.bytes().filter(|&b| b != 0));
    });
}

struct Fail(CrlmStatus, String);

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> CrlmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            CrlmStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            CrlmStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(Fail(CrlmStatus::NullPointer, "null path".into()));
    }
    let s = CStr::from_ptr(p).to_str().map_err(|e| Fail(CrlmStatus::InvalidArgument, e.to_string()))?;
    Ok(PathBuf::from(s))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize) -> Result<&'a [T], Fail> {
    if p.is_null() {
        return Err(Fail(CrlmStatus::NullPointer, "null array".into()));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn handle<'a, T>(p: *const T) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| Fail(CrlmStatus::NullPointer, "null handle".into()))
}

unsafe fn out<'a, T>(p: *mut T) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| Fail(CrlmStatus::NullPointer, "null output pointer".into()))
}

fn label_arg(code: u8) -> Result<Label, Fail> {
    Label::from_code(code).ok_or_else(|| Fail(CrlmStatus::InvalidArgument, format!("unknown label {code}")))
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length in bytes.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn crlm_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Loads a NIfTI volume or a raw volume with JSON sidecar.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out_volume` must be writable.
#[no_mangle]
pub unsafe extern "C" fn crlm_volume_load(path: *const c_char, out_volume: *mut *mut CrlmVolume) -> CrlmStatus {
    guard(|| {
        let slot = out(out_volume)?;
        let v = load_volume(path_arg(path)?).map_err(|e| Fail(CrlmStatus::Io, e.to_string()))?;
        *slot = Box::into_raw(Box::new(CrlmVolume(v)));
        Ok(())
    })
}

/// Builds a volume from `dims[0]*dims[1]*dims[2]` intensities in x-fastest order.
///
/// # Safety
/// `dims` and `spacing` must point to 3 values, `data` to `len` values.
#[no_mangle]
pub unsafe extern "C" fn crlm_volume_from_data(
    dims: *const usize,
    spacing: *const f64,
    data: *const f64,
    len: usize,
    out_volume: *mut *mut CrlmVolume,
) -> CrlmStatus {
    guard(|| {
        let slot = out(out_volume)?;
        let d = slice_arg(dims, 3)?;
        let s = slice_arg(spacing, 3)?;
        let data = slice_arg(data, len)?.to_vec();
        let g = Geometry::new([d[0], d[1], d[2]], [s[0], s[1], s[2]], [0.0; 3])
            .map_err(|e| Fail(CrlmStatus::InvalidArgument, e.to_string()))?;
        let v = Volume3D::new(g, data).map_err(|e| Fail(CrlmStatus::InvalidArgument, e.to_string()))?;
        *slot = Box::into_raw(Box::new(CrlmVolume(v)));
        Ok(())
    })
}

/// # Safety
/// `volume` must be a live handle; `out_dims` must point to 3 writable values.
#[no_mangle]
pub unsafe extern "C" fn crlm_volume_dims(volume: *const CrlmVolume, out_dims: *mut usize) -> CrlmStatus {
    guard(|| {
        let v = handle(volume)?;
        if out_dims.is_null() {
            return Err(Fail(CrlmStatus::NullPointer, "null output pointer".into()));
        }
        std::ptr::copy_nonoverlapping(v.0.dims().as_ptr(), out_dims, 3);
        Ok(())
    })
}

/// # Safety
/// `volume` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn crlm_volume_free(volume: *mut CrlmVolume) {
    if !volume.is_null() {
        drop(Box::from_raw(volume));
    }
}

/// Propagates one positive click through the volume. `view` is 0 axial,
/// 1 coronal, 2 sagittal. `segmenter` may be null for the default. The
/// result is stored under `label`.
///
/// # Safety
/// Handles and pointers must be valid; `segmenter` null or NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn crlm_samonai_segment(
    volume: *const CrlmVolume,
    view: u32,
    index: usize,
    row: usize,
    col: usize,
    segmenter: *const c_char,
    label: u8,
    out_mask: *mut *mut CrlmMask,
) -> CrlmStatus {
    guard(|| {
        let slot = out(out_mask)?;
        let v = &handle(volume)?.0;
        let view = *View::ALL
            .get(view as usize)
            .ok_or_else(|| Fail(CrlmStatus::InvalidArgument, format!("unknown view {view}")))?;
        let label = label_arg(label)?;
        let name = if segmenter.is_null() {
            "region-grow".to_string()
        } else {
            CStr::from_ptr(segmenter).to_str().map_err(|e| Fail(CrlmStatus::InvalidArgument, e.to_string()))?.to_string()
        };
        let seg = segmenter_by_name(&name).map_err(|e| Fail(CrlmStatus::InvalidArgument, e.to_string()))?;
        let res = samonai_segment(
            v,
            SliceAddress::new(view, index),
            &[PromptPoint::positive(row, col)],
            seg.as_ref(),
            &PropagationConfig::default(),
        )
        .map_err(|e| Fail(CrlmStatus::Failed, e.to_string()))?;
        let labels = res.mask.data().iter().map(|&b| if b { label } else { Label::Background }).collect();
        let m = Mask3D::new(*v.geometry(), labels).map_err(|e| Fail(CrlmStatus::Failed, e.to_string()))?;
        *slot = Box::into_raw(Box::new(CrlmMask(m)));
        Ok(())
    })
}

/// # Safety
/// `path` must be NUL-terminated; `out_mask` writable.
#[no_mangle]
pub unsafe extern "C" fn crlm_mask_load(path: *const c_char, out_mask: *mut *mut CrlmMask) -> CrlmStatus {
    guard(|| {
        let slot = out(out_mask)?;
        let m = load_mask(path_arg(path)?).map_err(|e| Fail(CrlmStatus::Io, e.to_string()))?;
        *slot = Box::into_raw(Box::new(CrlmMask(m)));
        Ok(())
    })
}

/// # Safety
/// `mask` must be a live handle; `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn crlm_mask_save(mask: *const CrlmMask, path: *const c_char) -> CrlmStatus {
    guard(|| {
        let m = handle(mask)?;
        save_mask(path_arg(path)?, &m.0).map_err(|e| Fail(CrlmStatus::Io, e.to_string()))
    })
}

/// Number of voxels carrying `label`.
///
/// # Safety
/// `mask` must be a live handle; `out_count` writable.
#[no_mangle]
pub unsafe extern "C" fn crlm_mask_count(mask: *const CrlmMask, label: u8, out_count: *mut usize) -> CrlmStatus {
    guard(|| {
        let m = handle(mask)?;
        *out(out_count)? = m.0.count(label_arg(label)?);
        Ok(())
    })
}

/// Copies label codes (x fastest) into `buf`, which must hold every voxel.
///
/// # Safety
/// `mask` must be a live handle; `buf` must point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn crlm_mask_copy_labels(mask: *const CrlmMask, buf: *mut u8, len: usize) -> CrlmStatus {
    guard(|| {
        let m = handle(mask)?;
        let labels = m.0.labels();
        if buf.is_null() {
            return Err(Fail(CrlmStatus::NullPointer, "null buffer".into()));
        }
        if len < labels.len() {
            return Err(Fail(CrlmStatus::InvalidArgument, format!("buffer holds {len} of {} voxels", labels.len())));
        }
        let dst = std::slice::from_raw_parts_mut(buf, labels.len());
        for (d, l) in dst.iter_mut().zip(labels) {
            *d = *l as u8;
        }
        Ok(())
    })
}

/// # Safety
/// `mask` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn crlm_mask_free(mask: *mut CrlmMask) {
    if !mask.is_null() {
        drop(Box::from_raw(mask));
    }
}

/// Dice overlap of one label between two masks on the same grid.
///
/// # Safety
/// Both handles must be live; `out_dice` writable.
#[no_mangle]
pub unsafe extern "C" fn crlm_dice(a: *const CrlmMask, b: *const CrlmMask, label: u8, out_dice: *mut f64) -> CrlmStatus {
    guard(|| {
        let (a, b) = (handle(a)?, handle(b)?);
        let l = label_arg(label)?;
        *out(out_dice)? =
            dice(&a.0.binary(l), &b.0.binary(l)).map_err(|e| Fail(CrlmStatus::InvalidArgument, e.to_string()))?;
        Ok(())
    })
}

/// Harrell's concordance index. `events` holds 0 (censored) or 1.
///
/// # Safety
/// Each array must hold `n` values; `out_c` writable.
#[no_mangle]
pub unsafe extern "C" fn crlm_concordance_index(
    times: *const f64,
    events: *const u8,
    risks: *const f64,
    n: usize,
    out_c: *mut f64,
) -> CrlmStatus {
    guard(|| {
        let t = slice_arg(times, n)?;
        let e: Vec<bool> = slice_arg(events, n)?.iter().map(|&v| v != 0).collect();
        let r = slice_arg(risks, n)?;
        *out(out_c)? = concordance_index(t, &e, r).map_err(|e| Fail(CrlmStatus::InvalidArgument, e.to_string()))?;
        Ok(())
    })
}

/// Runs the full batch pipeline described by a JSON config file.
///
/// # Safety
/// `config_path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn crlm_run_pipeline(config_path: *const c_char) -> CrlmStatus {
    guard(|| {
        let cfg = RunConfig::load(&path_arg(config_path)?).map_err(|e| Fail(CrlmStatus::InvalidArgument, e.to_string()))?;
        run_end_to_end(&cfg).map(|_| ()).map_err(|e| Fail(CrlmStatus::Failed, e.to_string()))
    })
}
