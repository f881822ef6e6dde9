//! C ABI over the `hcmfl` core crate.
//!
//! Handles are opaque pointers created by `*_parse`, `*_init` or `*_load`
//! and released with the matching `*_free`. Every fallible function returns
//! an [`HcmflStatus`]; on failure a message is available from
//! [`hcmfl_last_error`] on the calling thread until the next failing call.
//! Panics never cross the boundary and surface as `HCMFL_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use hcmfl::keyframes::{select_from_distances, select_keyframes, KeyframeConfig, Raster};
use hcmfl::metrics::{argmax, evaluate};
use hcmfl::{Error, FusionNetwork, NetworkShape, VenueHierarchy};
use ndarray::ArrayView2;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HcmflStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Parse = 3,
    Io = 4,
    DimensionMismatch = 5,
    Inconsistent = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

/// Validated venue hierarchy.
pub struct HcmflHierarchy {
    inner: VenueHierarchy,
}

/// Fusion network with its softmax head.
pub struct HcmflNetwork {
    inner: FusionNetwork,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(HcmflStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Parse { .. } | Error::Json(_) | Error::Checkpoint(_) => HcmflStatus::Parse,
            Error::Io(_) => HcmflStatus::Io,
            Error::DimensionMismatch { .. } | Error::LengthMismatch(..) => HcmflStatus::DimensionMismatch,
            Error::Inconsistent(_) => HcmflStatus::Inconsistent,
            Error::Cycle(_) | Error::MultipleRoots(_) | Error::LayerSkip { .. } | Error::DanglingParent { .. } => {
                HcmflStatus::Parse
            }
            _ => HcmflStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(HcmflStatus::NullPointer, format!("`{what}` is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> HcmflStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => HcmflStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            HcmflStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(HcmflStatus::InvalidArgument, format!("`{what}` is not UTF-8")))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_out<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn write_out<T>(p: *mut T, v: T, what: &str) -> Result<(), Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    p.write(v);
    Ok(())
}

/// Message for the last failure on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn hcmfl_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Static, NUL-terminated crate version.
#[no_mangle]
pub extern "C" fn hcmfl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Parse a hierarchy from edge-list or indented text.
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hcmfl_hierarchy_parse(text: *const c_char, out: *mut *mut HcmflHierarchy) -> HcmflStatus {
    guard(|| {
        let text = str_arg(text, "text")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let inner = VenueHierarchy::parse(text)?;
        write_out(out, Box::into_raw(Box::new(HcmflHierarchy { inner })), "out")
    })
}

/// # Safety
/// `h` must come from [`hcmfl_hierarchy_parse`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn hcmfl_hierarchy_free(h: *mut HcmflHierarchy) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// # Safety
/// `h` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hcmfl_hierarchy_num_leaves(h: *const HcmflHierarchy, out: *mut usize) -> HcmflStatus {
    guard(|| {
        let h = h.as_ref().ok_or_else(|| null("h"))?;
        write_out(out, h.inner.num_leaves(), "out")
    })
}

/// Node count including the virtual root.
///
/// # Safety
/// `h` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hcmfl_hierarchy_num_nodes(h: *const HcmflHierarchy, out: *mut usize) -> HcmflStatus {
    guard(|| {
        let h = h.as_ref().ok_or_else(|| null("h"))?;
        write_out(out, h.inner.len(), "out")
    })
}

/// # Safety
/// `h` must be a live handle, `name` NUL-terminated and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn hcmfl_hierarchy_leaf_index(
    h: *const HcmflHierarchy,
    name: *const c_char,
    out: *mut usize,
) -> HcmflStatus {
    guard(|| {
        let h = h.as_ref().ok_or_else(|| null("h"))?;
        let label = h.inner.label_of(str_arg(name, "name")?)?;
        write_out(out, label, "out")
    })
}

/// Copy the id of leaf `label` into `buf` with a trailing NUL. `needed`
/// receives the required buffer size even when `buf` is too small.
///
/// # Safety
/// `h` must be a live handle, `buf` writable for `len` bytes (or null with
/// `len == 0`) and `needed` valid.
#[no_mangle]
pub unsafe extern "C" fn hcmfl_hierarchy_leaf_name(
    h: *const HcmflHierarchy,
    label: usize,
    buf: *mut c_char,
    len: usize,
    needed: *mut usize,
) -> HcmflStatus {
    guard(|| {
        let h = h.as_ref().ok_or_else(|| null("h"))?;
        if label >= h.inner.num_leaves() {
            return Err(Error::LabelOutOfRange { label, num_classes: h.inner.num_leaves() }.into());
        }
        let name = h.inner.name(h.inner.leaf_node(label)).as_bytes();
        write_out(needed, name.len() + 1, "needed")?;
        if len < name.len() + 1 {
            return Err(Failure(HcmflStatus::BufferTooSmall, format!("need {} bytes, got {len}", name.len() + 1)));
        }
        let dst = slice_out(buf.cast::<u8>(), len, "buf")?;
        dst[..name.len()].copy_from_slice(name);
        dst[name.len()] = 0;
        Ok(())
    })
}

/// Fresh network with seeded hidden weights and a zero head.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hcmfl_network_init(
    input_dim: usize,
    fused_layers: usize,
    fused_units: usize,
    num_leaves: usize,
    seed: u64,
    out: *mut *mut HcmflNetwork,
) -> HcmflStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let shape = NetworkShape { input_dim, fused_layers, fused_units, num_leaves };
        let inner = FusionNetwork::init(shape, seed)?;
        write_out(out, Box::into_raw(Box::new(HcmflNetwork { inner })), "out")
    })
}

/// Load a checkpoint written by `hcmfl train` (`model.bin`).
///
/// # Safety
/// `path` must be NUL-terminated and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn hcmfl_network_load(path: *const c_char, out: *mut *mut HcmflNetwork) -> HcmflStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let inner = FusionNetwork::load(Path::new(path))?;
        write_out(out, Box::into_raw(Box::new(HcmflNetwork { inner })), "out")
    })
}

/// # Safety
/// `net` must be a live handle and `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn hcmfl_network_save(net: *const HcmflNetwork, path: *const c_char) -> HcmflStatus {
    guard(|| {
        let net = net.as_ref().ok_or_else(|| null("net"))?;
        net.inner.save(Path::new(str_arg(path, "path")?))?;
        Ok(())
    })
}

/// # Safety
/// `net` must come from an init/load call and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn hcmfl_network_free(net: *mut HcmflNetwork) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// # Safety
/// `net` must be a live handle; output pointers may be null to skip them.
#[no_mangle]
pub unsafe extern "C" fn hcmfl_network_shape(
    net: *const HcmflNetwork,
    input_dim: *mut usize,
    num_leaves: *mut usize,
) -> HcmflStatus {
    guard(|| {
        let net = net.as_ref().ok_or_else(|| null("net"))?;
        let shape = net.inner.shape();
        if !input_dim.is_null() {
            input_dim.write(shape.input_dim);
        }
        if !num_leaves.is_null() {
            num_leaves.write(shape.num_leaves);
        }
        Ok(())
    })
}

fn probabilities(net: &FusionNetwork, x: &[f64], rows: usize, cols: usize) -> Result<ndarray::Array2<f64>, Failure> {
    let view = ArrayView2::from_shape((rows, cols), x)
        .map_err(|_| Failure(HcmflStatus::DimensionMismatch, format!("{} values cannot form {rows}x{cols}", x.len())))?;
    Ok(net.predict_proba(view)?)
}

/// Row-major `rows x cols` inputs to row-major `rows x num_leaves`
/// probabilities.
///
/// # Safety
/// `x` must hold `rows * cols` doubles and `out` room for `out_len`.
#[no_mangle]
pub unsafe extern "C" fn hcmfl_network_predict_proba(
    net: *const HcmflNetwork,
    x: *const f64,
    rows: usize,
    cols: usize,
    out: *mut f64,
    out_len: usize,
) -> HcmflStatus {
    guard(|| {
        let net = net.as_ref().ok_or_else(|| null("net"))?;
        let need = rows * net.inner.shape().num_leaves;
        if out_len < need {
            return Err(Failure(HcmflStatus::BufferTooSmall, format!("need {need} doubles, got {out_len}")));
        }
        let probs = probabilities(&net.inner, slice_arg(x, rows * cols, "x")?, rows, cols)?;
        let dst = slice_out(out, out_len, "out")?;
        for (d, p) in dst.iter_mut().zip(probs.iter()) {
            *d = *p;
        }
        Ok(())
    })
}

/// Most probable leaf per row; ties go to the lower index.
///
/// # Safety
/// `x` must hold `rows * cols` doubles and `labels` room for `rows`.
#[no_mangle]
pub unsafe extern "C" fn hcmfl_network_predict(
    net: *const HcmflNetwork,
    x: *const f64,
    rows: usize,
    cols: usize,
    labels: *mut usize,
) -> HcmflStatus {
    guard(|| {
        let net = net.as_ref().ok_or_else(|| null("net"))?;
        let probs = probabilities(&net.inner, slice_arg(x, rows * cols, "x")?, rows, cols)?;
        let dst = slice_out(labels, rows, "labels")?;
        for (d, row) in dst.iter_mut().zip(probs.rows()) {
            *d = argmax(row);
        }
        Ok(())
    })
}

/// Macro- and Micro-F1 of `n` predictions against `n` truths.
///
/// # Safety
/// `preds` and `truths` must hold `n` values; `macro_f1`, `micro_f1` valid.
#[no_mangle]
pub unsafe extern "C" fn hcmfl_evaluate(
    preds: *const usize,
    truths: *const usize,
    n: usize,
    num_classes: usize,
    macro_f1: *mut f64,
    micro_f1: *mut f64,
) -> HcmflStatus {
    guard(|| {
        let r = evaluate(slice_arg(preds, n, "preds")?, slice_arg(truths, n, "truths")?, num_classes)?;
        write_out(macro_f1, r.macro_f1, "macro_f1")?;
        write_out(micro_f1, r.micro_f1, "micro_f1")
    })
}

fn emit(frames: Vec<usize>, out: &mut [usize], written: *mut usize) -> Result<(), Failure> {
    // SAFETY: callers check `written` for null.
    unsafe { written.write(frames.len()) };
    if frames.len() > out.len() {
        return Err(Failure(HcmflStatus::BufferTooSmall, format!("need {} slots, got {}", frames.len(), out.len())));
    }
    out[..frames.len()].copy_from_slice(&frames);
    Ok(())
}

/// Key frames of an `n + 1` frame video given its `n` consecutive
/// histogram distances, under the default thresholds. At most 20 indices
/// are produced; `written` receives the count.
///
/// # Safety
/// `distances` must hold `n` doubles, `out` room for `cap` indices.
#[no_mangle]
pub unsafe extern "C" fn hcmfl_select_keyframes_from_distances(
    distances: *const f64,
    n: usize,
    out: *mut usize,
    cap: usize,
    written: *mut usize,
) -> HcmflStatus {
    guard(|| {
        if written.is_null() {
            return Err(null("written"));
        }
        let d = slice_arg(distances, n, "distances")?;
        if d.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Failure(HcmflStatus::InvalidArgument, "distances must be finite and non-negative".into()));
        }
        emit(select_from_distances(d, &KeyframeConfig::default()), slice_out(out, cap, "out")?, written)
    })
}

/// Key frames of `n_frames` interleaved RGB frames of `width x height`
/// pixels stored back to back.
///
/// # Safety
/// `pixels` must hold `n_frames * width * height * 3` bytes and `out` room
/// for `cap` indices.
#[no_mangle]
pub unsafe extern "C" fn hcmfl_select_keyframes_rgb(
    pixels: *const u8,
    n_frames: usize,
    width: usize,
    height: usize,
    out: *mut usize,
    cap: usize,
    written: *mut usize,
) -> HcmflStatus {
    guard(|| {
        if written.is_null() {
            return Err(null("written"));
        }
        let frame_len = width * height * 3;
        let data = slice_arg(pixels, n_frames * frame_len, "pixels")?;
        let frames = data
            .chunks_exact(frame_len.max(1))
            .take(n_frames)
            .map(|c| Raster::new(width, height, c.to_vec()))
            .collect::<hcmfl::Result<Vec<_>>>()?;
        let picked = select_keyframes(&frames, &KeyframeConfig::default())?;
        emit(picked, slice_out(out, cap, "out")?, written)
    })
}
