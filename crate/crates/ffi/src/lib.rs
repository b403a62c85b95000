//! C ABI over `lid-align`.
//!
//! Tensors cross the boundary as opaque `LidTensor` handles. Every fallible
//! function returns a `LidStatus`; on failure the message is available from
//! `lid_last_error` on the same thread until the next failing call.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use lid_align::feature::PatchSet;
use lid_align::knn::{NeighborList, Points};
use lid_align::{metrics, Error};

/// Opaque f32 tensor.
pub struct LidTensor(lid_align::DenseTensor);

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LidStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ShapeMismatch = 3,
    Io = 4,
    Format = 5,
    /// Zero, equal or tied neighbor distances, or k out of range.
    Degenerate = 6,
    Empty = 7,
    Internal = 8,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> LidStatus {
    match e {
        Error::ShapeMismatch(_) | Error::InvalidShape { .. } | Error::DimensionMismatch { .. } => {
            LidStatus::ShapeMismatch
        }
        Error::Io { .. } => LidStatus::Io,
        Error::MalformedHeader(_)
        | Error::UnsupportedVersion(_)
        | Error::TruncatedPayload { .. }
        | Error::Image { .. }
        | Error::NonFinite { .. } => LidStatus::Format,
        Error::KTooLarge { .. }
        | Error::KTooSmall(_)
        | Error::ZeroDistance { .. }
        | Error::DegenerateNeighborhood { .. }
        | Error::NonDifferentiable { .. } => LidStatus::Degenerate,
        Error::Empty(_) | Error::RegionTooSmall(_) => LidStatus::Empty,
        _ => LidStatus::InvalidArgument,
    }
}

struct Fail(LidStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(LidStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> LidStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => LidStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            LidStatus::Internal
        }
    }
}

unsafe fn tensor<'a>(t: *const LidTensor, what: &str) -> Result<&'a lid_align::DenseTensor, Fail> {
    t.as_ref().map(|t| &t.0).ok_or_else(|| null(what))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn c_path(p: *const c_char) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(LidStatus::InvalidArgument, "path is not UTF-8".into()))?;
    Ok(PathBuf::from(s))
}

fn write<T>(out: *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    unsafe { out.write(value) };
    Ok(())
}

/// Rows of a 1-D (one point) or 2-D (`N x D`) tensor.
fn points(t: &lid_align::DenseTensor) -> Result<Points, Fail> {
    match t.shape() {
        [d] => Ok(Points::new(*d, t.to_f64())?),
        [_, d] => Ok(Points::new(*d, t.to_f64())?),
        s => Err(Fail(
            LidStatus::ShapeMismatch,
            format!("expected a vector or an N x D matrix, got shape {s:?}"),
        )),
    }
}

fn vector(t: &lid_align::DenseTensor) -> Result<Vec<f64>, Fail> {
    match t.shape() {
        [_] => Ok(t.to_f64()),
        s => Err(Fail(LidStatus::ShapeMismatch, format!("expected a vector, got shape {s:?}"))),
    }
}

fn patch_set(t: &lid_align::DenseTensor) -> Result<PatchSet, Fail> {
    let vectors = points(t)?;
    let coords = (0..vectors.len()).map(|i| (i, 0)).collect();
    Ok(PatchSet { vectors, coords })
}

/// Message of the last failed call on this thread, or NULL. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn lid_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Copies `len` floats from `data` into a new tensor of the given shape.
///
/// # Safety
/// `shape` must point to `ndim` values and `data` to `len` floats.
#[no_mangle]
pub unsafe extern "C" fn lid_tensor_new(
    shape: *const usize,
    ndim: usize,
    data: *const f32,
    len: usize,
    out: *mut *mut LidTensor,
) -> LidStatus {
    guard(|| {
        let shape = slice(shape, ndim, "shape")?.to_vec();
        let data = slice(data, len, "data")?.to_vec();
        let t = lid_align::DenseTensor::new(shape, data)?;
        write(out, Box::into_raw(Box::new(LidTensor(t))))
    })
}

/// Reads a `.dt` tensor file.
///
/// # Safety
/// `path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn lid_tensor_load(path: *const c_char, out: *mut *mut LidTensor) -> LidStatus {
    guard(|| {
        let t = lid_align::load_tensor(c_path(path)?)?;
        write(out, Box::into_raw(Box::new(LidTensor(t))))
    })
}

/// Writes a `.dt` tensor file.
///
/// # Safety
/// `t` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn lid_tensor_save(t: *const LidTensor, path: *const c_char) -> LidStatus {
    guard(|| Ok(lid_align::save_tensor(tensor(t, "tensor")?, c_path(path)?)?))
}

/// Releases a handle; NULL is ignored.
///
/// # Safety
/// `t` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn lid_tensor_free(t: *mut LidTensor) {
    if !t.is_null() {
        drop(Box::from_raw(t));
    }
}

/// Number of dimensions, or 0 for NULL.
///
/// # Safety
/// `t` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lid_tensor_ndim(t: *const LidTensor) -> usize {
    t.as_ref().map_or(0, |t| t.0.ndim())
}

/// Pointer to the shape, valid while the handle lives.
///
/// # Safety
/// `t` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lid_tensor_shape(t: *const LidTensor) -> *const usize {
    t.as_ref().map_or(ptr::null(), |t| t.0.shape().as_ptr())
}

/// Number of elements, or 0 for NULL.
///
/// # Safety
/// `t` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lid_tensor_len(t: *const LidTensor) -> usize {
    t.as_ref().map_or(0, |t| t.0.len())
}

/// Pointer to the row-major data, valid while the handle lives.
///
/// # Safety
/// `t` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lid_tensor_data(t: *const LidTensor) -> *const f32 {
    t.as_ref().map_or(ptr::null(), |t| t.0.data().as_ptr())
}

/// LID estimate from `k` ascending neighbor distances.
///
/// # Safety
/// `distances` must point to `k` values.
#[no_mangle]
pub unsafe extern "C" fn lid_mle(distances: *const f64, k: usize, out: *mut f64) -> LidStatus {
    guard(|| {
        let d = slice(distances, k, "distances")?.to_vec();
        let est = lid_align::lid_mle(NeighborList::from_distances(d)?)?;
        write(out, est.value)
    })
}

/// LID of vector `y` against the rows of `z` (`N x D`).
///
/// # Safety
/// `y` and `z` must be live handles.
#[no_mangle]
pub unsafe extern "C" fn lid_ilid(y: *const LidTensor, z: *const LidTensor, k: usize, out: *mut f64) -> LidStatus {
    guard(|| {
        let y = vector(tensor(y, "y")?)?;
        let z = points(tensor(z, "z")?)?;
        write(out, lid_align::ilid(&y, &z, k)?.value)
    })
}

/// Mean LID of each row of `y` against the rows of `z`.
///
/// # Safety
/// `y` and `z` must be live handles.
#[no_mangle]
pub unsafe extern "C" fn lid_ilid_loss(y: *const LidTensor, z: *const LidTensor, k: usize, out: *mut f64) -> LidStatus {
    guard(|| {
        let y = points(tensor(y, "y")?)?;
        let z = points(tensor(z, "z")?)?;
        write(out, lid_align::ilid_loss(&y, &z, k)?)
    })
}

/// LID of patch vector `p` against the patch rows of `q`.
///
/// # Safety
/// `p` and `q` must be live handles.
#[no_mangle]
pub unsafe extern "C" fn lid_plid(p: *const LidTensor, q: *const LidTensor, k: usize, out: *mut f64) -> LidStatus {
    guard(|| {
        let p = vector(tensor(p, "p")?)?;
        let q = patch_set(tensor(q, "q")?)?;
        write(out, lid_align::plid(&p, &q, k)?.value)
    })
}

/// Patch loss over `n` image pairs: `p_sets[i]` and `q_sets[i]` hold the
/// original and restored-region patch rows of image `i`.
///
/// # Safety
/// Both arrays must hold `n` live handles.
#[no_mangle]
pub unsafe extern "C" fn lid_plid_loss(
    p_sets: *const *const LidTensor,
    q_sets: *const *const LidTensor,
    n: usize,
    k: usize,
    out: *mut f64,
) -> LidStatus {
    guard(|| {
        let collect = |sets: &[*const LidTensor], what: &str| -> Result<Vec<PatchSet>, Fail> {
            sets.iter().map(|&t| patch_set(tensor(t, what)?)).collect()
        };
        let p = collect(slice(p_sets, n, "p_sets")?, "p_sets entry")?;
        let q = collect(slice(q_sets, n, "q_sets")?, "q_sets entry")?;
        write(out, lid_align::plid_loss(&p, &q, k)?)
    })
}

/// PSNR in dB; `+inf` for identical images.
///
/// # Safety
/// `a` and `b` must be live handles.
#[no_mangle]
pub unsafe extern "C" fn lid_psnr(a: *const LidTensor, b: *const LidTensor, peak: f64, out: *mut f64) -> LidStatus {
    guard(|| write(out, metrics::psnr(tensor(a, "a")?, tensor(b, "b")?, peak)?))
}

/// Mean SSIM over channels of two `H x W` or `H x W x C` images.
///
/// # Safety
/// `a` and `b` must be live handles.
#[no_mangle]
pub unsafe extern "C" fn lid_ssim(a: *const LidTensor, b: *const LidTensor, out: *mut f64) -> LidStatus {
    guard(|| write(out, metrics::ssim(tensor(a, "a")?, tensor(b, "b")?)?))
}
