//! C ABI over checkpoints, the coupled samplers, sample sets and metrics.
//!
//! Every fallible call returns an [`SfStatus`]; on failure the message is
//! kept per thread and read back with [`sf_last_error_message`]. Objects are
//! opaque handles released with their `_free` function. Panics never cross
//! the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use ndarray::Array2;
use splitflow::flow::{coupled_sample, SamplerConfig, Scheme};
use splitflow::io::Provenance;
use splitflow::metrics::MetricReport;
use splitflow::net::Checkpoint;
use splitflow::{w1_exact, Error, NetParams, RngState, SampleSet};

/// Result code of every fallible call. Values match the CLI exit codes where
/// both exist.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SfStatus {
    Ok = 0,
    Failure = 1,
    InvalidArgument = 2,
    MissingArtifact = 3,
    NonFinite = 4,
    NullPointer = 5,
    Panic = 6,
}

/// Splitting scheme for [`sf_sample_coupled`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SfScheme {
    LieTrotter = 0,
    Strang = 1,
}

/// The three statistics of one comparison.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SfMetrics {
    pub w1: f64,
    pub mmd: f64,
    pub energy: f64,
}

/// A trained network loaded from a JSON checkpoint.
pub struct SfNet(NetParams);

/// Joint samples, row-major, `f` columns first.
pub struct SfSampleSet(SampleSet);

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> SfStatus {
    match e.exit_code() {
        2 => SfStatus::InvalidArgument,
        3 => SfStatus::MissingArtifact,
        4 => SfStatus::NonFinite,
        _ => SfStatus::Failure,
    }
}

enum Fail {
    Core(Error),
    Null(&'static str),
    Arg(String),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Core(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> SfStatus {
    let (status, msg) = match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => return SfStatus::Ok,
        Ok(Err(Fail::Core(e))) => (status_of(&e), e.to_string()),
        Ok(Err(Fail::Null(what))) => (SfStatus::NullPointer, format!("null pointer: {what}")),
        Ok(Err(Fail::Arg(m))) => (SfStatus::InvalidArgument, m),
        Err(_) => (SfStatus::Panic, "internal panic".to_owned()),
    };
    set_error(msg);
    status
}

unsafe fn path_arg(p: *const c_char, what: &'static str) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(PathBuf::from)
        .map_err(|_| Fail::Arg(format!("{what} is not valid UTF-8")))
}

unsafe fn deref<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null(what))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or(Fail::Null(what))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the calling thread's last error message into `buf` (NUL
/// terminated, truncated to `len` bytes) and returns the full message length
/// excluding the terminator. `buf` may be null to query the length.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn sf_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Loads a network checkpoint written by the `train` command.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sf_net_load(path: *const c_char, out: *mut *mut SfNet) -> SfStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let params = Checkpoint::read(&path_arg(path, "path")?)?.params()?;
        *out = Box::into_raw(Box::new(SfNet(params)));
        Ok(())
    })
}

/// Width of the network's output, i.e. of the field it drives.
///
/// # Safety
/// `net` must be null or a live handle from [`sf_net_load`].
#[no_mangle]
pub unsafe extern "C" fn sf_net_output_dim(net: *const SfNet) -> usize {
    net.as_ref().map_or(0, |n| n.0.config().output_dim)
}

/// # Safety
/// `net` must be null or a handle from [`sf_net_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sf_net_free(net: *mut SfNet) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// Runs the coupled splitting sampler with velocity networks for `f` and `g`.
///
/// # Safety
/// Handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sf_sample_coupled(
    net_f: *const SfNet,
    net_g: *const SfNet,
    n_samples: usize,
    n_steps: usize,
    scheme: SfScheme,
    seed: u64,
    out: *mut *mut SfSampleSet,
) -> SfStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let (vf, vg) = (deref(net_f, "net_f")?, deref(net_g, "net_g")?);
        let cfg = SamplerConfig {
            n_steps,
            scheme: match scheme {
                SfScheme::LieTrotter => Scheme::LieTrotter,
                SfScheme::Strang => Scheme::Strang,
            },
            seed,
        };
        cfg.validate()?;
        if n_samples == 0 {
            return Err(Fail::Arg("n_samples must be positive".into()));
        }
        let set = coupled_sample(&vf.0, &vg.0, n_samples, &cfg, &mut RngState::new(seed))?;
        *out = Box::into_raw(Box::new(SfSampleSet(set)));
        Ok(())
    })
}

/// Builds a sample set from `n * (dim_f + dim_g)` row-major values.
///
/// # Safety
/// `points` must point to that many readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sf_sample_set_new(
    points: *const f64,
    n: usize,
    dim_f: usize,
    dim_g: usize,
    out: *mut *mut SfSampleSet,
) -> SfStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        if points.is_null() {
            return Err(Fail::Null("points"));
        }
        let d = dim_f + dim_g;
        if n == 0 || dim_f == 0 || dim_g == 0 {
            return Err(Fail::Arg("sample sets need n, dim_f and dim_g positive".into()));
        }
        let data = std::slice::from_raw_parts(points, n * d).to_vec();
        let arr = Array2::from_shape_vec((n, d), data).map_err(|e| Fail::Arg(e.to_string()))?;
        *out = Box::into_raw(Box::new(SfSampleSet(SampleSet::new(dim_f, dim_g, arr, "ffi", 0)?)));
        Ok(())
    })
}

/// Reads a sample CSV as written by the `sample` command.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sf_sample_set_read_csv(path: *const c_char, out: *mut *mut SfSampleSet) -> SfStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let set = SampleSet::read_csv(&path_arg(path, "path")?)?;
        *out = Box::into_raw(Box::new(SfSampleSet(set)));
        Ok(())
    })
}

/// Writes the set as CSV. Refuses to overwrite a different existing file.
///
/// # Safety
/// `set` must be live; `path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn sf_sample_set_write_csv(set: *const SfSampleSet, path: *const c_char) -> SfStatus {
    guard(|| {
        let set = deref(set, "set")?;
        set.0.write_csv(&path_arg(path, "path")?, &Provenance::new())?;
        Ok(())
    })
}

/// Number of samples, 0 for a null handle.
///
/// # Safety
/// `set` must be null or live.
#[no_mangle]
pub unsafe extern "C" fn sf_sample_set_len(set: *const SfSampleSet) -> usize {
    set.as_ref().map_or(0, |s| s.0.len())
}

/// Columns per sample (`dim_f + dim_g`), 0 for a null handle.
///
/// # Safety
/// `set` must be null or live.
#[no_mangle]
pub unsafe extern "C" fn sf_sample_set_dim(set: *const SfSampleSet) -> usize {
    set.as_ref().map_or(0, |s| s.0.dim())
}

/// Copies the row-major points into `buf`, which must hold `len * dim` doubles.
///
/// # Safety
/// `set` must be live; `buf` must point to `capacity` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn sf_sample_set_copy_points(
    set: *const SfSampleSet,
    buf: *mut f64,
    capacity: usize,
) -> SfStatus {
    guard(|| {
        let set = deref(set, "set")?;
        if buf.is_null() {
            return Err(Fail::Null("buf"));
        }
        let need = set.0.len() * set.0.dim();
        if capacity < need {
            return Err(Fail::Arg(format!("buffer holds {capacity} values, need {need}")));
        }
        for (i, x) in set.0.points().iter().enumerate() {
            *buf.add(i) = *x;
        }
        Ok(())
    })
}

/// # Safety
/// `set` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sf_sample_set_free(set: *mut SfSampleSet) {
    if !set.is_null() {
        drop(Box::from_raw(set));
    }
}

/// Exact W1 between two sets of equal size.
///
/// # Safety
/// Handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sf_w1_exact(a: *const SfSampleSet, b: *const SfSampleSet, out: *mut f64) -> SfStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = w1_exact(&deref(a, "a")?.0, &deref(b, "b")?.0)?;
        Ok(())
    })
}

/// W1 (after subsampling both sets to `min(|a|, |b|, w1_subsample)` rows
/// with `seed`), MMD with the median bandwidth, and energy distance.
///
/// # Safety
/// Handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sf_metrics(
    a: *const SfSampleSet,
    b: *const SfSampleSet,
    w1_subsample: usize,
    seed: u64,
    out: *mut SfMetrics,
) -> SfStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let r = MetricReport::compute("ffi", &deref(a, "a")?.0, &deref(b, "b")?.0, w1_subsample, seed)?;
        *out = SfMetrics {
            w1: r.w1,
            mmd: r.mmd,
            energy: r.energy,
        };
        Ok(())
    })
}
