//! C ABI over `graphon_hawkes`.
//!
//! Every fallible call returns a [`GhStatus`]; on failure the message is kept
//! per thread and can be read with [`gh_last_error_message`]. Objects are
//! handed out as opaque pointers and must be released with the matching
//! `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use graphon_hawkes::cluster_sim::{simulate_process, Realization};
use graphon_hawkes::domain::Region;
use graphon_hawkes::limits::STATIONARY_TOL;
use graphon_hawkes::metrics::{pp_distance, Matching};
use graphon_hawkes::model::{load_model_file, parse_model, validate_model, ModelSpec};
use graphon_hawkes::operators::{
    baseline_on_grid, discretize_kernel, operator_norm_l1, spectral_radius, stationary_rate, KernelGrid,
    DEFAULT_MAX_POWER,
};
use graphon_hawkes::rng::StreamKey;
use graphon_hawkes::thinning_sim::{simulate_thinning, HistorySnapshot, ThinningOptions};
use graphon_hawkes::transforms::{fixed_point, laplace_of_q, TestFunction, DEFAULT_MAX_ITER, DEFAULT_TOL};
use graphon_hawkes::{Error, ErrorCode};

/// Result codes. Values 1 to 24 mirror the library error codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GhStatus {
    Ok = 0,
    InvalidParameter = 1,
    Negativity = 2,
    OutOfDomain = 3,
    NegativeTime = 4,
    GridTooLarge = 5,
    Shape = 6,
    NoConvergence = 7,
    UnstableModel = 8,
    SlowConvergence = 9,
    ExplosionGuard = 10,
    RequiresThinning = 11,
    DegenerateDensity = 12,
    NoLifetimes = 13,
    AcausalHistory = 14,
    BadCellCount = 15,
    ResolutionTooCoarse = 16,
    PrelimitUnstable = 17,
    DomainMismatch = 18,
    InvalidArgument = 19,
    OutdegreeConditionFailed = 20,
    AllCensored = 21,
    Config = 22,
    Io = 23,
    Internal = 24,
    NullPointer = 100,
    InvalidUtf8 = 101,
    Panic = 102,
}

impl From<ErrorCode> for GhStatus {
    fn from(c: ErrorCode) -> Self {
        use GhStatus::*;
        match c {
            ErrorCode::InvalidParameter => InvalidParameter,
            ErrorCode::Negativity => Negativity,
            ErrorCode::OutOfDomain => OutOfDomain,
            ErrorCode::NegativeTime => NegativeTime,
            ErrorCode::GridTooLarge => GridTooLarge,
            ErrorCode::Shape => Shape,
            ErrorCode::NoConvergence => NoConvergence,
            ErrorCode::UnstableModel => UnstableModel,
            ErrorCode::SlowConvergence => SlowConvergence,
            ErrorCode::ExplosionGuard => ExplosionGuard,
            ErrorCode::RequiresThinning => RequiresThinning,
            ErrorCode::DegenerateDensity => DegenerateDensity,
            ErrorCode::NoLifetimes => NoLifetimes,
            ErrorCode::AcausalHistory => AcausalHistory,
            ErrorCode::BadCellCount => BadCellCount,
            ErrorCode::ResolutionTooCoarse => ResolutionTooCoarse,
            ErrorCode::PrelimitUnstable => PrelimitUnstable,
            ErrorCode::DomainMismatch => DomainMismatch,
            ErrorCode::InvalidArgument => InvalidArgument,
            ErrorCode::OutdegreeConditionFailed => OutdegreeConditionFailed,
            ErrorCode::AllCensored => AllCensored,
            ErrorCode::Config => Config,
            ErrorCode::Io => Io,
            ErrorCode::Internal => Internal,
        }
    }
}

/// Simulation method for [`gh_simulate`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GhMethod {
    Cluster = 0,
    Thinning = 1,
}

/// Scalar fields of one event. `parent_id` is -1 for immigrants and
/// `lifetime` is NaN when the model has none.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct GhEvent {
    pub id: u64,
    pub time: f64,
    pub generation: u32,
    pub parent_id: i64,
    pub mark: f64,
    pub lifetime: f64,
    pub dim: usize,
}

pub struct GhModel {
    spec: ModelSpec,
}

pub struct GhKernel {
    grid: KernelGrid,
    baseline: Vec<f64>,
}

pub struct GhRealization {
    real: Realization,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

enum Fail {
    Lib(Error),
    Null(&'static str),
    Utf8,
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> GhStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => GhStatus::Ok,
        Ok(Err(Fail::Lib(e))) => {
            set_error(e.to_string());
            e.code().into()
        }
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            GhStatus::NullPointer
        }
        Ok(Err(Fail::Utf8)) => {
            set_error("string is not valid UTF-8".into());
            GhStatus::InvalidUtf8
        }
        Err(_) => {
            set_error("panic inside graphon-hawkes".into());
            GhStatus::Panic
        }
    }
}

unsafe fn as_ref<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null(what))
}

unsafe fn as_str<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Fail::Utf8)
}

unsafe fn write<T>(out: *mut T, v: T, what: &'static str) -> Result<(), Fail> {
    if out.is_null() {
        return Err(Fail::Null(what));
    }
    out.write(v);
    Ok(())
}

fn to_c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).unwrap_or_default().into_raw()
}

/// Message of the last failure on this thread, or NULL. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn gh_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Static kebab-case name of a status code.
#[no_mangle]
pub extern "C" fn gh_status_str(status: GhStatus) -> *const c_char {
    let s: &'static CStr = match status {
        GhStatus::Ok => c"ok",
        GhStatus::NullPointer => c"null-pointer",
        GhStatus::InvalidUtf8 => c"invalid-utf8",
        GhStatus::Panic => c"panic",
        GhStatus::InvalidParameter => c"invalid-parameter",
        GhStatus::Negativity => c"negativity",
        GhStatus::OutOfDomain => c"out-of-domain",
        GhStatus::NegativeTime => c"negative-time",
        GhStatus::GridTooLarge => c"grid-too-large",
        GhStatus::Shape => c"shape-error",
        GhStatus::NoConvergence => c"no-convergence",
        GhStatus::UnstableModel => c"unstable-model",
        GhStatus::SlowConvergence => c"slow-convergence",
        GhStatus::ExplosionGuard => c"explosion-guard",
        GhStatus::RequiresThinning => c"requires-thinning-simulator",
        GhStatus::DegenerateDensity => c"degenerate-density",
        GhStatus::NoLifetimes => c"no-lifetimes",
        GhStatus::AcausalHistory => c"acausal-history",
        GhStatus::BadCellCount => c"bad-cell-count",
        GhStatus::ResolutionTooCoarse => c"resolution-too-coarse",
        GhStatus::PrelimitUnstable => c"prelimit-unstable",
        GhStatus::DomainMismatch => c"domain-mismatch",
        GhStatus::InvalidArgument => c"invalid-argument",
        GhStatus::OutdegreeConditionFailed => c"outdegree-condition-failed",
        GhStatus::AllCensored => c"all-censored",
        GhStatus::Config => c"config",
        GhStatus::Io => c"io",
        GhStatus::Internal => c"internal",
    };
    s.as_ptr()
}

/// Frees a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn gh_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parses a TOML model description. Relative file references resolve
/// against the working directory.
///
/// # Safety
/// `toml` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn gh_model_from_toml(toml: *const c_char, out: *mut *mut GhModel) -> GhStatus {
    guard(|| {
        let spec = parse_model(as_str(toml, "toml")?, None)?;
        write(out, Box::into_raw(Box::new(GhModel { spec })), "out")
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn gh_model_from_file(path: *const c_char, out: *mut *mut GhModel) -> GhStatus {
    guard(|| {
        let spec = load_model_file(Path::new(as_str(path, "path")?))?;
        write(out, Box::into_raw(Box::new(GhModel { spec })), "out")
    })
}

/// # Safety
/// `model` must come from `gh_model_from_*` and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn gh_model_free(model: *mut GhModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Dimension of the location space, 0 for NULL.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn gh_model_dim(model: *const GhModel) -> usize {
    model.as_ref().map_or(0, |m| m.spec.dim())
}

/// Runs the model checks. `*n_issues` gets the number of problems found and
/// `*report` (if not NULL) a newline-separated description to release with
/// [`gh_string_free`].
///
/// # Safety
/// `model` must be a live handle, `n_issues` writable, `report` NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn gh_model_validate(
    model: *const GhModel,
    n_issues: *mut usize,
    report: *mut *mut c_char,
) -> GhStatus {
    guard(|| {
        let issues = validate_model(&as_ref(model, "model")?.spec);
        write(n_issues, issues.len(), "n_issues")?;
        if !report.is_null() {
            report.write(to_c_string(issues.join("\n")));
        }
        Ok(())
    })
}

/// Discretizes the offspring kernel on `n` nodes per axis (0 picks the
/// model's default resolution).
///
/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn gh_kernel_new(model: *const GhModel, n: usize, out: *mut *mut GhKernel) -> GhStatus {
    guard(|| {
        let spec = &as_ref(model, "model")?.spec;
        let n = if n == 0 { spec.resolution.kernel_n } else { n };
        let grid = discretize_kernel(spec, n)?;
        let baseline = baseline_on_grid(spec, &grid);
        write(out, Box::into_raw(Box::new(GhKernel { grid, baseline })), "out")
    })
}

/// # Safety
/// `kernel` must come from [`gh_kernel_new`] and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn gh_kernel_free(kernel: *mut GhKernel) {
    if !kernel.is_null() {
        drop(Box::from_raw(kernel));
    }
}

/// Number of quadrature nodes, 0 for NULL.
///
/// # Safety
/// `kernel` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn gh_kernel_len(kernel: *const GhKernel) -> usize {
    kernel.as_ref().map_or(0, |k| k.grid.len())
}

/// L1 operator norm (largest column sum).
///
/// # Safety
/// `kernel` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn gh_kernel_operator_norm(kernel: *const GhKernel, out: *mut f64) -> GhStatus {
    guard(|| write(out, operator_norm_l1(&as_ref(kernel, "kernel")?.grid), "out"))
}

/// # Safety
/// `kernel` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn gh_kernel_spectral_radius(kernel: *const GhKernel, out: *mut f64) -> GhStatus {
    guard(|| {
        let est = spectral_radius(&as_ref(kernel, "kernel")?.grid, DEFAULT_MAX_POWER)?;
        write(out, est.best(), "out")
    })
}

/// Total stationary intensity over the domain. Fails with
/// `UnstableModel` when the spectral radius is not below one.
///
/// # Safety
/// `kernel` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn gh_kernel_stationary_rate(kernel: *const GhKernel, out: *mut f64) -> GhStatus {
    guard(|| {
        let k = as_ref(kernel, "kernel")?;
        let rate = stationary_rate(&k.grid, &k.baseline, STATIONARY_TOL)?;
        write(out, rate.mass(&k.grid, &Region::Whole), "out")
    })
}

/// Simulates on `[0, horizon]` from an empty history.
///
/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn gh_simulate(
    model: *const GhModel,
    horizon: f64,
    seed: u64,
    method: GhMethod,
    out: *mut *mut GhRealization,
) -> GhStatus {
    guard(|| {
        let spec = &as_ref(model, "model")?.spec;
        let key = StreamKey::new(seed);
        let real = match method {
            GhMethod::Cluster => simulate_process(spec, horizon, key)?,
            GhMethod::Thinning => {
                simulate_thinning(spec, horizon, &HistorySnapshot::empty(), key, ThinningOptions::default())?
            }
        };
        write(out, Box::into_raw(Box::new(GhRealization { real })), "out")
    })
}

/// # Safety
/// `real` must come from [`gh_simulate`] and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn gh_realization_free(real: *mut GhRealization) {
    if !real.is_null() {
        drop(Box::from_raw(real));
    }
}

/// Number of events, 0 for NULL.
///
/// # Safety
/// `real` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn gh_realization_len(real: *const GhRealization) -> usize {
    real.as_ref().map_or(0, |r| r.real.len())
}

/// Whether the event cap cut the run short.
///
/// # Safety
/// `real` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn gh_realization_truncated(real: *const GhRealization) -> bool {
    real.as_ref().is_some_and(|r| r.real.truncated)
}

fn event_at(r: &GhRealization, index: usize) -> Result<&graphon_hawkes::cluster_sim::Event, Fail> {
    r.real
        .events
        .get(index)
        .ok_or_else(|| Fail::Lib(Error::InvalidArgument(format!("event index {index} out of range {}", r.real.len()))))
}

/// # Safety
/// `real` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn gh_realization_get(real: *const GhRealization, index: usize, out: *mut GhEvent) -> GhStatus {
    guard(|| {
        let e = event_at(as_ref(real, "realization")?, index)?;
        let ev = GhEvent {
            id: e.id,
            time: e.time,
            generation: e.generation,
            parent_id: e.parent_id.map_or(-1, |p| p as i64),
            mark: e.mark_scalar,
            lifetime: e.lifetime.unwrap_or(f64::NAN),
            dim: e.location.len(),
        };
        write(out, ev, "out")
    })
}

/// Copies the event location into `buf`, which must hold at least `len`
/// values where `len` is the event dimension.
///
/// # Safety
/// `real` must be a live handle and `buf` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn gh_realization_location(
    real: *const GhRealization,
    index: usize,
    buf: *mut f64,
    len: usize,
) -> GhStatus {
    guard(|| {
        let e = event_at(as_ref(real, "realization")?, index)?;
        if buf.is_null() {
            return Err(Fail::Null("buf"));
        }
        if len < e.location.len() {
            return Err(Error::Shape(format!("buffer holds {len} values, location has {}", e.location.len())).into());
        }
        ptr::copy_nonoverlapping(e.location.as_ptr(), buf, e.location.len());
        Ok(())
    })
}

/// One JSON object per line. Release with [`gh_string_free`].
///
/// # Safety
/// `real` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn gh_realization_to_ndjson(real: *const GhRealization, out: *mut *mut c_char) -> GhStatus {
    guard(|| write(out, to_c_string(as_ref(real, "realization")?.real.to_ndjson()), "out"))
}

/// Point-process distance between two realizations, matching events by
/// shared tag (or id with equal time).
///
/// # Safety
/// All handles must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn gh_distance(
    model_a: *const GhModel,
    a: *const GhRealization,
    model_b: *const GhModel,
    b: *const GhRealization,
    out: *mut f64,
) -> GhStatus {
    guard(|| {
        let d = pp_distance(
            &as_ref(model_a, "model_a")?.spec,
            &as_ref(a, "a")?.real,
            &as_ref(model_b, "model_b")?.spec,
            &as_ref(b, "b")?.real,
            Matching::SharedIds,
        )?;
        write(out, d.total, "out")
    })
}

/// `E exp(-z Q_t)` where `Q_t` counts the events alive at time `t`, from an
/// empty start. `z` must be nonnegative.
///
/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn gh_transform_laplace(model: *const GhModel, z: f64, t: f64, out: *mut f64) -> GhStatus {
    guard(|| {
        let spec = &as_ref(model, "model")?.spec;
        let fp = fixed_point(spec, &TestFunction::constant(z), t, DEFAULT_TOL, DEFAULT_MAX_ITER, None)?;
        fp.require_converged()?;
        write(out, laplace_of_q(&fp.eta, spec)?, "out")
    })
}
