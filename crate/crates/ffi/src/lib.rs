//! C ABI for pearcey-lab.
//!
//! Handles are opaque and owned by the caller, who releases them with the
//! matching `*_free` function. Every fallible call returns a [`PlStatus`];
//! on failure [`pl_last_error`] describes the cause. Panics never cross the
//! boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use pearcey_lab::error::Error;
use pearcey_lab::operators::{
    genfun_det, genfun_via_kp_det, EvalOptions, ModelConfig, Validation, DEFAULT_TARGET_EPS,
};
use pearcey_lab::pearcey::{pearcey_p, pearcey_q};
use pearcey_lab::quadrature::{build_contours, discretize, Grid};
use pearcey_lab::rhp::gamma1_with;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlStatus {
    Ok = 0,
    InvalidArgument = 1,
    Domain = 2,
    PrecisionLoss = 3,
    GridDegeneracy = 4,
    UnderResolution = 5,
    CostGuard = 6,
    Singular = 7,
    Io = 8,
    NullPointer = 9,
    BufferTooSmall = 10,
    Panic = 11,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlBranch {
    Q = 0,
    P = 1,
}

/// Model configuration plus evaluation options.
pub struct PlConfig {
    config: ModelConfig,
    options: EvalOptions,
}

/// Discretized contour.
pub struct PlGrid {
    grid: Grid,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> PlStatus {
    match e {
        Error::InvalidArgument(_) | Error::Json(_) => PlStatus::InvalidArgument,
        Error::Domain(_) => PlStatus::Domain,
        Error::PrecisionLoss { .. } => PlStatus::PrecisionLoss,
        Error::GridDegeneracy(_) => PlStatus::GridDegeneracy,
        Error::UnderResolution(_) => PlStatus::UnderResolution,
        Error::CostGuard(_) => PlStatus::CostGuard,
        Error::Singular(_) => PlStatus::Singular,
        Error::Io(_) => PlStatus::Io,
    }
}

struct Failure(PlStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(PlStatus::NullPointer, format!("{what} is null"))
}

fn guard<F>(f: F) -> PlStatus
where
    F: FnOnce() -> Result<(), Failure>,
{
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PlStatus::Ok,
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
            PlStatus::Panic
        }
    }
}

unsafe fn slice_arg<'a>(ptr: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts(ptr, len))
}

unsafe fn handle<'a, T>(ptr: *const T, what: &str) -> Result<&'a T, Failure> {
    ptr.as_ref().ok_or_else(|| null(what))
}

unsafe fn write_out<T>(ptr: *mut T, value: T, what: &str) -> Result<(), Failure> {
    if ptr.is_null() {
        return Err(null(what));
    }
    ptr.write(value);
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL. The pointer
/// stays valid until the next call into the library from the same thread.
#[no_mangle]
pub extern "C" fn pl_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Creates a configuration from `n` thresholds and `n + 1` weights.
/// Configurations with equal adjacent weights need `allow_degenerate`.
///
/// # Safety
/// `a` must point to `n` doubles, `k` to `n + 1` doubles and `out` to
/// writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn pl_config_new(
    a: *const f64,
    n: usize,
    k: *const f64,
    tau: f64,
    s: f64,
    allow_degenerate: bool,
    out: *mut *mut PlConfig,
) -> PlStatus {
    guard(|| {
        let a = slice_arg(a, n, "a")?.to_vec();
        let k = slice_arg(k, n + 1, "k")?.to_vec();
        let config = ModelConfig::new(a, k, tau, s);
        make_config(config, allow_degenerate, out)
    })
}

/// Parses a JSON configuration `{"a": [...], "k": [...], "tau": .., "s": ..}`.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pl_config_from_json(
    json: *const c_char,
    allow_degenerate: bool,
    out: *mut *mut PlConfig,
) -> PlStatus {
    guard(|| {
        if json.is_null() {
            return Err(null("json"));
        }
        let text = CStr::from_ptr(json)
            .to_str()
            .map_err(|e| Failure(PlStatus::InvalidArgument, format!("json is not UTF-8: {e}")))?;
        make_config(ModelConfig::from_json(text)?, allow_degenerate, out)
    })
}

unsafe fn make_config(
    config: ModelConfig,
    allow_degenerate: bool,
    out: *mut *mut PlConfig,
) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("out"));
    }
    let validation = if allow_degenerate {
        Validation::AllowDegenerate
    } else {
        Validation::Strict
    };
    config.validate(validation)?;
    let h = Box::new(PlConfig {
        config,
        options: EvalOptions {
            validation,
            branch_flip: false,
        },
    });
    out.write(Box::into_raw(h));
    Ok(())
}

/// Releases a configuration; NULL is ignored.
///
/// # Safety
/// `config` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn pl_config_free(config: *mut PlConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Default grid truncated for the shifts of `config`.
///
/// # Safety
/// `config` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pl_grid_for_config(
    config: *const PlConfig,
    out: *mut *mut PlGrid,
) -> PlStatus {
    guard(|| {
        let c = handle(config, "config")?;
        let grid = c.config.default_grid()?;
        write_out(out, Box::into_raw(Box::new(PlGrid { grid })), "out")
    })
}

/// Default grid for |τ| ≤ `tau_max` and shifts |a_i + s| ≤ `s_max`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pl_grid_new(tau_max: f64, s_max: f64, out: *mut *mut PlGrid) -> PlStatus {
    guard(|| {
        let spec = build_contours(tau_max, s_max, DEFAULT_TARGET_EPS)?;
        let grid = discretize(&spec)?;
        write_out(out, Box::into_raw(Box::new(PlGrid { grid })), "out")
    })
}

/// Number of quadrature nodes, 0 for NULL.
///
/// # Safety
/// `grid` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pl_grid_len(grid: *const PlGrid) -> usize {
    grid.as_ref().map_or(0, |g| g.grid.len())
}

/// Releases a grid; NULL is ignored.
///
/// # Safety
/// `grid` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn pl_grid_free(grid: *mut PlGrid) {
    if !grid.is_null() {
        drop(Box::from_raw(grid));
    }
}

/// Generating function F and log F by the contour route.
///
/// # Safety
/// Handles must be live; `value` and `log_value` writable (either may be
/// NULL to skip it).
#[no_mangle]
pub unsafe extern "C" fn pl_genfun(
    config: *const PlConfig,
    grid: *const PlGrid,
    value: *mut f64,
    log_value: *mut f64,
) -> PlStatus {
    guard(|| {
        let c = handle(config, "config")?;
        let g = handle(grid, "grid")?;
        let d = genfun_det(&c.config, &g.grid, &c.options)?;
        if !value.is_null() {
            value.write(d.value);
        }
        if !log_value.is_null() {
            log_value.write(d.log_value);
        }
        Ok(())
    })
}

/// F through the Pearcey-kernel route with `nodes_per_interval` nodes.
///
/// # Safety
/// Handles must be live and `value` writable.
#[no_mangle]
pub unsafe extern "C" fn pl_genfun_via_kp(
    config: *const PlConfig,
    grid: *const PlGrid,
    nodes_per_interval: usize,
    value: *mut f64,
) -> PlStatus {
    guard(|| {
        let c = handle(config, "config")?;
        let g = handle(grid, "grid")?;
        let d = genfun_via_kp_det(&c.config, &g.grid, nodes_per_interval, c.options.validation)?;
        write_out(value, d.value, "value")
    })
}

/// Residue data: δ, and p, q as interleaved (re, im) pairs.
///
/// `p` and `q` must each hold `2 * n` doubles where `n` is the number of
/// thresholds; `capacity` is their length in doubles.
///
/// # Safety
/// Handles must be live; `delta` writable; `p`, `q` writable for
/// `capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn pl_gamma1(
    config: *const PlConfig,
    grid: *const PlGrid,
    delta: *mut f64,
    p: *mut f64,
    q: *mut f64,
    capacity: usize,
) -> PlStatus {
    guard(|| {
        let c = handle(config, "config")?;
        let g = handle(grid, "grid")?;
        let n = c.config.n();
        if capacity < 2 * n {
            return Err(Failure(
                PlStatus::BufferTooSmall,
                format!("need {} doubles per vector, got {capacity}", 2 * n),
            ));
        }
        if p.is_null() || q.is_null() {
            return Err(null("p or q"));
        }
        let g1 = gamma1_with(&c.config, &g.grid, &c.options)?;
        let (ps, qs) = (
            slice::from_raw_parts_mut(p, 2 * n),
            slice::from_raw_parts_mut(q, 2 * n),
        );
        for i in 0..n {
            ps[2 * i] = g1.p[i].re;
            ps[2 * i + 1] = g1.p[i].im;
            qs[2 * i] = g1.q[i].re;
            qs[2 * i + 1] = g1.q[i].im;
        }
        write_out(delta, g1.delta, "delta")
    })
}

/// Q or P and its s-derivatives up to `max_order` (≤ 3) at (s, τ);
/// `values` receives `max_order + 1` doubles.
///
/// # Safety
/// `grid` must be live and `values` writable for `capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn pl_pearcey(
    branch: PlBranch,
    s: f64,
    tau: f64,
    grid: *const PlGrid,
    max_order: usize,
    values: *mut f64,
    capacity: usize,
) -> PlStatus {
    guard(|| {
        let g = handle(grid, "grid")?;
        if capacity < max_order + 1 {
            return Err(Failure(
                PlStatus::BufferTooSmall,
                format!("need {} doubles, got {capacity}", max_order + 1),
            ));
        }
        if values.is_null() {
            return Err(null("values"));
        }
        let eval = match branch {
            PlBranch::Q => pearcey_q(s, tau, &g.grid, max_order)?,
            PlBranch::P => pearcey_p(s, tau, &g.grid, max_order)?,
        };
        let out = slice::from_raw_parts_mut(values, max_order + 1);
        for (d, slot) in out.iter_mut().enumerate() {
            *slot = eval.value(d);
        }
        Ok(())
    })
}
