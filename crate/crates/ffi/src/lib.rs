//! C interface to `gapsolve`.
//!
//! Objects cross the boundary as opaque handles created by `*_new` or
//! constructor functions and released by the matching `*_free`. Every
//! fallible function returns a [`GapsolveStatus`] and writes its result
//! through an out-pointer; on failure [`gapsolve_last_error`] describes
//! the problem. Energies and temperatures share the unit of `debye`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use gapsolve::contraction::max_admissible_t1;
use gapsolve::kernel::{parse_table, Kernel, Shape};
use gapsolve::simple_gap::{delta_zero, inverse_gap, solve_gap_at, tau};
use gapsolve::solver::{BcsSolver, GapSlice, Init};
use gapsolve::{GapError, PhysicalParams, SolverConfig};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GapsolveStatus {
    Ok = 0,
    NullPointer = 1,
    Domain = 2,
    Invalid = 3,
    Numerical = 4,
    Io = 5,
    Parse = 6,
    Panic = 7,
}

/// Initial guess for [`gapsolve_solve`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GapsolveInit {
    Upper = 0,
    Lower = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GapsolveShape {
    Ramp = 0,
    Bump = 1,
}

/// Physical parameters plus solver configuration.
pub struct GapsolveProblem {
    params: PhysicalParams,
    cfg: SolverConfig,
}

pub struct GapsolveKernel(Kernel);

pub struct GapsolveSlice(GapSlice);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &GapError) -> GapsolveStatus {
    match e {
        GapError::Domain(_) => GapsolveStatus::Domain,
        GapError::Invalid { .. } => GapsolveStatus::Invalid,
        GapError::Parse { .. } | GapError::Json(_) | GapError::Csv(_) => GapsolveStatus::Parse,
        GapError::Io(_) => GapsolveStatus::Io,
        _ if e.is_numerical() => GapsolveStatus::Numerical,
        _ => GapsolveStatus::Invalid,
    }
}

struct Fail(GapsolveStatus, String);

impl From<GapError> for Fail {
    fn from(e: GapError) -> Fail {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(GapsolveStatus::NullPointer, format!("{what} is null"))
}

fn guard<F: FnOnce() -> Result<(), Fail>>(f: F) -> GapsolveStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            GapsolveStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            GapsolveStatus::Panic
        }
    }
}

unsafe fn obj<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn put<T>(out: *mut T, v: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    out.write(v);
    Ok(())
}

/// Message for the last failed call on this thread, or NULL. Valid until
/// the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn gapsolve_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn gapsolve_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Creates a problem with the default solver configuration. The parameter
/// set must be admissible.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn gapsolve_problem_new(
    epsilon: f64,
    debye: f64,
    u0: f64,
    u1: f64,
    u2: f64,
    out: *mut *mut GapsolveProblem,
) -> GapsolveStatus {
    guard(|| {
        let params = PhysicalParams::new(epsilon, debye, u0, u1, u2);
        gapsolve::params::validate(&params).into_result()?;
        let h = Box::new(GapsolveProblem {
            params,
            cfg: SolverConfig::default(),
        });
        put(out, Box::into_raw(h))
    })
}

/// Replaces the solver configuration.
///
/// # Safety
/// `problem` must come from [`gapsolve_problem_new`].
#[no_mangle]
pub unsafe extern "C" fn gapsolve_problem_set_config(
    problem: *mut GapsolveProblem,
    quad_rel_tol: f64,
    root_tol: f64,
    fp_tol: f64,
    fp_max_iter: usize,
    gap_zero_threshold: f64,
    damping: f64,
) -> GapsolveStatus {
    guard(|| {
        let pb = problem.as_mut().ok_or_else(|| null("problem"))?;
        let cfg = SolverConfig {
            quad_rel_tol,
            root_tol,
            fp_tol,
            fp_max_iter,
            gap_zero_threshold,
            damping,
        };
        cfg.validate()?;
        pb.cfg = cfg;
        Ok(())
    })
}

/// # Safety
/// `problem` must be NULL or come from [`gapsolve_problem_new`] and not
/// have been freed.
#[no_mangle]
pub unsafe extern "C" fn gapsolve_problem_free(problem: *mut GapsolveProblem) {
    if !problem.is_null() {
        drop(Box::from_raw(problem));
    }
}

/// Closed-form zero-temperature gap for coupling `u`.
///
/// # Safety
/// `problem` must be a live handle and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn gapsolve_delta_zero(
    problem: *const GapsolveProblem,
    u: f64,
    out: *mut f64,
) -> GapsolveStatus {
    guard(|| {
        let pb = obj(problem, "problem")?;
        put(out, delta_zero(u, &pb.params)?)
    })
}

/// Critical temperature of the simple gap equation with coupling `u`.
///
/// # Safety
/// `problem` must be a live handle and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn gapsolve_tau(
    problem: *const GapsolveProblem,
    u: f64,
    out: *mut f64,
) -> GapsolveStatus {
    guard(|| {
        let pb = obj(problem, "problem")?;
        put(out, tau(u, &pb.params, &pb.cfg)?)
    })
}

/// Simple-gap solution Δ(T) for coupling `u`.
///
/// # Safety
/// `problem` must be a live handle and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn gapsolve_solve_gap_at(
    problem: *const GapsolveProblem,
    u: f64,
    t: f64,
    out: *mut f64,
) -> GapsolveStatus {
    guard(|| {
        let pb = obj(problem, "problem")?;
        put(out, solve_gap_at(u, t, &pb.params, &pb.cfg)?)
    })
}

/// Temperature at which the simple gap for coupling `u` equals `delta`.
///
/// # Safety
/// `problem` must be a live handle and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn gapsolve_inverse_gap(
    problem: *const GapsolveProblem,
    u: f64,
    delta: f64,
    out: *mut f64,
) -> GapsolveStatus {
    guard(|| {
        let pb = obj(problem, "problem")?;
        put(out, inverse_gap(u, delta, &pb.params, &pb.cfg)?)
    })
}

/// Largest T₁ satisfying the small-temperature contraction condition.
///
/// # Safety
/// `problem` must be a live handle and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn gapsolve_max_admissible_t1(
    problem: *const GapsolveProblem,
    out: *mut f64,
) -> GapsolveStatus {
    guard(|| {
        let pb = obj(problem, "problem")?;
        put(out, max_admissible_t1(&pb.params, &pb.cfg)?)
    })
}

unsafe fn new_kernel(
    out: *mut *mut GapsolveKernel,
    k: Result<Kernel, GapError>,
) -> Result<(), Fail> {
    let k = k?;
    put(out, Box::into_raw(Box::new(GapsolveKernel(k))))
}

/// # Safety
/// `problem` must be a live handle and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn gapsolve_kernel_constant(
    problem: *const GapsolveProblem,
    c: f64,
    out: *mut *mut GapsolveKernel,
) -> GapsolveStatus {
    guard(|| {
        let pb = obj(problem, "problem")?;
        new_kernel(out, Kernel::constant(c, &pb.params))
    })
}

/// `level + amplitude·shape(x, ξ)` with shape values in [0, 1].
///
/// # Safety
/// `problem` must be a live handle and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn gapsolve_kernel_separable(
    problem: *const GapsolveProblem,
    level: f64,
    amplitude: f64,
    shape: GapsolveShape,
    out: *mut *mut GapsolveKernel,
) -> GapsolveStatus {
    guard(|| {
        let pb = obj(problem, "problem")?;
        let shape = match shape {
            GapsolveShape::Ramp => Shape::Ramp,
            GapsolveShape::Bump => Shape::Bump,
        };
        new_kernel(out, Kernel::separable(level, amplitude, shape, &pb.params))
    })
}

/// Loads a tabulated kernel from a CSV file whose grids are in the units
/// of the problem. The returned kernel lives on the problem's energy
/// range.
///
/// # Safety
/// `problem` must be a live handle, `path` a NUL-terminated string and
/// `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn gapsolve_kernel_load(
    problem: *const GapsolveProblem,
    path: *const c_char,
    out: *mut *mut GapsolveKernel,
) -> GapsolveStatus {
    guard(|| {
        let pb = obj(problem, "problem")?;
        if path.is_null() {
            return Err(null("path"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|e| Fail(GapsolveStatus::Invalid, format!("path is not UTF-8: {e}")))?;
        let text = std::fs::read_to_string(path).map_err(GapError::from)?;
        let table = parse_table(&text, path)?;
        new_kernel(out, Kernel::tabulated(table, &pb.params))
    })
}

/// # Safety
/// `kernel` must be a live handle and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn gapsolve_kernel_eval(
    kernel: *const GapsolveKernel,
    x: f64,
    xi: f64,
    out: *mut f64,
) -> GapsolveStatus {
    guard(|| {
        let k = obj(kernel, "kernel")?;
        put(out, k.0.eval(x, xi)?)
    })
}

/// # Safety
/// `kernel` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn gapsolve_kernel_free(kernel: *mut GapsolveKernel) {
    if !kernel.is_null() {
        drop(Box::from_raw(kernel));
    }
}

/// Solves the full gap equation at temperature `t`.
///
/// # Safety
/// `problem` and `kernel` must be live handles and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn gapsolve_solve(
    problem: *const GapsolveProblem,
    kernel: *const GapsolveKernel,
    t: f64,
    init: GapsolveInit,
    out: *mut *mut GapsolveSlice,
) -> GapsolveStatus {
    guard(|| {
        let pb = obj(problem, "problem")?;
        let k = obj(kernel, "kernel")?;
        let init = match init {
            GapsolveInit::Upper => Init::Upper,
            GapsolveInit::Lower => Init::Lower,
        };
        let slice = BcsSolver::new(&k.0, &pb.params, &pb.cfg)?.solve(t, &init)?;
        put(out, Box::into_raw(Box::new(GapsolveSlice(slice))))
    })
}

/// Transition temperature of the full gap equation.
///
/// # Safety
/// `problem` and `kernel` must be live handles and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn gapsolve_transition_temperature(
    problem: *const GapsolveProblem,
    kernel: *const GapsolveKernel,
    out: *mut f64,
) -> GapsolveStatus {
    guard(|| {
        let pb = obj(problem, "problem")?;
        let k = obj(kernel, "kernel")?;
        put(
            out,
            BcsSolver::new(&k.0, &pb.params, &pb.cfg)?.transition_temperature()?,
        )
    })
}

/// Number of nodes in a slice; 0 for NULL.
///
/// # Safety
/// `slice` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn gapsolve_slice_len(slice: *const GapsolveSlice) -> usize {
    slice.as_ref().map_or(0, |s| s.0.values.len())
}

unsafe fn copy_out(src: &[f64], buf: *mut f64, len: usize) -> Result<(), Fail> {
    if buf.is_null() {
        return Err(null("buffer"));
    }
    if len < src.len() {
        return Err(Fail(
            GapsolveStatus::Invalid,
            format!("buffer holds {len} values, slice has {}", src.len()),
        ));
    }
    ptr::copy_nonoverlapping(src.as_ptr(), buf, src.len());
    Ok(())
}

/// Copies the node abscissas into `buf`, which must hold `len` values.
///
/// # Safety
/// `slice` must be a live handle and `buf` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn gapsolve_slice_nodes(
    slice: *const GapsolveSlice,
    buf: *mut f64,
    len: usize,
) -> GapsolveStatus {
    guard(|| copy_out(&obj(slice, "slice")?.0.nodes, buf, len))
}

/// Copies the gap values at the nodes into `buf`.
///
/// # Safety
/// `slice` must be a live handle and `buf` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn gapsolve_slice_values(
    slice: *const GapsolveSlice,
    buf: *mut f64,
    len: usize,
) -> GapsolveStatus {
    guard(|| copy_out(&obj(slice, "slice")?.0.values, buf, len))
}

/// Residual, iteration count and envelope bounds of a solve. Any output
/// pointer may be NULL.
///
/// # Safety
/// `slice` must be a live handle; non-NULL outputs must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn gapsolve_slice_diagnostics(
    slice: *const GapsolveSlice,
    residual: *mut f64,
    iterations: *mut usize,
    delta1: *mut f64,
    delta2: *mut f64,
) -> GapsolveStatus {
    guard(|| {
        let s = &obj(slice, "slice")?.0;
        if !residual.is_null() {
            residual.write(s.residual);
        }
        if !iterations.is_null() {
            iterations.write(s.iterations);
        }
        if !delta1.is_null() {
            delta1.write(s.envelope.delta1);
        }
        if !delta2.is_null() {
            delta2.write(s.envelope.delta2);
        }
        Ok(())
    })
}

/// # Safety
/// `slice` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn gapsolve_slice_free(slice: *mut GapsolveSlice) {
    if !slice.is_null() {
        drop(Box::from_raw(slice));
    }
}
