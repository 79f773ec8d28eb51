//! C ABI over the multi-slot ranking optimizer.
//!
//! Conventions: every constructor hands back an opaque handle through an out
//! pointer and returns a [`MooStatus`]; handles are released with the
//! matching `_free`. On any failure the thread-local message from
//! [`moo_last_error_message`] describes what went wrong. Buffers are always
//! caller-allocated with their length passed in.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::path::Path;
use std::ptr;

use moo_core::dual::{solve_dual, DualSolution, DualSolveOptions};
use moo_core::io;
use moo_core::lowdisc::default_n_points;
use moo_core::primal::{recover_primal, serving_plan};
use moo_core::problem::{assemble_stacked, build_problem, ProblemFile, RankingProblem};
use moo_core::qcqp::{linearize, sampler_from_name, solve_qp, LinearizeOptions, QpSolveOptions};

/// Status codes returned by every fallible call.
#[repr(C)]
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum MooStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    ParseError = 4,
    SolveError = 5,
    BufferTooSmall = 6,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: &str) {
    let cleaned: String = msg.chars().filter(|c| *c != '\0').collect();
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(cleaned).unwrap_or_default();
    });
}

/// Message describing the most recent failure on this thread. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn moo_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// A validated ranking problem plus its stacked dual system.
pub struct MooProblem {
    problem: RankingProblem,
    system: moo_core::problem::StackedSystem,
}

/// Optimal dual multipliers for a problem.
pub struct MooDual {
    solution: DualSolution,
}

unsafe fn read_str<'a>(ptr: *const c_char) -> Result<&'a str, MooStatus> {
    if ptr.is_null() {
        set_error("null string pointer");
        return Err(MooStatus::NullPointer);
    }
    CStr::from_ptr(ptr).to_str().map_err(|e| {
        set_error(&format!("invalid utf-8: {e}"));
        MooStatus::InvalidUtf8
    })
}

/// Parse a problem from its JSON document and assemble the dual system.
///
/// # Safety
/// `json` must be a valid NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn moo_problem_parse_json(
    json: *const c_char,
    out: *mut *mut MooProblem,
) -> MooStatus {
    if out.is_null() {
        set_error("null out pointer");
        return MooStatus::NullPointer;
    }
    let text = match read_str(json) {
        Ok(t) => t,
        Err(s) => return s,
    };
    let file: ProblemFile = match serde_json::from_str(text) {
        Ok(f) => f,
        Err(e) => {
            set_error(&format!("problem json: {e}"));
            return MooStatus::ParseError;
        }
    };
    let problem = match build_problem(&file) {
        Ok(p) => p,
        Err(e) => {
            set_error(&e.to_string());
            return MooStatus::InvalidArgument;
        }
    };
    let system = match assemble_stacked(&problem) {
        Ok(s) => s,
        Err(e) => {
            set_error(&e.to_string());
            return MooStatus::InvalidArgument;
        }
    };
    *out = Box::into_raw(Box::new(MooProblem { problem, system }));
    MooStatus::Ok
}

/// Load a problem from a JSON file on disk.
///
/// # Safety
/// `path` must be a valid NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn moo_problem_load(
    path: *const c_char,
    out: *mut *mut MooProblem,
) -> MooStatus {
    let path_str = match read_str(path) {
        Ok(t) => t,
        Err(s) => return s,
    };
    let text = match std::fs::read_to_string(Path::new(path_str)) {
        Ok(t) => t,
        Err(e) => {
            set_error(&format!("read {path_str}: {e}"));
            return MooStatus::ParseError;
        }
    };
    let ctext = match CString::new(text) {
        Ok(c) => c,
        Err(_) => {
            set_error("file contains NUL bytes");
            return MooStatus::ParseError;
        }
    };
    moo_problem_parse_json(ctext.as_ptr(), out)
}

/// # Safety
/// `p` must come from a `moo_problem_*` constructor (or be null).
#[no_mangle]
pub unsafe extern "C" fn moo_problem_free(p: *mut MooProblem) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Problem dimensions: users, items, slots, and the flat variable count.
///
/// # Safety
/// All pointers must be valid; `p` must be a live problem handle.
#[no_mangle]
pub unsafe extern "C" fn moo_problem_dims(
    p: *const MooProblem,
    n_users: *mut u64,
    n_items: *mut u64,
    n_slots: *mut u64,
    dim: *mut u64,
) -> MooStatus {
    if p.is_null() || n_users.is_null() || n_items.is_null() || n_slots.is_null() || dim.is_null()
    {
        set_error("null pointer");
        return MooStatus::NullPointer;
    }
    let p = &*p;
    *n_users = p.problem.n_users as u64;
    *n_items = p.problem.n_items as u64;
    *n_slots = p.problem.n_slots as u64;
    *dim = p.problem.dim() as u64;
    MooStatus::Ok
}

/// Solve the nonnegative dual. `tol <= 0` and `max_iter == 0` pick defaults.
///
/// # Safety
/// `p` must be a live problem handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn moo_solve_dual(
    p: *const MooProblem,
    tol: f64,
    max_iter: u64,
    out: *mut *mut MooDual,
) -> MooStatus {
    if p.is_null() || out.is_null() {
        set_error("null pointer");
        return MooStatus::NullPointer;
    }
    let handle = &*p;
    let opts = DualSolveOptions {
        tol: if tol > 0.0 { tol } else { 1e-8 },
        max_iter: max_iter as usize,
        ..Default::default()
    };
    match solve_dual(&handle.system, &handle.problem.p, &opts) {
        Ok(solution) => {
            *out = Box::into_raw(Box::new(MooDual { solution }));
            MooStatus::Ok
        }
        Err(e) => {
            set_error(&e.to_string());
            MooStatus::SolveError
        }
    }
}

/// # Safety
/// `d` must come from `moo_solve_dual` (or be null).
#[no_mangle]
pub unsafe extern "C" fn moo_dual_free(d: *mut MooDual) {
    if !d.is_null() {
        drop(Box::from_raw(d));
    }
}

/// Multipliers and convergence diagnostics of a dual solve.
/// `converged` is 0 or 1.
///
/// # Safety
/// All pointers must be valid; `d` must be a live dual handle.
#[no_mangle]
pub unsafe extern "C" fn moo_dual_info(
    d: *const MooDual,
    mu0: *mut f64,
    mu1: *mut f64,
    iterations: *mut u64,
    residual: *mut f64,
    converged: *mut u8,
) -> MooStatus {
    if d.is_null()
        || mu0.is_null()
        || mu1.is_null()
        || iterations.is_null()
        || residual.is_null()
        || converged.is_null()
    {
        set_error("null pointer");
        return MooStatus::NullPointer;
    }
    let s = &(*d).solution;
    *mu0 = s.mu0;
    *mu1 = s.mu1;
    *iterations = s.iterations as u64;
    *residual = s.primal_residual;
    *converged = s.converged as u8;
    MooStatus::Ok
}

/// Recover the optimal serving probabilities into `x_out` (length `len`,
/// which must equal the problem's flat dimension).
///
/// # Safety
/// `p` and `d` must be live handles; `x_out` must point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn moo_recover_primal(
    p: *const MooProblem,
    d: *const MooDual,
    allow_unconverged: u8,
    x_out: *mut f64,
    len: u64,
) -> MooStatus {
    if p.is_null() || d.is_null() || x_out.is_null() {
        set_error("null pointer");
        return MooStatus::NullPointer;
    }
    let handle = &*p;
    if len as usize != handle.problem.dim() {
        set_error(&format!(
            "buffer holds {len} entries, problem dimension is {}",
            handle.problem.dim()
        ));
        return MooStatus::BufferTooSmall;
    }
    match recover_primal(&(*d).solution, &handle.problem, allow_unconverged != 0) {
        Ok(dist) => {
            ptr::copy_nonoverlapping(dist.x.as_ptr(), x_out, dist.x.len());
            MooStatus::Ok
        }
        Err(e) => {
            set_error(&e.to_string());
            MooStatus::SolveError
        }
    }
}

/// Sample a serving plan: `plan_out` receives n_users * n_slots item
/// indices, row per user.
///
/// # Safety
/// `p` and `d` must be live handles; `plan_out` must hold `len` u32 values.
#[no_mangle]
pub unsafe extern "C" fn moo_serving_plan(
    p: *const MooProblem,
    d: *const MooDual,
    seed: u64,
    allow_unconverged: u8,
    plan_out: *mut u32,
    len: u64,
) -> MooStatus {
    if p.is_null() || d.is_null() || plan_out.is_null() {
        set_error("null pointer");
        return MooStatus::NullPointer;
    }
    let handle = &*p;
    let expected = handle.problem.n_users * handle.problem.n_slots;
    if len as usize != expected {
        set_error(&format!("buffer holds {len} entries, plan needs {expected}"));
        return MooStatus::BufferTooSmall;
    }
    let dist = match recover_primal(&(*d).solution, &handle.problem, allow_unconverged != 0) {
        Ok(dist) => dist,
        Err(e) => {
            set_error(&e.to_string());
            return MooStatus::SolveError;
        }
    };
    match serving_plan(&dist, seed) {
        Ok(plan) => {
            ptr::copy_nonoverlapping(plan.slots.as_ptr(), plan_out, plan.slots.len());
            MooStatus::Ok
        }
        Err(e) => {
            set_error(&e.to_string());
            MooStatus::SolveError
        }
    }
}

/// Generate `n` boundary points of the ellipsoid described by `ellipsoid
/// json` using a sampler name ("net", "nested-net", "cube", "sphere").
/// `out` receives n * dim doubles, row per point.
///
/// # Safety
/// Strings must be NUL-terminated; `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn moo_boundary_points(
    ellipsoid_json: *const c_char,
    n: u64,
    sampler: *const c_char,
    seed: u64,
    out: *mut f64,
    len: u64,
) -> MooStatus {
    if out.is_null() {
        set_error("null out pointer");
        return MooStatus::NullPointer;
    }
    let text = match read_str(ellipsoid_json) {
        Ok(t) => t,
        Err(s) => return s,
    };
    let sampler_name = match read_str(sampler) {
        Ok(t) => t,
        Err(s) => return s,
    };
    let file: io::EllipsoidFile = match serde_json::from_str(text) {
        Ok(f) => f,
        Err(e) => {
            set_error(&format!("ellipsoid json: {e}"));
            return MooStatus::ParseError;
        }
    };
    let constraint = match file.to_constraint() {
        Ok(c) => c,
        Err(e) => {
            set_error(&e.to_string());
            return MooStatus::InvalidArgument;
        }
    };
    let sampler = match sampler_from_name(sampler_name, seed) {
        Ok(s) => s,
        Err(e) => {
            set_error(&e.to_string());
            return MooStatus::InvalidArgument;
        }
    };
    let pts = match moo_core::lowdisc::generate_boundary_points_with(&constraint, n as usize, sampler)
    {
        Ok(p) => p,
        Err(e) => {
            set_error(&e.to_string());
            return MooStatus::SolveError;
        }
    };
    if (len as usize) != pts.coords.len() {
        set_error(&format!(
            "buffer holds {len} doubles, points need {}",
            pts.coords.len()
        ));
        return MooStatus::BufferTooSmall;
    }
    ptr::copy_nonoverlapping(pts.coords.as_ptr(), out, pts.coords.len());
    MooStatus::Ok
}

/// Solve a QCQP (JSON document) by tangent-plane linearization; the solve
/// report comes back as a JSON string to be released with
/// [`moo_string_free`]. `n == 0` picks the default budget.
///
/// # Safety
/// Strings must be NUL-terminated and `report_out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn moo_qcqp_solve_json(
    qcqp_json: *const c_char,
    n: u64,
    sampler: *const c_char,
    seed: u64,
    tol: f64,
    report_out: *mut *mut c_char,
) -> MooStatus {
    if report_out.is_null() {
        set_error("null out pointer");
        return MooStatus::NullPointer;
    }
    let text = match read_str(qcqp_json) {
        Ok(t) => t,
        Err(s) => return s,
    };
    let sampler_name = match read_str(sampler) {
        Ok(t) => t,
        Err(s) => return s,
    };
    let file: io::QcqpFile = match serde_json::from_str(text) {
        Ok(f) => f,
        Err(e) => {
            set_error(&format!("qcqp json: {e}"));
            return MooStatus::ParseError;
        }
    };
    let inst = match file.to_instance() {
        Ok(i) => i,
        Err(e) => {
            set_error(&e.to_string());
            return MooStatus::InvalidArgument;
        }
    };
    let budget = if n == 0 { default_n_points(inst.dim()) } else { n as usize };
    let run = || -> moo_core::Result<String> {
        let opts = LinearizeOptions {
            sampler: sampler_from_name(sampler_name, seed)?,
            ..Default::default()
        };
        let lin = linearize(&inst, budget, &opts)?;
        let report = solve_qp(
            &inst,
            &lin,
            &QpSolveOptions { tol: if tol > 0.0 { tol } else { 1e-8 }, ..Default::default() },
        )?;
        Ok(serde_json::to_string(&report)?)
    };
    match run() {
        Ok(json) => match CString::new(json) {
            Ok(c) => {
                *report_out = c.into_raw();
                MooStatus::Ok
            }
            Err(_) => {
                set_error("report contained NUL");
                MooStatus::SolveError
            }
        },
        Err(e) => {
            set_error(&e.to_string());
            MooStatus::SolveError
        }
    }
}

/// Release a string returned by this library.
///
/// # Safety
/// `s` must come from this library (or be null), and be freed only once.
#[no_mangle]
pub unsafe extern "C" fn moo_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Riesz energy of `n` points of dimension `dim` packed row-major.
///
/// # Safety
/// `coords` must hold n * dim doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn moo_riesz_energy(
    coords: *const f64,
    n: u64,
    dim: u64,
    exponent: f64,
    out: *mut f64,
) -> MooStatus {
    if coords.is_null() || out.is_null() {
        set_error("null pointer");
        return MooStatus::NullPointer;
    }
    let slice = std::slice::from_raw_parts(coords, (n * dim) as usize);
    let pts = moo_core::lowdisc::PointSet {
        dim: dim as usize,
        n: n as usize,
        coords: slice.to_vec(),
        space: moo_core::lowdisc::SpaceTag::EllipsoidBoundary,
        provenance: moo_core::lowdisc::Provenance::Random { name: "ffi", seed: 0 },
    };
    match moo_core::lowdisc::riesz_energy(&pts, exponent) {
        Ok(v) => {
            *out = v;
            MooStatus::Ok
        }
        Err(e) => {
            set_error(&e.to_string());
            MooStatus::InvalidArgument
        }
    }
}
