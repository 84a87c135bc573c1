//! C ABI over the mesh, the complete-electrode-model solver and trained
//! surrogates.
//!
//! Every object crosses the boundary as an opaque pointer created by a
//! `*_new`/`*_load` function and released with the matching `*_free`. Calls
//! return an [`McnStatus`]; on failure [`mcn_last_error`] copies a message
//! describing the most recent error on the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use mcmcnet::fem::{CemSolver, CurrentPatterns, FieldKind, ParamField};
use mcmcnet::mesh::{assign_electrodes, build_disk_mesh, TriMesh};
use mcmcnet::surrogate::{load_model, SurrogateNet, PLANE};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum McnStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    /// Output buffer shorter than the result; the needed length is reported
    /// through the length out-parameter.
    BufferTooSmall = 3,
    Mesh = 4,
    Solver = 5,
    Model = 6,
    Panic = 7,
}

/// Disk mesh.
pub struct McnMesh(TriMesh);

/// CEM solver bound to a mesh and electrode layout, driven by trigonometric
/// current patterns.
pub struct McnSolver {
    solver: CemSolver,
    patterns: CurrentPatterns,
    triangles: usize,
}

/// Trained surrogate network.
pub struct McnNet(SurrogateNet);

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn fail(status: McnStatus, msg: impl Into<String>) -> McnStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
    status
}

fn guard(f: impl FnOnce() -> McnStatus) -> McnStatus {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| fail(McnStatus::Panic, "panic inside mcmcnet"))
}

unsafe fn slice<'a>(data: *const f64, len: usize) -> Result<&'a [f64], McnStatus> {
    if data.is_null() {
        return Err(fail(McnStatus::NullPointer, "input array is null"));
    }
    Ok(std::slice::from_raw_parts(data, len))
}

/// Copies `values` into `out` (capacity `*len`) and stores the length written
/// or needed in `*len`.
unsafe fn emit(values: &[f64], out: *mut f64, len: *mut usize) -> McnStatus {
    if len.is_null() || out.is_null() {
        return fail(McnStatus::NullPointer, "output buffer or length is null");
    }
    let capacity = *len;
    *len = values.len();
    if capacity < values.len() {
        return fail(
            McnStatus::BufferTooSmall,
            format!("output needs {} values, buffer holds {capacity}", values.len()),
        );
    }
    ptr::copy_nonoverlapping(values.as_ptr(), out, values.len());
    McnStatus::Ok
}

unsafe fn store<T>(out: *mut *mut T, value: T) -> McnStatus {
    *out = Box::into_raw(Box::new(value));
    McnStatus::Ok
}

/// Copies the last error message on this thread into `buf` as a
/// NUL-terminated string, truncating to `len - 1` bytes. Returns the full
/// message length in bytes.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn mcn_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Builds the disk mesh at `refinement` levels.
///
/// # Safety
/// `out` must be a valid pointer to write the handle to.
#[no_mangle]
pub unsafe extern "C" fn mcn_mesh_new(refinement: u32, out: *mut *mut McnMesh) -> McnStatus {
    guard(|| {
        if out.is_null() {
            return fail(McnStatus::NullPointer, "out is null");
        }
        match build_disk_mesh(refinement) {
            Ok(m) => store(out, McnMesh(m)),
            Err(e) => fail(McnStatus::Mesh, e.to_string()),
        }
    })
}

/// # Safety
/// `mesh` must be null or a handle from [`mcn_mesh_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mcn_mesh_free(mesh: *mut McnMesh) {
    if !mesh.is_null() {
        drop(Box::from_raw(mesh));
    }
}

/// Node count, or 0 for a null handle.
///
/// # Safety
/// `mesh` must be null or a live mesh handle.
#[no_mangle]
pub unsafe extern "C" fn mcn_mesh_node_count(mesh: *const McnMesh) -> usize {
    mesh.as_ref().map_or(0, |m| m.0.node_count())
}

/// Triangle count, or 0 for a null handle.
///
/// # Safety
/// `mesh` must be null or a live mesh handle.
#[no_mangle]
pub unsafe extern "C" fn mcn_mesh_triangle_count(mesh: *const McnMesh) -> usize {
    mesh.as_ref().map_or(0, |m| m.0.tri_count())
}

/// Solver for `electrodes` equally spaced electrodes covering `coverage` of
/// the boundary with uniform contact impedance. The mesh may be freed
/// afterwards.
///
/// # Safety
/// `mesh` must be a live mesh handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mcn_solver_new(
    mesh: *const McnMesh,
    electrodes: usize,
    coverage: f64,
    contact_impedance: f64,
    out: *mut *mut McnSolver,
) -> McnStatus {
    guard(|| {
        let (Some(mesh), false) = (mesh.as_ref(), out.is_null()) else {
            return fail(McnStatus::NullPointer, "mesh or out is null");
        };
        if contact_impedance.is_nan() || contact_impedance <= 0.0 {
            return fail(McnStatus::InvalidArgument, "contact impedance must be positive");
        }
        let layout = match assign_electrodes(&mesh.0, electrodes, coverage) {
            Ok(l) => l.with_contact_impedance(contact_impedance),
            Err(e) => return fail(McnStatus::InvalidArgument, e.to_string()),
        };
        match CemSolver::new(&mesh.0, &layout) {
            Ok(solver) => store(
                out,
                McnSolver {
                    solver,
                    patterns: CurrentPatterns::trigonometric(&layout),
                    triangles: mesh.0.tri_count(),
                },
            ),
            Err(e) => fail(McnStatus::Solver, e.to_string()),
        }
    })
}

/// # Safety
/// `solver` must be null or a handle from [`mcn_solver_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mcn_solver_free(solver: *mut McnSolver) {
    if !solver.is_null() {
        drop(Box::from_raw(solver));
    }
}

/// Electrode voltages for per-triangle conductivities `sigma`, row-major
/// with one row of electrode voltages per current pattern.
///
/// # Safety
/// `sigma` must point to `sigma_len` doubles, `out` to `*out_len` writable
/// doubles.
#[no_mangle]
pub unsafe extern "C" fn mcn_solver_solve(
    solver: *const McnSolver,
    sigma: *const f64,
    sigma_len: usize,
    out: *mut f64,
    out_len: *mut usize,
) -> McnStatus {
    guard(|| {
        let Some(s) = solver.as_ref() else {
            return fail(McnStatus::NullPointer, "solver is null");
        };
        let sigma = match slice(sigma, sigma_len) {
            Ok(v) => v,
            Err(status) => return status,
        };
        if sigma.len() != s.triangles {
            return fail(
                McnStatus::InvalidArgument,
                format!("sigma has {} values, mesh has {} triangles", sigma.len(), s.triangles),
            );
        }
        let field = ParamField::per_triangle(FieldKind::Conductivity, sigma.to_vec());
        match s.solver.solve(&field, &s.patterns) {
            Ok(m) => emit(&m.data, out, out_len),
            Err(e) => fail(McnStatus::Solver, e.to_string()),
        }
    })
}

/// Loads a model file written by the `train` command.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mcn_net_load(path: *const c_char, out: *mut *mut McnNet) -> McnStatus {
    guard(|| {
        if path.is_null() || out.is_null() {
            return fail(McnStatus::NullPointer, "path or out is null");
        }
        let Ok(path) = CStr::from_ptr(path).to_str() else {
            return fail(McnStatus::InvalidArgument, "path is not UTF-8");
        };
        match load_model(Path::new(path)) {
            Ok(net) => store(out, McnNet(net)),
            Err(e) => fail(McnStatus::Model, e.to_string()),
        }
    })
}

/// # Safety
/// `net` must be null or a handle from [`mcn_net_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mcn_net_free(net: *mut McnNet) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// Expected input length, or 0 for a null handle.
///
/// # Safety
/// `net` must be null or a live net handle.
#[no_mangle]
pub unsafe extern "C" fn mcn_net_input_dim(net: *const McnNet) -> usize {
    net.as_ref().map_or(0, |n| n.0.arch.input_dim)
}

/// Length of every prediction: the 16×16 output plane.
#[no_mangle]
pub extern "C" fn mcn_net_output_len() -> usize {
    PLANE
}

/// Surrogate prediction on the output plane, in physical units.
///
/// # Safety
/// `input` must point to `input_len` doubles, `out` to `*out_len` writable
/// doubles.
#[no_mangle]
pub unsafe extern "C" fn mcn_net_predict(
    net: *const McnNet,
    input: *const f64,
    input_len: usize,
    out: *mut f64,
    out_len: *mut usize,
) -> McnStatus {
    guard(|| {
        let Some(n) = net.as_ref() else {
            return fail(McnStatus::NullPointer, "net is null");
        };
        let input = match slice(input, input_len) {
            Ok(v) => v,
            Err(status) => return status,
        };
        match n.0.forward(input) {
            Ok(plane) => emit(&plane, out, out_len),
            Err(e) => fail(McnStatus::InvalidArgument, e.to_string()),
        }
    })
}
