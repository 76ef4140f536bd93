//! C interface to the `elab` library.
//!
//! Every entry point returns an integer status (`ELAB_OK` on success) and
//! writes results through out-pointers. Objects cross the boundary as opaque
//! handles that the caller releases with the matching `*_free`. The message of
//! the last failure on the calling thread is available from
//! [`elab_last_error`]. Panics never unwind into C; they map to
//! `ELAB_ERR_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;

use elab::capacity::cdc_ratio;
use elab::coefficients::CoefficientField;
use elab::domain::{GridDomain, Shape};
use elab::solver::Operator;
use elab::Error;

pub const ELAB_OK: i32 = 0;
/// A required pointer argument was null.
pub const ELAB_ERR_NULL: i32 = 1;
pub const ELAB_ERR_INVALID_ARGUMENT: i32 = 2;
/// A caller buffer has the wrong length.
pub const ELAB_ERR_BUFFER: i32 = 3;
pub const ELAB_ERR_PARSE: i32 = 4;
/// The lattice is too coarse for the request.
pub const ELAB_ERR_RESOLUTION: i32 = 5;
pub const ELAB_ERR_POLE: i32 = 6;
pub const ELAB_ERR_SOLVER: i32 = 7;
pub const ELAB_ERR_GEOMETRY: i32 = 8;
pub const ELAB_ERR_PANIC: i32 = 9;
pub const ELAB_ERR_OTHER: i32 = 10;

/// A voxel domain.
pub struct ElabDomain {
    inner: Arc<GridDomain>,
}

/// An assembled and factored divergence-form operator on a domain.
pub struct ElabOperator {
    inner: Operator,
}

thread_local! {
    static LAST_ERROR: RefCell<Vec<u8>> = const { RefCell::new(Vec::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| {
        let mut v = msg.into_bytes();
        v.retain(|&b| b != 0);
        *e.borrow_mut() = v;
    });
}

fn code_of(e: &Error) -> i32 {
    match e {
        Error::InvalidParameter(_) | Error::Ellipticity { .. } | Error::Range(_) => ELAB_ERR_INVALID_ARGUMENT,
        Error::Parse(_) => ELAB_ERR_PARSE,
        Error::Resolution(_) | Error::Coverage(_) | Error::Tuning(_) => ELAB_ERR_RESOLUTION,
        Error::Pole(_) => ELAB_ERR_POLE,
        Error::Solver { .. } | Error::MaximumPrinciple { .. } | Error::DensityUndefined(_) => ELAB_ERR_SOLVER,
        Error::Disconnected { .. } | Error::DegenerateBall { .. } | Error::Unreachable { .. } => ELAB_ERR_GEOMETRY,
        Error::Io(_) => ELAB_ERR_OTHER,
    }
}

/// Runs `f`, converting library errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), (i32, String)>) -> i32 {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => ELAB_OK,
        Ok(Err((code, msg))) => {
            set_error(msg);
            code
        }
        Err(_) => {
            set_error("internal panic".into());
            ELAB_ERR_PANIC
        }
    }
}

fn lib(e: Error) -> (i32, String) {
    (code_of(&e), e.to_string())
}

fn null(what: &str) -> (i32, String) {
    (ELAB_ERR_NULL, format!("{what} is null"))
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len`) and returns the full message length in bytes.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn elab_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr() as *const c_char, buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Builds a domain from a shape name (`square`, `disk`, `lipschitz_graph(s)`,
/// `koch(d)`, `slit`, `cube`, `ball`) on `n` lattice nodes per axis.
///
/// # Safety
/// `shape` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn elab_domain_new(shape: *const c_char, n: u32, out: *mut *mut ElabDomain) -> i32 {
    guard(|| {
        if shape.is_null() {
            return Err(null("shape"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let name = CStr::from_ptr(shape).to_str().map_err(|e| (ELAB_ERR_PARSE, e.to_string()))?;
        let shape = Shape::parse(name).map_err(lib)?;
        let domain = GridDomain::build(&shape, n as usize).map_err(lib)?;
        *out = Box::into_raw(Box::new(ElabDomain { inner: Arc::new(domain) }));
        Ok(())
    })
}

/// # Safety
/// `domain` must be null or a handle from [`elab_domain_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn elab_domain_free(domain: *mut ElabDomain) {
    if !domain.is_null() {
        drop(Box::from_raw(domain));
    }
}

/// Spatial dimension, interior cell count and boundary face count.
///
/// # Safety
/// `domain` must be a live handle; the out-pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn elab_domain_info(
    domain: *const ElabDomain,
    dim: *mut usize,
    cells: *mut usize,
    faces: *mut usize,
) -> i32 {
    guard(|| {
        let d = domain.as_ref().ok_or_else(|| null("domain"))?;
        if dim.is_null() || cells.is_null() || faces.is_null() {
            return Err(null("out"));
        }
        *dim = d.inner.dim;
        *cells = d.inner.n_cells();
        *faces = d.inner.n_faces();
        Ok(())
    })
}

/// Interior cell containing `(x, y, z)`.
///
/// # Safety
/// `domain` must be a live handle; `cell` must be writable.
#[no_mangle]
pub unsafe extern "C" fn elab_domain_locate(
    domain: *const ElabDomain,
    x: f64,
    y: f64,
    z: f64,
    cell: *mut usize,
) -> i32 {
    guard(|| {
        let d = domain.as_ref().ok_or_else(|| null("domain"))?;
        if cell.is_null() {
            return Err(null("cell"));
        }
        *cell = d
            .inner
            .locate(&[x, y, z])
            .ok_or_else(|| (ELAB_ERR_INVALID_ARGUMENT, format!("({x}, {y}, {z}) is not interior")))?;
        Ok(())
    })
}

/// The operator `-div(A∇·)` with `A = I + eps·E·φ`, where `φ` is the smooth bump
/// on `B(center, radius)` and `E` the row-major `dim×dim` matrix `direction`.
/// `eps = 0` gives the Laplacian.
///
/// # Safety
/// `domain` must be a live handle; `direction` must hold `direction_len`
/// doubles and `center` three; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn elab_operator_new_bump(
    domain: *const ElabDomain,
    eps: f64,
    direction: *const f64,
    direction_len: usize,
    center: *const f64,
    radius: f64,
    out: *mut *mut ElabOperator,
) -> i32 {
    guard(|| {
        let d = domain.as_ref().ok_or_else(|| null("domain"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let base = CoefficientField::identity(&d.inner);
        let field = if eps == 0.0 {
            base
        } else {
            if direction.is_null() || center.is_null() {
                return Err(null("direction or center"));
            }
            let dir = std::slice::from_raw_parts(direction, direction_len);
            let c = std::slice::from_raw_parts(center, 3);
            CoefficientField::bump(&d.inner, &base, eps, dir, &[c[0], c[1], c[2]], radius).map_err(lib)?
        };
        let op = Operator::new(d.inner.clone(), field).map_err(lib)?;
        *out = Box::into_raw(Box::new(ElabOperator { inner: op }));
        Ok(())
    })
}

/// # Safety
/// `op` must be null or a handle from [`elab_operator_new_bump`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn elab_operator_free(op: *mut ElabOperator) {
    if !op.is_null() {
        drop(Box::from_raw(op));
    }
}

/// Elliptic measure of the pole cell, one value per boundary face.
///
/// # Safety
/// `op` must be a live handle; `omega` must hold `len` doubles, and `len`
/// must equal the face count.
#[no_mangle]
pub unsafe extern "C" fn elab_elliptic_measure(
    op: *const ElabOperator,
    pole: usize,
    omega: *mut f64,
    len: usize,
) -> i32 {
    guard(|| {
        let op = op.as_ref().ok_or_else(|| null("op"))?;
        if omega.is_null() {
            return Err(null("omega"));
        }
        let faces = op.inner.domain.n_faces();
        if len != faces {
            return Err((ELAB_ERR_BUFFER, format!("buffer holds {len} values, the domain has {faces} faces")));
        }
        let m = op.inner.elliptic_measure(pole).map_err(lib)?;
        std::slice::from_raw_parts_mut(omega, len).copy_from_slice(&m.omega);
        Ok(())
    })
}

/// Solves `Lu = 0` with boundary data `data` (one value per face) into `u`
/// (one value per interior cell).
///
/// # Safety
/// `op` must be a live handle; `data` must hold `data_len` doubles and `u`
/// `u_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn elab_solve_dirichlet(
    op: *const ElabOperator,
    data: *const f64,
    data_len: usize,
    u: *mut f64,
    u_len: usize,
) -> i32 {
    guard(|| {
        let op = op.as_ref().ok_or_else(|| null("op"))?;
        if data.is_null() || u.is_null() {
            return Err(null("data or u"));
        }
        let d = &op.inner.domain;
        if data_len != d.n_faces() || u_len != d.n_cells() {
            return Err((ELAB_ERR_BUFFER, format!("expected {} faces and {} cells", d.n_faces(), d.n_cells())));
        }
        let f = std::slice::from_raw_parts(data, data_len);
        let sol = op.inner.solve_dirichlet(f).map_err(lib)?;
        std::slice::from_raw_parts_mut(u, u_len).copy_from_slice(&sol);
        Ok(())
    })
}

/// Capacity density ratio at boundary face `face` and radius `r`.
///
/// # Safety
/// `domain` must be a live handle; `ratio` must be writable.
#[no_mangle]
pub unsafe extern "C" fn elab_cdc_ratio(domain: *const ElabDomain, face: usize, r: f64, ratio: *mut f64) -> i32 {
    guard(|| {
        let d = domain.as_ref().ok_or_else(|| null("domain"))?;
        if ratio.is_null() {
            return Err(null("ratio"));
        }
        *ratio = cdc_ratio(&d.inner, face, r).map_err(lib)?.ratio;
        Ok(())
    })
}
