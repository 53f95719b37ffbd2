//! C interface to `coulomb-lab`.
//!
//! Objects are opaque handles created by `*_new`/`*_solve`/`*_load` and
//! released by the matching `*_free`. Every fallible function returns a
//! [`CoulombStatus`]; on failure the message is kept per thread and can be
//! read with [`coulomb_last_error_message`]. Panics never cross the
//! boundary: they are reported as [`CoulombStatus::Panic`].
//!
//! Point arrays are interleaved `x0, y0, x1, y1, ...` of length `2 n`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use coulomb_lab::energy::hamiltonian;
use coulomb_lab::equilibrium::{default_grid_with, solve_equilibrium, EquilibriumMeasure, DEFAULT_MASS_TOL};
use coulomb_lab::field::{max_over_disk, potential_field_points};
use coulomb_lab::grid::Grid2D;
use coulomb_lab::model::{ConfinementPotential, Configuration};
use coulomb_lab::sampler::{ginibre_exact_with, GinibreMethod};
use coulomb_lab::{LabError, Point};

/// Result of a call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CoulombStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Domain = 3,
    IterationLimit = 4,
    Config = 5,
    Numeric = 6,
    DegenerateField = 7,
    Incompatible = 8,
    Format = 9,
    Io = 10,
    Panic = 11,
}

/// A confinement potential.
pub struct CoulombPotential(ConfinementPotential);

/// An equilibrium measure on a grid.
pub struct CoulombEquilibrium(EquilibriumMeasure);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &LabError) -> CoulombStatus {
    match e {
        LabError::InvalidPoint { .. } => CoulombStatus::InvalidArgument,
        LabError::Domain(_) => CoulombStatus::Domain,
        LabError::IterationLimit { .. } => CoulombStatus::IterationLimit,
        LabError::Config(_) => CoulombStatus::Config,
        LabError::Numeric(_) => CoulombStatus::Numeric,
        LabError::DegenerateField(_) => CoulombStatus::DegenerateField,
        LabError::Incompatible { .. } => CoulombStatus::Incompatible,
        LabError::Format(_) => CoulombStatus::Format,
        LabError::Io(_) => CoulombStatus::Io,
    }
}

enum Failure {
    Null(&'static str),
    Invalid(String),
    Lab(LabError),
}

impl From<LabError> for Failure {
    fn from(e: LabError) -> Self {
        Failure::Lab(e)
    }
}

type Outcome = std::result::Result<(), Failure>;

fn guard<F: FnOnce() -> Outcome>(f: F) -> CoulombStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CoulombStatus::Ok,
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            CoulombStatus::NullPointer
        }
        Ok(Err(Failure::Invalid(msg))) => {
            set_error(msg);
            CoulombStatus::InvalidArgument
        }
        Ok(Err(Failure::Lab(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            CoulombStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &'static str) -> std::result::Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn write<T>(p: *mut T, value: T, what: &'static str) -> Outcome {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    p.write(value);
    Ok(())
}

unsafe fn string(p: *const c_char, what: &'static str) -> std::result::Result<String, Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(str::to_owned)
        .map_err(|_| Failure::Invalid(format!("{what} is not valid UTF-8")))
}

unsafe fn points(xy: *const f64, n: usize) -> std::result::Result<Vec<Point>, Failure> {
    if n == 0 {
        return Ok(Vec::new());
    }
    if xy.is_null() {
        return Err(Failure::Null("points"));
    }
    let raw = std::slice::from_raw_parts(xy, 2 * n);
    Ok(raw.chunks_exact(2).map(|c| Point::new(c[0], c[1])).collect())
}

/// Length in bytes of the last error message of this thread, without the
/// terminating nul; 0 if the last call succeeded.
#[no_mangle]
pub extern "C" fn coulomb_last_error_length() -> usize {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(0, |s| s.as_bytes().len()))
}

/// Copies the last error message of this thread into `buf` (nul
/// terminated, truncated to `len - 1` bytes). Returns the full message
/// length, so a return value `>= len` signals truncation.
///
/// # Safety
/// `buf` must point to `len` writable bytes or be null with `len == 0`.
#[no_mangle]
pub unsafe extern "C" fn coulomb_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let bytes = e.as_ref().map_or(&[][..], |s| s.as_bytes());
        if !buf.is_null() && len > 0 {
            let k = bytes.len().min(len - 1);
            std::ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, k);
            *buf.add(k) = 0;
        }
        bytes.len()
    })
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn coulomb_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Creates a potential from a tag: `quadratic`, `quartic` or `grid:<path>`.
///
/// # Safety
/// `tag` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn coulomb_potential_new(tag: *const c_char, out: *mut *mut CoulombPotential) -> CoulombStatus {
    guard(|| {
        let tag = string(tag, "tag")?;
        let v = ConfinementPotential::from_tag(&tag)?;
        write(out, Box::into_raw(Box::new(CoulombPotential(v))), "out")
    })
}

/// Releases a potential; null is ignored.
///
/// # Safety
/// `p` must come from [`coulomb_potential_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn coulomb_potential_free(p: *mut CoulombPotential) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// `V(x, y)`.
///
/// # Safety
/// `p` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn coulomb_potential_value(
    p: *const CoulombPotential,
    x: f64,
    y: f64,
    out: *mut f64,
) -> CoulombStatus {
    guard(|| {
        let p = deref(p, "potential")?;
        let q = Point::new(x, y).validated()?;
        write(out, p.0.value(q), "out")
    })
}

/// Solves the obstacle problem on an `m x m` grid of half-width
/// `half_width`; a non-positive half-width picks one from the potential.
///
/// # Safety
/// `p` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn coulomb_equilibrium_solve(
    p: *const CoulombPotential,
    m: usize,
    half_width: f64,
    out: *mut *mut CoulombEquilibrium,
) -> CoulombStatus {
    guard(|| {
        let v = &deref(p, "potential")?.0;
        let grid = if half_width > 0.0 {
            Grid2D::new(half_width, m)?
        } else {
            default_grid_with(v, m)?
        };
        let eq = solve_equilibrium(v, grid, DEFAULT_MASS_TOL)?;
        write(out, Box::into_raw(Box::new(CoulombEquilibrium(eq))), "out")
    })
}

/// Releases an equilibrium measure; null is ignored.
///
/// # Safety
/// `eq` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn coulomb_equilibrium_free(eq: *mut CoulombEquilibrium) {
    if !eq.is_null() {
        drop(Box::from_raw(eq));
    }
}

/// The constant `c_V`.
///
/// # Safety
/// `eq` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn coulomb_equilibrium_c_v(eq: *const CoulombEquilibrium, out: *mut f64) -> CoulombStatus {
    guard(|| write(out, deref(eq, "equilibrium")?.0.c_v, "out"))
}

/// Total mass of the discrete density.
///
/// # Safety
/// `eq` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn coulomb_equilibrium_mass(eq: *const CoulombEquilibrium, out: *mut f64) -> CoulombStatus {
    guard(|| write(out, deref(eq, "equilibrium")?.0.mass(), "out"))
}

/// Largest distance from the origin of a droplet node.
///
/// # Safety
/// `eq` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn coulomb_equilibrium_support_radius(
    eq: *const CoulombEquilibrium,
    out: *mut f64,
) -> CoulombStatus {
    guard(|| write(out, deref(eq, "equilibrium")?.0.support_radius(), "out"))
}

/// Grid resolution and half-width.
///
/// # Safety
/// `eq` must be a live handle; `m` and `half_width` writable.
#[no_mangle]
pub unsafe extern "C" fn coulomb_equilibrium_grid(
    eq: *const CoulombEquilibrium,
    m: *mut usize,
    half_width: *mut f64,
) -> CoulombStatus {
    guard(|| {
        let g = deref(eq, "equilibrium")?.0.grid;
        write(m, g.resolution(), "m")?;
        write(half_width, g.half_width(), "half_width")
    })
}

/// Bilinear interpolation of the density; 0 outside the grid.
///
/// # Safety
/// `eq` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn coulomb_equilibrium_density(
    eq: *const CoulombEquilibrium,
    x: f64,
    y: f64,
    out: *mut f64,
) -> CoulombStatus {
    guard(|| {
        let eq = &deref(eq, "equilibrium")?.0;
        let q = Point::new(x, y).validated()?;
        write(out, eq.density.interpolate(q).unwrap_or(0.0), "out")
    })
}

/// `h0 = -∫ log|x - y| dμ(y)` at `(x, y)`.
///
/// # Safety
/// `eq` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn coulomb_equilibrium_background_potential(
    eq: *const CoulombEquilibrium,
    x: f64,
    y: f64,
    out: *mut f64,
) -> CoulombStatus {
    guard(|| {
        let eq = &deref(eq, "equilibrium")?.0;
        let q = Point::new(x, y).validated()?;
        write(out, eq.background_potential(q), "out")
    })
}

/// Writes the binary `EQM1` representation to `path`.
///
/// # Safety
/// `eq` must be a live handle and `path` a nul-terminated string.
#[no_mangle]
pub unsafe extern "C" fn coulomb_equilibrium_save(eq: *const CoulombEquilibrium, path: *const c_char) -> CoulombStatus {
    guard(|| {
        let eq = &deref(eq, "equilibrium")?.0;
        eq.save(PathBuf::from(string(path, "path")?))?;
        Ok(())
    })
}

/// Reads an `EQM1` file; the potential is copied into the new handle.
///
/// # Safety
/// `p` must be a live handle, `path` a nul-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn coulomb_equilibrium_load(
    p: *const CoulombPotential,
    path: *const c_char,
    out: *mut *mut CoulombEquilibrium,
) -> CoulombStatus {
    guard(|| {
        let v = deref(p, "potential")?.0.clone();
        let eq = EquilibriumMeasure::load(PathBuf::from(string(path, "path")?), v)?;
        write(out, Box::into_raw(Box::new(CoulombEquilibrium(eq))), "out")
    })
}

/// Eigenvalues of an `n x n` Ginibre matrix drawn with `seed`: an exact
/// `β = 2` sample for `V = |x|²/2`, written to `xy` (length `2 n`).
///
/// # Safety
/// `xy` must point to `2 n` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn coulomb_ginibre(n: usize, seed: u64, xy: *mut f64) -> CoulombStatus {
    guard(|| {
        if xy.is_null() {
            return Err(Failure::Null("xy"));
        }
        let conf = ginibre_exact_with(n, seed, GinibreMethod::Hessenberg)?;
        let out = std::slice::from_raw_parts_mut(xy, 2 * n);
        for (chunk, p) in out.chunks_exact_mut(2).zip(conf.points()) {
            chunk[0] = p.x;
            chunk[1] = p.y;
        }
        Ok(())
    })
}

/// `H_N = ½ Σ_{i≠j} -log|x_i - x_j| + N Σ V(x_i)`; `+∞` if two points coincide.
///
/// # Safety
/// `p` must be a live handle, `xy` must hold `2 n` doubles and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn coulomb_hamiltonian(
    p: *const CoulombPotential,
    xy: *const f64,
    n: usize,
    out: *mut f64,
) -> CoulombStatus {
    guard(|| {
        let v = &deref(p, "potential")?.0;
        if n == 0 {
            return Err(Failure::Invalid("at least one point is required".into()));
        }
        let conf = Configuration::from_points(points(xy, n)?, 2.0)?;
        write(out, hamiltonian(&conf, v), "out")
    })
}

/// Maximum of `Pot_N(z) = Σ log|z - x_i| + N h0(z)` over a `resolution x
/// resolution` grid on the disk `D((cx, cy), radius)`, skipping nodes
/// within `delta` of a particle.
///
/// # Safety
/// `eq` must be a live handle, `xy` must hold `2 n` doubles and the
/// outputs must be writable (`arg_x`, `arg_y` may be null).
#[no_mangle]
pub unsafe extern "C" fn coulomb_potential_field_max(
    eq: *const CoulombEquilibrium,
    xy: *const f64,
    n: usize,
    cx: f64,
    cy: f64,
    radius: f64,
    resolution: usize,
    delta: f64,
    max: *mut f64,
    arg_x: *mut f64,
    arg_y: *mut f64,
) -> CoulombStatus {
    guard(|| {
        let eq = &deref(eq, "equilibrium")?.0;
        let pts = points(xy, n)?;
        if let Some(bad) = pts.iter().find(|p| !p.is_finite()) {
            return Err(Failure::Lab(LabError::InvalidPoint { x: bad.x, y: bad.y }));
        }
        let field = potential_field_points(&pts, eq, Point::new(cx, cy), radius, resolution, delta)?;
        let (m, at) = max_over_disk(&field)?;
        write(max, m, "max")?;
        if !arg_x.is_null() {
            arg_x.write(at.x);
        }
        if !arg_y.is_null() {
            arg_y.write(at.y);
        }
        Ok(())
    })
}
