//! C ABI over `kolmo`.
//!
//! Objects cross the boundary as opaque handles created by `kolmo_*_new` or
//! `kolmo_*_from_json` and released by the matching `kolmo_*_free`. Every
//! fallible call returns a [`KolmoStatus`]; the message of the last failure on
//! the calling thread is available from [`kolmo_last_error`]. Phase points are
//! flat `double` arrays `[X_1..X_m, Y_1..Y_m, t]` of length `2m + 1`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use kolmo::cli::{run_measure, run_solve, MeasureConfig, SolveConfig};
use kolmo::domain::{CoefficientField, GraphDomain};
use kolmo::geometry::{compose, dilate, inverse, quasi_distance, PhasePoint};
use kolmo::grid::{GridFunction, SolveReport};
use kolmo::homogenize::effective_matrix;
use kolmo::simulate::MeasureHistogram;
use kolmo::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KolmoStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Numerical = 3,
    Format = 4,
    Io = 5,
    Panic = 6,
}

/// Lipschitz graph domain.
pub struct KolmoDomain(GraphDomain);

/// Coefficient field `A(X)`.
pub struct KolmoField(CoefficientField);

/// Monte Carlo boundary-measure histogram.
pub struct KolmoHistogram {
    hist: MeasureHistogram,
    dom: GraphDomain,
}

/// Grid solution with its solve report.
pub struct KolmoGrid {
    gf: GridFunction,
    report: SolveReport,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

fn status_of(e: &Error) -> KolmoStatus {
    match e {
        Error::Format(_) => KolmoStatus::Format,
        Error::Io(_) => KolmoStatus::Io,
        _ if e.is_numerical() => KolmoStatus::Numerical,
        _ => KolmoStatus::InvalidArgument,
    }
}

/// Runs `f`, converting errors and panics into status codes.
fn guard<F: FnOnce() -> Result<(), (KolmoStatus, String)>>(f: F) -> KolmoStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => KolmoStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            KolmoStatus::Panic
        }
    }
}

fn lib_err(e: Error) -> (KolmoStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (KolmoStatus, String) {
    (KolmoStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, (KolmoStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (KolmoStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

fn parse<T: serde::de::DeserializeOwned>(text: &str) -> Result<T, (KolmoStatus, String)> {
    serde_json::from_str(text).map_err(|e| (KolmoStatus::InvalidArgument, e.to_string()))
}

unsafe fn point_arg(m: usize, p: *const f64, what: &str) -> Result<PhasePoint, (KolmoStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    if m == 0 {
        return Err((KolmoStatus::InvalidArgument, "m must be >= 1".into()));
    }
    let s = std::slice::from_raw_parts(p, 2 * m + 1);
    PhasePoint::new(s[..m].to_vec(), s[m..2 * m].to_vec(), s[2 * m]).map_err(lib_err)
}

unsafe fn write_point(p: &PhasePoint, out: *mut f64) {
    let m = p.m();
    let o = std::slice::from_raw_parts_mut(out, 2 * m + 1);
    o[..m].copy_from_slice(p.x());
    o[m..2 * m].copy_from_slice(p.y());
    o[2 * m] = p.t();
}

unsafe fn put<T>(out: *mut *mut T, value: T) {
    *out = Box::into_raw(Box::new(value));
}

fn to_c_string(s: String) -> Result<*mut c_char, (KolmoStatus, String)> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| (KolmoStatus::Format, "string contains NUL".into()))
}

/// Message of the last failed call on this thread, or null. Valid until the next failing call.
#[no_mangle]
pub extern "C" fn kolmo_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn kolmo_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library.
///
/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn kolmo_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Group law `p o q`; `out` receives `2m + 1` values.
///
/// # Safety
/// `p`, `q` and `out` must point to `2m + 1` doubles.
#[no_mangle]
pub unsafe extern "C" fn kolmo_compose(m: usize, p: *const f64, q: *const f64, out: *mut f64) -> KolmoStatus {
    guard(|| {
        let (a, b) = (point_arg(m, p, "p")?, point_arg(m, q, "q")?);
        if out.is_null() {
            return Err(null("out"));
        }
        write_point(&compose(&a, &b).map_err(lib_err)?, out);
        Ok(())
    })
}

/// Group inverse `p^{-1}`.
///
/// # Safety
/// `p` and `out` must point to `2m + 1` doubles.
#[no_mangle]
pub unsafe extern "C" fn kolmo_inverse(m: usize, p: *const f64, out: *mut f64) -> KolmoStatus {
    guard(|| {
        let a = point_arg(m, p, "p")?;
        if out.is_null() {
            return Err(null("out"));
        }
        write_point(&inverse(&a), out);
        Ok(())
    })
}

/// Dilation `delta_r p = (r X, r^3 Y, r^2 t)`.
///
/// # Safety
/// `p` and `out` must point to `2m + 1` doubles.
#[no_mangle]
pub unsafe extern "C" fn kolmo_dilate(m: usize, r: f64, p: *const f64, out: *mut f64) -> KolmoStatus {
    guard(|| {
        let a = point_arg(m, p, "p")?;
        if out.is_null() {
            return Err(null("out"));
        }
        write_point(&dilate(r, &a).map_err(lib_err)?, out);
        Ok(())
    })
}

/// Symmetric quasi-distance `d(p, q)`.
///
/// # Safety
/// `p` and `q` must point to `2m + 1` doubles and `out` to one double.
#[no_mangle]
pub unsafe extern "C" fn kolmo_quasi_distance(m: usize, p: *const f64, q: *const f64, out: *mut f64) -> KolmoStatus {
    guard(|| {
        let (a, b) = (point_arg(m, p, "p")?, point_arg(m, q, "q")?);
        if out.is_null() {
            return Err(null("out"));
        }
        *out = quasi_distance(&a, &b).map_err(lib_err)?;
        Ok(())
    })
}

/// Half-space `x_m > 0`.
///
/// # Safety
/// `out` must be a valid pointer to a handle slot.
#[no_mangle]
pub unsafe extern "C" fn kolmo_domain_flat(m: usize, out: *mut *mut KolmoDomain) -> KolmoStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let dom = GraphDomain::new(m, kolmo::domain::Psi::Flat { level: 0.0 }).map_err(lib_err)?;
        put(out, KolmoDomain(dom));
        Ok(())
    })
}

/// Domain from its JSON description.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn kolmo_domain_from_json(json: *const c_char, out: *mut *mut KolmoDomain) -> KolmoStatus {
    guard(|| {
        let text = str_arg(json, "json")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let dom: GraphDomain = parse(text)?;
        dom.validate().map_err(lib_err)?;
        put(out, KolmoDomain(dom));
        Ok(())
    })
}

/// Dimension `m` of a domain, or 0 for a null handle.
///
/// # Safety
/// `dom` must be null or a live domain handle.
#[no_mangle]
pub unsafe extern "C" fn kolmo_domain_dim(dom: *const KolmoDomain) -> usize {
    dom.as_ref().map_or(0, |d| d.0.m)
}

/// Whether `x` (length `m`) lies strictly above the graph; writes 1 or 0.
///
/// # Safety
/// `dom` must be a live handle, `x` must point to `m` doubles and `out` to one int.
#[no_mangle]
pub unsafe extern "C" fn kolmo_domain_contains(dom: *const KolmoDomain, x: *const f64, out: *mut i32) -> KolmoStatus {
    guard(|| {
        let d = dom.as_ref().ok_or_else(|| null("dom"))?;
        if x.is_null() || out.is_null() {
            return Err(null("x or out"));
        }
        let xs = std::slice::from_raw_parts(x, d.0.m);
        *out = i32::from(d.0.contains_x(xs));
        Ok(())
    })
}

/// # Safety
/// `dom` must be null or a handle from this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn kolmo_domain_free(dom: *mut KolmoDomain) {
    if !dom.is_null() {
        drop(Box::from_raw(dom));
    }
}

/// Identity coefficient field.
///
/// # Safety
/// `out` must be a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn kolmo_field_identity(m: usize, out: *mut *mut KolmoField) -> KolmoStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        if m == 0 {
            return Err((KolmoStatus::InvalidArgument, "m must be >= 1".into()));
        }
        put(out, KolmoField(CoefficientField::identity(m)));
        Ok(())
    })
}

/// Coefficient field from its JSON description.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn kolmo_field_from_json(json: *const c_char, out: *mut *mut KolmoField) -> KolmoStatus {
    guard(|| {
        let text = str_arg(json, "json")?;
        if out.is_null() {
            return Err(null("out"));
        }
        put(out, KolmoField(parse(text)?));
        Ok(())
    })
}

/// Effective tensor on an `n`-point cell grid; `out` receives `m * m` values row-major.
///
/// # Safety
/// `field` must be a live handle and `out` must point to `m * m` doubles.
#[no_mangle]
pub unsafe extern "C" fn kolmo_effective_matrix(field: *const KolmoField, n: usize, out: *mut f64) -> KolmoStatus {
    guard(|| {
        let f = field.as_ref().ok_or_else(|| null("field"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let t = effective_matrix(&f.0, n).map_err(lib_err)?;
        let m = f.0.m;
        let o = std::slice::from_raw_parts_mut(out, m * m);
        for i in 0..m {
            o[i * m..(i + 1) * m].copy_from_slice(&t.matrix[i]);
        }
        Ok(())
    })
}

/// # Safety
/// `field` must be null or a handle from this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn kolmo_field_free(field: *mut KolmoField) {
    if !field.is_null() {
        drop(Box::from_raw(field));
    }
}

/// Runs a Monte Carlo measure experiment described by a `measure` config (JSON).
/// The config's `seed`, or 0, seeds the run.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn kolmo_measure_run(json: *const c_char, out: *mut *mut KolmoHistogram) -> KolmoStatus {
    guard(|| {
        let text = str_arg(json, "json")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let cfg: MeasureConfig = parse(text)?;
        let hist = run_measure(&cfg, cfg.seed.unwrap_or(0)).map_err(lib_err)?;
        put(out, KolmoHistogram { hist, dom: cfg.domain });
        Ok(())
    })
}

/// Number of histogram cells, or 0 for a null handle.
///
/// # Safety
/// `h` must be null or a live histogram handle.
#[no_mangle]
pub unsafe extern "C" fn kolmo_histogram_len(h: *const KolmoHistogram) -> usize {
    h.as_ref().map_or(0, |h| h.hist.counts.len())
}

/// Empirical mass of cell `i` and its standard error.
///
/// # Safety
/// `h` must be a live handle; `mass` and `stderr` must be valid (stderr may be null).
#[no_mangle]
pub unsafe extern "C" fn kolmo_histogram_mass(
    h: *const KolmoHistogram,
    i: usize,
    mass: *mut f64,
    stderr: *mut f64,
) -> KolmoStatus {
    guard(|| {
        let h = h.as_ref().ok_or_else(|| null("histogram"))?;
        if mass.is_null() {
            return Err(null("mass"));
        }
        if i >= h.hist.counts.len() {
            return Err((KolmoStatus::InvalidArgument, format!("cell {i} out of range")));
        }
        *mass = h.hist.mass(i);
        if !stderr.is_null() {
            *stderr = h.hist.stderr(i);
        }
        Ok(())
    })
}

/// Fraction of censored paths.
///
/// # Safety
/// `h` must be a live handle and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn kolmo_histogram_censored(h: *const KolmoHistogram, out: *mut f64) -> KolmoStatus {
    guard(|| {
        let h = h.as_ref().ok_or_else(|| null("histogram"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = h.hist.censored_fraction();
        Ok(())
    })
}

/// JSON report of a histogram; release with [`kolmo_string_free`].
///
/// # Safety
/// `h` must be a live handle and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn kolmo_histogram_to_json(h: *const KolmoHistogram, out: *mut *mut c_char) -> KolmoStatus {
    guard(|| {
        let h = h.as_ref().ok_or_else(|| null("histogram"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let v = h.hist.to_json(&h.dom).map_err(lib_err)?;
        *out = to_c_string(v.to_string())?;
        Ok(())
    })
}

/// # Safety
/// `h` must be null or a handle from this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn kolmo_histogram_free(h: *mut KolmoHistogram) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Runs a grid solve described by a `solve` config (JSON).
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn kolmo_solve_run(json: *const c_char, out: *mut *mut KolmoGrid) -> KolmoStatus {
    guard(|| {
        let text = str_arg(json, "json")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let cfg: SolveConfig = parse(text)?;
        let (gf, report) = run_solve(&cfg).map_err(lib_err)?;
        put(out, KolmoGrid { gf, report });
        Ok(())
    })
}

/// Number of grid axes, or 0 for a null handle.
///
/// # Safety
/// `g` must be null or a live grid handle.
#[no_mangle]
pub unsafe extern "C" fn kolmo_grid_dims(g: *const KolmoGrid) -> usize {
    g.as_ref().map_or(0, |g| g.gf.axes.len())
}

/// Multilinear interpolation at `coords` (one value per axis).
///
/// # Safety
/// `g` must be a live handle, `coords` must point to `kolmo_grid_dims(g)` doubles and `out` be valid.
#[no_mangle]
pub unsafe extern "C" fn kolmo_grid_evaluate(g: *const KolmoGrid, coords: *const f64, out: *mut f64) -> KolmoStatus {
    guard(|| {
        let g = g.as_ref().ok_or_else(|| null("grid"))?;
        if coords.is_null() || out.is_null() {
            return Err(null("coords or out"));
        }
        let c = std::slice::from_raw_parts(coords, g.gf.axes.len());
        *out = g.gf.evaluate(c).map_err(lib_err)?;
        Ok(())
    })
}

/// Largest discrete maximum-principle violation of the solve.
///
/// # Safety
/// `g` must be a live handle and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn kolmo_grid_max_principle_violation(g: *const KolmoGrid, out: *mut f64) -> KolmoStatus {
    guard(|| {
        let g = g.as_ref().ok_or_else(|| null("grid"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = g.report.max_principle_violation;
        Ok(())
    })
}

/// # Safety
/// `g` must be null or a handle from this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn kolmo_grid_free(g: *mut KolmoGrid) {
    if !g.is_null() {
        drop(Box::from_raw(g));
    }
}
