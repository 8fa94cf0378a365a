//! C interface to `conic-core`.
//!
//! Handles are opaque heap objects owned by the caller and released with
//! the matching `*_free` function. Every fallible call returns a
//! [`ConicStatus`]; the message of the last failure on the calling thread is
//! available through [`conic_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::Arc;

use conic_core::boundary::{BoundaryGeometry, BoundaryKind, BoundaryPoint};
use conic_core::distance::{default_conic_grid, DistanceEngine, DistanceOptions};
use conic_core::metric::{ChartPoint, ConicMetricSpec, MetricFamily};
use conic_core::scenario::{self, Registry, RunContext, Scenario};
use conic_core::GeomError;

/// Result codes of the C interface.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConicStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    NoPath = 3,
    SingularEvaluation = 4,
    Domain = 5,
    UnsupportedFamily = 6,
    InvalidGrid = 7,
    Config = 8,
    Io = 9,
    /// The scenario ran but reported invariant violations.
    Violations = 10,
    Panic = 11,
}

impl From<&GeomError> for ConicStatus {
    fn from(e: &GeomError) -> Self {
        match e {
            GeomError::InvalidInput(_) => ConicStatus::InvalidInput,
            GeomError::NoPath(_) => ConicStatus::NoPath,
            GeomError::SingularEvaluation(_) => ConicStatus::SingularEvaluation,
            GeomError::Domain(_) => ConicStatus::Domain,
            GeomError::UnsupportedFamily(_) => ConicStatus::UnsupportedFamily,
            GeomError::InvalidGrid(_) => ConicStatus::InvalidGrid,
            GeomError::Config(_) => ConicStatus::Config,
            GeomError::Io(_) => ConicStatus::Io,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(status: ConicStatus, msg: impl Into<String>) -> ConicStatus {
    set_error(msg.into());
    status
}

fn geom(e: GeomError) -> ConicStatus {
    let s = ConicStatus::from(&e);
    fail(s, e.to_string())
}

fn guard(f: impl FnOnce() -> ConicStatus) -> ConicStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            fail(ConicStatus::Panic, msg)
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, ConicStatus> {
    if p.is_null() {
        return Err(fail(ConicStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(ConicStatus::InvalidInput, format!("{what} is not UTF-8")))
}

/// Message of the last failure on this thread, or null. The pointer stays
/// valid until the next call into this library from the same thread.
#[no_mangle]
pub extern "C" fn conic_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn conic_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Distance engine over one chart metric.
pub struct ConicEngine {
    engine: DistanceEngine,
    opts: DistanceOptions,
}

fn boundary_point(b: &BoundaryGeometry, y: &[f64]) -> Result<BoundaryPoint, GeomError> {
    let p = match b.kind() {
        BoundaryKind::Circle { .. } if y.len() == 1 => BoundaryPoint::Angle(y[0]),
        BoundaryKind::RoundSphere { .. } => BoundaryPoint::Sphere(y.to_vec()),
        BoundaryKind::FlatTorus { .. } => BoundaryPoint::Torus(y.to_vec()),
        BoundaryKind::Mesh(_) if y.len() == 1 && y[0] >= 0.0 && y[0].fract() == 0.0 => {
            BoundaryPoint::Vertex(y[0] as usize)
        }
        BoundaryKind::Mesh(_) if y.len() == 2 && y[0] >= 0.0 && y[0].fract() == 0.0 => {
            BoundaryPoint::Edge { edge: y[0] as usize, t: y[1] }
        }
        _ => return Err(GeomError::InvalidInput(format!("{} boundary coordinates do not fit the boundary", y.len()))),
    };
    b.normalize(&p)
}

unsafe fn write_engine(out: *mut *mut ConicEngine, engine: DistanceEngine) -> ConicStatus {
    *out = Box::into_raw(Box::new(ConicEngine { engine, opts: DistanceOptions::default() }));
    ConicStatus::Ok
}

/// Engine for the straight cone `dr² + r² dθ²` over a circle of the given
/// circumference, on `[0, height]`.
///
/// # Safety
/// `out` must be a valid pointer to writable storage.
#[no_mangle]
pub unsafe extern "C" fn conic_engine_new_cone(
    circumference: f64,
    height: f64,
    out: *mut *mut ConicEngine,
) -> ConicStatus {
    guard(|| {
        if out.is_null() {
            return fail(ConicStatus::NullPointer, "out is null");
        }
        let build = || -> Result<DistanceEngine, GeomError> {
            let b = Arc::new(BoundaryGeometry::circle(circumference)?);
            let spec = ConicMetricSpec::new(b, height, MetricFamily::constant())?;
            let grid = default_conic_grid(&spec);
            DistanceEngine::new(Arc::new(spec), grid)
        };
        match build() {
            Ok(e) => write_engine(out, e),
            Err(e) => geom(e),
        }
    })
}

/// Engine for metric `metric` of a scenario given as TOML text, on the
/// default grid of that metric.
///
/// # Safety
/// `toml` and `metric` must be NUL-terminated strings; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn conic_engine_from_scenario(
    toml: *const c_char,
    metric: *const c_char,
    out: *mut *mut ConicEngine,
) -> ConicStatus {
    guard(|| {
        if out.is_null() {
            return fail(ConicStatus::NullPointer, "out is null");
        }
        let (text, name) = match (str_arg(toml, "toml"), str_arg(metric, "metric")) {
            (Ok(t), Ok(n)) => (t, n),
            (Err(s), _) | (_, Err(s)) => return s,
        };
        let build = || -> Result<DistanceEngine, GeomError> {
            let s = Scenario::parse(text)?;
            let m = Registry::new(&s)?.metric(name)?;
            DistanceEngine::new(m.chart(), m.default_grid())
        };
        match build() {
            Ok(e) => write_engine(out, e),
            Err(e) => geom(e),
        }
    })
}

/// Turns closed forms and curve refinement on or off (both on by default).
///
/// # Safety
/// `engine` must come from a constructor of this library and not be freed.
#[no_mangle]
pub unsafe extern "C" fn conic_engine_set_options(engine: *mut ConicEngine, exact: bool, refine: bool) -> ConicStatus {
    guard(|| match engine.as_mut() {
        None => fail(ConicStatus::NullPointer, "engine is null"),
        Some(e) => {
            e.opts.use_exact = exact;
            e.opts.refine = refine;
            ConicStatus::Ok
        }
    })
}

/// Radial interval `[lo, hi]` of the engine's chart.
///
/// # Safety
/// `engine` must be live; `lo` and `hi` must be valid.
#[no_mangle]
pub unsafe extern "C" fn conic_engine_radial_domain(
    engine: *const ConicEngine,
    lo: *mut f64,
    hi: *mut f64,
) -> ConicStatus {
    guard(|| match engine.as_ref() {
        None => fail(ConicStatus::NullPointer, "engine is null"),
        Some(_) if lo.is_null() || hi.is_null() => fail(ConicStatus::NullPointer, "output is null"),
        Some(e) => {
            let (a, b) = e.engine.metric().radial_domain();
            *lo = a;
            *hi = b;
            ConicStatus::Ok
        }
    })
}

/// Distance between `(ya, ra)` and `(yb, rb)`. Boundary coordinates are an
/// angle on circles, ambient unit vectors on spheres, coordinates on tori,
/// and `[vertex]` or `[edge, t]` on meshes.
///
/// # Safety
/// `ya` and `yb` must point to `ya_len` and `yb_len` doubles; `engine` must
/// be live; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn conic_engine_distance(
    engine: *const ConicEngine,
    ya: *const f64,
    ya_len: usize,
    ra: f64,
    yb: *const f64,
    yb_len: usize,
    rb: f64,
    out: *mut f64,
) -> ConicStatus {
    guard(|| {
        let Some(e) = engine.as_ref() else {
            return fail(ConicStatus::NullPointer, "engine is null");
        };
        if ya.is_null() || yb.is_null() || out.is_null() {
            return fail(ConicStatus::NullPointer, "argument is null");
        }
        let ya = std::slice::from_raw_parts(ya, ya_len);
        let yb = std::slice::from_raw_parts(yb, yb_len);
        let b = e.engine.metric().boundary();
        let run = || -> Result<f64, GeomError> {
            let a = ChartPoint::new(boundary_point(b, ya)?, ra);
            let c = ChartPoint::new(boundary_point(b, yb)?, rb);
            Ok(e.engine.distance(&a, &c, &e.opts)?.value)
        };
        match run() {
            Ok(d) => {
                *out = d;
                ConicStatus::Ok
            }
            Err(err) => geom(err),
        }
    })
}

/// Releases an engine. Null is ignored.
///
/// # Safety
/// `engine` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn conic_engine_free(engine: *mut ConicEngine) {
    if !engine.is_null() {
        drop(Box::from_raw(engine));
    }
}

/// A parsed and validated scenario.
pub struct ConicScenario {
    scenario: Scenario,
}

/// Parses scenario TOML. Relative mesh paths resolve against the working
/// directory.
///
/// # Safety
/// `toml` must be a NUL-terminated string; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn conic_scenario_parse(toml: *const c_char, out: *mut *mut ConicScenario) -> ConicStatus {
    guard(|| {
        if out.is_null() {
            return fail(ConicStatus::NullPointer, "out is null");
        }
        let text = match str_arg(toml, "toml") {
            Ok(t) => t,
            Err(s) => return s,
        };
        match Scenario::parse(text) {
            Ok(scenario) => {
                *out = Box::into_raw(Box::new(ConicScenario { scenario }));
                ConicStatus::Ok
            }
            Err(e) => geom(e),
        }
    })
}

/// Loads a bundled scenario by name.
///
/// # Safety
/// `name` must be a NUL-terminated string; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn conic_scenario_bundled(name: *const c_char, out: *mut *mut ConicScenario) -> ConicStatus {
    guard(|| {
        if out.is_null() {
            return fail(ConicStatus::NullPointer, "out is null");
        }
        let name = match str_arg(name, "name") {
            Ok(n) => n,
            Err(s) => return s,
        };
        match scenario::bundled_scenario(name) {
            None => fail(ConicStatus::Config, format!("no bundled scenario {name:?}")),
            Some(Err(e)) => geom(e),
            Some(Ok(scenario)) => {
                *out = Box::into_raw(Box::new(ConicScenario { scenario }));
                ConicStatus::Ok
            }
        }
    })
}

/// Runs every task, writing artifacts under `out_dir`. A null `seed` keeps
/// the scenario seed. `artifacts` (optional) receives the number of files
/// written. Returns `Violations` when invariant checks failed.
///
/// # Safety
/// `scenario` must be live; `out_dir` must be a NUL-terminated string;
/// `seed` and `artifacts` may be null or valid.
#[no_mangle]
pub unsafe extern "C" fn conic_scenario_run(
    scenario: *const ConicScenario,
    out_dir: *const c_char,
    seed: *const u64,
    artifacts: *mut usize,
) -> ConicStatus {
    guard(|| {
        let Some(s) = scenario.as_ref() else {
            return fail(ConicStatus::NullPointer, "scenario is null");
        };
        let dir = match str_arg(out_dir, "out_dir") {
            Ok(d) => PathBuf::from(d),
            Err(st) => return st,
        };
        let ctx = RunContext { out_dir: dir, seed: seed.as_ref().copied() };
        match scenario::run(&s.scenario, &ctx) {
            Err(e) => geom(e),
            Ok(sum) => {
                if let Some(n) = artifacts.as_mut() {
                    *n = sum.artifacts.len();
                }
                if sum.violations.is_empty() {
                    ConicStatus::Ok
                } else {
                    fail(ConicStatus::Violations, sum.violations.join("\n"))
                }
            }
        }
    })
}

/// Releases a scenario. Null is ignored.
///
/// # Safety
/// `scenario` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn conic_scenario_free(scenario: *mut ConicScenario) {
    if !scenario.is_null() {
        drop(Box::from_raw(scenario));
    }
}
