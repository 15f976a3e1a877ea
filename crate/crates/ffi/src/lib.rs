//! C ABI over the `cppd` core crate.
//!
//! Every entry point returns a [`CppdStatus`]. On failure the message is
//! available from [`cppd_last_error`] on the same thread. Panics are caught
//! at the boundary and reported as `CPPD_STATUS_PANIC`.
//!
//! Buffers are caller-owned `double` arrays whose lengths are passed
//! alongside; a length that disagrees with the system dimensions yields
//! `CPPD_STATUS_DIMENSION_MISMATCH`.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;

use cppd::ct::{CtSystem, FanBeamGeometry, ImageGrid, ScanPreset};
use cppd::linop::{LinearMap, MapRef};
use cppd::solver::{self, Problem, RunOptions};
use cppd::{phantom, prox, spectral, Error};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CppdStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    /// Divergence, non-finite values or a failed inner solve.
    Numerical = 4,
    Io = 5,
    Panic = 6,
}

pub const CPPD_PRESET_FULL: u32 = 0;
pub const CPPD_PRESET_SPARSE: u32 = 1;
pub const CPPD_PRESET_LIMITED: u32 = 2;
pub const CPPD_PRESET_DESK_FULL: u32 = 3;
pub const CPPD_PRESET_DESK_SPARSE: u32 = 4;
pub const CPPD_PRESET_DESK_LIMITED: u32 = 5;

/// Opaque CT system: image grid, fan-beam geometry and masked projector.
pub struct CppdCtSystem {
    inner: CtSystem,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

type Failure = (CppdStatus, String);

fn from_error(e: Error) -> Failure {
    let status = match &e {
        Error::DimensionMismatch { .. } => CppdStatus::DimensionMismatch,
        Error::Io(_) | Error::Format(_) => CppdStatus::Io,
        e if e.is_numerical() => CppdStatus::Numerical,
        _ => CppdStatus::InvalidArgument,
    };
    (status, e.to_string())
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> CppdStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            CppdStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(&msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(&format!("panic: {msg}"));
            CppdStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    (CppdStatus::NullPointer, format!("{what} is null"))
}

unsafe fn input<'a>(p: *const f64, n: usize, what: &str) -> Result<&'a [f64], Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn output<'a>(p: *mut f64, n: usize, what: &str) -> Result<&'a mut [f64], Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, n))
}

unsafe fn system<'a>(sys: *const CppdCtSystem) -> Result<&'a CtSystem, Failure> {
    sys.as_ref().map(|s| &s.inner).ok_or_else(|| null("system"))
}

fn expect_len(what: &'static str, expected: usize, found: usize) -> Result<(), Failure> {
    if expected == found {
        Ok(())
    } else {
        Err(from_error(Error::DimensionMismatch {
            context: what,
            expected,
            found,
        }))
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cppd_version() -> *const c_char {
    static V: &CStr = match CStr::from_bytes_with_nul(concat!(env!("CARGO_PKG_VERSION"), "\0").as_bytes()) {
        Ok(c) => c,
        Err(_) => panic!("version string"),
    };
    V.as_ptr()
}

/// Message of the last failed call on this thread, or "" after a success.
/// Valid until the next `cppd_*` call on the same thread.
#[no_mangle]
pub extern "C" fn cppd_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Build a system for an `nx` x `nx` grid of side `side_cm` and one of the
/// `CPPD_PRESET_*` scans, sized to that grid.
#[no_mangle]
pub unsafe extern "C" fn cppd_ct_system_new(
    nx: usize,
    side_cm: f64,
    preset: u32,
    out: *mut *mut CppdCtSystem,
) -> CppdStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let p = *ScanPreset::ALL
            .get(preset as usize)
            .ok_or_else(|| (CppdStatus::InvalidArgument, format!("unknown preset {preset}")))?;
        let grid = ImageGrid::new(nx, side_cm).map_err(from_error)?;
        let base = FanBeamGeometry::preset(p);
        let geom = FanBeamGeometry::for_fov(
            base.n_views,
            base.arc_length,
            base.n_bins,
            base.source_to_center,
            base.source_to_detector,
            side_cm,
        )
        .map_err(from_error)?;
        let inner = CtSystem::new(grid, geom).map_err(from_error)?;
        *out = Box::into_raw(Box::new(CppdCtSystem { inner }));
        Ok(())
    })
}

/// Release a system; null is ignored.
#[no_mangle]
pub unsafe extern "C" fn cppd_ct_system_free(sys: *mut CppdCtSystem) {
    if !sys.is_null() {
        drop(Box::from_raw(sys));
    }
}

/// Number of pixels and of rays (views x bins).
#[no_mangle]
pub unsafe extern "C" fn cppd_ct_system_dims(
    sys: *const CppdCtSystem,
    n_pixels: *mut usize,
    n_rays: *mut usize,
) -> CppdStatus {
    guard(|| {
        let s = system(sys)?;
        if n_pixels.is_null() || n_rays.is_null() {
            return Err(null("dimension output"));
        }
        *n_pixels = s.grid.n_pixels();
        *n_rays = s.geometry.n_rays();
        Ok(())
    })
}

/// `sino = X image`.
#[no_mangle]
pub unsafe extern "C" fn cppd_project(
    sys: *const CppdCtSystem,
    image: *const f64,
    n_image: usize,
    sino: *mut f64,
    n_sino: usize,
) -> CppdStatus {
    guard(|| {
        let s = system(sys)?;
        let x = input(image, n_image, "image")?;
        let y = output(sino, n_sino, "sinogram")?;
        expect_len("sinogram output", s.geometry.n_rays(), n_sino)?;
        expect_len("image input", s.grid.n_pixels(), n_image)?;
        s.projector.forward_into(x, y);
        Ok(())
    })
}

/// `image = X^T sino`.
#[no_mangle]
pub unsafe extern "C" fn cppd_backproject(
    sys: *const CppdCtSystem,
    sino: *const f64,
    n_sino: usize,
    image: *mut f64,
    n_image: usize,
) -> CppdStatus {
    guard(|| {
        let s = system(sys)?;
        let y = input(sino, n_sino, "sinogram")?;
        let x = output(image, n_image, "image")?;
        expect_len("image output", s.grid.n_pixels(), n_image)?;
        expect_len("sinogram input", s.geometry.n_rays(), n_sino)?;
        s.projector.adjoint_into(y, x);
        Ok(())
    })
}

/// Seeded two-tissue phantom on an `nx` x `nx` grid of side `side_cm`.
#[no_mangle]
pub unsafe extern "C" fn cppd_phantom(nx: usize, side_cm: f64, seed: u64, out: *mut f64, n: usize) -> CppdStatus {
    guard(|| {
        let grid = ImageGrid::new(nx, side_cm).map_err(from_error)?;
        let dst = output(out, n, "phantom output")?;
        expect_len("phantom output", grid.n_pixels(), n)?;
        dst.copy_from_slice(&phantom::generate(&grid, seed).image);
        Ok(())
    })
}

/// Least-squares reconstruction with scalar steps `sigma = rho / L`,
/// `tau = 1 / (rho L)` for `k_max` iterations from zero. `final_r_sigma`
/// may be null.
#[no_mangle]
pub unsafe extern "C" fn cppd_lsq_solve(
    sys: *const CppdCtSystem,
    sino: *const f64,
    n_sino: usize,
    rho: f64,
    k_max: usize,
    image: *mut f64,
    n_image: usize,
    final_r_sigma: *mut f64,
) -> CppdStatus {
    guard(|| {
        let s = system(sys)?;
        let g = input(sino, n_sino, "sinogram")?;
        let dst = output(image, n_image, "image")?;
        expect_len("image output", s.grid.n_pixels(), n_image)?;
        let x: MapRef = Arc::clone(&s.projector) as MapRef;
        let problem = Problem::lsq(x, g.to_vec())
            .and_then(|p| p.with_active(s.active.clone()))
            .map_err(from_error)?;
        let norm = spectral::spectral_norm(problem.operator().as_ref(), 200, 0);
        let plan = spectral::scalar_steps(norm, rho).map_err(from_error)?;
        let (state, record) = solver::run_cppd_lsq(&problem, &plan, &RunOptions::new(k_max)).map_err(from_error)?;
        dst.copy_from_slice(&state.x);
        if let Some(r) = final_r_sigma.as_mut() {
            *r = record.last().and_then(|row| row.r_sigma).unwrap_or(f64::NAN);
        }
        Ok(())
    })
}

/// Euclidean projection of `v` onto the l1 ball of `radius`. `out` may
/// equal `v`.
#[no_mangle]
pub unsafe extern "C" fn cppd_project_l1_ball(v: *const f64, n: usize, radius: f64, out: *mut f64) -> CppdStatus {
    guard(|| {
        let src = input(v, n, "v")?.to_vec();
        let dst = output(out, n, "out")?;
        let tol = prox::default_l1_tol(&src);
        let r = prox::project_l1_ball(&src, radius, tol).map_err(from_error)?;
        dst.copy_from_slice(&r.value);
        Ok(())
    })
}
