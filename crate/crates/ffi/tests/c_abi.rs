use std::ffi::CStr;
use std::ptr;

use cppd_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(cppd_last_error()) }
        .to_string_lossy()
        .into_owned()
}

struct Sys(*mut CppdCtSystem);

impl Sys {
    fn new(nx: usize, preset: u32) -> Self {
        let mut p = ptr::null_mut();
        assert_eq!(unsafe { cppd_ct_system_new(nx, 18.0, preset, &mut p) }, CppdStatus::Ok);
        assert!(!p.is_null());
        Sys(p)
    }

    fn dims(&self) -> (usize, usize) {
        let (mut n, mut m) = (0, 0);
        assert_eq!(unsafe { cppd_ct_system_dims(self.0, &mut n, &mut m) }, CppdStatus::Ok);
        (n, m)
    }
}

impl Drop for Sys {
    fn drop(&mut self) {
        unsafe { cppd_ct_system_free(self.0) };
    }
}

#[test]
fn version_is_crate_version() {
    let v = unsafe { CStr::from_ptr(cppd_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn project_and_backproject_are_adjoint() {
    let sys = Sys::new(16, CPPD_PRESET_DESK_SPARSE);
    let (n, m) = sys.dims();
    assert_eq!((n, m), (256, 8 * 128));
    let x: Vec<f64> = (0..n).map(|i| ((i * 37) % 11) as f64 - 5.0).collect();
    let y: Vec<f64> = (0..m).map(|i| ((i * 13) % 7) as f64 * 0.25).collect();
    let mut ax = vec![0.0; m];
    let mut aty = vec![0.0; n];
    unsafe {
        assert_eq!(cppd_project(sys.0, x.as_ptr(), n, ax.as_mut_ptr(), m), CppdStatus::Ok);
        assert_eq!(
            cppd_backproject(sys.0, y.as_ptr(), m, aty.as_mut_ptr(), n),
            CppdStatus::Ok
        );
    }
    let lhs: f64 = ax.iter().zip(&y).map(|(a, b)| a * b).sum();
    let rhs: f64 = x.iter().zip(&aty).map(|(a, b)| a * b).sum();
    assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0));
}

#[test]
fn status_codes_and_messages() {
    let sys = Sys::new(16, CPPD_PRESET_DESK_FULL);
    let (n, m) = sys.dims();
    let x = vec![0.0; n];
    let mut y = vec![0.0; m];
    unsafe {
        assert_eq!(
            cppd_project(sys.0, x.as_ptr(), n - 1, y.as_mut_ptr(), m),
            CppdStatus::DimensionMismatch
        );
        assert!(last_error().contains("dimension mismatch"));
        assert_eq!(
            cppd_project(sys.0, ptr::null(), n, y.as_mut_ptr(), m),
            CppdStatus::NullPointer
        );
        assert_eq!(
            cppd_project(ptr::null(), x.as_ptr(), n, y.as_mut_ptr(), m),
            CppdStatus::NullPointer
        );
        assert!(last_error().contains("system"));
        assert_eq!(cppd_project(sys.0, x.as_ptr(), n, y.as_mut_ptr(), m), CppdStatus::Ok);
        assert_eq!(last_error(), "");

        let mut p = ptr::null_mut();
        assert_eq!(cppd_ct_system_new(16, 18.0, 99, &mut p), CppdStatus::InvalidArgument);
        assert!(p.is_null());
        assert_eq!(cppd_ct_system_new(0, 18.0, 0, &mut p), CppdStatus::InvalidArgument);
        assert_eq!(
            cppd_ct_system_new(16, 18.0, 0, ptr::null_mut()),
            CppdStatus::NullPointer
        );
        cppd_ct_system_free(ptr::null_mut());
    }
}

#[test]
fn phantom_and_lsq_reconstruction() {
    let sys = Sys::new(16, CPPD_PRESET_DESK_FULL);
    let (n, m) = sys.dims();
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; m];
    let mut rec = vec![0.0; n];
    let mut r_sigma = f64::NAN;
    unsafe {
        assert_eq!(cppd_phantom(16, 18.0, 3, f.as_mut_ptr(), n), CppdStatus::Ok);
        assert_eq!(
            cppd_phantom(16, 18.0, 3, f.as_mut_ptr(), n + 1),
            CppdStatus::DimensionMismatch
        );
        assert_eq!(cppd_project(sys.0, f.as_ptr(), n, g.as_mut_ptr(), m), CppdStatus::Ok);
        let st = cppd_lsq_solve(sys.0, g.as_ptr(), m, 0.1, 300, rec.as_mut_ptr(), n, &mut r_sigma);
        assert_eq!(st, CppdStatus::Ok, "{}", last_error());
        let st = cppd_lsq_solve(sys.0, g.as_ptr(), m, -1.0, 10, rec.as_mut_ptr(), n, ptr::null_mut());
        assert_eq!(st, CppdStatus::InvalidArgument);
    }
    assert!(f.iter().any(|v| *v > 0.0));
    assert!(r_sigma.is_finite());
    let err = f.iter().zip(&rec).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let scale = f.iter().map(|a| a * a).sum::<f64>().sqrt();
    assert!(err < 0.05 * scale, "relative error {}", err / scale);
}

#[test]
fn l1_projection_in_place() {
    let mut v = [3.0, -1.0, 0.5];
    unsafe {
        assert_eq!(cppd_project_l1_ball(v.as_ptr(), 3, 2.0, v.as_mut_ptr()), CppdStatus::Ok);
    }
    // closed form: shrink by 1
    assert!(
        (v[0] - 2.0).abs() < 1e-9 && v[1].abs() < 1e-9 && v[2].abs() < 1e-9,
        "{v:?}"
    );
    let mut out = [0.0; 2];
    unsafe {
        assert_eq!(
            cppd_project_l1_ball([1.0, 1.0].as_ptr(), 2, -1.0, out.as_mut_ptr()),
            CppdStatus::InvalidArgument
        );
    }
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/cppd.h")).unwrap();
    for sym in [
        "cppd_version",
        "cppd_last_error",
        "cppd_ct_system_new",
        "cppd_ct_system_free",
        "cppd_ct_system_dims",
        "cppd_project",
        "cppd_backproject",
        "cppd_phantom",
        "cppd_lsq_solve",
        "cppd_project_l1_ball",
        "typedef struct CppdCtSystem CppdCtSystem",
        "CPPD_STATUS_NUMERICAL = 4",
        "CPPD_PRESET_DESK_SPARSE 4",
    ] {
        assert!(header.contains(sym), "header lacks {sym}");
    }
}

#[test]
fn header_compiles_as_c() {
    let Ok(cc) = which_cc() else { return };
    let dir = tempfile_dir();
    let src = dir.join("use.c");
    std::fs::write(
        &src,
        "#include \"cppd.h\"\nint main(void) { CppdCtSystem *s = 0; return (int)cppd_ct_system_dims(s, 0, 0); }\n",
    )
    .unwrap();
    let status = std::process::Command::new(cc)
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(concat!(env!("CARGO_MANIFEST_DIR"), "/include"))
        .arg(&src)
        .status()
        .unwrap();
    let _ = std::fs::remove_dir_all(&dir);
    assert!(status.success());
}

fn which_cc() -> Result<&'static str, ()> {
    for cc in ["cc", "gcc", "clang"] {
        if std::process::Command::new(cc).arg("--version").output().is_ok() {
            return Ok(cc);
        }
    }
    Err(())
}

fn tempfile_dir() -> std::path::PathBuf {
    let d = std::env::temp_dir().join(format!("cppd-ffi-{}", std::process::id()));
    std::fs::create_dir_all(&d).unwrap();
    d
}
