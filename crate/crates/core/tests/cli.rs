use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_cppd");

fn cppd(args: &[&str], cwd: &Path) -> Output {
    Command::new(BIN).args(args).current_dir(cwd).output().unwrap()
}

fn small(out: &str) -> Vec<String> {
    ["nx=16", "preset=desk-sparse", "k_max=40", "stride=5", "power_iters=50"]
        .iter()
        .map(|s| s.to_string())
        .chain([format!("output={out}")])
        .collect()
}

fn with_sets<'a>(cmd: &'a str, sets: &'a [String]) -> Vec<&'a str> {
    let mut v = vec![cmd];
    for s in sets {
        v.push("--set");
        v.push(s);
    }
    v
}

#[test]
fn run_writes_artifacts_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let a = small("a");
    let b = small("b");
    assert!(cppd(&with_sets("run", &a), dir.path()).status.success());
    assert!(cppd(&with_sets("run", &b), dir.path()).status.success());
    for f in ["convergence.csv", "final_image.raw", "final_image.pgm"] {
        let x = std::fs::read(dir.path().join("a").join(f)).unwrap();
        let y = std::fs::read(dir.path().join("b").join(f)).unwrap();
        assert_eq!(x, y, "{f} differs");
    }
    let csv = std::fs::read_to_string(dir.path().join("a/convergence.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(
        lines[0],
        "iter,r_sigma,r_tau,image_rmse,data_rmse,grad_mag,cpd_gap,beta"
    );
    assert_eq!(lines.last().unwrap().split(',').next(), Some("40"));
    // 16 x 16 f64 image
    assert_eq!(
        std::fs::metadata(dir.path().join("a/final_image.raw")).unwrap().len(),
        256 * 8
    );
}

#[test]
fn manifest_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let mut sets = small("first");
    sets.push("problem=tvclsq".into());
    sets.push("rho=1".into());
    assert!(cppd(&with_sets("run", &sets), dir.path()).status.success());
    let manifest = dir.path().join("first/manifest");
    let text = std::fs::read_to_string(&manifest).unwrap();
    assert!(text.contains("resolved gamma") && text.contains("resolved nu"));
    let out = cppd(
        &["run", "--config", manifest.to_str().unwrap(), "--set", "output=second"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["convergence.csv", "final_image.raw"] {
        assert_eq!(
            std::fs::read(dir.path().join("first").join(f)).unwrap(),
            std::fs::read(dir.path().join("second").join(f)).unwrap()
        );
    }
}

#[test]
fn cgls_csv_leaves_saddle_columns_empty() {
    let dir = tempfile::tempdir().unwrap();
    let mut sets = small("cg");
    sets.push("solver=cgls".into());
    assert!(cppd(&with_sets("run", &sets), dir.path()).status.success());
    let csv = std::fs::read_to_string(dir.path().join("cg/convergence.csv")).unwrap();
    for line in csv.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        assert_eq!(f.len(), 8);
        assert!(f[1].is_empty() && f[2].is_empty() && f[6].is_empty() && f[7].is_empty());
        assert!(!f[3].is_empty() && !f[5].is_empty());
    }
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(cppd(&["run", "--set", "bogus=1"], dir.path()).status.code(), Some(1));
    assert_eq!(cppd(&["run", "--set", "rho=-1"], dir.path()).status.code(), Some(1));
    assert_eq!(
        cppd(&["run", "--config", "missing.cfg"], dir.path()).status.code(),
        Some(1)
    );
    assert_eq!(cppd(&["frobnicate"], dir.path()).status.code(), Some(1));
    assert_eq!(cppd(&["--help"], dir.path()).status.code(), Some(0));

    let mut sets = small("gd");
    sets.extend(["solver=gd".into(), "alpha=50".into(), "k_max=200".into()]);
    let out = cppd(&with_sets("run", &sets), dir.path());
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("solve"));
}

#[test]
fn sweep_writes_per_value_directories() {
    let dir = tempfile::tempdir().unwrap();
    let sets = small("sw");
    let mut args = with_sets("sweep", &sets);
    args.extend(["--param", "rho", "--values", "0.1,1", "--workers", "2"]);
    let out = cppd(&args, dir.path());
    assert!(out.status.success());
    let summary = std::fs::read_to_string(dir.path().join("sw/summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 3);
    assert!(summary.starts_with("value,final_image_rmse,final_r_sigma,final_r_tau"));
    for v in ["rho-0.1", "rho-1"] {
        assert!(dir.path().join("sw").join(v).join("convergence.csv").exists());
    }
    // a serial sweep produces the same per-run CSVs
    let sets = small("serial");
    let mut args = with_sets("sweep", &sets);
    args.extend(["--param", "rho", "--values", "0.1,1", "--workers", "1"]);
    assert!(cppd(&args, dir.path()).status.success());
    assert_eq!(
        std::fs::read(dir.path().join("sw/rho-1/convergence.csv")).unwrap(),
        std::fs::read(dir.path().join("serial/rho-1/convergence.csv")).unwrap()
    );
}

#[test]
fn demo_phantom_and_eig_commands() {
    let dir = tempfile::tempdir().unwrap();
    assert!(cppd(&["demo", "cppd1d", "--output", "d"], dir.path()).status.success());
    assert!(dir.path().join("d/cppd1d_a0.01.csv").exists());
    assert_eq!(cppd(&["demo", "nope"], dir.path()).status.code(), Some(1));

    assert!(cppd(&["phantom", "--set", "nx=32", "--set", "output=ph"], dir.path())
        .status
        .success());
    let pgm = std::fs::read(dir.path().join("ph/phantom.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n32 32\n65535\n"));

    let eig = [
        "eig",
        "--set",
        "nx=16",
        "--set",
        "k=3",
        "--set",
        "n_power=30",
        "--set",
        "output=e",
        "--set",
        "eig_cache=c",
    ];
    let out = cppd(&eig, dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let values: Vec<f64> = String::from_utf8_lossy(&out.stdout)
        .lines()
        .map(|l| l.parse().unwrap())
        .collect();
    assert_eq!(values.len(), 3);
    assert!(values[0] >= values[1] && values[1] >= values[2] && values[2] > 0.0);
    assert_eq!(std::fs::read_dir(dir.path().join("c")).unwrap().count(), 1);
    // second call reads the cache and reports the same values
    let again = cppd(&eig, dir.path());
    assert_eq!(out.stdout, again.stdout);
}
