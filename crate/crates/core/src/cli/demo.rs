//! Toy-dynamics and LF-oracle demos that write CSV files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::prox::{lf_transform_numeric, Grid1D};
use crate::toy;

pub const DEMOS: &[&str] = &["fe-s0", "fe-s1", "be", "abe", "cppd1d", "perfect-pc", "lf-oracle"];

fn write(dir: &Path, name: &str, text: String, out: &mut Vec<PathBuf>) -> Result<()> {
    let p = dir.join(name);
    std::fs::write(&p, text)?;
    out.push(p);
    Ok(())
}

/// Run demo `name`, writing its CSV files into `dir`. Returns the paths.
pub fn run_demo(name: &str, dir: &Path) -> Result<Vec<PathBuf>> {
    if !DEMOS.contains(&name) {
        return Err(Error::Config(format!(
            "unknown demo '{name}'; known: {}",
            DEMOS.join(", ")
        )));
    }
    std::fs::create_dir_all(dir)?;
    let mut out = Vec::new();
    match name {
        "fe-s0" => {
            let t = toy::forward_euler_s0(1.0, 0.0, 0.5, 20);
            write(dir, "fe_s0.csv", with_ratio(&t), &mut out)?;
        }
        "fe-s1" => {
            let t = toy::forward_euler_s1(1.0, 1.0, 0.25, 20);
            write(dir, "fe_s1.csv", with_ratio(&t), &mut out)?;
        }
        "be" => {
            let a = DMatrix::from_element(1, 1, 1.0);
            let t = toy::backward_euler(&a, 1.0, &[1.0], &[0.0], 20)?;
            let mut s = String::from("k,x,lambda,radius\n");
            for (k, ((x, l), r)) in t.xs.iter().zip(&t.lambdas).zip(&t.radii).enumerate() {
                let _ = writeln!(s, "{k},{:e},{:e},{r:e}", x[0], l[0]);
            }
            write(dir, "be.csv", s, &mut out)?;
        }
        "abe" => {
            write(
                dir,
                "abe_two_step.csv",
                toy::abe_s0(1.0, 0.5, 1.0, 1.0, 1.0, 4).to_csv(),
                &mut out,
            )?;
            write(
                dir,
                "abe_periodic.csv",
                toy::abe_s0(1.0, 0.5, 0.0, 1.0, 1.0, 24).to_csv(),
                &mut out,
            )?;
        }
        "cppd1d" => {
            let grid = toy::default_sigma_grid();
            for a in [0.01, 0.1, 1.0] {
                let sweep = toy::cppd_sigma_sweep(1.0, 0.0, a, &grid, 100);
                write(dir, &format!("cppd1d_a{a}.csv"), toy::sweep_csv(&sweep), &mut out)?;
            }
        }
        "perfect-pc" => {
            let a = DMatrix::from_row_slice(3, 3, &[2.0, 0.5, -0.3, 0.1, 1.5, 0.4, -0.2, 0.3, 1.8]);
            let mut s = String::from("rho,k,u_norm,lambda_norm\n");
            for rho in [0.01, 1.0, 100.0] {
                let run = toy::perfect_preconditioning(&a, rho, &[1.0, -2.0, 0.5], &[0.3, 0.0, 4.0], 4)?;
                for (k, (u, l)) in run.u.iter().zip(&run.full.lambdas).enumerate() {
                    let _ = writeln!(
                        s,
                        "{rho},{k},{:e},{:e}",
                        crate::vecops::norm2(u),
                        crate::vecops::norm2(l)
                    );
                }
            }
            write(dir, "perfect_pc.csv", s, &mut out)?;
        }
        "lf-oracle" => write(dir, "lf_oracle.csv", lf_table()?, &mut out)?,
        _ => unreachable!("checked above"),
    }
    Ok(out)
}

fn with_ratio(t: &toy::Trajectory2D) -> String {
    let mut s = String::from("k,x,lambda,radius,ratio\n");
    for (k, ((x, l), r)) in t.points.iter().zip(&t.radii).enumerate() {
        let ratio = if k == 0 {
            String::new()
        } else {
            format!("{:e}", r / t.radii[k - 1])
        };
        let _ = writeln!(s, "{k},{x:e},{l:e},{r:e},{ratio}");
    }
    s
}

/// Numeric conjugates of the four textbook examples next to their closed
/// forms: quadratic, absolute value, affine and interval indicator.
fn lf_table() -> Result<String> {
    let xs = |f: &dyn Fn(f64) -> f64| Grid1D::sample(-5.0, 5.0, 2001, f);
    let m = Grid1D::sample(-3.0, 3.0, 61, |_| 0.0)?;
    type Case = (&'static str, Grid1D, Box<dyn Fn(f64) -> f64>);
    let cases: [Case; 4] = [
        ("quadratic", xs(&|x| x * x)?, Box::new(|m| m * m / 4.0)),
        (
            "abs",
            xs(&|x| x.abs())?,
            Box::new(|m| if m.abs() <= 1.0 { 0.0 } else { f64::INFINITY }),
        ),
        (
            "affine",
            xs(&|x| 0.5 * x + 1.0)?,
            Box::new(|m| if m == 0.5 { -1.0 } else { f64::INFINITY }),
        ),
        (
            "indicator",
            xs(&|x| if x.abs() <= 1.0 { 0.0 } else { f64::INFINITY })?,
            Box::new(|m| m.abs()),
        ),
    ];
    let mut s = String::from("example,m,numeric,analytic\n");
    for (name, f, exact) in &cases {
        let conj = lf_transform_numeric(f, &m)?;
        for (mi, v) in conj.points() {
            let _ = writeln!(s, "{name},{mi:e},{v:e},{:e}", exact(mi));
        }
    }
    Ok(s)
}
