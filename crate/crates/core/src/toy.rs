//! Closed-form saddle-point dynamics on tiny problems: forward and backward
//! Euler on bilinear potentials, the approximate backward Euler (CPPD)
//! recursion, the 1D quadratic CPPD trajectory, perfect preconditioning and
//! Hessian classification of critical points.

use nalgebra::{DMatrix, DVector, Matrix2, SymmetricEigen, Vector2};
use rayon::prelude::*;

use crate::error::{check_len, Error, Result};

/// Parameters a 2D trajectory was generated with.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ToyParams {
    /// Step size `alpha` (Euler schemes) or dual step `sigma` (CPPD).
    pub step: f64,
    /// Step product `a = sigma tau`.
    pub a: f64,
    pub theta: f64,
}

/// Iterates `(x_k, lambda_k)` for `k = 0..=k_max` and their radii.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory2D {
    pub points: Vec<(f64, f64)>,
    pub params: ToyParams,
    pub radii: Vec<f64>,
}

impl Trajectory2D {
    fn iterate(
        start: (f64, f64),
        k_max: usize,
        params: ToyParams,
        mut step: impl FnMut(f64, f64) -> (f64, f64),
    ) -> Self {
        let mut points = Vec::with_capacity(k_max + 1);
        points.push(start);
        let (mut x, mut l) = start;
        for _ in 0..k_max {
            (x, l) = step(x, l);
            points.push((x, l));
        }
        let radii = points.iter().map(|(x, l)| x.hypot(*l)).collect();
        Self { points, params, radii }
    }

    fn from_matrix(m: Matrix2<f64>, x0: f64, l0: f64, k_max: usize, params: ToyParams) -> Self {
        Self::iterate((x0, l0), k_max, params, |x, l| {
            let v = m * Vector2::new(x, l);
            (v[0], v[1])
        })
    }

    pub fn last(&self) -> (f64, f64) {
        *self.points.last().expect("trajectory holds the start point")
    }

    pub fn final_magnitude(&self) -> f64 {
        *self.radii.last().expect("trajectory holds the start point")
    }

    /// CSV `k,x,lambda,radius`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("k,x,lambda,radius\n");
        for (k, ((x, l), r)) in self.points.iter().zip(&self.radii).enumerate() {
            s.push_str(&format!("{k},{x:e},{l:e},{r:e}\n"));
        }
        s
    }
}

/// Iterates of a vector-valued saddle iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryN {
    pub xs: Vec<Vec<f64>>,
    pub lambdas: Vec<Vec<f64>>,
    pub radii: Vec<f64>,
}

impl TrajectoryN {
    fn push(&mut self, x: Vec<f64>, l: Vec<f64>) {
        let r = x.iter().chain(&l).map(|v| v * v).sum::<f64>().sqrt();
        self.xs.push(x);
        self.lambdas.push(l);
        self.radii.push(r);
    }
}

/// Forward Euler on `s0(x, lambda) = x lambda`:
/// `x+ = x - alpha lambda`, `lambda+ = lambda + alpha x`.
pub fn forward_euler_s0(x0: f64, l0: f64, alpha: f64, k_max: usize) -> Trajectory2D {
    let params = ToyParams {
        step: alpha,
        ..Default::default()
    };
    Trajectory2D::iterate((x0, l0), k_max, params, |x, l| (x - alpha * l, l + alpha * x))
}

/// Forward Euler on `s1(x, lambda) = (x^2 - lambda^2)`:
/// both coordinates contract by `1 - 2 alpha`.
pub fn forward_euler_s1(x0: f64, l0: f64, alpha: f64, k_max: usize) -> Trajectory2D {
    let params = ToyParams {
        step: alpha,
        ..Default::default()
    };
    let c = 1.0 - 2.0 * alpha;
    Trajectory2D::iterate((x0, l0), k_max, params, |x, l| (c * x, c * l))
}

/// Backward Euler on `lambda^T A x`: each step solves
/// `[[I, alpha A^T], [-alpha A, I]] (x+, lambda+) = (x, lambda)`.
pub fn backward_euler(a: &DMatrix<f64>, alpha: f64, x0: &[f64], l0: &[f64], k_max: usize) -> Result<TrajectoryN> {
    let (m, n) = a.shape();
    check_len("backward Euler x0", n, x0.len())?;
    check_len("backward Euler lambda0", m, l0.len())?;
    if !(alpha > 0.0) {
        return Err(Error::invalid(format!("backward Euler needs alpha > 0, got {alpha}")));
    }
    let mut block = DMatrix::identity(n + m, n + m);
    block.view_mut((0, n), (n, m)).copy_from(&(a.transpose() * alpha));
    block.view_mut((n, 0), (m, n)).copy_from(&(a * -alpha));
    let lu = block.lu();
    if !lu.is_invertible() {
        return Err(Error::invalid("backward Euler block system is singular"));
    }
    let mut traj = TrajectoryN {
        xs: Vec::new(),
        lambdas: Vec::new(),
        radii: Vec::new(),
    };
    let mut v = DVector::from_iterator(n + m, x0.iter().chain(l0).copied());
    traj.push(x0.to_vec(), l0.to_vec());
    for _ in 0..k_max {
        v = lu
            .solve(&v)
            .ok_or_else(|| Error::invalid("backward Euler solve failed"))?;
        traj.push(
            v.rows(0, n).iter().copied().collect(),
            v.rows(n, m).iter().copied().collect(),
        );
    }
    Ok(traj)
}

/// Update matrix of the approximate backward Euler iteration on `s0` with
/// `sigma tau = a`.
pub fn abe_matrix(theta: f64, a: f64, sigma: f64) -> Matrix2<f64> {
    Matrix2::new(1.0, -a / sigma, sigma, 1.0 - a - theta * a)
}

/// Approximate backward Euler on `s0`. With `theta = 1, a = 1` every start
/// reaches the origin in two steps; with `theta = 0, a = 1` the matrix
/// cubes to `-I`, so the orbit has period 6.
pub fn abe_s0(x0: f64, l0: f64, theta: f64, a: f64, sigma: f64, k_max: usize) -> Trajectory2D {
    let params = ToyParams { step: sigma, a, theta };
    Trajectory2D::from_matrix(abe_matrix(theta, a, sigma), x0, l0, k_max, params)
}

/// CPPD update matrix for `min 1/2 x^2` written as
/// `min_x max_lambda x lambda - lambda^2 / 2`, with `theta = 1`.
pub fn cppd_1d_matrix(a: f64, sigma: f64) -> Matrix2<f64> {
    Matrix2::new(1.0, -a / sigma, sigma / (1.0 + sigma), (1.0 - 2.0 * a) / (1.0 + sigma))
}

pub fn cppd_1d_quadratic(x0: f64, l0: f64, a: f64, sigma: f64, k_max: usize) -> Trajectory2D {
    let params = ToyParams {
        step: sigma,
        a,
        theta: 1.0,
    };
    Trajectory2D::from_matrix(cppd_1d_matrix(a, sigma), x0, l0, k_max, params)
}

/// `10^lo ..= 10^hi` with `per_decade` points per decade.
pub fn log_grid(lo_exp: i32, hi_exp: i32, per_decade: usize) -> Vec<f64> {
    let count = (hi_exp - lo_exp) as usize * per_decade;
    (0..=count)
        .map(|i| 10f64.powf(lo_exp as f64 + i as f64 / per_decade as f64))
        .collect()
}

/// The default sigma sweep: 61 points over `1e-3 ..= 1e3`.
pub fn default_sigma_grid() -> Vec<f64> {
    log_grid(-3, 3, 10)
}

/// `(sigma, |(x_k, lambda_k)|)` after `k_max` iterations for each sigma.
pub fn cppd_sigma_sweep(x0: f64, l0: f64, a: f64, sigmas: &[f64], k_max: usize) -> Vec<(f64, f64)> {
    sigmas
        .par_iter()
        .map(|&s| (s, cppd_1d_quadratic(x0, l0, a, s, k_max).final_magnitude()))
        .collect()
}

/// Smallest sweep value if it is not at either end of the grid.
pub fn interior_minimum(sweep: &[(f64, f64)]) -> Option<(f64, f64)> {
    let (i, best) = sweep.iter().enumerate().min_by(|a, b| a.1 .1.total_cmp(&b.1 .1))?;
    (i > 0 && i + 1 < sweep.len()).then_some(*best)
}

pub fn sweep_csv(sweep: &[(f64, f64)]) -> String {
    let mut s = String::from("sigma,final_magnitude\n");
    for (sigma, m) in sweep {
        s.push_str(&format!("{sigma:e},{m:e}\n"));
    }
    s
}

/// `|x_k|` of gradient descent `x+ = (1 - a) x`.
pub fn gd_magnitude(x0: f64, a: f64, k: usize) -> f64 {
    ((1.0 - a).powi(k as i32) * x0).abs()
}

/// Result of [`perfect_preconditioning`]: the full-space iterates and the
/// reduced `u = A x` coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct PerfectPcRun {
    pub full: TrajectoryN,
    pub u: Vec<Vec<f64>>,
}

/// CPPD on `lambda^T A x` with `T = (rho A^T A)^{-1}` and `Sigma = rho I`,
/// started from `x0 = A^{-1} u0`. The reduced iterates follow
/// `u+ = u - lambda / rho`, `lambda+ = rho u - lambda`, which vanish after
/// two steps.
pub fn perfect_preconditioning(
    a: &DMatrix<f64>,
    rho: f64,
    u0: &[f64],
    l0: &[f64],
    k_max: usize,
) -> Result<PerfectPcRun> {
    let (m, n) = a.shape();
    if m != n {
        return Err(Error::invalid("perfect preconditioning needs a square A"));
    }
    check_len("perfect preconditioning u0", n, u0.len())?;
    check_len("perfect preconditioning lambda0", n, l0.len())?;
    if !(rho > 0.0) {
        return Err(Error::invalid(format!("rho must be positive, got {rho}")));
    }
    let lu = a.clone().lu();
    let mut x = lu
        .solve(&DVector::from_column_slice(u0))
        .ok_or_else(|| Error::invalid("A is singular"))?;
    let t = (a.transpose() * a * rho)
        .try_inverse()
        .ok_or_else(|| Error::invalid("A^T A is singular"))?;
    let mut l = DVector::from_column_slice(l0);
    let mut full = TrajectoryN {
        xs: Vec::new(),
        lambdas: Vec::new(),
        radii: Vec::new(),
    };
    let mut u = vec![u0.to_vec()];
    full.push(x.iter().copied().collect(), l0.to_vec());
    for _ in 0..k_max {
        let x_new = &x - &t * (a.transpose() * &l);
        let xbar = &x_new * 2.0 - &x;
        l += a * xbar * rho;
        x = x_new;
        u.push((a * &x).iter().copied().collect());
        full.push(x.iter().copied().collect(), l.iter().copied().collect());
    }
    Ok(PerfectPcRun { full, u })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CriticalPoint {
    Minimum,
    Maximum,
    Saddle,
    Degenerate,
}

/// Classify a critical point by the eigenvalue signs of its Hessian.
pub fn classify_critical_point(h: &DMatrix<f64>) -> Result<CriticalPoint> {
    if !h.is_square() || h.nrows() == 0 {
        return Err(Error::invalid("Hessian must be a nonempty square matrix"));
    }
    let asym = (h - h.transpose()).abs().max();
    if asym > 1e-12 * h.abs().max().max(1.0) {
        return Err(Error::NotSymmetric(asym));
    }
    let eig = SymmetricEigen::new(h.clone()).eigenvalues;
    if eig.iter().any(|e| e.abs() < 1e-12) {
        return Ok(CriticalPoint::Degenerate);
    }
    let pos = eig.iter().any(|e| *e > 0.0);
    let neg = eig.iter().any(|e| *e < 0.0);
    Ok(match (pos, neg) {
        (true, true) => CriticalPoint::Saddle,
        (true, false) => CriticalPoint::Minimum,
        _ => CriticalPoint::Maximum,
    })
}
