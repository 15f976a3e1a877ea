//! Spectral estimates and CPPD step plans.
//!
//! Covers the power method for `||A||_2`, the deflated power method for the
//! leading eigenpairs of `A^T A`, the truncated-eigenvector preconditioner
//! `T ~ (A^T A)^{-1}`, Pock-Chambolle diagonal steps and the dual step
//! `sigma = 1 / ||T A^T A||_2` that goes with a matrix-valued `T`.

use std::io::{Read, Write};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linop::{normal_apply, LinearMap, MapRef};
use crate::vecops::{self, dot, norm2};

pub const DEFAULT_POWER_ITERS: usize = 100;
pub const DEFAULT_N_POWER: usize = 100;

/// `||A||_2` by power iteration on `A^T A` from a seeded Gaussian start.
/// Returns the square root of the Rayleigh quotient after `iters` steps.
pub fn spectral_norm(map: &dyn LinearMap, iters: usize, seed: u64) -> f64 {
    let mut rng = vecops::rng(seed);
    let mut v = vecops::random_normal(map.domain_dim(), &mut rng);
    let nv = norm2(&v);
    if nv == 0.0 {
        return 0.0;
    }
    vecops::scale(1.0 / nv, &mut v);
    let mut rayleigh = 0.0;
    for _ in 0..iters.max(1) {
        let w = normal_apply(map, &v);
        rayleigh = dot(&v, &w);
        let nw = norm2(&w);
        if nw == 0.0 {
            return 0.0;
        }
        v = w;
        vecops::scale(1.0 / nw, &mut v);
    }
    rayleigh.max(0.0).sqrt()
}

/// Leading eigenvectors `u_k` and eigenvalues `e_k` of `A^T A`, sorted by
/// descending eigenvalue.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenSet {
    pub vectors: Vec<Vec<f64>>,
    pub values: Vec<f64>,
}

impl EigenSet {
    pub fn k(&self) -> usize {
        self.values.len()
    }

    pub fn dim(&self) -> usize {
        self.vectors.first().map_or(0, Vec::len)
    }

    /// Largest `|<u_i, u_j>|` over `i != j` and largest `| ||u_k|| - 1 |`.
    pub fn orthonormality_error(&self) -> (f64, f64) {
        let mut off = 0.0_f64;
        let mut unit = 0.0_f64;
        for (i, u) in self.vectors.iter().enumerate() {
            unit = unit.max((norm2(u) - 1.0).abs());
            for w in &self.vectors[..i] {
                off = off.max(dot(u, w).abs());
            }
        }
        (off, unit)
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(EIGEN_MAGIC)?;
        w.write_all(&(self.dim() as u64).to_le_bytes())?;
        w.write_all(&(self.k() as u64).to_le_bytes())?;
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        for u in &self.vectors {
            for x in u {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != EIGEN_MAGIC {
            return Err(Error::Format("not an eigenset file".into()));
        }
        let n = read_u64(&mut r)? as usize;
        let k = read_u64(&mut r)? as usize;
        if n == 0 || k > n {
            return Err(Error::Format(format!("bad eigenset header n={n} K={k}")));
        }
        let values = (0..k).map(|_| read_f64(&mut r)).collect::<Result<Vec<_>>>()?;
        let vectors = (0..k)
            .map(|_| (0..n).map(|_| read_f64(&mut r)).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { vectors, values })
    }
}

const EIGEN_MAGIC: &[u8; 4] = b"CPEV";

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn deflate(u: &mut [f64], basis: &[Vec<f64>]) {
    for b in basis {
        let c = dot(u, b);
        vecops::axpy(-c, b, u);
    }
}

/// Modified power method: for each `k`, power-iterate `A^T A` with
/// Gram-Schmidt deflation against the previously found vectors inside
/// every step, record `e_k = ||u_k||` just before the final normalization.
pub fn leading_eigenpairs(map: &dyn LinearMap, k: usize, n_power: usize, seed: u64) -> Result<EigenSet> {
    let n = map.domain_dim();
    if k == 0 || n_power == 0 {
        return Err(Error::invalid("leading_eigenpairs needs K >= 1 and n_power >= 1"));
    }
    if k > n {
        return Err(Error::invalid(format!(
            "requested K = {k} eigenvectors of a {n}-dimensional operator"
        )));
    }
    let mut rng = vecops::rng(seed);
    let mut vectors: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut values = Vec::with_capacity(k);
    for _ in 0..k {
        let mut u = vecops::random_normal(n, &mut rng);
        deflate(&mut u, &vectors);
        let nu = norm2(&u);
        vecops::scale(1.0 / nu, &mut u);
        let mut e = 0.0;
        for _ in 0..n_power {
            let mut w = normal_apply(map, &u);
            deflate(&mut w, &vectors);
            e = norm2(&w);
            if e == 0.0 {
                // u spans part of the null space; keep it as is
                break;
            }
            vecops::scale(1.0 / e, &mut w);
            u = w;
        }
        vectors.push(u);
        values.push(e);
    }
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    Ok(EigenSet {
        vectors: order.iter().map(|&i| vectors[i].clone()).collect(),
        values: order.iter().map(|&i| values[i]).collect(),
    })
}

/// Result of [`smooth_eigenset`].
#[derive(Debug, Clone)]
pub struct SmoothedEigenSet {
    pub set: EigenSet,
    /// False when a reference operator was supplied and the Rayleigh
    /// quotients `||A u_k||^2` of the smoothed vectors are no longer
    /// descending.
    pub order_preserved: bool,
}

/// Replace each `u_k` by `S u_k`, re-orthonormalize by Gram-Schmidt and
/// keep the eigenvalues.
pub fn smooth_eigenset(
    eigs: &EigenSet,
    smoother: &dyn LinearMap,
    reference: Option<&dyn LinearMap>,
) -> Result<SmoothedEigenSet> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(eigs.k());
    for (index, u) in eigs.vectors.iter().enumerate() {
        let mut s = smoother.apply(u)?;
        deflate(&mut s, &out);
        // second pass keeps the Gram matrix at rounding level
        deflate(&mut s, &out);
        let ns = norm2(&s);
        if !(ns >= 1e-8) {
            return Err(Error::SmoothingCollapse { index, norm: ns });
        }
        vecops::scale(1.0 / ns, &mut s);
        out.push(s);
    }
    let order_preserved = match reference {
        None => true,
        Some(a) => {
            let q: Vec<f64> = out
                .iter()
                .map(|u| a.apply(u).map(|au| dot(&au, &au)))
                .collect::<Result<_>>()?;
            q.windows(2).all(|w| w[0] >= w[1])
        }
    };
    Ok(SmoothedEigenSet {
        set: EigenSet {
            vectors: out,
            values: eigs.values.clone(),
        },
        order_preserved,
    })
}

/// `T v = v / e_K + sum_{i<K} u_i (1/e_i - 1/e_K) <u_i, v>`, times an
/// overall `scale` (used for the step ratio `1/rho`).
#[derive(Debug, Clone)]
pub struct LowRankT {
    vectors: Vec<Vec<f64>>,
    coeffs: Vec<f64>,
    base: f64,
    scale: f64,
}

impl LowRankT {
    pub fn base(&self) -> f64 {
        self.base * self.scale
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let mut t = self.clone();
        t.scale *= factor;
        t
    }
}

pub fn build_lowrank_t(eigs: &EigenSet) -> Result<LowRankT> {
    let k = eigs.k();
    if k == 0 {
        return Err(Error::invalid("empty eigenset"));
    }
    let e_k = eigs.values[k - 1];
    if !(e_k > 0.0) {
        return Err(Error::RankDeficient { k, value: e_k });
    }
    let base = 1.0 / e_k;
    Ok(LowRankT {
        vectors: eigs.vectors[..k - 1].to_vec(),
        coeffs: eigs.values[..k - 1].iter().map(|e| 1.0 / e - base).collect(),
        base,
        scale: 1.0,
    })
}

impl LinearMap for LowRankT {
    fn domain_dim(&self) -> usize {
        self.vectors.first().map_or(usize::MAX, Vec::len)
    }
    fn range_dim(&self) -> usize {
        self.domain_dim()
    }
    fn label(&self) -> String {
        format!("lowrank_T(K={})", self.vectors.len() + 1)
    }
    fn forward_into(&self, v: &[f64], out: &mut [f64]) {
        for (o, x) in out.iter_mut().zip(v) {
            *o = self.base * x;
        }
        for (u, c) in self.vectors.iter().zip(&self.coeffs) {
            vecops::axpy(c * dot(u, v), u, out);
        }
        if self.scale != 1.0 {
            vecops::scale(self.scale, out);
        }
    }
    fn adjoint_into(&self, y: &[f64], out: &mut [f64]) {
        self.forward_into(y, out)
    }
}

/// A `K = 1` eigenset has no vectors left in `T`, so its dimension must be
/// carried separately.
#[derive(Debug, Clone)]
pub struct SizedLowRankT {
    pub t: LowRankT,
    pub n: usize,
}

impl LinearMap for SizedLowRankT {
    fn domain_dim(&self) -> usize {
        self.n
    }
    fn range_dim(&self) -> usize {
        self.n
    }
    fn label(&self) -> String {
        self.t.label()
    }
    fn forward_into(&self, v: &[f64], out: &mut [f64]) {
        self.t.forward_into(v, out)
    }
    fn adjoint_into(&self, y: &[f64], out: &mut [f64]) {
        self.t.adjoint_into(y, out)
    }
}

/// Estimate of `1 / ||T A^T A||_2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SigmaEstimate {
    pub sigma: f64,
    pub norm: f64,
    /// False when the last relative change of the norm estimate exceeded 1e-6.
    pub converged: bool,
}

/// Power iteration on `T A^T A`. With `w = A^T A v`, the quotient
/// `<w, T w> / <v, w>` is the Rayleigh quotient of the symmetric
/// `T^{1/2} A^T A T^{1/2}` at `T^{-1/2} v`-related vectors and converges
/// to the largest eigenvalue from below.
pub fn sigma_for_t(map: &dyn LinearMap, t: &dyn LinearMap, iters: usize, seed: u64) -> Result<SigmaEstimate> {
    let n = map.domain_dim();
    crate::error::check_len("sigma_for_T (T dim)", n, t.domain_dim())?;
    let mut rng = vecops::rng(seed);
    let mut v = vecops::random_normal(n, &mut rng);
    let mut prev = 0.0;
    let mut est = 0.0;
    let mut rel_change = f64::INFINITY;
    let mut tw = vec![0.0; n];
    for _ in 0..iters.max(2) {
        let nv = norm2(&v);
        if nv == 0.0 {
            break;
        }
        vecops::scale(1.0 / nv, &mut v);
        let w = normal_apply(map, &v);
        t.forward_into(&w, &mut tw);
        let denom = dot(&v, &w);
        if denom <= 0.0 {
            est = 0.0;
            break;
        }
        est = dot(&w, &tw) / denom;
        rel_change = if est > 0.0 { (est - prev).abs() / est } else { 0.0 };
        prev = est;
        std::mem::swap(&mut v, &mut tw);
    }
    if !(est > 0.0) {
        return Err(Error::invalid("T A^T A has zero norm; cannot set sigma"));
    }
    Ok(SigmaEstimate {
        sigma: 1.0 / est,
        norm: est,
        converged: rel_change <= 1e-6,
    })
}

/// Pock-Chambolle diagonal steps for an operator with nonnegative entries:
/// `Sigma = 1 / (A 1)`, `T = 1 / (A^T 1)`, zero sums giving zero steps.
pub fn diagonal_steps(map: &dyn LinearMap) -> (Vec<f64>, Vec<f64>) {
    let row_sums = map.apply(&vec![1.0; map.domain_dim()]).expect("dims match");
    let col_sums = map.apply_adjoint(&vec![1.0; map.range_dim()]).expect("dims match");
    let inv = |s: f64| if s > 0.0 { 1.0 / s } else { 0.0 };
    (
        row_sums.into_iter().map(inv).collect(),
        col_sums.into_iter().map(inv).collect(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlanKind {
    Scalar,
    Diagonal,
    LowRank,
}

/// Dual step `Sigma`.
#[derive(Debug, Clone)]
pub enum DualStep {
    Scalar(f64),
    Diagonal(Vec<f64>),
}

impl DualStep {
    pub fn at(&self, i: usize) -> f64 {
        match self {
            DualStep::Scalar(s) => *s,
            DualStep::Diagonal(d) => d[i],
        }
    }

    pub fn scalar(&self) -> Option<f64> {
        match self {
            DualStep::Scalar(s) => Some(*s),
            DualStep::Diagonal(_) => None,
        }
    }
}

/// Primal step `T`.
#[derive(Clone)]
pub enum PrimalStep {
    Scalar(f64),
    Diagonal(Vec<f64>),
    Matrix(MapRef),
}

impl PrimalStep {
    /// `out = T v`.
    pub fn apply_into(&self, v: &[f64], out: &mut [f64]) {
        match self {
            PrimalStep::Scalar(t) => {
                for (o, x) in out.iter_mut().zip(v) {
                    *o = t * x;
                }
            }
            PrimalStep::Diagonal(d) => {
                for ((o, x), t) in out.iter_mut().zip(v).zip(d) {
                    *o = t * x;
                }
            }
            PrimalStep::Matrix(m) => m.forward_into(v, out),
        }
    }
}

/// Step sizes for one CPPD run.
#[derive(Clone)]
pub struct StepPlan {
    pub kind: PlanKind,
    pub sigma: DualStep,
    pub primal: PrimalStep,
    pub rho: f64,
    /// Spectral-norm estimate `L` the plan was built from (for scalar plans
    /// this already includes the safety factor).
    pub norm_estimate: f64,
    pub theta: f64,
    /// `a` in `L = a ||A||_2`; 1 for normal use, below 1 to probe whether the
    /// norm estimate is too large.
    pub safety_factor: f64,
}

impl std::fmt::Debug for StepPlan {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StepPlan")
            .field("kind", &self.kind)
            .field("sigma", &self.sigma.scalar())
            .field("rho", &self.rho)
            .field("norm_estimate", &self.norm_estimate)
            .field("theta", &self.theta)
            .finish()
    }
}

impl StepPlan {
    pub fn with_theta(mut self, theta: f64) -> Self {
        self.theta = theta;
        self
    }

    pub fn tau(&self) -> Option<f64> {
        match self.primal {
            PrimalStep::Scalar(t) => Some(t),
            _ => None,
        }
    }
}

/// `sigma = rho / L`, `tau = 1 / (rho L)`, so `sigma tau = 1/L^2` and
/// `sqrt(sigma / tau) = rho`.
pub fn scalar_steps(norm: f64, rho: f64) -> Result<StepPlan> {
    scalar_steps_with_safety(norm, rho, 1.0)
}

/// Scalar steps built from `L = a * norm`.
pub fn scalar_steps_with_safety(norm: f64, rho: f64, safety_factor: f64) -> Result<StepPlan> {
    if !(norm > 0.0 && rho > 0.0) {
        return Err(Error::invalid(format!(
            "scalar steps need L > 0 and rho > 0, got L={norm}, rho={rho}"
        )));
    }
    if !(safety_factor > 0.0 && safety_factor <= 1.0) {
        return Err(Error::invalid(format!(
            "safety factor must lie in (0, 1], got {safety_factor}"
        )));
    }
    let l = safety_factor * norm;
    Ok(StepPlan {
        kind: PlanKind::Scalar,
        sigma: DualStep::Scalar(rho / l),
        primal: PrimalStep::Scalar(1.0 / (rho * l)),
        rho,
        norm_estimate: l,
        theta: 1.0,
        safety_factor,
    })
}

/// Diagonal plan with `Sigma <- rho Sigma`, `T <- T / rho`.
pub fn diagonal_plan(map: &dyn LinearMap, rho: f64) -> Result<StepPlan> {
    if !(rho > 0.0) {
        return Err(Error::invalid(format!("rho must be positive, got {rho}")));
    }
    let (sigma, tau) = diagonal_steps(map);
    Ok(StepPlan {
        kind: PlanKind::Diagonal,
        sigma: DualStep::Diagonal(sigma.into_iter().map(|s| rho * s).collect()),
        primal: PrimalStep::Diagonal(tau.into_iter().map(|t| t / rho).collect()),
        rho,
        norm_estimate: f64::NAN,
        theta: 1.0,
        safety_factor: 1.0,
    })
}

/// Low-rank plan: `T = T_K / rho`, `sigma = rho / ||T_K A^T A||`.
pub fn lowrank_plan(
    map: &dyn LinearMap,
    eigs: &EigenSet,
    rho: f64,
    iters: usize,
    seed: u64,
) -> Result<(StepPlan, SigmaEstimate)> {
    if !(rho > 0.0) {
        return Err(Error::invalid(format!("rho must be positive, got {rho}")));
    }
    let t = SizedLowRankT {
        t: build_lowrank_t(eigs)?,
        n: map.domain_dim(),
    };
    crate::error::check_len("lowrank plan (eigenvector length)", map.domain_dim(), eigs.dim())?;
    let est = sigma_for_t(map, &t, iters, seed)?;
    let scaled = SizedLowRankT {
        t: t.t.scaled(1.0 / rho),
        n: t.n,
    };
    Ok((
        StepPlan {
            kind: PlanKind::LowRank,
            sigma: DualStep::Scalar(rho * est.sigma),
            primal: PrimalStep::Matrix(Arc::new(scaled)),
            rho,
            norm_estimate: est.norm.sqrt(),
            theta: 1.0,
            safety_factor: 1.0,
        },
        est,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linop::{materialize_dense, DenseMap, DiagonalMap, Identity, DEFAULT_DENSE_CAP};
    use nalgebra::{DMatrix, SymmetricEigen};

    fn random_dense(m: usize, n: usize, seed: u64) -> DenseMap {
        let mut rng = vecops::rng(seed);
        DenseMap::from_rows(m, n, &vecops::random_normal(m * n, &mut rng)).unwrap()
    }

    #[test]
    fn norm_of_diagonal_identity_and_zero() {
        let d = DiagonalMap::new(vec![1.0, 3.0, 2.0]);
        assert!((spectral_norm(&d, 100, 1) - 3.0).abs() < 1e-8);
        assert!((spectral_norm(&Identity::new(5), 1, 1) - 1.0).abs() < 1e-15);
        assert_eq!(spectral_norm(&crate::linop::ZeroMap::new(3, 4), 10, 1), 0.0);
    }

    #[test]
    fn norm_matches_dense_svd() {
        let a = random_dense(8, 5, 4);
        let svd = a.matrix().clone().svd(false, false);
        let smax = svd.singular_values.max();
        let est = spectral_norm(&a, 500, 2);
        assert!((est - smax).abs() / smax < 1e-6);
    }

    #[test]
    fn norm_is_monotone_in_iterations() {
        let a = random_dense(10, 10, 8);
        let mut prev = 0.0;
        for it in 1..30 {
            let v = spectral_norm(&a, it, 3);
            assert!(v >= prev * (1.0 - 1e-14));
            prev = v;
        }
    }

    #[test]
    fn eigenpairs_of_diag() {
        let a = DiagonalMap::new(vec![4.0, 1.0]);
        let e = leading_eigenpairs(&a, 1, 100, 3).unwrap();
        assert!((e.values[0] - 16.0).abs() < 1e-10);
        assert!((e.vectors[0][0].abs() - 1.0).abs() < 1e-10);
        assert!(leading_eigenpairs(&a, 3, 10, 1).is_err());
    }

    #[test]
    fn eigenpairs_match_dense_and_full_spectrum() {
        let a = random_dense(9, 6, 21);
        let ata = a.matrix().transpose() * a.matrix();
        let eig = SymmetricEigen::new(ata);
        let mut pairs: Vec<(f64, Vec<f64>)> = (0..6)
            .map(|i| (eig.eigenvalues[i], eig.eigenvectors.column(i).iter().copied().collect()))
            .collect();
        pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
        let got = leading_eigenpairs(&a, 6, 3000, 5).unwrap();
        for (k, (want, exact)) in pairs.iter().enumerate() {
            assert!((got.values[k] - want).abs() / want < 1e-5, "k={k}");
            assert!(dot(&got.vectors[k], exact).abs() >= 0.999);
        }
        let (off, unit) = got.orthonormality_error();
        assert!(off < 1e-6 && unit < 1e-10);
        assert!(got.values.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn eigenvalues_stable_in_n_power() {
        let a = random_dense(12, 8, 33);
        let e1 = leading_eigenpairs(&a, 3, 200, 9).unwrap();
        let e2 = leading_eigenpairs(&a, 3, 400, 9).unwrap();
        for k in 0..3 {
            assert!((e1.values[k] - e2.values[k]).abs() <= 1e-8 * e2.values[k]);
        }
    }

    #[test]
    fn lowrank_t_k1_is_scaled_identity() {
        let eigs = EigenSet {
            vectors: vec![vec![1.0, 0.0, 0.0]],
            values: vec![4.0],
        };
        let t = SizedLowRankT {
            t: build_lowrank_t(&eigs).unwrap(),
            n: 3,
        };
        assert_eq!(t.apply(&[1.0, 2.0, -4.0]).unwrap(), vec![0.25, 0.5, -1.0]);
        let bad = EigenSet {
            vectors: vec![vec![1.0]],
            values: vec![0.0],
        };
        assert!(matches!(build_lowrank_t(&bad), Err(Error::RankDeficient { .. })));
    }

    #[test]
    fn lowrank_t_full_rank_is_inverse() {
        let a = random_dense(7, 5, 13);
        let eigs = leading_eigenpairs(&a, 5, 4000, 1).unwrap();
        let t = SizedLowRankT {
            t: build_lowrank_t(&eigs).unwrap(),
            n: 5,
        };
        let dt = materialize_dense(&t, DEFAULT_DENSE_CAP).unwrap();
        let inv = (a.matrix().transpose() * a.matrix()).try_inverse().unwrap();
        assert!((dt - &inv).abs().max() / inv.abs().max() < 1e-6);

        // T A^T A u_i = u_i for i < K
        for u in &eigs.vectors[..4] {
            let r = t.apply(&normal_apply(&a, u)).unwrap();
            assert!(vecops::dist2(&r, u) < 1e-5);
        }
        assert!(crate::linop::adjoint_dot_test(&t, 50, 3) < 1e-12);
    }

    #[test]
    fn sigma_for_identity_and_exact_inverse() {
        let a = random_dense(7, 5, 17);
        let l = spectral_norm(&a, 1000, 1);
        let s = sigma_for_t(&a, &Identity::new(5), 1000, 2).unwrap();
        assert!((s.sigma - 1.0 / (l * l)).abs() * l * l < 1e-8);

        let inv = (a.matrix().transpose() * a.matrix()).try_inverse().unwrap();
        let s = sigma_for_t(&a, &DenseMap::new(inv), 100, 2).unwrap();
        assert!((s.sigma - 1.0).abs() < 1e-6);
        assert!(s.converged);
    }

    #[test]
    fn sigma_for_lowrank_k1_matches_dense_norm() {
        let a = random_dense(6, 4, 23);
        let eigs = leading_eigenpairs(&a, 1, 500, 1).unwrap();
        let t = SizedLowRankT {
            t: build_lowrank_t(&eigs).unwrap(),
            n: 4,
        };
        let dt = materialize_dense(&t, DEFAULT_DENSE_CAP).unwrap();
        let prod = dt * a.matrix().transpose() * a.matrix();
        // T A^T A is similar to a symmetric PSD matrix: its spectral radius
        // is the relevant norm
        let rho = prod.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max);
        let s = sigma_for_t(&a, &t, 2000, 4).unwrap();
        assert!((s.norm - rho).abs() / rho < 1e-8);
    }

    #[test]
    fn diagonal_steps_examples() {
        let (s, t) = diagonal_steps(&Identity::new(3));
        assert_eq!(s, vec![1.0; 3]);
        assert_eq!(t, vec![1.0; 3]);
        let a = DenseMap::from_rows(2, 2, &[1.0, 2.0, 3.0, 4.0]).unwrap();
        let (s, t) = diagonal_steps(&a);
        assert_eq!(s, vec![1.0 / 3.0, 1.0 / 7.0]);
        assert_eq!(t, vec![1.0 / 4.0, 1.0 / 6.0]);
        let z = DenseMap::from_rows(2, 2, &[0.0, 0.0, 1.0, 0.0]).unwrap();
        let (s, t) = diagonal_steps(&z);
        assert_eq!(s, vec![0.0, 1.0]);
        assert_eq!(t, vec![1.0, 0.0]);
    }

    /// Dense `[[T^-1, -A^T], [-A, Sigma^-1]]` for scalar/diagonal plans.
    fn b_matrix(a: &DMatrix<f64>, sigma: &[f64], tau: &[f64]) -> DMatrix<f64> {
        let (m, n) = a.shape();
        let mut b = DMatrix::zeros(m + n, m + n);
        for j in 0..n {
            b[(j, j)] = 1.0 / tau[j];
        }
        for i in 0..m {
            b[(n + i, n + i)] = 1.0 / sigma[i];
        }
        for i in 0..m {
            for j in 0..n {
                b[(j, n + i)] = -a[(i, j)];
                b[(n + i, j)] = -a[(i, j)];
            }
        }
        b
    }

    #[test]
    fn plans_give_psd_b_matrix() {
        let mut rng = vecops::rng(5);
        let data: Vec<f64> = (0..20).map(|_| rand::Rng::gen::<f64>(&mut rng)).collect();
        let a = DenseMap::from_rows(5, 4, &data).unwrap();
        for rho in [0.1, 1.0, 7.0] {
            let plan = diagonal_plan(&a, rho).unwrap();
            let (DualStep::Diagonal(s), PrimalStep::Diagonal(t)) = (&plan.sigma, &plan.primal) else {
                panic!()
            };
            let b = b_matrix(a.matrix(), s, t);
            assert!(SymmetricEigen::new(b).eigenvalues.min() >= -1e-10);

            let l = spectral_norm(&a, 2000, 1);
            let plan = scalar_steps(l, rho).unwrap();
            let s = vec![plan.sigma.scalar().unwrap(); 5];
            let t = vec![plan.tau().unwrap(); 4];
            let b = b_matrix(a.matrix(), &s, &t);
            assert!(SymmetricEigen::new(b).eigenvalues.min() >= -1e-8);
        }
    }

    #[test]
    fn scalar_step_formulas() {
        let p = scalar_steps(1.0, 1.0).unwrap();
        assert_eq!((p.sigma.scalar(), p.tau()), (Some(1.0), Some(1.0)));
        let p = scalar_steps(2.0, 0.1).unwrap();
        assert!((p.sigma.scalar().unwrap() - 0.05).abs() < 1e-15);
        assert!((p.tau().unwrap() - 5.0).abs() < 1e-14);
        for (l, rho) in [(3.7, 0.2), (0.01, 5.0), (120.0, 1.0)] {
            let p = scalar_steps(l, rho).unwrap();
            let (s, t) = (p.sigma.scalar().unwrap(), p.tau().unwrap());
            assert!(((s / t).sqrt() - rho).abs() < 1e-12 * rho);
            assert!((s * t * l * l - 1.0).abs() < 1e-12);
        }
        assert!(scalar_steps(0.0, 1.0).is_err());
        assert!(scalar_steps_with_safety(1.0, 1.0, 1.5).is_err());
    }

    #[test]
    fn smoothing_with_identity_is_noop() {
        let a = random_dense(8, 6, 3);
        let e = leading_eigenpairs(&a, 3, 500, 2).unwrap();
        let s = smooth_eigenset(&e, &Identity::new(6), Some(&a)).unwrap();
        for (u, v) in s.set.vectors.iter().zip(&e.vectors) {
            assert!(vecops::dist2(u, v) < 1e-12);
        }
        assert!(s.order_preserved);
        let z = crate::linop::ZeroMap::new(6, 6);
        assert!(matches!(
            smooth_eigenset(&e, &z, None),
            Err(Error::SmoothingCollapse { .. })
        ));
    }

    #[test]
    fn eigenset_file_roundtrip() {
        let a = random_dense(5, 4, 3);
        let e = leading_eigenpairs(&a, 2, 50, 2).unwrap();
        let mut buf = Vec::new();
        e.write_to(&mut buf).unwrap();
        assert_eq!(EigenSet::read_from(&buf[..]).unwrap(), e);
        assert!(EigenSet::read_from(&b"nope"[..]).is_err());
    }
}
