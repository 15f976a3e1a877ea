//! Proximal mappings used by the CPPD instances, plus a sampled
//! Legendre-Fenchel transform used as a test oracle.
//!
//! Every prox here is the single-valued resolvent of its function; no
//! set-valued subdifferentials are modelled.

use crate::error::{check_len, Error, Result};
use crate::vecops::{norm1, norm_inf};

/// Output of a prox evaluation. `aux` carries a by-product such as the
/// shrinkage threshold found by root-finding.
#[derive(Debug, Clone, PartialEq)]
pub struct ProxResult {
    pub value: Vec<f64>,
    pub aux: Option<f64>,
}

/// Iteration cap for the bisection in [`project_l1_ball`].
pub const BISECTION_MAX_ITERS: usize = 200;

/// Default bisection tolerance `1e-10 * max(1, ||v||_1)`.
pub fn default_l1_tol(v: &[f64]) -> f64 {
    1e-10 * norm1(v).max(1.0)
}

/// `prox_{sigma phi*}` for `phi(y) = 1/2 ||y - g||^2`:
/// `(lambda - sigma g) / (1 + sigma)`.
pub fn prox_lsq_conjugate(lambda: &[f64], sigma: f64, g: &[f64]) -> Result<Vec<f64>> {
    check_len("prox_lsq_conjugate (data)", lambda.len(), g.len())?;
    if !(sigma > 0.0) {
        return Err(Error::invalid(format!("sigma must be positive, got {sigma}")));
    }
    let d = 1.0 + sigma;
    Ok(lambda.iter().zip(g).map(|(l, gi)| (l - sigma * gi) / d).collect())
}

/// Projection onto the l-infinity ball of radius `c`, written as
/// `c * lambda / max(c, |lambda|)` componentwise.
pub fn clip_linf(lambda: &[f64], c: f64) -> Vec<f64> {
    lambda.iter().map(|&l| clip_one(l, c)).collect()
}

pub(crate) fn clip_one(l: f64, c: f64) -> f64 {
    if c <= 0.0 {
        0.0
    } else {
        l.clamp(-c, c)
    }
}

/// Soft threshold `sign(v) * max(|v| - beta, 0)`.
pub fn shrink(v: &[f64], beta: f64) -> Vec<f64> {
    v.iter().map(|&x| shrink_one(x, beta)).collect()
}

fn shrink_one(x: f64, beta: f64) -> f64 {
    let m = x.abs() - beta;
    if m > 0.0 {
        m.copysign(x)
    } else {
        0.0
    }
}

fn shrunk_l1(v: &[f64], beta: f64) -> f64 {
    v.iter().map(|x| (x.abs() - beta).max(0.0)).sum()
}

/// Euclidean projection onto `{u : ||u||_1 <= r}`.
///
/// Inside the ball the input is returned with threshold 0. Otherwise the
/// threshold `beta` solving `||shrink(v, beta)||_1 = r` is found by
/// bisection on `[0, ||v||_inf]` and `shrink(v, beta)` is returned with
/// `aux = Some(beta)`.
pub fn project_l1_ball(v: &[f64], r: f64, tol: f64) -> Result<ProxResult> {
    if !(r > 0.0 && tol > 0.0) {
        return Err(Error::invalid(format!(
            "l1 projection needs r > 0 and tol > 0, got r={r}, tol={tol}"
        )));
    }
    if !v.iter().all(|x| x.is_finite()) {
        return Err(Error::NonFinite("l1 projection input".into()));
    }
    if norm1(v) <= r {
        return Ok(ProxResult {
            value: v.to_vec(),
            aux: Some(0.0),
        });
    }
    let beta = solve_l1_threshold(v, r, tol)?;
    Ok(ProxResult {
        value: shrink(v, beta),
        aux: Some(beta),
    })
}

/// Root of `||shrink(v, beta)||_1 - r` for `||v||_1 > r`.
fn solve_l1_threshold(v: &[f64], r: f64, tol: f64) -> Result<f64> {
    let (mut lo, mut hi) = (0.0, norm_inf(v));
    for _ in 0..BISECTION_MAX_ITERS {
        let mid = 0.5 * (lo + hi);
        let f = shrunk_l1(v, mid) - r;
        if f.abs() <= tol {
            return Ok(mid);
        }
        if f > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * hi {
            break;
        }
    }
    let mid = 0.5 * (lo + hi);
    let f = shrunk_l1(v, mid) - r;
    if f.abs() <= tol {
        Ok(mid)
    } else {
        Err(Error::RootSolve(format!(
            "bisection stalled with residual {f:e} > tol {tol:e}"
        )))
    }
}

/// `prox_{sigma phi*}` for `phi = indicator(||y||_1 <= nu gamma)`, via the
/// Moreau identity: `lambda - proj(lambda, ||.||_1 <= nu gamma sigma)`.
///
/// `radius` is the product `nu * gamma * sigma`. Returns zero when
/// `||lambda||_1 <= radius`; otherwise `beta lambda / max(beta, |lambda|)`
/// with `beta` the shrinkage threshold (reported in `aux`).
pub fn prox_tvc_conjugate(lambda: &[f64], sigma: f64, radius: f64, tol: f64) -> Result<ProxResult> {
    if !(sigma > 0.0 && radius > 0.0) {
        return Err(Error::invalid(format!(
            "TV-constraint prox needs sigma > 0 and radius > 0, got {sigma}, {radius}"
        )));
    }
    if !lambda.iter().all(|x| x.is_finite()) {
        return Err(Error::NonFinite("TV-constraint prox input".into()));
    }
    if norm1(lambda) <= radius {
        return Ok(ProxResult {
            value: vec![0.0; lambda.len()],
            aux: Some(0.0),
        });
    }
    let beta = solve_l1_threshold(lambda, radius, tol)?;
    Ok(ProxResult {
        value: clip_linf(lambda, beta),
        aux: Some(beta),
    })
}

/// Samples of a function on a uniform 1D grid. `+inf` values mark points
/// outside the effective domain.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid1D {
    pub start: f64,
    pub step: f64,
    pub values: Vec<f64>,
}

impl Grid1D {
    pub fn new(start: f64, step: f64, values: Vec<f64>) -> Result<Self> {
        if !(step > 0.0 && step.is_finite() && start.is_finite()) || values.is_empty() {
            return Err(Error::invalid("Grid1D needs a positive step and samples"));
        }
        Ok(Self { start, step, values })
    }

    /// Sample `f` at `count` points spanning `[lo, hi]`.
    pub fn sample(lo: f64, hi: f64, count: usize, f: impl Fn(f64) -> f64) -> Result<Self> {
        if count < 2 || !(hi > lo) {
            return Err(Error::invalid("Grid1D::sample needs hi > lo and count >= 2"));
        }
        let step = (hi - lo) / (count - 1) as f64;
        let values = (0..count).map(|i| f(lo + i as f64 * step)).collect();
        Self::new(lo, step, values)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn x(&self, i: usize) -> f64 {
        self.start + i as f64 * self.step
    }

    pub fn points(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.values.iter().enumerate().map(|(i, &v)| (self.x(i), v))
    }
}

/// Sampled convex conjugate `f*(m) = max_x { m x - f(x) }` over the
/// samples of `f`, evaluated at each point of `m`. Samples with
/// `f(x) = +inf` never attain the max.
pub fn lf_transform_numeric(f: &Grid1D, m: &Grid1D) -> Result<Grid1D> {
    let finite: Vec<(f64, f64)> = f.points().filter(|(_, v)| *v < f64::INFINITY).collect();
    if finite.is_empty() {
        return Err(Error::invalid("LF transform: every sample of f is +infinity"));
    }
    if finite.iter().any(|(_, v)| v.is_nan()) {
        return Err(Error::NonFinite("LF transform samples".into()));
    }
    let values = (0..m.len())
        .map(|i| {
            let mi = m.x(i);
            finite
                .iter()
                .map(|&(x, fx)| mi * x - fx)
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();
    Grid1D::new(m.start, m.step, values)
}

/// Extended-real addition: `a + inf = inf`.
pub fn ext_add(a: f64, b: f64) -> f64 {
    if a == f64::INFINITY || b == f64::INFINITY {
        f64::INFINITY
    } else {
        a + b
    }
}

/// Extended-real product for `a >= 0`: `0 * inf = 0`, `a * inf = inf`.
pub fn ext_mul(a: f64, b: f64) -> f64 {
    if a == 0.0 || b == 0.0 {
        0.0
    } else {
        a * b
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Exact projection by sorting; independent of the bisection path.
    fn sort_projection(v: &[f64], r: f64) -> Vec<f64> {
        if norm1(v) <= r {
            return v.to_vec();
        }
        let mut u: Vec<f64> = v.iter().map(|x| x.abs()).collect();
        u.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let mut cum = 0.0;
        let mut theta = 0.0;
        for (j, &uj) in u.iter().enumerate() {
            cum += uj;
            let t = (cum - r) / (j + 1) as f64;
            if uj - t > 0.0 {
                theta = t;
            }
        }
        shrink(v, theta)
    }

    /// Per-component grid search for `argmin_u  w(u) + 1/2 (u - v)^2`.
    fn grid_argmin(v: f64, w: impl Fn(f64) -> f64) -> f64 {
        let lo = v - 10.0;
        (0..=200_000)
            .map(|i| lo + i as f64 * 1e-4)
            .map(|u| (u, w(u) + 0.5 * (u - v) * (u - v)))
            .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
            .unwrap()
            .0
    }

    #[test]
    fn lsq_conjugate_prox() {
        assert_eq!(
            prox_lsq_conjugate(&[0.0, 0.0], 2.0, &[0.0, 0.0]).unwrap(),
            vec![0.0, 0.0]
        );
        assert!(prox_lsq_conjugate(&[1.0], 0.0, &[1.0]).is_err());
        assert!(prox_lsq_conjugate(&[1.0], 1.0, &[1.0, 2.0]).is_err());

        // sigma = 1, lambda = 2g -> g/2, checked by 1D minimization of
        // sigma phi*(l) + 1/2 (l - lambda)^2 with phi*(l) = l^2/2 + l g
        let g = [0.8, -1.3];
        let lam = [1.6, -2.6];
        let got = prox_lsq_conjugate(&lam, 1.0, &g).unwrap();
        for i in 0..2 {
            let oracle = grid_argmin(lam[i], |l| 0.5 * l * l + l * g[i]);
            assert!((got[i] - oracle).abs() < 1e-4);
            assert!((got[i] - g[i] / 2.0).abs() < 1e-15);
        }
    }

    #[test]
    fn clip_cases() {
        let c = 1.5;
        assert_eq!(clip_linf(&[0.3, -1.0, 1.5], c), vec![0.3, -1.0, 1.5]);
        assert_eq!(clip_linf(&[2.0 * c, -3.0 * c, c / 2.0], c), vec![c, -c, c / 2.0]);
    }

    #[test]
    fn shrink_examples() {
        assert_eq!(shrink(&[3.0, -1.0, 0.5], 0.0), vec![3.0, -1.0, 0.5]);
        assert_eq!(shrink(&[3.0, -1.0, 0.5], 1.0), vec![2.0, 0.0, 0.0]);
        for v in [-2.3, -0.4, 0.0, 0.7, 3.1] {
            let oracle = grid_argmin(v, |u| 0.8 * u.abs());
            assert!((shrink_one(v, 0.8) - oracle).abs() < 1e-4);
        }
    }

    #[test]
    fn l1_projection_examples() {
        let p = project_l1_ball(&[0.2, -0.3], 1.0, 1e-12).unwrap();
        assert_eq!(p.value, vec![0.2, -0.3]);
        assert_eq!(p.aux, Some(0.0));

        let p = project_l1_ball(&[3.0, 0.0], 1.0, 1e-12).unwrap();
        assert!((p.value[0] - 1.0).abs() < 1e-11 && p.value[1] == 0.0);
        assert!((p.aux.unwrap() - 2.0).abs() < 1e-11);

        let p = project_l1_ball(&[2.0, 1.0], 1.0, 1e-12).unwrap();
        assert!((p.value[0] - 1.0).abs() < 1e-11 && p.value[1] == 0.0);
        assert!((p.aux.unwrap() - 1.0).abs() < 1e-11);

        assert!(project_l1_ball(&[f64::NAN], 1.0, 1e-9).is_err());
        assert!(project_l1_ball(&[1.0], -1.0, 1e-9).is_err());
    }

    #[test]
    fn tvc_prox_examples() {
        let z = prox_tvc_conjugate(&[0.25, -0.25], 0.5, 1.0, 1e-12).unwrap();
        assert_eq!(z.value, vec![0.0, 0.0]);
        let p = prox_tvc_conjugate(&[3.0, 0.0], 1.0, 1.0, 1e-12).unwrap();
        assert!((p.value[0] - 2.0).abs() < 1e-11 && p.value[1] == 0.0);
    }

    #[test]
    fn extended_real_arithmetic() {
        assert_eq!(ext_add(3.0, f64::INFINITY), f64::INFINITY);
        assert_eq!(ext_mul(2.0, f64::INFINITY), f64::INFINITY);
        assert_eq!(ext_mul(0.0, f64::INFINITY), 0.0);
        assert_eq!(ext_add(1.0, 2.0), 3.0);
    }

    #[test]
    fn lf_of_quadratic() {
        let a = 2.0;
        let f = Grid1D::sample(-5.0, 5.0, 2001, |x| a * x * x / 2.0).unwrap();
        let m = Grid1D::sample(-8.0, 8.0, 161, |_| 0.0).unwrap();
        let fs = lf_transform_numeric(&f, &m).unwrap();
        for (mi, v) in fs.points() {
            assert!((v - mi * mi / (2.0 * a)).abs() <= a * f.step * f.step);
        }
    }

    #[test]
    fn lf_rejects_all_infinite() {
        let f = Grid1D::new(0.0, 1.0, vec![f64::INFINITY; 4]).unwrap();
        assert!(lf_transform_numeric(&f, &f).is_err());
    }

    fn vec_strategy() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-5.0f64..5.0, 1..20)
    }

    proptest! {
        #[test]
        fn l1_projection_matches_sort_oracle(v in vec_strategy(), r in 0.01f64..10.0) {
            let tol = default_l1_tol(&v);
            let p = project_l1_ball(&v, r, tol).unwrap();
            let want = sort_projection(&v, r);
            for (a, b) in p.value.iter().zip(&want) {
                prop_assert!((a - b).abs() <= 1e-8);
            }
            if norm1(&v) > r {
                prop_assert!((norm1(&p.value) - r).abs() <= tol);
                // KKT: surviving components are shifted by exactly beta
                let beta = p.aux.unwrap();
                for (o, x) in p.value.iter().zip(&v) {
                    if *o != 0.0 {
                        prop_assert_eq!(o.abs(), x.abs() - beta);
                        prop_assert_eq!(o.signum(), x.signum());
                    }
                }
            }
            // idempotent
            let again = project_l1_ball(&p.value, r, tol).unwrap();
            for (a, b) in again.value.iter().zip(&p.value) {
                prop_assert!((a - b).abs() <= 2.0 * tol);
            }
        }

        #[test]
        fn prox_maps_are_nonexpansive(u in prop::collection::vec(-5.0f64..5.0, 8),
                                      v in prop::collection::vec(-5.0f64..5.0, 8),
                                      sigma in 0.01f64..10.0) {
            let g = vec![0.3; 8];
            let d_in = crate::vecops::dist2(&u, &v);
            let pairs = [
                (prox_lsq_conjugate(&u, sigma, &g).unwrap(), prox_lsq_conjugate(&v, sigma, &g).unwrap()),
                (clip_linf(&u, 1.0), clip_linf(&v, 1.0)),
                (shrink(&u, 0.7), shrink(&v, 0.7)),
                (project_l1_ball(&u, 2.0, 1e-12).unwrap().value, project_l1_ball(&v, 2.0, 1e-12).unwrap().value),
                (prox_tvc_conjugate(&u, sigma, 2.0, 1e-12).unwrap().value,
                 prox_tvc_conjugate(&v, sigma, 2.0, 1e-12).unwrap().value),
            ];
            for (pu, pv) in pairs {
                prop_assert!(crate::vecops::dist2(&pu, &pv) <= d_in * (1.0 + 1e-9) + 1e-9);
            }
        }

        #[test]
        fn clip_is_idempotent(v in vec_strategy(), c in 0.1f64..3.0) {
            let once = clip_linf(&v, c);
            prop_assert_eq!(clip_linf(&once, c), once);
        }
    }
}
