//! CPPD iteration, the LSQ / TV-penalized / TV-constrained instances, the
//! GD and CGLS baselines and convergence metrics.
//!
//! The saddle problem is `min_x max_lambda lambda^T A x - phi*(lambda)` with
//! `A = [X; nu D]` stacked (just `X` for LSQ). Each step runs
//!
//! ```text
//! x+      = x - T A^T lambda
//! xbar    = x+ + theta (x+ - x)
//! lambda+ = prox_{sigma phi*}(lambda + sigma A xbar)
//! y+      = (lambda - lambda+) / sigma + A xbar
//! ```

use std::fmt::Write as _;
use std::sync::Arc;

use crate::error::{check_len, Error, Result};
use crate::linop::{stack, LinearMap, MapRef, StackedMap};
use crate::prox::{self, clip_one};
use crate::spectral::{spectral_norm, DualStep, StepPlan};
use crate::vecops::{self, dot, norm1, norm2, norm_inf};

/// Growth factor of `||x||` over [`GROWTH_WINDOW`] iterations treated as
/// divergence.
pub const GROWTH_LIMIT: f64 = 1e6;
pub const GROWTH_WINDOW: usize = 10;

pub const CSV_HEADER: &str = "iter,r_sigma,r_tau,image_rmse,data_rmse,grad_mag,cpd_gap,beta";

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ProblemKind {
    Lsq,
    TvLsq { beta: f64 },
    TvcLsq { gamma: f64 },
}

impl ProblemKind {
    pub fn name(&self) -> &'static str {
        match self {
            ProblemKind::Lsq => "lsq",
            ProblemKind::TvLsq { .. } => "tvlsq",
            ProblemKind::TvcLsq { .. } => "tvclsq",
        }
    }
}

/// One reconstruction problem: data operator `X`, optional gradient `D`
/// weighted by `nu`, data `g` and the pixels that count toward image RMSE.
#[derive(Clone)]
pub struct Problem {
    kind: ProblemKind,
    data_map: MapRef,
    operator: Arc<StackedMap>,
    nu: f64,
    data: Vec<f64>,
    active: Option<Vec<bool>>,
    l1_tol: Option<f64>,
}

impl std::fmt::Debug for Problem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Problem")
            .field("kind", &self.kind)
            .field("operator", &self.operator.label())
            .field("nu", &self.nu)
            .finish()
    }
}

impl Problem {
    pub fn lsq(x: MapRef, data: Vec<f64>) -> Result<Self> {
        check_len("LSQ data", x.range_dim(), data.len())?;
        Ok(Self {
            kind: ProblemKind::Lsq,
            operator: Arc::new(stack(vec![(1.0, x.clone())])?),
            data_map: x,
            nu: 0.0,
            data,
            active: None,
            l1_tol: None,
        })
    }

    /// `min_f 1/2 ||X f - g||^2 + beta ||D f||_1`.
    pub fn tvlsq(x: MapRef, d: MapRef, data: Vec<f64>, beta: f64, nu: f64) -> Result<Self> {
        if !(beta >= 0.0 && beta.is_finite()) {
            return Err(Error::invalid(format!("TV penalty beta must be >= 0, got {beta}")));
        }
        Self::with_gradient(ProblemKind::TvLsq { beta }, x, d, data, nu)
    }

    /// `min_f 1/2 ||X f - g||^2` subject to `||D f||_1 <= gamma`.
    pub fn tvclsq(x: MapRef, d: MapRef, data: Vec<f64>, gamma: f64, nu: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::invalid(format!("TV constraint gamma must be > 0, got {gamma}")));
        }
        Self::with_gradient(ProblemKind::TvcLsq { gamma }, x, d, data, nu)
    }

    fn with_gradient(kind: ProblemKind, x: MapRef, d: MapRef, data: Vec<f64>, nu: f64) -> Result<Self> {
        check_len("TV problem data", x.range_dim(), data.len())?;
        Ok(Self {
            kind,
            operator: Arc::new(stack(vec![(1.0, x.clone()), (nu, d)])?),
            data_map: x,
            nu,
            data,
            active: None,
            l1_tol: None,
        })
    }

    /// Restrict image RMSE to pixels flagged `true`.
    pub fn with_active(mut self, active: Vec<bool>) -> Result<Self> {
        check_len("active mask", self.n(), active.len())?;
        self.active = Some(active);
        Ok(self)
    }

    /// Absolute tolerance for the l1-threshold root solve. Defaults to
    /// `1e-10 max(1, ||v||_1)` per call.
    pub fn with_l1_tol(mut self, tol: f64) -> Result<Self> {
        if !(tol > 0.0) {
            return Err(Error::invalid(format!("l1 tolerance must be positive, got {tol}")));
        }
        self.l1_tol = Some(tol);
        Ok(self)
    }

    pub fn kind(&self) -> ProblemKind {
        self.kind
    }
    pub fn operator(&self) -> &Arc<StackedMap> {
        &self.operator
    }
    pub fn data_map(&self) -> &MapRef {
        &self.data_map
    }
    pub fn gradient_map(&self) -> Option<&MapRef> {
        self.operator.blocks().get(1).map(|(_, d)| d)
    }
    pub fn nu(&self) -> f64 {
        self.nu
    }
    pub fn data(&self) -> &[f64] {
        &self.data
    }
    pub fn active(&self) -> Option<&[bool]> {
        self.active.as_deref()
    }
    /// Image size `n`.
    pub fn n(&self) -> usize {
        self.operator.domain_dim()
    }
    /// Stacked dual size.
    pub fn m(&self) -> usize {
        self.operator.range_dim()
    }
    fn data_range(&self) -> std::ops::Range<usize> {
        self.operator.block_range(0)
    }
    fn grad_range(&self) -> Option<std::ops::Range<usize>> {
        (self.operator.blocks().len() > 1).then(|| self.operator.block_range(1))
    }
}

/// `nu = ||X||_2 / ||D||_2`, balancing the two blocks of the stack.
pub fn balanced_nu(x: &dyn LinearMap, d: &dyn LinearMap, iters: usize, seed: u64) -> Result<f64> {
    let nx = spectral_norm(x, iters, seed);
    let nd = spectral_norm(d, iters, seed);
    if !(nx > 0.0 && nd > 0.0) {
        return Err(Error::invalid(format!(
            "cannot balance blocks with norms ||X|| = {nx}, ||D|| = {nd}"
        )));
    }
    Ok(nx / nd)
}

/// Iterates of one CPPD run.
#[derive(Debug, Clone, PartialEq)]
pub struct SaddleState {
    pub x: Vec<f64>,
    pub lambda: Vec<f64>,
    pub xbar: Vec<f64>,
    pub y: Vec<f64>,
    pub iteration: usize,
}

impl SaddleState {
    pub fn zeros(n: usize, m: usize) -> Self {
        Self {
            x: vec![0.0; n],
            lambda: vec![0.0; m],
            xbar: vec![0.0; n],
            y: vec![0.0; m],
            iteration: 0,
        }
    }

    pub fn for_problem(problem: &Problem) -> Self {
        Self::zeros(problem.n(), problem.m())
    }
}

/// Side information from one step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepInfo {
    /// Shrinkage threshold of the TV-constraint prox (TVCLSQ only).
    pub beta: Option<f64>,
}

fn check_plan(problem: &Problem, plan: &StepPlan) -> Result<()> {
    if let DualStep::Diagonal(s) = &plan.sigma {
        check_len("diagonal sigma", problem.m(), s.len())?;
        if matches!(problem.kind, ProblemKind::TvcLsq { .. }) {
            return Err(Error::invalid(
                "the TV-constraint prox needs a scalar sigma; use a scalar or low-rank plan",
            ));
        }
    }
    match &plan.primal {
        crate::spectral::PrimalStep::Diagonal(t) => check_len("diagonal T", problem.n(), t.len()),
        crate::spectral::PrimalStep::Matrix(t) => check_len("matrix T", problem.n(), t.domain_dim()),
        crate::spectral::PrimalStep::Scalar(_) => Ok(()),
    }
}

fn nonfinite(iteration: usize, iterate: &'static str, v: &[f64]) -> Result<()> {
    match v.iter().position(|x| !x.is_finite()) {
        None => Ok(()),
        Some(i) => Err(Error::Divergence {
            iteration,
            iterate,
            detail: format!("component {i} is {}", v[i]),
        }),
    }
}

/// Blockwise `prox_{Sigma phi*}` applied in place to `v = lambda + Sigma A xbar`.
fn dual_prox(problem: &Problem, sigma: &DualStep, v: &mut [f64]) -> Result<StepInfo> {
    for i in problem.data_range() {
        let s = sigma.at(i);
        v[i] = (v[i] - s * problem.data[i]) / (1.0 + s);
    }
    let Some(range) = problem.grad_range() else {
        return Ok(StepInfo::default());
    };
    match problem.kind {
        ProblemKind::Lsq => Ok(StepInfo::default()),
        ProblemKind::TvLsq { beta } => {
            let c = beta / problem.nu;
            for l in &mut v[range] {
                *l = clip_one(*l, c);
            }
            Ok(StepInfo::default())
        }
        ProblemKind::TvcLsq { gamma } => {
            let s = sigma
                .scalar()
                .ok_or_else(|| Error::invalid("TV-constraint prox needs a scalar sigma"))?;
            let block = &mut v[range];
            let tol = problem.l1_tol.unwrap_or_else(|| prox::default_l1_tol(block));
            let p = prox::prox_tvc_conjugate(block, s, problem.nu * gamma * s, tol)?;
            block.copy_from_slice(&p.value);
            Ok(StepInfo { beta: p.aux })
        }
    }
}

/// One CPPD update of `state` in place.
pub fn cppd_step(state: &mut SaddleState, plan: &StepPlan, problem: &Problem) -> Result<StepInfo> {
    let a = problem.operator.as_ref();
    let (n, m) = (problem.n(), problem.m());
    check_len("state x", n, state.x.len())?;
    check_len("state lambda", m, state.lambda.len())?;
    let k = state.iteration + 1;

    let mut at_l = vec![0.0; n];
    a.adjoint_into(&state.lambda, &mut at_l);
    let mut step = vec![0.0; n];
    plan.primal.apply_into(&at_l, &mut step);
    let mut x_new = state.x.clone();
    vecops::axpy(-1.0, &step, &mut x_new);
    nonfinite(k, "x", &x_new)?;

    let mut xbar = x_new.clone();
    for ((b, xn), xo) in xbar.iter_mut().zip(&x_new).zip(&state.x) {
        *b = xn + plan.theta * (xn - xo);
    }

    let mut ax = vec![0.0; m];
    a.forward_into(&xbar, &mut ax);
    let mut lam_new: Vec<f64> = (0..m).map(|i| state.lambda[i] + plan.sigma.at(i) * ax[i]).collect();
    let info = dual_prox(problem, &plan.sigma, &mut lam_new)?;
    nonfinite(k, "lambda", &lam_new)?;

    for i in 0..m {
        let s = plan.sigma.at(i);
        state.y[i] = if s > 0.0 {
            (state.lambda[i] - lam_new[i]) / s + ax[i]
        } else {
            ax[i]
        };
    }
    nonfinite(k, "y", &state.y)?;
    state.x = x_new;
    state.xbar = xbar;
    state.lambda = lam_new;
    state.iteration = k;
    Ok(info)
}

/// One row of a convergence record; `None` fields are written empty.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MetricsRow {
    pub iter: usize,
    pub r_sigma: Option<f64>,
    pub r_tau: Option<f64>,
    pub image_rmse: Option<f64>,
    pub data_rmse: f64,
    pub grad_mag: f64,
    pub cpd_gap: Option<f64>,
    pub beta: Option<f64>,
    /// Distance of the constrained iterate from its indicator set: the dual
    /// `l_inf` ball for TVLSQ, the primal `l1` ball for TVCLSQ.
    pub constraint_distance: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConvergenceRecord {
    pub rows: Vec<MetricsRow>,
    pub warnings: Vec<String>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:e}")).unwrap_or_default()
}

impl ConvergenceRecord {
    pub fn last(&self) -> Option<&MetricsRow> {
        self.rows.last()
    }

    pub fn at(&self, iter: usize) -> Option<&MetricsRow> {
        self.rows.iter().find(|r| r.iter == iter)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::with_capacity(64 * (self.rows.len() + 1));
        s.push_str(CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{:e},{:e},{},{}",
                r.iter,
                opt(r.r_sigma),
                opt(r.r_tau),
                opt(r.image_rmse),
                r.data_rmse,
                r.grad_mag,
                opt(r.cpd_gap),
                opt(r.beta)
            );
        }
        s
    }
}

/// RMSE of `f` against `reference` over the active pixels (all pixels
/// without a mask).
pub fn image_rmse(f: &[f64], reference: &[f64], active: Option<&[bool]>) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for (i, (a, b)) in f.iter().zip(reference).enumerate() {
        if active.is_none_or(|m| m[i]) {
            sum += (a - b) * (a - b);
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        (sum / count as f64).sqrt()
    }
}

/// Data-fit quantities shared by all solvers: residual `X f - g`,
/// its RMSE and the LSQ gradient magnitude.
fn data_fit(x_map: &dyn LinearMap, xf: &[f64], g: &[f64]) -> (Vec<f64>, f64, f64) {
    let resid = vecops::sub(xf, g);
    let grad = x_map.apply_adjoint(&resid).expect("dims match");
    let rmse = if g.is_empty() {
        0.0
    } else {
        norm2(&resid) / (g.len() as f64).sqrt()
    };
    (resid, rmse, norm2(&grad))
}

/// All metrics of a CPPD state.
pub fn metrics(state: &SaddleState, problem: &Problem, reference: Option<&[f64]>) -> MetricsRow {
    let a = problem.operator.as_ref();
    let ax = a.apply(&state.x).expect("state dims checked");
    let r_sigma = vecops::dist2(&ax, &state.y);
    let r_tau = norm2(&a.apply_adjoint(&state.lambda).expect("state dims checked"));

    let dr = problem.data_range();
    let (resid, data_rmse, grad_mag) = data_fit(problem.data_map.as_ref(), &ax[dr.clone()], &problem.data);
    let lam_s = &state.lambda[dr];
    let lsq_gap = 0.5 * dot(&resid, &resid) + 0.5 * dot(lam_s, lam_s) + dot(lam_s, &problem.data);

    let (cpd_gap, constraint_distance) = match (problem.kind, problem.grad_range()) {
        (ProblemKind::TvLsq { beta }, Some(gr)) => {
            let nu_df = &ax[gr.clone()];
            let lam_g = &state.lambda[gr];
            let c = beta / problem.nu;
            let dist = lam_g.iter().map(|&l| (l - clip_one(l, c)).powi(2)).sum::<f64>().sqrt();
            (lsq_gap + c * norm1(nu_df), Some(dist))
        }
        (ProblemKind::TvcLsq { gamma }, Some(gr)) => {
            let nu_df = &ax[gr.clone()];
            let lam_g = &state.lambda[gr];
            let r = problem.nu * gamma;
            let dist = if norm1(nu_df) <= r {
                0.0
            } else {
                let tol = prox::default_l1_tol(nu_df);
                match prox::project_l1_ball(nu_df, r, tol) {
                    Ok(p) => vecops::dist2(nu_df, &p.value),
                    Err(_) => f64::NAN,
                }
            };
            (lsq_gap + r * norm_inf(lam_g), Some(dist))
        }
        _ => (lsq_gap, None),
    };

    MetricsRow {
        iter: state.iteration,
        r_sigma: Some(r_sigma),
        r_tau: Some(r_tau),
        image_rmse: reference.map(|r| image_rmse(&state.x, r, problem.active())),
        data_rmse,
        grad_mag,
        cpd_gap: Some(cpd_gap),
        beta: None,
        constraint_distance,
    }
}

/// Iteration count, record stride and optional reference image.
#[derive(Debug, Clone, Copy)]
pub struct RunOptions<'a> {
    pub k_max: usize,
    /// Record iterations divisible by `stride`, plus the last one.
    pub stride: usize,
    pub reference: Option<&'a [f64]>,
}

impl<'a> RunOptions<'a> {
    pub fn new(k_max: usize) -> Self {
        Self {
            k_max,
            stride: 1,
            reference: None,
        }
    }

    pub fn stride(mut self, stride: usize) -> Self {
        self.stride = stride.max(1);
        self
    }

    pub fn reference(mut self, reference: &'a [f64]) -> Self {
        self.reference = Some(reference);
        self
    }

    fn records(&self, k: usize) -> bool {
        k.is_multiple_of(self.stride) || k == self.k_max
    }

    fn validate(&self, n: usize) -> Result<()> {
        if self.k_max == 0 {
            return Err(Error::invalid("k_max must be at least 1"));
        }
        if let Some(r) = self.reference {
            check_len("reference image", n, r.len())?;
        }
        Ok(())
    }
}

/// Watches `||x||` for blow-up over a sliding window.
struct GrowthGuard {
    norms: std::collections::VecDeque<f64>,
}

impl GrowthGuard {
    fn new() -> Self {
        Self {
            norms: std::collections::VecDeque::with_capacity(GROWTH_WINDOW + 1),
        }
    }

    fn check(&mut self, k: usize, x: &[f64]) -> Result<()> {
        let nx = norm2(x);
        self.norms.push_back(nx);
        if self.norms.len() > GROWTH_WINDOW + 1 {
            self.norms.pop_front();
        }
        if self.norms.len() == GROWTH_WINDOW + 1 {
            let old = self.norms[0];
            if old > 0.0 && nx > GROWTH_LIMIT * old {
                return Err(Error::Divergence {
                    iteration: k,
                    iterate: "x",
                    detail: format!(
                        "||x|| grew from {old:e} to {nx:e} in {GROWTH_WINDOW} iterations; the step plan is probably too large"
                    ),
                });
            }
        }
        Ok(())
    }
}

/// CPPD on any of the three problem kinds from the zero state.
pub fn run_cppd(problem: &Problem, plan: &StepPlan, opts: &RunOptions) -> Result<(SaddleState, ConvergenceRecord)> {
    run_cppd_from(SaddleState::for_problem(problem), problem, plan, opts)
}

/// CPPD from a given state, running `opts.k_max` further iterations.
pub fn run_cppd_from(
    mut state: SaddleState,
    problem: &Problem,
    plan: &StepPlan,
    opts: &RunOptions,
) -> Result<(SaddleState, ConvergenceRecord)> {
    opts.validate(problem.n())?;
    check_plan(problem, plan)?;
    let mut record = ConvergenceRecord::default();
    let mut guard = GrowthGuard::new();
    guard.check(state.iteration, &state.x)?;
    let start = state.iteration;
    for _ in 0..opts.k_max {
        let info = cppd_step(&mut state, plan, problem)?;
        guard.check(state.iteration, &state.x)?;
        if opts.records(state.iteration - start) {
            let mut row = metrics(&state, problem, opts.reference);
            row.beta = info.beta;
            record.rows.push(row);
        }
    }
    Ok((state, record))
}

fn require_kind(problem: &Problem, want: &'static str) -> Result<()> {
    if problem.kind.name() != want {
        return Err(Error::invalid(format!(
            "expected a {want} problem, got {}",
            problem.kind.name()
        )));
    }
    Ok(())
}

pub fn run_cppd_lsq(problem: &Problem, plan: &StepPlan, opts: &RunOptions) -> Result<(SaddleState, ConvergenceRecord)> {
    require_kind(problem, "lsq")?;
    run_cppd(problem, plan, opts)
}

pub fn run_cppd_tvlsq(
    problem: &Problem,
    plan: &StepPlan,
    opts: &RunOptions,
) -> Result<(SaddleState, ConvergenceRecord)> {
    require_kind(problem, "tvlsq")?;
    run_cppd(problem, plan, opts)
}

pub fn run_cppd_tvclsq(
    problem: &Problem,
    plan: &StepPlan,
    opts: &RunOptions,
) -> Result<(SaddleState, ConvergenceRecord)> {
    require_kind(problem, "tvclsq")?;
    run_cppd(problem, plan, opts)
}

fn baseline_row(
    k: usize,
    x_map: &dyn LinearMap,
    f: &[f64],
    g: &[f64],
    opts: &RunOptions,
    active: Option<&[bool]>,
) -> MetricsRow {
    let xf = x_map.apply(f).expect("dims match");
    let (_, data_rmse, grad_mag) = data_fit(x_map, &xf, g);
    MetricsRow {
        iter: k,
        image_rmse: opts.reference.map(|r| image_rmse(f, r, active)),
        data_rmse,
        grad_mag,
        ..MetricsRow::default()
    }
}

/// Gradient descent on `1/2 ||X f - g||^2` with step `alpha / L^2`, where
/// `norm` is `L = ||X||_2`. Steps outside `alpha in (0, 2)` run but are
/// flagged in `record.warnings`.
pub fn run_gd_lsq(
    problem: &Problem,
    alpha: f64,
    norm: f64,
    opts: &RunOptions,
) -> Result<(Vec<f64>, ConvergenceRecord)> {
    require_kind(problem, "lsq")?;
    opts.validate(problem.n())?;
    if !(norm > 0.0 && alpha.is_finite()) {
        return Err(Error::invalid(format!(
            "GD needs L > 0 and finite alpha, got L={norm}, alpha={alpha}"
        )));
    }
    let mut record = ConvergenceRecord::default();
    if !(alpha > 0.0 && alpha < 2.0) {
        record.warnings.push(format!(
            "GD step alpha = {alpha} lies outside (0, 2); the iteration may not converge"
        ));
    }
    let x_map = problem.data_map.as_ref();
    let g = &problem.data;
    let step = alpha / (norm * norm);
    let mut f = vec![0.0; problem.n()];
    let mut guard = GrowthGuard::new();
    for k in 1..=opts.k_max {
        let resid = vecops::sub(&x_map.apply(&f)?, g);
        let grad = x_map.apply_adjoint(&resid)?;
        vecops::axpy(-step, &grad, &mut f);
        nonfinite(k, "f", &f)?;
        guard.check(k, &f)?;
        if opts.records(k) {
            record.rows.push(baseline_row(k, x_map, &f, g, opts, problem.active()));
        }
    }
    Ok((f, record))
}

/// CGLS on the normal equations of `X f = g` from `f = 0`, without forming
/// `X^T X`. Stops early (cleanly) when a denominator vanishes.
pub fn run_cgls(
    x_map: &dyn LinearMap,
    g: &[f64],
    opts: &RunOptions,
    active: Option<&[bool]>,
) -> Result<(Vec<f64>, ConvergenceRecord)> {
    check_len("CGLS data", x_map.range_dim(), g.len())?;
    opts.validate(x_map.domain_dim())?;
    let mut f = vec![0.0; x_map.domain_dim()];
    let mut r = g.to_vec();
    let mut s = x_map.apply_adjoint(&r)?;
    let mut p = s.clone();
    let mut gamma = dot(&s, &s);
    let mut record = ConvergenceRecord::default();
    for k in 1..=opts.k_max {
        if gamma == 0.0 {
            break;
        }
        let q = x_map.apply(&p)?;
        let delta = dot(&q, &q);
        if delta == 0.0 {
            break;
        }
        let alpha = gamma / delta;
        vecops::axpy(alpha, &p, &mut f);
        vecops::axpy(-alpha, &q, &mut r);
        s = x_map.apply_adjoint(&r)?;
        let gamma_new = dot(&s, &s);
        let beta = gamma_new / gamma;
        for (pi, si) in p.iter_mut().zip(&s) {
            *pi = si + beta * *pi;
        }
        gamma = gamma_new;
        nonfinite(k, "f", &f)?;
        if opts.records(k) {
            record.rows.push(baseline_row(k, x_map, &f, g, opts, active));
        }
    }
    Ok((f, record))
}
