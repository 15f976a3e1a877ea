//! Inverse-crime experiment runner, parameter sweeps and the eigen cache.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;

use super::config::{ExperimentConfig, Gamma, Nu, PlanChoice, ProblemChoice, SolverChoice};
use super::{CliError, CliResult, Stage};
use crate::ct::{CtSystem, GaussianSmooth};
use crate::error::{Error, Result};
use crate::io;
use crate::linop::{LinearMap, MapRef};
use crate::phantom::{self, Phantom};
use crate::solver::{self, ConvergenceRecord, Problem, RunOptions};
use crate::spectral::{self, EigenSet, StepPlan};

/// What a finished run reports back.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub record: ConvergenceRecord,
    pub final_image: Vec<f64>,
    pub phantom: Phantom,
    pub gamma: Option<f64>,
    pub nu: Option<f64>,
    pub warnings: Vec<String>,
}

impl RunSummary {
    pub fn final_image_rmse(&self) -> Option<f64> {
        self.record.last().and_then(|r| r.image_rmse)
    }
    pub fn final_r_sigma(&self) -> Option<f64> {
        self.record.last().and_then(|r| r.r_sigma)
    }
    pub fn final_r_tau(&self) -> Option<f64> {
        self.record.last().and_then(|r| r.r_tau)
    }
}

fn cache_path(dir: &Path, cfg: &ExperimentConfig, geometry_hash: u64, blur: f64) -> PathBuf {
    dir.join(format!(
        "eig-{geometry_hash:016x}-n{}-s{}-K{}-p{}-seed{}-b{}.bin",
        cfg.nx, cfg.side_cm, cfg.k, cfg.n_power, cfg.seed, blur
    ))
}

/// Leading eigenpairs of `X^T X` for the configured K, smoothed when the
/// plan asks for it, read from or stored into the cache directory.
pub fn eigenset_for(cfg: &ExperimentConfig, sys: &CtSystem, warnings: &mut Vec<String>) -> Result<EigenSet> {
    let smoothed = cfg.plan == PlanChoice::SmoothedLowRank;
    let blur = if smoothed { cfg.blur } else { 0.0 };
    let cached = cfg
        .eig_cache
        .as_ref()
        .map(|dir| cache_path(dir, cfg, sys.geometry.hash(), blur));
    if let Some(path) = &cached {
        if path.exists() {
            let e = io::read_eigenset(path)?;
            if e.k() == cfg.k && e.dim() == sys.grid.n_pixels() {
                return Ok(e);
            }
            warnings.push(format!("ignoring stale eigen cache {}", path.display()));
        }
    }
    let mut eigs = spectral::leading_eigenpairs(sys.projector.as_ref(), cfg.k, cfg.n_power, cfg.seed)?;
    if smoothed {
        let s = GaussianSmooth::new(sys.grid, cfg.blur)?;
        let out = spectral::smooth_eigenset(&eigs, &s, Some(sys.projector.as_ref()))?;
        if !out.order_preserved {
            warnings.push("smoothing changed the order of the eigenvector Rayleigh quotients".into());
        }
        eigs = out.set;
    }
    if let Some(path) = &cached {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        // write then rename so concurrent sweep workers never see a partial file
        static COUNTER: AtomicUsize = AtomicUsize::new(0);
        let tag = COUNTER.fetch_add(1, Ordering::Relaxed);
        let tmp = path.with_extension(format!("tmp{}-{tag}", std::process::id()));
        io::write_eigenset(&tmp, &eigs)?;
        std::fs::rename(&tmp, path)?;
    }
    Ok(eigs)
}

fn build_plan(
    cfg: &ExperimentConfig,
    problem: &Problem,
    eigs: Option<&EigenSet>,
    warnings: &mut Vec<String>,
) -> Result<StepPlan> {
    let a = problem.operator().as_ref();
    let plan = match cfg.plan {
        PlanChoice::Scalar => {
            let l = spectral::spectral_norm(a, cfg.power_iters, cfg.seed);
            spectral::scalar_steps_with_safety(l, cfg.rho, cfg.l_scale)?
        }
        PlanChoice::Diagonal => spectral::diagonal_plan(a, cfg.rho)?,
        PlanChoice::LowRank | PlanChoice::SmoothedLowRank => {
            let eigs = eigs.ok_or_else(|| Error::invalid("low-rank plan without eigenpairs"))?;
            let (plan, est) = spectral::lowrank_plan(a, eigs, cfg.rho, cfg.sigma_iters, cfg.seed)?;
            if !est.converged {
                warnings.push(format!(
                    "estimate of ||T A^T A|| did not settle to 1e-6 in {} iterations",
                    cfg.sigma_iters
                ));
            }
            plan
        }
    };
    Ok(plan.with_theta(cfg.theta))
}

/// Run one configured experiment without touching the disk.
pub fn run_in_memory(cfg: &ExperimentConfig) -> CliResult<RunSummary> {
    cfg.validate().map_err(Stage::Config.wrap())?;
    let mut warnings = Vec::new();
    let grid = cfg.grid().map_err(Stage::Config.wrap())?;
    let geometry = cfg.geometry().map_err(Stage::Config.wrap())?;
    let sys = CtSystem::new(grid, geometry).map_err(Stage::Setup.wrap())?;

    let ph = phantom::generate(&grid, cfg.seed);
    let x: MapRef = sys.projector.clone();
    let g = x.apply(&ph.image).map_err(Stage::Data.wrap())?;

    let eigs = match cfg.plan {
        PlanChoice::LowRank | PlanChoice::SmoothedLowRank if cfg.solver == SolverChoice::Cppd => {
            Some(eigenset_for(cfg, &sys, &mut warnings).map_err(Stage::Eigen.wrap())?)
        }
        _ => None,
    };

    let (gamma, nu) = match cfg.problem {
        ProblemChoice::Lsq => (None, None),
        _ => {
            let d = sys.gradient.as_ref();
            let nu = match (cfg.nu, &eigs) {
                (Nu::Value(v), _) => v,
                // match the gradient block to the smallest retained eigenvalue
                (Nu::Auto, Some(e)) => {
                    e.values[e.k() - 1].sqrt() / spectral::spectral_norm(d, cfg.power_iters, cfg.seed)
                }
                (Nu::Auto, None) => {
                    solver::balanced_nu(x.as_ref(), d, cfg.power_iters, cfg.seed).map_err(Stage::Plan.wrap())?
                }
            };
            let gamma = match cfg.gamma {
                Gamma::PhantomTv => ph.tv_value(),
                Gamma::Value(v) => v,
            };
            (Some(gamma), Some(nu))
        }
    };

    let d: MapRef = sys.gradient.clone();
    let problem = match cfg.problem {
        ProblemChoice::Lsq => Problem::lsq(x.clone(), g.clone()),
        ProblemChoice::TvLsq => Problem::tvlsq(x.clone(), d, g.clone(), cfg.beta, nu.unwrap_or(1.0)),
        ProblemChoice::TvcLsq => Problem::tvclsq(x.clone(), d, g.clone(), gamma.unwrap_or(1.0), nu.unwrap_or(1.0)),
    }
    .and_then(|p| p.with_active(sys.active.clone()))
    .map_err(Stage::Config.wrap())?;

    let opts = RunOptions::new(cfg.k_max).stride(cfg.stride).reference(&ph.image);
    let (final_image, record) = match cfg.solver {
        SolverChoice::Cppd => {
            let plan = build_plan(cfg, &problem, eigs.as_ref(), &mut warnings).map_err(Stage::Plan.wrap())?;
            let (state, rec) = solver::run_cppd(&problem, &plan, &opts).map_err(Stage::Solve.wrap())?;
            (state.x, rec)
        }
        SolverChoice::Gd => {
            let l = spectral::spectral_norm(x.as_ref(), cfg.power_iters, cfg.seed) * cfg.l_scale;
            solver::run_gd_lsq(&problem, cfg.alpha, l, &opts).map_err(Stage::Solve.wrap())?
        }
        SolverChoice::Cgls => {
            solver::run_cgls(x.as_ref(), &g, &opts, Some(&sys.active)).map_err(Stage::Solve.wrap())?
        }
    };
    warnings.extend(record.warnings.iter().cloned());
    Ok(RunSummary {
        record,
        final_image,
        phantom: ph,
        gamma,
        nu,
        warnings,
    })
}

/// Manifest text: the full config plus resolved values as comments.
pub fn manifest_text(cfg: &ExperimentConfig, summary: &RunSummary) -> String {
    let mut s = format!("# cppd {} experiment manifest\n", env!("CARGO_PKG_VERSION"));
    if let Ok(g) = cfg.geometry() {
        let _ = writeln!(
            s,
            "# geometry: {} views, arc {}, {} bins, hash {:016x}",
            g.n_views,
            g.arc_length,
            g.n_bins,
            g.hash()
        );
    }
    if let Some(gamma) = summary.gamma {
        let _ = writeln!(s, "# resolved gamma = {gamma}");
    }
    if let Some(nu) = summary.nu {
        let _ = writeln!(s, "# resolved nu = {nu}");
    }
    s.push_str(&cfg.to_text());
    s
}

/// Run and write `convergence.csv`, `final_image.raw`, `final_image.pgm`
/// and `manifest` into `cfg.output`.
pub fn run_experiment(cfg: &ExperimentConfig) -> CliResult<RunSummary> {
    let summary = run_in_memory(cfg)?;
    write_outputs(cfg, &summary).map_err(Stage::Output.wrap())?;
    Ok(summary)
}

fn write_outputs(cfg: &ExperimentConfig, summary: &RunSummary) -> Result<()> {
    let dir = &cfg.output;
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("convergence.csv"), summary.record.to_csv())?;
    io::write_raw(&dir.join("final_image.raw"), &summary.final_image)?;
    io::write_pgm(
        &dir.join("final_image.pgm"),
        &summary.phantom.grid,
        &summary.final_image,
        cfg.window.range(),
    )?;
    std::fs::write(dir.join("manifest"), manifest_text(cfg, summary))?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    Rho,
    K,
}

impl SweepParam {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "rho" => Ok(SweepParam::Rho),
            "k" | "K" => Ok(SweepParam::K),
            _ => Err(Error::Config(format!("cannot sweep over '{s}'; use rho or k"))),
        }
    }

    fn key(self) -> &'static str {
        match self {
            SweepParam::Rho => "rho",
            SweepParam::K => "k",
        }
    }
}

/// Final image RMSE, `r_sigma` and `r_tau` of one run.
pub type FinalMetrics = (Option<f64>, Option<f64>, Option<f64>);

/// One sweep entry; `outcome` holds the error text of a failed run.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub value: String,
    pub outcome: std::result::Result<FinalMetrics, String>,
}

pub const SWEEP_HEADER: &str = "value,final_image_rmse,final_r_sigma,final_r_tau";

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let f = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
    let mut s = format!("{SWEEP_HEADER}\n");
    for r in rows {
        match &r.outcome {
            Ok((a, b, c)) => {
                let _ = writeln!(s, "{},{},{},{}", r.value, f(*a), f(*b), f(*c));
            }
            Err(_) => {
                let _ = writeln!(s, "{},,,", r.value);
            }
        }
    }
    s
}

/// Run the experiment once per value, each in `<output>/<param>-<value>`,
/// on a pool of `workers` threads, then write `summary.csv`. Failed runs
/// leave an `error.txt` in their directory and empty summary fields.
pub fn sweep(cfg: &ExperimentConfig, param: SweepParam, values: &[String], workers: usize) -> CliResult<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(CliError::new(
            Stage::Config,
            Error::Config("sweep needs at least one value".into()),
        ));
    }
    let mut configs = Vec::with_capacity(values.len());
    for v in values {
        let mut c = cfg.clone();
        c.set(param.key(), v).map_err(Stage::Config.wrap())?;
        c.output = cfg.output.join(format!("{}-{v}", param.key()));
        configs.push(c);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| CliError::new(Stage::Setup, Error::invalid(e.to_string())))?;
    let rows: Vec<SweepRow> = pool.install(|| {
        configs
            .par_iter()
            .zip(values)
            .map(|(c, v)| {
                let outcome = match run_experiment(c) {
                    Ok(s) => Ok((s.final_image_rmse(), s.final_r_sigma(), s.final_r_tau())),
                    Err(e) => {
                        let msg = e.to_string();
                        let _ = std::fs::create_dir_all(&c.output);
                        let _ = std::fs::write(c.output.join("error.txt"), format!("{msg}\n"));
                        Err(msg)
                    }
                };
                SweepRow {
                    value: v.clone(),
                    outcome,
                }
            })
            .collect()
    });
    std::fs::create_dir_all(&cfg.output).map_err(|e| CliError::new(Stage::Output, e.into()))?;
    std::fs::write(cfg.output.join("summary.csv"), sweep_csv(&rows))
        .map_err(|e| CliError::new(Stage::Output, e.into()))?;
    Ok(rows)
}

/// Compute (or load) the configured eigenset and write `eigenvalues.csv`
/// and `eigenset.bin` into the output directory.
pub fn eig_command(cfg: &ExperimentConfig) -> CliResult<EigenSet> {
    cfg.validate().map_err(Stage::Config.wrap())?;
    let sys = CtSystem::new(
        cfg.grid().map_err(Stage::Config.wrap())?,
        cfg.geometry().map_err(Stage::Config.wrap())?,
    )
    .map_err(Stage::Setup.wrap())?;
    let mut warnings = Vec::new();
    let eigs = eigenset_for(cfg, &sys, &mut warnings).map_err(Stage::Eigen.wrap())?;
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    let write = || -> Result<()> {
        std::fs::create_dir_all(&cfg.output)?;
        let mut csv = String::from("k,eigenvalue\n");
        for (i, v) in eigs.values.iter().enumerate() {
            let _ = writeln!(csv, "{i},{v:e}");
        }
        std::fs::write(cfg.output.join("eigenvalues.csv"), csv)?;
        io::write_eigenset(&cfg.output.join("eigenset.bin"), &eigs)
    };
    write().map_err(Stage::Output.wrap())?;
    Ok(eigs)
}
