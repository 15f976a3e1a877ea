//! Flat `key = value` experiment configuration.

use std::fmt::Write as _;
use std::path::PathBuf;

use crate::ct::{FanBeamGeometry, ImageGrid, ScanPreset};
use crate::error::{Error, Result};
use crate::phantom::DisplayWindow;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ProblemChoice {
    Lsq,
    TvLsq,
    TvcLsq,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SolverChoice {
    Cppd,
    Gd,
    Cgls,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PlanChoice {
    Scalar,
    Diagonal,
    LowRank,
    SmoothedLowRank,
}

/// TV constraint value: a number or the phantom's own TV.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Gamma {
    PhantomTv,
    Value(f64),
}

/// Stack weight of the gradient block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Nu {
    Auto,
    Value(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub nx: usize,
    pub side_cm: f64,
    pub preset: ScanPreset,
    pub views: Option<usize>,
    /// Scan arc in radians.
    pub arc: Option<f64>,
    pub bins: Option<usize>,
    pub problem: ProblemChoice,
    pub beta: f64,
    pub gamma: Gamma,
    pub nu: Nu,
    pub solver: SolverChoice,
    pub alpha: f64,
    pub plan: PlanChoice,
    pub k: usize,
    pub blur: f64,
    pub rho: f64,
    pub theta: f64,
    pub l_scale: f64,
    pub k_max: usize,
    pub stride: usize,
    pub seed: u64,
    pub power_iters: usize,
    pub sigma_iters: usize,
    pub n_power: usize,
    pub window: DisplayWindow,
    pub output: PathBuf,
    pub eig_cache: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            nx: 64,
            side_cm: FanBeamGeometry::FOV_DIAMETER,
            preset: ScanPreset::DeskFull,
            views: None,
            arc: None,
            bins: None,
            problem: ProblemChoice::Lsq,
            beta: 0.0,
            gamma: Gamma::PhantomTv,
            nu: Nu::Auto,
            solver: SolverChoice::Cppd,
            alpha: 1.0,
            plan: PlanChoice::Scalar,
            k: 1,
            blur: 4.0,
            rho: 0.1,
            theta: 1.0,
            l_scale: 1.0,
            k_max: 1000,
            stride: 1,
            seed: 1,
            power_iters: 200,
            sigma_iters: 500,
            n_power: 100,
            window: DisplayWindow::Wide,
            output: PathBuf::from("out"),
            eig_cache: None,
        }
    }
}

/// Keys in manifest order.
pub const KEYS: &[&str] = &[
    "nx",
    "side_cm",
    "preset",
    "views",
    "arc",
    "bins",
    "problem",
    "beta",
    "gamma",
    "nu",
    "solver",
    "alpha",
    "plan",
    "k",
    "blur",
    "rho",
    "theta",
    "l_scale",
    "k_max",
    "stride",
    "seed",
    "power_iters",
    "sigma_iters",
    "n_power",
    "window",
    "output",
    "eig_cache",
];

fn cfg_err(key: &str, value: &str, what: &str) -> Error {
    Error::Config(format!("{key} = '{value}': {what}"))
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| cfg_err(key, value, "not a valid number"))
}

fn optional<T: std::str::FromStr>(key: &str, value: &str) -> Result<Option<T>> {
    if value.is_empty() || value == "preset" {
        Ok(None)
    } else {
        num(key, value).map(Some)
    }
}

impl ExperimentConfig {
    /// Parse `key = value` lines; `#` starts a comment, blank lines are
    /// skipped. Later keys override earlier ones.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got '{line}'", lineno + 1)))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    /// Apply one `key=value` override.
    pub fn apply_override(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override '{pair}' is not key=value")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "nx" => self.nx = num(key, value)?,
            "side_cm" => self.side_cm = num(key, value)?,
            "preset" => self.preset = ScanPreset::parse(value).map_err(|_| cfg_err(key, value, "unknown preset"))?,
            "views" => self.views = optional(key, value)?,
            "arc" => self.arc = optional(key, value)?,
            "bins" => self.bins = optional(key, value)?,
            "problem" => {
                self.problem = match value {
                    "lsq" => ProblemChoice::Lsq,
                    "tvlsq" => ProblemChoice::TvLsq,
                    "tvclsq" => ProblemChoice::TvcLsq,
                    _ => return Err(cfg_err(key, value, "expected lsq, tvlsq or tvclsq")),
                }
            }
            "beta" => self.beta = num(key, value)?,
            "gamma" => {
                self.gamma = if value == "phantom-tv" {
                    Gamma::PhantomTv
                } else {
                    Gamma::Value(num(key, value)?)
                }
            }
            "nu" => {
                self.nu = if value == "auto" {
                    Nu::Auto
                } else {
                    Nu::Value(num(key, value)?)
                }
            }
            "solver" => {
                self.solver = match value {
                    "cppd" => SolverChoice::Cppd,
                    "gd" => SolverChoice::Gd,
                    "cgls" => SolverChoice::Cgls,
                    _ => return Err(cfg_err(key, value, "expected cppd, gd or cgls")),
                }
            }
            "alpha" => self.alpha = num(key, value)?,
            "plan" => {
                self.plan = match value {
                    "scalar" => PlanChoice::Scalar,
                    "diagonal" => PlanChoice::Diagonal,
                    "lowrank" => PlanChoice::LowRank,
                    "smoothed-lowrank" => PlanChoice::SmoothedLowRank,
                    _ => {
                        return Err(cfg_err(
                            key,
                            value,
                            "expected scalar, diagonal, lowrank or smoothed-lowrank",
                        ))
                    }
                }
            }
            "k" => self.k = num(key, value)?,
            "blur" => self.blur = num(key, value)?,
            "rho" => self.rho = num(key, value)?,
            "theta" => self.theta = num(key, value)?,
            "l_scale" => self.l_scale = num(key, value)?,
            "k_max" => self.k_max = num(key, value)?,
            "stride" => self.stride = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "power_iters" => self.power_iters = num(key, value)?,
            "sigma_iters" => self.sigma_iters = num(key, value)?,
            "n_power" => self.n_power = num(key, value)?,
            "window" => {
                self.window =
                    DisplayWindow::parse(value).ok_or_else(|| cfg_err(key, value, "expected wide or narrow"))?
            }
            "output" => self.output = PathBuf::from(value),
            "eig_cache" => {
                self.eig_cache = if value.is_empty() || value == "none" {
                    None
                } else {
                    Some(PathBuf::from(value))
                }
            }
            _ => return Err(Error::Config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.nx == 0 || !(self.side_cm > 0.0) {
            return fail(format!(
                "grid needs nx >= 1 and side_cm > 0, got {} and {}",
                self.nx, self.side_cm
            ));
        }
        if self.k_max == 0 {
            return fail("k_max must be at least 1".into());
        }
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return fail(format!("rho must be positive, got {}", self.rho));
        }
        if !(self.l_scale > 0.0 && self.l_scale <= 1.0) {
            return fail(format!("l_scale must lie in (0, 1], got {}", self.l_scale));
        }
        if self.stride == 0 || self.power_iters == 0 || self.n_power == 0 || self.sigma_iters == 0 {
            return fail("stride, power_iters, sigma_iters and n_power must be at least 1".into());
        }
        if matches!(self.plan, PlanChoice::LowRank | PlanChoice::SmoothedLowRank) && self.k == 0 {
            return fail("low-rank plans need k >= 1".into());
        }
        if self.plan == PlanChoice::SmoothedLowRank && !(self.blur > 0.0) {
            return fail(format!("smoothed-lowrank needs blur > 0, got {}", self.blur));
        }
        if self.plan == PlanChoice::Diagonal && self.problem != ProblemChoice::Lsq {
            return fail("the diagonal plan is only available for problem = lsq".into());
        }
        if self.solver != SolverChoice::Cppd && self.problem != ProblemChoice::Lsq {
            return fail("gd and cgls solve problem = lsq only".into());
        }
        if self.problem == ProblemChoice::TvLsq && !(self.beta >= 0.0) {
            return fail(format!("beta must be >= 0, got {}", self.beta));
        }
        if let Gamma::Value(g) = self.gamma {
            if self.problem == ProblemChoice::TvcLsq && !(g > 0.0) {
                return fail(format!("gamma must be positive, got {g}"));
            }
        }
        if let Nu::Value(v) = self.nu {
            if !(v > 0.0) {
                return fail(format!("nu must be positive, got {v}"));
            }
        }
        self.grid()?;
        self.geometry()?;
        Ok(())
    }

    pub fn grid(&self) -> Result<ImageGrid> {
        ImageGrid::new(self.nx, self.side_cm).map_err(|e| Error::Config(e.to_string()))
    }

    /// Preset geometry with any `views` / `arc` / `bins` overrides.
    pub fn geometry(&self) -> Result<FanBeamGeometry> {
        let base = FanBeamGeometry::preset(self.preset);
        FanBeamGeometry::for_fov(
            self.views.unwrap_or(base.n_views),
            self.arc.unwrap_or(base.arc_length),
            self.bins.unwrap_or(base.n_bins),
            base.source_to_center,
            base.source_to_detector,
            self.side_cm,
        )
        .map_err(|e| Error::Config(e.to_string()))
    }

    pub fn value_of(&self, key: &str) -> Option<String> {
        let opt = |v: Option<String>| v.unwrap_or_else(|| "preset".into());
        Some(match key {
            "nx" => self.nx.to_string(),
            "side_cm" => self.side_cm.to_string(),
            "preset" => self.preset.name().into(),
            "views" => opt(self.views.map(|v| v.to_string())),
            "arc" => opt(self.arc.map(|v| v.to_string())),
            "bins" => opt(self.bins.map(|v| v.to_string())),
            "problem" => match self.problem {
                ProblemChoice::Lsq => "lsq",
                ProblemChoice::TvLsq => "tvlsq",
                ProblemChoice::TvcLsq => "tvclsq",
            }
            .into(),
            "beta" => self.beta.to_string(),
            "gamma" => match self.gamma {
                Gamma::PhantomTv => "phantom-tv".into(),
                Gamma::Value(g) => g.to_string(),
            },
            "nu" => match self.nu {
                Nu::Auto => "auto".into(),
                Nu::Value(v) => v.to_string(),
            },
            "solver" => match self.solver {
                SolverChoice::Cppd => "cppd",
                SolverChoice::Gd => "gd",
                SolverChoice::Cgls => "cgls",
            }
            .into(),
            "alpha" => self.alpha.to_string(),
            "plan" => match self.plan {
                PlanChoice::Scalar => "scalar",
                PlanChoice::Diagonal => "diagonal",
                PlanChoice::LowRank => "lowrank",
                PlanChoice::SmoothedLowRank => "smoothed-lowrank",
            }
            .into(),
            "k" => self.k.to_string(),
            "blur" => self.blur.to_string(),
            "rho" => self.rho.to_string(),
            "theta" => self.theta.to_string(),
            "l_scale" => self.l_scale.to_string(),
            "k_max" => self.k_max.to_string(),
            "stride" => self.stride.to_string(),
            "seed" => self.seed.to_string(),
            "power_iters" => self.power_iters.to_string(),
            "sigma_iters" => self.sigma_iters.to_string(),
            "n_power" => self.n_power.to_string(),
            "window" => match self.window {
                DisplayWindow::Wide => "wide",
                DisplayWindow::Narrow => "narrow",
            }
            .into(),
            "output" => self.output.display().to_string(),
            "eig_cache" => self
                .eig_cache
                .as_ref()
                .map_or_else(|| "none".into(), |p| p.display().to_string()),
            _ => return None,
        })
    }

    /// Every key with its value, readable back by [`ExperimentConfig::parse`].
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for key in KEYS {
            let _ = writeln!(s, "{key} = {}", self.value_of(key).expect("known key"));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_with_comments_and_overrides() {
        let mut c =
            ExperimentConfig::parse("# comment\nrho = 0.2\n\nproblem = tvclsq # trailing\ngamma = phantom-tv\n")
                .unwrap();
        assert_eq!(c.rho, 0.2);
        assert_eq!(c.problem, ProblemChoice::TvcLsq);
        c.apply_override("gamma=3.5").unwrap();
        assert_eq!(c.gamma, Gamma::Value(3.5));
        assert!(matches!(ExperimentConfig::parse("bogus = 1"), Err(Error::Config(_))));
        assert!(matches!(ExperimentConfig::parse("rho"), Err(Error::Config(_))));
        assert!(matches!(ExperimentConfig::parse("rho = x"), Err(Error::Config(_))));
    }

    #[test]
    fn text_roundtrip() {
        let c = ExperimentConfig {
            views: Some(64),
            arc: Some(std::f64::consts::PI * 0.75),
            plan: PlanChoice::SmoothedLowRank,
            k: 5,
            eig_cache: Some("cache".into()),
            nu: Nu::Value(0.1 + 0.2),
            ..Default::default()
        };
        assert_eq!(ExperimentConfig::parse(&c.to_text()).unwrap(), c);
        assert_eq!(
            ExperimentConfig::parse(&ExperimentConfig::default().to_text()).unwrap(),
            ExperimentConfig::default()
        );
    }

    #[test]
    fn validation() {
        let mut c = ExperimentConfig::default();
        assert!(c.validate().is_ok());
        c.rho = 0.0;
        assert!(c.validate().is_err());
        for bad in [
            ExperimentConfig {
                problem: ProblemChoice::TvcLsq,
                plan: PlanChoice::Diagonal,
                ..Default::default()
            },
            ExperimentConfig {
                k_max: 0,
                ..Default::default()
            },
            ExperimentConfig {
                solver: SolverChoice::Cgls,
                problem: ProblemChoice::TvLsq,
                ..Default::default()
            },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn geometry_overrides() {
        let mut c = ExperimentConfig::default();
        assert_eq!(c.geometry().unwrap(), FanBeamGeometry::preset(ScanPreset::DeskFull));
        c.views = Some(64);
        let g = c.geometry().unwrap();
        assert_eq!((g.n_views, g.n_bins), (64, 128));
    }
}
