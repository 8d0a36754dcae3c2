//! Human-readable run configuration (TOML) and named presets, plus the
//! translation into a concrete [`MfgProblem`].

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::coupler::{MfgProblem, SchemeParams, SolveOpts};
use crate::error::{MfgError, Result};
use crate::grid::Grid;
use crate::hjb::{CouplingCosts, Hamiltonian};
use crate::levy::{self, LevyKind, LevyMeasure};

/// Closed-form cost expressions; the CLI surface is declarative so that a
/// config file fully determines a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum CostExpr {
    Zero,
    /// `weight * (x - center)^2`.
    Quadratic { weight: f64, center: f64 },
    /// `weight * (x - scale * (1 - sin(angular * t)))^2`: a quadratic well
    /// whose bottom oscillates in time.
    TrackingSin { weight: f64, scale: f64, angular: f64 },
}

impl CostExpr {
    pub fn eval(&self, t: f64, x: f64) -> f64 {
        match *self {
            CostExpr::Zero => 0.0,
            CostExpr::Quadratic { weight, center } => weight * (x - center).powi(2),
            CostExpr::TrackingSin { weight, scale, angular } => {
                weight * (x - scale * (1.0 - (angular * t).sin())).powi(2)
            }
        }
    }

    fn to_xfn(&self) -> Arc<dyn Fn(f64, f64) -> f64 + Send + Sync> {
        let e = self.clone();
        Arc::new(move |t, x| e.eval(t, x))
    }

    fn to_terminal(&self) -> Arc<dyn Fn(f64) -> f64 + Send + Sync> {
        let e = self.clone();
        Arc::new(move |x| e.eval(0.0, x))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureConfig {
    #[serde(flatten)]
    pub kind: LevyKind,
    pub multiplier: f64,
    /// Optional override of the fractional normalization constant.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalization: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostsConfig {
    pub f: CostExpr,
    pub g: CostExpr,
    /// Coupling strength K in front of the mollified density term.
    pub k: f64,
    /// Width of the Gaussian coupling kernel.
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum InitialDensity {
    /// Unnormalized density `exp(-((x - mean) / width)^2)`.
    Gaussian { mean: f64, width: f64 },
    /// Indicator of `[lo, hi]`.
    Uniform { lo: f64, hi: f64 },
}

impl InitialDensity {
    fn to_fn(&self) -> Arc<dyn Fn(f64) -> f64 + Send + Sync> {
        match *self {
            InitialDensity::Gaussian { mean, width } => {
                Arc::new(move |x| (-((x - mean) / width).powi(2)).exp())
            }
            InitialDensity::Uniform { lo, hi } => {
                Arc::new(move |x| if x >= lo && x <= hi { 1.0 } else { 0.0 })
            }
        }
    }
}

/// Truncation radius rule: either a power of the time step or a fixed value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum RRule {
    PowerOfH { exponent: f64 },
    Fixed { value: f64 },
}

impl RRule {
    pub fn resolve(&self, h: f64) -> f64 {
        match *self {
            RRule::PowerOfH { exponent } => h.powf(exponent),
            RRule::Fixed { value } => value,
        }
    }
}

/// Mollification width rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum EpsRule {
    SqrtH,
    Fixed { value: f64 },
}

impl EpsRule {
    pub fn resolve(&self, h: f64) -> f64 {
        match *self {
            EpsRule::SqrtH => h.sqrt(),
            EpsRule::Fixed { value } => value,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamsConfig {
    pub rho: f64,
    pub h: f64,
    pub r_rule: RRule,
    pub eps_rule: EpsRule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub tol: f64,
    pub max_iter: usize,
    pub damping: f64,
}

impl Default for SolverConfig {
    fn default() -> SolverConfig {
        SolverConfig { tol: 1e-12, max_iter: 200, damping: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CflConfig {
    pub threshold: f64,
    pub force: bool,
}

impl Default for CflConfig {
    fn default() -> CflConfig {
        CflConfig { threshold: 5.0, force: false }
    }
}

/// Convergence-study plan: a ladder of time steps compared against a finer
/// reference level on a region of interest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub ladder: Vec<f64>,
    pub reference: f64,
    pub roi: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Config {
    /// Spatial interval [a, b].
    pub domain: [f64; 2],
    /// Final time T.
    pub horizon: f64,
    pub measure: MeasureConfig,
    pub costs: CostsConfig,
    pub m0: InitialDensity,
    pub params: ParamsConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub cfl: CflConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub study: Option<StudyConfig>,
}

pub const PRESET_NAMES: &[&str] = &[
    "example1",
    "example2-i",
    "example2-ii",
    "example2-iii",
    "example2-iv",
    "example3",
    "example4",
];

impl Config {
    pub fn from_toml(text: &str) -> Result<Config> {
        toml::from_str(text).map_err(|e| MfgError::Config(format!("config parse error: {e}")))
    }

    pub fn from_path(path: &std::path::Path) -> Result<Config> {
        let text = std::fs::read_to_string(path)?;
        Config::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Hex SHA-256 of the canonical serialized form; identifies a run.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Same problem at a different resolution (rho = h ladder levels).
    pub fn at_resolution(&self, h: f64) -> Config {
        let mut c = self.clone();
        c.params.h = h;
        c.params.rho = h;
        c
    }

    pub fn solve_opts(&self) -> SolveOpts {
        SolveOpts {
            tol: self.solver.tol,
            max_iter: self.solver.max_iter,
            damping: self.solver.damping,
            cfl_threshold: self.cfl.threshold,
            force: self.cfl.force,
        }
    }

    /// Builds the concrete problem: grid, validated measure, cost closures,
    /// resolved r and eps, with h snapped to divide the horizon.
    pub fn resolve(&self) -> Result<MfgProblem> {
        if self.domain[0] >= self.domain[1] {
            return Err(MfgError::Config("domain must satisfy a < b".into()));
        }
        if self.horizon <= 0.0 || self.params.h <= 0.0 || self.params.rho <= 0.0 {
            return Err(MfgError::Config("horizon, h, rho must be positive".into()));
        }
        let grid = Grid::new(self.domain[0], self.domain[1], self.params.rho);
        let mut measure = LevyMeasure::new(self.measure.kind.clone(), self.measure.multiplier)?;
        if self.measure.normalization.is_some() {
            measure.normalization = self.measure.normalization;
            measure.validate()?;
        }
        let r = self.params.r_rule.resolve(self.params.h).min(1.0);
        let eps = self.params.eps_rule.resolve(self.params.h);
        let costs = CouplingCosts {
            f: self.costs.f.to_xfn(),
            k: self.costs.k,
            delta: self.costs.delta,
            g: self.costs.g.to_terminal(),
        };
        let mut problem = MfgProblem {
            grid,
            horizon: self.horizon,
            measure,
            ham: Hamiltonian::Quadratic,
            costs,
            m0: self.m0.to_fn(),
            params: SchemeParams { rho: self.params.rho, h: self.params.h, r, eps },
        };
        problem.snap();
        Ok(problem)
    }

    /// Named example presets.
    pub fn preset(name: &str) -> Result<Config> {
        let s = 1.5;
        let oscillating_costs = CostsConfig {
            f: CostExpr::TrackingSin {
                weight: 5.0,
                scale: 0.5,
                angular: 2.0 * std::f64::consts::PI,
            },
            g: CostExpr::Zero,
            k: 1.0,
            delta: 0.4,
        };
        let centered_gaussian = InitialDensity::Gaussian { mean: 0.5, width: 0.1 };
        let base = Config {
            domain: [0.0, 1.0],
            horizon: 2.0,
            measure: MeasureConfig {
                kind: LevyKind::FractionalLaplacian { s },
                multiplier: 0.09 * 0.09,
                normalization: None,
            },
            costs: oscillating_costs,
            m0: centered_gaussian,
            params: ParamsConfig {
                rho: 0.005,
                h: 0.005,
                r_rule: RRule::PowerOfH { exponent: 1.0 / (2.0 * s) },
                eps_rule: EpsRule::SqrtH,
            },
            solver: SolverConfig::default(),
            cfl: CflConfig::default(),
            study: None,
        };
        match name {
            "example1" | "example2-i" => Ok(base),
            "example2-ii" => {
                let mut c = base;
                c.measure.kind = LevyKind::OneSidedFractional { s, positive: true };
                Ok(c)
            }
            "example2-iii" => {
                let mut c = base;
                c.measure.kind = LevyKind::TruncatedFractional { s, band: 0.5 };
                Ok(c)
            }
            "example2-iv" => {
                let mut c = base;
                c.measure.kind = LevyKind::Cgmy {
                    c: levy::fractional_normalization(s),
                    g: 1.0,
                    m: 10.0,
                    y: s,
                };
                Ok(c)
            }
            "example3" => {
                let mut c = base;
                c.domain = [-1.0, 2.0];
                c.horizon = 10.0;
                c.costs = CostsConfig {
                    f: CostExpr::Quadratic { weight: 1.0, center: 0.0 },
                    g: CostExpr::Quadratic { weight: 1.0, center: 2.0 },
                    k: 0.4,
                    delta: 0.4,
                };
                c.m0 = InitialDensity::Uniform { lo: 1.0, hi: 2.0 };
                c.params.rho = 0.01;
                c.params.h = 0.01;
                Ok(c)
            }
            "example4" => {
                let mut c = base;
                c.horizon = 0.5;
                c.measure.multiplier = 0.2;
                // rate study runs the HJB/FPK chain without the crowd
                // coupling; the finer truncation radius keeps the small-jump
                // substitution error below the O(h) terms on the ladder
                c.costs.k = 0.0;
                c.params.rho = 0.0625;
                c.params.h = 0.0625;
                c.params.r_rule = RRule::PowerOfH { exponent: 0.75 };
                c.params.eps_rule = EpsRule::Fixed { value: 0.25 };
                c.study = Some(StudyConfig {
                    ladder: vec![0.25, 0.125, 0.0625, 0.03125, 0.015625],
                    reference: 0.00390625,
                    roi: [1.0 / 3.0, 2.0 / 3.0],
                });
                Ok(c)
            }
            other => Err(MfgError::Config(format!(
                "unknown preset '{other}'; available: {}",
                PRESET_NAMES.join(", ")
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_parse_resolve_and_pass_cfl() {
        for name in PRESET_NAMES {
            let c = Config::preset(name).unwrap();
            let p = c.resolve().unwrap();
            let report = p.check_cfl(c.cfl.threshold, false).unwrap();
            assert!(report.space_time <= 5.0, "{name}");
            // round trip through TOML preserves the hash
            let back = Config::from_toml(&c.to_toml()).unwrap();
            assert_eq!(back, c, "{name}");
            assert_eq!(back.hash(), c.hash(), "{name}");
        }
        assert!(Config::preset("nonsense").is_err());
    }

    #[test]
    fn example1_parameter_fidelity() {
        let c = Config::preset("example1").unwrap();
        assert_eq!(c.params.h, 0.005);
        assert_eq!(c.params.rho, 0.005);
        assert_eq!(c.costs.k, 1.0);
        assert_eq!(c.costs.delta, 0.4);
        assert_eq!(c.measure.multiplier, 0.09 * 0.09);
        let p = c.resolve().unwrap();
        assert!((p.params.eps - 0.005f64.sqrt()).abs() < 1e-15);
        assert!((p.params.r - 0.005f64.powf(1.0 / 3.0)).abs() < 1e-15);
        assert_eq!(p.n_steps(), 400);
    }

    #[test]
    fn example4_study_plan() {
        let c = Config::preset("example4").unwrap();
        assert_eq!(c.horizon, 0.5);
        assert_eq!(c.measure.multiplier, 0.2);
        let study = c.study.as_ref().unwrap();
        assert_eq!(study.ladder.len(), 5);
        assert!(study.ladder.iter().all(|&h| h > study.reference));
        let fine = c.at_resolution(study.reference).resolve().unwrap();
        assert_eq!(fine.n_steps(), 128);
        assert!((fine.params.eps - 0.25).abs() < 1e-15);
    }

    #[test]
    fn hash_distinguishes_presets() {
        let mut seen = std::collections::HashSet::new();
        for name in ["example1", "example2-ii", "example2-iii", "example2-iv", "example3", "example4"] {
            assert!(seen.insert(Config::preset(name).unwrap().hash()), "{name}");
        }
    }

    #[test]
    fn cost_expressions() {
        let f = CostExpr::TrackingSin {
            weight: 5.0,
            scale: 0.5,
            angular: 2.0 * std::f64::consts::PI,
        };
        // at t = 0 the well bottom is at 0.5
        assert!(f.eval(0.0, 0.5).abs() < 1e-12);
        assert!((f.eval(0.0, 1.0) - 5.0 * 0.25).abs() < 1e-12);
        // at t = 0.25 the bottom sits at 0
        assert!(f.eval(0.25, 0.0).abs() < 1e-12);
        let g = CostExpr::Quadratic { weight: 1.0, center: 2.0 };
        assert_eq!(g.eval(7.0, 3.0), 1.0);
    }
}
