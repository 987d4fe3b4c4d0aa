use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bessel::GridSpec;
use crate::coefficients::{CoefficientSet, FamilySpec};
use crate::interpolation::{dyadic_grid, solve_parameters, ParameterChoice};
use crate::particles::SimulationPlan;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpsGrid {
    pub eps0: f64,
    pub alpha: f64,
    pub n_max: usize,
}

impl Default for EpsGrid {
    fn default() -> Self {
        Self {
            eps0: 1.0,
            alpha: 1.0,
            n_max: 7,
        }
    }
}

impl EpsGrid {
    /// Lags used at time `t`: the grid restarted from `min(eps0, 1, t)`.
    pub fn at(&self, t: f64) -> Vec<f64> {
        dyadic_grid(self.eps0.min(1.0).min(t), self.alpha, self.n_max)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AutoKeyword {
    Auto,
}

/// `"auto"` runs the parameter solver; otherwise `r'` and `s` are fixed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamSelection {
    Auto(AutoKeyword),
    Exponents { r_conj: f64, s: f64 },
}

impl Default for ParamSelection {
    fn default() -> Self {
        ParamSelection::Auto(AutoKeyword::Auto)
    }
}

/// Which per-lag quantities the rate experiment computes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Quantities {
    #[serde(default = "yes")]
    pub displacement: bool,
    #[serde(default = "yes")]
    pub mixture_norm: bool,
    #[serde(default = "yes")]
    pub error_norm: bool,
}

impl Default for Quantities {
    fn default() -> Self {
        Self {
            displacement: true,
            mixture_norm: true,
            error_norm: true,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmergenceSpec {
    /// Use this lag instead of balancing the two bound terms.
    #[serde(default)]
    pub fixed_eps: Option<f64>,
    /// Particle counts for the finite-n stability check.
    #[serde(default)]
    pub n_values: Vec<usize>,
    /// Horizon and step used for the stability runs, when different.
    #[serde(default)]
    pub stability_dt: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModulusSpec {
    /// Lag of the frozen particles compared across times.
    pub eps_ref: f64,
    /// Largest time offset `h`; offsets are `h0·2^{-k}`.
    pub h0: f64,
    pub levels: usize,
}

impl Default for ModulusSpec {
    fn default() -> Self {
        Self {
            eps_ref: 0.125,
            h0: 0.25,
            levels: 7,
        }
    }
}

fn yes() -> bool {
    true
}

fn default_replications() -> usize {
    32
}

fn default_rho() -> f64 {
    0.9
}

fn default_q() -> f64 {
    2.0
}

/// A complete experiment description, as read from JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub family: FamilySpec,
    pub n: usize,
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
    pub horizon: f64,
    pub dt: f64,
    pub seed: u64,
    #[serde(default = "yes")]
    pub store_increments: bool,
    #[serde(default)]
    pub grid: Option<GridSpec>,
    pub t_eval: Vec<f64>,
    #[serde(default)]
    pub eps_grid: EpsGrid,
    #[serde(default)]
    pub params: ParamSelection,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Hölder exponent of the test functions in the modulus estimate.
    #[serde(default = "default_rho")]
    pub rho: f64,
    /// Moment order reported across replications.
    #[serde(default = "default_q")]
    pub moment_q: f64,
    #[serde(default)]
    pub quantities: Quantities,
    #[serde(default)]
    pub emergence: EmergenceSpec,
    #[serde(default)]
    pub modulus: ModulusSpec,
}

impl ScenarioConfig {
    /// Desk-scale defaults around a coefficient family.
    pub fn desk(family: FamilySpec) -> Self {
        Self {
            family,
            n: 2000,
            x0: None,
            horizon: 1.0,
            dt: 2f64.powi(-12),
            seed: 0,
            store_increments: true,
            grid: None,
            t_eval: vec![1.0],
            eps_grid: EpsGrid::default(),
            params: ParamSelection::default(),
            replications: 32,
            output_dir: None,
            rho: default_rho(),
            moment_q: default_q(),
            quantities: Quantities::default(),
            emergence: EmergenceSpec::default(),
            modulus: ModulusSpec::default(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn d(&self) -> usize {
        self.family.d
    }

    pub fn validate(&self) -> Result<()> {
        let coeffs = CoefficientSet::from_family(&self.family)?;
        let plan = self.plan_with(coeffs, self.n, self.seed)?;
        plan.steps()?;
        self.grid().check()?;
        if self.t_eval.is_empty() {
            return Err(Error::Config("t_eval must not be empty".into()));
        }
        for &t in &self.t_eval {
            if !(t > 0.0 && t <= self.horizon) {
                return Err(Error::Config(format!("evaluation time {t} outside (0, T]")));
            }
        }
        let g = self.eps_grid;
        if !(g.eps0 > 0.0 && g.alpha > 0.0) {
            return Err(Error::Config("eps_grid needs eps0 > 0 and alpha > 0".into()));
        }
        if self.replications == 0 {
            return Err(Error::Config("replications must be at least 1".into()));
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::Config(format!("rho = {} outside (0, 1)", self.rho)));
        }
        if !(self.moment_q >= 1.0) {
            return Err(Error::Config("moment_q must be at least 1".into()));
        }
        if let Some(e) = self.emergence.fixed_eps {
            if !(e > 0.0) {
                return Err(Error::Config("fixed_eps must be positive".into()));
            }
        }
        let m = self.modulus;
        if !(m.eps_ref >= 0.0 && m.h0 > 0.0) {
            return Err(Error::Config("modulus needs eps_ref >= 0 and h0 > 0".into()));
        }
        Ok(())
    }

    pub fn x0(&self) -> Vec<f64> {
        self.x0.clone().unwrap_or_else(|| vec![0.0; self.d()])
    }

    pub fn grid(&self) -> GridSpec {
        self.grid.unwrap_or(GridSpec {
            d: self.d(),
            half_width: 12.0,
            points: 4096,
        })
    }

    /// Copy with every defaulted field written out.
    pub fn resolved(&self) -> Self {
        Self {
            x0: Some(self.x0()),
            grid: Some(self.grid()),
            ..self.clone()
        }
    }

    fn plan_with(&self, coeffs: CoefficientSet, n: usize, seed: u64) -> Result<SimulationPlan> {
        let mut p = SimulationPlan::new(coeffs, n, self.x0(), self.horizon, self.dt, seed);
        p.store_increments = self.store_increments;
        Ok(p)
    }

    /// Plan for replication `rep`, seeded with `seed + rep`.
    pub fn plan(&self, rep: usize) -> Result<SimulationPlan> {
        self.plan_for(self.n, rep)
    }

    pub fn plan_for(&self, n: usize, rep: usize) -> Result<SimulationPlan> {
        let coeffs = CoefficientSet::from_family(&self.family)?;
        self.plan_with(coeffs, n, self.seed.wrapping_add(rep as u64))
    }

    pub fn parameters(&self) -> Result<ParameterChoice> {
        let beta = CoefficientSet::from_family(&self.family)?.declared().beta;
        match self.params {
            ParamSelection::Auto(_) => solve_parameters(self.d(), beta),
            ParamSelection::Exponents { r_conj, s } => ParameterChoice::from_exponents(self.d(), beta, r_conj, s),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> ScenarioConfig {
        ScenarioConfig::desk(FamilySpec::new("state_holder", 1).with("beta", 1.0))
    }

    #[test]
    fn json_round_trip_and_defaults() {
        let c = base();
        let back = ScenarioConfig::from_json(&c.to_json().unwrap()).unwrap();
        assert_eq!(back, c);
        let minimal = r#"{"family": {"name": "constant"}, "n": 10, "horizon": 1.0,
                          "dt": 0.125, "seed": 3, "t_eval": [1.0]}"#;
        let m = ScenarioConfig::from_json(minimal).unwrap();
        assert_eq!(m.rho, 0.9);
        assert_eq!(m.replications, 32);
        assert_eq!(m.params, ParamSelection::Auto(AutoKeyword::Auto));
        assert_eq!(m.grid().points, 4096);
        let r = m.resolved();
        assert_eq!(r.x0, Some(vec![0.0]));
    }

    #[test]
    fn explicit_exponents_parse() {
        let text = r#"{"family": {"name": "constant"}, "n": 10, "horizon": 1.0, "dt": 0.125,
                       "seed": 3, "t_eval": [1.0], "params": {"r_conj": 10.0, "s": 1.0}}"#;
        let c = ScenarioConfig::from_json(text).unwrap();
        let p = c.parameters().unwrap();
        assert!((p.gamma - 0.55).abs() < 1e-15);
    }

    #[test]
    fn invalid_configs() {
        let mut c = base();
        c.t_eval = vec![1.5];
        assert!(c.validate().is_err());
        let mut c = base();
        c.family.name = "nope".into();
        assert!(c.validate().is_err());
        let mut c = base();
        c.dt = 0.3;
        assert!(c.validate().is_err());
        assert!(ScenarioConfig::from_json(r#"{"n": 1, "bogus": 2}"#).is_err());
    }

    #[test]
    fn eps_grid_respects_time() {
        let g = EpsGrid::default();
        assert_eq!(g.at(0.25)[0], 0.25);
        assert_eq!(g.at(2.0)[0], 1.0);
        assert!(g.at(0.5).iter().all(|e| *e <= 0.5));
    }
}
