//! Scenario files.
//!
//! ```toml
//! name = "toy-fixed"
//! n_iters = 100
//! output_dir = "out/toy-fixed"
//! u0 = [-0.8, -0.5]
//!
//! [plant]
//! kind = "toy"
//!
//! [params]
//! mode = "fixed"
//! alpha_max = 0.01
//! t_max = 1000.0
//! s0 = [[1.0, 0.0], [0.0, 1.0]]
//! ```
//!
//! Matrices are row-major lists of rows.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{OfoError, Result};
use crate::model::{min_max, spd_project_check, sym_eigenvalues, AdaptationMode, ConstraintSet, OfoParams, Plant};
use crate::plants::{
    cstr_plant, gaslift_plant, rosenbrock_plant, toy_plant, CstrParams, GasLiftSurrogate, Reference,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PlantConfig {
    Toy,
    Rosenbrock,
    Gaslift(GasLiftSurrogate),
    Cstr(CstrParams),
}

impl PlantConfig {
    /// Time between two iterations; one for static plants.
    pub fn sample_time(&self) -> f64 {
        match self {
            Self::Cstr(p) => p.dt,
            _ => 1.0,
        }
    }

    pub fn n_u(&self) -> usize {
        match self {
            Self::Toy | Self::Rosenbrock | Self::Cstr(_) => 2,
            Self::Gaslift(g) => g.wells.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsConfig {
    #[serde(default = "default_mode")]
    pub mode: AdaptationMode,
    #[serde(default)]
    pub step_adaptation: bool,
    #[serde(default = "default_small")]
    pub alpha_min: f64,
    pub alpha_max: f64,
    /// Defaults to `alpha_max`.
    pub alpha0: Option<f64>,
    #[serde(default = "default_p_max")]
    pub p_max: f64,
    #[serde(default = "default_small")]
    pub t_min: f64,
    pub t_max: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    pub s0: Vec<Vec<f64>>,
}

fn default_mode() -> AdaptationMode {
    AdaptationMode::Fixed
}
fn default_small() -> f64 {
    1e-6
}
fn default_p_max() -> f64 {
    1.0
}
fn default_beta1() -> f64 {
    0.1
}
fn default_beta2() -> f64 {
    0.2
}
fn default_rel_tol() -> f64 {
    1e-3
}

impl ParamsConfig {
    pub fn to_params(&self) -> Result<OfoParams> {
        let s0 = matrix_from_rows(&self.s0)?;
        let mut p = OfoParams::new(s0, self.alpha_max, self.t_max);
        p.alpha_min = self.alpha_min;
        p.alpha0 = self.alpha0.unwrap_or(self.alpha_max);
        p.p_max = self.p_max;
        p.t_min = self.t_min;
        p.beta1 = self.beta1;
        p.beta2 = self.beta2;
        p.mode = self.mode;
        p.step_adaptation = self.step_adaptation;
        Ok(p)
    }
}

/// One manual-tuning experiment: fixed metric and fixed step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepCase {
    pub name: String,
    pub alpha: f64,
    pub s: Vec<Vec<f64>>,
}

/// Named override of the base parameters for comparisons.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Variant {
    pub name: String,
    pub mode: Option<AdaptationMode>,
    pub step_adaptation: Option<bool>,
    /// Sets both `alpha_max` and `alpha0`.
    pub alpha: Option<f64>,
    pub s0: Option<Vec<Vec<f64>>>,
}

/// Setpoint trajectory plus the error horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceConfig {
    pub breakpoints: Vec<(f64, f64)>,
    /// Number of records entering the tracking error, defaults to `n_iters`.
    pub horizon: Option<usize>,
}

impl ReferenceConfig {
    pub fn reference(&self) -> Reference {
        Reference {
            breakpoints: self.breakpoints.clone(),
        }
    }
}

/// How "iterations to tolerance" is measured in summaries. Without a
/// target the best objective found across the compared runs is used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToleranceConfig {
    pub target: Option<f64>,
    pub abs: Option<f64>,
    #[serde(default = "default_rel_tol")]
    pub rel: f64,
}

impl Default for ToleranceConfig {
    fn default() -> Self {
        Self {
            target: None,
            abs: None,
            rel: default_rel_tol(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub plant: PlantConfig,
    pub params: ParamsConfig,
    pub n_iters: usize,
    /// Defaults to the plant's nominal operating point where it has one.
    pub u0: Option<Vec<f64>>,
    pub reference: Option<ReferenceConfig>,
    #[serde(default)]
    pub sweep: Vec<SweepCase>,
    /// Also run the base parameters in a sweep, as the last row.
    #[serde(default)]
    pub sweep_include_params: bool,
    #[serde(default)]
    pub variants: Vec<Variant>,
    #[serde(default)]
    pub tolerance: ToleranceConfig,
    pub output_dir: PathBuf,
}

/// A plant instance ready to be driven by the controller.
pub type BoxedPlant = Box<dyn Plant + Send>;

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| OfoError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a scenario; a relative `output_dir` is resolved against the
    /// current directory, not the file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| OfoError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let n_u = self.plant.n_u();
        let params = self.params.to_params()?;
        params.validate()?;
        if params.n_u() != n_u {
            return Err(OfoError::Config(format!("S0 is {0}x{0}, plant has {n_u} inputs", params.n_u())));
        }
        if let Some(u0) = &self.u0 {
            if u0.len() != n_u {
                return Err(OfoError::Config(format!("u0 has {} entries, plant has {n_u} inputs", u0.len())));
            }
        }
        match (&self.plant, &self.reference) {
            (PlantConfig::Cstr(_), None) => {
                return Err(OfoError::Config("the cstr plant needs a reference".into()));
            }
            (PlantConfig::Cstr(_), Some(r)) => {
                r.reference().validate()?;
                if r.horizon.unwrap_or(self.n_iters) > self.n_iters {
                    return Err(OfoError::Config("error horizon exceeds n_iters".into()));
                }
            }
            (_, Some(_)) => {
                return Err(OfoError::Config("a reference is only meaningful for the cstr plant".into()));
            }
            (_, None) => {}
        }
        for case in &self.sweep {
            let s = matrix_from_rows(&case.s)?;
            if s.nrows() != n_u {
                return Err(OfoError::Config(format!("sweep case '{}' has a wrongly sized S", case.name)));
            }
            if !spd_project_check(&s, params.t_min) {
                return Err(OfoError::Config(format!("sweep case '{}' S is not positive definite", case.name)));
            }
            if !(case.alpha > 0.0) {
                return Err(OfoError::Config(format!("sweep case '{}' needs a positive alpha", case.name)));
            }
        }
        for v in &self.variants {
            self.variant_params(v)?.validate()?;
        }
        let mut names: Vec<&str> = self
            .sweep
            .iter()
            .map(|c| c.name.as_str())
            .chain(self.variants.iter().map(|v| v.name.as_str()))
            .collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(OfoError::Config("sweep case and variant names must be unique".into()));
        }
        Ok(())
    }

    pub fn params(&self) -> Result<OfoParams> {
        self.params.to_params()
    }

    pub fn variant_params(&self, v: &Variant) -> Result<OfoParams> {
        let mut p = self.params()?;
        if let Some(mode) = v.mode {
            p.mode = mode;
        }
        if let Some(step) = v.step_adaptation {
            p.step_adaptation = step;
        }
        if let Some(alpha) = v.alpha {
            p.alpha_max = alpha;
            p.alpha0 = alpha;
            p.alpha_min = p.alpha_min.min(alpha);
        }
        if let Some(s0) = &v.s0 {
            p.s0 = matrix_from_rows(s0)?;
        }
        Ok(p)
    }

    pub fn case_params(&self, case: &SweepCase) -> Result<OfoParams> {
        let mut p = self.params()?;
        p.mode = AdaptationMode::Fixed;
        p.step_adaptation = false;
        p.alpha_max = case.alpha;
        p.alpha0 = case.alpha;
        p.alpha_min = p.alpha_min.min(case.alpha);
        p.s0 = matrix_from_rows(&case.s)?;
        p.t_max = p.t_max.max(min_max(&sym_eigenvalues(&p.s0)).1);
        Ok(p)
    }

    /// Fresh plant, its constraints and the starting input.
    pub fn build_plant(&self) -> Result<(BoxedPlant, ConstraintSet, DVector<f64>)> {
        let (plant, cons, nominal): (BoxedPlant, ConstraintSet, Option<DVector<f64>>) = match &self.plant {
            PlantConfig::Toy => {
                let (p, c) = toy_plant();
                (Box::new(p), c, None)
            }
            PlantConfig::Rosenbrock => {
                let (p, c) = rosenbrock_plant();
                (Box::new(p), c, None)
            }
            PlantConfig::Gaslift(g) => {
                let (p, c) = gaslift_plant(g.clone())?;
                (Box::new(p), c, None)
            }
            PlantConfig::Cstr(params) => {
                let reference = self
                    .reference
                    .as_ref()
                    .ok_or_else(|| OfoError::Config("the cstr plant needs a reference".into()))?
                    .reference();
                let (p, c) = cstr_plant(*params, reference)?;
                let u0 = p.initial_inputs();
                (Box::new(p), c, Some(u0))
            }
        };
        let u0 = match (&self.u0, nominal) {
            (Some(u), _) => DVector::from_vec(u.clone()),
            (None, Some(u)) => u,
            (None, None) => return Err(OfoError::Config(format!("scenario '{}' needs u0", self.name))),
        };
        Ok((plant, cons, u0))
    }

    /// Tracking horizon when a reference is configured.
    pub fn horizon(&self) -> Option<usize> {
        self.reference.as_ref().map(|r| r.horizon.unwrap_or(self.n_iters))
    }
}

pub fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(OfoError::Config("matrix must be a non-empty square list of rows".into()));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}
