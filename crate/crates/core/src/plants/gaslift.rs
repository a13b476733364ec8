use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{OfoError, Result};
use crate::model::{ConstraintSet, Plant};

/// Saturating well characteristic `f(u) = a u / (b + u)`: oil rate as a
/// function of injected gas.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WellCurve {
    pub a: f64,
    pub b: f64,
    pub u_min: f64,
    pub u_max: f64,
}

impl WellCurve {
    pub fn rate(&self, u: f64) -> f64 {
        self.a * u / (self.b + u)
    }

    pub fn slope(&self, u: f64) -> f64 {
        self.a * self.b / ((self.b + u) * (self.b + u))
    }
}

/// Five wells feeding two platforms under a shared gas budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GasLiftSurrogate {
    pub wells: Vec<WellCurve>,
    /// Platform (output index) each well feeds.
    pub platforms: Vec<usize>,
    /// Total injection limit, Sm3/day.
    pub gas_budget: f64,
    /// Upper bound on each platform's production.
    pub y_max: Vec<f64>,
}

impl Default for GasLiftSurrogate {
    fn default() -> Self {
        let well = |a, b| WellCurve { a, b, u_min: 0.0, u_max: 10000.0 };
        Self {
            wells: vec![
                well(900.0, 4000.0),
                well(1350.0, 9000.0),
                well(750.0, 3000.0),
                well(1050.0, 6000.0),
                well(1200.0, 8000.0),
            ],
            platforms: vec![0, 0, 1, 1, 1],
            gas_budget: 26000.0,
            y_max: vec![20000.0, 20000.0],
        }
    }
}

impl GasLiftSurrogate {
    pub fn validate(&self) -> Result<()> {
        if self.wells.len() != self.platforms.len() {
            return Err(OfoError::Config("one platform index per well required".into()));
        }
        if self.platforms.iter().any(|&p| p >= self.y_max.len()) {
            return Err(OfoError::Config("platform index out of range".into()));
        }
        for (i, w) in self.wells.iter().enumerate() {
            if !(w.a > 0.0 && w.b > 0.0 && w.u_min >= 0.0 && w.u_max > w.u_min) {
                return Err(OfoError::Config(format!("well {} has invalid curve parameters", i + 1)));
            }
        }
        Ok(())
    }

    pub fn output(&self, u: &DVector<f64>) -> DVector<f64> {
        let mut y = DVector::zeros(self.y_max.len());
        for ((w, &p), ui) in self.wells.iter().zip(&self.platforms).zip(u.iter()) {
            y[p] += w.rate(*ui);
        }
        y
    }
}

#[derive(Debug, Clone)]
pub struct GasLiftPlant {
    pub config: GasLiftSurrogate,
}

impl Plant for GasLiftPlant {
    fn name(&self) -> &str {
        "gaslift"
    }
    fn n_u(&self) -> usize {
        self.config.wells.len()
    }
    fn n_y(&self) -> usize {
        self.config.y_max.len()
    }
    fn measure(&mut self, u: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.config.output(u))
    }
    fn sensitivity(&self, u: &DVector<f64>, _y: &DVector<f64>) -> DMatrix<f64> {
        let mut jac = DMatrix::zeros(self.n_y(), self.n_u());
        for (i, (w, &p)) in self.config.wells.iter().zip(&self.config.platforms).enumerate() {
            jac[(p, i)] = w.slope(u[i]);
        }
        jac
    }
    fn objective(&self, _u: &DVector<f64>, y: &DVector<f64>) -> f64 {
        -y.sum()
    }
    fn grad_u(&self, u: &DVector<f64>, _y: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(u.len())
    }
    fn grad_y(&self, _u: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
        DVector::from_element(y.len(), -1.0)
    }
}

/// Gas-lift plant with per-well bounds, platform bounds and the coupling row
/// `sum(u) <= gas_budget` appended last to `A`.
pub fn gaslift_plant(config: GasLiftSurrogate) -> Result<(GasLiftPlant, ConstraintSet)> {
    config.validate()?;
    let lo: Vec<f64> = config.wells.iter().map(|w| w.u_min).collect();
    let hi: Vec<f64> = config.wells.iter().map(|w| w.u_max).collect();
    let y_lo = vec![0.0; config.y_max.len()];
    let cons = ConstraintSet::boxes(&lo, &hi, &y_lo, &config.y_max)
        .with_input_row(&vec![1.0; config.wells.len()], config.gas_budget);
    Ok((GasLiftPlant { config }, cons))
}
