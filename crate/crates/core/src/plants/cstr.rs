//! Isothermal van der Vusse CSTR:
//!
//! ```text
//!     dcA/dt = F/V (cAi - cA) - k1 cA - k3 cA^2
//!     dcB/dt = -F/V cB + k1 cA - k2 cB
//! ```
//!
//! with inputs `u = (F, cAi)` and outputs `y = (cA, cB)`.

use nalgebra::{DMatrix, DVector, Matrix2};
use serde::{Deserialize, Serialize};

use crate::error::{OfoError, Result};
use crate::model::{ConstraintSet, Plant};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CstrParams {
    /// Reactor volume, l.
    pub v: f64,
    /// 1/min.
    pub k1: f64,
    /// 1/min.
    pub k2: f64,
    /// l/(mol min).
    pub k3: f64,
    pub f_max: f64,
    pub c_ai_max: f64,
    pub c_a_max: f64,
    pub c_b_max: f64,
    pub f0: f64,
    pub c_ai0: f64,
    pub c_a0: f64,
    pub c_b0: f64,
    /// Control interval, min.
    pub dt: f64,
    /// Runge-Kutta substep, min.
    pub substep: f64,
}

impl Default for CstrParams {
    fn default() -> Self {
        Self {
            v: 700.0,
            k1: 5.0 / 6.0,
            k2: 5.0 / 3.0,
            k3: 1.0 / 6.0,
            f_max: 634.0,
            c_ai_max: 15.0,
            c_a_max: 10.0,
            c_b_max: 5.0,
            f0: 350.15,
            c_ai0: 10.15,
            c_a0: 2.82,
            c_b0: 1.08,
            dt: 1.0,
            substep: 0.01,
        }
    }
}

impl CstrParams {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.v, self.k1, self.k2, self.k3, self.f_max, self.c_ai_max, self.c_a_max, self.c_b_max, self.dt,
            self.substep,
        ];
        if all.iter().any(|v| !(*v > 0.0)) {
            return Err(OfoError::Config("CSTR parameters must be positive".into()));
        }
        if [self.f0, self.c_ai0, self.c_a0, self.c_b0].iter().any(|v| *v < 0.0) {
            return Err(OfoError::Config("CSTR initial values must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Right-hand side of the concentration ODE.
pub fn cstr_derivatives(p: &CstrParams, state: [f64; 2], u: [f64; 2]) -> [f64; 2] {
    let [ca, cb] = state;
    let [f, cai] = u;
    let dil = f / p.v;
    [
        dil * (cai - ca) - p.k1 * ca - p.k3 * ca * ca,
        -dil * cb + p.k1 * ca - p.k2 * cb,
    ]
}

/// Classical RK4 over `dt` with step `params.substep`, last step shortened
/// to land on `dt`.
pub fn cstr_integrate(params: &CstrParams, state: [f64; 2], u: [f64; 2], dt: f64) -> Result<[f64; 2]> {
    if !(dt > 0.0) {
        return Err(OfoError::Integration(format!("interval must be positive, got {dt}")));
    }
    let steps = (dt / params.substep - 1e-9).ceil().max(1.0) as usize;
    let h = dt / steps as f64;
    let mut x = state;
    let add = |x: [f64; 2], k: [f64; 2], s: f64| [x[0] + s * k[0], x[1] + s * k[1]];
    for _ in 0..steps {
        let k1 = cstr_derivatives(params, x, u);
        let k2 = cstr_derivatives(params, add(x, k1, 0.5 * h), u);
        let k3 = cstr_derivatives(params, add(x, k2, 0.5 * h), u);
        let k4 = cstr_derivatives(params, add(x, k3, h), u);
        for i in 0..2 {
            x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if !(x[0].is_finite() && x[1].is_finite()) {
            return Err(OfoError::Integration("state left the finite range".into()));
        }
    }
    Ok(x)
}

/// Steady state for constant inputs: the positive root of the `cA` balance,
/// then `cB = k1 cA / (F/V + k2)`.
pub fn cstr_steady_state(p: &CstrParams, u: [f64; 2]) -> [f64; 2] {
    let [f, cai] = u;
    let dil = f / p.v;
    let lin = dil + p.k1;
    let ca = (-lin + (lin * lin + 4.0 * p.k3 * dil * cai).sqrt()) / (2.0 * p.k3);
    [ca, p.k1 * ca / (dil + p.k2)]
}

/// `grad h = -(dG/dy)^-1 dG/du` from the steady-state residuals, evaluated at
/// the given (measured) outputs.
pub fn cstr_sensitivity(p: &CstrParams, u: [f64; 2], y: [f64; 2]) -> Result<Matrix2<f64>> {
    let [f, cai] = u;
    let [ca, cb] = y;
    let dil = f / p.v;
    let dg_dy = Matrix2::new(-dil - p.k1 - 2.0 * p.k3 * ca, 0.0, p.k1, -dil - p.k2);
    let dg_du = Matrix2::new((cai - ca) / p.v, dil, -cb / p.v, 0.0);
    let inv = dg_dy
        .try_inverse()
        .ok_or_else(|| OfoError::InvalidModel("singular steady-state jacobian".into()))?;
    Ok(-inv * dg_du)
}

/// Piecewise-constant setpoint given as `(time, value)` breakpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    pub breakpoints: Vec<(f64, f64)>,
}

impl Reference {
    pub fn constant(r: f64) -> Self {
        Self { breakpoints: vec![(0.0, r)] }
    }

    pub fn validate(&self) -> Result<()> {
        if self.breakpoints.is_empty() {
            return Err(OfoError::Config("reference needs at least one breakpoint".into()));
        }
        if self.breakpoints.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(OfoError::Config("reference breakpoints must be strictly increasing".into()));
        }
        Ok(())
    }

    /// Value of the last breakpoint at or before `t`.
    pub fn at(&self, t: f64) -> f64 {
        let mut r = self.breakpoints[0].1;
        for &(tb, v) in &self.breakpoints {
            if tb <= t + 1e-9 {
                r = v;
            } else {
                break;
            }
        }
        r
    }
}

/// CSTR under setpoint tracking of `cB`. Owns its ODE state and clock.
#[derive(Debug, Clone)]
pub struct CstrPlant {
    pub params: CstrParams,
    pub reference: Reference,
    state: [f64; 2],
    time: f64,
}

impl CstrPlant {
    pub fn new(params: CstrParams, reference: Reference) -> Self {
        Self {
            state: [params.c_a0, params.c_b0],
            params,
            reference,
            time: 0.0,
        }
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn state(&self) -> [f64; 2] {
        self.state
    }

    pub fn setpoint(&self) -> f64 {
        self.reference.at(self.time)
    }

    pub fn initial_inputs(&self) -> DVector<f64> {
        DVector::from_vec(vec![self.params.f0, self.params.c_ai0])
    }
}

impl Plant for CstrPlant {
    fn name(&self) -> &str {
        "cstr"
    }
    fn n_u(&self) -> usize {
        2
    }
    fn n_y(&self) -> usize {
        2
    }
    fn measure(&mut self, u: &DVector<f64>) -> Result<DVector<f64>> {
        self.state = cstr_integrate(&self.params, self.state, [u[0], u[1]], self.params.dt)?;
        self.time += self.params.dt;
        Ok(DVector::from_vec(self.state.to_vec()))
    }
    fn initial_output(&mut self, _u0: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(DVector::from_vec(self.state.to_vec()))
    }
    fn sensitivity(&self, u: &DVector<f64>, y: &DVector<f64>) -> DMatrix<f64> {
        match cstr_sensitivity(&self.params, [u[0], u[1]], [y[0], y[1]]) {
            Ok(m) => DMatrix::from_iterator(2, 2, m.iter().copied()),
            Err(_) => DMatrix::from_element(2, 2, f64::NAN),
        }
    }
    fn objective(&self, _u: &DVector<f64>, y: &DVector<f64>) -> f64 {
        let e = y[1] - self.setpoint();
        e * e
    }
    fn grad_u(&self, _u: &DVector<f64>, _y: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(2)
    }
    fn grad_y(&self, _u: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
        DVector::from_vec(vec![0.0, 2.0 * (y[1] - self.setpoint())])
    }
    fn tracked_output(&self) -> Option<usize> {
        Some(1)
    }
}

/// CSTR plant with input and output bounds from the parameter set.
pub fn cstr_plant(params: CstrParams, reference: Reference) -> Result<(CstrPlant, ConstraintSet)> {
    params.validate()?;
    reference.validate()?;
    let cons = ConstraintSet::boxes(
        &[0.0, 0.0],
        &[params.f_max, params.c_ai_max],
        &[0.0, 0.0],
        &[params.c_a_max, params.c_b_max],
    );
    Ok((CstrPlant::new(params, reference), cons))
}
