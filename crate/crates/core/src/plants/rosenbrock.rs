use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::model::{ConstraintSet, Plant};

/// Rosenbrock valley in feedback form: `y = (10 (u2 - u1^2), 1 - u1)`,
/// `Phi = y1^2 + y2 (1 - u1)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct RosenbrockPlant;

impl RosenbrockPlant {
    pub fn output(u: &DVector<f64>) -> DVector<f64> {
        DVector::from_vec(vec![10.0 * (u[1] - u[0] * u[0]), 1.0 - u[0]])
    }
}

impl Plant for RosenbrockPlant {
    fn name(&self) -> &str {
        "rosenbrock"
    }
    fn n_u(&self) -> usize {
        2
    }
    fn n_y(&self) -> usize {
        2
    }
    fn measure(&mut self, u: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(Self::output(u))
    }
    fn sensitivity(&self, u: &DVector<f64>, _y: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[-20.0 * u[0], 10.0, -1.0, 0.0])
    }
    fn objective(&self, u: &DVector<f64>, y: &DVector<f64>) -> f64 {
        y[0] * y[0] + y[1] * (1.0 - u[0])
    }
    fn grad_u(&self, _u: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
        DVector::from_vec(vec![-y[1], 0.0])
    }
    fn grad_y(&self, u: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
        DVector::from_vec(vec![2.0 * y[0], 1.0 - u[0]])
    }
}

/// `u1 in [-1, 1]`, `u2 in [-1, 0.75]`, `y in [-5, 5]^2`.
pub fn rosenbrock_plant() -> (RosenbrockPlant, ConstraintSet) {
    (
        RosenbrockPlant,
        ConstraintSet::boxes(&[-1.0, -1.0], &[1.0, 0.75], &[-5.0, -5.0], &[5.0, 5.0]),
    )
}
