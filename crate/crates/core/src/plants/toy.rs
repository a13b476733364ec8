use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::model::{ConstraintSet, Plant};

/// Two inputs, one output: `y = u2^3 + u1 - u2 + 0.5`,
/// `Phi = 1.5 u1^2 + u2^2 - u2^3 + u1 u2 - 3 u2 + 1.5 + y`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ToyPlant;

impl ToyPlant {
    pub fn output(u: &DVector<f64>) -> f64 {
        u[1].powi(3) + u[0] - u[1] + 0.5
    }
}

impl Plant for ToyPlant {
    fn name(&self) -> &str {
        "toy"
    }
    fn n_u(&self) -> usize {
        2
    }
    fn n_y(&self) -> usize {
        1
    }
    fn measure(&mut self, u: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(DVector::from_element(1, Self::output(u)))
    }
    fn sensitivity(&self, u: &DVector<f64>, _y: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_row_slice(1, 2, &[1.0, 3.0 * u[1] * u[1] - 1.0])
    }
    fn objective(&self, u: &DVector<f64>, y: &DVector<f64>) -> f64 {
        let (u1, u2) = (u[0], u[1]);
        1.5 * u1 * u1 + u2 * u2 - u2.powi(3) + u1 * u2 - 3.0 * u2 + 1.5 + y[0]
    }
    fn grad_u(&self, u: &DVector<f64>, _y: &DVector<f64>) -> DVector<f64> {
        let (u1, u2) = (u[0], u[1]);
        DVector::from_vec(vec![3.0 * u1 + u2, 2.0 * u2 - 3.0 * u2 * u2 + u1 - 3.0])
    }
    fn grad_y(&self, _u: &DVector<f64>, _y: &DVector<f64>) -> DVector<f64> {
        DVector::from_element(1, 1.0)
    }
}

/// Toy plant with `u in [-1, 1]^2`, `y in [0, 1]`.
pub fn toy_plant() -> (ToyPlant, ConstraintSet) {
    (ToyPlant, ConstraintSet::boxes(&[-1.0, -1.0], &[1.0, 1.0], &[0.0], &[1.0]))
}
