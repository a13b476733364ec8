//! The case-study systems.

mod cstr;
mod gaslift;
mod rosenbrock;
mod toy;

pub use cstr::{
    cstr_derivatives, cstr_integrate, cstr_plant, cstr_sensitivity, cstr_steady_state, CstrParams, CstrPlant,
    Reference,
};
pub use gaslift::{gaslift_plant, GasLiftPlant, GasLiftSurrogate, WellCurve};
pub use rosenbrock::{rosenbrock_plant, RosenbrockPlant};
pub use toy::{toy_plant, ToyPlant};
