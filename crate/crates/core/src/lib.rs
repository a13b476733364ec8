//! Online feedback optimization with scaled projected gradient descent and
//! online tuning of the scaling matrix and the step size.

pub mod controller;
pub mod error;
pub mod harness;
pub mod model;
pub mod plants;
pub mod qp;
pub mod scaling;
pub mod sensitivity;
pub mod step;

pub use controller::{ofo_iteration, run, IterationRecord, RunTrace, Termination};
pub use error::{OfoError, Result};
pub use model::{AdaptationMode, ConstraintSet, ControllerState, OfoParams, Plant, ScalingSensitivity};
