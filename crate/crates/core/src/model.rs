//! Problem data model shared by every other module.
//!
//! The controlled problem is
//!
//! ```text
//!     minimize    Phi(u, y)
//!     subject to  y = h(u),  A u <= b,  C y <= d
//! ```
//!
//! where only the measurement `y` and the input-output sensitivity `grad h` are
//! available to the controller.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{OfoError, Result};

/// Symmetry tolerance for metrics.
pub const SYM_TOL: f64 = 1e-10;
/// Slack on eigenvalue bounds of the metric.
pub const EIG_TOL: f64 = 1e-8;

/// A controlled system.
///
/// `measure` may carry internal state (a dynamic plant advances its
/// simulation clock on every call), so a plant instance belongs to exactly one
/// run. The remaining methods are pure.
pub trait Plant {
    fn name(&self) -> &str;
    fn n_u(&self) -> usize;
    fn n_y(&self) -> usize;

    /// Applies `u` and returns the measured output.
    fn measure(&mut self, u: &DVector<f64>) -> Result<DVector<f64>>;

    /// Output available before the first control move. Static plants
    /// evaluate their map; dynamic plants report their current state.
    fn initial_output(&mut self, u0: &DVector<f64>) -> Result<DVector<f64>> {
        self.measure(u0)
    }

    /// Jacobian of the output map, `n_y x n_u`.
    fn sensitivity(&self, u: &DVector<f64>, y: &DVector<f64>) -> DMatrix<f64>;

    fn objective(&self, u: &DVector<f64>, y: &DVector<f64>) -> f64;
    fn grad_u(&self, u: &DVector<f64>, y: &DVector<f64>) -> DVector<f64>;
    fn grad_y(&self, u: &DVector<f64>, y: &DVector<f64>) -> DVector<f64>;

    /// Output channel followed by setpoint tracking, if any.
    fn tracked_output(&self) -> Option<usize> {
        None
    }
}

/// Affine input and output constraints `A u <= b`, `C y <= d`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSet {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub c: DMatrix<f64>,
    pub d: DVector<f64>,
}

impl ConstraintSet {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>, c: DMatrix<f64>, d: DVector<f64>) -> Result<Self> {
        if a.nrows() != b.len() {
            return Err(OfoError::Dimension(format!(
                "A has {} rows but b has {} entries",
                a.nrows(),
                b.len()
            )));
        }
        if c.nrows() != d.len() {
            return Err(OfoError::Dimension(format!(
                "C has {} rows but d has {} entries",
                c.nrows(),
                d.len()
            )));
        }
        Ok(Self { a, b, c, d })
    }

    /// Box constraints `lo <= u <= hi`, `ylo <= y <= yhi`.
    pub fn boxes(u_lo: &[f64], u_hi: &[f64], y_lo: &[f64], y_hi: &[f64]) -> Self {
        let (a, b) = box_rows(u_lo, u_hi);
        let (c, d) = box_rows(y_lo, y_hi);
        Self { a, b, c, d }
    }

    /// Appends one input row `row . u <= rhs`.
    pub fn with_input_row(mut self, row: &[f64], rhs: f64) -> Self {
        let n = self.a.nrows();
        self.a = self.a.insert_row(n, 0.0);
        for (j, v) in row.iter().enumerate() {
            self.a[(n, j)] = *v;
        }
        self.b = self.b.push(rhs);
        self
    }

    pub fn n_u(&self) -> usize {
        self.a.ncols()
    }

    pub fn n_y(&self) -> usize {
        self.c.ncols()
    }

    pub fn check_dims(&self, n_u: usize, n_y: usize) -> Result<()> {
        if self.a.ncols() != n_u || self.c.ncols() != n_y {
            return Err(OfoError::Dimension(format!(
                "constraints are {}x{} / {}x{}, plant has n_u={n_u}, n_y={n_y}",
                self.a.nrows(),
                self.a.ncols(),
                self.c.nrows(),
                self.c.ncols()
            )));
        }
        Ok(())
    }

    /// Largest violation of `A u <= b` (zero when feasible).
    pub fn input_violation(&self, u: &DVector<f64>) -> f64 {
        max_violation(&self.a, &self.b, u)
    }

    pub fn output_violation(&self, y: &DVector<f64>) -> f64 {
        max_violation(&self.c, &self.d, y)
    }
}

fn max_violation(m: &DMatrix<f64>, rhs: &DVector<f64>, x: &DVector<f64>) -> f64 {
    (m * x - rhs).iter().fold(0.0_f64, |acc, v| acc.max(*v))
}

fn box_rows(lo: &[f64], hi: &[f64]) -> (DMatrix<f64>, DVector<f64>) {
    assert_eq!(lo.len(), hi.len());
    let n = lo.len();
    let mut m = DMatrix::zeros(2 * n, n);
    let mut rhs = DVector::zeros(2 * n);
    for i in 0..n {
        m[(i, i)] = 1.0;
        rhs[i] = hi[i];
        m[(n + i, i)] = -1.0;
        rhs[n + i] = -lo[i];
    }
    (m, rhs)
}

/// How the scaling matrix is adapted between iterations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdaptationMode {
    Fixed,
    HeuristicDiagonal,
    SdpFull,
    SdpDiagonal,
}

impl AdaptationMode {
    pub fn is_diagonal(self) -> bool {
        matches!(self, Self::HeuristicDiagonal | Self::SdpDiagonal)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Fixed => "fixed",
            Self::HeuristicDiagonal => "heuristic-diagonal",
            Self::SdpFull => "sdp-full",
            Self::SdpDiagonal => "sdp-diagonal",
        }
    }
}

impl fmt::Display for AdaptationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AdaptationMode {
    type Err = OfoError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed" => Ok(Self::Fixed),
            "heuristic-diagonal" | "heuristic" => Ok(Self::HeuristicDiagonal),
            "sdp-full" | "sdp" => Ok(Self::SdpFull),
            "sdp-diagonal" => Ok(Self::SdpDiagonal),
            other => Err(OfoError::InvalidParams(format!("unknown adaptation mode '{other}'"))),
        }
    }
}

/// All controller tunables.
#[derive(Debug, Clone, PartialEq)]
pub struct OfoParams {
    pub alpha_min: f64,
    pub alpha_max: f64,
    pub alpha0: f64,
    pub p_max: f64,
    pub t_min: f64,
    pub t_max: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub s0: DMatrix<f64>,
    pub mode: AdaptationMode,
    pub step_adaptation: bool,
}

impl OfoParams {
    /// Defaults with `alpha_min = t_min = 1e-6` and the given metric.
    pub fn new(s0: DMatrix<f64>, alpha_max: f64, t_max: f64) -> Self {
        Self {
            alpha_min: 1e-6,
            alpha_max,
            alpha0: alpha_max,
            p_max: 1.0,
            t_min: 1e-6,
            t_max,
            beta1: 0.1,
            beta2: 0.2,
            s0,
            mode: AdaptationMode::Fixed,
            step_adaptation: false,
        }
    }

    pub fn n_u(&self) -> usize {
        self.s0.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(OfoError::InvalidParams(msg));
        if !(self.alpha_min > 0.0) {
            return bad(format!("alpha_min must be positive, got {}", self.alpha_min));
        }
        if !(self.alpha_max >= self.alpha_min) {
            return bad(format!("alpha_max {} < alpha_min {}", self.alpha_max, self.alpha_min));
        }
        if !(self.alpha0 >= self.alpha_min && self.alpha0 <= self.alpha_max) {
            return bad(format!(
                "alpha0 {} outside [{}, {}]",
                self.alpha0, self.alpha_min, self.alpha_max
            ));
        }
        if !(self.p_max > 0.0) {
            return bad(format!("p_max must be positive, got {}", self.p_max));
        }
        if !(self.t_min > 0.0 && self.t_max >= self.t_min) {
            return bad(format!("need 0 < t_min <= t_max, got [{}, {}]", self.t_min, self.t_max));
        }
        for (name, beta) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(beta > 0.0 && beta < 1.0) {
                return bad(format!("{name} must lie in (0, 1), got {beta}"));
            }
        }
        if !self.s0.is_square() {
            return bad("S0 must be square".into());
        }
        if !is_symmetric(&self.s0) {
            return bad("S0 must be symmetric".into());
        }
        let eigs = sym_eigenvalues(&self.s0);
        let (lo, hi) = min_max(&eigs);
        if lo < self.t_min - EIG_TOL || hi > self.t_max + EIG_TOL {
            return bad(format!(
                "S0 eigenvalues [{lo}, {hi}] outside [{}, {}]",
                self.t_min, self.t_max
            ));
        }
        if self.mode.is_diagonal() && !is_diagonal(&self.s0) {
            return bad(format!("mode {} requires a diagonal S0", self.mode));
        }
        Ok(())
    }
}

/// Entries of `dPhi/dS`. Diagonal modes populate only the diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalingSensitivity {
    pub d: DMatrix<f64>,
}

impl ScalingSensitivity {
    pub fn zeros(n: usize) -> Self {
        Self { d: DMatrix::zeros(n, n) }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.d.norm()
    }

    pub fn diagonal(&self) -> DVector<f64> {
        self.d.diagonal()
    }

    pub fn is_finite(&self) -> bool {
        self.d.iter().all(|v| v.is_finite())
    }
}

/// Controller memory carried between iterations.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerState {
    pub k: usize,
    pub u: DVector<f64>,
    pub y: DVector<f64>,
    /// Last QP solution, zero before the first iteration.
    pub w: DVector<f64>,
    pub alpha: f64,
    /// Metric used for the most recent QP.
    pub s: DMatrix<f64>,
    /// Reduced gradient at `(u, y)`.
    pub reduced_grad: DVector<f64>,
    pub dphi_ds: Option<ScalingSensitivity>,
    pub active_inputs: Vec<usize>,
    pub active_outputs: Vec<usize>,
}

impl ControllerState {
    pub fn initial(u0: DVector<f64>, y0: DVector<f64>, params: &OfoParams) -> Self {
        let n_u = u0.len();
        Self {
            k: 0,
            w: DVector::zeros(n_u),
            reduced_grad: DVector::zeros(n_u),
            u: u0,
            y: y0,
            alpha: params.alpha0,
            s: params.s0.clone(),
            dphi_ds: None,
            active_inputs: Vec::new(),
            active_outputs: Vec::new(),
        }
    }
}

/// `dPhi/du^T + grad_h^T dPhi/dy^T`, the gradient of `Phi(u, h(u))`.
pub fn reduced_gradient<P: Plant + ?Sized>(
    plant: &P,
    u: &DVector<f64>,
    y: &DVector<f64>,
) -> Result<DVector<f64>> {
    if u.len() != plant.n_u() || y.len() != plant.n_y() {
        return Err(OfoError::Dimension(format!(
            "u has {} entries, y has {}; plant expects {} and {}",
            u.len(),
            y.len(),
            plant.n_u(),
            plant.n_y()
        )));
    }
    let gu = plant.grad_u(u, y);
    let gy = plant.grad_y(u, y);
    let jac = plant.sensitivity(u, y);
    compose_reduced_gradient(&gu, &gy, &jac)
}

pub(crate) fn compose_reduced_gradient(
    gu: &DVector<f64>,
    gy: &DVector<f64>,
    jac: &DMatrix<f64>,
) -> Result<DVector<f64>> {
    if jac.nrows() != gy.len() || jac.ncols() != gu.len() {
        return Err(OfoError::Dimension(format!(
            "sensitivity is {}x{}, expected {}x{}",
            jac.nrows(),
            jac.ncols(),
            gy.len(),
            gu.len()
        )));
    }
    let g = gu + jac.transpose() * gy;
    if g.iter().any(|v| !v.is_finite()) {
        return Err(OfoError::InvalidModel("non-finite gradient entry".into()));
    }
    Ok(g)
}

/// True iff `s` is symmetric within `1e-10` and `lambda_min(s) >= t_min`.
pub fn spd_project_check(s: &DMatrix<f64>, t_min: f64) -> bool {
    if !s.is_square() || !is_symmetric(s) {
        return false;
    }
    let eigs = sym_eigenvalues(s);
    min_max(&eigs).0 >= t_min
}

pub fn is_symmetric(s: &DMatrix<f64>) -> bool {
    s.is_square() && (s - s.transpose()).amax() <= SYM_TOL
}

pub fn is_diagonal(s: &DMatrix<f64>) -> bool {
    let n = s.nrows();
    (0..n).all(|i| (0..n).all(|j| i == j || s[(i, j)] == 0.0))
}

/// Ascending eigenvalues of the symmetric part of `s`.
pub fn sym_eigenvalues(s: &DMatrix<f64>) -> DVector<f64> {
    let sym = symmetrize(s);
    let mut v: Vec<f64> = SymmetricEigen::new(sym).eigenvalues.iter().copied().collect();
    v.sort_by(|a, b| a.total_cmp(b));
    DVector::from_vec(v)
}

pub fn symmetrize(s: &DMatrix<f64>) -> DMatrix<f64> {
    (s + s.transpose()) * 0.5
}

pub fn min_max(v: &DVector<f64>) -> (f64, f64) {
    v.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(*x), hi.max(*x)))
}

/// Finite-difference step `1e-6 * max(1, |x|)`.
pub fn fd_step(x: f64) -> f64 {
    1e-6 * x.abs().max(1.0)
}

/// Central-difference gradient of a scalar function. Test aid only; plants
/// supply analytic gradients.
pub fn fd_gradient(f: impl Fn(&DVector<f64>) -> f64, x: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(x.len(), |i, _| {
        let h = fd_step(x[i]);
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[i] += h;
        xm[i] -= h;
        (f(&xp) - f(&xm)) / (2.0 * h)
    })
}

/// Central-difference Jacobian of a vector function.
pub fn fd_jacobian(f: impl Fn(&DVector<f64>) -> DVector<f64>, x: &DVector<f64>) -> DMatrix<f64> {
    let f0 = f(x);
    let mut jac = DMatrix::zeros(f0.len(), x.len());
    for j in 0..x.len() {
        let h = fd_step(x[j]);
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += h;
        xm[j] -= h;
        let col = (f(&xp) - f(&xm)) / (2.0 * h);
        jac.set_column(j, &col);
    }
    jac
}
