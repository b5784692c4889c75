//! Stage-wise strictly convex QPs: quadratic cost, dynamics equalities,
//! one-sided linear inequalities. These are the SQP subproblems of the
//! tracking controller; slack variables enter as extra per-stage inputs built
//! by the OCP assembler.

pub mod ipm;

pub use ipm::{QpSettings, QpSolver};

use nalgebra::{DMatrix, DVector};

/// One stage of the QP. The decision variables are (x_k, u_k); dynamics
/// couple to stage k+1 (empty on the terminal stage). Inequalities read
/// cx * x + cu * u <= ub.
#[derive(Debug, Clone)]
pub struct QpStage {
    pub q: DMatrix<f64>,
    /// Cross term, nu x nx.
    pub s: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub q_lin: DVector<f64>,
    pub r_lin: DVector<f64>,
    /// x_{k+1} = a x + b u + c (rows = nx of the next stage; 0 rows on the
    /// terminal stage).
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DVector<f64>,
    pub cx: DMatrix<f64>,
    pub cu: DMatrix<f64>,
    pub ub: DVector<f64>,
}

impl QpStage {
    pub fn nx(&self) -> usize {
        self.q.nrows()
    }

    pub fn nu(&self) -> usize {
        self.r.nrows()
    }

    pub fn nc(&self) -> usize {
        self.ub.len()
    }
}

/// Multi-stage QP. When `x0` is set the first state is pinned to it
/// (initial-value embedding); otherwise it is a free variable.
#[derive(Debug, Clone)]
pub struct QpProblem {
    pub stages: Vec<QpStage>,
    pub x0: Option<DVector<f64>>,
}

impl QpProblem {
    pub fn total_inequalities(&self) -> usize {
        self.stages.iter().map(|s| s.nc()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Converged,
    MaxIterations,
    NumericalFailure,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub eq_feasibility: f64,
    pub ineq_feasibility: f64,
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.eq_feasibility)
            .max(self.ineq_feasibility)
            .max(self.complementarity)
    }
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub xs: Vec<DVector<f64>>,
    pub us: Vec<DVector<f64>>,
    /// Inequality duals per stage.
    pub lam: Vec<DVector<f64>>,
    /// Inequality slacks per stage.
    pub slacks: Vec<DVector<f64>>,
    /// Dynamics duals (costates) per stage.
    pub nu: Vec<DVector<f64>>,
    pub status: QpStatus,
    pub iterations: usize,
    pub kkt: KktResiduals,
}

impl QpSolution {
    pub fn degraded(&self) -> bool {
        self.status != QpStatus::Converged
    }
}
