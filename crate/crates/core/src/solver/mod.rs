//! Embedded LP and MILP backend.
//!
//! [`solve_lp`] runs a dense bounded-variable revised simplex and reports row
//! duals and reduced costs. [`solve_milp`] wraps it in a best-bound
//! branch-and-bound. Both are deterministic: the same model always produces
//! bit-identical output.

mod branch;
mod model;
mod simplex;

pub use model::{LinearModel, Row, RowSense, Sense, Var};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("non-finite data in {0}")]
    NonFinite(String),
    #[error("variable x{var} has lower bound {lower} above upper bound {upper}")]
    InconsistentBounds { var: usize, lower: f64, upper: f64 },
    #[error("malformed model: {0}")]
    Malformed(String),
    #[error("integrality flags are not allowed in an LP solve")]
    IntegerInLp,
    #[error("integer variable x{0} is not binary")]
    NonBinaryInteger(usize),
    #[error("basis became numerically singular")]
    SingularBasis,
    #[error("simplex iteration limit reached after {0} iterations")]
    IterationLimit(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Optimal,
    Infeasible,
    Unbounded,
    /// Node limit hit; `x` holds the incumbent (if any) and `bound` the best bound.
    GapNotClosed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    pub pivot_tol: f64,
    pub feasibility_tol: f64,
    pub optimality_tol: f64,
    pub integrality_tol: f64,
    pub relative_gap: f64,
    pub node_limit: usize,
    pub iteration_limit: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            pivot_tol: 1e-9,
            feasibility_tol: 1e-9,
            optimality_tol: 1e-9,
            integrality_tol: 1e-6,
            relative_gap: 1e-6,
            node_limit: 200_000,
            iteration_limit: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub status: Status,
    pub x: Vec<f64>,
    /// d(objective)/d(rhs) for every row. Empty for MILP solves.
    pub row_duals: Vec<f64>,
    /// Reduced costs of the structural variables. Empty for MILP solves.
    pub reduced_costs: Vec<f64>,
    pub objective: f64,
    /// Best bound (MILP); equals `objective` for LPs.
    pub bound: f64,
    pub nodes: usize,
    pub branches: usize,
    pub iterations: usize,
}

impl Solution {
    pub fn is_optimal(&self) -> bool {
        self.status == Status::Optimal
    }
}

/// Solves a continuous linear program.
pub fn solve_lp(model: &LinearModel, opts: &SolverOptions) -> Result<Solution, SolverError> {
    model.validate()?;
    if model.has_integers() {
        return Err(SolverError::IntegerInLp);
    }
    let out = simplex::solve(model, &model.lower, &model.upper, opts)?;
    let status = match out.status {
        simplex::LpStatus::Optimal => Status::Optimal,
        simplex::LpStatus::Infeasible => Status::Infeasible,
        simplex::LpStatus::Unbounded => Status::Unbounded,
    };
    Ok(Solution {
        status,
        x: out.x,
        row_duals: out.row_duals,
        reduced_costs: out.reduced_costs,
        objective: out.objective,
        bound: out.objective,
        nodes: 1,
        branches: 0,
        iterations: out.iterations,
    })
}

/// Solves a mixed-binary linear program by branch-and-bound.
pub fn solve_milp(model: &LinearModel, opts: &SolverOptions) -> Result<Solution, SolverError> {
    model.validate()?;
    for (j, &int) in model.integer.iter().enumerate() {
        if int && (model.lower[j] < 0.0 || model.upper[j] > 1.0) {
            return Err(SolverError::NonBinaryInteger(j));
        }
    }
    branch::solve(model, opts)
}

/// Dual objective `sum(y_i b_i) + sum(d_j * bound_j)` of an optimal LP
/// solution, using the bound each nonbasic variable sits at.
pub fn dual_objective(model: &LinearModel, sol: &Solution) -> f64 {
    let rows: f64 = model.rows.iter().zip(&sol.row_duals).map(|(r, y)| r.rhs * y).sum();
    let bounds: f64 = sol
        .reduced_costs
        .iter()
        .enumerate()
        .filter(|(_, d)| **d != 0.0)
        .map(|(j, d)| {
            let x = sol.x[j];
            let at = if (x - model.lower[j]).abs() <= (x - model.upper[j]).abs() {
                model.lower[j]
            } else {
                model.upper[j]
            };
            d * if at.is_finite() { at } else { x }
        })
        .sum();
    rows + bounds
}
