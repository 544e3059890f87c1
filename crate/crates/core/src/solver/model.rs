use std::fmt;

use super::SolverError;

/// Direction of optimization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Minimize,
    Maximize,
}

/// Relation between a row activity and its right-hand side.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowSense {
    Le,
    Eq,
    Ge,
}

/// Index of a variable inside a [`LinearModel`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(pub usize);

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "x{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub coeffs: Vec<(usize, f64)>,
    pub sense: RowSense,
    pub rhs: f64,
}

impl Row {
    pub fn activity(&self, x: &[f64]) -> f64 {
        self.coeffs.iter().map(|&(j, a)| a * x[j]).sum()
    }

    /// Amount by which `x` violates this row (zero when satisfied).
    pub fn violation(&self, x: &[f64]) -> f64 {
        let act = self.activity(x);
        match self.sense {
            RowSense::Le => (act - self.rhs).max(0.0),
            RowSense::Ge => (self.rhs - act).max(0.0),
            RowSense::Eq => (act - self.rhs).abs(),
        }
    }
}

/// A linear or mixed-integer linear program with bounded variables.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub sense: Sense,
    pub objective: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub integer: Vec<bool>,
    pub rows: Vec<Row>,
}

impl LinearModel {
    pub fn new(sense: Sense) -> Self {
        LinearModel {
            sense,
            objective: Vec::new(),
            lower: Vec::new(),
            upper: Vec::new(),
            integer: Vec::new(),
            rows: Vec::new(),
        }
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn add_var(&mut self, lower: f64, upper: f64, cost: f64) -> Var {
        self.objective.push(cost);
        self.lower.push(lower);
        self.upper.push(upper);
        self.integer.push(false);
        Var(self.objective.len() - 1)
    }

    pub fn add_free_var(&mut self, cost: f64) -> Var {
        self.add_var(f64::NEG_INFINITY, f64::INFINITY, cost)
    }

    pub fn add_binary(&mut self, cost: f64) -> Var {
        let v = self.add_var(0.0, 1.0, cost);
        self.integer[v.0] = true;
        v
    }

    pub fn set_cost(&mut self, v: Var, cost: f64) {
        self.objective[v.0] = cost;
    }

    pub fn set_bounds(&mut self, v: Var, lower: f64, upper: f64) {
        self.lower[v.0] = lower;
        self.upper[v.0] = upper;
    }

    /// Adds a row; repeated variables are merged and exact zeros dropped.
    pub fn add_row(&mut self, terms: &[(Var, f64)], sense: RowSense, rhs: f64) -> usize {
        let mut coeffs: Vec<(usize, f64)> = Vec::with_capacity(terms.len());
        for &(v, a) in terms {
            match coeffs.iter_mut().find(|(j, _)| *j == v.0) {
                Some(entry) => entry.1 += a,
                None => coeffs.push((v.0, a)),
            }
        }
        coeffs.retain(|&(_, a)| a != 0.0);
        self.rows.push(Row { coeffs, sense, rhs });
        self.rows.len() - 1
    }

    pub fn has_integers(&self) -> bool {
        self.integer.iter().any(|&b| b)
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    /// Largest row or bound violation of `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let rows = self.rows.iter().map(|r| r.violation(x)).fold(0.0, f64::max);
        let bounds = x
            .iter()
            .enumerate()
            .map(|(j, &v)| (self.lower[j] - v).max(v - self.upper[j]).max(0.0))
            .fold(0.0, f64::max);
        rows.max(bounds)
    }

    pub fn rhs_norm_inf(&self) -> f64 {
        self.rows.iter().map(|r| r.rhs.abs()).fold(0.0, f64::max)
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        let n = self.num_vars();
        if self.lower.len() != n || self.upper.len() != n || self.integer.len() != n {
            return Err(SolverError::Malformed("bound vectors do not match variable count".into()));
        }
        for (j, &c) in self.objective.iter().enumerate() {
            if !c.is_finite() {
                return Err(SolverError::NonFinite(format!("objective coefficient of x{j}")));
            }
        }
        for j in 0..n {
            let (lo, hi) = (self.lower[j], self.upper[j]);
            if lo.is_nan() || hi.is_nan() || lo == f64::INFINITY || hi == f64::NEG_INFINITY {
                return Err(SolverError::NonFinite(format!("bounds of x{j}")));
            }
            if lo > hi {
                return Err(SolverError::InconsistentBounds { var: j, lower: lo, upper: hi });
            }
        }
        for (i, row) in self.rows.iter().enumerate() {
            if !row.rhs.is_finite() {
                return Err(SolverError::NonFinite(format!("right-hand side of row {i}")));
            }
            for &(j, a) in &row.coeffs {
                if j >= n {
                    return Err(SolverError::Malformed(format!("row {i} references x{j}")));
                }
                if !a.is_finite() {
                    return Err(SolverError::NonFinite(format!("coefficient of x{j} in row {i}")));
                }
            }
        }
        Ok(())
    }
}
