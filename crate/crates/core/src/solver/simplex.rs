//! Dense bounded-variable revised simplex.
//!
//! Every row `i` gets a logical variable `r_i` with `a_i x - r_i = 0` and the
//! row's right-hand side turned into bounds on `r_i`. The basis inverse is kept
//! explicitly and refreshed from scratch every [`REFACTOR_EVERY`] pivots.

use super::model::{LinearModel, RowSense, Sense};
use super::{SolverError, SolverOptions};

const REFACTOR_EVERY: usize = 64;
/// Consecutive degenerate pivots tolerated before switching to Bland's rule.
const DEGENERATE_LIMIT: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone)]
pub(crate) struct LpOutcome {
    pub status: LpStatus,
    /// Structural values.
    pub x: Vec<f64>,
    /// d(objective)/d(rhs) per row, in the model's own sense.
    pub row_duals: Vec<f64>,
    /// Reduced costs of structurals, in the model's own sense.
    pub reduced_costs: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
}

enum Step {
    Optimal,
    Unbounded,
}

struct Tableau<'a> {
    m: usize,
    n: usize,
    cols: Vec<Vec<(usize, f64)>>,
    lb: Vec<f64>,
    ub: Vec<f64>,
    x: Vec<f64>,
    basis: Vec<usize>,
    /// Basis position of each column, `usize::MAX` when nonbasic.
    position: Vec<usize>,
    binv: Vec<f64>,
    opts: &'a SolverOptions,
    iterations: usize,
    since_refactor: usize,
}

pub(crate) fn solve(
    model: &LinearModel,
    lower: &[f64],
    upper: &[f64],
    opts: &SolverOptions,
) -> Result<LpOutcome, SolverError> {
    let m = model.num_rows();
    let n = model.num_vars();

    let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for (i, row) in model.rows.iter().enumerate() {
        for &(j, a) in &row.coeffs {
            cols[j].push((i, a));
        }
    }
    let mut lb = lower.to_vec();
    let mut ub = upper.to_vec();
    for (i, row) in model.rows.iter().enumerate() {
        cols.push(vec![(i, -1.0)]);
        let (lo, hi) = match row.sense {
            RowSense::Le => (f64::NEG_INFINITY, row.rhs),
            RowSense::Ge => (row.rhs, f64::INFINITY),
            RowSense::Eq => (row.rhs, row.rhs),
        };
        lb.push(lo);
        ub.push(hi);
        debug_assert_eq!(cols.len(), n + i + 1);
    }

    let mut x = vec![0.0; n + m];
    for j in 0..n {
        x[j] = initial_value(lb[j], ub[j]);
    }

    let mut basis = vec![0usize; m];
    let mut binv = vec![0.0; m * m];
    let mut artificial = Vec::new();
    for (i, row) in model.rows.iter().enumerate() {
        let act: f64 = row.coeffs.iter().map(|&(j, a)| a * x[j]).sum();
        let logical = n + i;
        if act >= lb[logical] - opts.feasibility_tol && act <= ub[logical] + opts.feasibility_tol {
            x[logical] = act;
            basis[i] = logical;
            binv[i * m + i] = -1.0;
        } else {
            let target = if act < lb[logical] { lb[logical] } else { ub[logical] };
            x[logical] = target;
            let sign = if target > act { 1.0 } else { -1.0 };
            let col = cols.len();
            cols.push(vec![(i, sign)]);
            lb.push(0.0);
            ub.push(f64::INFINITY);
            x.push((target - act).abs());
            basis[i] = col;
            binv[i * m + i] = sign;
            artificial.push(col);
        }
    }

    let total = cols.len();
    let mut position = vec![usize::MAX; total];
    for (i, &b) in basis.iter().enumerate() {
        position[b] = i;
    }

    let mut tab = Tableau {
        m,
        n,
        cols,
        lb,
        ub,
        x,
        basis,
        position,
        binv,
        opts,
        iterations: 0,
        since_refactor: 0,
    };

    if !artificial.is_empty() {
        let mut phase1 = vec![0.0; total];
        for &a in &artificial {
            phase1[a] = 1.0;
        }
        tab.run(&phase1)?;
        let infeasibility: f64 = artificial.iter().map(|&a| tab.x[a]).sum();
        let scale = 1.0 + model.rhs_norm_inf();
        if infeasibility > 1e-7 * scale {
            return Ok(LpOutcome {
                status: LpStatus::Infeasible,
                x: tab.x[..n].to_vec(),
                row_duals: vec![0.0; m],
                reduced_costs: vec![0.0; n],
                objective: f64::NAN,
                iterations: tab.iterations,
            });
        }
        for &a in &artificial {
            tab.ub[a] = 0.0;
            if tab.position[a] == usize::MAX {
                tab.x[a] = 0.0;
            }
        }
    }

    let flip = if model.sense == Sense::Maximize { -1.0 } else { 1.0 };
    let mut cost = vec![0.0; total];
    for j in 0..n {
        cost[j] = flip * model.objective[j];
    }

    let step = tab.run(&cost)?;
    if let Step::Unbounded = step {
        return Ok(LpOutcome {
            status: LpStatus::Unbounded,
            x: tab.x[..n].to_vec(),
            row_duals: vec![0.0; m],
            reduced_costs: vec![0.0; n],
            objective: f64::NAN,
            iterations: tab.iterations,
        });
    }
    // Polish: fresh factorization, then confirm optimality.
    tab.refactor()?;
    if let Step::Unbounded = tab.run(&cost)? {
        return Ok(LpOutcome {
            status: LpStatus::Unbounded,
            x: tab.x[..n].to_vec(),
            row_duals: vec![0.0; m],
            reduced_costs: vec![0.0; n],
            objective: f64::NAN,
            iterations: tab.iterations,
        });
    }

    let y = tab.duals(&cost);
    let mut reduced = vec![0.0; n];
    for (j, r) in reduced.iter_mut().enumerate() {
        *r = if tab.position[j] == usize::MAX { flip * tab.reduced_cost(j, &cost, &y) } else { 0.0 };
    }
    let row_duals = y.iter().map(|v| flip * v).collect();
    let xs = tab.x[..n].to_vec();
    let objective = model.objective_value(&xs);
    Ok(LpOutcome {
        status: LpStatus::Optimal,
        x: xs,
        row_duals,
        reduced_costs: reduced,
        objective,
        iterations: tab.iterations,
    })
}

fn initial_value(lo: f64, hi: f64) -> f64 {
    if lo.is_finite() {
        lo
    } else if hi.is_finite() {
        hi
    } else {
        0.0
    }
}

impl Tableau<'_> {
    fn duals(&self, cost: &[f64]) -> Vec<f64> {
        let m = self.m;
        let mut y = vec![0.0; m];
        for i in 0..m {
            let cb = cost[self.basis[i]];
            if cb != 0.0 {
                let row = &self.binv[i * m..(i + 1) * m];
                for (yk, b) in y.iter_mut().zip(row) {
                    *yk += cb * b;
                }
            }
        }
        y
    }

    fn reduced_cost(&self, j: usize, cost: &[f64], y: &[f64]) -> f64 {
        cost[j] - self.cols[j].iter().map(|&(i, a)| y[i] * a).sum::<f64>()
    }

    fn column(&self, j: usize) -> Vec<f64> {
        let m = self.m;
        let mut alpha = vec![0.0; m];
        for &(k, a) in &self.cols[j] {
            for (i, al) in alpha.iter_mut().enumerate() {
                *al += self.binv[i * m + k] * a;
            }
        }
        alpha
    }

    fn run(&mut self, cost: &[f64]) -> Result<Step, SolverError> {
        let total = self.cols.len();
        let limit = self.opts.iteration_limit.max(50 * (self.m + self.n));
        let mut degenerate = 0usize;
        let mut bland = false;
        loop {
            if self.since_refactor >= REFACTOR_EVERY {
                self.refactor()?;
            }
            if self.iterations >= limit {
                return Err(SolverError::IterationLimit(self.iterations));
            }
            let y = self.duals(cost);

            // Pricing.
            let mut entering: Option<(usize, f64, f64)> = None;
            for j in 0..total {
                if self.position[j] != usize::MAX || self.lb[j] == self.ub[j] {
                    continue;
                }
                let d = self.reduced_cost(j, cost, &y);
                let dir = if d < -self.opts.optimality_tol && self.x[j] < self.ub[j] {
                    1.0
                } else if d > self.opts.optimality_tol && self.x[j] > self.lb[j] {
                    -1.0
                } else {
                    continue;
                };
                let better = match entering {
                    None => true,
                    Some((_, best, _)) => !bland && d.abs() > best.abs(),
                };
                if better {
                    entering = Some((j, d, dir));
                }
                if bland {
                    break;
                }
            }
            let Some((q, _, dir)) = entering else {
                return Ok(Step::Optimal);
            };

            let alpha = self.column(q);
            let tol = self.opts.pivot_tol;
            let feas = self.opts.feasibility_tol;

            let flip_len = self.ub[q] - self.lb[q];
            let mut exact_min = f64::INFINITY;
            let mut relaxed_min = f64::INFINITY;
            for (i, &a) in alpha.iter().enumerate() {
                if a.abs() <= tol {
                    continue;
                }
                let b = self.basis[i];
                let rate = -dir * a;
                let (exact, relaxed) = if rate < 0.0 {
                    if !self.lb[b].is_finite() {
                        continue;
                    }
                    let gap = self.x[b] - self.lb[b];
                    (gap.max(0.0) / -rate, (gap + feas) / -rate)
                } else {
                    if !self.ub[b].is_finite() {
                        continue;
                    }
                    let gap = self.ub[b] - self.x[b];
                    (gap.max(0.0) / rate, (gap + feas) / rate)
                };
                exact_min = exact_min.min(exact);
                relaxed_min = relaxed_min.min(relaxed);
            }

            if flip_len.is_finite() && flip_len <= exact_min {
                for (i, &a) in alpha.iter().enumerate() {
                    let b = self.basis[i];
                    self.x[b] -= dir * flip_len * a;
                }
                self.x[q] = if dir > 0.0 { self.ub[q] } else { self.lb[q] };
                self.iterations += 1;
                degenerate = 0;
                bland = false;
                continue;
            }
            if !exact_min.is_finite() {
                return Ok(Step::Unbounded);
            }

            // Harris pass two (or Bland's smallest-index rule on stalls).
            let mut leave: Option<(usize, f64)> = None;
            for (i, &a) in alpha.iter().enumerate() {
                if a.abs() <= tol {
                    continue;
                }
                let b = self.basis[i];
                let rate = -dir * a;
                let exact = if rate < 0.0 {
                    if !self.lb[b].is_finite() {
                        continue;
                    }
                    (self.x[b] - self.lb[b]).max(0.0) / -rate
                } else {
                    if !self.ub[b].is_finite() {
                        continue;
                    }
                    (self.ub[b] - self.x[b]).max(0.0) / rate
                };
                let candidate = if bland {
                    exact <= exact_min + 1e-12
                } else {
                    exact <= relaxed_min
                };
                if !candidate {
                    continue;
                }
                let better = match leave {
                    None => true,
                    Some((r, _)) => {
                        if bland {
                            b < self.basis[r]
                        } else {
                            a.abs() > alpha[r].abs()
                        }
                    }
                };
                if better {
                    leave = Some((i, exact));
                }
            }
            let Some((r, step)) = leave else {
                return Ok(Step::Unbounded);
            };

            if step <= 1e-12 {
                degenerate += 1;
                if degenerate > DEGENERATE_LIMIT {
                    bland = true;
                }
            } else {
                degenerate = 0;
                bland = false;
            }

            for (i, &a) in alpha.iter().enumerate() {
                let b = self.basis[i];
                self.x[b] -= dir * step * a;
            }
            let leaving = self.basis[r];
            let rate = -dir * alpha[r];
            self.x[leaving] = if rate < 0.0 { self.lb[leaving] } else { self.ub[leaving] };
            self.x[q] += dir * step;
            self.pivot(r, q, &alpha);
            self.iterations += 1;
        }
    }

    fn pivot(&mut self, r: usize, q: usize, alpha: &[f64]) {
        let m = self.m;
        let piv = alpha[r];
        let (head, tail) = self.binv.split_at_mut(r * m);
        let (pivot_row, rest) = tail.split_at_mut(m);
        for v in pivot_row.iter_mut() {
            *v /= piv;
        }
        for (i, &a) in alpha.iter().enumerate() {
            if i == r || a == 0.0 {
                continue;
            }
            let row = if i < r {
                &mut head[i * m..(i + 1) * m]
            } else {
                let off = (i - r - 1) * m;
                &mut rest[off..off + m]
            };
            for (v, p) in row.iter_mut().zip(pivot_row.iter()) {
                *v -= a * p;
            }
        }
        let leaving = self.basis[r];
        self.position[leaving] = usize::MAX;
        self.basis[r] = q;
        self.position[q] = r;
        self.since_refactor += 1;
    }

    /// Rebuilds the basis inverse by Gauss-Jordan elimination and recomputes
    /// basic values from the nonbasic ones.
    fn refactor(&mut self) -> Result<(), SolverError> {
        let m = self.m;
        self.since_refactor = 0;
        if m == 0 {
            return Ok(());
        }
        let mut b = vec![0.0; m * m];
        for (pos, &col) in self.basis.iter().enumerate() {
            for &(i, a) in &self.cols[col] {
                b[i * m + pos] = a;
            }
        }
        let mut inv = vec![0.0; m * m];
        for i in 0..m {
            inv[i * m + i] = 1.0;
        }
        for c in 0..m {
            let mut p = c;
            let mut best = b[c * m + c].abs();
            for r in c + 1..m {
                let v = b[r * m + c].abs();
                if v > best {
                    best = v;
                    p = r;
                }
            }
            if best < 1e-13 {
                return Err(SolverError::SingularBasis);
            }
            if p != c {
                for k in 0..m {
                    b.swap(c * m + k, p * m + k);
                    inv.swap(c * m + k, p * m + k);
                }
            }
            let d = b[c * m + c];
            for k in 0..m {
                b[c * m + k] /= d;
                inv[c * m + k] /= d;
            }
            for r in 0..m {
                if r == c {
                    continue;
                }
                let f = b[r * m + c];
                if f == 0.0 {
                    continue;
                }
                for k in 0..m {
                    b[r * m + k] -= f * b[c * m + k];
                    inv[r * m + k] -= f * inv[c * m + k];
                }
            }
        }
        // B is (constraint x position), so its inverse is (position x constraint).
        self.binv = inv;

        let mut rhs = vec![0.0; m];
        for j in 0..self.cols.len() {
            if self.position[j] != usize::MAX {
                continue;
            }
            let v = self.x[j];
            if v == 0.0 {
                continue;
            }
            for &(i, a) in &self.cols[j] {
                rhs[i] -= a * v;
            }
        }
        for pos in 0..m {
            let row = &self.binv[pos * m..(pos + 1) * m];
            let v: f64 = row.iter().zip(&rhs).map(|(a, b)| a * b).sum();
            self.x[self.basis[pos]] = v;
        }
        Ok(())
    }
}
