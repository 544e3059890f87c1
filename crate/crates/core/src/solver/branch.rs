//! Best-bound branch-and-bound over binary variables.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::model::{LinearModel, Sense};
use super::simplex::{self, LpStatus};
use super::{Solution, SolverError, SolverOptions, Status};

struct Node {
    /// Parent relaxation value in minimization sense.
    bound: f64,
    id: usize,
    fixes: Vec<(usize, f64, f64)>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Node {}

impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Node {
    // BinaryHeap is a max-heap: the smallest bound (then smallest id) must compare greatest.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .bound
            .total_cmp(&self.bound)
            .then_with(|| other.id.cmp(&self.id))
    }
}

pub(super) fn solve(model: &LinearModel, opts: &SolverOptions) -> Result<Solution, SolverError> {
    let flip = if model.sense == Sense::Maximize { -1.0 } else { 1.0 };
    let gap = |inc: f64| opts.relative_gap * inc.abs().max(1.0);

    let mut heap = BinaryHeap::new();
    heap.push(Node { bound: f64::NEG_INFINITY, id: 0, fixes: Vec::new() });
    let mut next_id = 1usize;
    let mut incumbent: Option<(Vec<f64>, f64)> = None;
    let (mut nodes, mut branches, mut iterations) = (0usize, 0usize, 0usize);
    let mut lower = model.lower.clone();
    let mut upper = model.upper.clone();
    let mut hit_limit = false;

    while let Some(node) = heap.pop() {
        if let Some((_, inc)) = &incumbent {
            if node.bound >= inc - gap(*inc) {
                heap.clear();
                break;
            }
        }
        if nodes >= opts.node_limit {
            heap.push(node);
            hit_limit = true;
            break;
        }
        nodes += 1;

        lower.copy_from_slice(&model.lower);
        upper.copy_from_slice(&model.upper);
        for &(j, lo, hi) in &node.fixes {
            lower[j] = lo;
            upper[j] = hi;
        }
        let lp = simplex::solve(model, &lower, &upper, opts)?;
        iterations += lp.iterations;
        match lp.status {
            LpStatus::Infeasible => continue,
            LpStatus::Unbounded => {
                return Ok(Solution {
                    status: Status::Unbounded,
                    x: lp.x,
                    row_duals: Vec::new(),
                    reduced_costs: Vec::new(),
                    objective: f64::NAN,
                    bound: f64::NAN,
                    nodes,
                    branches,
                    iterations,
                });
            }
            LpStatus::Optimal => {}
        }
        let z = flip * lp.objective;
        if let Some((_, inc)) = &incumbent {
            if z >= inc - gap(*inc) {
                continue;
            }
        }

        let mut pick: Option<(usize, f64)> = None;
        for (j, &int) in model.integer.iter().enumerate() {
            if !int {
                continue;
            }
            let v = lp.x[j];
            let frac = v - v.floor();
            let dist = frac.min(1.0 - frac);
            if dist <= opts.integrality_tol {
                continue;
            }
            if pick.is_none_or(|(_, best)| dist > best) {
                pick = Some((j, dist));
            }
        }

        match pick {
            None => {
                let (x, z) = polish(model, &lp.x, opts, &mut iterations)?.unwrap_or((lp.x, z));
                if incumbent.as_ref().is_none_or(|(_, inc)| z < *inc) {
                    incumbent = Some((x, z));
                }
            }
            Some((j, _)) => {
                branches += 1;
                let v = lp.x[j];
                let mut down = node.fixes.clone();
                down.push((j, lower[j], v.floor()));
                let mut up = node.fixes;
                up.push((j, v.ceil(), upper[j]));
                heap.push(Node { bound: z, id: next_id, fixes: down });
                heap.push(Node { bound: z, id: next_id + 1, fixes: up });
                next_id += 2;
            }
        }
    }

    let open_bound = heap.iter().map(|n| n.bound).fold(f64::INFINITY, f64::min);
    match incumbent {
        Some((x, z)) => {
            let (status, bound) = if hit_limit && open_bound < z - gap(z) {
                (Status::GapNotClosed, open_bound)
            } else {
                (Status::Optimal, z)
            };
            Ok(Solution {
                status,
                objective: flip * z,
                bound: flip * bound,
                x,
                row_duals: Vec::new(),
                reduced_costs: Vec::new(),
                nodes,
                branches,
                iterations,
            })
        }
        None => Ok(Solution {
            status: if hit_limit { Status::GapNotClosed } else { Status::Infeasible },
            x: Vec::new(),
            row_duals: Vec::new(),
            reduced_costs: Vec::new(),
            objective: f64::NAN,
            bound: flip * open_bound,
            nodes,
            branches,
            iterations,
        }),
    }
}

/// Re-solves with every integer variable fixed at its rounded value so the
/// reported continuous part satisfies the constraints exactly at integral
/// binaries. Returns the solution and its minimization-sense objective.
fn polish(
    model: &LinearModel,
    x: &[f64],
    opts: &SolverOptions,
    iterations: &mut usize,
) -> Result<Option<(Vec<f64>, f64)>, SolverError> {
    let mut lower = model.lower.clone();
    let mut upper = model.upper.clone();
    for (j, &int) in model.integer.iter().enumerate() {
        if int {
            let r = x[j].round();
            lower[j] = r;
            upper[j] = r;
        }
    }
    let lp = simplex::solve(model, &lower, &upper, opts)?;
    *iterations += lp.iterations;
    if lp.status != LpStatus::Optimal {
        return Ok(None);
    }
    let flip = if model.sense == Sense::Maximize { -1.0 } else { 1.0 };
    Ok(Some((lp.x, flip * lp.objective)))
}
