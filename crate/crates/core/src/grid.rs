//! Radial feeder model, voltage sensitivities and a nonlinear power-flow sweep.

use std::collections::VecDeque;
use std::path::Path;

use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("line {from}-{to} closes a cycle")]
    CycleDetected { from: usize, to: usize },
    #[error("node {0} is not connected to the substation")]
    DisconnectedNode(usize),
    #[error("bad units: {0}")]
    BadUnits(String),
    #[error("power-flow sweep diverged after {iterations} iterations (last update {update:e})")]
    SweepDiverged { iterations: usize, update: f64 },
    #[error("dimension mismatch: expected {expected} values, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("{path}: {message}")]
    Format { path: String, message: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeederBases {
    pub base_mva: f64,
    pub base_kv: f64,
    /// Substation voltage in p.u.
    pub v0: f64,
}

impl Default for FeederBases {
    fn default() -> Self {
        FeederBases { base_mva: 1.0, base_kv: 4.8, v0: 1.0 }
    }
}

impl FeederBases {
    pub fn z_base(&self) -> f64 {
        self.base_kv * self.base_kv / self.base_mva
    }

    fn validate(&self) -> Result<(), GridError> {
        if !(self.base_mva > 0.0 && self.base_kv > 0.0 && self.v0 > 0.0)
            || !self.base_mva.is_finite()
            || !self.base_kv.is_finite()
            || !self.v0.is_finite()
        {
            return Err(GridError::BadUnits(format!(
                "bases must be positive (base_mva={}, base_kv={}, v0={})",
                self.base_mva, self.base_kv, self.v0
            )));
        }
        Ok(())
    }
}

/// A line in per-unit, oriented away from the substation after loading.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Line {
    pub from: usize,
    pub to: usize,
    pub r_pu: f64,
    pub x_pu: f64,
}

/// DER capability and cost as read from the node file, in kW/kVA.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerRecord {
    pub node: usize,
    pub s_max_kva: f64,
    pub p_min_kw: f64,
    pub p_max_kw: f64,
    pub cost_a: f64,
    pub cost_b: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeederModel {
    /// Number of non-substation nodes; nodes are `0..=n` with 0 the substation.
    pub n: usize,
    pub lines: Vec<Line>,
    /// Parent of every node (`parent[0] == 0`).
    pub parent: Vec<usize>,
    /// Impedance of the line feeding each node (zero for the substation).
    pub feeder_r: Vec<f64>,
    pub feeder_x: Vec<f64>,
    /// Nodes in breadth-first order from the substation.
    pub order: Vec<usize>,
    pub ders: Vec<DerRecord>,
    pub bases: FeederBases,
}

impl FeederModel {
    /// Builds and checks a radial feeder from lines given in ohms.
    pub fn from_lines(lines_ohm: &[(usize, usize, f64, f64)], ders: Vec<DerRecord>, bases: FeederBases) -> Result<Self, GridError> {
        bases.validate()?;
        let z = bases.z_base();
        let n_nodes = lines_ohm.iter().map(|l| l.0.max(l.1)).max().map_or(1, |m| m + 1);
        let mut adj: Vec<Vec<(usize, f64, f64)>> = vec![Vec::new(); n_nodes];
        for &(from, to, r, x) in lines_ohm {
            if !(r >= 0.0 && x >= 0.0) || !r.is_finite() || !x.is_finite() {
                return Err(GridError::BadUnits(format!("line {from}-{to} has impedance {r}+j{x} ohm")));
            }
            if from == to {
                return Err(GridError::CycleDetected { from, to });
            }
            adj[from].push((to, r / z, x / z));
            adj[to].push((from, r / z, x / z));
        }
        let mut parent = vec![usize::MAX; n_nodes];
        let mut feeder_r = vec![0.0; n_nodes];
        let mut feeder_x = vec![0.0; n_nodes];
        let mut order = Vec::with_capacity(n_nodes);
        let mut lines = Vec::with_capacity(lines_ohm.len());
        parent[0] = 0;
        let mut queue = VecDeque::from([0usize]);
        while let Some(u) = queue.pop_front() {
            order.push(u);
            let mut skipped_parent = false;
            for &(v, r, x) in &adj[u] {
                if v == parent[u] && u != 0 && !skipped_parent {
                    skipped_parent = true;
                    continue;
                }
                if parent[v] != usize::MAX {
                    return Err(GridError::CycleDetected { from: u, to: v });
                }
                parent[v] = u;
                feeder_r[v] = r;
                feeder_x[v] = x;
                lines.push(Line { from: u, to: v, r_pu: r, x_pu: x });
                queue.push_back(v);
            }
        }
        if let Some(v) = parent.iter().position(|&p| p == usize::MAX) {
            return Err(GridError::DisconnectedNode(v));
        }
        for d in &ders {
            if d.node == 0 || d.node >= n_nodes {
                return Err(GridError::BadUnits(format!("DER at unknown node {}", d.node)));
            }
            if !(d.s_max_kva >= 0.0) || !(d.p_min_kw <= d.p_max_kw) {
                return Err(GridError::BadUnits(format!("DER at node {} has inconsistent limits", d.node)));
            }
        }
        Ok(FeederModel { n: n_nodes - 1, lines, parent, feeder_r, feeder_x, order, ders, bases })
    }

    /// Nodes on the path from the substation to `node`, excluding the substation.
    pub fn path(&self, node: usize) -> Vec<usize> {
        let mut p = Vec::new();
        let mut v = node;
        while v != 0 {
            p.push(v);
            v = self.parent[v];
        }
        p.reverse();
        p
    }

    /// Converts kW (or kvar) to per-unit.
    pub fn to_pu(&self, kw: f64) -> f64 {
        kw / (1000.0 * self.bases.base_mva)
    }

    pub fn to_kw(&self, pu: f64) -> f64 {
        pu * 1000.0 * self.bases.base_mva
    }
}

fn format_err(path: &Path, message: impl Into<String>) -> GridError {
    GridError::Format { path: path.display().to_string(), message: message.into() }
}

fn read_rows(path: &Path, header: &[&str]) -> Result<Vec<Vec<String>>, GridError> {
    let mut rdr = csv::Reader::from_path(path)?;
    let got: Vec<String> = rdr.headers()?.iter().map(|s| s.trim().to_string()).collect();
    if got != header {
        return Err(format_err(path, format!("expected header `{}`, found `{}`", header.join(","), got.join(","))));
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        if rec.len() != header.len() {
            return Err(format_err(path, format!("line {}: expected {} fields", rows.len() + 2, header.len())));
        }
        rows.push(rec.iter().map(|s| s.trim().to_string()).collect());
    }
    Ok(rows)
}

fn parse<T: std::str::FromStr>(path: &Path, line: usize, value: &str) -> Result<T, GridError> {
    value.parse().map_err(|_| format_err(path, format!("line {line}: cannot parse `{value}`")))
}

pub const LINE_HEADER: [&str; 4] = ["from", "to", "r_ohm", "x_ohm"];
pub const NODE_HEADER: [&str; 6] = ["node", "s_max_kva", "p_min_kw", "p_max_kw", "cost_a", "cost_b"];

pub fn load_feeder(line_file: &Path, node_file: &Path, bases: FeederBases) -> Result<FeederModel, GridError> {
    let mut lines = Vec::new();
    for (i, row) in read_rows(line_file, &LINE_HEADER)?.iter().enumerate() {
        let l = i + 2;
        lines.push((
            parse(line_file, l, &row[0])?,
            parse(line_file, l, &row[1])?,
            parse(line_file, l, &row[2])?,
            parse(line_file, l, &row[3])?,
        ));
    }
    let mut ders = Vec::new();
    for (i, row) in read_rows(node_file, &NODE_HEADER)?.iter().enumerate() {
        let l = i + 2;
        ders.push(DerRecord {
            node: parse(node_file, l, &row[0])?,
            s_max_kva: parse(node_file, l, &row[1])?,
            p_min_kw: parse(node_file, l, &row[2])?,
            p_max_kw: parse(node_file, l, &row[3])?,
            cost_a: parse(node_file, l, &row[4])?,
            cost_b: parse(node_file, l, &row[5])?,
        });
    }
    FeederModel::from_lines(&lines, ders, bases)
}

/// Square matrix in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub n: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(n: usize) -> Self {
        Matrix { n, data: vec![0.0; n * n] }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n).map(|i| self.row(i).iter().zip(x).map(|(a, b)| a * b).sum()).collect()
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|i| (0..i).all(|j| self.get(i, j) == self.get(j, i)))
    }

    pub fn quadratic_form(&self, x: &[f64]) -> f64 {
        self.mul_vec(x).iter().zip(x).map(|(a, b)| a * b).sum()
    }
}

/// Linear voltage model `v = R p + X q + v_tilde` over the non-substation nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct Sensitivity {
    pub r: Matrix,
    pub x: Matrix,
    pub v_tilde: Vec<f64>,
}

impl Sensitivity {
    /// Predicted voltages for per-unit injections indexed by node - 1.
    pub fn voltages(&self, p: &[f64], q: &[f64]) -> Vec<f64> {
        let rp = self.r.mul_vec(p);
        let xq = self.x.mul_vec(q);
        self.v_tilde.iter().zip(rp.iter().zip(&xq)).map(|(v, (a, b))| v + a + b).collect()
    }
}

/// Common-path impedance sums scaled by the substation voltage.
pub fn sensitivity_matrices(feeder: &FeederModel) -> Sensitivity {
    let n = feeder.n;
    let v0 = feeder.bases.v0;
    // Cumulative impedance from the root to every node.
    let mut cum_r = vec![0.0; n + 1];
    let mut cum_x = vec![0.0; n + 1];
    for &v in feeder.order.iter().skip(1) {
        let p = feeder.parent[v];
        cum_r[v] = cum_r[p] + feeder.feeder_r[v];
        cum_x[v] = cum_x[p] + feeder.feeder_x[v];
    }
    let depth = {
        let mut d = vec![0usize; n + 1];
        for &v in feeder.order.iter().skip(1) {
            d[v] = d[feeder.parent[v]] + 1;
        }
        d
    };
    let lca = |mut a: usize, mut b: usize| {
        while depth[a] > depth[b] {
            a = feeder.parent[a];
        }
        while depth[b] > depth[a] {
            b = feeder.parent[b];
        }
        while a != b {
            a = feeder.parent[a];
            b = feeder.parent[b];
        }
        a
    };
    let mut r = Matrix::zeros(n);
    let mut x = Matrix::zeros(n);
    for i in 1..=n {
        for j in i..=n {
            let c = lca(i, j);
            let (rv, xv) = (cum_r[c] / v0, cum_x[c] / v0);
            for (m, v) in [(&mut r, rv), (&mut x, xv)] {
                m.data[(i - 1) * n + (j - 1)] = v;
                m.data[(j - 1) * n + (i - 1)] = v;
            }
        }
    }
    Sensitivity { r, x, v_tilde: vec![v0; n] }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AcFlow {
    /// Voltage magnitudes of nodes `1..=n`.
    pub voltages: Vec<f64>,
    pub iterations: usize,
}

pub const SWEEP_TOL: f64 = 1e-10;
pub const SWEEP_MAX_ITER: usize = 100;

/// Backward/forward sweep for per-unit net injections indexed by node - 1.
pub fn ac_power_flow(feeder: &FeederModel, p: &[f64], q: &[f64]) -> Result<AcFlow, GridError> {
    let n = feeder.n;
    for len in [p.len(), q.len()] {
        if len != n {
            return Err(GridError::DimensionMismatch { expected: n, got: len });
        }
    }
    let v0 = Complex64::new(feeder.bases.v0, 0.0);
    let mut v = vec![v0; n + 1];
    let mut current = vec![Complex64::new(0.0, 0.0); n + 1];
    let mut update = f64::INFINITY;
    for it in 1..=SWEEP_MAX_ITER {
        // Backward: branch current into each node from its parent.
        for i in 1..=n {
            let s = Complex64::new(p[i - 1], q[i - 1]);
            current[i] = -(s / v[i]).conj();
        }
        for &node in feeder.order.iter().skip(1).rev() {
            let par = feeder.parent[node];
            if par != 0 {
                let c = current[node];
                current[par] += c;
            }
        }
        // Forward: voltage drops along each branch.
        update = 0.0;
        for &node in feeder.order.iter().skip(1) {
            let z = Complex64::new(feeder.feeder_r[node], feeder.feeder_x[node]);
            let new = v[feeder.parent[node]] - z * current[node];
            update = update.max((new.norm() - v[node].norm()).abs());
            v[node] = new;
        }
        if !update.is_finite() || v.iter().any(|x| !(x.norm() > 0.3)) {
            return Err(GridError::SweepDiverged { iterations: it, update });
        }
        if update < SWEEP_TOL {
            return Ok(AcFlow { voltages: v[1..].iter().map(|x| x.norm()).collect(), iterations: it });
        }
    }
    Err(GridError::SweepDiverged { iterations: SWEEP_MAX_ITER, update })
}

/// Whether zero DER injection keeps every voltage within limits; warns otherwise.
pub fn check_slater(sens: &Sensitivity, v_lo: f64, v_hi: f64) -> bool {
    let ok = sens.v_tilde.iter().all(|&v| v_lo < v && v < v_hi);
    if !ok {
        log::warn!("no-injection voltage lies outside [{v_lo}, {v_hi}]; the controller has no strictly feasible point");
    }
    ok
}
