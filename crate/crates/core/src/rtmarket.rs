//! Online incentive-based balancing: DER projection, primal-dual updates and the control loop.
//!
//! The controller works in per-unit power on the feeder base with time in minutes. Inputs and
//! the written trace use kW, kvar and MWh.

use std::path::Path;

use thiserror::Error;

use crate::exec::{self, Execution};
use crate::grid::{self, FeederModel, GridError, Sensitivity};
use crate::scenario::TraceSet;

#[derive(Debug, Error)]
pub enum RtError {
    #[error("empty capability set (p in [{p_min}, {p_max}], s_max {s_max})")]
    EmptyCapability { p_min: f64, p_max: f64, s_max: f64 },
    #[error("invalid controller configuration: {0}")]
    InvalidConfig(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("trace covers {got} steps but {expected} are needed")]
    TraceGap { expected: usize, got: usize },
    #[error("controller diverged at step {step} (residual {residual:e})")]
    Diverged { step: usize, residual: f64 },
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Operating region and quadratic cost of one DER.
///
/// Units are whatever the caller uses consistently; the controller passes per-unit values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerCapability {
    pub p_min: f64,
    pub p_max: f64,
    pub s_max: f64,
    pub a: f64,
    pub b: f64,
}

impl DerCapability {
    pub fn is_empty(&self) -> bool {
        !(self.p_min <= self.p_max) || !(self.s_max >= 0.0) || self.p_min.max(-self.s_max) > self.p_max.min(self.s_max)
    }

    pub fn contains(&self, p: f64, q: f64, tol: f64) -> bool {
        p >= self.p_min - tol && p <= self.p_max + tol && (p * p + q * q).sqrt() <= self.s_max + tol
    }

    /// Gradient of `a (p - p_pv)^2 + b q^2`, with `p_pv` taken as `p_max`.
    pub fn cost_gradient(&self, p: f64, q: f64) -> (f64, f64) {
        (2.0 * self.a * (p - self.p_max), 2.0 * self.b * q)
    }

    pub fn cost(&self, p: f64, q: f64) -> f64 {
        self.a * (p - self.p_max).powi(2) + self.b * q * q
    }
}

/// Euclidean projection onto `{p_min <= p <= p_max, p^2 + q^2 <= s_max^2}`.
pub fn project_feasible(p: f64, q: f64, cap: &DerCapability) -> Result<(f64, f64), RtError> {
    if cap.is_empty() {
        return Err(RtError::EmptyCapability { p_min: cap.p_min, p_max: cap.p_max, s_max: cap.s_max });
    }
    let s2 = cap.s_max * cap.s_max;
    let pc = p.clamp(cap.p_min, cap.p_max);
    if pc * pc + q * q <= s2 {
        return Ok((pc, q));
    }
    let mut best: Option<(f64, (f64, f64))> = None;
    let mut consider = |cand: (f64, f64)| {
        let d = (cand.0 - p).powi(2) + (cand.1 - q).powi(2);
        if best.is_none_or(|(bd, _)| d < bd) {
            best = Some((d, cand));
        }
    };
    // Radial projection onto the disc, valid when it lands inside the box.
    let r = p.hypot(q);
    if r > 0.0 {
        let scale = cap.s_max / r;
        let rp = p * scale;
        if rp >= cap.p_min && rp <= cap.p_max {
            consider((rp, q * scale));
        }
    }
    // Projection onto each vertical box edge clipped by the disc.
    for edge in [cap.p_min, cap.p_max] {
        if edge.abs() <= cap.s_max {
            let h = (s2 - edge * edge).max(0.0).sqrt();
            consider((edge, q.clamp(-h, h)));
        }
    }
    let (_, (pp, qq)) = best.expect("a nonempty set always yields a candidate");
    Ok((pp, qq))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum VoltageSource {
    Linear,
    #[default]
    AcSweep,
}

impl std::str::FromStr for VoltageSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "linear" => Ok(VoltageSource::Linear),
            "ac-sweep" => Ok(VoltageSource::AcSweep),
            other => Err(format!("unknown voltage source `{other}` (expected linear or ac-sweep)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RtConfig {
    pub gamma: f64,
    pub eta: f64,
    pub eps_p: f64,
    pub eps_q: f64,
    pub eps_lambda: f64,
    pub v_min: f64,
    pub v_max: f64,
    /// Real-time step, seconds.
    pub dt_rt_s: f64,
    pub voltage_source: VoltageSource,
    /// Reactive/active ratio of fixed loads.
    pub load_q_ratio: f64,
    /// Per-DER work is tiny, so this defaults to sequential; parallel pays off only on
    /// feeders with many hundreds of DERs.
    pub execution: Execution,
}

impl Default for RtConfig {
    fn default() -> Self {
        RtConfig {
            gamma: 30.0,
            eta: 1e-4,
            eps_p: 0.1,
            eps_q: 0.2,
            eps_lambda: 50.0,
            v_min: 0.95,
            v_max: 1.045,
            dt_rt_s: 5.0,
            voltage_source: VoltageSource::AcSweep,
            load_q_ratio: (1.0f64 - 0.95 * 0.95).sqrt() / 0.95,
            execution: Execution::Sequential,
        }
    }
}

impl RtConfig {
    pub fn validate(&self) -> Result<(), RtError> {
        let bad = |m: &str| Err(RtError::InvalidConfig(m.into()));
        if !(self.gamma >= 0.0) {
            return bad("gamma must be nonnegative");
        }
        if !(self.eta > 0.0) {
            return bad("eta must be positive");
        }
        if !(self.eps_p > 0.0 && self.eps_q > 0.0 && self.eps_lambda > 0.0) {
            return bad("step sizes must be positive");
        }
        if !(self.v_min < self.v_max) {
            return bad("v_min must be below v_max");
        }
        if !(self.dt_rt_s > 0.0) {
            return bad("dt_rt must be positive");
        }
        Ok(())
    }

    /// Step length in minutes, the controller's time unit.
    pub fn dt_min(&self) -> f64 {
        self.dt_rt_s / 60.0
    }
}

/// Controller state; powers per DER, everything else per node, all per-unit.
#[derive(Debug, Clone, PartialEq)]
pub struct RtState {
    pub k: usize,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub lambda_lo: Vec<f64>,
    pub lambda_hi: Vec<f64>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub v: Vec<f64>,
}

impl RtState {
    pub fn new(p: Vec<f64>, nodes: usize) -> Self {
        let q = vec![0.0; p.len()];
        RtState {
            k: 0,
            p,
            q,
            lambda_lo: vec![0.0; nodes],
            lambda_hi: vec![0.0; nodes],
            alpha: vec![0.0; nodes],
            beta: vec![0.0; nodes],
            v: vec![0.0; nodes],
        }
    }
}

/// Projected gradient step for every DER given its node's incentives.
pub fn step_primal(
    state: &RtState,
    caps: &[DerCapability],
    der_nodes: &[usize],
    config: &RtConfig,
) -> Result<(Vec<f64>, Vec<f64>), RtError> {
    let idx: Vec<usize> = (0..caps.len()).collect();
    let moved = exec::try_map(config.execution, &idx, |&i| {
        let (gp, gq) = caps[i].cost_gradient(state.p[i], state.q[i]);
        let node = der_nodes[i] - 1;
        let p = state.p[i] - config.eps_p * (gp + state.alpha[node]);
        let q = state.q[i] - config.eps_q * (gq + state.beta[node]);
        project_feasible(p, q, &caps[i])
    })?;
    Ok(moved.into_iter().unzip())
}

/// Regularized projected dual ascent on the voltage limits.
pub fn step_dual(state: &RtState, config: &RtConfig) -> (Vec<f64>, Vec<f64>) {
    let e = config.eps_lambda;
    let lo = state
        .lambda_lo
        .iter()
        .zip(&state.v)
        .map(|(l, v)| (l + e * (config.v_min - v - config.eta * l)).max(0.0))
        .collect();
    let hi = state
        .lambda_hi
        .iter()
        .zip(&state.v)
        .map(|(l, v)| (l + e * (v - config.v_max - config.eta * l)).max(0.0))
        .collect();
    (lo, hi)
}

/// `D = (sum(p) dt - E_rt)^2` and its (identical) partial derivatives.
pub fn imbalance_gradient(p: &[f64], e_rt: f64, dt: f64) -> (f64, f64) {
    let gap = p.iter().sum::<f64>() * dt - e_rt;
    (gap * gap, 2.0 * gap * dt)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Incentives {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    /// Voltage-regulation component of `alpha`.
    pub alpha_v: Vec<f64>,
    /// Balancing component of `alpha`.
    pub alpha_dso: Vec<f64>,
}

/// Incentive prices from the voltage duals and the imbalance gradient `grad_d` (per node).
pub fn compute_incentives(lambda_lo: &[f64], lambda_hi: &[f64], grad_d: &[f64], sens: &Sensitivity, gamma: f64) -> Incentives {
    let n = lambda_lo.len();
    let net: Vec<f64> = lambda_hi.iter().zip(lambda_lo).map(|(h, l)| h - l).collect();
    let combined: Vec<f64> = net.iter().zip(grad_d).map(|(d, g)| d + gamma * g).collect();
    let scaled: Vec<f64> = grad_d.iter().map(|g| gamma * g).collect();
    debug_assert_eq!(grad_d.len(), n);
    Incentives {
        alpha: sens.r.mul_vec(&combined),
        beta: sens.x.mul_vec(&net),
        alpha_v: sens.r.mul_vec(&net),
        alpha_dso: sens.r.mul_vec(&scaled),
    }
}

/// Max-norm change of `(p, q, lambda_lo, lambda_hi)` between two states.
pub fn fixed_point_residual(a: &RtState, b: &RtState) -> Result<f64, RtError> {
    let pairs = [(&a.p, &b.p), (&a.q, &b.q), (&a.lambda_lo, &b.lambda_lo), (&a.lambda_hi, &b.lambda_hi)];
    let mut r: f64 = 0.0;
    for (x, y) in pairs {
        if x.len() != y.len() {
            return Err(RtError::DimensionMismatch { expected: x.len(), got: y.len() });
        }
        for (u, v) in x.iter().zip(y) {
            r = r.max((u - v).abs());
        }
    }
    Ok(r)
}

/// Everything the loop needs about the feeder, in per-unit.
#[derive(Debug, Clone)]
pub struct RtProblem<'a> {
    pub feeder: &'a FeederModel,
    pub sens: &'a Sensitivity,
    pub der_nodes: Vec<usize>,
    pub caps_kw: Vec<DerCapability>,
}

impl<'a> RtProblem<'a> {
    pub fn new(feeder: &'a FeederModel, sens: &'a Sensitivity) -> Self {
        let der_nodes = feeder.ders.iter().map(|d| d.node).collect();
        let caps_kw = feeder
            .ders
            .iter()
            .map(|d| DerCapability { p_min: d.p_min_kw, p_max: d.p_max_kw, s_max: d.s_max_kva, a: d.cost_a, b: d.cost_b })
            .collect();
        RtProblem { feeder, sens, der_nodes, caps_kw }
    }

    /// Per-unit capabilities with `p_max` capped by the PV availability at each DER node.
    pub fn caps_at(&self, pv_kw: &[f64]) -> Vec<DerCapability> {
        let f = self.feeder;
        self.caps_kw
            .iter()
            .zip(&self.der_nodes)
            .map(|(c, &node)| {
                let avail = pv_kw[node - 1].clamp(c.p_min, c.p_max);
                DerCapability { p_min: f.to_pu(c.p_min), p_max: f.to_pu(avail), s_max: f.to_pu(c.s_max), ..*c }
            })
            .collect()
    }

    /// Net per-node injections from DER setpoints and fixed loads.
    pub fn injections(&self, p: &[f64], q: &[f64], load_kw: &[f64], load_q_ratio: f64) -> (Vec<f64>, Vec<f64>) {
        let f = self.feeder;
        let mut pn: Vec<f64> = load_kw.iter().map(|l| -f.to_pu(*l)).collect();
        let mut qn: Vec<f64> = pn.iter().map(|l| l * load_q_ratio).collect();
        for (i, &node) in self.der_nodes.iter().enumerate() {
            pn[node - 1] += p[i];
            qn[node - 1] += q[i];
        }
        (pn, qn)
    }

    pub fn measure(&self, p: &[f64], q: &[f64], load_kw: &[f64], config: &RtConfig) -> Result<Vec<f64>, RtError> {
        let (pn, qn) = self.injections(p, q, load_kw, config.load_q_ratio);
        Ok(match config.voltage_source {
            VoltageSource::Linear => self.sens.voltages(&pn, &qn),
            VoltageSource::AcSweep => grid::ac_power_flow(self.feeder, &pn, &qn)?.voltages,
        })
    }
}

/// One recorded controller step, per-unit internally.
#[derive(Debug, Clone, PartialEq)]
pub struct RtStep {
    pub state: RtState,
    pub alpha_v: Vec<f64>,
    pub alpha_dso: Vec<f64>,
    pub d_value: f64,
    /// Reference energy for this step, MWh.
    pub e_rt_mwh: f64,
    /// Net exported energy `sum(p) dt` for this step, MWh.
    pub delivered_mwh: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RtTrace {
    pub steps: Vec<RtStep>,
    pub der_nodes: Vec<usize>,
    pub base_mva: f64,
}

impl RtTrace {
    pub fn max_voltage_after(&self, k0: usize) -> f64 {
        self.steps.iter().skip(k0).flat_map(|s| s.state.v.iter().copied()).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_voltage_after(&self, k0: usize) -> f64 {
        self.steps.iter().skip(k0).flat_map(|s| s.state.v.iter().copied()).fold(f64::INFINITY, f64::min)
    }

    /// Time-averaged `|sum(p) dt - E_rt|`, MWh.
    pub fn mean_abs_imbalance(&self) -> f64 {
        self.steps.iter().map(|s| (s.delivered_mwh - s.e_rt_mwh).abs()).sum::<f64>() / self.steps.len().max(1) as f64
    }

    /// Largest `|alpha_dso|` over the run, per-unit price.
    pub fn max_abs_alpha_dso(&self) -> f64 {
        self.steps.iter().flat_map(|s| s.alpha_dso.iter()).fold(0.0, |m, a| m.max(a.abs()))
    }

    pub fn alpha_range(&self) -> (f64, f64) {
        self.steps
            .iter()
            .flat_map(|s| s.state.alpha.iter())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &a| (lo.min(a), hi.max(a)))
    }

    pub fn last(&self) -> Option<&RtStep> {
        self.steps.last()
    }
}

/// Residual above which the loop is declared unstable.
pub const DIVERGENCE_LIMIT: f64 = 1e3;

/// Runs the incentive loop over the trace.
///
/// Each step measures voltages for the current setpoints, updates the duals, prices the
/// incentives and lets every DER take one projected gradient step.
pub fn run_rt_market(problem: &RtProblem, e_rt_mwh: &[f64], traces: &TraceSet, config: &RtConfig) -> Result<RtTrace, RtError> {
    run_rt_until(problem, e_rt_mwh, traces, config, None)
}

/// Like [`run_rt_market`], stopping early once the fixed-point residual drops below `tol`.
pub fn run_rt_until(
    problem: &RtProblem,
    e_rt_mwh: &[f64],
    traces: &TraceSet,
    config: &RtConfig,
    tol: Option<f64>,
) -> Result<RtTrace, RtError> {
    config.validate()?;
    let steps = e_rt_mwh.len();
    if traces.steps() < steps {
        return Err(RtError::TraceGap { expected: steps, got: traces.steps() });
    }
    let n = problem.feeder.n;
    let base = problem.feeder.bases.base_mva;
    let dt = config.dt_min();
    let mut caps = problem.caps_at(&traces.pv_kw[0]);
    let mut state = RtState::new(caps.iter().map(|c| c.p_max).collect(), n);
    let mut out = Vec::with_capacity(steps);
    for k in 0..steps {
        let load = &traces.load_kw[k];
        state.v = problem.measure(&state.p, &state.q, load, config)?;
        let (lo, hi) = step_dual(&state, config);

        let load_pu = problem.feeder.to_pu(traces.total_load_kw(k));
        let e_rt = e_rt_mwh[k] * 60.0 / base;
        let net: Vec<f64> = state.p.iter().copied().chain(std::iter::once(-load_pu)).collect();
        let (d_value, grad) = imbalance_gradient(&net, e_rt, dt);
        let inc = compute_incentives(&lo, &hi, &vec![grad; n], problem.sens, config.gamma);

        let mut next = RtState {
            k: k + 1,
            p: Vec::new(),
            q: Vec::new(),
            lambda_lo: lo,
            lambda_hi: hi,
            alpha: inc.alpha,
            beta: inc.beta,
            v: state.v.clone(),
        };
        (next.p, next.q) = step_primal(
            &RtState { p: state.p.clone(), q: state.q.clone(), ..next.clone() },
            &caps,
            &problem.der_nodes,
            config,
        )?;
        let residual = fixed_point_residual(&state, &next)?;
        if !residual.is_finite() || residual > DIVERGENCE_LIMIT {
            return Err(RtError::Diverged { step: k, residual });
        }
        let delivered = net.iter().sum::<f64>() * dt * base / 60.0;
        out.push(RtStep {
            state: RtState { p: state.p.clone(), q: state.q.clone(), ..next.clone() },
            alpha_v: inc.alpha_v,
            alpha_dso: inc.alpha_dso,
            d_value,
            e_rt_mwh: e_rt_mwh[k],
            delivered_mwh: delivered,
            residual,
        });
        state = next;
        if tol.is_some_and(|t| residual < t) {
            break;
        }
        if k + 1 < steps {
            caps = problem.caps_at(&traces.pv_kw[k + 1]);
        }
    }
    Ok(RtTrace { steps: out, der_nodes: problem.der_nodes.clone(), base_mva: base })
}

/// Voltages with every DER at its PV availability and no reactive power.
pub fn run_uncontrolled(problem: &RtProblem, traces: &TraceSet, config: &RtConfig) -> Result<Vec<Vec<f64>>, RtError> {
    (0..traces.steps())
        .map(|k| {
            let caps = problem.caps_at(&traces.pv_kw[k]);
            let p: Vec<f64> = caps.iter().map(|c| c.p_max).collect();
            problem.measure(&p, &vec![0.0; p.len()], &traces.load_kw[k], config)
        })
        .collect()
}

/// Stationarity and complementarity measured at a converged step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimalityReport {
    /// Max `|grad J + incentive|` over DERs strictly inside their region.
    pub stationarity: f64,
    pub interior_ders: usize,
    /// Max of `lambda * slack` over nodes and both limits.
    pub complementarity: f64,
}

/// Checks DER optimality under the posted incentives and dual complementarity.
pub fn optimality_report(problem: &RtProblem, step: &RtStep, caps: &[DerCapability], config: &RtConfig) -> OptimalityReport {
    let s = &step.state;
    let mut stationarity: f64 = 0.0;
    let mut interior = 0;
    for (i, c) in caps.iter().enumerate() {
        let (p, q) = (s.p[i], s.q[i]);
        let margin = 1e-9;
        let inside = p > c.p_min + margin && p < c.p_max - margin && p.hypot(q) < c.s_max - margin;
        if inside {
            let node = problem.der_nodes[i] - 1;
            let (gp, gq) = c.cost_gradient(p, q);
            stationarity = stationarity.max((gp + s.alpha[node]).abs()).max((gq + s.beta[node]).abs());
            interior += 1;
        }
    }
    let mut complementarity: f64 = 0.0;
    for j in 0..s.v.len() {
        let hi = s.lambda_hi[j] * (config.v_max - s.v[j] + config.eta * s.lambda_hi[j]);
        let lo = s.lambda_lo[j] * (s.v[j] - config.v_min + config.eta * s.lambda_lo[j]);
        complementarity = complementarity.max(hi.abs()).max(lo.abs());
    }
    OptimalityReport { stationarity, interior_ders: interior, complementarity }
}

/// Largest cost gradient magnitude over each DER's region.
pub fn gradient_bound(caps: &[DerCapability]) -> f64 {
    caps.iter()
        .map(|c| {
            let gp = 2.0 * c.a * (c.p_max - c.p_min).abs();
            let gq = 2.0 * c.b * c.s_max;
            gp.max(gq)
        })
        .fold(0.0, f64::max)
}

pub const TRACE_HEADER: [&str; 11] =
    ["k", "node", "p_kw", "q_kvar", "v_pu", "alpha", "beta", "lambda_lo", "lambda_hi", "D_value", "E_rt_mwh"];

/// Writes one row per node and step; `p_kw`/`q_kvar` are the DER setpoints (zero without a DER).
pub fn write_trace(path: &Path, trace: &RtTrace) -> Result<(), RtError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(TRACE_HEADER)?;
    let to_kw = 1000.0 * trace.base_mva;
    for step in &trace.steps {
        let s = &step.state;
        let mut p = vec![0.0; s.v.len()];
        let mut q = vec![0.0; s.v.len()];
        for (i, &node) in trace.der_nodes.iter().enumerate() {
            p[node - 1] = s.p[i] * to_kw;
            q[node - 1] = s.q[i] * to_kw;
        }
        for j in 0..s.v.len() {
            w.write_record(&[
                (s.k - 1).to_string(),
                (j + 1).to_string(),
                p[j].to_string(),
                q[j].to_string(),
                s.v[j].to_string(),
                s.alpha[j].to_string(),
                s.beta[j].to_string(),
                s.lambda_lo[j].to_string(),
                s.lambda_hi[j].to_string(),
                step.d_value.to_string(),
                step.e_rt_mwh.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
