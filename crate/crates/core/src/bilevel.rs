//! Strategic day-ahead bidding as a single-level MILP.
//!
//! The lower-level clearing is replaced by its optimality conditions, every
//! complementarity pair is split with a binary and two big-M rows, and the bilinear
//! revenue term is replaced with its strong-duality equivalent. Hours share no
//! constraints, so each hour is an independent sub-model.

use std::path::Path;

use thiserror::Error;

use crate::clearing::{self, BoundDuals, ClearingError, ClearingInputs, ClearingResult, DsoOrder};
use crate::exec::{self, Execution};
use crate::market::{imbalance_prices, DsoForecast, HourCurves, ImbalancePriceModel};
use crate::solver::{self, LinearModel, RowSense, Sense, SolverError, SolverOptions, Status, Var};

#[derive(Debug, Error)]
pub enum BilevelError {
    #[error("hour {0}: empty supply or demand curve")]
    EmptyCurve(usize),
    #[error("hour {hour}: non-positive big-M {value} ({what})")]
    NonPositiveBigM { hour: usize, what: &'static str, value: f64 },
    #[error("{curves} curve hours but forecast covers {forecast}")]
    HorizonMismatch { curves: usize, forecast: usize },
    #[error("hour {0}: bidding problem is infeasible")]
    Infeasible(usize),
    #[error("hour {0}: bidding problem is unbounded")]
    Unbounded(usize),
    #[error("enumeration grid too large: {0}")]
    GridTooLarge(String),
    #[error("{path}: {message}")]
    Format { path: String, message: String },
    #[error(transparent)]
    Clearing(#[from] ClearingError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Balancing recourse attached to an hour model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RecourseVars {
    /// Scalar imbalance quantities `(E+, E-)`.
    Deterministic { plus: Var, minus: Var },
    /// Affine rules `E+ = k . w`, `E- = l . w` over the lifted point `w = (1, delta, u1, u2)`,
    /// plus the worst-case expectation multipliers `tau`.
    Ldr { k: [Var; 4], l: [Var; 4], tau: [Var; 4] },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecourseKind {
    Deterministic,
    Ldr,
}

/// A complementarity pair `0 <= slack ⊥ dual >= 0` encoded with one binary.
#[derive(Debug, Clone, PartialEq)]
pub struct Complementarity {
    pub label: String,
    /// Slack as `terms + constant`.
    pub slack_terms: Vec<(Var, f64)>,
    pub slack_constant: f64,
    pub dual: Var,
    pub binary: Var,
    /// Bound on the slack when the binary is 1.
    pub m_primal: f64,
    /// Bound on the dual when the binary is 0.
    pub m_dual: f64,
}

impl Complementarity {
    pub fn slack(&self, x: &[f64]) -> f64 {
        self.slack_constant + self.slack_terms.iter().map(|&(v, c)| c * x[v.0]).sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HourVars {
    pub es: Var,
    pub eb: Var,
    pub es_max: Var,
    pub eb_max: Var,
    pub alpha_s: Var,
    pub alpha_b: Var,
    pub lambda: Var,
    pub eo: Vec<Var>,
    pub ed: Vec<Var>,
    /// `(min, max)` bound duals.
    pub mu_s: (Var, Var),
    pub mu_b: (Var, Var),
    pub mu_o: Vec<(Var, Var)>,
    pub mu_d: Vec<(Var, Var)>,
    pub recourse: RecourseVars,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BigM {
    pub quantity: f64,
    pub dual: f64,
}

/// Single-hour bidding MILP with the data needed to interpret its solution.
#[derive(Debug, Clone)]
pub struct HourModel {
    pub hour: usize,
    pub lp: LinearModel,
    pub vars: HourVars,
    pub complementarities: Vec<Complementarity>,
    pub big_m: BigM,
    pub alpha_bounds: (f64, f64),
    /// Clearing price without the DSO, used for the balancing prices.
    pub lambda_ref: f64,
    pub pr_plus: f64,
    pub pr_minus: f64,
    /// Forecast net position `G - L`.
    pub net: f64,
    pub curves: HourCurves,
}

#[derive(Debug, Clone)]
pub struct MilpModel {
    pub hours: Vec<HourModel>,
}

impl MilpModel {
    pub fn num_binaries(&self) -> usize {
        self.hours.iter().map(|h| h.complementarities.len()).sum()
    }

    /// All hours stacked block-diagonally into one model.
    pub fn joint(&self) -> LinearModel {
        let mut joint = LinearModel::new(Sense::Minimize);
        for h in &self.hours {
            let offset = joint.num_vars();
            for j in 0..h.lp.num_vars() {
                let v = joint.add_var(h.lp.lower[j], h.lp.upper[j], h.lp.objective[j]);
                joint.integer[v.0] = h.lp.integer[j];
            }
            for row in &h.lp.rows {
                let terms: Vec<(Var, f64)> = row.coeffs.iter().map(|&(j, c)| (Var(j + offset), c)).collect();
                joint.add_row(&terms, row.sense, row.rhs);
            }
        }
        joint
    }
}

/// Offer-price bounds: the curves' extreme prices widened by a tenth of the largest magnitude.
pub fn alpha_bounds(curves: &HourCurves) -> (f64, f64) {
    let (lo, hi) = curves.price_range();
    let margin = 0.1 * lo.abs().max(hi.abs());
    (lo - margin, hi + margin)
}

/// Clearing price of the hour without any DSO participation.
pub fn reference_price(curves: &HourCurves) -> Result<f64, ClearingError> {
    Ok(clearing::solve_clearing(&curves.supply, &curves.demand, DsoOrder::none(), DsoOrder::none())?.lambda_da)
}

fn check_inputs(curves: &[HourCurves], forecast: &DsoForecast) -> Result<(), BilevelError> {
    if curves.len() != forecast.horizon() {
        return Err(BilevelError::HorizonMismatch { curves: curves.len(), forecast: forecast.horizon() });
    }
    for hc in curves {
        if hc.supply.is_empty() || hc.demand.is_empty() {
            return Err(BilevelError::EmptyCurve(hc.hour()));
        }
    }
    Ok(())
}

pub fn build_milp(
    curves: &[HourCurves],
    forecast: &DsoForecast,
    prices: &ImbalancePriceModel,
) -> Result<MilpModel, BilevelError> {
    build_milp_with(curves, forecast, prices, RecourseKind::Deterministic)
}

pub fn build_milp_with(
    curves: &[HourCurves],
    forecast: &DsoForecast,
    prices: &ImbalancePriceModel,
    recourse: RecourseKind,
) -> Result<MilpModel, BilevelError> {
    check_inputs(curves, forecast)?;
    let hours = curves
        .iter()
        .enumerate()
        .map(|(t, hc)| build_hour(t, hc, forecast, prices, recourse))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(MilpModel { hours })
}

struct Builder {
    lp: LinearModel,
    comps: Vec<Complementarity>,
    big_m: BigM,
}

impl Builder {
    fn complementarity(&mut self, label: String, slack_terms: Vec<(Var, f64)>, slack_constant: f64, dual: Var) {
        let u = self.lp.add_binary(0.0);
        let BigM { quantity: mp, dual: md } = self.big_m;
        // slack <= mp * u
        let mut row = slack_terms.clone();
        row.push((u, -mp));
        self.lp.add_row(&row, RowSense::Le, -slack_constant);
        // dual <= md * (1 - u)
        self.lp.add_row(&[(dual, 1.0), (u, md)], RowSense::Le, md);
        self.comps.push(Complementarity { label, slack_terms, slack_constant, dual, binary: u, m_primal: mp, m_dual: md });
    }
}

pub fn build_hour(
    hour: usize,
    curves: &HourCurves,
    forecast: &DsoForecast,
    prices: &ImbalancePriceModel,
    recourse: RecourseKind,
) -> Result<HourModel, BilevelError> {
    if curves.supply.is_empty() || curves.demand.is_empty() {
        return Err(BilevelError::EmptyCurve(hour));
    }
    let lambda_ref = reference_price(curves)?;
    let (pr_plus, pr_minus) = imbalance_prices(prices, lambda_ref);
    let net = forecast.net(hour);
    let g_cap = forecast.g_cap;
    let eb_cap = g_cap + forecast.tr_max;

    let (a_lo, a_hi) = alpha_bounds(curves);
    let (p_lo, p_hi) = curves.price_range();
    let quantity = curves.supply.total_quantity() + curves.demand.total_quantity() + g_cap + eb_cap + 1.0;
    let dual = (p_hi - p_lo) + a_lo.abs().max(a_hi.abs()) + 1.0;
    for (what, value) in [("quantity", quantity), ("dual", dual)] {
        if !(value > 0.0) || !value.is_finite() {
            return Err(BilevelError::NonPositiveBigM { hour, what, value });
        }
    }
    let mut b = Builder { lp: LinearModel::new(Sense::Minimize), comps: Vec::new(), big_m: BigM { quantity, dual } };
    let inf = f64::INFINITY;

    let es = b.lp.add_var(0.0, inf, 0.0);
    let eb = b.lp.add_var(0.0, inf, 0.0);
    let es_max = b.lp.add_var(0.0, g_cap, 0.0);
    let eb_max = b.lp.add_var(0.0, eb_cap, 0.0);
    let alpha_s = b.lp.add_var(a_lo, a_hi, 0.0);
    let alpha_b = b.lp.add_var(a_lo, a_hi, 0.0);
    let lambda = b.lp.add_free_var(0.0);
    let eo: Vec<Var> = curves.supply.blocks.iter().map(|blk| b.lp.add_var(0.0, blk.quantity, blk.price)).collect();
    let ed: Vec<Var> = curves.demand.blocks.iter().map(|blk| b.lp.add_var(0.0, blk.quantity, -blk.price)).collect();
    let mu_pair = |lp: &mut LinearModel| (lp.add_var(0.0, dual, 0.0), lp.add_var(0.0, dual, 0.0));
    let mu_s = mu_pair(&mut b.lp);
    let mu_b = mu_pair(&mut b.lp);
    let mu_o: Vec<(Var, Var)> = curves
        .supply
        .blocks
        .iter()
        .map(|_| mu_pair(&mut b.lp))
        .collect();
    let mu_d: Vec<(Var, Var)> = curves
        .demand
        .blocks
        .iter()
        .map(|_| mu_pair(&mut b.lp))
        .collect();
    // The strong-duality objective charges the cap of every rival block through its upper-bound dual.
    for (blk, &(_, max)) in curves.supply.blocks.iter().zip(&mu_o) {
        b.lp.set_cost(max, blk.quantity);
    }
    for (blk, &(_, max)) in curves.demand.blocks.iter().zip(&mu_d) {
        b.lp.set_cost(max, blk.quantity);
    }

    // Upper level.
    b.lp.add_row(&[(es, 1.0), (es_max, -1.0)], RowSense::Le, 0.0);
    b.lp.add_row(&[(eb, 1.0), (eb_max, -1.0)], RowSense::Le, 0.0);
    b.lp.add_row(&[(es_max, 1.0), (eb_max, -1.0)], RowSense::Le, forecast.tr_max);
    b.lp.add_row(&[(es_max, 1.0), (eb_max, -1.0)], RowSense::Ge, -forecast.tr_max);

    // Stationarity.
    b.lp.add_row(&[(alpha_s, 1.0), (lambda, -1.0), (mu_s.1, 1.0), (mu_s.0, -1.0)], RowSense::Eq, 0.0);
    b.lp.add_row(&[(alpha_b, -1.0), (lambda, 1.0), (mu_b.1, 1.0), (mu_b.0, -1.0)], RowSense::Eq, 0.0);
    for (blk, &(min, max)) in curves.supply.blocks.iter().zip(&mu_o) {
        b.lp.add_row(&[(lambda, -1.0), (max, 1.0), (min, -1.0)], RowSense::Eq, -blk.price);
    }
    for (blk, &(min, max)) in curves.demand.blocks.iter().zip(&mu_d) {
        b.lp.add_row(&[(lambda, 1.0), (max, 1.0), (min, -1.0)], RowSense::Eq, blk.price);
    }

    // Market balance.
    let mut balance = vec![(es, 1.0), (eb, -1.0)];
    balance.extend(eo.iter().map(|&v| (v, 1.0)));
    balance.extend(ed.iter().map(|&v| (v, -1.0)));
    b.lp.add_row(&balance, RowSense::Eq, 0.0);

    // Complementarity.
    b.complementarity("dso_supply_min".into(), vec![(es, 1.0)], 0.0, mu_s.0);
    b.complementarity("dso_demand_min".into(), vec![(eb, 1.0)], 0.0, mu_b.0);
    b.complementarity("dso_supply_max".into(), vec![(es_max, 1.0), (es, -1.0)], 0.0, mu_s.1);
    b.complementarity("dso_demand_max".into(), vec![(eb_max, 1.0), (eb, -1.0)], 0.0, mu_b.1);
    for (j, (blk, (&v, &(min, max)))) in curves.supply.blocks.iter().zip(eo.iter().zip(&mu_o)).enumerate() {
        b.complementarity(format!("supply_{j}_min"), vec![(v, 1.0)], 0.0, min);
        b.complementarity(format!("supply_{j}_max"), vec![(v, -1.0)], blk.quantity, max);
    }
    for (m, (blk, (&v, &(min, max)))) in curves.demand.blocks.iter().zip(ed.iter().zip(&mu_d)).enumerate() {
        b.complementarity(format!("demand_{m}_min"), vec![(v, 1.0)], 0.0, min);
        b.complementarity(format!("demand_{m}_max"), vec![(v, -1.0)], blk.quantity, max);
    }

    let recourse = match recourse {
        RecourseKind::Deterministic => {
            let plus = b.lp.add_var(0.0, quantity, -pr_plus);
            let minus = b.lp.add_var(0.0, quantity, pr_minus);
            b.lp.add_row(&[(es, 1.0), (eb, -1.0), (plus, 1.0), (minus, -1.0)], RowSense::Eq, net);
            RecourseVars::Deterministic { plus, minus }
        }
        RecourseKind::Ldr => {
            let c = crate::dro::build_ldr_constraints(&mut b.lp, es, eb, net);
            let tau = [
                b.lp.add_free_var(1.0),
                b.lp.add_free_var(0.0),
                b.lp.add_var(0.0, inf, 0.0),
                b.lp.add_var(0.0, inf, 0.0),
            ];
            RecourseVars::Ldr { k: c.k, l: c.l, tau }
        }
    };

    Ok(HourModel {
        hour,
        lp: b.lp,
        vars: HourVars {
            es,
            eb,
            es_max,
            eb_max,
            alpha_s,
            alpha_b,
            lambda,
            eo,
            ed,
            mu_s,
            mu_b,
            mu_o,
            mu_d,
            recourse,
        },
        complementarities: b.comps,
        big_m: b.big_m,
        alpha_bounds: (a_lo, a_hi),
        lambda_ref,
        pr_plus,
        pr_minus,
        net,
        curves: curves.clone(),
    })
}

/// One row of the day-ahead decision file.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DaRow {
    pub hour: usize,
    pub e_das: f64,
    pub e_dab: f64,
    pub e_das_max: f64,
    pub e_dab_max: f64,
    pub alpha_s: f64,
    pub alpha_b: f64,
    pub lambda_da: f64,
    pub e_bm_plus: f64,
    pub e_bm_minus: f64,
}

impl DaRow {
    /// DSO net sale `E^DAs - E^DAb`.
    pub fn net_sale(&self) -> f64 {
        self.e_das - self.e_dab
    }

    pub fn dso_offer(&self) -> DsoOrder {
        DsoOrder::new(self.alpha_s, self.e_das_max)
    }

    pub fn dso_bid(&self) -> DsoOrder {
        DsoOrder::new(self.alpha_b, self.e_dab_max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HourDecision {
    pub row: DaRow,
    /// Upper-level cost of the hour.
    pub objective: f64,
    /// Best bound proven by branch and bound.
    pub bound: f64,
    pub status: Status,
    pub nodes: usize,
    /// The embedded lower-level solution with its multipliers.
    pub lower: ClearingResult,
    pub pr_plus: f64,
    pub pr_minus: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DaDecision {
    pub hours: Vec<HourDecision>,
}

impl DaDecision {
    pub fn objective(&self) -> f64 {
        self.hours.iter().map(|h| h.objective).sum()
    }

    pub fn all_optimal(&self) -> bool {
        self.hours.iter().all(|h| h.status == Status::Optimal)
    }

    pub fn rows(&self) -> Vec<DaRow> {
        self.hours.iter().map(|h| h.row).collect()
    }

    pub fn total_offered(&self) -> f64 {
        self.hours.iter().map(|h| h.row.e_das).sum()
    }
}

fn clean(v: f64) -> f64 {
    if v.abs() < 1e-10 {
        0.0
    } else {
        v
    }
}

pub fn milp_options() -> SolverOptions {
    SolverOptions { relative_gap: 1e-6, ..SolverOptions::default() }
}

/// Solves a single hour model and turns the solution into a decision.
pub fn solve_hour(model: &HourModel, opts: &SolverOptions) -> Result<HourDecision, BilevelError> {
    let sol = solver::solve_milp(&model.lp, opts)?;
    match sol.status {
        Status::Infeasible => return Err(BilevelError::Infeasible(model.hour)),
        Status::Unbounded => return Err(BilevelError::Unbounded(model.hour)),
        Status::GapNotClosed if sol.x.is_empty() => return Err(BilevelError::Infeasible(model.hour)),
        _ => {}
    }
    Ok(extract(model, &sol.x, sol.status, sol.bound, sol.nodes))
}

/// Reads a decision out of a model solution.
///
/// Whenever the DSO is dispatched, its price equals the clearing price. At such points
/// the offer price is not unique, and this representative keeps every optimality condition intact.
pub fn extract(model: &HourModel, x: &[f64], status: Status, bound: f64, nodes: usize) -> HourDecision {
    let v = &model.vars;
    let hc = &model.curves;
    let val = |var: Var| clean(x[var.0]);
    let lambda = x[v.lambda.0];
    let es = val(v.es);
    let eb = val(v.eb);
    let mut alpha_s = x[v.alpha_s.0];
    let mut alpha_b = x[v.alpha_b.0];
    if es > 0.0 {
        alpha_s = lambda;
    }
    if eb > 0.0 {
        alpha_b = lambda;
    }
    let split = |d: f64| BoundDuals { min: d.max(0.0), max: (-d).max(0.0) };
    let supply_dispatch: Vec<f64> = v.eo.iter().map(|&e| val(e)).collect();
    let demand_dispatch: Vec<f64> = v.ed.iter().map(|&e| val(e)).collect();
    let lower = ClearingResult {
        lambda_da: lambda,
        dso_supply: es,
        dso_demand: eb,
        mu_dso_supply: split(alpha_s - lambda),
        mu_dso_demand: split(lambda - alpha_b),
        mu_supply: hc.supply.blocks.iter().map(|b| split(b.price - lambda)).collect(),
        mu_demand: hc.demand.blocks.iter().map(|b| split(lambda - b.price)).collect(),
        welfare: 0.0,
        degenerate: false,
        supply_dispatch,
        demand_dispatch,
    };
    let inputs = ClearingInputs {
        supply: &hc.supply,
        demand: &hc.demand,
        dso_offer: DsoOrder::new(alpha_s, val(v.es_max)),
        dso_bid: DsoOrder::new(alpha_b, val(v.eb_max)),
    };
    let welfare =
        clearing::welfare(&inputs, es, eb, &lower.supply_dispatch, &lower.demand_dispatch);
    let lower = ClearingResult { welfare, ..lower };

    let (e_bm_plus, e_bm_minus) = match v.recourse {
        RecourseVars::Deterministic { plus, minus } => (val(plus), val(minus)),
        RecourseVars::Ldr { k, l, .. } => (val(k[0]), val(l[0])),
    };
    let row = DaRow {
        hour: model.hour,
        e_das: es,
        e_dab: eb,
        e_das_max: val(v.es_max),
        e_dab_max: val(v.eb_max),
        alpha_s,
        alpha_b,
        lambda_da: lambda,
        e_bm_plus,
        e_bm_minus,
    };
    let objective = match v.recourse {
        RecourseVars::Deterministic { .. } => {
            theta(hc, &lower) + model.pr_minus * e_bm_minus - model.pr_plus * e_bm_plus
        }
        RecourseVars::Ldr { .. } => model.lp.objective_value(x),
    };
    HourDecision { row, objective, bound, status, nodes, lower, pr_plus: model.pr_plus, pr_minus: model.pr_minus }
}

/// Linearized day-ahead cost `λ(E^DAb - E^DAs)` written through rival bids and their duals.
pub fn theta(curves: &HourCurves, lower: &ClearingResult) -> f64 {
    let supply: f64 = curves
        .supply
        .blocks
        .iter()
        .zip(&lower.supply_dispatch)
        .zip(&lower.mu_supply)
        .map(|((b, x), mu)| b.price * x + mu.max * b.quantity)
        .sum();
    let demand: f64 = curves
        .demand
        .blocks
        .iter()
        .zip(&lower.demand_dispatch)
        .zip(&lower.mu_demand)
        .map(|((b, x), mu)| b.price * x - mu.max * b.quantity)
        .sum();
    supply - demand
}

pub fn solve_da_deterministic(model: &MilpModel) -> Result<DaDecision, BilevelError> {
    solve_da_deterministic_with(model, &milp_options(), Execution::default())
}

pub fn solve_da_deterministic_with(
    model: &MilpModel,
    opts: &SolverOptions,
    exec: Execution,
) -> Result<DaDecision, BilevelError> {
    let hours = exec::try_map(exec, &model.hours, |h| solve_hour(h, opts))?;
    Ok(DaDecision { hours })
}

/// Residual of the strong-duality identities at a decision.
///
/// Both the full duality equation of the clearing problem and the reduced form used in
/// the objective are evaluated; the larger residual is returned.
pub fn verify_duality_identity(decision: &HourDecision, curves: &HourCurves) -> f64 {
    let r = &decision.row;
    let ll = &decision.lower;
    let rival_supply: f64 = curves.supply.blocks.iter().zip(&ll.supply_dispatch).map(|(b, x)| b.price * x).sum();
    let rival_demand: f64 = curves.demand.blocks.iter().zip(&ll.demand_dispatch).map(|(b, x)| b.price * x).sum();
    let cap_supply: f64 = curves.supply.blocks.iter().zip(&ll.mu_supply).map(|(b, mu)| mu.max * b.quantity).sum();
    let cap_demand: f64 = curves.demand.blocks.iter().zip(&ll.mu_demand).map(|(b, mu)| mu.max * b.quantity).sum();
    let dso_caps = ll.mu_dso_supply.max * r.e_das_max + ll.mu_dso_demand.max * r.e_dab_max;

    let primal = r.alpha_b * r.e_dab + rival_demand - r.alpha_s * r.e_das - rival_supply;
    let dual = dso_caps + cap_supply + cap_demand;
    let full = (primal - dual).abs();

    let lhs = ll.lambda_da * (r.e_dab - r.e_das);
    let rhs = rival_supply + cap_supply - rival_demand + cap_demand;
    let reduced = (lhs - rhs).abs();
    full.max(reduced)
}

/// Clearing residuals of the lower-level solution embedded in a decision.
pub fn embedded_kkt(decision: &HourDecision, curves: &HourCurves) -> Result<clearing::ResidualReport, ClearingError> {
    let inputs = ClearingInputs::new(curves, decision.row.dso_offer(), decision.row.dso_bid());
    clearing::kkt_residuals(&decision.lower, &inputs)
}

/// Largest `slack * dual` product over every complementarity pair of a solved model.
pub fn complementarity_violation(model: &HourModel, x: &[f64]) -> f64 {
    model
        .complementarities
        .iter()
        .map(|c| (c.slack(x) * x[c.dual.0]).abs())
        .fold(0.0, f64::max)
}

/// Candidate values for the enumeration oracle.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct OracleGrid {
    pub es_max: Vec<f64>,
    pub eb_max: Vec<f64>,
    pub alpha_s: Vec<f64>,
    pub alpha_b: Vec<f64>,
}

pub const ORACLE_MAX_BLOCKS: usize = 8;
pub const ORACLE_MAX_POINTS: usize = 50;

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n <= 1 {
        return vec![lo];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

impl OracleGrid {
    /// Evenly spaced values over each decision's admissible range.
    pub fn uniform(curves: &HourCurves, forecast: &DsoForecast, resolution: usize) -> Self {
        let (a_lo, a_hi) = alpha_bounds(curves);
        OracleGrid {
            es_max: linspace(0.0, forecast.g_cap, resolution),
            eb_max: linspace(0.0, forecast.g_cap + forecast.tr_max, resolution),
            alpha_s: linspace(a_lo, a_hi, resolution),
            alpha_b: linspace(a_lo, a_hi, resolution),
        }
    }

    /// Adds the values of an existing decision to every axis.
    pub fn with_point(mut self, row: &DaRow) -> Self {
        for (axis, value) in [
            (&mut self.es_max, row.e_das_max),
            (&mut self.eb_max, row.e_dab_max),
            (&mut self.alpha_s, row.alpha_s),
            (&mut self.alpha_b, row.alpha_b),
        ] {
            if !axis.contains(&value) {
                axis.push(value);
            }
        }
        self
    }

    pub fn len(&self) -> usize {
        self.es_max.len() * self.eb_max.len() * self.alpha_s.len() * self.alpha_b.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Upper-level cost of net sale `s` at price `lambda` with the cheapest balancing recourse.
pub fn upper_cost(lambda: f64, s: f64, net: f64, pr_plus: f64, pr_minus: f64) -> f64 {
    let r = net - s;
    let recourse = if r >= 0.0 { -pr_plus * r } else { -pr_minus * r };
    -lambda * s + recourse
}

/// Range of clearing prices consistent with a dispatch.
fn price_interval(inputs: &ClearingInputs<'_>, res: &ClearingResult) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
    let mut apply = |price: f64, x: f64, cap: f64, supply: bool| {
        if cap <= 0.0 {
            return;
        }
        let tol = 1e-9 * (1.0 + cap);
        let at_zero = x <= tol;
        let at_cap = x >= cap - tol;
        match (at_zero, at_cap) {
            (true, true) => {}
            (false, false) => {
                lo = lo.max(price);
                hi = hi.min(price);
            }
            (true, false) => {
                if supply {
                    hi = hi.min(price)
                } else {
                    lo = lo.max(price)
                }
            }
            (false, true) => {
                if supply {
                    lo = lo.max(price)
                } else {
                    hi = hi.min(price)
                }
            }
        }
    };
    apply(inputs.dso_offer.price, res.dso_supply, inputs.dso_offer.cap, true);
    apply(inputs.dso_bid.price, res.dso_demand, inputs.dso_bid.cap, false);
    for (b, &x) in inputs.supply.blocks.iter().zip(&res.supply_dispatch) {
        apply(b.price, x, b.quantity, true);
    }
    for (b, &x) in inputs.demand.blocks.iter().zip(&res.demand_dispatch) {
        apply(b.price, x, b.quantity, false);
    }
    if !(lo <= hi + 1e-9) || !lo.is_finite() || !hi.is_finite() {
        return (res.lambda_da, res.lambda_da);
    }
    (lo, hi.max(lo))
}

/// Clearing LP restricted to the welfare-optimal face, with a custom objective on `Es - Eb`.
fn face_model(inputs: &ClearingInputs<'_>, welfare: f64) -> (LinearModel, Var, Var) {
    let mut m = LinearModel::new(Sense::Minimize);
    let es = m.add_var(0.0, inputs.dso_offer.cap, 0.0);
    let eb = m.add_var(0.0, inputs.dso_bid.cap, 0.0);
    let eo: Vec<Var> = inputs.supply.blocks.iter().map(|b| m.add_var(0.0, b.quantity, 0.0)).collect();
    let ed: Vec<Var> = inputs.demand.blocks.iter().map(|b| m.add_var(0.0, b.quantity, 0.0)).collect();
    let mut balance = vec![(es, 1.0), (eb, -1.0)];
    balance.extend(eo.iter().map(|&v| (v, 1.0)));
    balance.extend(ed.iter().map(|&v| (v, -1.0)));
    m.add_row(&balance, RowSense::Eq, 0.0);
    let mut w = vec![(es, -inputs.dso_offer.price), (eb, inputs.dso_bid.price)];
    w.extend(eo.iter().zip(&inputs.supply.blocks).map(|(&v, b)| (v, -b.price)));
    w.extend(ed.iter().zip(&inputs.demand.blocks).map(|(&v, b)| (v, b.price)));
    m.add_row(&w, RowSense::Ge, welfare - 1e-9 * (1.0 + welfare.abs()));
    (m, es, eb)
}

/// Optimistic evaluation of one candidate: the best upper-level cost over all
/// clearing outcomes that are optimal for the market, as the leader is entitled to.
fn evaluate_candidate(
    curves: &HourCurves,
    offer: DsoOrder,
    bid: DsoOrder,
    net: f64,
    pr_plus: f64,
    pr_minus: f64,
) -> Result<(f64, f64, f64, ClearingResult), BilevelError> {
    let res = clearing::solve_clearing(&curves.supply, &curves.demand, offer, bid)?;
    let inputs = ClearingInputs::new(curves, offer, bid);
    let (l_lo, l_hi) = price_interval(&inputs, &res);
    let s0 = res.dso_supply - res.dso_demand;
    let (s_lo, s_hi) = if offer.cap > 0.0 || bid.cap > 0.0 {
        let (mut m, es, eb) = face_model(&inputs, res.welfare);
        m.set_cost(es, 1.0);
        m.set_cost(eb, -1.0);
        let opts = SolverOptions::default();
        let lo = solver::solve_lp(&m, &opts)?;
        m.sense = Sense::Maximize;
        let hi = solver::solve_lp(&m, &opts)?;
        if lo.is_optimal() && hi.is_optimal() {
            (lo.objective.min(s0), hi.objective.max(s0))
        } else {
            (s0, s0)
        }
    } else {
        (0.0, 0.0)
    };
    let mut best = (f64::INFINITY, s0, res.lambda_da);
    for s in [s_lo, s_hi, 0.0, net, s0] {
        if s < s_lo || s > s_hi {
            continue;
        }
        for lambda in [l_lo, l_hi] {
            let c = upper_cost(lambda, s, net, pr_plus, pr_minus);
            if c < best.0 {
                best = (c, s, lambda);
            }
        }
    }
    Ok((best.0, best.1, best.2, res))
}

/// Brute-force search over a grid of offer and bid parameters.
pub fn enumeration_oracle(
    curves: &[HourCurves],
    forecast: &DsoForecast,
    prices: &ImbalancePriceModel,
    grids: &[OracleGrid],
) -> Result<DaDecision, BilevelError> {
    check_inputs(curves, forecast)?;
    if grids.len() != curves.len() {
        return Err(BilevelError::GridTooLarge(format!("{} grids for {} hours", grids.len(), curves.len())));
    }
    let mut hours = Vec::with_capacity(curves.len());
    for (t, (hc, grid)) in curves.iter().zip(grids).enumerate() {
        if hc.supply.len() > ORACLE_MAX_BLOCKS || hc.demand.len() > ORACLE_MAX_BLOCKS {
            return Err(BilevelError::GridTooLarge(format!(
                "hour {t}: {} supply and {} demand blocks (limit {ORACLE_MAX_BLOCKS})",
                hc.supply.len(),
                hc.demand.len()
            )));
        }
        for axis in [&grid.es_max, &grid.eb_max, &grid.alpha_s, &grid.alpha_b] {
            if axis.len() > ORACLE_MAX_POINTS || axis.is_empty() {
                return Err(BilevelError::GridTooLarge(format!(
                    "hour {t}: axis with {} points (limit {ORACLE_MAX_POINTS})",
                    axis.len()
                )));
            }
        }
        hours.push(oracle_hour(t, hc, forecast, prices, grid)?);
    }
    Ok(DaDecision { hours })
}

fn oracle_hour(
    t: usize,
    hc: &HourCurves,
    forecast: &DsoForecast,
    prices: &ImbalancePriceModel,
    grid: &OracleGrid,
) -> Result<HourDecision, BilevelError> {
    let lambda_ref = reference_price(hc)?;
    let (pr_plus, pr_minus) = imbalance_prices(prices, lambda_ref);
    let net = forecast.net(t);
    let (a_lo, a_hi) = alpha_bounds(hc);
    let mut best: Option<(f64, f64, f64, DsoOrder, DsoOrder, ClearingResult)> = None;
    for &es_max in &grid.es_max {
        if es_max < 0.0 || es_max > forecast.g_cap {
            continue;
        }
        for &eb_max in &grid.eb_max {
            if eb_max < 0.0 || (es_max - eb_max).abs() > forecast.tr_max {
                continue;
            }
            for &alpha_s in &grid.alpha_s {
                if alpha_s < a_lo || alpha_s > a_hi {
                    continue;
                }
                for &alpha_b in &grid.alpha_b {
                    if alpha_b < a_lo || alpha_b > a_hi {
                        continue;
                    }
                    let offer = DsoOrder::new(alpha_s, es_max);
                    let bid = DsoOrder::new(alpha_b, eb_max);
                    let (cost, s, lambda, res) = evaluate_candidate(hc, offer, bid, net, pr_plus, pr_minus)?;
                    if best.as_ref().is_none_or(|b| cost < b.0 - 1e-12) {
                        best = Some((cost, s, lambda, offer, bid, res));
                    }
                }
            }
        }
    }
    let Some((cost, s, lambda, offer, bid, res)) = best else {
        return Err(BilevelError::GridTooLarge(format!("hour {t}: no admissible grid point")));
    };
    // Recover a dispatch on the optimal face realizing the chosen net sale.
    let inputs = ClearingInputs::new(hc, offer, bid);
    let (mut m, es, eb) = face_model(&inputs, res.welfare);
    m.add_row(&[(es, 1.0), (eb, -1.0)], RowSense::Eq, s);
    let sol = solver::solve_lp(&m, &SolverOptions::default())?;
    let (e_das, e_dab, supply_dispatch, demand_dispatch) = if sol.is_optimal() {
        let n_s = hc.supply.len();
        (
            clean(sol.x[es.0]),
            clean(sol.x[eb.0]),
            sol.x[2..2 + n_s].iter().map(|&v| clean(v)).collect(),
            sol.x[2 + n_s..].iter().map(|&v| clean(v)).collect(),
        )
    } else {
        (res.dso_supply, res.dso_demand, res.supply_dispatch.clone(), res.demand_dispatch.clone())
    };
    let r = net - (e_das - e_dab);
    let split = |d: f64| BoundDuals { min: d.max(0.0), max: (-d).max(0.0) };
    let lower = ClearingResult {
        lambda_da: lambda,
        dso_supply: e_das,
        dso_demand: e_dab,
        supply_dispatch,
        demand_dispatch,
        mu_dso_supply: split(offer.price - lambda),
        mu_dso_demand: split(lambda - bid.price),
        mu_supply: hc.supply.blocks.iter().map(|b| split(b.price - lambda)).collect(),
        mu_demand: hc.demand.blocks.iter().map(|b| split(lambda - b.price)).collect(),
        welfare: res.welfare,
        degenerate: res.degenerate,
    };
    Ok(HourDecision {
        row: DaRow {
            hour: t,
            e_das,
            e_dab,
            e_das_max: offer.cap,
            e_dab_max: bid.cap,
            alpha_s: offer.price,
            alpha_b: bid.price,
            lambda_da: lambda,
            e_bm_plus: r.max(0.0),
            e_bm_minus: (-r).max(0.0),
        },
        objective: cost,
        bound: cost,
        status: Status::Optimal,
        nodes: grid.len(),
        lower,
        pr_plus,
        pr_minus,
    })
}

const DA_HEADER: [&str; 10] = [
    "hour",
    "E_das_mwh",
    "E_dab_mwh",
    "E_das_max",
    "E_dab_max",
    "alpha_s",
    "alpha_b",
    "lambda_da",
    "E_bm_plus",
    "E_bm_minus",
];

pub fn write_decision(path: &Path, rows: &[DaRow]) -> Result<(), BilevelError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(DA_HEADER)?;
    for r in rows {
        w.write_record(&[
            r.hour.to_string(),
            r.e_das.to_string(),
            r.e_dab.to_string(),
            r.e_das_max.to_string(),
            r.e_dab_max.to_string(),
            r.alpha_s.to_string(),
            r.alpha_b.to_string(),
            r.lambda_da.to_string(),
            r.e_bm_plus.to_string(),
            r.e_bm_minus.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_decision(path: &Path) -> Result<Vec<DaRow>, BilevelError> {
    let fmt = |message: String| BilevelError::Format { path: path.display().to_string(), message };
    let mut rdr = csv::Reader::from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(|s| s.trim().to_string()).collect();
    if header != DA_HEADER {
        return Err(fmt(format!("expected header `{}`", DA_HEADER.join(","))));
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        if rec.len() != DA_HEADER.len() {
            return Err(fmt(format!("line {line}: expected {} fields", DA_HEADER.len())));
        }
        let hour: usize = rec[0].trim().parse().map_err(|_| fmt(format!("line {line}: bad hour")))?;
        let mut vals = [0.0; 9];
        for (k, v) in vals.iter_mut().enumerate() {
            *v = rec[k + 1]
                .trim()
                .parse()
                .map_err(|_| fmt(format!("line {line}: `{}` is not a number", DA_HEADER[k + 1])))?;
        }
        rows.push(DaRow {
            hour,
            e_das: vals[0],
            e_dab: vals[1],
            e_das_max: vals[2],
            e_dab_max: vals[3],
            alpha_s: vals[4],
            alpha_b: vals[5],
            lambda_da: vals[6],
            e_bm_plus: vals[7],
            e_bm_minus: vals[8],
        });
    }
    Ok(rows)
}
