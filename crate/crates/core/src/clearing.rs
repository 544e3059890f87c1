//! Welfare-maximizing day-ahead clearing and a KKT residual checker.

use thiserror::Error;

use crate::market::{BlockCurve, HourCurves};
use crate::solver::{self, LinearModel, RowSense, Sense, SolverError, SolverOptions, Status, Var};

#[derive(Debug, Error)]
pub enum ClearingError {
    #[error("clearing problem is infeasible")]
    Infeasible,
    #[error("clearing problem is unbounded; check curve and order data")]
    UnboundedModel,
    #[error("invalid DSO order: {0}")]
    InvalidOrder(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error(transparent)]
    Solver(#[from] SolverError),
}

/// A DSO price-quantity order entering clearing as fixed data.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DsoOrder {
    pub price: f64,
    pub cap: f64,
}

impl DsoOrder {
    pub fn new(price: f64, cap: f64) -> Self {
        DsoOrder { price, cap }
    }

    pub fn none() -> Self {
        DsoOrder::default()
    }
}

/// Bound multipliers `(at lower bound, at upper bound)` of one dispatch variable.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BoundDuals {
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClearingResult {
    pub lambda_da: f64,
    pub dso_supply: f64,
    pub dso_demand: f64,
    pub supply_dispatch: Vec<f64>,
    pub demand_dispatch: Vec<f64>,
    pub mu_dso_supply: BoundDuals,
    pub mu_dso_demand: BoundDuals,
    pub mu_supply: Vec<BoundDuals>,
    pub mu_demand: Vec<BoundDuals>,
    /// Social welfare of the dispatch.
    pub welfare: f64,
    /// Set when no order is partially dispatched, so the clearing price is one point of an interval.
    pub degenerate: bool,
}

impl ClearingResult {
    pub fn cleared_volume(&self) -> f64 {
        self.supply_dispatch.iter().sum::<f64>() + self.dso_supply
    }
}

/// Everything clearing needs for one hour.
#[derive(Debug, Clone, Copy)]
pub struct ClearingInputs<'a> {
    pub supply: &'a BlockCurve,
    pub demand: &'a BlockCurve,
    pub dso_offer: DsoOrder,
    pub dso_bid: DsoOrder,
}

impl<'a> ClearingInputs<'a> {
    pub fn new(curves: &'a HourCurves, dso_offer: DsoOrder, dso_bid: DsoOrder) -> Self {
        ClearingInputs { supply: &curves.supply, demand: &curves.demand, dso_offer, dso_bid }
    }
}

/// Splits a reduced cost into the two bound multipliers.
fn split(d: f64) -> BoundDuals {
    BoundDuals { min: d.max(0.0), max: (-d).max(0.0) }
}

const INTERIOR_TOL: f64 = 1e-9;

pub fn solve_clearing(
    supply: &BlockCurve,
    demand: &BlockCurve,
    dso_offer: DsoOrder,
    dso_bid: DsoOrder,
) -> Result<ClearingResult, ClearingError> {
    for (name, o) in [("offer", dso_offer), ("bid", dso_bid)] {
        if !o.price.is_finite() || !o.cap.is_finite() || o.cap < 0.0 {
            return Err(ClearingError::InvalidOrder(format!("{name} price {} cap {}", o.price, o.cap)));
        }
    }
    // Minimize cost minus utility; the balance row's dual is the clearing price.
    let mut m = LinearModel::new(Sense::Minimize);
    let es = m.add_var(0.0, dso_offer.cap, dso_offer.price);
    let eb = m.add_var(0.0, dso_bid.cap, -dso_bid.price);
    let eo: Vec<Var> = supply.blocks.iter().map(|b| m.add_var(0.0, b.quantity, b.price)).collect();
    let ed: Vec<Var> = demand.blocks.iter().map(|b| m.add_var(0.0, b.quantity, -b.price)).collect();
    let mut balance = vec![(es, 1.0), (eb, -1.0)];
    balance.extend(eo.iter().map(|&v| (v, 1.0)));
    balance.extend(ed.iter().map(|&v| (v, -1.0)));
    m.add_row(&balance, RowSense::Eq, 0.0);

    let sol = solver::solve_lp(&m, &SolverOptions::default())?;
    match sol.status {
        Status::Optimal => {}
        Status::Infeasible => return Err(ClearingError::Infeasible),
        Status::Unbounded | Status::GapNotClosed => return Err(ClearingError::UnboundedModel),
    }
    let lambda = sol.row_duals[0];
    let x = &sol.x;
    let mu = |cost: f64, coef: f64| split(cost - lambda * coef);

    let caps: Vec<f64> = [dso_offer.cap, dso_bid.cap]
        .into_iter()
        .chain(supply.blocks.iter().map(|b| b.quantity))
        .chain(demand.blocks.iter().map(|b| b.quantity))
        .collect();
    let degenerate = !x
        .iter()
        .zip(&caps)
        .any(|(&xi, &cap)| xi > INTERIOR_TOL * (1.0 + cap) && xi < cap - INTERIOR_TOL * (1.0 + cap));

    Ok(ClearingResult {
        lambda_da: lambda,
        dso_supply: x[es.0],
        dso_demand: x[eb.0],
        supply_dispatch: eo.iter().map(|v| x[v.0]).collect(),
        demand_dispatch: ed.iter().map(|v| x[v.0]).collect(),
        mu_dso_supply: mu(dso_offer.price, 1.0),
        mu_dso_demand: mu(-dso_bid.price, -1.0),
        mu_supply: supply.blocks.iter().map(|b| mu(b.price, 1.0)).collect(),
        mu_demand: demand.blocks.iter().map(|b| mu(-b.price, -1.0)).collect(),
        welfare: -sol.objective,
        degenerate,
    })
}

/// Maximum absolute residuals of the clearing optimality system.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ResidualReport {
    pub stationarity: f64,
    /// Complementarity products together with primal and dual sign/bound violations.
    pub complementarity: f64,
    pub balance: f64,
}

impl ResidualReport {
    pub fn max(&self) -> f64 {
        self.stationarity.max(self.complementarity).max(self.balance)
    }

    pub fn within(&self, tol: f64) -> bool {
        self.max() <= tol
    }
}

/// Residuals of one `0 <= x <= cap` pair with multipliers `mu`.
fn bound_residual(x: f64, cap: f64, mu: BoundDuals) -> f64 {
    let primal = (-x).max(x - cap).max(0.0);
    let dual = (-mu.min).max(-mu.max).max(0.0);
    let comp = (x * mu.min).abs().max(((cap - x) * mu.max).abs());
    primal.max(dual).max(comp)
}

pub fn kkt_residuals(result: &ClearingResult, inputs: &ClearingInputs<'_>) -> Result<ResidualReport, ClearingError> {
    if result.supply_dispatch.len() != inputs.supply.len() || result.mu_supply.len() != inputs.supply.len() {
        return Err(ClearingError::DimensionMismatch(format!(
            "{} supply blocks but {} dispatch values",
            inputs.supply.len(),
            result.supply_dispatch.len()
        )));
    }
    if result.demand_dispatch.len() != inputs.demand.len() || result.mu_demand.len() != inputs.demand.len() {
        return Err(ClearingError::DimensionMismatch(format!(
            "{} demand blocks but {} dispatch values",
            inputs.demand.len(),
            result.demand_dispatch.len()
        )));
    }
    let lambda = result.lambda_da;
    let mut stat: f64 = 0.0;
    let mut comp: f64 = 0.0;

    let s = inputs.dso_offer.price - lambda + result.mu_dso_supply.max - result.mu_dso_supply.min;
    stat = stat.max(s.abs());
    comp = comp.max(bound_residual(result.dso_supply, inputs.dso_offer.cap, result.mu_dso_supply));

    let b = -inputs.dso_bid.price + lambda + result.mu_dso_demand.max - result.mu_dso_demand.min;
    stat = stat.max(b.abs());
    comp = comp.max(bound_residual(result.dso_demand, inputs.dso_bid.cap, result.mu_dso_demand));

    for ((blk, &x), mu) in inputs.supply.blocks.iter().zip(&result.supply_dispatch).zip(&result.mu_supply) {
        stat = stat.max((blk.price - lambda + mu.max - mu.min).abs());
        comp = comp.max(bound_residual(x, blk.quantity, *mu));
    }
    for ((blk, &x), mu) in inputs.demand.blocks.iter().zip(&result.demand_dispatch).zip(&result.mu_demand) {
        stat = stat.max((-blk.price + lambda + mu.max - mu.min).abs());
        comp = comp.max(bound_residual(x, blk.quantity, *mu));
    }
    let balance = result.dso_supply - result.dso_demand + result.supply_dispatch.iter().sum::<f64>()
        - result.demand_dispatch.iter().sum::<f64>();
    Ok(ResidualReport { stationarity: stat, complementarity: comp, balance: balance.abs() })
}

/// Welfare of an arbitrary dispatch.
pub fn welfare(inputs: &ClearingInputs<'_>, dso_supply: f64, dso_demand: f64, supply: &[f64], demand: &[f64]) -> f64 {
    let utility: f64 = inputs.demand.blocks.iter().zip(demand).map(|(b, x)| b.price * x).sum::<f64>()
        + inputs.dso_bid.price * dso_demand;
    let cost: f64 = inputs.supply.blocks.iter().zip(supply).map(|(b, x)| b.price * x).sum::<f64>()
        + inputs.dso_offer.price * dso_supply;
    utility - cost
}
