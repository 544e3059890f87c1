//! Distributionally robust bidding with affine balancing recourse.
//!
//! The forecast error of each hour is only known through its zero mean, bounds on
//! `E|δ|` and `E[δ²]`, and its support. Lifting `u1 >= |δ|`, `u2 >= δ²` turns the
//! worst-case expectation into a moment LP whose dual is a semi-infinite LP over the
//! lifted support `W`, solved here by constraint generation with exact separation.

use std::path::Path;

use thiserror::Error;

use crate::bilevel::{self, BilevelError, DaDecision, HourModel, RecourseKind, RecourseVars};
use crate::exec::{self, Execution};
use crate::market::{DsoForecast, HourCurves, ImbalancePriceModel};
use crate::solver::{self, LinearModel, RowSense, Sense, SolverError, SolverOptions, Status, Var};

#[derive(Debug, Error)]
pub enum DroError {
    #[error("hour {0}: no forecast-error samples")]
    EmptySamples(usize),
    #[error("constraint generation stalled with violation {violation:e} after {iterations} rounds")]
    SeparationStalled { violation: f64, iterations: usize },
    #[error("support atoms cannot have zero mean under the moment bounds")]
    InfeasibleMoments,
    #[error("atom {0:?} lies outside the lifted support")]
    PointOutsideSupport(LiftedPoint),
    #[error("invalid ambiguity set: {0}")]
    InvalidAmbiguity(String),
    #[error("{path}: {message}")]
    Format { path: String, message: String },
    #[error(transparent)]
    Bilevel(#[from] BilevelError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub const SEPARATION_TOL: f64 = 1e-7;
pub const MAX_ROUNDS: usize = 200;

/// Moment and support description of one hour's forecast error, in MWh.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AmbiguityHour {
    pub zeta1: f64,
    pub zeta2: f64,
    pub delta_min: f64,
    pub delta_max: f64,
    pub u1_max: f64,
    pub u2_max: f64,
}

impl AmbiguityHour {
    pub fn new(zeta1: f64, zeta2: f64, delta_min: f64, delta_max: f64) -> Result<Self, DroError> {
        let h = AmbiguityHour {
            zeta1,
            zeta2,
            delta_min,
            delta_max,
            u1_max: delta_max.max(-delta_min),
            u2_max: (delta_min * delta_min).max(delta_max * delta_max),
        };
        h.validate()?;
        Ok(h)
    }

    /// A point mass at zero.
    pub fn point() -> Self {
        AmbiguityHour::default()
    }

    pub fn validate(&self) -> Result<(), DroError> {
        let bad = |m: String| Err(DroError::InvalidAmbiguity(m));
        if ![self.zeta1, self.zeta2, self.delta_min, self.delta_max].iter().all(|v| v.is_finite()) {
            return bad("non-finite parameter".into());
        }
        if !(self.delta_min <= 0.0 && 0.0 <= self.delta_max) {
            return bad(format!("support [{}, {}] must contain zero", self.delta_min, self.delta_max));
        }
        if self.zeta1 < 0.0 || self.zeta2 < 0.0 {
            return bad("moment bounds must be nonnegative".into());
        }
        let slack = 1e-12 * (1.0 + self.u2_max);
        if self.zeta1 > self.u1_max + slack || self.zeta2 > self.u2_max + slack {
            return bad(format!("moment bounds ({}, {}) exceed the support", self.zeta1, self.zeta2));
        }
        Ok(())
    }

    /// Scales moments and support by `factor >= 1`, enlarging the set of distributions.
    pub fn scaled(&self, factor: f64) -> Self {
        let dmin = self.delta_min * factor;
        let dmax = self.delta_max * factor;
        AmbiguityHour {
            zeta1: self.zeta1 * factor,
            zeta2: self.zeta2 * factor,
            delta_min: dmin,
            delta_max: dmax,
            u1_max: dmax.max(-dmin),
            u2_max: (dmin * dmin).max(dmax * dmax),
        }
    }

    pub fn contains(&self, p: &LiftedPoint) -> bool {
        let tol = 1e-9 * (1.0 + self.u2_max);
        p.delta >= self.delta_min - tol
            && p.delta <= self.delta_max + tol
            && p.u1 >= p.delta.abs() - tol
            && p.u1 <= self.u1_max + tol
            && p.u2 >= p.delta * p.delta - tol
            && p.u2 <= self.u2_max + tol
    }

    /// Extreme points used to seed constraint generation.
    pub fn corner_points(&self) -> Vec<LiftedPoint> {
        let mut pts = Vec::new();
        for delta in [0.0, self.delta_min, self.delta_max] {
            for u1 in [delta.abs(), self.u1_max] {
                for u2 in [delta * delta, self.u2_max] {
                    let p = LiftedPoint { delta, u1, u2 };
                    if !pts.contains(&p) {
                        pts.push(p);
                    }
                }
            }
        }
        pts
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AmbiguitySet {
    pub hours: Vec<AmbiguityHour>,
}

impl AmbiguitySet {
    pub fn point(horizon: usize) -> Self {
        AmbiguitySet { hours: vec![AmbiguityHour::point(); horizon] }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        AmbiguitySet { hours: self.hours.iter().map(|h| h.scaled(factor)).collect() }
    }
}

/// Builds the ambiguity set from per-hour error samples, re-centering each hour to zero mean.
pub fn estimate_ambiguity(samples: &[Vec<f64>]) -> Result<AmbiguitySet, DroError> {
    let mut hours = Vec::with_capacity(samples.len());
    for (t, s) in samples.iter().enumerate() {
        if s.is_empty() {
            return Err(DroError::EmptySamples(t));
        }
        let n = s.len() as f64;
        let mean = s.iter().sum::<f64>() / n;
        let centered: Vec<f64> = s.iter().map(|d| d - mean).collect();
        let zeta1 = centered.iter().map(|d| d.abs()).sum::<f64>() / n;
        let zeta2 = centered.iter().map(|d| d * d).sum::<f64>() / n;
        let dmin = centered.iter().copied().fold(0.0, f64::min);
        let dmax = centered.iter().copied().fold(0.0, f64::max);
        hours.push(AmbiguityHour::new(zeta1, zeta2, dmin, dmax)?);
    }
    Ok(AmbiguitySet { hours })
}

/// A point `(δ, u1, u2)` of the lifted support.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LiftedPoint {
    pub delta: f64,
    pub u1: f64,
    pub u2: f64,
}

impl LiftedPoint {
    /// Point with the lifted coordinates at their tightest values.
    pub fn tight(delta: f64) -> Self {
        LiftedPoint { delta, u1: delta.abs(), u2: delta * delta }
    }

    pub fn basis(&self) -> [f64; 4] {
        [1.0, self.delta, self.u1, self.u2]
    }

    pub fn eval(&self, coef: &[f64; 4]) -> f64 {
        coef.iter().zip(self.basis()).map(|(c, w)| c * w).sum()
    }
}

/// Maximizes `c · (1, δ, u1, u2)` over the lifted support.
///
/// For fixed δ the best lifted coordinates sit at a bound chosen by the coefficient sign.
/// What remains is piecewise concave in δ on each sign branch, so the maximizer is an
/// endpoint, zero, or a clamped stationary point.
pub fn maximize_over_lifted(c: &[f64; 4], amb: &AmbiguityHour) -> (f64, LiftedPoint) {
    let lift = |delta: f64| LiftedPoint {
        delta,
        u1: if c[2] > 0.0 { amb.u1_max } else { delta.abs() },
        u2: if c[3] > 0.0 { amb.u2_max } else { delta * delta },
    };
    let mut candidates = vec![0.0, amb.delta_min, amb.delta_max];
    let c1 = c[2].min(0.0);
    let c2 = c[3].min(0.0);
    if c2 < 0.0 {
        let pos = -(c[1] + c1) / (2.0 * c2);
        if pos > 0.0 && pos < amb.delta_max {
            candidates.push(pos);
        }
        let neg = -(c[1] - c1) / (2.0 * c2);
        if neg < 0.0 && neg > amb.delta_min {
            candidates.push(neg);
        }
    }
    let mut best = (f64::NEG_INFINITY, LiftedPoint::default());
    for d in candidates {
        let p = lift(d);
        let v = p.eval(c);
        if v > best.0 {
            best = (v, p);
        }
    }
    best
}

/// Worst-case expectation together with the support points that attain it.
#[derive(Debug, Clone, PartialEq)]
pub struct WorstCase {
    pub value: f64,
    /// Atoms of a worst-case distribution with their probabilities.
    pub atoms: Vec<(LiftedPoint, f64)>,
    /// Every point generated during separation.
    pub points: Vec<LiftedPoint>,
    pub rounds: usize,
}

fn add_expectation_cut(lp: &mut LinearModel, tau: &[Var; 4], p: &LiftedPoint, rhs: f64) -> usize {
    let w = p.basis();
    lp.add_row(&[(tau[0], w[0]), (tau[1], w[1]), (tau[2], w[2]), (tau[3], w[3])], RowSense::Ge, rhs)
}

/// `sup E[f(δ, u1, u2)]` over all distributions in the ambiguity set, for affine `f`.
pub fn worst_case_expectation(f: &[f64; 4], amb: &AmbiguityHour) -> Result<WorstCase, DroError> {
    amb.validate()?;
    let mut lp = LinearModel::new(Sense::Minimize);
    let tau = [
        lp.add_free_var(1.0),
        lp.add_free_var(0.0),
        lp.add_var(0.0, f64::INFINITY, amb.zeta1),
        lp.add_var(0.0, f64::INFINITY, amb.zeta2),
    ];
    let mut points = amb.corner_points();
    for p in &points {
        add_expectation_cut(&mut lp, &tau, p, p.eval(f));
    }
    let opts = SolverOptions::default();
    let mut last_violation = f64::INFINITY;
    let mut stalls = 0;
    for round in 1..=MAX_ROUNDS {
        let sol = solver::solve_lp(&lp, &opts)?;
        if sol.status != Status::Optimal {
            return Err(DroError::SeparationStalled { violation: f64::INFINITY, iterations: round });
        }
        let t: Vec<f64> = tau.iter().map(|v| sol.x[v.0]).collect();
        let g = [f[0] - t[0], f[1] - t[1], f[2] - t[2], f[3] - t[3]];
        let (violation, p) = maximize_over_lifted(&g, amb);
        if violation <= SEPARATION_TOL || points.contains(&p) {
            if violation > 1e-6 {
                return Err(DroError::SeparationStalled { violation, iterations: round });
            }
            let atoms = points
                .iter()
                .zip(&sol.row_duals)
                .filter(|(_, &w)| w > 1e-12)
                .map(|(p, &w)| (*p, w))
                .collect();
            return Ok(WorstCase { value: sol.objective, atoms, points, rounds: round });
        }
        if violation >= last_violation {
            stalls += 1;
            if stalls > 10 {
                return Err(DroError::SeparationStalled { violation, iterations: round });
            }
        }
        last_violation = violation;
        add_expectation_cut(&mut lp, &tau, &p, p.eval(f));
        points.push(p);
    }
    Err(DroError::SeparationStalled { violation: last_violation, iterations: MAX_ROUNDS })
}

/// Best expectation of `f` over distributions supported on the given atoms.
pub fn sample_support_oracle(f: &[f64; 4], amb: &AmbiguityHour, atoms: &[LiftedPoint]) -> Result<f64, DroError> {
    if atoms.is_empty() {
        return Err(DroError::InfeasibleMoments);
    }
    if let Some(p) = atoms.iter().find(|p| !amb.contains(p)) {
        return Err(DroError::PointOutsideSupport(*p));
    }
    let mut lp = LinearModel::new(Sense::Maximize);
    let w: Vec<Var> = atoms.iter().map(|p| lp.add_var(0.0, f64::INFINITY, p.eval(f))).collect();
    let terms = |coef: &dyn Fn(&LiftedPoint) -> f64| -> Vec<(Var, f64)> {
        w.iter().zip(atoms).map(|(&v, p)| (v, coef(p))).collect()
    };
    lp.add_row(&terms(&|_| 1.0), RowSense::Eq, 1.0);
    lp.add_row(&terms(&|p| p.delta), RowSense::Eq, 0.0);
    lp.add_row(&terms(&|p| p.u1), RowSense::Le, amb.zeta1);
    lp.add_row(&terms(&|p| p.u2), RowSense::Le, amb.zeta2);
    let sol = solver::solve_lp(&lp, &SolverOptions::default())?;
    match sol.status {
        Status::Optimal => Ok(sol.objective),
        _ => Err(DroError::InfeasibleMoments),
    }
}

/// Coefficients of the affine recourse rules for one hour.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LdrRow {
    pub hour: usize,
    pub k: [f64; 4],
    pub l: [f64; 4],
}

impl LdrRow {
    pub fn surplus(&self, p: &LiftedPoint) -> f64 {
        p.eval(&self.k)
    }

    pub fn shortfall(&self, p: &LiftedPoint) -> f64 {
        p.eval(&self.l)
    }

    /// Balance residual `E^DAs - E^DAb + E+ - E- - (G - L + δ)` at a realization.
    pub fn balance_residual(&self, net_sale: f64, net: f64, p: &LiftedPoint) -> f64 {
        net_sale + self.surplus(p) - self.shortfall(p) - (net + p.delta)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LdrPolicy {
    pub hours: Vec<LdrRow>,
}

/// Variables and rows created for the affine recourse of one hour.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LdrConstraints {
    pub k: [Var; 4],
    pub l: [Var; 4],
    pub rows: [usize; 4],
}

/// Adds the recourse coefficients and the coefficient-matching rows that make the
/// balance hold for every realization of the forecast error.
pub fn build_ldr_constraints(lp: &mut LinearModel, es: Var, eb: Var, net: f64) -> LdrConstraints {
    let k = [(); 4].map(|_| lp.add_free_var(0.0));
    let l = [(); 4].map(|_| lp.add_free_var(0.0));
    let rows = [
        lp.add_row(&[(k[0], 1.0), (l[0], -1.0), (es, 1.0), (eb, -1.0)], RowSense::Eq, net),
        lp.add_row(&[(k[1], 1.0), (l[1], -1.0)], RowSense::Eq, 1.0),
        lp.add_row(&[(k[2], 1.0), (l[2], -1.0)], RowSense::Eq, 0.0),
        lp.add_row(&[(k[3], 1.0), (l[3], -1.0)], RowSense::Eq, 0.0),
    ];
    LdrConstraints { k, l, rows }
}

fn add_nonneg_cut(lp: &mut LinearModel, coef: &[Var; 4], p: &LiftedPoint) {
    let w = p.basis();
    lp.add_row(&[(coef[0], w[0]), (coef[1], w[1]), (coef[2], w[2]), (coef[3], w[3])], RowSense::Ge, 0.0);
}

/// `τ · w >= pr- (l · w) - pr+ (k · w)` at one lifted point.
fn add_recourse_cut(lp: &mut LinearModel, vars: (&[Var; 4], &[Var; 4], &[Var; 4]), prices: (f64, f64), p: &LiftedPoint) {
    let (k, l, tau) = vars;
    let (pr_plus, pr_minus) = prices;
    let w = p.basis();
    let mut terms = Vec::with_capacity(12);
    for i in 0..4 {
        terms.push((tau[i], w[i]));
        terms.push((l[i], -pr_minus * w[i]));
        terms.push((k[i], pr_plus * w[i]));
    }
    lp.add_row(&terms, RowSense::Ge, 0.0);
}

/// Outcome of the robust solve of one hour.
#[derive(Debug, Clone, PartialEq)]
pub struct RobustHour {
    pub decision: bilevel::HourDecision,
    pub policy: LdrRow,
    pub rounds: usize,
    pub cuts: usize,
}

fn ldr_vars(model: &HourModel) -> ([Var; 4], [Var; 4], [Var; 4]) {
    match model.vars.recourse {
        RecourseVars::Ldr { k, l, tau } => (k, l, tau),
        RecourseVars::Deterministic { .. } => unreachable!("hour model built without affine recourse"),
    }
}

pub fn solve_hour_dro(
    t: usize,
    curves: &HourCurves,
    forecast: &DsoForecast,
    prices: &ImbalancePriceModel,
    amb: &AmbiguityHour,
    opts: &SolverOptions,
) -> Result<RobustHour, DroError> {
    amb.validate()?;
    let mut model = bilevel::build_hour(t, curves, forecast, prices, RecourseKind::Ldr)?;
    let (k, l, tau) = ldr_vars(&model);
    model.lp.set_cost(tau[2], amb.zeta1);
    model.lp.set_cost(tau[3], amb.zeta2);
    let pr = (model.pr_plus, model.pr_minus);

    // Generated points per cut family: expectation, surplus >= 0, shortfall >= 0.
    let mut pts: [Vec<LiftedPoint>; 3] = [amb.corner_points(), amb.corner_points(), amb.corner_points()];
    for p in &pts[0] {
        add_recourse_cut(&mut model.lp, (&k, &l, &tau), pr, p);
        add_nonneg_cut(&mut model.lp, &k, p);
        add_nonneg_cut(&mut model.lp, &l, p);
    }
    let mut cuts = 3 * pts[0].len();
    for round in 1..=MAX_ROUNDS {
        let sol = solver::solve_milp(&model.lp, opts)?;
        match sol.status {
            Status::Infeasible => return Err(BilevelError::Infeasible(t).into()),
            Status::Unbounded => return Err(BilevelError::Unbounded(t).into()),
            Status::GapNotClosed if sol.x.is_empty() => return Err(BilevelError::Infeasible(t).into()),
            _ => {}
        }
        let val = |v: &[Var; 4]| v.map(|x| sol.x[x.0]);
        let (kv, lv, tv) = (val(&k), val(&l), val(&tau));
        let g: [f64; 4] = std::array::from_fn(|i| pr.1 * lv[i] - pr.0 * kv[i] - tv[i]);
        let neg = |c: &[f64; 4]| c.map(|x| -x);
        let checks = [
            maximize_over_lifted(&g, amb),
            maximize_over_lifted(&neg(&kv), amb),
            maximize_over_lifted(&neg(&lv), amb),
        ];
        let mut added = false;
        let mut worst: f64 = 0.0;
        for (i, (violation, p)) in checks.iter().enumerate() {
            worst = worst.max(*violation);
            if *violation <= SEPARATION_TOL {
                continue;
            }
            if pts[i].contains(p) {
                continue;
            }
            match i {
                0 => add_recourse_cut(&mut model.lp, (&k, &l, &tau), pr, p),
                1 => add_nonneg_cut(&mut model.lp, &k, p),
                _ => add_nonneg_cut(&mut model.lp, &l, p),
            }
            pts[i].push(*p);
            cuts += 1;
            added = true;
        }
        if !added {
            if worst > 1e-6 {
                return Err(DroError::SeparationStalled { violation: worst, iterations: round });
            }
            let decision = bilevel::extract(&model, &sol.x, sol.status, sol.bound, sol.nodes);
            return Ok(RobustHour { decision, policy: LdrRow { hour: t, k: kv, l: lv }, rounds: round, cuts });
        }
    }
    Err(DroError::SeparationStalled { violation: f64::NAN, iterations: MAX_ROUNDS })
}

pub fn solve_da_dro(
    curves: &[HourCurves],
    forecast: &DsoForecast,
    prices: &ImbalancePriceModel,
    ambiguity: &AmbiguitySet,
) -> Result<(DaDecision, LdrPolicy), DroError> {
    solve_da_dro_with(curves, forecast, prices, ambiguity, &bilevel::milp_options(), Execution::default())
}

pub fn solve_da_dro_with(
    curves: &[HourCurves],
    forecast: &DsoForecast,
    prices: &ImbalancePriceModel,
    ambiguity: &AmbiguitySet,
    opts: &SolverOptions,
    exec: Execution,
) -> Result<(DaDecision, LdrPolicy), DroError> {
    if curves.len() != forecast.horizon() {
        return Err(BilevelError::HorizonMismatch { curves: curves.len(), forecast: forecast.horizon() }.into());
    }
    if ambiguity.hours.len() != curves.len() {
        return Err(DroError::InvalidAmbiguity(format!(
            "{} ambiguity hours for {} curve hours",
            ambiguity.hours.len(),
            curves.len()
        )));
    }
    let hours = exec::map_range(exec, curves.len(), |t| {
        solve_hour_dro(t, &curves[t], forecast, prices, &ambiguity.hours[t], opts)
    });
    let mut decisions = Vec::with_capacity(hours.len());
    let mut policy = Vec::with_capacity(hours.len());
    for h in hours {
        let h = h?;
        decisions.push(h.decision);
        policy.push(h.policy);
    }
    Ok((DaDecision { hours: decisions }, LdrPolicy { hours: policy }))
}

const LDR_HEADER: [&str; 9] = ["hour", "k0", "k1", "k2", "k3", "l0", "l1", "l2", "l3"];

pub fn write_policy(path: &Path, policy: &LdrPolicy) -> Result<(), DroError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(LDR_HEADER)?;
    for r in &policy.hours {
        let mut rec = vec![r.hour.to_string()];
        rec.extend(r.k.iter().chain(&r.l).map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_policy(path: &Path) -> Result<LdrPolicy, DroError> {
    let fmt = |message: String| DroError::Format { path: path.display().to_string(), message };
    let mut rdr = csv::Reader::from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(|s| s.trim().to_string()).collect();
    if header != LDR_HEADER {
        return Err(fmt(format!("expected header `{}`", LDR_HEADER.join(","))));
    }
    let mut hours = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        if rec.len() != LDR_HEADER.len() {
            return Err(fmt(format!("line {line}: expected {} fields", LDR_HEADER.len())));
        }
        let hour = rec[0].trim().parse().map_err(|_| fmt(format!("line {line}: bad hour")))?;
        let mut v = [0.0; 8];
        for (j, slot) in v.iter_mut().enumerate() {
            *slot = rec[j + 1].trim().parse().map_err(|_| fmt(format!("line {line}: bad `{}`", LDR_HEADER[j + 1])))?;
        }
        hours.push(LdrRow { hour, k: [v[0], v[1], v[2], v[3]], l: [v[4], v[5], v[6], v[7]] });
    }
    Ok(LdrPolicy { hours })
}
