//! Self-checks against independent oracles, runnable from the command line.

use std::fmt;
use std::str::FromStr;

use gridbid::bilevel::{self, OracleGrid};
use gridbid::dro::{self, AmbiguityHour, LiftedPoint};
use gridbid::grid::{self, FeederBases, FeederModel};
use gridbid::market::{build_curve, DsoForecast, HourCurves, ImbalancePriceModel, Side};
use gridbid::rtmarket::{self, DerCapability, RtConfig, RtProblem};
use gridbid::scenario::{TraceSet, TraceWindow};
use gridbid::seed;
use gridbid::solver::Status;
use rand::Rng;

use crate::config::RunConfig;
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Kkt,
    Dro,
    Projection,
    Powerflow,
    Convergence,
}

impl Suite {
    pub const ALL: [Suite; 5] = [Suite::Kkt, Suite::Dro, Suite::Projection, Suite::Powerflow, Suite::Convergence];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Kkt => "kkt",
            Suite::Dro => "dro",
            Suite::Projection => "projection",
            Suite::Powerflow => "powerflow",
            Suite::Convergence => "convergence",
        }
    }
}

impl FromStr for Suite {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Suite::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| format!("unknown suite `{s}` (expected kkt, dro, projection, powerflow or convergence)"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub tol: f64,
}

impl Check {
    fn new(name: impl Into<String>, value: f64, tol: f64) -> Self {
        Check { name: name.into(), value, tol }
    }

    pub fn passed(&self) -> bool {
        self.value <= self.tol
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub suite: Suite,
    pub checks: Vec<Check>,
}

impl Report {
    pub fn passed(&self) -> bool {
        !self.checks.is_empty() && self.checks.iter().all(Check::passed)
    }

    pub fn worst(&self) -> Option<&Check> {
        self.checks.iter().max_by(|a, b| (a.value / a.tol).total_cmp(&(b.value / b.tol)))
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            let tag = if c.passed() { "ok  " } else { "FAIL" };
            writeln!(f, "{tag} {:<48} {:>12.3e} (tol {:.0e})", c.name, c.value, c.tol)?;
        }
        write!(f, "{}: {}", self.suite.name(), if self.passed() { "passed" } else { "FAILED" })
    }
}

fn hour(supply: &[(f64, f64)], demand: &[(f64, f64)]) -> HourCurves {
    HourCurves {
        supply: build_curve(Side::Supply, 0, supply).expect("valid desk curve"),
        demand: build_curve(Side::Demand, 0, demand).expect("valid desk curve"),
    }
}

fn single_hour(generation: f64, load: f64, g_cap: f64, tr_max: f64) -> DsoForecast {
    DsoForecast::new(vec![generation], vec![load], g_cap, tr_max).expect("valid desk forecast")
}

/// Small single-hour market instances whose optimum can be found by enumeration.
pub fn desk_instances() -> Vec<(HourCurves, DsoForecast)> {
    vec![
        (
            hour(&[(10.0, 50.0), (20.0, 50.0), (30.0, 50.0)], &[(60.0, 30.0), (40.0, 60.0), (25.0, 60.0)]),
            single_hour(20.0, 10.0, 20.0, 20.0),
        ),
        (
            hour(&[(5.0, 20.0), (18.0, 30.0), (35.0, 40.0)], &[(55.0, 25.0), (30.0, 30.0), (12.0, 40.0)]),
            single_hour(15.0, 0.0, 20.0, 25.0),
        ),
        (
            hour(&[(12.0, 40.0), (22.0, 40.0)], &[(45.0, 30.0), (28.0, 40.0), (15.0, 20.0)]),
            single_hour(0.0, 12.0, 15.0, 20.0),
        ),
        (
            hour(&[(8.0, 25.0), (16.0, 25.0), (24.0, 25.0), (40.0, 25.0)], &[(50.0, 30.0), (35.0, 30.0), (20.0, 30.0), (10.0, 30.0)]),
            single_hour(10.0, 10.0, 12.0, 10.0),
        ),
        (hour(&[(20.0, 60.0), (26.0, 30.0)], &[(70.0, 20.0), (32.0, 50.0)]), single_hour(8.0, 2.0, 10.0, 10.0)),
        (
            hour(&[(3.0, 10.0), (9.0, 30.0), (27.0, 30.0)], &[(33.0, 35.0), (21.0, 25.0), (6.0, 30.0)]),
            single_hour(2.0, 9.0, 10.0, 8.0),
        ),
    ]
}

/// Grid points per axis in the enumeration oracle.
pub const ORACLE_RESOLUTION: usize = 8;

fn kkt(prices: &ImbalancePriceModel) -> Result<Report, CliError> {
    let mut checks = Vec::new();
    for (i, (hc, f)) in desk_instances().into_iter().enumerate() {
        let curves = vec![hc.clone()];
        let model = bilevel::build_milp(&curves, &f, prices)?;
        let d = bilevel::solve_da_deterministic(&model)?;
        let h = &d.hours[0];
        checks.push(Check::new(format!("instance {i}: milp status optimal"), f64::from(u8::from(h.status != Status::Optimal)), 0.0));
        let grid = OracleGrid::uniform(&hc, &f, ORACLE_RESOLUTION).with_point(&h.row);
        let oracle = bilevel::enumeration_oracle(&curves, &f, prices, &[grid])?;
        checks.push(Check::new(format!("instance {i}: |milp - oracle| objective"), (d.objective() - oracle.objective()).abs(), 1e-6));
        checks.push(Check::new(format!("instance {i}: milp above oracle"), (d.objective() - oracle.objective()).max(0.0), 1e-6));
        let kkt = bilevel::embedded_kkt(h, &hc)?;
        checks.push(Check::new(format!("instance {i}: lower-level kkt residual"), kkt.max(), 1e-6));
        checks.push(Check::new(format!("instance {i}: strong duality gap"), bilevel::verify_duality_identity(h, &hc), 1e-6));
    }
    Ok(Report { suite: Suite::Kkt, checks })
}

fn dro_suite(seed_value: u64) -> Result<Report, CliError> {
    let mut rng = seed::rng(seed_value, "validate/dro");
    let mut below: f64 = 0.0;
    let mut gap: f64 = 0.0;
    for _ in 0..200 {
        let lo: f64 = -rng.random_range(0.1..2.0);
        let hi: f64 = rng.random_range(0.1..2.0);
        let z1 = rng.random_range(0.0..hi.max(-lo));
        let z2 = rng.random_range(0.0..(lo * lo).max(hi * hi));
        let amb = AmbiguityHour::new(z1, z2, lo, hi)?;
        let f: [f64; 4] = std::array::from_fn(|_| rng.random_range(-5.0..5.0));
        let wc = dro::worst_case_expectation(&f, &amb)?;
        let atoms: Vec<LiftedPoint> =
            (0..6).map(|_| LiftedPoint::tight(rng.random_range(lo..hi))).chain([LiftedPoint::default()]).collect();
        if let Ok(v) = dro::sample_support_oracle(&f, &amb, &atoms) {
            below = below.max(v - wc.value);
        }
        let at_points = dro::sample_support_oracle(&f, &amb, &wc.points)?;
        gap = gap.max((wc.value - at_points).abs());
    }
    Ok(Report {
        suite: Suite::Dro,
        checks: vec![
            Check::new("sampled distributions above worst case", below.max(0.0), 1e-6),
            Check::new("worst case vs. its own support", gap, 1e-6),
        ],
    })
}

/// Closest feasible point found by scanning `p` on a fine grid and clamping `q`.
pub fn grid_projection(p: f64, q: f64, c: &DerCapability, h: f64) -> (f64, f64) {
    let mut best = (f64::INFINITY, (0.0, 0.0));
    let n = ((c.p_max - c.p_min) / h).ceil() as i64;
    for i in 0..=n {
        let pp = (c.p_min + i as f64 * h).min(c.p_max);
        if pp.abs() > c.s_max {
            continue;
        }
        let lim = (c.s_max * c.s_max - pp * pp).max(0.0).sqrt();
        let qq = q.clamp(-lim, lim);
        let d = (pp - p).powi(2) + (qq - q).powi(2);
        if d < best.0 {
            best = (d, (pp, qq));
        }
    }
    best.1
}

fn projection(seed_value: u64) -> Result<Report, CliError> {
    let mut rng = seed::rng(seed_value, "validate/projection");
    let h = 1e-3;
    let mut worst_excess: f64 = 0.0;
    let mut worst_feas: f64 = 0.0;
    for _ in 0..500 {
        let s_max = rng.random_range(0.2..2.0);
        let p_max = rng.random_range(0.0..s_max * 1.2);
        let p_min = rng.random_range(-0.5f64..1.0).min(p_max) * 0.5;
        let cap = DerCapability { p_min, p_max, s_max, a: 3.0, b: 1.0 };
        if cap.is_empty() {
            continue;
        }
        let (p, q) = (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
        let exact = rtmarket::project_feasible(p, q, &cap)?;
        let coarse = grid_projection(p, q, &cap, h);
        let d_exact = (exact.0 - p).powi(2) + (exact.1 - q).powi(2);
        let d_grid = (coarse.0 - p).powi(2) + (coarse.1 - q).powi(2);
        // The projection of a convex set satisfies |y - x*|^2 <= |y - x|^2 - |x* - p|^2.
        let gap = (coarse.0 - exact.0).powi(2) + (coarse.1 - exact.1).powi(2);
        worst_excess = worst_excess.max(gap - (d_grid - d_exact)).max(d_exact - d_grid);
        if !cap.contains(exact.0, exact.1, 1e-12) {
            worst_feas = worst_feas.max(1.0);
        }
    }
    Ok(Report {
        suite: Suite::Projection,
        checks: vec![
            Check::new("projected points feasible", worst_feas, 0.0),
            Check::new("optimality vs. grid search", worst_excess, 1e-9),
        ],
    })
}

/// Four-node test feeder used when no feeder is configured.
pub fn sample_feeder() -> FeederModel {
    let ders = vec![
        grid::DerRecord { node: 2, s_max_kva: 250.0, p_min_kw: 0.0, p_max_kw: 250.0, cost_a: 3.0, cost_b: 1.0 },
        grid::DerRecord { node: 3, s_max_kva: 250.0, p_min_kw: 0.0, p_max_kw: 250.0, cost_a: 3.0, cost_b: 1.0 },
        grid::DerRecord { node: 4, s_max_kva: 250.0, p_min_kw: 0.0, p_max_kw: 250.0, cost_a: 3.0, cost_b: 1.0 },
    ];
    let lines = [(0, 1, 0.6, 0.4), (1, 2, 0.8, 0.4), (2, 3, 1.0, 0.6), (1, 4, 0.6, 0.6)];
    FeederModel::from_lines(&lines, ders, FeederBases { base_mva: 1.0, base_kv: 4.8, v0: 1.0 }).expect("valid sample feeder")
}

fn powerflow(feeder: &FeederModel, seed_value: u64) -> Result<Report, CliError> {
    let sens = grid::sensitivity_matrices(feeder);
    let n = feeder.n;
    let mut rng = seed::rng(seed_value, "validate/powerflow");
    let mut symmetric: f64 = 0.0;
    let mut psd: f64 = 0.0;
    for m in [&sens.r, &sens.x] {
        if !m.is_symmetric() {
            symmetric = 1.0;
        }
        for _ in 0..50 {
            let z: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            psd = psd.max(-m.quadratic_form(&z));
        }
    }
    let zero = vec![0.0; n];
    let flat = grid::ac_power_flow(feeder, &zero, &zero)?;
    let flat_err = flat.voltages.iter().map(|v| (v - feeder.bases.v0).abs()).fold(0.0, f64::max);
    // Linearization error must shrink quadratically with the injection size.
    let direction: Vec<f64> = (0..n).map(|_| rng.random_range(-0.05..0.05)).collect();
    let err_at = |scale: f64| -> Result<f64, CliError> {
        let p: Vec<f64> = direction.iter().map(|d| d * scale).collect();
        let q: Vec<f64> = direction.iter().map(|d| 0.3 * d * scale).collect();
        let ac = grid::ac_power_flow(feeder, &p, &q)?;
        let lin = sens.voltages(&p, &q);
        Ok(ac.voltages.iter().zip(&lin).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
    };
    let (e1, e2) = (err_at(0.1)?, err_at(0.2)?);
    let ratio = if e1 > 1e-12 { e2 / e1 } else { 4.0 };
    Ok(Report {
        suite: Suite::Powerflow,
        checks: vec![
            Check::new("sensitivities symmetric", symmetric, 0.0),
            Check::new("sensitivities positive semidefinite", psd.max(0.0), 1e-12),
            Check::new("zero injection gives source voltage", flat_err, 1e-9),
            Check::new("linearization error ratio off 4 at 2x injection", (ratio - 4.0).abs(), 1.0),
        ],
    })
}

fn convergence(feeder: &FeederModel, rt: &RtConfig, e_rt_mwh: f64) -> Result<Report, CliError> {
    let sens = grid::sensitivity_matrices(feeder);
    let problem = RtProblem::new(feeder, &sens);
    let mut pv = vec![0.0; feeder.n];
    for d in &feeder.ders {
        pv[d.node - 1] = 0.9 * d.p_max_kw.min(d.s_max_kva);
    }
    let load = vec![0.0; feeder.n];
    let steps = 20_000;
    let window = TraceWindow { start_s: 0, dt_s: rt.dt_rt_s as u32, steps, nodes: feeder.n };
    let traces = TraceSet::constant(window, pv.clone(), load);
    let per_step = e_rt_mwh / (3600.0 / rt.dt_rt_s);
    let mut checks = Vec::new();
    for gamma in [0.0, rt.gamma] {
        let cfg = RtConfig { gamma, ..*rt };
        let trace = rtmarket::run_rt_until(&problem, &vec![per_step; steps], &traces, &cfg, Some(1e-10))?;
        let last = trace.last().ok_or_else(|| CliError::Input("empty trace".into()))?;
        let caps = problem.caps_at(&pv);
        let rep = rtmarket::optimality_report(&problem, last, &caps, &cfg);
        checks.push(Check::new(format!("gamma {gamma}: fixed-point residual"), last.residual, 1e-8));
        checks.push(Check::new(format!("gamma {gamma}: DER stationarity"), rep.stationarity, 1e-4));
        checks.push(Check::new(format!("gamma {gamma}: dual complementarity"), rep.complementarity, 1e-6));
    }
    Ok(Report { suite: Suite::Convergence, checks })
}

/// Runs one suite. The grid suites use the configured feeder when one is given.
pub fn run_suite(suite: Suite, cfg: Option<&RunConfig>, seed_value: u64) -> Result<Report, CliError> {
    let prices = cfg.map(|c| c.prices).unwrap_or_default();
    let feeder = match cfg {
        Some(c) if c.feeder_lines.is_some() && c.feeder_nodes.is_some() => {
            let files = c.rt_files()?;
            grid::load_feeder(files.lines, files.nodes, c.bases)?
        }
        _ => sample_feeder(),
    };
    let rt = cfg.map(|c| c.rt).unwrap_or_default();
    match suite {
        Suite::Kkt => kkt(&prices),
        Suite::Dro => dro_suite(seed_value),
        Suite::Projection => projection(seed_value),
        Suite::Powerflow => powerflow(&feeder, seed_value),
        Suite::Convergence => convergence(&feeder, &rt, 0.5),
    }
}
