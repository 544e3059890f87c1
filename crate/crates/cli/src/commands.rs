//! The `da-bid`, `rt-run` and `pipeline` commands.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use gridbid::bilevel::{self, DaDecision, DaRow};
use gridbid::dro::{self, LdrPolicy};
use gridbid::grid::{self, FeederModel};
use gridbid::market::{self, DsoForecast, HourCurves};
use gridbid::rtmarket::{self, RtConfig, RtProblem, RtTrace};
use gridbid::scenario::{self, TraceSet, TraceWindow};
use gridbid::solver::Status;
use gridbid::{exec, Execution};

use crate::config::RunConfig;
use crate::CliError;

pub const DECISION_FILE: &str = "da_decision.csv";
pub const POLICY_FILE: &str = "ldr_policy.csv";
pub const SAMPLES_FILE: &str = "forecast_samples.csv";
pub const DA_SUMMARY_FILE: &str = "da_summary.txt";
pub const TRACE_FILE: &str = "rt_trace.csv";
pub const RT_SUMMARY_FILE: &str = "rt_summary.txt";
pub const COMPARISON_FILE: &str = "comparison.csv";
pub const DA_COMPARISON_FILE: &str = "da_comparison.csv";

/// Market inputs shared by every day-ahead solve.
#[derive(Debug, Clone)]
pub struct MarketInputs {
    pub curves: Vec<HourCurves>,
    pub forecast: DsoForecast,
}

impl MarketInputs {
    pub fn load(cfg: &RunConfig) -> Result<Self, CliError> {
        let curves = market::read_curves(&cfg.curves)?;
        let forecast = market::read_forecast(&cfg.forecast, cfg.g_cap, cfg.tr_max)?;
        if curves.len() != forecast.horizon() || curves.len() != cfg.grid.horizon {
            return Err(CliError::Input(format!(
                "{} curve hours, {} forecast hours, horizon {}",
                curves.len(),
                forecast.horizon(),
                cfg.grid.horizon
            )));
        }
        Ok(MarketInputs { curves, forecast })
    }
}

#[derive(Debug, Clone)]
pub struct DaOutcome {
    pub sigma: f64,
    pub decision: DaDecision,
    pub policy: LdrPolicy,
}

impl DaOutcome {
    pub fn all_optimal(&self) -> bool {
        self.decision.all_optimal()
    }

    pub fn rows(&self) -> Vec<DaRow> {
        self.decision.rows()
    }
}

/// Solves the robust day-ahead problem for one sigma without writing anything.
pub fn solve_da(cfg: &RunConfig, inputs: &MarketInputs, sigma: f64) -> Result<DaOutcome, CliError> {
    let samples = scenario::sample_forecast_errors(sigma, &inputs.forecast, cfg.n_samples, cfg.seed)?;
    let ambiguity = dro::estimate_ambiguity(&samples.samples)?;
    let (decision, policy) =
        dro::solve_da_dro_with(&inputs.curves, &inputs.forecast, &cfg.prices, &ambiguity, &cfg.solver, Execution::default())?;
    log::info!("sigma {sigma}: offered {:.4} MWh, objective {:.2}", decision.total_offered(), decision.objective());
    if !decision.all_optimal() {
        log::warn!("sigma {sigma}: some hours stopped before proving optimality");
    }
    Ok(DaOutcome { sigma, decision, policy })
}

fn status_name(s: Status) -> &'static str {
    match s {
        Status::Optimal => "optimal",
        Status::Infeasible => "infeasible",
        Status::Unbounded => "unbounded",
        Status::GapNotClosed => "gap-not-closed",
    }
}

fn da_summary(out: &DaOutcome) -> String {
    let d = &out.decision;
    let mut s = String::new();
    let _ = writeln!(s, "sigma = {}", out.sigma);
    let _ = writeln!(s, "objective_eur = {}", d.objective());
    let _ = writeln!(s, "total_offered_mwh = {}", d.total_offered());
    let _ = writeln!(s, "total_bid_mwh = {}", d.hours.iter().map(|h| h.row.e_dab).sum::<f64>());
    let _ = writeln!(s, "all_optimal = {}", d.all_optimal());
    for h in &d.hours {
        let _ = writeln!(
            s,
            "hour_{:02} = {} net_sale={} lambda={} nodes={}",
            h.row.hour,
            status_name(h.status),
            h.row.net_sale(),
            h.row.lambda_da,
            h.nodes
        );
    }
    s
}

/// Writes decision, policy, samples and summary for a solved day into `dir`.
pub fn write_da(cfg: &RunConfig, inputs: &MarketInputs, out: &DaOutcome, dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)?;
    bilevel::write_decision(&dir.join(DECISION_FILE), &out.rows())?;
    dro::write_policy(&dir.join(POLICY_FILE), &out.policy)?;
    let samples = scenario::sample_forecast_errors(out.sigma, &inputs.forecast, cfg.n_samples, cfg.seed)?;
    scenario::write_samples(&dir.join(SAMPLES_FILE), &samples)?;
    std::fs::write(dir.join(DA_SUMMARY_FILE), da_summary(out))?;
    Ok(())
}

pub fn cmd_da_bid(cfg: &RunConfig, out_dir: &Path, sigma: f64) -> Result<DaOutcome, CliError> {
    let inputs = MarketInputs::load(cfg)?;
    let out = solve_da(cfg, &inputs, sigma)?;
    write_da(cfg, &inputs, &out, out_dir)?;
    Ok(out)
}

pub fn sigma_dir(sigma: f64) -> String {
    format!("sigma_{sigma}")
}

/// Solves every configured sigma into its own directory and writes a comparison table.
pub fn cmd_da_sweep(cfg: &RunConfig, out_dir: &Path) -> Result<Vec<DaOutcome>, CliError> {
    if cfg.sigmas.is_empty() {
        return Err(CliError::Usage("the sigma list is empty".into()));
    }
    let inputs = MarketInputs::load(cfg)?;
    let outs = exec::try_map(Execution::default(), &cfg.sigmas, |&s| solve_da(cfg, &inputs, s))?;
    let mut w = csv::Writer::from_path({
        std::fs::create_dir_all(out_dir)?;
        out_dir.join(DA_COMPARISON_FILE)
    })?;
    w.write_record(["sigma", "total_offered_mwh", "total_bid_mwh", "objective_eur", "all_optimal"])?;
    for o in &outs {
        write_da(cfg, &inputs, o, &out_dir.join(sigma_dir(o.sigma)))?;
        w.write_record(&[
            o.sigma.to_string(),
            o.decision.total_offered().to_string(),
            o.decision.hours.iter().map(|h| h.row.e_dab).sum::<f64>().to_string(),
            o.decision.objective().to_string(),
            o.all_optimal().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(outs)
}

/// Feeder, sensitivities and traces for the configured real-time hour.
#[derive(Debug, Clone)]
pub struct RtSetup {
    pub feeder: FeederModel,
    pub sens: grid::Sensitivity,
    pub traces: TraceSet,
}

impl RtSetup {
    pub fn load(cfg: &RunConfig) -> Result<Self, CliError> {
        let files = cfg.rt_files()?;
        let feeder = grid::load_feeder(files.lines, files.nodes, cfg.bases)?;
        let sens = grid::sensitivity_matrices(&feeder);
        grid::check_slater(&sens, cfg.rt.v_min, cfg.rt.v_max);
        let window = TraceWindow::hour(&cfg.grid, cfg.rt_hour, feeder.n);
        let traces = scenario::load_traces(files.pv, files.load, window, cfg.trace_unit)?;
        Ok(RtSetup { feeder, sens, traces })
    }

    pub fn problem(&self) -> RtProblem<'_> {
        RtProblem::new(&self.feeder, &self.sens)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RtSummary {
    pub gamma: f64,
    pub net_sale_mwh: f64,
    pub mean_abs_imbalance_mwh: f64,
    pub max_voltage: f64,
    pub max_voltage_after_transient: f64,
    pub min_voltage: f64,
    pub uncontrolled_max_voltage: f64,
    pub alpha_min: f64,
    pub alpha_max: f64,
    pub max_abs_alpha_dso: f64,
    pub steps: usize,
    pub v_max: f64,
}

impl RtSummary {
    pub fn uncontrolled_violation(&self) -> bool {
        self.uncontrolled_max_voltage > self.v_max
    }

    pub fn controlled_violation(&self) -> bool {
        self.max_voltage_after_transient > self.v_max
    }

    pub fn max_abs_alpha(&self) -> f64 {
        self.alpha_min.abs().max(self.alpha_max.abs())
    }

    fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "gamma = {}", self.gamma);
        let _ = writeln!(s, "steps = {}", self.steps);
        let _ = writeln!(s, "da_net_sale_mwh = {}", self.net_sale_mwh);
        let _ = writeln!(s, "mean_abs_imbalance_mwh = {}", self.mean_abs_imbalance_mwh);
        let _ = writeln!(s, "max_voltage_pu = {}", self.max_voltage);
        let _ = writeln!(s, "max_voltage_after_transient_pu = {}", self.max_voltage_after_transient);
        let _ = writeln!(s, "min_voltage_pu = {}", self.min_voltage);
        let _ = writeln!(s, "uncontrolled_max_voltage_pu = {}", self.uncontrolled_max_voltage);
        let _ = writeln!(s, "uncontrolled_violation = {}", self.uncontrolled_violation());
        let _ = writeln!(s, "controlled_violation = {}", self.controlled_violation());
        let _ = writeln!(s, "alpha_min = {}", self.alpha_min);
        let _ = writeln!(s, "alpha_max = {}", self.alpha_max);
        let _ = writeln!(s, "max_abs_alpha_dso = {}", self.max_abs_alpha_dso);
        s
    }
}

pub struct RtOutcome {
    pub trace: RtTrace,
    pub summary: RtSummary,
}

/// Runs the real-time loop for the configured hour against a day-ahead decision.
pub fn run_rt(cfg: &RunConfig, setup: &RtSetup, rows: &[DaRow], rt: &RtConfig) -> Result<RtOutcome, CliError> {
    if rows.len() != cfg.grid.horizon {
        return Err(CliError::Input(format!(
            "day-ahead decision has {} rows but the horizon is {}",
            rows.len(),
            cfg.grid.horizon
        )));
    }
    let reference = scenario::rt_reference(rows, &cfg.grid)?;
    let e_rt = reference.slot(cfg.rt_hour);
    let problem = setup.problem();
    log::info!("real-time hour {} with gamma {}", cfg.rt_hour, rt.gamma);
    let trace = rtmarket::run_rt_market(&problem, e_rt, &setup.traces, rt)?;
    let uncontrolled = rtmarket::run_uncontrolled(&problem, &setup.traces, rt)?;
    let (alpha_min, alpha_max) = trace.alpha_range();
    let summary = RtSummary {
        gamma: rt.gamma,
        net_sale_mwh: rows[cfg.rt_hour].net_sale(),
        mean_abs_imbalance_mwh: trace.mean_abs_imbalance(),
        max_voltage: trace.max_voltage_after(0),
        max_voltage_after_transient: trace.max_voltage_after(cfg.transient_steps),
        min_voltage: trace.min_voltage_after(0),
        uncontrolled_max_voltage: uncontrolled.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max),
        alpha_min,
        alpha_max,
        max_abs_alpha_dso: trace.max_abs_alpha_dso(),
        steps: trace.steps.len(),
        v_max: rt.v_max,
    };
    Ok(RtOutcome { trace, summary })
}

pub fn write_rt(out: &RtOutcome, dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)?;
    rtmarket::write_trace(&dir.join(TRACE_FILE), &out.trace)?;
    std::fs::write(dir.join(RT_SUMMARY_FILE), out.summary.render())?;
    Ok(())
}

pub fn cmd_rt_run(cfg: &RunConfig, da_file: &Path, out_dir: &Path, gamma: f64) -> Result<RtOutcome, CliError> {
    let rows = bilevel::read_decision(da_file)?;
    let setup = RtSetup::load(cfg)?;
    let rt = RtConfig { gamma, ..cfg.rt };
    let out = run_rt(cfg, &setup, &rows, &rt)?;
    write_rt(&out, out_dir)?;
    Ok(out)
}

pub fn run_dir(sigma: f64, gamma: f64) -> String {
    format!("sigma_{sigma}_gamma_{gamma}")
}

/// One row of the cross-run comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineRun {
    pub sigma: f64,
    pub dir: PathBuf,
    pub da_total_offered: f64,
    pub da_objective: f64,
    pub da_all_optimal: bool,
    pub summary: RtSummary,
}

/// Day-ahead solve per sigma, then a real-time run per (sigma, gamma) pair.
pub fn cmd_pipeline(cfg: &RunConfig, out_dir: &Path) -> Result<Vec<PipelineRun>, CliError> {
    if cfg.sigmas.is_empty() || cfg.gammas.is_empty() {
        return Err(CliError::Usage("pipeline needs at least one sigma and one gamma".into()));
    }
    let inputs = MarketInputs::load(cfg)?;
    let setup = RtSetup::load(cfg)?;
    let per_sigma = exec::try_map(Execution::default(), &cfg.sigmas, |&sigma| -> Result<Vec<PipelineRun>, CliError> {
        let da = solve_da(cfg, &inputs, sigma)?;
        let rows = da.rows();
        let mut runs = Vec::with_capacity(cfg.gammas.len());
        for &gamma in &cfg.gammas {
            let dir = out_dir.join(run_dir(sigma, gamma));
            write_da(cfg, &inputs, &da, &dir)?;
            let rt = run_rt(cfg, &setup, &rows, &RtConfig { gamma, ..cfg.rt })?;
            write_rt(&rt, &dir)?;
            runs.push(PipelineRun {
                sigma,
                dir,
                da_total_offered: da.decision.total_offered(),
                da_objective: da.decision.objective(),
                da_all_optimal: da.all_optimal(),
                summary: rt.summary,
            });
        }
        Ok(runs)
    })?;
    let runs: Vec<PipelineRun> = per_sigma.into_iter().flatten().collect();
    write_comparison(&out_dir.join(COMPARISON_FILE), &runs)?;
    Ok(runs)
}

pub const COMPARISON_HEADER: [&str; 12] = [
    "sigma",
    "gamma",
    "da_total_offered_mwh",
    "da_objective_eur",
    "rt_net_sale_mwh",
    "mean_abs_imbalance_mwh",
    "max_voltage_pu",
    "max_voltage_after_transient_pu",
    "uncontrolled_max_voltage_pu",
    "max_abs_alpha",
    "max_abs_alpha_dso",
    "voltage_violation",
];

fn write_comparison(path: &Path, runs: &[PipelineRun]) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(COMPARISON_HEADER)?;
    for r in runs {
        let s = &r.summary;
        w.write_record(&[
            r.sigma.to_string(),
            s.gamma.to_string(),
            r.da_total_offered.to_string(),
            r.da_objective.to_string(),
            s.net_sale_mwh.to_string(),
            s.mean_abs_imbalance_mwh.to_string(),
            s.max_voltage.to_string(),
            s.max_voltage_after_transient.to_string(),
            s.uncontrolled_max_voltage.to_string(),
            s.max_abs_alpha().to_string(),
            s.max_abs_alpha_dso.to_string(),
            s.controlled_violation().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
