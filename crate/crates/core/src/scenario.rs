//! Forecast-error sampling, trace ingestion and the day-ahead to real-time coupling.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::bilevel::DaRow;
use crate::market::{DsoForecast, TimeGrid};
use crate::seed;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("sigma fraction must be finite and nonnegative, got {0}")]
    InvalidSigma(f64),
    #[error("at least one sample is required")]
    NoSamples,
    #[error("real-time step {dt_rt} s does not divide the day-ahead slot {dt_da} s")]
    MisalignedGrids { dt_da: u32, dt_rt: u32 },
    #[error("{path}: no value for node {node} at t = {timestamp} s")]
    TraceGap { path: String, node: usize, timestamp: u64 },
    #[error("{path}: file is in {found} but the configuration expects {expected}")]
    UnitMismatch { path: String, found: PowerUnit, expected: PowerUnit },
    #[error("{path}: {message}")]
    Format { path: String, message: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Forecast-error samples per hour, in MWh, clamped to the physical output range.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastSampleSet {
    pub sigma_fraction: f64,
    pub seed: u64,
    pub samples: Vec<Vec<f64>>,
}

impl ForecastSampleSet {
    /// Samples shifted to zero mean per hour.
    pub fn centered(&self) -> Vec<Vec<f64>> {
        self.samples
            .iter()
            .map(|s| {
                let mean = s.iter().sum::<f64>() / s.len() as f64;
                s.iter().map(|d| d - mean).collect()
            })
            .collect()
    }
}

/// Draws `n` Gaussian errors per hour with std `sigma_fraction * G_cap` and clamps them so
/// realised output stays in `[0, G_cap]`.
///
/// The standard-normal draws depend only on `seed`, never on `sigma_fraction`, so a sweep
/// over sigma compares the same underlying noise.
pub fn sample_forecast_errors(
    sigma_fraction: f64,
    forecast: &DsoForecast,
    n: usize,
    seed: u64,
) -> Result<ForecastSampleSet, ScenarioError> {
    if !(sigma_fraction >= 0.0) || !sigma_fraction.is_finite() {
        return Err(ScenarioError::InvalidSigma(sigma_fraction));
    }
    if n == 0 {
        return Err(ScenarioError::NoSamples);
    }
    let std = sigma_fraction * forecast.g_cap;
    let samples = (0..forecast.horizon())
        .map(|t| {
            let mut rng = seed::rng(seed, &format!("forecast-error/{t}"));
            let g = forecast.generation[t];
            (0..n)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    (std * z).clamp(-g, forecast.g_cap - g)
                })
                .collect()
        })
        .collect();
    Ok(ForecastSampleSet { sigma_fraction, seed, samples })
}

pub const SAMPLE_HEADER: [&str; 3] = ["hour", "sample_index", "delta_mwh"];

pub fn write_samples(path: &Path, set: &ForecastSampleSet) -> Result<(), ScenarioError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(SAMPLE_HEADER)?;
    for (t, s) in set.samples.iter().enumerate() {
        for (i, d) in s.iter().enumerate() {
            w.write_record(&[t.to_string(), i.to_string(), d.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a sample dump back into per-hour vectors.
pub fn read_samples(path: &Path) -> Result<Vec<Vec<f64>>, ScenarioError> {
    let fmt = |message: String| ScenarioError::Format { path: path.display().to_string(), message };
    let mut rdr = csv::Reader::from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(|s| s.trim().to_string()).collect();
    if header != SAMPLE_HEADER {
        return Err(fmt(format!("expected header `{}`", SAMPLE_HEADER.join(","))));
    }
    let mut out: Vec<Vec<f64>> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let t: usize = rec.get(0).and_then(|s| s.trim().parse().ok()).ok_or_else(|| fmt(format!("line {line}: bad hour")))?;
        let d: f64 = rec.get(2).and_then(|s| s.trim().parse().ok()).ok_or_else(|| fmt(format!("line {line}: bad delta")))?;
        if out.len() <= t {
            out.resize(t + 1, Vec::new());
        }
        out[t].push(d);
    }
    Ok(out)
}

/// Per-step real-time energy references, MWh.
#[derive(Debug, Clone, PartialEq)]
pub struct RtReferenceSeries {
    pub steps_per_slot: usize,
    pub e_rt: Vec<f64>,
}

impl RtReferenceSeries {
    /// References for the steps of one day-ahead slot.
    pub fn slot(&self, hour: usize) -> &[f64] {
        &self.e_rt[hour * self.steps_per_slot..(hour + 1) * self.steps_per_slot]
    }
}

/// Spreads every hour's net day-ahead sale uniformly over its real-time steps.
pub fn rt_reference(rows: &[DaRow], grid: &TimeGrid) -> Result<RtReferenceSeries, ScenarioError> {
    if grid.dt_rt == 0 || grid.dt_da % grid.dt_rt != 0 {
        return Err(ScenarioError::MisalignedGrids { dt_da: grid.dt_da, dt_rt: grid.dt_rt });
    }
    let m = grid.steps_per_slot();
    let mut e_rt = Vec::with_capacity(rows.len() * m);
    for r in rows {
        let per_step = r.net_sale() / m as f64;
        e_rt.extend(std::iter::repeat_n(per_step, m));
    }
    Ok(RtReferenceSeries { steps_per_slot: m, e_rt })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PowerUnit {
    Kw,
    Mw,
}

impl PowerUnit {
    fn column(self) -> &'static str {
        match self {
            PowerUnit::Kw => "value_kw",
            PowerUnit::Mw => "value_mw",
        }
    }

    fn to_kw(self, v: f64) -> f64 {
        match self {
            PowerUnit::Kw => v,
            PowerUnit::Mw => v * 1000.0,
        }
    }
}

impl fmt::Display for PowerUnit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PowerUnit::Kw => "kW",
            PowerUnit::Mw => "MW",
        })
    }
}

impl FromStr for PowerUnit {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "kw" => Ok(PowerUnit::Kw),
            "mw" => Ok(PowerUnit::Mw),
            other => Err(format!("unknown power unit `{other}` (expected kW or MW)")),
        }
    }
}

/// Which real-time steps to read from a trace file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceWindow {
    pub start_s: u64,
    pub dt_s: u32,
    pub steps: usize,
    /// Number of non-substation nodes.
    pub nodes: usize,
}

impl TraceWindow {
    /// The window covering day-ahead slot `hour`.
    pub fn hour(grid: &TimeGrid, hour: usize, nodes: usize) -> Self {
        TraceWindow {
            start_s: hour as u64 * u64::from(grid.dt_da),
            dt_s: grid.dt_rt,
            steps: grid.steps_per_slot(),
            nodes,
        }
    }

    pub fn timestamp(&self, k: usize) -> u64 {
        self.start_s + k as u64 * u64::from(self.dt_s)
    }
}

/// Per-step, per-node series in kW; `series[k][i]` belongs to node `i + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceSet {
    pub window: TraceWindow,
    pub pv_kw: Vec<Vec<f64>>,
    pub load_kw: Vec<Vec<f64>>,
}

impl TraceSet {
    /// A trace that repeats one snapshot for every step.
    pub fn constant(window: TraceWindow, pv_kw: Vec<f64>, load_kw: Vec<f64>) -> Self {
        TraceSet { window, pv_kw: vec![pv_kw; window.steps], load_kw: vec![load_kw; window.steps] }
    }

    pub fn steps(&self) -> usize {
        self.window.steps
    }

    pub fn total_load_kw(&self, k: usize) -> f64 {
        self.load_kw[k].iter().sum()
    }
}

pub fn trace_header(unit: PowerUnit) -> [&'static str; 3] {
    ["timestamp_s", "node", unit.column()]
}

fn read_series(path: &Path, window: &TraceWindow, unit: PowerUnit) -> Result<Vec<Vec<f64>>, ScenarioError> {
    let fmt = |message: String| ScenarioError::Format { path: path.display().to_string(), message };
    let mut rdr = csv::Reader::from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(|s| s.trim().to_string()).collect();
    let found = match header.get(2).map(String::as_str) {
        Some("value_kw") => PowerUnit::Kw,
        Some("value_mw") => PowerUnit::Mw,
        _ => return Err(fmt("expected header `timestamp_s,node,value_kw` or `timestamp_s,node,value_mw`".into())),
    };
    if header[0] != "timestamp_s" || header[1] != "node" || header.len() != 3 {
        return Err(fmt("expected header `timestamp_s,node,value_kw`".into()));
    }
    if found != unit {
        return Err(ScenarioError::UnitMismatch { path: path.display().to_string(), found, expected: unit });
    }
    let end = window.timestamp(window.steps);
    let mut by_node: BTreeMap<usize, Vec<Option<f64>>> = BTreeMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let field = |k: usize| rec.get(k).map(str::trim).unwrap_or("");
        let ts: u64 = field(0).parse().map_err(|_| fmt(format!("line {line}: bad timestamp `{}`", field(0))))?;
        let node: usize = field(1).parse().map_err(|_| fmt(format!("line {line}: bad node `{}`", field(1))))?;
        let value: f64 = field(2).parse().map_err(|_| fmt(format!("line {line}: bad value `{}`", field(2))))?;
        if !value.is_finite() {
            return Err(fmt(format!("line {line}: value is not finite")));
        }
        if node == 0 || node > window.nodes {
            return Err(fmt(format!("line {line}: node {node} is not a feeder node")));
        }
        if ts < window.start_s || ts >= end || (ts - window.start_s) % u64::from(window.dt_s) != 0 {
            continue;
        }
        let k = ((ts - window.start_s) / u64::from(window.dt_s)) as usize;
        by_node.entry(node).or_insert_with(|| vec![None; window.steps])[k] = Some(unit.to_kw(value));
    }
    let mut out = vec![vec![0.0; window.nodes]; window.steps];
    for (node, series) in by_node {
        for (k, v) in series.into_iter().enumerate() {
            match v {
                Some(v) => out[k][node - 1] = v,
                None => {
                    return Err(ScenarioError::TraceGap {
                        path: path.display().to_string(),
                        node,
                        timestamp: window.timestamp(k),
                    })
                }
            }
        }
    }
    Ok(out)
}

/// Reads PV availability and load traces for the steps in `window`.
///
/// Nodes absent from a file are taken as zero; a node that appears must cover every step.
pub fn load_traces(pv_file: &Path, load_file: &Path, window: TraceWindow, unit: PowerUnit) -> Result<TraceSet, ScenarioError> {
    Ok(TraceSet {
        window,
        pv_kw: read_series(pv_file, &window, unit)?,
        load_kw: read_series(load_file, &window, unit)?,
    })
}

/// Writes one series in the trace format, only for nodes with a nonzero value.
pub fn write_trace(path: &Path, window: &TraceWindow, series: &[Vec<f64>]) -> Result<(), ScenarioError> {
    let active: Vec<usize> = (0..window.nodes).filter(|&i| series.iter().any(|s| s[i] != 0.0)).collect();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(trace_header(PowerUnit::Kw))?;
    for (k, s) in series.iter().enumerate() {
        for &i in &active {
            w.write_record(&[window.timestamp(k).to_string(), (i + 1).to_string(), s[i].to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}
