//! Flat `key = value` run configuration.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use gridbid::grid::FeederBases;
use gridbid::market::{ImbalancePriceModel, TimeGrid};
use gridbid::rtmarket::{RtConfig, VoltageSource};
use gridbid::scenario::PowerUnit;
use gridbid::solver::SolverOptions;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}:{line}: expected `key = value`")]
    Syntax { path: String, line: usize },
    #[error("{path}:{line}: unknown key `{key}`")]
    UnknownKey { path: String, line: usize, key: String },
    #[error("{path}:{line}: key `{key}` given twice")]
    Duplicate { path: String, line: usize, key: String },
    #[error("{path}: missing required key `{0}`", path = .1)]
    Missing(String, String),
    #[error("bad value for `{key}`: {reason}")]
    BadValue { key: String, reason: String },
    #[error("`{key}` points to {path}, which does not exist")]
    MissingFile { key: String, path: String },
}

/// Every accepted key.
pub const KEYS: &[&str] = &[
    "curves",
    "forecast",
    "feeder_lines",
    "feeder_nodes",
    "pv_trace",
    "load_trace",
    "trace_unit",
    "out_dir",
    "a1",
    "a2",
    "p1",
    "p2",
    "g_cap",
    "tr_max",
    "sigma",
    "sigmas",
    "gammas",
    "n_samples",
    "seed",
    "gamma",
    "eta",
    "eps_p",
    "eps_q",
    "eps_lambda",
    "v_min",
    "v_max",
    "dt_da",
    "dt_rt",
    "horizon",
    "base_mva",
    "base_kv",
    "v0_pu",
    "rt_hour",
    "transient_steps",
    "voltage_source",
    "load_pf",
    "mip_gap",
    "node_limit",
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub curves: PathBuf,
    pub forecast: PathBuf,
    pub feeder_lines: Option<PathBuf>,
    pub feeder_nodes: Option<PathBuf>,
    pub pv_trace: Option<PathBuf>,
    pub load_trace: Option<PathBuf>,
    pub trace_unit: PowerUnit,
    pub out_dir: PathBuf,
    pub prices: ImbalancePriceModel,
    pub g_cap: f64,
    pub tr_max: f64,
    pub sigma: f64,
    pub sigmas: Vec<f64>,
    pub gammas: Vec<f64>,
    pub n_samples: usize,
    pub seed: u64,
    pub rt: RtConfig,
    pub grid: TimeGrid,
    pub bases: FeederBases,
    pub rt_hour: usize,
    /// Steps excluded from the post-transient voltage check.
    pub transient_steps: usize,
    pub solver: SolverOptions,
}

fn parse_pairs(path: &Path, text: &str) -> Result<BTreeMap<String, String>, ConfigError> {
    let p = || path.display().to_string();
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or(ConfigError::Syntax { path: p(), line: i + 1 })?;
        let key = key.trim();
        if key.is_empty() {
            return Err(ConfigError::Syntax { path: p(), line: i + 1 });
        }
        if !KEYS.contains(&key) {
            return Err(ConfigError::UnknownKey { path: p(), line: i + 1, key: key.into() });
        }
        if out.insert(key.to_string(), value.trim().to_string()).is_some() {
            return Err(ConfigError::Duplicate { path: p(), line: i + 1, key: key.into() });
        }
    }
    Ok(out)
}

struct Fields {
    map: BTreeMap<String, String>,
    base: PathBuf,
    origin: String,
}

impl Fields {
    fn get<T: FromStr>(&self, key: &str, default: T) -> Result<T, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        match self.map.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|e: T::Err| ConfigError::BadValue { key: key.into(), reason: format!("`{v}`: {e}") }),
        }
    }

    fn list(&self, key: &str, default: &[f64]) -> Result<Vec<f64>, ConfigError> {
        match self.map.get(key) {
            None => Ok(default.to_vec()),
            Some(v) if v.is_empty() => Ok(Vec::new()),
            Some(v) => v
                .split(',')
                .map(|s| {
                    s.trim().parse::<f64>().map_err(|e| ConfigError::BadValue { key: key.into(), reason: format!("`{s}`: {e}") })
                })
                .collect(),
        }
    }

    fn path(&self, key: &str) -> Result<Option<PathBuf>, ConfigError> {
        let Some(v) = self.map.get(key) else {
            return Ok(None);
        };
        let p = self.base.join(v);
        if !p.exists() {
            return Err(ConfigError::MissingFile { key: key.into(), path: p.display().to_string() });
        }
        Ok(Some(p))
    }

    fn required_path(&self, key: &str) -> Result<PathBuf, ConfigError> {
        self.path(key)?.ok_or_else(|| ConfigError::Missing(key.into(), self.origin.clone()))
    }
}

fn bad(key: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::BadValue { key: key.into(), reason: reason.into() }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::parse(path, &text)
    }

    /// Parses config text; relative paths resolve against the directory of `path`.
    pub fn parse(path: &Path, text: &str) -> Result<Self, ConfigError> {
        let map = parse_pairs(path, text)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let f = Fields { map, base, origin: path.display().to_string() };

        let defaults = ImbalancePriceModel::default();
        let prices = ImbalancePriceModel::new(
            f.get("a1", defaults.a1)?,
            f.get("a2", defaults.a2)?,
            f.get("p1", defaults.p1)?,
            f.get("p2", defaults.p2)?,
        )
        .map_err(|e| bad("a1", e.to_string()))?;

        let rt_default = RtConfig::default();
        let load_pf: f64 = f.get("load_pf", 0.95)?;
        if !(load_pf > 0.0 && load_pf <= 1.0) {
            return Err(bad("load_pf", format!("{load_pf} is not in (0, 1]")));
        }
        let dt_da: u32 = f.get("dt_da", 3600)?;
        let dt_rt: u32 = f.get("dt_rt", 5)?;
        let horizon: usize = f.get("horizon", 24)?;
        let grid = TimeGrid::new(horizon, dt_da, dt_rt).map_err(|e| bad("dt_rt", e.to_string()))?;
        let voltage_source: VoltageSource =
            f.get("voltage_source", "ac-sweep".to_string())?.parse().map_err(|e: String| bad("voltage_source", e))?;
        let rt = RtConfig {
            gamma: f.get("gamma", rt_default.gamma)?,
            eta: f.get("eta", rt_default.eta)?,
            eps_p: f.get("eps_p", rt_default.eps_p)?,
            eps_q: f.get("eps_q", rt_default.eps_q)?,
            eps_lambda: f.get("eps_lambda", rt_default.eps_lambda)?,
            v_min: f.get("v_min", rt_default.v_min)?,
            v_max: f.get("v_max", rt_default.v_max)?,
            dt_rt_s: f64::from(dt_rt),
            voltage_source,
            load_q_ratio: (1.0 - load_pf * load_pf).sqrt() / load_pf,
            execution: rt_default.execution,
        };
        rt.validate().map_err(|e| bad("gamma", e.to_string()))?;

        let solver_default = gridbid::bilevel::milp_options();
        let solver = SolverOptions {
            relative_gap: f.get("mip_gap", solver_default.relative_gap)?,
            node_limit: f.get("node_limit", solver_default.node_limit)?,
            ..solver_default
        };

        let cfg = RunConfig {
            curves: f.required_path("curves")?,
            forecast: f.required_path("forecast")?,
            feeder_lines: f.path("feeder_lines")?,
            feeder_nodes: f.path("feeder_nodes")?,
            pv_trace: f.path("pv_trace")?,
            load_trace: f.path("load_trace")?,
            trace_unit: f.get("trace_unit", "kW".to_string())?.parse().map_err(|e: String| bad("trace_unit", e))?,
            out_dir: f.base.join(f.get("out_dir", "out".to_string())?),
            prices,
            g_cap: f.get("g_cap", 0.0)?,
            tr_max: f.get("tr_max", 0.0)?,
            sigma: f.get("sigma", 0.0)?,
            sigmas: f.list("sigmas", &[0.0, 0.1, 0.2])?,
            gammas: f.list("gammas", &[5.0, 30.0])?,
            n_samples: f.get("n_samples", 1000)?,
            seed: f.get("seed", 42)?,
            rt,
            grid,
            bases: FeederBases {
                base_mva: f.get("base_mva", 1.0)?,
                base_kv: f.get("base_kv", 4.8)?,
                v0: f.get("v0_pu", 1.0)?,
            },
            rt_hour: f.get("rt_hour", 12)?,
            transient_steps: f.get("transient_steps", 60)?,
            solver,
        };
        cfg.check()?;
        Ok(cfg)
    }

    fn check(&self) -> Result<(), ConfigError> {
        if !(self.g_cap > 0.0) {
            return Err(bad("g_cap", "must be positive"));
        }
        if !(self.tr_max > 0.0) {
            return Err(bad("tr_max", "must be positive"));
        }
        for (key, values) in [("sigma", std::slice::from_ref(&self.sigma)), ("sigmas", &self.sigmas[..])] {
            if values.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
                return Err(bad(key, "sigma fractions must be nonnegative"));
            }
        }
        if self.gammas.iter().any(|g| !(*g >= 0.0)) {
            return Err(bad("gammas", "weights must be nonnegative"));
        }
        if self.n_samples == 0 {
            return Err(bad("n_samples", "need at least one sample"));
        }
        if self.rt_hour >= self.grid.horizon {
            return Err(bad("rt_hour", format!("{} is outside the {}-slot horizon", self.rt_hour, self.grid.horizon)));
        }
        Ok(())
    }

    /// Feeder, trace and node files needed by real-time runs.
    pub fn rt_files(&self) -> Result<RtFiles<'_>, ConfigError> {
        fn need<'a>(p: &'a Option<PathBuf>, key: &str) -> Result<&'a Path, ConfigError> {
            p.as_deref().ok_or_else(|| bad(key, "required for real-time runs"))
        }
        Ok(RtFiles {
            lines: need(&self.feeder_lines, "feeder_lines")?,
            nodes: need(&self.feeder_nodes, "feeder_nodes")?,
            pv: need(&self.pv_trace, "pv_trace")?,
            load: need(&self.load_trace, "load_trace")?,
        })
    }
}

pub struct RtFiles<'a> {
    pub lines: &'a Path,
    pub nodes: &'a Path,
    pub pv: &'a Path,
    pub load: &'a Path,
}
