//! Market data: block curves, time grid, balancing prices and the DSO forecast.

use std::fmt;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MarketError {
    #[error("non-finite price {price} in {side} curve for hour {hour}")]
    NonFinitePrice { side: Side, hour: usize, price: f64 },
    #[error("negative quantity {quantity} in {side} curve for hour {hour}")]
    NegativeQuantity { side: Side, hour: usize, quantity: f64 },
    #[error("{side} curve for hour {hour} is empty after dropping zero-quantity blocks")]
    EmptyCurve { side: Side, hour: usize },
    #[error("invalid time grid: {0}")]
    InvalidGrid(String),
    #[error("invalid imbalance price model: {0}")]
    InvalidPriceModel(String),
    #[error("invalid forecast: {0}")]
    InvalidForecast(String),
    #[error("{path}: {message}")]
    Format { path: String, message: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Supply,
    Demand,
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::Supply => "supply",
            Side::Demand => "demand",
        })
    }
}

impl std::str::FromStr for Side {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "supply" => Ok(Side::Supply),
            "demand" => Ok(Side::Demand),
            other => Err(format!("unknown side `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Block {
    /// EUR/MWh.
    pub price: f64,
    /// MWh; also the block's dispatch cap.
    pub quantity: f64,
    pub index: usize,
}

/// A step-wise curve for one hour. Supply is sorted by rising price, demand by falling price.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockCurve {
    pub side: Side,
    pub hour: usize,
    pub blocks: Vec<Block>,
}

impl BlockCurve {
    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn total_quantity(&self) -> f64 {
        self.blocks.iter().map(|b| b.quantity).sum()
    }

    pub fn prices(&self) -> impl Iterator<Item = f64> + '_ {
        self.blocks.iter().map(|b| b.price)
    }

    pub fn raw(&self) -> Vec<(f64, f64)> {
        self.blocks.iter().map(|b| (b.price, b.quantity)).collect()
    }
}

pub fn build_curve(side: Side, hour: usize, raw: &[(f64, f64)]) -> Result<BlockCurve, MarketError> {
    let mut kept = Vec::with_capacity(raw.len());
    for &(price, quantity) in raw {
        if !price.is_finite() {
            return Err(MarketError::NonFinitePrice { side, hour, price });
        }
        if !(quantity >= 0.0) || !quantity.is_finite() {
            return Err(MarketError::NegativeQuantity { side, hour, quantity });
        }
        if quantity > 0.0 {
            kept.push((price, quantity));
        }
    }
    if kept.is_empty() {
        return Err(MarketError::EmptyCurve { side, hour });
    }
    // Vec::sort_by is stable, so equal prices keep their input order.
    match side {
        Side::Supply => kept.sort_by(|a, b| a.0.total_cmp(&b.0)),
        Side::Demand => kept.sort_by(|a, b| b.0.total_cmp(&a.0)),
    }
    let blocks = kept
        .into_iter()
        .enumerate()
        .map(|(index, (price, quantity))| Block { price, quantity, index })
        .collect();
    Ok(BlockCurve { side, hour, blocks })
}

/// Both curves of one hour.
#[derive(Debug, Clone, PartialEq)]
pub struct HourCurves {
    pub supply: BlockCurve,
    pub demand: BlockCurve,
}

impl HourCurves {
    pub fn hour(&self) -> usize {
        self.supply.hour
    }

    /// Lowest and highest price over both curves.
    pub fn price_range(&self) -> (f64, f64) {
        self.supply
            .prices()
            .chain(self.demand.prices())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p), hi.max(p)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub horizon: usize,
    /// Day-ahead slot length in seconds.
    pub dt_da: u32,
    /// Real-time slot length in seconds.
    pub dt_rt: u32,
}

impl TimeGrid {
    pub fn new(horizon: usize, dt_da: u32, dt_rt: u32) -> Result<Self, MarketError> {
        if horizon == 0 {
            return Err(MarketError::InvalidGrid("horizon must be at least one slot".into()));
        }
        if dt_rt == 0 || dt_da == 0 || dt_da % dt_rt != 0 {
            return Err(MarketError::InvalidGrid(format!(
                "day-ahead slot {dt_da} s is not a multiple of real-time slot {dt_rt} s"
            )));
        }
        Ok(TimeGrid { horizon, dt_da, dt_rt })
    }

    pub fn steps_per_slot(&self) -> usize {
        (self.dt_da / self.dt_rt) as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImbalancePriceModel {
    pub a1: f64,
    pub a2: f64,
    pub p1: f64,
    pub p2: f64,
}

impl Default for ImbalancePriceModel {
    fn default() -> Self {
        ImbalancePriceModel { a1: 0.7, a2: 1.7, p1: 15.0, p2: 20.0 }
    }
}

impl ImbalancePriceModel {
    pub fn new(a1: f64, a2: f64, p1: f64, p2: f64) -> Result<Self, MarketError> {
        let model = ImbalancePriceModel { a1, a2, p1, p2 };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<(), MarketError> {
        if ![self.a1, self.a2, self.p1, self.p2].iter().all(|v| v.is_finite()) {
            return Err(MarketError::InvalidPriceModel("parameters must be finite".into()));
        }
        if self.a1 < 0.0 || self.a2 < 0.0 {
            return Err(MarketError::InvalidPriceModel(format!(
                "multipliers must be nonnegative (a1={}, a2={})",
                self.a1, self.a2
            )));
        }
        Ok(())
    }
}

/// Balancing prices `(pr_plus, pr_minus)` for surplus sold and shortfall bought.
/// `pr_plus` is left negative when the day-ahead price falls below `p1`.
pub fn imbalance_prices(model: &ImbalancePriceModel, da_price: f64) -> (f64, f64) {
    (model.a1 * (da_price - model.p1), model.a2 * (da_price + model.p2))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DsoForecast {
    /// Forecast generation per hour, MWh.
    pub generation: Vec<f64>,
    /// Forecast load per hour, MWh.
    pub load: Vec<f64>,
    /// Generation capacity per slot, MWh.
    pub g_cap: f64,
    /// Transmission limit per slot, MWh.
    pub tr_max: f64,
}

impl DsoForecast {
    pub fn new(generation: Vec<f64>, load: Vec<f64>, g_cap: f64, tr_max: f64) -> Result<Self, MarketError> {
        let f = DsoForecast { generation, load, g_cap, tr_max };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<(), MarketError> {
        if self.generation.len() != self.load.len() {
            return Err(MarketError::InvalidForecast(format!(
                "{} generation values but {} load values",
                self.generation.len(),
                self.load.len()
            )));
        }
        if !(self.tr_max > 0.0) || !self.tr_max.is_finite() {
            return Err(MarketError::InvalidForecast(format!("Tr_max must be positive, got {}", self.tr_max)));
        }
        if !(self.g_cap >= 0.0) || !self.g_cap.is_finite() {
            return Err(MarketError::InvalidForecast(format!("G_cap must be nonnegative, got {}", self.g_cap)));
        }
        for (t, (&g, &l)) in self.generation.iter().zip(&self.load).enumerate() {
            if !(0.0..=self.g_cap).contains(&g) {
                return Err(MarketError::InvalidForecast(format!(
                    "hour {t}: generation {g} outside [0, {}]",
                    self.g_cap
                )));
            }
            if !(l >= 0.0) || !l.is_finite() {
                return Err(MarketError::InvalidForecast(format!("hour {t}: load {l} is negative")));
            }
        }
        Ok(())
    }

    pub fn horizon(&self) -> usize {
        self.generation.len()
    }

    /// Net position `G_t - L_t`.
    pub fn net(&self, hour: usize) -> f64 {
        self.generation[hour] - self.load[hour]
    }
}

fn format_err(path: &Path, message: impl Into<String>) -> MarketError {
    MarketError::Format { path: path.display().to_string(), message: message.into() }
}

fn parse_f64(path: &Path, line: usize, field: &str, value: &str) -> Result<f64, MarketError> {
    value
        .trim()
        .parse::<f64>()
        .map_err(|_| format_err(path, format!("line {line}: `{field}` is not a number: `{value}`")))
}

fn check_header(path: &Path, rdr: &mut csv::Reader<std::fs::File>, expected: &[&str]) -> Result<(), MarketError> {
    let header = rdr.headers()?;
    let got: Vec<&str> = header.iter().map(str::trim).collect();
    if got != expected {
        return Err(format_err(path, format!("expected header `{}`, found `{}`", expected.join(","), got.join(","))));
    }
    Ok(())
}

const CURVE_HEADER: [&str; 4] = ["hour", "side", "price_eur_mwh", "quantity_mwh"];

/// Reads a curve CSV with one row per block. Hours must be contiguous from 0.
pub fn read_curves(path: &Path) -> Result<Vec<HourCurves>, MarketError> {
    let mut rdr = csv::Reader::from_path(path)?;
    check_header(path, &mut rdr, &CURVE_HEADER)?;
    let mut raw: Vec<[Vec<(f64, f64)>; 2]> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        if rec.len() != 4 {
            return Err(format_err(path, format!("line {line}: expected 4 fields")));
        }
        let hour: usize = rec[0]
            .trim()
            .parse()
            .map_err(|_| format_err(path, format!("line {line}: bad hour `{}`", &rec[0])))?;
        let side: Side = rec[1].parse().map_err(|e: String| format_err(path, format!("line {line}: {e}")))?;
        let price = parse_f64(path, line, "price_eur_mwh", &rec[2])?;
        let quantity = parse_f64(path, line, "quantity_mwh", &rec[3])?;
        if raw.len() <= hour {
            raw.resize_with(hour + 1, Default::default);
        }
        raw[hour][side as usize].push((price, quantity));
    }
    if raw.is_empty() {
        return Err(format_err(path, "no curve rows"));
    }
    raw.iter()
        .enumerate()
        .map(|(hour, [s, d])| {
            Ok(HourCurves {
                supply: build_curve(Side::Supply, hour, s)?,
                demand: build_curve(Side::Demand, hour, d)?,
            })
        })
        .collect()
}

pub fn write_curves(path: &Path, curves: &[HourCurves]) -> Result<(), MarketError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(CURVE_HEADER)?;
    for hc in curves {
        for curve in [&hc.supply, &hc.demand] {
            for b in &curve.blocks {
                w.write_record(&[
                    curve.hour.to_string(),
                    curve.side.to_string(),
                    b.price.to_string(),
                    b.quantity.to_string(),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

const FORECAST_HEADER: [&str; 3] = ["hour", "generation_mwh", "load_mwh"];

/// Reads `hour,generation_mwh,load_mwh` rows; capacity and transmission limits come from the caller.
pub fn read_forecast(path: &Path, g_cap: f64, tr_max: f64) -> Result<DsoForecast, MarketError> {
    let mut rdr = csv::Reader::from_path(path)?;
    check_header(path, &mut rdr, &FORECAST_HEADER)?;
    let (mut generation, mut load) = (Vec::new(), Vec::new());
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        if rec.len() != 3 {
            return Err(format_err(path, format!("line {line}: expected 3 fields")));
        }
        let hour: usize = rec[0]
            .trim()
            .parse()
            .map_err(|_| format_err(path, format!("line {line}: bad hour `{}`", &rec[0])))?;
        if hour != generation.len() {
            return Err(format_err(path, format!("line {line}: expected hour {}, found {hour}", generation.len())));
        }
        generation.push(parse_f64(path, line, "generation_mwh", &rec[1])?);
        load.push(parse_f64(path, line, "load_mwh", &rec[2])?);
    }
    DsoForecast::new(generation, load, g_cap, tr_max)
}

pub fn write_forecast(path: &Path, forecast: &DsoForecast) -> Result<(), MarketError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(FORECAST_HEADER)?;
    for (t, (g, l)) in forecast.generation.iter().zip(&forecast.load).enumerate() {
        w.write_record(&[t.to_string(), g.to_string(), l.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
