//! Regenerates the shipped scenario under `data/`.
//!
//! The feeder is a single-phase equivalent of the IEEE 37-node test feeder with 18 PV
//! inverters. Market curves clear at 40 EUR/MWh in every hour.
//!
//!     cargo run -p gridbid-cli --example gen_scenario -- data

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use gridbid::market::{build_curve, write_curves, write_forecast, DsoForecast, HourCurves, Side, TimeGrid};
use gridbid::scenario::{write_trace, TraceWindow};

/// Buses in breadth-first order; the index is the node number, 799 is the substation.
const BUSES: [u32; 37] = [
    799, 701, 702, 705, 713, 703, 742, 712, 704, 727, 730, 714, 720, 744, 709, 718, 707, 706, 728, 729, 731, 708, 775,
    724, 722, 725, 733, 732, 734, 737, 710, 738, 735, 736, 711, 741, 740,
];

/// (from bus, to bus, length ft, cable configuration); 0 marks the 709-775 transformer.
const SEGMENTS: [(u32, u32, f64, u32); 36] = [
    (799, 701, 1850.0, 721),
    (701, 702, 960.0, 722),
    (702, 705, 400.0, 724),
    (702, 713, 360.0, 723),
    (702, 703, 1320.0, 722),
    (703, 727, 240.0, 724),
    (703, 730, 600.0, 723),
    (704, 714, 80.0, 724),
    (704, 720, 800.0, 723),
    (705, 742, 320.0, 724),
    (705, 712, 240.0, 724),
    (706, 725, 280.0, 724),
    (707, 724, 760.0, 724),
    (707, 722, 120.0, 724),
    (708, 733, 320.0, 723),
    (708, 732, 320.0, 724),
    (709, 731, 600.0, 723),
    (709, 708, 320.0, 723),
    (710, 735, 200.0, 724),
    (710, 736, 1280.0, 724),
    (711, 741, 400.0, 723),
    (711, 740, 200.0, 724),
    (713, 704, 520.0, 723),
    (714, 718, 520.0, 724),
    (720, 707, 920.0, 724),
    (720, 706, 600.0, 723),
    (727, 744, 280.0, 723),
    (730, 709, 200.0, 723),
    (733, 734, 560.0, 723),
    (734, 737, 640.0, 723),
    (734, 710, 520.0, 724),
    (737, 738, 400.0, 723),
    (738, 711, 400.0, 723),
    (744, 728, 200.0, 724),
    (744, 729, 280.0, 724),
    (709, 775, 0.0, 0),
];

/// Positive-sequence cable impedance, ohm per mile.
fn cable(config: u32) -> (f64, f64) {
    match config {
        721 => (0.2926, 0.1973),
        722 => (0.4751, 0.2973),
        723 => (1.2936, 0.6713),
        724 => (2.0952, 0.7758),
        _ => unreachable!(),
    }
}

/// Spot loads, kW summed over phases.
const LOADS: [(u32, f64); 25] = [
    (701, 630.0),
    (712, 85.0),
    (713, 85.0),
    (714, 38.0),
    (718, 85.0),
    (720, 85.0),
    (722, 161.0),
    (724, 42.0),
    (725, 42.0),
    (727, 42.0),
    (728, 126.0),
    (729, 42.0),
    (730, 85.0),
    (731, 85.0),
    (732, 42.0),
    (733, 85.0),
    (734, 42.0),
    (735, 85.0),
    (736, 42.0),
    (737, 140.0),
    (738, 126.0),
    (740, 85.0),
    (741, 42.0),
    (742, 93.0),
    (744, 42.0),
];

const PV_BUSES: [u32; 18] = [705, 742, 712, 727, 714, 744, 718, 728, 729, 731, 724, 722, 725, 732, 737, 735, 736, 741];

const RT_HOUR: usize = 12;

fn node(bus: u32) -> usize {
    BUSES.iter().position(|&b| b == bus).unwrap()
}

fn rating(bus: u32) -> f64 {
    if bus == 705 {
        340.0
    } else {
        200.0
    }
}

/// Clear-sky availability as a fraction of rating for hour `t` (fractional hours allowed).
fn solar(t: f64) -> f64 {
    (0.9 * (PI * (t - 6.0) / 12.0).sin()).max(0.0)
}

fn load_factor(t: f64) -> f64 {
    0.6 - 0.2 * (PI * (t - 6.0) / 12.0).sin().max(0.0) + 0.15 * (PI * (t - 19.0) / 6.0).cos().max(0.0)
}

/// Passing clouds: a few smooth dips in irradiance during the real-time hour.
fn cloud(seconds: f64) -> f64 {
    let dips = [(43900.0, 300.0, 0.15), (45000.0, 400.0, 0.1), (45900.0, 250.0, 0.2)];
    let shade: f64 = dips.iter().map(|(c, w, d)| d * (-((seconds - c) / w).powi(2)).exp()).sum();
    1.0 - shade.min(0.5) + 0.005 * (seconds / 90.0).sin()
}

fn curves_for(t: usize) -> HourCurves {
    let s = 1.0 + 0.08 * (t as f64 * 0.7).sin();
    let supply = [
        (5.0, 30.0),
        (12.0, 40.0),
        (20.0, 40.0),
        (28.0, 50.0),
        (35.0, 50.0),
        (40.0, 80.0),
        (48.0, 50.0),
        (55.0, 40.0),
        (65.0, 40.0),
        (80.0, 30.0),
        (95.0, 30.0),
    ];
    let demand = [
        (150.0, 30.0),
        (120.0, 30.0),
        (100.0, 40.0),
        (85.0, 40.0),
        (70.0, 40.0),
        (60.0, 30.0),
        (52.0, 20.0),
        (45.0, 20.0),
        (38.0, 40.0),
        (30.0, 40.0),
        (20.0, 50.0),
        (10.0, 50.0),
    ];
    let sup: Vec<_> = supply.iter().map(|&(p, q)| (p, q * s)).collect();
    let dem: Vec<_> = demand.iter().map(|&(p, q)| (p, q * s)).collect();
    HourCurves { supply: build_curve(Side::Supply, t, &sup).unwrap(), demand: build_curve(Side::Demand, t, &dem).unwrap() }
}

fn write_feeder(dir: &Path) -> Result<(), Box<dyn std::error::Error>> {
    let mut w = csv::Writer::from_path(dir.join("feeder_lines.csv"))?;
    w.write_record(["from", "to", "r_ohm", "x_ohm"])?;
    for &(a, b, ft, config) in &SEGMENTS {
        let (r, x) = if config == 0 {
            // 500 kVA, 1.81 % impedance transformer referred to 4.8 kV.
            (0.0415, 0.834)
        } else {
            let (r, x) = cable(config);
            (r * ft / 5280.0, x * ft / 5280.0)
        };
        w.write_record(&[node(a).to_string(), node(b).to_string(), format!("{r:.6}"), format!("{x:.6}")])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("feeder_nodes.csv"))?;
    w.write_record(["node", "s_max_kva", "p_min_kw", "p_max_kw", "cost_a", "cost_b"])?;
    for &bus in &PV_BUSES {
        let s = rating(bus);
        w.write_record(&[node(bus).to_string(), s.to_string(), "0".into(), s.to_string(), "3".into(), "1".into()])?;
    }
    w.flush()?;
    Ok(())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "data".into()));
    std::fs::create_dir_all(&dir)?;
    write_feeder(&dir)?;

    let curves: Vec<HourCurves> = (0..24).map(curves_for).collect();
    write_curves(&dir.join("curves.csv"), &curves)?;

    let g_cap = PV_BUSES.iter().map(|&b| rating(b)).sum::<f64>() / 1000.0;
    let nominal_load = LOADS.iter().map(|l| l.1).sum::<f64>() / 1000.0;
    let round = |v: f64| (v * 1e4).round() / 1e4;
    let generation = (0..24).map(|t| round(g_cap * solar(t as f64 + 0.5))).collect();
    let load = (0..24).map(|t| round(nominal_load * load_factor(t as f64 + 0.5))).collect();
    let forecast = DsoForecast::new(generation, load, g_cap, 5.0)?;
    write_forecast(&dir.join("forecast.csv"), &forecast)?;

    let grid = TimeGrid::new(24, 3600, 5)?;
    let window = TraceWindow::hour(&grid, RT_HOUR, BUSES.len() - 1);
    let mut pv = Vec::with_capacity(window.steps);
    let mut load = Vec::with_capacity(window.steps);
    for k in 0..window.steps {
        let secs = window.timestamp(k) as f64;
        let hour = secs / 3600.0;
        let mut p = vec![0.0; window.nodes];
        for &bus in &PV_BUSES {
            p[node(bus) - 1] = round(rating(bus) * solar(hour) * cloud(secs));
        }
        let mut l = vec![0.0; window.nodes];
        for &(bus, kw) in &LOADS {
            l[node(bus) - 1] = round(kw * load_factor(hour));
        }
        pv.push(p);
        load.push(l);
    }
    write_trace(&dir.join("pv_trace.csv"), &window, &pv)?;
    write_trace(&dir.join("load_trace.csv"), &window, &load)?;
    println!("wrote scenario to {}", dir.display());
    Ok(())
}
