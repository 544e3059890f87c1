#![allow(dead_code)]

use gridbid::market::{build_curve, DsoForecast, HourCurves, Side};

pub fn hour(t: usize, supply: &[(f64, f64)], demand: &[(f64, f64)]) -> HourCurves {
    HourCurves {
        supply: build_curve(Side::Supply, t, supply).unwrap(),
        demand: build_curve(Side::Demand, t, demand).unwrap(),
    }
}

/// Three supply and three demand blocks with a high-priced demand tail.
pub fn desk_curves() -> HourCurves {
    hour(0, &[(10.0, 50.0), (20.0, 50.0), (30.0, 50.0)], &[(60.0, 30.0), (40.0, 60.0), (25.0, 60.0)])
}

pub fn forecast(net: &[(f64, f64)], g_cap: f64, tr_max: f64) -> DsoForecast {
    DsoForecast::new(net.iter().map(|p| p.0).collect(), net.iter().map(|p| p.1).collect(), g_cap, tr_max).unwrap()
}

/// Small random-looking but fixed instances used by several oracle tests.
pub fn desk_instances() -> Vec<(HourCurves, DsoForecast)> {
    vec![
        (desk_curves(), forecast(&[(20.0, 10.0)], 20.0, 20.0)),
        (
            hour(0, &[(5.0, 20.0), (18.0, 30.0), (35.0, 40.0)], &[(55.0, 25.0), (30.0, 30.0), (12.0, 40.0)]),
            forecast(&[(15.0, 0.0)], 20.0, 25.0),
        ),
        (
            hour(0, &[(12.0, 40.0), (22.0, 40.0)], &[(45.0, 30.0), (28.0, 40.0), (15.0, 20.0)]),
            forecast(&[(0.0, 12.0)], 15.0, 20.0),
        ),
        (
            hour(0, &[(8.0, 25.0), (16.0, 25.0), (24.0, 25.0), (40.0, 25.0)], &[(50.0, 30.0), (35.0, 30.0), (20.0, 30.0), (10.0, 30.0)]),
            forecast(&[(10.0, 10.0)], 12.0, 10.0),
        ),
        (
            hour(0, &[(20.0, 60.0), (26.0, 30.0)], &[(70.0, 20.0), (32.0, 50.0)]),
            forecast(&[(8.0, 2.0)], 10.0, 10.0),
        ),
        (
            hour(0, &[(3.0, 10.0), (9.0, 30.0), (27.0, 30.0)], &[(33.0, 35.0), (21.0, 25.0), (6.0, 30.0)]),
            forecast(&[(2.0, 9.0)], 10.0, 8.0),
        ),
    ]
}
