use std::io::Write;

use gridbid::bilevel::DaRow;
use gridbid::market::{DsoForecast, TimeGrid};
use gridbid::scenario::*;

fn forecast() -> DsoForecast {
    DsoForecast::new(vec![0.0, 1.0, 2.0, 4.0], vec![0.5; 4], 4.0, 5.0).unwrap()
}

#[test]
fn zero_sigma_gives_zero_errors() {
    let s = sample_forecast_errors(0.0, &forecast(), 50, 7).unwrap();
    assert!(s.samples.iter().flatten().all(|&d| d == 0.0));
}

#[test]
fn samples_respect_output_bounds() {
    let f = forecast();
    let s = sample_forecast_errors(0.2, &f, 500, 7).unwrap();
    for (t, hour) in s.samples.iter().enumerate() {
        for &d in hour {
            let g = f.generation[t] + d;
            assert!((0.0..=f.g_cap).contains(&g));
        }
    }
    // Generation at capacity can only fall short.
    assert!(s.samples[3].iter().all(|&d| d <= 0.0));
    assert!(s.samples[0].iter().all(|&d| d >= 0.0));
}

#[test]
fn empirical_spread_matches_sigma() {
    let f = DsoForecast::new(vec![2.0], vec![0.0], 4.0, 5.0).unwrap();
    let s = sample_forecast_errors(0.1, &f, 1000, 11).unwrap();
    let x = &s.samples[0];
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    let std = (x.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / x.len() as f64).sqrt();
    assert!((0.07 * 4.0..=0.11 * 4.0).contains(&std), "std {std}");
}

#[test]
fn sampling_is_reproducible_and_shares_draws() {
    let f = DsoForecast::new(vec![2.0, 2.0], vec![0.0; 2], 40.0, 5.0).unwrap();
    let a = sample_forecast_errors(0.01, &f, 100, 3).unwrap();
    assert_eq!(a, sample_forecast_errors(0.01, &f, 100, 3).unwrap());
    assert_ne!(a.samples, sample_forecast_errors(0.01, &f, 100, 4).unwrap().samples);
    // Unclamped samples scale linearly with sigma.
    let b = sample_forecast_errors(0.02, &f, 100, 3).unwrap();
    for (x, y) in a.samples[0].iter().zip(&b.samples[0]) {
        assert!((2.0 * x - y).abs() < 1e-12);
    }
}

#[test]
fn centering_removes_the_mean() {
    let s = sample_forecast_errors(0.3, &forecast(), 200, 5).unwrap();
    for hour in s.centered() {
        assert!(hour.iter().sum::<f64>().abs() < 1e-9);
    }
}

#[test]
fn bad_sampling_inputs() {
    assert!(matches!(sample_forecast_errors(-0.1, &forecast(), 10, 0), Err(ScenarioError::InvalidSigma(_))));
    assert!(matches!(sample_forecast_errors(0.1, &forecast(), 0, 0), Err(ScenarioError::NoSamples)));
}

#[test]
fn sample_dump_round_trips() {
    let s = sample_forecast_errors(0.2, &forecast(), 20, 9).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("samples.csv");
    write_samples(&path, &s).unwrap();
    assert_eq!(read_samples(&path).unwrap(), s.samples);
}

fn row(hour: usize, e_das: f64, e_dab: f64) -> DaRow {
    DaRow { hour, e_das, e_dab, ..DaRow::default() }
}

#[test]
fn reference_spreads_net_position() {
    let grid = TimeGrid::new(2, 3600, 5).unwrap();
    let r = rt_reference(&[row(0, 3.0, 1.0), row(1, 0.0, 0.0)], &grid).unwrap();
    assert_eq!(r.e_rt.len(), 1440);
    assert!(r.slot(0).iter().all(|&e| e == 2.0 / 720.0));
    assert!(r.slot(1).iter().all(|&e| e == 0.0));
    assert!((r.slot(0).iter().sum::<f64>() - 2.0).abs() < 1e-12);
}

#[test]
fn misaligned_grid_rejected() {
    let grid = TimeGrid { horizon: 1, dt_da: 3600, dt_rt: 7 };
    assert!(matches!(rt_reference(&[row(0, 1.0, 0.0)], &grid), Err(ScenarioError::MisalignedGrids { .. })));
}

fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
    let path = dir.path().join(name);
    std::fs::File::create(&path).unwrap().write_all(body.as_bytes()).unwrap();
    path
}

fn window() -> TraceWindow {
    TraceWindow { start_s: 100, dt_s: 5, steps: 3, nodes: 2 }
}

#[test]
fn constant_trace_reads_back() {
    let dir = tempfile::tempdir().unwrap();
    let pv = write(&dir, "pv.csv", "timestamp_s,node,value_kw\n100,2,50\n105,2,50\n110,2,50\n115,2,99\n");
    let load = write(&dir, "load.csv", "timestamp_s,node,value_kw\n95,1,1\n100,1,10\n105,1,10\n110,1,10\n");
    let t = load_traces(&pv, &load, window(), PowerUnit::Kw).unwrap();
    assert_eq!(t.pv_kw, vec![vec![0.0, 50.0]; 3]);
    assert_eq!(t.load_kw, vec![vec![10.0, 0.0]; 3]);
    assert_eq!(t.total_load_kw(1), 10.0);
}

#[test]
fn megawatt_files_are_converted() {
    let dir = tempfile::tempdir().unwrap();
    let pv = write(&dir, "pv.csv", "timestamp_s,node,value_mw\n100,1,0.5\n105,1,0.5\n110,1,0.25\n");
    let load = write(&dir, "load.csv", "timestamp_s,node,value_mw\n");
    let t = load_traces(&pv, &load, window(), PowerUnit::Mw).unwrap();
    assert_eq!(t.pv_kw[2], vec![250.0, 0.0]);
}

#[test]
fn missing_step_names_the_timestamp() {
    let dir = tempfile::tempdir().unwrap();
    let pv = write(&dir, "pv.csv", "timestamp_s,node,value_kw\n100,2,50\n110,2,50\n");
    let load = write(&dir, "load.csv", "timestamp_s,node,value_kw\n");
    match load_traces(&pv, &load, window(), PowerUnit::Kw) {
        Err(ScenarioError::TraceGap { node: 2, timestamp: 105, .. }) => {}
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn unit_mismatch_detected() {
    let dir = tempfile::tempdir().unwrap();
    let pv = write(&dir, "pv.csv", "timestamp_s,node,value_kw\n100,2,50\n");
    let load = write(&dir, "load.csv", "timestamp_s,node,value_kw\n");
    assert!(matches!(
        load_traces(&pv, &load, window(), PowerUnit::Mw),
        Err(ScenarioError::UnitMismatch { found: PowerUnit::Kw, expected: PowerUnit::Mw, .. })
    ));
}

#[test]
fn written_traces_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let w = window();
    let series = vec![vec![1.5, 0.0], vec![2.5, 0.0], vec![3.5, 0.0]];
    let pv = dir.path().join("pv.csv");
    write_trace(&pv, &w, &series).unwrap();
    let t = load_traces(&pv, &pv, w, PowerUnit::Kw).unwrap();
    assert_eq!(t.pv_kw, series);
}
