use std::io::Write;

use gridbid::grid::*;
use proptest::prelude::*;

fn unit_bases() -> FeederBases {
    FeederBases { base_mva: 1.0, base_kv: 1.0, v0: 1.0 }
}

fn der(node: usize) -> DerRecord {
    DerRecord { node, s_max_kva: 200.0, p_min_kw: 0.0, p_max_kw: 200.0, cost_a: 3.0, cost_b: 1.0 }
}

/// 0 - 1 - 2, with a second branch 1 - 3 and a leaf 0 - 4.
fn small_tree() -> FeederModel {
    let lines = [(0, 1, 0.01, 0.02), (1, 2, 0.02, 0.01), (1, 3, 0.015, 0.015), (0, 4, 0.03, 0.01)];
    FeederModel::from_lines(&lines, vec![der(2), der(3)], unit_bases()).unwrap()
}

fn write_csv(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
    let path = dir.path().join(name);
    let mut f = std::fs::File::create(&path).unwrap();
    f.write_all(body.as_bytes()).unwrap();
    path
}

#[test]
fn two_node_file_loads() {
    let dir = tempfile::tempdir().unwrap();
    let lines = write_csv(&dir, "lines.csv", "from,to,r_ohm,x_ohm\n0,1,0.2304,0.4608\n");
    let nodes = write_csv(&dir, "nodes.csv", "node,s_max_kva,p_min_kw,p_max_kw,cost_a,cost_b\n1,200,0,200,3,1\n");
    let f = load_feeder(&lines, &nodes, FeederBases { base_mva: 1.0, base_kv: 4.8, v0: 1.0 }).unwrap();
    assert_eq!(f.n, 1);
    assert_eq!(f.parent, vec![0, 0]);
    assert!((f.feeder_r[1] - 0.01).abs() < 1e-12);
    assert!((f.feeder_x[1] - 0.02).abs() < 1e-12);
    assert_eq!(f.ders.len(), 1);
}

#[test]
fn duplicate_line_is_a_cycle() {
    let lines = [(0, 1, 0.01, 0.01), (1, 2, 0.01, 0.01), (2, 1, 0.01, 0.01)];
    assert!(matches!(FeederModel::from_lines(&lines, vec![], unit_bases()), Err(GridError::CycleDetected { .. })));
    let ring = [(0, 1, 0.01, 0.01), (1, 2, 0.01, 0.01), (2, 0, 0.01, 0.01)];
    assert!(matches!(FeederModel::from_lines(&ring, vec![], unit_bases()), Err(GridError::CycleDetected { .. })));
}

#[test]
fn island_is_disconnected() {
    let lines = [(0, 1, 0.01, 0.01), (2, 3, 0.01, 0.01)];
    assert!(matches!(FeederModel::from_lines(&lines, vec![], unit_bases()), Err(GridError::DisconnectedNode(2))));
}

#[test]
fn bad_units_rejected() {
    let lines = [(0, 1, -0.01, 0.01)];
    assert!(matches!(FeederModel::from_lines(&lines, vec![], unit_bases()), Err(GridError::BadUnits(_))));
    let ok = [(0, 1, 0.01, 0.01)];
    let bases = FeederBases { base_mva: 0.0, ..unit_bases() };
    assert!(matches!(FeederModel::from_lines(&ok, vec![], bases), Err(GridError::BadUnits(_))));
    let bad_der = DerRecord { p_min_kw: 10.0, p_max_kw: 5.0, ..der(1) };
    assert!(matches!(FeederModel::from_lines(&ok, vec![bad_der], unit_bases()), Err(GridError::BadUnits(_))));
}

#[test]
fn single_line_sensitivity() {
    let f = FeederModel::from_lines(&[(0, 1, 0.01, 0.02)], vec![], unit_bases()).unwrap();
    let s = sensitivity_matrices(&f);
    let v = s.voltages(&[0.1], &[0.0]);
    assert!((v[0] - 1.001).abs() < 1e-12);
}

#[test]
fn common_path_entries() {
    let f = small_tree();
    let s = sensitivity_matrices(&f);
    // Nodes 2 and 3 share only the 0-1 edge; node 4 shares nothing with them.
    assert!((s.r.get(1, 2) - 0.01).abs() < 1e-15);
    assert!((s.r.get(1, 1) - 0.03).abs() < 1e-15);
    assert_eq!(s.r.get(3, 1), 0.0);
    assert_eq!(s.r.get(1, 3), 0.0);
    assert!((s.x.get(2, 2) - 0.035).abs() < 1e-15);
    assert!(s.r.is_symmetric() && s.x.is_symmetric());
}

#[test]
fn zero_injection_gives_v0() {
    let mut f = small_tree();
    f.bases.v0 = 1.02;
    let flow = ac_power_flow(&f, &[0.0; 4], &[0.0; 4]).unwrap();
    assert!(flow.voltages.iter().all(|&v| (v - 1.02).abs() < 1e-12));
}

#[test]
fn injection_raises_downstream_voltage() {
    let f = small_tree();
    let flow = ac_power_flow(&f, &[0.0, 0.2, 0.0, 0.0], &[0.0; 4]).unwrap();
    assert!(flow.voltages[1] > flow.voltages[0]);
    assert!(flow.voltages[0] > 1.0);
    assert!((flow.voltages[3] - 1.0).abs() < 1e-12);
}

#[test]
fn sweep_matches_linear_model_to_first_order() {
    let f = FeederModel::from_lines(&[(0, 1, 0.01, 0.02)], vec![], unit_bases()).unwrap();
    let s = sensitivity_matrices(&f);
    let err = |scale: f64| {
        let (p, q) = ([0.1 * scale], [0.05 * scale]);
        let ac = ac_power_flow(&f, &p, &q).unwrap();
        (ac.voltages[0] - s.voltages(&p, &q)[0]).abs()
    };
    let (e1, e2) = (err(1.0), err(0.5));
    assert!(e1 < 1e-4);
    // Halving the injection quarters the error.
    let ratio = e1 / e2;
    assert!((3.0..5.0).contains(&ratio), "ratio {ratio}");
}

#[test]
fn sweep_diverges_on_absurd_load() {
    let f = FeederModel::from_lines(&[(0, 1, 0.5, 0.5)], vec![], unit_bases()).unwrap();
    assert!(matches!(ac_power_flow(&f, &[-10.0], &[-10.0]), Err(GridError::SweepDiverged { .. })));
}

#[test]
fn dimension_checked() {
    let f = small_tree();
    assert!(matches!(ac_power_flow(&f, &[0.0; 3], &[0.0; 4]), Err(GridError::DimensionMismatch { expected: 4, got: 3 })));
}

#[test]
fn slater_check() {
    let f = small_tree();
    let s = sensitivity_matrices(&f);
    assert!(check_slater(&s, 0.95, 1.045));
    let mut high = f.clone();
    high.bases.v0 = 1.06;
    assert!(!check_slater(&sensitivity_matrices(&high), 0.95, 1.045));
}

proptest! {
    #[test]
    fn sensitivities_are_psd(x in prop::collection::vec(-1.0f64..1.0, 4)) {
        let s = sensitivity_matrices(&small_tree());
        prop_assert!(s.r.quadratic_form(&x) >= -1e-15);
        prop_assert!(s.x.quadratic_form(&x) >= -1e-15);
        prop_assert!(s.r.data.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn small_injections_track_linear_model(p in prop::collection::vec(-0.2f64..0.2, 4), q in prop::collection::vec(-0.1f64..0.1, 4)) {
        let f = small_tree();
        let s = sensitivity_matrices(&f);
        let ac = ac_power_flow(&f, &p, &q).unwrap();
        let lin = s.voltages(&p, &q);
        for (a, b) in ac.voltages.iter().zip(&lin) {
            prop_assert!((a - b).abs() < 2e-3);
        }
    }
}
