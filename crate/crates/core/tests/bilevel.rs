mod common;

use common::{desk_curves, desk_instances, forecast, hour};
use gridbid::bilevel::*;
use gridbid::market::ImbalancePriceModel;
use gridbid::solver::{self, Status};

fn prices() -> ImbalancePriceModel {
    ImbalancePriceModel::default()
}

#[test]
fn binary_count_matches_complementarity_pairs() {
    let hc = hour(0, &[(10.0, 5.0), (20.0, 5.0)], &[(30.0, 5.0), (15.0, 5.0)]);
    let f = forecast(&[(3.0, 1.0)], 5.0, 5.0);
    let m = build_milp(&[hc], &f, &prices()).unwrap();
    assert_eq!(m.num_binaries(), 8 + 4);
    assert_eq!(m.hours[0].lp.integer.iter().filter(|&&b| b).count(), 12);
    for c in &m.hours[0].complementarities {
        assert!(c.m_primal > 0.0 && c.m_dual > 0.0);
    }
}

#[test]
fn balanced_forecast_gives_zero_trade() {
    let hc = desk_curves();
    let f = forecast(&[(7.0, 7.0)], 20.0, 20.0);
    let m = build_milp(&[hc.clone()], &f, &prices()).unwrap();
    let d = solve_da_deterministic(&m).unwrap();
    let h = &d.hours[0];
    assert_eq!(h.status, Status::Optimal);
    assert!(h.objective.abs() < 1e-6, "{}", h.objective);
    assert!(h.row.net_sale().abs() < 1e-9);
    assert!(h.row.e_bm_plus.abs() < 1e-9 && h.row.e_bm_minus.abs() < 1e-9);
    assert!(verify_duality_identity(h, &hc) < 1e-9);
}

#[test]
fn desk_instances_match_oracle() {
    for (i, (hc, f)) in desk_instances().into_iter().enumerate() {
        let curves = vec![hc.clone()];
        let m = build_milp(&curves, &f, &prices()).unwrap();
        let d = solve_da_deterministic(&m).unwrap();
        let h = &d.hours[0];
        assert_eq!(h.status, Status::Optimal);
        let grid = OracleGrid::uniform(&hc, &f, 12).with_point(&h.row);
        let o = enumeration_oracle(&curves, &f, &prices(), &[grid]).unwrap();
        assert!(d.objective() <= o.objective() + 1e-6, "instance {i}: milp {} oracle {}", d.objective(), o.objective());
        assert!((d.objective() - o.objective()).abs() <= 1e-6, "instance {i}: milp {} oracle {}", d.objective(), o.objective());
        let kkt = embedded_kkt(h, &hc).unwrap();
        assert!(kkt.within(1e-6), "instance {i}: {kkt:?}");
        assert!(verify_duality_identity(h, &hc) <= 1e-6);
    }
}

#[test]
fn net_supplier_offers_at_clearing_price() {
    let (hc, f) = desk_instances().remove(0);
    let d = solve_da_deterministic(&build_milp(&[hc], &f, &prices()).unwrap()).unwrap();
    let r = d.hours[0].row;
    assert!(r.e_das > 0.0);
    assert_eq!(r.alpha_s, r.lambda_da);
}

#[test]
fn complementarity_products_vanish() {
    for (hc, f) in desk_instances() {
        let m = build_milp(&[hc], &f, &prices()).unwrap();
        let h = &m.hours[0];
        let sol = solver::solve_milp(&h.lp, &milp_options()).unwrap();
        assert!(complementarity_violation(h, &sol.x) <= 1e-6);
    }
}

#[test]
fn perturbed_duals_break_identity() {
    let (hc, f) = desk_instances().remove(0);
    let d = solve_da_deterministic(&build_milp(&[hc.clone()], &f, &prices()).unwrap()).unwrap();
    let mut h = d.hours[0].clone();
    for mu in h.lower.mu_supply.iter_mut() {
        mu.max += 0.37;
    }
    assert!(verify_duality_identity(&h, &hc) > 1e-3);
}

#[test]
fn hours_decompose() {
    let inst = desk_instances();
    let curves: Vec<_> = inst.iter().take(3).enumerate().map(|(t, (hc, _))| {
        let mut hc = hc.clone();
        hc.supply.hour = t;
        hc.demand.hour = t;
        hc
    }).collect();
    let f = forecast(&[(20.0, 10.0), (15.0, 0.0), (0.0, 12.0)], 20.0, 25.0);
    let m = build_milp(&curves, &f, &prices()).unwrap();
    let per_hour = solve_da_deterministic(&m).unwrap().objective();
    let joint = solver::solve_milp(&m.joint(), &milp_options()).unwrap();
    assert_eq!(joint.status, Status::Optimal);
    assert!((joint.objective - per_hour).abs() <= 1e-9 * (1.0 + per_hour.abs()) + 1e-9, "{} vs {}", joint.objective, per_hour);
}

#[test]
fn costlier_shortfall_never_lowers_cost() {
    let (hc, _) = desk_instances().remove(2);
    let f = forecast(&[(0.0, 12.0)], 15.0, 20.0);
    let mut last = f64::NEG_INFINITY;
    for a2 in [1.2, 1.7, 2.5, 4.0] {
        let p = ImbalancePriceModel { a2, ..prices() };
        let obj = solve_da_deterministic(&build_milp(&[hc.clone()], &f, &p).unwrap()).unwrap().objective();
        assert!(obj >= last - 1e-6);
        last = obj;
    }
}

#[test]
fn oracle_picks_largest_profitable_cap() {
    let hc = desk_curves();
    let f = forecast(&[(10.0, 0.0)], 10.0, 10.0);
    let (a_lo, _) = alpha_bounds(&hc);
    let grid = OracleGrid { es_max: vec![0.0, 5.0, 10.0], eb_max: vec![0.0], alpha_s: vec![a_lo], alpha_b: vec![a_lo] };
    let o = enumeration_oracle(&[hc], &f, &prices(), &[grid]).unwrap();
    assert_eq!(o.hours[0].row.e_das_max, 10.0);
}

#[test]
fn oracle_grid_limits() {
    let hc = desk_curves();
    let f = forecast(&[(10.0, 0.0)], 10.0, 10.0);
    let grid = OracleGrid::uniform(&hc, &f, 51);
    assert!(matches!(enumeration_oracle(&[hc], &f, &prices(), &[grid]), Err(BilevelError::GridTooLarge(_))));
}

#[test]
fn empty_and_mismatched_inputs() {
    let hc = desk_curves();
    let f = forecast(&[(1.0, 0.0), (1.0, 0.0)], 10.0, 10.0);
    assert!(matches!(build_milp(&[hc], &f, &prices()), Err(BilevelError::HorizonMismatch { .. })));
}

#[test]
fn decision_csv_round_trip() {
    let (hc, f) = desk_instances().remove(1);
    let d = solve_da_deterministic(&build_milp(&[hc], &f, &prices()).unwrap()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("da.csv");
    write_decision(&path, &d.rows()).unwrap();
    assert_eq!(read_decision(&path).unwrap(), d.rows());
}
