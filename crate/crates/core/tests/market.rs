use gridbid::market::*;
use proptest::prelude::*;

#[test]
fn supply_sorted_ascending() {
    let c = build_curve(Side::Supply, 0, &[(20.0, 50.0), (10.0, 50.0)]).unwrap();
    assert_eq!(c.prices().collect::<Vec<_>>(), vec![10.0, 20.0]);
    assert_eq!(c.blocks[1].index, 1);
}

#[test]
fn demand_sorted_descending() {
    let c = build_curve(Side::Demand, 0, &[(25.0, 60.0), (40.0, 60.0)]).unwrap();
    assert_eq!(c.prices().collect::<Vec<_>>(), vec![40.0, 25.0]);
}

#[test]
fn zero_quantity_blocks_dropped() {
    let c = build_curve(Side::Supply, 0, &[(10.0, 0.0), (30.0, 50.0)]).unwrap();
    assert_eq!(c.raw(), vec![(30.0, 50.0)]);
    assert_eq!(c.blocks[0].index, 0);
}

#[test]
fn bad_blocks_rejected() {
    assert!(matches!(
        build_curve(Side::Supply, 0, &[(f64::NAN, 1.0)]),
        Err(MarketError::NonFinitePrice { .. })
    ));
    assert!(matches!(build_curve(Side::Demand, 3, &[(5.0, 0.0)]), Err(MarketError::EmptyCurve { hour: 3, .. })));
    assert!(matches!(build_curve(Side::Demand, 0, &[(5.0, -1.0)]), Err(MarketError::NegativeQuantity { .. })));
}

#[test]
fn equal_prices_keep_input_order() {
    let c = build_curve(Side::Supply, 0, &[(10.0, 1.0), (10.0, 2.0), (5.0, 3.0)]).unwrap();
    assert_eq!(c.raw(), vec![(5.0, 3.0), (10.0, 1.0), (10.0, 2.0)]);
}

#[test]
fn imbalance_price_examples() {
    let m = ImbalancePriceModel::new(0.7, 1.7, 15.0, 20.0).unwrap();
    let (p, q) = imbalance_prices(&m, 50.0);
    assert!((p - 24.5).abs() < 1e-12 && (q - 119.0).abs() < 1e-12);
    let (p, q) = imbalance_prices(&m, 15.0);
    assert!(p.abs() < 1e-12 && (q - 59.5).abs() < 1e-12);
    let id = ImbalancePriceModel::new(1.0, 1.0, 0.0, 0.0).unwrap();
    assert_eq!(imbalance_prices(&id, 0.0), (0.0, 0.0));
    // Not floored.
    assert!(imbalance_prices(&m, 5.0).0 < 0.0);
    assert!(ImbalancePriceModel::new(-0.1, 1.0, 0.0, 0.0).is_err());
}

#[test]
fn time_grid_alignment() {
    assert_eq!(TimeGrid::new(24, 3600, 5).unwrap().steps_per_slot(), 720);
    assert!(TimeGrid::new(24, 3600, 7).is_err());
    assert!(TimeGrid::new(0, 3600, 5).is_err());
}

#[test]
fn forecast_validation() {
    assert!(DsoForecast::new(vec![1.0], vec![0.5], 2.0, 1.0).is_ok());
    assert!(DsoForecast::new(vec![3.0], vec![0.5], 2.0, 1.0).is_err());
    assert!(DsoForecast::new(vec![1.0], vec![0.5], 2.0, 0.0).is_err());
    assert!(DsoForecast::new(vec![1.0, 1.0], vec![0.5], 2.0, 1.0).is_err());
}

#[test]
fn curve_and_forecast_csv_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let curves = vec![HourCurves {
        supply: build_curve(Side::Supply, 0, &[(10.25, 50.0), (20.0, 1.0 / 3.0)]).unwrap(),
        demand: build_curve(Side::Demand, 0, &[(40.0, 60.0)]).unwrap(),
    }];
    let path = dir.path().join("curves.csv");
    write_curves(&path, &curves).unwrap();
    assert_eq!(read_curves(&path).unwrap(), curves);

    let f = DsoForecast::new(vec![1.0, 0.1], vec![0.5, 0.7], 2.0, 1.5).unwrap();
    let path = dir.path().join("forecast.csv");
    write_forecast(&path, &f).unwrap();
    assert_eq!(read_forecast(&path, 2.0, 1.5).unwrap(), f);
}

#[test]
fn curve_csv_rejects_bad_header() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.csv");
    std::fs::write(&path, "hour,side,price,qty\n0,supply,1,1\n").unwrap();
    assert!(matches!(read_curves(&path), Err(MarketError::Format { .. })));
}

proptest! {
    #[test]
    fn price_ordering(a1 in 0.0..1.0f64, a2 in 1.0..3.0f64, p1 in 0.0..30.0f64, p2 in 0.0..30.0f64, extra in 0.0..200.0f64) {
        let m = ImbalancePriceModel::new(a1, a2, p1, p2).unwrap();
        let da = p1 + extra;
        let (plus, minus) = imbalance_prices(&m, da);
        prop_assert!(plus <= da + 1e-12);
        prop_assert!(da <= minus + 1e-12);
    }

    #[test]
    fn build_curve_idempotent(raw in prop::collection::vec((-50.0..200.0f64, 0.0..100.0f64), 1..12), demand in any::<bool>()) {
        let side = if demand { Side::Demand } else { Side::Supply };
        let mut raw = raw;
        raw.push((1.0, 1.0));
        let c = build_curve(side, 2, &raw).unwrap();
        let again = build_curve(side, 2, &c.raw()).unwrap();
        prop_assert_eq!(&c, &again);
        for w in c.blocks.windows(2) {
            match side {
                Side::Supply => prop_assert!(w[0].price <= w[1].price),
                Side::Demand => prop_assert!(w[0].price >= w[1].price),
            }
        }
    }
}
