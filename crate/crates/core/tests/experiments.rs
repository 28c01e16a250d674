//! Benchmark variants, sweeps and cluster replication.

use std::collections::BTreeSet;
use std::sync::OnceLock;

use chargeshare_core::data::{bundled_scenario, CLUSTER_BUSES};
use chargeshare_core::experiments::{
    capacity_sweep, coefficient_sweep, default_capacity_multipliers, replicate_cluster, run_all_variants,
    scale_storage_capacity, split_storages, Coefficient, SplitRule, SweepRow,
};
use chargeshare_core::report::{write_cost_summary, write_sweep};
use chargeshare_core::{
    run_benchmark, BenchmarkVariant, CoordinationParams, ExperimentError, ExperimentResult, Scenario, VariantKind,
};

const TOL: f64 = 1e-6;

fn variants() -> &'static Vec<ExperimentResult> {
    static R: OnceLock<Vec<ExperimentResult>> = OnceLock::new();
    R.get_or_init(|| run_all_variants(&bundled_scenario()).unwrap())
}

fn total(kind: VariantKind) -> f64 {
    variants().iter().find(|r| r.variant == kind).unwrap().total
}

fn rows_of(rows: &[SweepRow], kind: VariantKind) -> Vec<&SweepRow> {
    rows.iter().filter(|r| r.variant == kind).collect()
}

#[test]
fn cost_ordering_on_the_bundled_day() {
    let (b1, b2, b3, p) = (
        total(VariantKind::B1NoStorage),
        total(VariantKind::B2IndividualStorage),
        total(VariantKind::B3Inelastic),
        total(VariantKind::Proposed),
    );
    assert!(p < b3 - TOL && b3 < b1 - TOL, "{p} {b3} {b1}");
    assert!(p < b2 - TOL, "{p} {b2}");
}

#[test]
fn reductions_recompute_from_totals() {
    let b1 = total(VariantKind::B1NoStorage);
    for r in variants() {
        assert_eq!(r.reduction, Some((b1 - r.total) / b1));
        let parts = r.cso.iter().sum::<f64>() + r.seso.iter().sum::<f64>() + r.dso;
        assert!((parts - r.total).abs() <= TOL);
    }
}

#[test]
fn baselines_report_storage_costs_with_stations() {
    for r in variants() {
        match r.variant {
            VariantKind::B1NoStorage | VariantKind::B2IndividualStorage => {
                assert!(r.seso.iter().all(|x| *x == 0.0), "{:?}", r.variant)
            }
            _ => assert_eq!(r.seso.len(), 1),
        }
        assert_eq!(r.cso.len(), 4);
    }
}

#[test]
fn zero_capacity_is_the_no_storage_baseline() {
    let s = scale_storage_capacity(&bundled_scenario(), 0.0);
    let p = run_benchmark(&s, &BenchmarkVariant::new(VariantKind::Proposed)).unwrap();
    let b1 = total(VariantKind::B1NoStorage);
    assert!((p.total - b1).abs() <= TOL * b1, "{} vs {b1}", p.total);
}

#[test]
fn without_vehicles_flexibility_is_worthless() {
    let mut s = bundled_scenario();
    for st in &mut s.stations {
        st.fleet.clear();
    }
    let r = run_all_variants(&s).unwrap();
    assert!((r[2].total - r[3].total).abs() <= TOL * r[3].total, "B3 {} P {}", r[2].total, r[3].total);
}

#[test]
fn without_vehicles_pv_or_price_spread_all_variants_agree() {
    // Storage can still arbitrage a time-varying tariff, so the price is made
    // flat here; the round-trip loss then makes storage worthless too.
    let mut s = bundled_scenario();
    for st in &mut s.stations {
        st.fleet.clear();
        st.pv_profile.iter_mut().for_each(|x| *x = 0.0);
    }
    s.tariff.buy_price.iter_mut().for_each(|x| *x = 0.04);
    let r = run_all_variants(&s).unwrap();
    for x in &r[1..] {
        assert!((x.total - r[0].total).abs() <= TOL * r[0].total, "{:?}: {} vs {}", x.variant, x.total, r[0].total);
    }
}

#[test]
fn individual_storages_partition_the_shared_one() {
    let s = bundled_scenario();
    let parts = split_storages(&s, &SplitRule::Equal).unwrap();
    assert_eq!(parts.len(), 4);
    let cap: f64 = parts.iter().map(|b| b.capacity).sum();
    assert!((cap - s.storages[0].capacity).abs() < 1e-9);
    for (b, st) in parts.iter().zip(&s.stations) {
        assert_eq!(b.connected_stations, vec![st.station_id]);
        assert_eq!(b.bus_id, st.bus_id);
        assert!(!b.grid_access);
    }
    let uneven = split_storages(&s, &SplitRule::Fractions(vec![0.4, 0.3, 0.2, 0.1])).unwrap();
    assert!((uneven[0].capacity - 0.4 * s.storages[0].capacity).abs() < 1e-9);
}

#[test]
fn malformed_splits_are_rejected() {
    let s = bundled_scenario();
    for bad in [vec![0.5, 0.5], vec![0.5, 0.5, 0.5, -0.5], vec![0.3, 0.3, 0.3, 0.3]] {
        let v = BenchmarkVariant {
            split: SplitRule::Fractions(bad),
            ..BenchmarkVariant::new(VariantKind::B2IndividualStorage)
        };
        assert!(matches!(run_benchmark(&s, &v), Err(ExperimentError::Split(_))));
    }
}

#[test]
fn inelastic_demand_can_be_infeasible_where_flexible_is_not() {
    let mut s = bundled_scenario();
    s.storages.clear();
    let bus = s.stations[0].bus_id;
    let j = s.network.buses.iter().position(|b| b.bus_id == bus).unwrap();
    s.network.buses[j].p_bounds = (-2000.0, 100.0);
    assert!(run_benchmark(&s, &BenchmarkVariant::new(VariantKind::Proposed)).is_ok());
    let err = run_benchmark(&s, &BenchmarkVariant::new(VariantKind::B3Inelastic)).unwrap_err();
    assert!(err.is_infeasible(), "{err}");
    assert!(err.to_string().contains("CASAP"), "{err}");
}

#[test]
fn distributed_and_centralized_benchmarks_agree() {
    let s = bundled_scenario();
    let d = run_benchmark(&s, &BenchmarkVariant::distributed(CoordinationParams::default())).unwrap();
    let c = total(VariantKind::Proposed);
    assert!((d.total - c).abs() <= 5e-3 * c, "{} vs {c}", d.total);
    assert!(d.iterations.is_some() && d.detail.as_ref().unwrap().converged);
}

#[test]
fn capacity_sweep_shape() {
    let s = bundled_scenario();
    let m = default_capacity_multipliers();
    assert_eq!(m.len(), 11);
    assert!(m.windows(2).all(|w| w[0] < w[1]) && m[0] == 0.0 && m[10] == 2.5);
    let rows = capacity_sweep(&s, &m, &[VariantKind::B2IndividualStorage, VariantKind::Proposed]).unwrap();
    let b2 = rows_of(&rows, VariantKind::B2IndividualStorage);
    let p = rows_of(&rows, VariantKind::Proposed);
    assert_eq!(p.len(), 11);
    assert!((p[0].total - total(VariantKind::B1NoStorage)).abs() <= TOL * p[0].total);
    for (x, y) in p.iter().zip(&b2) {
        assert!(x.total <= y.total + TOL, "m={}: proposed {} > B2 {}", x.parameter, x.total, y.total);
    }
    let at = |mult: f64| p.iter().find(|r| r.parameter == mult).unwrap().total;
    assert!((at(2.0) - at(2.5)).abs() <= 0.01 * at(2.0));
    // more shared capacity never hurts
    assert!(p.windows(2).all(|w| w[1].total <= w[0].total + TOL));
}

#[test]
fn degradation_sweep_raises_cost_and_idles_storage() {
    let s = bundled_scenario();
    let mut values = Coefficient::StorageDegradation.default_grid();
    values.push(1e3);
    let rows = coefficient_sweep(&s, Coefficient::StorageDegradation, &values, &[VariantKind::Proposed]).unwrap();
    assert!(rows.windows(2).all(|w| w[1].total >= w[0].total - TOL * w[0].total), "{rows:?}");
    let default = rows.iter().find(|r| (r.parameter - 0.01).abs() < 1e-12).unwrap();
    let extreme = rows.last().unwrap();
    assert!(extreme.storage_throughput < 0.01 * default.storage_throughput, "{extreme:?}");
}

#[test]
fn inconvenience_sweep_leaves_inelastic_baseline_unchanged() {
    let s = bundled_scenario();
    let values = [1e-6, 1e-5, 1e-4, 1e-3, 1e-2];
    let rows = coefficient_sweep(&s, Coefficient::EvInconvenience, &values, &[VariantKind::B3Inelastic]).unwrap();
    for r in &rows {
        assert!((r.total - rows[0].total).abs() <= TOL * rows[0].total, "{r:?}");
    }
}

#[test]
fn coefficient_grids_span_two_decades() {
    for c in [Coefficient::StorageDegradation, Coefficient::EvInconvenience] {
        let g = c.default_grid();
        assert_eq!(g.len(), 11);
        assert!((g[0] / c.default_value() - 0.1).abs() < 1e-12);
        assert!((g[10] / c.default_value() - 10.0).abs() < 1e-9);
        assert!((g[5] - c.default_value()).abs() < 1e-15);
    }
    assert_eq!("bat".parse::<Coefficient>().unwrap(), Coefficient::StorageDegradation);
    assert_eq!("ev".parse::<Coefficient>().unwrap(), Coefficient::EvInconvenience);
    assert!("pv".parse::<Coefficient>().is_err());
}

fn check_replica(s: &Scenario, groups: usize) {
    assert_eq!(s.stations.len(), 4 * groups);
    assert_eq!(s.storages.len(), groups);
    let buses: BTreeSet<u32> = s.stations.iter().map(|st| st.bus_id).collect();
    assert_eq!(buses.len(), 4 * groups, "stations share buses");
    for (b, sto) in s.storages.iter().enumerate() {
        let members = s.storage_members(b);
        assert_eq!(members.len(), 4);
        assert!(members.iter().any(|&i| s.stations[i].bus_id == sto.bus_id));
    }
    assert!(chargeshare_core::scenario::validate_scenario(s).is_empty());
}

#[test]
fn two_clusters_form_two_storage_neighbourhoods() {
    let t = bundled_scenario();
    let s = replicate_cluster(&t, 2, None, 0).unwrap();
    check_replica(&s, 2);
    assert_eq!(s.stations[..4], t.stations[..]);
    let second: Vec<u32> = s.stations[4..].iter().map(|st| st.bus_id).collect();
    assert_eq!(second, CLUSTER_BUSES[1].to_vec());
}

#[test]
fn six_clusters_hold_a_thousand_vehicles() {
    let s = replicate_cluster(&bundled_scenario(), 6, Some(42), 0).unwrap();
    check_replica(&s, 6);
    assert!(s.ev_count() >= 1000);
}

#[test]
fn seventh_cluster_exhausts_the_feeder() {
    let err = replicate_cluster(&bundled_scenario(), 7, None, 0).unwrap_err();
    assert!(matches!(err, ExperimentError::BusExhaustion { needed: 7, available: 6 }), "{err}");
}

#[test]
fn multi_storage_template_is_rejected() {
    let two = replicate_cluster(&bundled_scenario(), 2, None, 0).unwrap();
    assert!(matches!(replicate_cluster(&two, 2, None, 0), Err(ExperimentError::Template(_))));
}

#[test]
fn reports_carry_every_variant() {
    let mut buf = Vec::new();
    write_cost_summary(&mut buf, variants()).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "variant,C_cso_1,C_cso_2,C_cso_3,C_cso_4,sum_C_cso,C_seso_1,C_seso,C_dso,total,reduction_pct"
    );
    let labels: Vec<&str> = lines.map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(labels, ["B1", "B2", "B3", "Proposed"]);

    let rows = vec![SweepRow {
        parameter: 0.5,
        variant: VariantKind::B2IndividualStorage,
        cso_total: 1.0,
        seso_total: 0.0,
        dso: 2.0,
        total: 3.0,
        storage_throughput: 4.0,
    }];
    let mut buf = Vec::new();
    write_sweep(&mut buf, &rows).unwrap();
    assert_eq!(
        String::from_utf8(buf).unwrap(),
        "parameter,variant,cso_total,seso_total,dso,total,storage_throughput\n0.5,B2,1.000000,0.000000,2.000000,3.000000,4.000000\n"
    );
}
