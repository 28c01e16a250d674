//! End-to-end runs of the `chargeshare` binary: exit codes and output files.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use chargeshare_core::data::bundled_scenario;
use chargeshare_core::oracle::PricedAllocation;
use chargeshare_core::save_scenario;
use tempfile::TempDir;

fn run(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_chargeshare"))
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn header(path: &Path) -> String {
    fs::read_to_string(path).unwrap().lines().next().unwrap_or_default().to_string()
}

#[test]
fn solve_central_writes_allocation_and_tables() {
    let dir = TempDir::new().unwrap();
    let o = run(dir.path(), &["solve-central", "bundled"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["allocation.json", "payments.csv", "bus_voltages.csv", "line_flows.csv", "summary.json"] {
        assert!(dir.path().join(f).is_file(), "missing {f}");
    }
    assert_eq!(header(&dir.path().join("bus_voltages.csv")), "bus,slot,v_pu2");
    assert_eq!(header(&dir.path().join("line_flows.csv")), "line,slot,P,Q,l,gap");
    assert_eq!(
        header(&dir.path().join("payments.csv")),
        "station,C_cs,C_i_b,C_i_g,C_cso,sum_C_cso,storage,C_bat,C_b_i,C_b_g,C_seso,C_ds,C_g_i,C_g_b,C_dso"
    );
    let voltages = fs::read_to_string(dir.path().join("bus_voltages.csv")).unwrap();
    assert_eq!(voltages.lines().count(), 1 + 33 * 24);
}

#[test]
fn central_allocation_verifies_and_tampering_is_caught() {
    let dir = TempDir::new().unwrap();
    assert_eq!(code(&run(dir.path(), &["solve-central", "bundled"])), 0);
    let alloc = dir.path().join("allocation.json");
    let o = run(dir.path(), &["verify-equilibrium", "bundled", alloc.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    assert!(dir.path().join("equilibrium.json").is_file());

    let mut pa: PricedAllocation = serde_json::from_str(&fs::read_to_string(&alloc).unwrap()).unwrap();
    for b in &mut pa.allocation.storages {
        b.net_from_grid.iter_mut().for_each(|x| *x = 0.0);
        b.net_from_station.iter_mut().flatten().for_each(|x| *x = 0.0);
    }
    let tampered = dir.path().join("tampered.json");
    fs::write(&tampered, serde_json::to_string(&pa).unwrap()).unwrap();
    let o = run(dir.path(), &["verify-equilibrium", "bundled", tampered.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
}

#[test]
fn run_distributed_converges_and_writes_trace() {
    let dir = TempDir::new().unwrap();
    let o = run(dir.path(), &["run-distributed", "bundled", "--dual-variant", "appendix", "--compare"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(
        header(&dir.path().join("trace.csv")),
        "k,cso_total,seso_total,dso,total,lambda_gap,mu_gap,coupling_resid"
    );
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["status"], "converged");
    assert!(summary["relative_cost_error"].as_f64().unwrap().abs() <= 5e-3);
}

#[test]
fn iteration_cap_exits_with_three() {
    let dir = TempDir::new().unwrap();
    let o = run(dir.path(), &["run-distributed", "bundled", "--max-iter", "2", "--dual-variant", "main"]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    let trace = fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 3);
}

#[test]
fn infeasible_scenario_exits_with_two() {
    let dir = TempDir::new().unwrap();
    let mut s = bundled_scenario();
    s.storages.clear();
    let bus = s.stations[0].bus_id;
    let j = s.network.buses.iter().position(|b| b.bus_id == bus).unwrap();
    s.network.buses[j].p_bounds = (-2000.0, 100.0);
    let path = dir.path().join("tight.json");
    save_scenario(&s, &path).unwrap();
    let p = path.to_str().unwrap();
    assert_eq!(code(&run(dir.path(), &["solve-central", p])), 0);
    let o = run(dir.path(), &["solve-central", p, "--fix-casap"]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(code(&run(dir.path(), &["benchmark", p, "--variant", "b3"])), 2);
}

#[test]
fn benchmark_reports_every_variant() {
    let dir = TempDir::new().unwrap();
    let o = run(dir.path(), &["benchmark", "bundled"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let summary = fs::read_to_string(dir.path().join("cost_summary.csv")).unwrap();
    let mut lines = summary.lines();
    assert!(lines.next().unwrap().starts_with("variant,C_cso_1,"));
    let labels: Vec<&str> = lines.map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(labels, ["B1", "B2", "B3", "Proposed"]);
    assert!(dir.path().join("benchmark.json").is_file());
    assert!(dir.path().join("payments_proposed.csv").is_file());
}

#[test]
fn sweeps_write_one_row_per_cell() {
    let dir = TempDir::new().unwrap();
    let o = run(dir.path(), &["sweep-capacity", "bundled", "--multipliers", "0,1", "--variant", "b2,proposed"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(dir.path().join("capacity_sweep.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "parameter,variant,cso_total,seso_total,dso,total,storage_throughput");
    assert_eq!(csv.lines().count(), 5);

    let o = run(dir.path(), &["sweep-coeff", "bundled", "--which", "ev", "--values", "1e-5,1e-4", "--variant", "proposed"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read_to_string(dir.path().join("coeff_sweep.csv")).unwrap().lines().count(), 3);
    assert!(dir.path().join("coeff_sweep.json").is_file());
}

#[test]
fn check_a1_reports_the_condition() {
    let dir = TempDir::new().unwrap();
    assert_eq!(code(&run(dir.path(), &["check-a1", "--alpha", "0.9", "--tau", "0"])), 0);
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("a1.json")).unwrap()).unwrap();
    assert_eq!(v["condition"]["holds"], true);
    assert!(v["matrices"].as_object().unwrap().len() == 4);
    assert_eq!(code(&run(dir.path(), &["check-a1", "--alpha", "1", "--tau", "1"])), 0);
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("a1.json")).unwrap()).unwrap();
    assert_eq!(v["condition"]["holds"], false);
}

#[test]
fn scale_runs_two_clusters() {
    let dir = TempDir::new().unwrap();
    let o = run(dir.path(), &["scale", "bundled", "--groups", "2"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(header(&dir.path().join("scale.csv")).starts_with("groups,stations,storages,evs,iterations,converged"));
    assert!(dir.path().join("trace_g2.csv").is_file());
    assert_eq!(code(&run(dir.path(), &["scale", "bundled", "--groups", "7"])), 1);
}

#[test]
fn usage_errors_do_not_look_infeasible() {
    let dir = TempDir::new().unwrap();
    assert_eq!(code(&run(dir.path(), &["solve-central"])), 1);
    assert_eq!(code(&run(dir.path(), &["sweep-coeff", "bundled", "--which", "pv"])), 1);
    assert_eq!(code(&run(dir.path(), &["solve-central", "bundled:nope"])), 1);
    assert_eq!(code(&run(dir.path(), &["run-distributed", "bundled", "--alpha", "1", "--tau", "1"])), 1);
}
