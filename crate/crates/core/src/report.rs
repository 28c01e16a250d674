//! CSV writers for cost tables, sweeps and power-flow results.
//!
//! Every writer takes any `io::Write` so callers can target files, buffers
//! or stdout alike.

use std::io;

use crate::experiments::{ExperimentResult, ScaleRow, SweepRow};
use crate::network::{relaxation_gap, FlowState};
use crate::oracle::ProfitAllocation;
use crate::scenario::Scenario;

pub type ReportResult = Result<(), csv::Error>;

fn fmt(x: f64) -> String {
    format!("{x:.6}")
}

/// One row per variant: each operator's cost, the group sums and the
/// reduction relative to the no-storage baseline, in percent.
pub fn write_cost_summary<W: io::Write>(out: W, results: &[ExperimentResult]) -> ReportResult {
    let n_cso = results.iter().map(|r| r.cso.len()).max().unwrap_or(0);
    let n_seso = results.iter().map(|r| r.seso.len()).max().unwrap_or(0);
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["variant".to_string()];
    header.extend((1..=n_cso).map(|i| format!("C_cso_{i}")));
    header.push("sum_C_cso".into());
    header.extend((1..=n_seso).map(|b| format!("C_seso_{b}")));
    header.extend(["C_seso".into(), "C_dso".into(), "total".into(), "reduction_pct".into()]);
    w.write_record(&header)?;
    for r in results {
        let mut row = vec![r.variant.label().to_string()];
        row.extend((0..n_cso).map(|i| r.cso.get(i).map_or(String::new(), |&x| fmt(x))));
        row.push(fmt(r.cso_total()));
        row.extend((0..n_seso).map(|b| r.seso.get(b).map_or(String::new(), |&x| fmt(x))));
        row.extend([fmt(r.seso_total()), fmt(r.dso), fmt(r.total)]);
        row.push(r.reduction.map_or(String::new(), |x| fmt(100.0 * x)));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Per-station breakdown of operating costs and internal payments. Bilateral
/// columns (`C_i_b`/`C_b_i`, `C_i_g`/`C_g_i`) refer to the row's station;
/// storage and network totals repeat on every row of their cluster.
pub fn write_payment_breakdown<W: io::Write>(out: W, s: &Scenario, p: &ProfitAllocation) -> ReportResult {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "station", "C_cs", "C_i_b", "C_i_g", "C_cso", "sum_C_cso", "storage", "C_bat", "C_b_i", "C_b_g", "C_seso",
        "C_ds", "C_g_i", "C_g_b", "C_dso",
    ])?;
    let sum_cso: f64 = p.cso.iter().sum();
    let member = crate::oracle::membership(s);
    let total_grid_to_storage: f64 = p.grid_to_storage.iter().sum();
    for (i, st) in s.stations.iter().enumerate() {
        let mut row = vec![
            st.station_id.to_string(),
            fmt(p.station_cost[i]),
            fmt(p.station_to_storage[i]),
            fmt(p.station_to_grid[i]),
            fmt(p.cso[i]),
            fmt(sum_cso),
        ];
        match member[i] {
            Some((b, _)) => row.extend([
                s.storages[b].storage_id.to_string(),
                fmt(p.storage_cost[b]),
                fmt(p.storage_to_station[i]),
                fmt(p.storage_to_grid[b]),
                fmt(p.seso[b]),
            ]),
            None => row.extend(std::iter::repeat_n(String::new(), 5)),
        }
        row.extend([fmt(p.network_cost), fmt(p.grid_to_station[i]), fmt(total_grid_to_storage), fmt(p.dso)]);
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_sweep<W: io::Write>(out: W, rows: &[SweepRow]) -> ReportResult {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["parameter", "variant", "cso_total", "seso_total", "dso", "total", "storage_throughput"])?;
    for r in rows {
        w.write_record([
            format!("{}", r.parameter),
            r.variant.label().to_string(),
            fmt(r.cso_total),
            fmt(r.seso_total),
            fmt(r.dso),
            fmt(r.total),
            fmt(r.storage_throughput),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_scale<W: io::Write>(out: W, rows: &[ScaleRow]) -> ReportResult {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// `bus,slot,v_pu2`
pub fn write_bus_voltages<W: io::Write>(out: W, s: &Scenario, flow: &FlowState) -> ReportResult {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["bus", "slot", "v_pu2"])?;
    for (j, bus) in s.network.buses.iter().enumerate() {
        for (t, v) in flow.volt_sq[j].iter().enumerate() {
            w.write_record([bus.bus_id.to_string(), t.to_string(), format!("{v:.9}")])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `line,slot,P,Q,l,gap` with flows in p.u. and the cone slack per entry.
/// Lines are numbered from 1 in scenario order.
pub fn write_line_flows<W: io::Write>(out: W, s: &Scenario, flow: &FlowState) -> ReportResult {
    let (_, gaps) = relaxation_gap(flow, &s.network);
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["line", "slot", "P", "Q", "l", "gap"])?;
    for l in 0..s.network.lines.len() {
        for t in 0..s.slots() {
            w.write_record([
                (l + 1).to_string(),
                t.to_string(),
                format!("{:.9}", flow.line_p[l][t]),
                format!("{:.9}", flow.line_q[l][t]),
                format!("{:.9}", flow.current_sq[l][t]),
                format!("{:.3e}", gaps[l][t]),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
