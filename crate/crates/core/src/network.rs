//! Distribution network side: radial branch-flow model with the conic
//! relaxation of the current equation, and the network operator's program.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::kernel::{ConicSolution, ConvexProgram, LinExpr};
use crate::scenario::{NetworkSpec, Scenario, Tariff};

pub const FEAS_TOL: f64 = 1e-6;

/// Index structure of a radial feeder.
#[derive(Debug, Clone)]
pub struct Topology {
    pub bus_ids: Vec<u32>,
    pub index: HashMap<u32, usize>,
    pub slack: usize,
    /// `(from, to)` bus positions per line.
    pub ends: Vec<(usize, usize)>,
    /// Lines leaving each bus.
    pub children: Vec<Vec<usize>>,
    /// Line feeding each bus (`None` at the slack bus).
    pub parent_line: Vec<Option<usize>>,
}

impl Topology {
    pub fn new(net: &NetworkSpec) -> Self {
        let bus_ids: Vec<u32> = net.buses.iter().map(|b| b.bus_id).collect();
        let index: HashMap<u32, usize> = bus_ids.iter().enumerate().map(|(i, &b)| (b, i)).collect();
        let ends: Vec<(usize, usize)> =
            net.lines.iter().map(|l| (index[&l.from_bus], index[&l.to_bus])).collect();
        let mut children = vec![Vec::new(); bus_ids.len()];
        let mut parent_line = vec![None; bus_ids.len()];
        for (l, &(f, t)) in ends.iter().enumerate() {
            children[f].push(l);
            parent_line[t] = Some(l);
        }
        Self { slack: index[&net.slack_bus_id], bus_ids, index, ends, children, parent_line }
    }
}

/// Network operating point. Line/bus quantities in p.u. (bus powers are net
/// consumption), exchanges in kW.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowState {
    pub line_p: Vec<Vec<f64>>,
    pub line_q: Vec<Vec<f64>>,
    pub current_sq: Vec<Vec<f64>>,
    pub volt_sq: Vec<Vec<f64>>,
    pub bus_p: Vec<Vec<f64>>,
    pub bus_q: Vec<Vec<f64>>,
    pub grid_buy: Vec<f64>,
    pub grid_sell: Vec<f64>,
    pub station_exchange: Vec<Vec<f64>>,
    pub storage_exchange: Vec<Vec<f64>>,
}

impl FlowState {
    pub fn zeros(lines: usize, buses: usize, stations: usize, storages: usize, slots: usize) -> Self {
        let z = |n: usize| vec![vec![0.0; slots]; n];
        Self {
            line_p: z(lines),
            line_q: z(lines),
            current_sq: z(lines),
            volt_sq: z(buses),
            bus_p: z(buses),
            bus_q: z(buses),
            grid_buy: vec![0.0; slots],
            grid_sell: vec![0.0; slots],
            station_exchange: z(stations),
            storage_exchange: z(storages),
        }
    }
}

/// Per-line-slot gaps `ℓ − (P² + Q²)/v_from` and their maximum.
pub fn relaxation_gap(fs: &FlowState, net: &NetworkSpec) -> (f64, Vec<Vec<f64>>) {
    let topo = Topology::new(net);
    let mut worst = 0.0_f64;
    let gaps: Vec<Vec<f64>> = topo
        .ends
        .iter()
        .enumerate()
        .map(|(l, &(from, _))| {
            (0..fs.line_p[l].len())
                .map(|t| {
                    let p = fs.line_p[l][t];
                    let q = fs.line_q[l][t];
                    let g = fs.current_sq[l][t] - (p * p + q * q) / fs.volt_sq[from][t];
                    worst = worst.max(g.abs());
                    g
                })
                .collect()
        })
        .collect();
    (worst, gaps)
}

/// Cost of the utility exchange at the slack bus, dollars.
pub fn dso_energy_cost(buy: &[f64], sell: &[f64], tariff: &Tariff, dt: f64) -> f64 {
    (0..buy.len()).map(|t| (buy[t] * tariff.buy_price[t] - sell[t] * tariff.sell_price[t]) * dt).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetworkConstraint {
    ActiveBalance,
    ReactiveBalance,
    VoltageDrop,
    ConeRelaxation,
    BusActiveBounds,
    BusReactiveBounds,
    CurrentBounds,
    VoltageBounds,
    SlackVoltage,
    SlackBalance,
    GridExchangeSign,
    BusInjection,
    Shape,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkViolation {
    pub constraint: NetworkConstraint,
    pub element: Option<usize>,
    pub slot: Option<usize>,
    pub amount: f64,
}

/// Net consumption at each bus (kW) implied by base load and the exchanges
/// of the stations and storages located there.
pub fn bus_consumption_kw(s: &Scenario, fs: &FlowState, t: usize) -> Vec<f64> {
    let topo = Topology::new(&s.network);
    let mut p: Vec<f64> = s.network.buses.iter().map(|b| b.base_load_p[t]).collect();
    for (i, st) in s.stations.iter().enumerate() {
        p[topo.index[&st.bus_id]] -= fs.station_exchange[i][t];
    }
    for (b, sb) in s.storages.iter().enumerate() {
        p[topo.index[&sb.bus_id]] -= fs.storage_exchange[b][t];
    }
    p
}

/// Audits branch-flow balance, voltage drop, cone feasibility, every box
/// bound, the slack bus, and the bus injections implied by the station and
/// storage exchanges.
pub fn check_network_feasibility(fs: &FlowState, s: &Scenario) -> Vec<NetworkViolation> {
    let net = &s.network;
    let topo = Topology::new(net);
    let slots = s.slots();
    let mut out = Vec::new();
    let mut push = |c, e, t, a: f64| out.push(NetworkViolation { constraint: c, element: e, slot: t, amount: a });
    let nl = net.lines.len();
    let nb = net.buses.len();
    let ok = fs.line_p.len() == nl
        && fs.line_q.len() == nl
        && fs.current_sq.len() == nl
        && fs.volt_sq.len() == nb
        && fs.bus_p.len() == nb
        && fs.bus_q.len() == nb
        && fs.station_exchange.len() == s.stations.len()
        && fs.storage_exchange.len() == s.storages.len()
        && fs.grid_buy.len() == slots
        && fs.grid_sell.len() == slots;
    if !ok {
        push(NetworkConstraint::Shape, None, None, f64::NAN);
        return out;
    }
    let sb = net.s_base;
    for t in 0..slots {
        let kw = bus_consumption_kw(s, fs, t);
        for (j, bus) in net.buses.iter().enumerate() {
            let gap = (fs.bus_p[j][t] - kw[j] / sb).abs();
            if j != topo.slack && gap > FEAS_TOL {
                push(NetworkConstraint::BusInjection, Some(j), Some(t), gap);
            }
            let gap = (fs.bus_q[j][t] - bus.base_load_q[t] / sb).abs();
            if j != topo.slack && gap > FEAS_TOL {
                push(NetworkConstraint::BusInjection, Some(j), Some(t), gap);
            }
            if j == topo.slack {
                let gap = (fs.volt_sq[j][t] - 1.0).abs();
                if gap > FEAS_TOL {
                    push(NetworkConstraint::SlackVoltage, Some(j), Some(t), gap);
                }
                continue;
            }
            let over = (bus.p_bounds.0 / sb - fs.bus_p[j][t]).max(fs.bus_p[j][t] - bus.p_bounds.1 / sb);
            if over > FEAS_TOL {
                push(NetworkConstraint::BusActiveBounds, Some(j), Some(t), over);
            }
            let over = (bus.q_bounds.0 / sb - fs.bus_q[j][t]).max(fs.bus_q[j][t] - bus.q_bounds.1 / sb);
            if over > FEAS_TOL {
                push(NetworkConstraint::BusReactiveBounds, Some(j), Some(t), over);
            }
            let v = fs.volt_sq[j][t];
            let over = (bus.v_bounds.0 - v).max(v - bus.v_bounds.1);
            if over > FEAS_TOL {
                push(NetworkConstraint::VoltageBounds, Some(j), Some(t), over);
            }
        }
        for (l, (line, &(from, to))) in net.lines.iter().zip(&topo.ends).enumerate() {
            let (p, q, ell) = (fs.line_p[l][t], fs.line_q[l][t], fs.current_sq[l][t]);
            let out_p: f64 = topo.children[to].iter().map(|&c| fs.line_p[c][t]).sum();
            let out_q: f64 = topo.children[to].iter().map(|&c| fs.line_q[c][t]).sum();
            let gap = (fs.bus_p[to][t] - (p - line.resistance * ell - out_p)).abs();
            if gap > FEAS_TOL {
                push(NetworkConstraint::ActiveBalance, Some(l), Some(t), gap);
            }
            let gap = (fs.bus_q[to][t] - (q - line.reactance * ell - out_q)).abs();
            if gap > FEAS_TOL {
                push(NetworkConstraint::ReactiveBalance, Some(l), Some(t), gap);
            }
            let z2 = line.resistance.powi(2) + line.reactance.powi(2);
            let vj = fs.volt_sq[from][t] - 2.0 * (line.resistance * p + line.reactance * q) + z2 * ell;
            let gap = (fs.volt_sq[to][t] - vj).abs();
            if gap > FEAS_TOL {
                push(NetworkConstraint::VoltageDrop, Some(l), Some(t), gap);
            }
            let short = (p * p + q * q) / fs.volt_sq[from][t] - ell;
            if short > FEAS_TOL {
                push(NetworkConstraint::ConeRelaxation, Some(l), Some(t), short);
            }
            let over = (-ell).max(ell - line.current_sq_max);
            if over > FEAS_TOL {
                push(NetworkConstraint::CurrentBounds, Some(l), Some(t), over);
            }
        }
        let root = topo.slack;
        let supplied = (fs.grid_buy[t] - fs.grid_sell[t]) / sb;
        let outflow: f64 = topo.children[root].iter().map(|&c| fs.line_p[c][t]).sum();
        let gap = (supplied - outflow - net.buses[root].base_load_p[t] / sb).abs();
        if gap > FEAS_TOL {
            push(NetworkConstraint::SlackBalance, Some(root), Some(t), gap);
        }
        let neg = (-fs.grid_buy[t]).max(-fs.grid_sell[t]);
        if neg > FEAS_TOL {
            push(NetworkConstraint::GridExchangeSign, Some(root), Some(t), neg);
        }
    }
    out
}

/// Variable indices of the network model inside a (possibly larger) program.
#[derive(Debug, Clone)]
pub struct NetworkBlock {
    pub line_p: Vec<Vec<usize>>,
    pub line_q: Vec<Vec<usize>>,
    pub current_sq: Vec<Vec<usize>>,
    /// Squared voltages; `None` at the slack bus, whose voltage is fixed to 1.
    pub volt_sq: Vec<Option<Vec<usize>>>,
    pub grid_buy: Vec<usize>,
    pub grid_sell: Vec<usize>,
    /// Station sales to the network `p_g`, kW.
    pub station_exchange: Vec<Vec<usize>>,
    /// Network purchases from each storage `p_gb`, kW; empty without grid access.
    pub storage_exchange: Vec<Vec<usize>>,
}

impl NetworkBlock {
    /// Adds the branch-flow constraints, bus bounds, the slack exchange and the
    /// utility cost to `prog`.
    pub fn build(prog: &mut ConvexProgram, s: &Scenario) -> Self {
        let net = &s.network;
        let topo = Topology::new(net);
        let slots = s.slots();
        let dt = s.dt();
        let sb = net.s_base;
        let nl = net.lines.len();

        let per_line = |prog: &mut ConvexProgram, name: &str| -> Vec<Vec<usize>> {
            (0..nl)
                .map(|l| {
                    let (f, t) = topo.ends[l];
                    prog.add_vars(&format!("{name}[{}-{}]", topo.bus_ids[f], topo.bus_ids[t]), slots)
                })
                .collect()
        };
        let line_p = per_line(prog, "P");
        let line_q = per_line(prog, "Q");
        let current_sq = per_line(prog, "l");
        let volt_sq: Vec<Option<Vec<usize>>> = (0..net.buses.len())
            .map(|j| (j != topo.slack).then(|| prog.add_vars(&format!("v[{}]", topo.bus_ids[j]), slots)))
            .collect();
        let grid_buy = prog.add_vars("grid.buy", slots);
        let grid_sell = prog.add_vars("grid.sell", slots);
        let station_exchange: Vec<Vec<usize>> =
            s.stations.iter().map(|st| prog.add_vars(&format!("cs{}.pg", st.station_id), slots)).collect();
        let storage_exchange: Vec<Vec<usize>> = s
            .storages
            .iter()
            .map(|b| if b.grid_access { prog.add_vars(&format!("ses{}.pgb", b.storage_id), slots) } else { Vec::new() })
            .collect();

        let volt = |j: usize, t: usize| -> LinExpr {
            match &volt_sq[j] {
                Some(v) => LinExpr::var(v[t]),
                None => LinExpr::constant(1.0),
            }
        };

        for t in 0..slots {
            // net consumption at each bus, p.u.
            let mut cons_p: Vec<LinExpr> =
                net.buses.iter().map(|b| LinExpr::constant(b.base_load_p[t] / sb)).collect();
            let cons_q: Vec<f64> = net.buses.iter().map(|b| b.base_load_q[t] / sb).collect();
            for (i, st) in s.stations.iter().enumerate() {
                cons_p[topo.index[&st.bus_id]].push(station_exchange[i][t], -1.0 / sb);
            }
            for (b, sto) in s.storages.iter().enumerate() {
                if sto.grid_access {
                    cons_p[topo.index[&sto.bus_id]].push(storage_exchange[b][t], -1.0 / sb);
                }
            }

            for (l, line) in net.lines.iter().enumerate() {
                let (from, to) = topo.ends[l];
                // P − rℓ − Σ P_children − p_to = 0
                let mut bal = LinExpr::var(line_p[l][t]).term(current_sq[l][t], -line.resistance);
                let mut bal_q = LinExpr::var(line_q[l][t]).term(current_sq[l][t], -line.reactance);
                for &c in &topo.children[to] {
                    bal.push(line_p[c][t], -1.0);
                    bal_q.push(line_q[c][t], -1.0);
                }
                bal.extend(&cons_p[to], -1.0);
                let bal_q = bal_q.plus(-cons_q[to]);
                prog.add_eq(bal);
                prog.add_eq(bal_q);

                let z2 = line.resistance.powi(2) + line.reactance.powi(2);
                let mut drop = volt(to, t);
                drop.extend(&volt(from, t), -1.0);
                let drop = drop
                    .term(line_p[l][t], 2.0 * line.resistance)
                    .term(line_q[l][t], 2.0 * line.reactance)
                    .term(current_sq[l][t], -z2);
                prog.add_eq(drop);

                // ℓ·v ≥ P² + Q²  ⇔  ‖(2P, 2Q, ℓ − v)‖ ≤ ℓ + v
                let vf = volt(from, t);
                let mut top = LinExpr::var(current_sq[l][t]);
                top.extend(&vf, 1.0);
                let mut diff = LinExpr::var(current_sq[l][t]);
                diff.extend(&vf, -1.0);
                prog.add_soc(
                    top,
                    vec![LinExpr::new().term(line_p[l][t], 2.0), LinExpr::new().term(line_q[l][t], 2.0), diff],
                );
                prog.bound(current_sq[l][t], 0.0, line.current_sq_max);
            }

            for (j, bus) in net.buses.iter().enumerate() {
                if j == topo.slack {
                    continue;
                }
                let v = volt_sq[j].as_ref().expect("non-slack voltage")[t];
                prog.bound(v, bus.v_bounds.0, bus.v_bounds.1);
                let p = &cons_p[j];
                if p.terms.is_empty() {
                    continue;
                }
                let mut lo = LinExpr::new();
                lo.extend(p, 1.0);
                prog.add_ge(lo.plus(-bus.p_bounds.0 / sb));
                let mut hi = LinExpr::new();
                hi.extend(p, 1.0);
                prog.add_le(hi.plus(-bus.p_bounds.1 / sb));
            }

            // utility exchange: (buy − sell)/S = Σ P_root,k + base_root
            let root = topo.slack;
            let mut slack =
                LinExpr::new().term(grid_buy[t], 1.0 / sb).term(grid_sell[t], -1.0 / sb).plus(-cons_p[root].constant);
            for &c in &topo.children[root] {
                slack.push(line_p[c][t], -1.0);
            }
            for &(v, c) in &cons_p[root].terms {
                slack.push(v, -c);
            }
            prog.add_eq(slack);
            prog.bound(grid_buy[t], 0.0, f64::INFINITY);
            prog.bound(grid_sell[t], 0.0, f64::INFINITY);
            prog.add_linear_cost(grid_buy[t], s.tariff.buy_price[t] * dt);
            prog.add_linear_cost(grid_sell[t], -s.tariff.sell_price[t] * dt);
        }

        Self { line_p, line_q, current_sq, volt_sq, grid_buy, grid_sell, station_exchange, storage_exchange }
    }

    pub fn storage_exchange_expr(&self, b: usize, t: usize) -> LinExpr {
        if self.storage_exchange[b].is_empty() {
            LinExpr::new()
        } else {
            LinExpr::var(self.storage_exchange[b][t])
        }
    }

    pub fn decode(&self, s: &Scenario, sol: &ConicSolution) -> FlowState {
        let slots = s.slots();
        let read = |ix: &Vec<usize>| ix.iter().map(|&i| sol.primal[i]).collect::<Vec<f64>>();
        let mut fs = FlowState {
            line_p: self.line_p.iter().map(read).collect(),
            line_q: self.line_q.iter().map(read).collect(),
            current_sq: self.current_sq.iter().map(read).collect(),
            volt_sq: self
                .volt_sq
                .iter()
                .map(|v| match v {
                    Some(ix) => read(ix),
                    None => vec![1.0; slots],
                })
                .collect(),
            bus_p: Vec::new(),
            bus_q: Vec::new(),
            grid_buy: read(&self.grid_buy),
            grid_sell: read(&self.grid_sell),
            station_exchange: self.station_exchange.iter().map(read).collect(),
            storage_exchange: self
                .storage_exchange
                .iter()
                .map(|ix| if ix.is_empty() { vec![0.0; slots] } else { read(ix) })
                .collect(),
        };
        fill_bus_injections(&mut fs, s);
        fs
    }
}

fn fill_bus_injections(fs: &mut FlowState, s: &Scenario) {
    let sb = s.network.s_base;
    let slots = s.slots();
    let nb = s.network.buses.len();
    fs.bus_p = vec![vec![0.0; slots]; nb];
    fs.bus_q = vec![vec![0.0; slots]; nb];
    for t in 0..slots {
        let kw = bus_consumption_kw(s, fs, t);
        for j in 0..nb {
            fs.bus_p[j][t] = kw[j] / sb;
            fs.bus_q[j][t] = s.network.buses[j].base_load_q[t] / sb;
        }
    }
}

#[derive(Debug, Clone)]
pub struct DsoProgram {
    pub program: ConvexProgram,
    pub block: NetworkBlock,
}

/// Anchors and prices seen by the network operator in a prediction step.
#[derive(Debug, Clone)]
pub struct DsoInputs<'a> {
    pub lambda: &'a [Vec<f64>],
    pub mu: &'a [Vec<f64>],
    pub demand: &'a [Vec<f64>],
    pub to_storage: &'a [Vec<f64>],
    pub storage_from_grid: &'a [Vec<f64>],
}

/// Local program of the network operator:
/// utility cost − Σ λ·p_g·Δt − Σ μ·p_gb·Δt
/// + (β/2) Σ (Δt·(p̃_d + p_g + p̃_b − p_pv))² + (β/2) Σ (Δt·(p_gb + p̃_bg))².
pub fn assemble_dso_subproblem(s: &Scenario, inp: &DsoInputs<'_>, beta: f64) -> DsoProgram {
    let dt = s.dt();
    let mut program = ConvexProgram::new();
    let block = NetworkBlock::build(&mut program, s);
    for t in 0..s.slots() {
        for (i, st) in s.stations.iter().enumerate() {
            let pg = block.station_exchange[i][t];
            program.add_linear_cost(pg, -inp.lambda[i][t] * dt);
            let r = LinExpr::new()
                .term(pg, dt)
                .plus(dt * (inp.demand[i][t] + inp.to_storage[i][t] - st.pv_profile[t]));
            program.add_squared(&r, 0.5 * beta);
        }
        for b in 0..s.storages.len() {
            if block.storage_exchange[b].is_empty() {
                continue;
            }
            let pgb = block.storage_exchange[b][t];
            program.add_linear_cost(pgb, -inp.mu[b][t] * dt);
            let r = LinExpr::new().term(pgb, dt).plus(dt * inp.storage_from_grid[b][t]);
            program.add_squared(&r, 0.5 * beta);
        }
    }
    DsoProgram { program, block }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{solve, Tolerances};
    use crate::scenario::{BusSpec, LineSpec, TimeGrid};

    fn two_bus(load: f64) -> Scenario {
        let bus = |id, p: f64| BusSpec {
            bus_id: id,
            p_bounds: (-1e4, 1e4),
            q_bounds: (-1e4, 1e4),
            v_bounds: (0.81, 1.21),
            base_load_p: vec![p],
            base_load_q: vec![0.0],
        };
        Scenario {
            schema: 1,
            time: TimeGrid::hourly(1),
            network: NetworkSpec {
                buses: vec![bus(1, 0.0), bus(2, load)],
                lines: vec![LineSpec { from_bus: 1, to_bus: 2, resistance: 0.01, reactance: 0.01, current_sq_max: 10.0 }],
                slack_bus_id: 1,
                s_base: 1000.0,
                v_base: 12.66,
            },
            stations: vec![],
            storages: vec![],
            tariff: Tariff { buy_price: vec![0.05], sell_price: vec![0.01] },
            cyclic_storage: true,
        }
    }

    /// Fixed-point iteration of the exact branch-flow equations on one line.
    fn two_bus_oracle(load: f64, r: f64, x: f64) -> (f64, f64, f64) {
        let (mut p, mut q, mut l) = (load, 0.0, 0.0);
        for _ in 0..200 {
            l = p * p + q * q; // v_from = 1
            p = load + r * l;
            q = x * l;
        }
        let v = 1.0 - 2.0 * (r * p + x * q) + (r * r + x * x) * l;
        (p, l, v)
    }

    #[test]
    fn two_bus_matches_power_flow() {
        let s = two_bus(100.0);
        let z: Vec<Vec<f64>> = vec![];
        let inp = DsoInputs { lambda: &z, mu: &z, demand: &z, to_storage: &z, storage_from_grid: &z };
        let d = assemble_dso_subproblem(&s, &inp, 0.05);
        let sol = solve(&d.program, Tolerances::default());
        assert!(sol.is_optimal());
        let fs = d.block.decode(&s, &sol);
        let (p, l, v) = two_bus_oracle(0.1, 0.01, 0.01);
        assert!(p > 0.1);
        assert!((fs.line_p[0][0] - p).abs() < 1e-6);
        assert!((fs.current_sq[0][0] - l).abs() < 1e-6);
        assert!((fs.volt_sq[1][0] - v).abs() < 1e-6);
        assert!((fs.grid_buy[0] - 1000.0 * p).abs() < 1e-3);
        assert!(relaxation_gap(&fs, &s.network).0 < 1e-6);
        assert!(check_network_feasibility(&fs, &s).is_empty());
    }

    #[test]
    fn zero_everything_is_zero_flow() {
        let s = two_bus(0.0);
        let z: Vec<Vec<f64>> = vec![];
        let inp = DsoInputs { lambda: &z, mu: &z, demand: &z, to_storage: &z, storage_from_grid: &z };
        let d = assemble_dso_subproblem(&s, &inp, 0.05);
        let sol = solve(&d.program, Tolerances::default());
        assert!(sol.is_optimal());
        assert!(sol.objective.abs() < 1e-7);
        let fs = d.block.decode(&s, &sol);
        assert!(fs.line_p[0][0].abs() < 1e-7);
        assert!(relaxation_gap(&fs, &s.network).0 < 1e-7);
    }

    #[test]
    fn gap_reports_inflated_current() {
        let s = two_bus(100.0);
        let mut fs = FlowState::zeros(1, 2, 0, 0, 1);
        fs.volt_sq = vec![vec![1.0], vec![1.0]];
        assert_eq!(relaxation_gap(&fs, &s.network).0, 0.0);
        fs.current_sq[0][0] += 0.01;
        let (worst, gaps) = relaxation_gap(&fs, &s.network);
        assert!((gaps[0][0] - 0.01).abs() < 1e-15);
        assert!((worst - 0.01).abs() < 1e-15);
    }

    #[test]
    fn energy_cost_examples() {
        let tar = Tariff { buy_price: vec![0.10], sell_price: vec![0.01] };
        assert!((dso_energy_cost(&[100.0], &[0.0], &tar, 1.0) - 10.0).abs() < 1e-12);
        assert_eq!(dso_energy_cost(&[0.0], &[0.0], &tar, 1.0), 0.0);
        assert!((dso_energy_cost(&[0.0], &[50.0], &tar, 1.0) + 0.5).abs() < 1e-12);
    }
}
