//! Centralized social-cost benchmark, price extraction from its duals, and
//! equilibrium audits of any allocation/price pair.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ev::{assemble_cso_subproblem, check_ev_feasibility, station_cost, EvSchedule, StationBlock, StationState};
use crate::kernel::{price_from_dual, solve, ConicSolution, ConvexProgram, LinExpr, Residuals, SolveStatus, Tolerances};
use crate::network::{check_network_feasibility, dso_energy_cost, relaxation_gap, FlowState, NetworkBlock};
use crate::scenario::Scenario;
use crate::storage::{check_storage_feasibility, degradation_cost, StorageBlock, StorageSchedule};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationAllocation {
    pub schedules: Vec<EvSchedule>,
    pub state: StationState,
}

/// Every primal decision of one horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub stations: Vec<StationAllocation>,
    pub storages: Vec<StorageSchedule>,
    pub flow: FlowState,
}

/// Trading prices as multipliers of the coupling constraints, in the
/// convention where the Lagrangian subtracts `price × residual`. The market
/// price a buyer pays per kWh is therefore the negated value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceSystem {
    pub station_price: Vec<Vec<f64>>,
    pub storage_price: Vec<Vec<f64>>,
}

impl PriceSystem {
    pub fn zeros(stations: usize, storages: usize, slots: usize) -> Self {
        Self { station_price: vec![vec![0.0; slots]; stations], storage_price: vec![vec![0.0; slots]; storages] }
    }

    /// Largest elementwise distance between two price systems.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        let d = |a: &Vec<Vec<f64>>, b: &Vec<Vec<f64>>| {
            a.iter().flatten().zip(b.iter().flatten()).fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()))
        };
        d(&self.station_price, &other.station_price).max(d(&self.storage_price, &other.storage_price))
    }
}

/// An allocation together with the prices it was settled at; the on-disk
/// form read back by equilibrium verification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PricedAllocation {
    pub allocation: Allocation,
    pub prices: PriceSystem,
}

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("model infeasible: {0}")]
    Infeasible(String),
    #[error("solver stopped with status {status:?} (residuals {residuals:?})")]
    Solver { status: SolveStatus, residuals: Residuals },
}

/// Model options shared by the centralized solve and the benchmark variants.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelOptions {
    /// Pin every EV to its CASAP profile (inelastic demand).
    pub fix_casap: bool,
}

/// The social-cost program with its decode maps.
pub struct CentralProgram {
    pub program: ConvexProgram,
    pub stations: Vec<StationBlock>,
    pub storages: Vec<StorageBlock>,
    pub network: NetworkBlock,
    /// Station balance rows per station per slot.
    pub station_rows: Vec<Vec<usize>>,
    /// Storage–grid exchange rows per storage per slot (empty without grid access).
    pub storage_rows: Vec<Vec<usize>>,
    /// `(storage position, member position)` per station.
    pub membership: Vec<Option<(usize, usize)>>,
}

/// For each station, the storage it is connected to and its position among
/// that storage's members.
pub fn membership(s: &Scenario) -> Vec<Option<(usize, usize)>> {
    let mut m = vec![None; s.stations.len()];
    for (b, sto) in s.storages.iter().enumerate() {
        for (k, id) in sto.connected_stations.iter().enumerate() {
            if let Some(i) = s.station_index(*id) {
                m[i] = Some((b, k));
            }
        }
    }
    m
}

pub fn build_central(s: &Scenario, opts: ModelOptions) -> CentralProgram {
    let mut program = ConvexProgram::new();
    let grid = s.time;
    let dt = s.dt();
    let stations: Vec<StationBlock> =
        s.stations.iter().map(|st| StationBlock::build(&mut program, st, &grid, opts.fix_casap)).collect();
    let storages: Vec<StorageBlock> =
        s.storages.iter().map(|b| StorageBlock::build(&mut program, b, &grid, s.cyclic_storage)).collect();
    let network = NetworkBlock::build(&mut program, s);
    let membership = membership(s);

    let mut station_rows = Vec::with_capacity(s.stations.len());
    for (i, st) in s.stations.iter().enumerate() {
        let mut rows = Vec::with_capacity(s.slots());
        for t in 0..s.slots() {
            // Δt·(p_d + p_g + p_b − p_pv) = 0
            let mut r = LinExpr::new().term(stations[i].demand[t], dt).term(network.station_exchange[i][t], dt);
            if let Some((b, k)) = membership[i] {
                r.extend(&storages[b].station_net(k, t), dt);
            }
            rows.push(program.add_eq(r.plus(-dt * st.pv_profile[t])));
        }
        station_rows.push(rows);
    }
    let mut storage_rows = Vec::with_capacity(s.storages.len());
    for (b, sto) in s.storages.iter().enumerate() {
        if !sto.grid_access {
            storage_rows.push(Vec::new());
            continue;
        }
        let rows = (0..s.slots())
            .map(|t| {
                // Δt·(p_gb + p_bg) = 0
                let mut r = LinExpr::new();
                r.extend(&network.storage_exchange_expr(b, t), dt);
                r.extend(&storages[b].grid_net(t), dt);
                program.add_eq(r)
            })
            .collect();
        storage_rows.push(rows);
    }
    CentralProgram { program, stations, storages, network, station_rows, storage_rows, membership }
}

impl CentralProgram {
    pub fn decode(&self, s: &Scenario, sol: &ConicSolution) -> (Allocation, PriceSystem) {
        let grid = s.time;
        let flow = self.network.decode(s, sol);
        let storages: Vec<StorageSchedule> =
            self.storages.iter().zip(&s.storages).map(|(blk, spec)| blk.decode(spec, &grid, sol)).collect();
        let stations = s
            .stations
            .iter()
            .enumerate()
            .map(|(i, st)| {
                let schedules = self.stations[i].decode_schedules(st, &grid, sol);
                let to_storage = match self.membership[i] {
                    Some((b, k)) => storages[b].net_from_station[k].clone(),
                    None => vec![0.0; s.slots()],
                };
                StationAllocation {
                    schedules,
                    state: StationState {
                        demand: self.stations[i].decode_demand(sol),
                        to_grid: flow.station_exchange[i].clone(),
                        to_storage,
                    },
                }
            })
            .collect();
        let station_price = self
            .station_rows
            .iter()
            .map(|rows| rows.iter().map(|&r| price_from_dual(sol.eq_duals[r])).collect())
            .collect();
        let storage_price = self
            .storage_rows
            .iter()
            .map(|rows| {
                if rows.is_empty() {
                    vec![0.0; s.slots()]
                } else {
                    rows.iter().map(|&r| price_from_dual(sol.eq_duals[r])).collect()
                }
            })
            .collect();
        (Allocation { stations, storages, flow }, PriceSystem { station_price, storage_price })
    }
}

#[derive(Debug, Clone)]
pub struct CentralSolution {
    pub allocation: Allocation,
    pub prices: PriceSystem,
    pub objective: f64,
    pub residuals: Residuals,
    pub iterations: u32,
}

pub fn solve_centralized(s: &Scenario) -> Result<CentralSolution, OracleError> {
    solve_centralized_with(s, ModelOptions::default())
}

pub fn solve_centralized_with(s: &Scenario, opts: ModelOptions) -> Result<CentralSolution, OracleError> {
    let cp = build_central(s, opts);
    let sol = solve(&cp.program, Tolerances::default());
    match sol.status {
        SolveStatus::Optimal => {}
        SolveStatus::Infeasible => return Err(OracleError::Infeasible(diagnose_infeasibility(s, opts))),
        status => return Err(OracleError::Solver { status, residuals: sol.residuals }),
    }
    let (allocation, prices) = cp.decode(s, &sol);
    Ok(CentralSolution { allocation, prices, objective: sol.objective, residuals: sol.residuals, iterations: sol.iterations })
}

/// Narrows an infeasible instance down to the constraint family at fault.
fn diagnose_infeasibility(s: &Scenario, opts: ModelOptions) -> String {
    let mut base = s.clone();
    base.stations.clear();
    base.storages.clear();
    let mut p = ConvexProgram::new();
    NetworkBlock::build(&mut p, &base);
    if solve(&p, Tolerances::default()).status == SolveStatus::Infeasible {
        return "network limits are violated by the base load alone".into();
    }
    if opts.fix_casap {
        "CASAP charging demand violates network limits".into()
    } else {
        "station demand together with storage limits cannot be served within network limits".into()
    }
}

/// Operating cost of each stakeholder, before trading.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatingCosts {
    pub stations: Vec<f64>,
    pub storages: Vec<f64>,
    pub network: f64,
}

impl OperatingCosts {
    pub fn total(&self) -> f64 {
        self.stations.iter().sum::<f64>() + self.storages.iter().sum::<f64>() + self.network
    }
}

pub fn operating_costs(s: &Scenario, a: &Allocation) -> OperatingCosts {
    let grid = s.time;
    OperatingCosts {
        stations: s
            .stations
            .iter()
            .zip(&a.stations)
            .map(|(st, al)| station_cost(&al.schedules, &st.fleet, &grid))
            .collect(),
        storages: s.storages.iter().zip(&a.storages).map(|(spec, sch)| degradation_cost(sch, spec, &grid)).collect(),
        network: dso_energy_cost(&a.flow.grid_buy, &a.flow.grid_sell, &s.tariff, s.dt()),
    }
}

/// Bilateral payments and per-stakeholder totals. `C_{x-y}` is what `x` pays `y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfitAllocation {
    pub station_cost: Vec<f64>,
    pub station_to_storage: Vec<f64>,
    pub station_to_grid: Vec<f64>,
    pub storage_to_station: Vec<f64>,
    pub grid_to_station: Vec<f64>,
    pub storage_cost: Vec<f64>,
    pub storage_to_grid: Vec<f64>,
    pub grid_to_storage: Vec<f64>,
    pub network_cost: f64,
    pub cso: Vec<f64>,
    pub seso: Vec<f64>,
    pub dso: f64,
}

impl ProfitAllocation {
    pub fn total(&self) -> f64 {
        self.cso.iter().sum::<f64>() + self.seso.iter().sum::<f64>() + self.dso
    }
}

pub fn profit_allocation(s: &Scenario, a: &Allocation, prices: &PriceSystem) -> ProfitAllocation {
    let dt = s.dt();
    let op = operating_costs(s, a);
    let m = membership(s);
    let pay = |lam: &[f64], q: &[f64]| lam.iter().zip(q).map(|(l, x)| l * x * dt).sum::<f64>();

    let station_to_storage: Vec<f64> = (0..s.stations.len())
        .map(|i| match m[i] {
            Some((b, k)) => pay(&prices.station_price[i], &a.storages[b].net_from_station[k]),
            None => 0.0,
        })
        .collect();
    let station_to_grid: Vec<f64> =
        (0..s.stations.len()).map(|i| pay(&prices.station_price[i], &a.flow.station_exchange[i])).collect();
    let storage_to_grid: Vec<f64> =
        (0..s.storages.len()).map(|b| -pay(&prices.storage_price[b], &a.storages[b].net_from_grid)).collect();

    let storage_to_station: Vec<f64> = station_to_storage.iter().map(|x| -x).collect();
    let grid_to_station: Vec<f64> = station_to_grid.iter().map(|x| -x).collect();
    let grid_to_storage: Vec<f64> = storage_to_grid.iter().map(|x| -x).collect();

    let cso = (0..s.stations.len()).map(|i| op.stations[i] + station_to_storage[i] + station_to_grid[i]).collect();
    let seso = (0..s.storages.len())
        .map(|b| {
            let from_members: f64 = s.storage_members(b).iter().map(|&i| storage_to_station[i]).sum();
            op.storages[b] + from_members + storage_to_grid[b]
        })
        .collect();
    let dso = op.network + grid_to_station.iter().sum::<f64>() + grid_to_storage.iter().sum::<f64>();
    ProfitAllocation {
        station_cost: op.stations,
        station_to_storage,
        station_to_grid,
        storage_to_station,
        grid_to_station,
        storage_cost: op.storages,
        storage_to_grid,
        grid_to_storage,
        network_cost: op.network,
        cso,
        seso,
        dso,
    }
}

/// Largest coupling residuals of an allocation, kW: station balance and
/// storage–grid exchange.
pub fn coupling_residuals(s: &Scenario, a: &Allocation) -> (f64, f64) {
    let m = membership(s);
    let mut station = 0.0_f64;
    for (i, st) in s.stations.iter().enumerate() {
        for t in 0..s.slots() {
            let pb = m[i].map_or(0.0, |(b, k)| a.storages[b].net_from_station[k][t]);
            let demand: f64 = a.stations[i].schedules.iter().map(|e| e.net_power[t]).sum();
            let r = demand + a.flow.station_exchange[i][t] + pb - st.pv_profile[t];
            station = station.max(r.abs());
        }
    }
    let mut storage = 0.0_f64;
    for (b, sto) in s.storages.iter().enumerate() {
        if !sto.grid_access {
            continue;
        }
        for t in 0..s.slots() {
            storage = storage.max((a.flow.storage_exchange[b][t] + a.storages[b].net_from_grid[t]).abs());
        }
    }
    (station, storage)
}

/// Outcome of every component feasibility audit on an allocation.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub ev_violations: usize,
    pub storage_violations: usize,
    pub network_violations: usize,
    pub casap_terminal_error: f64,
    pub station_coupling: f64,
    pub storage_coupling: f64,
    pub max_relaxation_gap: f64,
    pub details: Vec<String>,
}

impl FeasibilityReport {
    /// Component constraints hold exactly (to the audit tolerance) and the
    /// coupling residuals are within `coupling_tol`.
    pub fn passes(&self, coupling_tol: f64) -> bool {
        self.ev_violations == 0
            && self.storage_violations == 0
            && self.network_violations == 0
            && self.casap_terminal_error <= 1e-9
            && self.station_coupling <= coupling_tol
            && self.storage_coupling <= coupling_tol
    }
}

pub fn audit_allocation(s: &Scenario, a: &Allocation) -> FeasibilityReport {
    let grid = s.time;
    let mut r = FeasibilityReport::default();
    for (st, al) in s.stations.iter().zip(&a.stations) {
        for (v, (sch, task)) in al.schedules.iter().zip(&st.fleet).enumerate() {
            let bad = check_ev_feasibility(sch, task, &grid);
            if !bad.is_empty() {
                r.details.push(format!("station {} ev {v}: {:?}", st.station_id, bad[0]));
            }
            r.ev_violations += bad.len();
            if let Ok(c) = EvSchedule::casap(task, &grid) {
                r.casap_terminal_error =
                    r.casap_terminal_error.max((c.energy[task.departure_slot] - task.required_energy).abs());
            }
        }
    }
    for (spec, sch) in s.storages.iter().zip(&a.storages) {
        let bad = check_storage_feasibility(sch, spec, &grid, s.cyclic_storage);
        if !bad.is_empty() {
            r.details.push(format!("storage {}: {:?}", spec.storage_id, bad[0]));
        }
        r.storage_violations += bad.len();
    }
    let bad = check_network_feasibility(&a.flow, s);
    if !bad.is_empty() {
        r.details.push(format!("network: {:?}", bad[0]));
    }
    r.network_violations = bad.len();
    let (st, sto) = coupling_residuals(s, a);
    r.station_coupling = st;
    r.storage_coupling = sto;
    r.max_relaxation_gap = relaxation_gap(&a.flow, &s.network).0;
    r
}

// ---------------------------------------------------------------------------
// Agent best responses at fixed prices

/// Each agent's cost at the allocation minus its optimal cost at the same
/// prices. Nonnegative up to solver tolerance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentGaps {
    pub stations: Vec<f64>,
    pub storages: Vec<f64>,
    pub network: f64,
}

impl AgentGaps {
    pub fn max(&self) -> f64 {
        self.stations.iter().chain(&self.storages).fold(self.network, |m, &g| m.max(g))
    }

    pub fn min(&self) -> f64 {
        self.stations.iter().chain(&self.storages).fold(self.network, |m, &g| m.min(g))
    }
}

/// Optimal trades of every agent at fixed prices.
#[derive(Debug, Clone)]
struct BestResponses {
    /// Station net sale `p_pv − p_d` and the station's optimal cost.
    station_sale: Vec<Vec<f64>>,
    station_cost: Vec<f64>,
    /// Storage purchases from each member and from the grid, and optimal cost.
    storage_from_station: Vec<Vec<Vec<f64>>>,
    storage_from_grid: Vec<Vec<f64>>,
    storage_cost: Vec<f64>,
    network_from_station: Vec<Vec<f64>>,
    network_from_storage: Vec<Vec<f64>>,
    network_cost: f64,
}

fn require_optimal(sol: &ConicSolution, who: &str) -> Result<(), OracleError> {
    match sol.status {
        SolveStatus::Optimal => Ok(()),
        SolveStatus::Infeasible => Err(OracleError::Infeasible(format!("{who} has no feasible response"))),
        status => Err(OracleError::Solver { status, residuals: sol.residuals }),
    }
}

fn best_responses(s: &Scenario, prices: &PriceSystem) -> Result<BestResponses, OracleError> {
    let grid = s.time;
    let dt = s.dt();
    let slots = s.slots();
    let zeros = vec![0.0; slots];

    // stations: with a single price for both counterparties only the total sale matters
    let stations: Vec<(Vec<f64>, f64)> = s
        .stations
        .par_iter()
        .enumerate()
        .map(|(i, st)| {
            let lam = &prices.station_price[i];
            let p = assemble_cso_subproblem(st, &grid, lam, &zeros, &zeros, 0.0);
            let sol = solve(&p.program, Tolerances::default());
            require_optimal(&sol, &format!("station {}", st.station_id))?;
            let demand = p.block.decode_demand(&sol);
            let sale: Vec<f64> = (0..slots).map(|t| st.pv_profile[t] - demand[t]).collect();
            // objective is C_cs − Σ λ p_d Δt; add back Σ λ p_pv Δt
            let cost = sol.objective + (0..slots).map(|t| lam[t] * st.pv_profile[t] * dt).sum::<f64>();
            Ok((sale, cost))
        })
        .collect::<Result<_, OracleError>>()?;

    let storages: Vec<(Vec<Vec<f64>>, Vec<f64>, f64)> = s
        .storages
        .par_iter()
        .enumerate()
        .map(|(b, spec)| {
            let mut prog = ConvexProgram::new();
            let blk = StorageBlock::build(&mut prog, spec, &grid, s.cyclic_storage);
            let members = s.storage_members(b);
            for t in 0..slots {
                for (k, &i) in members.iter().enumerate() {
                    prog.add_linear_expr_cost(&blk.station_net(k, t), -prices.station_price[i][t] * dt);
                }
                prog.add_linear_expr_cost(&blk.grid_net(t), -prices.storage_price[b][t] * dt);
            }
            let sol = solve(&prog, Tolerances::default());
            require_optimal(&sol, &format!("storage {}", spec.storage_id))?;
            let sch = blk.decode(spec, &grid, &sol);
            Ok((sch.net_from_station, sch.net_from_grid, sol.objective))
        })
        .collect::<Result<_, OracleError>>()?;

    let mut prog = ConvexProgram::new();
    let net = NetworkBlock::build(&mut prog, s);
    for t in 0..slots {
        for i in 0..s.stations.len() {
            prog.add_linear_cost(net.station_exchange[i][t], -prices.station_price[i][t] * dt);
        }
        for b in 0..s.storages.len() {
            prog.add_linear_expr_cost(&net.storage_exchange_expr(b, t), -prices.storage_price[b][t] * dt);
        }
    }
    let sol = solve(&prog, Tolerances::default());
    require_optimal(&sol, "network")?;
    let fs = net.decode(s, &sol);

    let (station_sale, station_cost) = stations.into_iter().unzip();
    let mut storage_from_station = Vec::new();
    let mut storage_from_grid = Vec::new();
    let mut storage_cost = Vec::new();
    for (a, g, c) in storages {
        storage_from_station.push(a);
        storage_from_grid.push(g);
        storage_cost.push(c);
    }
    Ok(BestResponses {
        station_sale,
        station_cost,
        storage_from_station,
        storage_from_grid,
        storage_cost,
        network_from_station: fs.station_exchange,
        network_from_storage: fs.storage_exchange,
        network_cost: sol.objective,
    })
}

/// Each stakeholder's own cost of the allocation at the given prices.
fn agent_costs_at(s: &Scenario, a: &Allocation, prices: &PriceSystem) -> (Vec<f64>, Vec<f64>, f64) {
    let dt = s.dt();
    let op = operating_costs(s, a);
    let m = membership(s);
    let slots = s.slots();
    let stations = (0..s.stations.len())
        .map(|i| {
            let pb = |t: usize| m[i].map_or(0.0, |(b, k)| a.storages[b].net_from_station[k][t]);
            op.stations[i]
                + (0..slots)
                    .map(|t| prices.station_price[i][t] * (a.flow.station_exchange[i][t] + pb(t)) * dt)
                    .sum::<f64>()
        })
        .collect();
    let storages = (0..s.storages.len())
        .map(|b| {
            let members = s.storage_members(b);
            let mut c = op.storages[b];
            for t in 0..slots {
                for (k, &i) in members.iter().enumerate() {
                    c -= prices.station_price[i][t] * a.storages[b].net_from_station[k][t] * dt;
                }
                c -= prices.storage_price[b][t] * a.storages[b].net_from_grid[t] * dt;
            }
            c
        })
        .collect();
    let mut network = op.network;
    for t in 0..slots {
        for i in 0..s.stations.len() {
            network -= prices.station_price[i][t] * a.flow.station_exchange[i][t] * dt;
        }
        for b in 0..s.storages.len() {
            network -= prices.storage_price[b][t] * a.flow.storage_exchange[b][t] * dt;
        }
    }
    (stations, storages, network)
}

pub fn agent_best_response_gap(s: &Scenario, a: &Allocation, prices: &PriceSystem) -> Result<AgentGaps, OracleError> {
    let br = best_responses(s, prices)?;
    let (cs, ss, ns) = agent_costs_at(s, a, prices);
    Ok(AgentGaps {
        stations: cs.iter().zip(&br.station_cost).map(|(x, o)| x - o).collect(),
        storages: ss.iter().zip(&br.storage_cost).map(|(x, o)| x - o).collect(),
        network: ns - br.network_cost,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Market {
    /// A station's sale against what the network and its storage buy from it.
    Station,
    /// A storage's grid purchase against the network's sale to it.
    StorageGrid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mismatch {
    pub market: Market,
    pub agent: usize,
    pub slot: usize,
    /// Quantity the seller side wants to trade at the prices.
    pub supply: f64,
    /// Quantity the buyer side wants to trade at the prices.
    pub demand: f64,
    /// Quantity recorded in the allocation.
    pub allocated: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumReport {
    /// Markets that do not clear and are not explained by alternative optima.
    pub mismatches: Vec<Mismatch>,
    /// Re-solved responses that disagree with the allocation while the
    /// allocation itself is a verified equilibrium (non-unique optima).
    pub alternative_optima: Vec<Mismatch>,
    pub gaps: AgentGaps,
    pub station_coupling: f64,
    pub storage_coupling: f64,
}

impl EquilibriumReport {
    pub fn is_equilibrium(&self) -> bool {
        self.mismatches.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerifyOptions {
    /// Quantity tolerance, kW.
    pub tol: f64,
    /// Best-response tolerance, dollars.
    pub gap_tol: f64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self { tol: 1e-3, gap_tol: 1e-4 }
    }
}

/// Re-solves every agent at the given prices and checks that supply meets
/// demand in every market.
///
/// At a single price per station the station is indifferent between selling
/// to the network and to its storage, so the station market clears when the
/// station's desired sale equals what its two counterparties want to buy.
/// When an agent's optimum is not unique the re-solved quantities may differ
/// from the allocation even at an equilibrium; such differences are reported
/// as alternative optima, provided the allocation clears its markets and every
/// agent's allocated decision is itself a best response.
pub fn verify_equilibrium(
    s: &Scenario,
    a: &Allocation,
    prices: &PriceSystem,
    opts: VerifyOptions,
) -> Result<EquilibriumReport, OracleError> {
    let br = best_responses(s, prices)?;
    let (cs, ss, ns) = agent_costs_at(s, a, prices);
    let gaps = AgentGaps {
        stations: cs.iter().zip(&br.station_cost).map(|(x, o)| x - o).collect(),
        storages: ss.iter().zip(&br.storage_cost).map(|(x, o)| x - o).collect(),
        network: ns - br.network_cost,
    };
    let (station_coupling, storage_coupling) = coupling_residuals(s, a);
    let allocation_ok = gaps.max() <= opts.gap_tol && station_coupling <= opts.tol && storage_coupling <= opts.tol;

    let m = membership(s);
    let mut found = Vec::new();
    for i in 0..s.stations.len() {
        for t in 0..s.slots() {
            let supply = br.station_sale[i][t];
            let to_storage = m[i].map_or(0.0, |(b, k)| br.storage_from_station[b][k][t]);
            let demand = br.network_from_station[i][t] + to_storage;
            let alloc_pb = m[i].map_or(0.0, |(b, k)| a.storages[b].net_from_station[k][t]);
            let allocated = a.flow.station_exchange[i][t] + alloc_pb;
            if (supply - demand).abs() > opts.tol || (supply - allocated).abs() > opts.tol {
                found.push(Mismatch { market: Market::Station, agent: i, slot: t, supply, demand, allocated });
            }
        }
    }
    for (b, sto) in s.storages.iter().enumerate() {
        if !sto.grid_access {
            continue;
        }
        for t in 0..s.slots() {
            let demand = br.storage_from_grid[b][t];
            let supply = -br.network_from_storage[b][t];
            let allocated = a.storages[b].net_from_grid[t];
            if (supply - demand).abs() > opts.tol || (demand - allocated).abs() > opts.tol {
                found.push(Mismatch { market: Market::StorageGrid, agent: b, slot: t, supply, demand, allocated });
            }
        }
    }
    let (mismatches, alternative_optima) = if allocation_ok { (Vec::new(), found) } else { (found, Vec::new()) };
    Ok(EquilibriumReport { mismatches, alternative_optima, gaps, station_coupling, storage_coupling })
}
