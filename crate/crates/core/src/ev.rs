//! Charging-station side: CASAP reference profiles, EV feasibility, the
//! station cost and the station's local program.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernel::{ConicSolution, ConvexProgram, LinExpr};
use crate::scenario::{EvTask, StationSpec, TimeGrid};

/// Tolerance for feasibility audits, kW / kWh.
pub const FEAS_TOL: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum EvError {
    #[error("CASAP remainder slot {slot} is not before departure slot {departure}")]
    CasapPastDeparture { slot: usize, departure: usize },
}

/// One vehicle's trajectory. `energy` has `T + 1` entries: the state at the
/// start of every slot followed by the state at the end of the horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvSchedule {
    pub charge_power: Vec<f64>,
    pub discharge_power: Vec<f64>,
    pub net_power: Vec<f64>,
    pub energy: Vec<f64>,
}

impl EvSchedule {
    /// Builds a schedule from charge/discharge powers by running the energy
    /// recurrence from the task's initial energy.
    pub fn from_powers(charge: Vec<f64>, discharge: Vec<f64>, task: &EvTask, grid: &TimeGrid) -> Self {
        let net = charge.iter().zip(&discharge).map(|(c, d)| c - d).collect();
        let energy = simulate_ev_energy(&charge, &discharge, task, grid);
        Self { charge_power: charge, discharge_power: discharge, net_power: net, energy }
    }

    pub fn casap(task: &EvTask, grid: &TimeGrid) -> Result<Self, EvError> {
        let pc = casap_profile(task, grid)?;
        let pd = vec![0.0; pc.len()];
        Ok(Self::from_powers(pc, pd, task, grid))
    }
}

/// Station-level exchange: EV demand, sale to the grid, sale to the storage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationState {
    pub demand: Vec<f64>,
    pub to_grid: Vec<f64>,
    pub to_storage: Vec<f64>,
}

impl StationState {
    pub fn balance_residual(&self, pv: &[f64]) -> Vec<f64> {
        (0..pv.len()).map(|t| self.demand[t] + self.to_grid[t] + self.to_storage[t] - pv[t]).collect()
    }
}

/// Shortest time, in hours, to lift the battery to its requirement at full power.
pub fn min_charge_time(task: &EvTask) -> f64 {
    ((task.required_energy - task.initial_energy) / (task.power_max * task.eff_charge)).max(0.0)
}

/// Charge-as-soon-as-possible profile: full power from arrival for the whole
/// slots of the minimum charge time, then the remainder in one slot.
pub fn casap_profile(task: &EvTask, grid: &TimeGrid) -> Result<Vec<f64>, EvError> {
    let t = grid.horizon_slots;
    let dt = grid.slot_hours;
    let mut p = vec![0.0; t];
    let e_cha = task.required_energy - task.initial_energy;
    if e_cha <= 0.0 {
        return Ok(p);
    }
    let full = (min_charge_time(task) / dt).floor() as usize;
    let mut remainder = e_cha / (task.eff_charge * dt) - full as f64 * task.power_max;
    if remainder.abs() < 1e-12 * task.power_max {
        remainder = 0.0;
    }
    let last = task.arrival_slot + full;
    if last > task.departure_slot || (last == task.departure_slot && remainder > 0.0) {
        return Err(EvError::CasapPastDeparture { slot: last, departure: task.departure_slot });
    }
    for slot in p.iter_mut().skip(task.arrival_slot).take(full) {
        *slot = task.power_max;
    }
    if last < t {
        p[last] = remainder;
    }
    Ok(p)
}

/// Energy trajectory (`T + 1` points) under the charge/discharge recurrence,
/// starting from the initial energy at slot 0.
pub fn simulate_ev_energy(charge: &[f64], discharge: &[f64], task: &EvTask, grid: &TimeGrid) -> Vec<f64> {
    let dt = grid.slot_hours;
    let mut e = Vec::with_capacity(charge.len() + 1);
    let mut cur = task.initial_energy;
    e.push(cur);
    for (c, d) in charge.iter().zip(discharge) {
        cur += c * dt * task.eff_charge - d * dt / task.eff_discharge;
        e.push(cur);
    }
    e
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvConstraint {
    ChargeLimit,
    DischargeLimit,
    NetPower,
    OutsideWindow,
    EnergyDynamics,
    EnergyBounds,
    InitialEnergy,
    RequiredEnergy,
    Shape,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvViolation {
    pub constraint: EvConstraint,
    pub slot: Option<usize>,
    pub amount: f64,
}

/// Audits a schedule against the EV's power window, energy dynamics and
/// energy boundary conditions.
pub fn check_ev_feasibility(s: &EvSchedule, task: &EvTask, grid: &TimeGrid) -> Vec<EvViolation> {
    let t = grid.horizon_slots;
    let dt = grid.slot_hours;
    let mut out = Vec::new();
    let mut push = |c, slot, amount: f64| {
        out.push(EvViolation { constraint: c, slot, amount });
    };
    if s.charge_power.len() != t || s.discharge_power.len() != t || s.net_power.len() != t || s.energy.len() != t + 1 {
        push(EvConstraint::Shape, None, f64::NAN);
        return out;
    }
    let window = task.arrival_slot..task.departure_slot;
    for k in 0..t {
        let (c, d) = (s.charge_power[k], s.discharge_power[k]);
        if window.contains(&k) {
            let over = (-c).max(c - task.power_max);
            if over > FEAS_TOL {
                push(EvConstraint::ChargeLimit, Some(k), over);
            }
            let over = (-d).max(d - task.power_max);
            if over > FEAS_TOL {
                push(EvConstraint::DischargeLimit, Some(k), over);
            }
        } else if c.abs().max(d.abs()) > FEAS_TOL {
            push(EvConstraint::OutsideWindow, Some(k), c.abs().max(d.abs()));
        }
        let net = (s.net_power[k] - (c - d)).abs();
        if net > FEAS_TOL {
            push(EvConstraint::NetPower, Some(k), net);
        }
        let next = s.energy[k] + c * dt * task.eff_charge - d * dt / task.eff_discharge;
        let gap = (s.energy[k + 1] - next).abs();
        if gap > FEAS_TOL {
            push(EvConstraint::EnergyDynamics, Some(k), gap);
        }
    }
    for (k, &e) in s.energy.iter().enumerate() {
        let over = (task.energy_min - e).max(e - task.energy_max);
        if over > FEAS_TOL {
            push(EvConstraint::EnergyBounds, Some(k), over);
        }
    }
    let gap = (s.energy[task.arrival_slot] - task.initial_energy).abs();
    if gap > FEAS_TOL {
        push(EvConstraint::InitialEnergy, Some(task.arrival_slot), gap);
    }
    let gap = (s.energy[task.departure_slot] - task.required_energy).abs();
    if gap > FEAS_TOL {
        push(EvConstraint::RequiredEnergy, Some(task.departure_slot), gap);
    }
    out
}

/// Inconvenience (squared deviation from CASAP energy per slot) plus
/// throughput depreciation, summed over the fleet.
pub fn station_cost(schedules: &[EvSchedule], tasks: &[EvTask], grid: &TimeGrid) -> f64 {
    let dt = grid.slot_hours;
    let mut cost = 0.0;
    for (s, task) in schedules.iter().zip(tasks) {
        let reference = casap_profile(task, grid).unwrap_or_else(|_| vec![0.0; grid.horizon_slots]);
        for k in 0..grid.horizon_slots {
            let dev = s.net_power[k] * dt - reference[k] * dt;
            cost += task.inconvenience_coeff * dev * dev;
            cost += task.depreciation_coeff * (s.charge_power[k] + s.discharge_power[k]) * dt;
        }
    }
    cost
}

pub fn aggregate_demand(schedules: &[EvSchedule], slots: usize) -> Vec<f64> {
    let mut d = vec![0.0; slots];
    for s in schedules {
        for (acc, p) in d.iter_mut().zip(&s.net_power) {
            *acc += p;
        }
    }
    d
}

#[derive(Debug, Clone)]
struct EvVars {
    charge: Vec<usize>,
    discharge: Vec<usize>,
    /// End-of-slot energies `E_1 … E_T`; `E_0` is the initial energy.
    energy: Vec<usize>,
}

/// Variable indices of one station's fleet inside a (possibly larger) program.
#[derive(Debug, Clone)]
pub struct StationBlock {
    evs: Vec<EvVars>,
    casap: Vec<Vec<f64>>,
    /// Aggregate EV demand `p_d` per slot.
    pub demand: Vec<usize>,
    fixed: bool,
}

impl StationBlock {
    /// Adds the station's fleet constraints and its cost to `prog`.
    ///
    /// With `fix_casap` the demand is pinned to the CASAP aggregate and no
    /// per-vehicle variables are created.
    pub fn build(prog: &mut ConvexProgram, st: &StationSpec, grid: &TimeGrid, fix_casap: bool) -> Self {
        let t = grid.horizon_slots;
        let dt = grid.slot_hours;
        let tag = st.station_id;
        let casap: Vec<Vec<f64>> = st
            .fleet
            .iter()
            .map(|task| casap_profile(task, grid).unwrap_or_else(|_| vec![0.0; t]))
            .collect();

        if fix_casap {
            let demand = prog.add_vars(&format!("cs{tag}.pd"), t);
            for k in 0..t {
                let total: f64 = casap.iter().map(|p| p[k]).sum();
                prog.fix(demand[k], total);
            }
            let dep: f64 = st
                .fleet
                .iter()
                .zip(&casap)
                .map(|(task, p)| task.depreciation_coeff * p.iter().sum::<f64>() * dt)
                .sum();
            prog.constant += dep;
            return Self { evs: Vec::new(), casap, demand, fixed: true };
        }

        let mut evs = Vec::with_capacity(st.fleet.len());
        for (v, task) in st.fleet.iter().enumerate() {
            let charge = prog.add_vars(&format!("cs{tag}.ev{v}.pc"), t);
            let discharge = prog.add_vars(&format!("cs{tag}.ev{v}.pd"), t);
            let energy = prog.add_vars(&format!("cs{tag}.ev{v}.e"), t);
            for k in 0..t {
                if (task.arrival_slot..task.departure_slot).contains(&k) {
                    prog.bound(charge[k], 0.0, task.power_max);
                    prog.bound(discharge[k], 0.0, task.power_max);
                } else {
                    prog.fix(charge[k], 0.0);
                    prog.fix(discharge[k], 0.0);
                }
                // E_{k+1} − E_k − ηc·Δt·pc + Δt/ηd·pd = 0
                let mut rec = LinExpr::var(energy[k])
                    .term(charge[k], -dt * task.eff_charge)
                    .term(discharge[k], dt / task.eff_discharge);
                if k == 0 {
                    rec = rec.plus(-task.initial_energy);
                } else {
                    rec.push(energy[k - 1], -1.0);
                }
                prog.add_eq(rec);
                prog.bound(energy[k], task.energy_min, task.energy_max);

                let dev = LinExpr::var(charge[k])
                    .term(discharge[k], -1.0)
                    .plus(-casap[v][k]);
                prog.add_squared(&dev, task.inconvenience_coeff * dt * dt);
                prog.add_linear_cost(charge[k], task.depreciation_coeff * dt);
                prog.add_linear_cost(discharge[k], task.depreciation_coeff * dt);
            }
            if task.departure_slot >= 1 {
                prog.fix(energy[task.departure_slot - 1], task.required_energy);
            }
            evs.push(EvVars { charge, discharge, energy });
        }

        let demand = prog.add_vars(&format!("cs{tag}.pd"), t);
        for k in 0..t {
            let mut agg = LinExpr::var(demand[k]);
            for ev in &evs {
                agg.push(ev.charge[k], -1.0);
                agg.push(ev.discharge[k], 1.0);
            }
            prog.add_eq(agg);
        }
        Self { evs, casap, demand, fixed: false }
    }

    pub fn decode_schedules(&self, st: &StationSpec, grid: &TimeGrid, sol: &ConicSolution) -> Vec<EvSchedule> {
        if self.fixed {
            return st
                .fleet
                .iter()
                .zip(&self.casap)
                .map(|(task, p)| EvSchedule::from_powers(p.clone(), vec![0.0; p.len()], task, grid))
                .collect();
        }
        self.evs
            .iter()
            .zip(&st.fleet)
            .map(|(ev, task)| {
                // clip interior-point noise so out-of-window slots read exactly zero
                let clean = |v: f64| if v.abs() < 1e-12 { 0.0 } else { v };
                let pc: Vec<f64> = ev.charge.iter().map(|&i| clean(sol.primal[i])).collect();
                let pd: Vec<f64> = ev.discharge.iter().map(|&i| clean(sol.primal[i])).collect();
                let mut energy = Vec::with_capacity(pc.len() + 1);
                energy.push(task.initial_energy);
                energy.extend(ev.energy.iter().map(|&i| sol.primal[i]));
                let net = pc.iter().zip(&pd).map(|(c, d)| c - d).collect();
                EvSchedule { charge_power: pc, discharge_power: pd, net_power: net, energy }
            })
            .collect()
    }

    pub fn decode_demand(&self, sol: &ConicSolution) -> Vec<f64> {
        sol.values(&self.demand)
    }
}

/// A station's local program together with its decode map.
#[derive(Debug, Clone)]
pub struct CsoProgram {
    pub program: ConvexProgram,
    pub block: StationBlock,
}

/// Local program of one charging-station operator:
/// station cost − Σ λ·p_d·Δt + (β/2) Σ (Δt·(p_d + p_g + p_b − p_pv))².
pub fn assemble_cso_subproblem(
    st: &StationSpec,
    grid: &TimeGrid,
    lambda: &[f64],
    to_grid: &[f64],
    to_storage: &[f64],
    beta: f64,
) -> CsoProgram {
    let dt = grid.slot_hours;
    let mut program = ConvexProgram::new();
    let block = StationBlock::build(&mut program, st, grid, false);
    for k in 0..grid.horizon_slots {
        let pd = block.demand[k];
        program.add_linear_cost(pd, -lambda[k] * dt);
        let r = LinExpr::new().term(pd, dt).plus(dt * (to_grid[k] + to_storage[k] - st.pv_profile[k]));
        program.add_squared(&r, 0.5 * beta);
    }
    CsoProgram { program, block }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{solve, Tolerances};

    fn worked_example_ev() -> EvTask {
        EvTask {
            arrival_slot: 0,
            departure_slot: 8,
            initial_energy: 10.0,
            required_energy: 30.0,
            energy_min: 0.0,
            energy_max: 60.0,
            power_max: 6.6,
            eff_charge: 0.95,
            eff_discharge: 0.95,
            inconvenience_coeff: 1e-4,
            depreciation_coeff: 0.01,
        }
    }

    #[test]
    fn min_charge_time_example() {
        assert!((min_charge_time(&worked_example_ev()) - 3.19).abs() < 0.01);
        let mut e = worked_example_ev();
        e.required_energy = e.initial_energy;
        assert_eq!(min_charge_time(&e), 0.0);
        e.required_energy = e.initial_energy + 6.6 * 0.95;
        assert!((min_charge_time(&e) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn casap_example_profile() {
        let g = TimeGrid::hourly(8);
        let p = casap_profile(&worked_example_ev(), &g).unwrap();
        assert_eq!(&p[..3], &[6.6, 6.6, 6.6]);
        assert!((p[3] - (20.0 / 0.95 - 19.8)).abs() < 1e-12);
        assert!((p[3] - 1.2526).abs() < 1e-4);
        assert!(p[4..].iter().all(|&x| x == 0.0));
        let s = EvSchedule::casap(&worked_example_ev(), &g).unwrap();
        assert!((s.energy[8] - 30.0).abs() < 1e-9);
        assert!(check_ev_feasibility(&s, &worked_example_ev(), &g).is_empty());
    }

    #[test]
    fn casap_single_slot_identity() {
        let g = TimeGrid::hourly(4);
        let mut e = worked_example_ev();
        e.departure_slot = 2;
        e.required_energy = e.initial_energy + 6.6 * 0.95;
        let p = casap_profile(&e, &g).unwrap();
        assert!((p[0] - 6.6).abs() < 1e-12);
        assert!(p[1].abs() < 1e-12);
    }

    #[test]
    fn casap_rejects_late_remainder() {
        let g = TimeGrid::hourly(8);
        let mut e = worked_example_ev();
        e.departure_slot = 3;
        assert!(matches!(casap_profile(&e, &g), Err(EvError::CasapPastDeparture { .. })));
    }

    #[test]
    fn feasibility_flags_named_constraints() {
        let g = TimeGrid::hourly(8);
        let mut e = worked_example_ev();
        e.arrival_slot = 1;
        let s = EvSchedule::casap(&worked_example_ev(), &g).unwrap();
        let v = check_ev_feasibility(&s, &e, &g);
        assert!(v.iter().any(|x| x.constraint == EvConstraint::OutsideWindow));

        let mut short = EvSchedule::casap(&worked_example_ev(), &g).unwrap();
        short.charge_power[3] -= 1.0 / 0.95;
        let short = EvSchedule::from_powers(short.charge_power, short.discharge_power, &worked_example_ev(), &g);
        assert!((short.energy[8] - 29.0).abs() < 1e-9);
        let v = check_ev_feasibility(&short, &worked_example_ev(), &g);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].constraint, EvConstraint::RequiredEnergy);
    }

    #[test]
    fn station_cost_examples() {
        let g = TimeGrid::hourly(8);
        let e = worked_example_ev();
        let s = EvSchedule::casap(&e, &g).unwrap();
        let c = station_cost(std::slice::from_ref(&s), std::slice::from_ref(&e), &g);
        assert!((c - 0.01 * 20.0 / 0.95).abs() < 1e-4);

        // move 1 kWh of charging from slot 3 into slot 4
        let mut pc = s.charge_power.clone();
        pc[3] -= 1.0;
        pc[4] += 1.0;
        let moved = EvSchedule::from_powers(pc, s.discharge_power.clone(), &e, &g);
        let c2 = station_cost(&[moved], &[e], &g);
        assert!((c2 - c - 0.0002).abs() < 1e-12);

        assert_eq!(station_cost(&[], &[], &g), 0.0);
    }

    #[test]
    fn aggregate_demand_sums_net_power() {
        let mk = |n: Vec<f64>| EvSchedule {
            charge_power: n.clone(),
            discharge_power: vec![0.0; n.len()],
            net_power: n,
            energy: vec![0.0; 3],
        };
        assert_eq!(aggregate_demand(&[mk(vec![1.0, 0.0]), mk(vec![2.0, 3.0])], 2), vec![3.0, 3.0]);
        assert_eq!(aggregate_demand(&[], 3), vec![0.0; 3]);
    }

    fn station(fleet: Vec<EvTask>, pv: Vec<f64>) -> StationSpec {
        StationSpec { station_id: 1, bus_id: 2, pv_profile: pv, fleet, pattern: None }
    }

    #[test]
    fn cso_program_dimensions() {
        let g = TimeGrid::hourly(4);
        let mut e = worked_example_ev();
        e.departure_slot = 4;
        e.required_energy = 20.0;
        let st = station(vec![e.clone(), e], vec![0.0; 4]);
        let z = vec![0.0; 4];
        let p = assemble_cso_subproblem(&st, &g, &z, &z, &z, 0.05);
        assert_eq!(p.program.num_vars(), 3 * 2 * 4 + 4);
        // per EV: 4 recurrence rows + 1 terminal row; plus 4 aggregation rows
        assert_eq!(p.program.eq.len(), 2 * (4 + 1) + 4);
    }

    #[test]
    fn empty_fleet_program() {
        let g = TimeGrid::hourly(3);
        let st = station(vec![], vec![1.0, 2.0, 0.5]);
        let pg = vec![0.2, 0.0, 0.1];
        let pb = vec![0.0, 0.3, 0.0];
        let p = assemble_cso_subproblem(&st, &g, &[0.04; 3], &pg, &pb, 0.05);
        let sol = solve(&p.program, Tolerances::default());
        assert!(sol.is_optimal());
        for v in p.block.decode_demand(&sol) {
            assert!(v.abs() < 1e-7);
        }
        let expect: f64 = (0..3).map(|k| 0.025 * (pg[k] + pb[k] - st.pv_profile[k]).powi(2)).sum();
        assert!((sol.objective - expect).abs() < 1e-7);
    }

    #[test]
    fn decoded_solution_is_feasible() {
        let g = TimeGrid::hourly(10);
        let mut a = worked_example_ev();
        a.arrival_slot = 2;
        let mut b = worked_example_ev();
        b.departure_slot = 6;
        b.required_energy = 25.0;
        let st = station(vec![a, b], vec![3.0; 10]);
        let z = vec![0.0; 10];
        let lam: Vec<f64> = (0..10).map(|k| -0.03 - 0.002 * k as f64).collect();
        let p = assemble_cso_subproblem(&st, &g, &lam, &z, &z, 0.05);
        let sol = solve(&p.program, Tolerances::default());
        assert!(sol.is_optimal());
        let sch = p.block.decode_schedules(&st, &g, &sol);
        for (s, task) in sch.iter().zip(&st.fleet) {
            assert!(check_ev_feasibility(s, task, &g).is_empty());
            for k in 0..10 {
                assert!(s.charge_power[k] * s.discharge_power[k] <= 1e-6);
            }
        }
        let d = aggregate_demand(&sch, 10);
        for (x, y) in d.iter().zip(p.block.decode_demand(&sol)) {
            assert!((x - y).abs() < 1e-7);
        }
    }
}
