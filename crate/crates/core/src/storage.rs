//! Shared storage side: degradation cost, state-of-charge dynamics and the
//! storage operator's local program.

use serde::{Deserialize, Serialize};

use crate::kernel::{ConicSolution, ConvexProgram, LinExpr};
use crate::scenario::{StorageSpec, TimeGrid};

pub const FEAS_TOL: f64 = 1e-6;

/// Storage dispatch. Station-indexed vectors follow the order of
/// `connected_stations`; `soc` has `T + 1` entries (start of every slot, then
/// the end of the horizon).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StorageSchedule {
    pub to_station_charge: Vec<Vec<f64>>,
    pub to_station_discharge: Vec<Vec<f64>>,
    pub grid_charge: Vec<f64>,
    pub grid_discharge: Vec<f64>,
    pub net_from_station: Vec<Vec<f64>>,
    pub net_from_grid: Vec<f64>,
    pub soc: Vec<f64>,
}

impl StorageSchedule {
    pub fn zeros(stations: usize, slots: usize, spec: &StorageSpec) -> Self {
        Self {
            to_station_charge: vec![vec![0.0; slots]; stations],
            to_station_discharge: vec![vec![0.0; slots]; stations],
            grid_charge: vec![0.0; slots],
            grid_discharge: vec![0.0; slots],
            net_from_station: vec![vec![0.0; slots]; stations],
            net_from_grid: vec![0.0; slots],
            soc: vec![spec.initial_energy; slots + 1],
        }
    }

    /// Fills the derived fields (net flows, state of charge) from the four
    /// power components.
    pub fn from_components(
        charge: Vec<Vec<f64>>,
        discharge: Vec<Vec<f64>>,
        grid_charge: Vec<f64>,
        grid_discharge: Vec<f64>,
        spec: &StorageSpec,
        grid: &TimeGrid,
    ) -> Self {
        let net_from_station = charge
            .iter()
            .zip(&discharge)
            .map(|(c, d)| c.iter().zip(d).map(|(a, b)| a - b).collect())
            .collect();
        let net_from_grid = grid_charge.iter().zip(&grid_discharge).map(|(a, b)| a - b).collect();
        let mut s = Self {
            to_station_charge: charge,
            to_station_discharge: discharge,
            grid_charge,
            grid_discharge,
            net_from_station,
            net_from_grid,
            soc: Vec::new(),
        };
        s.soc = simulate_soc(&s, spec, grid);
        s
    }

    fn total_charge(&self, t: usize) -> f64 {
        self.to_station_charge.iter().map(|c| c[t]).sum::<f64>() + self.grid_charge[t]
    }

    fn total_discharge(&self, t: usize) -> f64 {
        self.to_station_discharge.iter().map(|d| d[t]).sum::<f64>() + self.grid_discharge[t]
    }

    /// Energy throughput (charge plus discharge) over the horizon, kWh.
    pub fn throughput(&self, grid: &TimeGrid) -> f64 {
        (0..self.grid_charge.len()).map(|t| self.total_charge(t) + self.total_discharge(t)).sum::<f64>()
            * grid.slot_hours
    }
}

/// Linear degradation: coefficient × total energy throughput.
pub fn degradation_cost(sch: &StorageSchedule, spec: &StorageSpec, grid: &TimeGrid) -> f64 {
    spec.degradation_coeff * sch.throughput(grid)
}

/// State of charge at the start of every slot plus the end state.
pub fn simulate_soc(sch: &StorageSchedule, spec: &StorageSpec, grid: &TimeGrid) -> Vec<f64> {
    let dt = grid.slot_hours;
    let t = sch.grid_charge.len();
    let mut e = Vec::with_capacity(t + 1);
    let mut cur = spec.initial_energy;
    e.push(cur);
    for k in 0..t {
        cur += sch.total_charge(k) * dt * spec.eff_charge - sch.total_discharge(k) * dt / spec.eff_discharge;
        e.push(cur);
    }
    e
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StorageConstraint {
    DischargeCap,
    ChargeCap,
    Nonnegativity,
    NetFlow,
    EnergyDynamics,
    EnergyBounds,
    InitialEnergy,
    Cyclic,
    GridAccess,
    Shape,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StorageViolation {
    pub constraint: StorageConstraint,
    pub slot: Option<usize>,
    pub amount: f64,
}

/// Audits a dispatch against power caps, sign restrictions, the energy
/// recurrence and bounds, and (when `cyclic`) the end-equals-start condition.
pub fn check_storage_feasibility(
    sch: &StorageSchedule,
    spec: &StorageSpec,
    grid: &TimeGrid,
    cyclic: bool,
) -> Vec<StorageViolation> {
    let t = grid.horizon_slots;
    let dt = grid.slot_hours;
    let n = spec.connected_stations.len();
    let mut out = Vec::new();
    let mut push = |c, slot, amount: f64| out.push(StorageViolation { constraint: c, slot, amount });

    let shape_ok = sch.to_station_charge.len() == n
        && sch.to_station_discharge.len() == n
        && sch.net_from_station.len() == n
        && sch.to_station_charge.iter().chain(&sch.to_station_discharge).chain(&sch.net_from_station).all(|v| v.len() == t)
        && sch.grid_charge.len() == t
        && sch.grid_discharge.len() == t
        && sch.net_from_grid.len() == t
        && sch.soc.len() == t + 1;
    if !shape_ok {
        push(StorageConstraint::Shape, None, f64::NAN);
        return out;
    }

    for k in 0..t {
        let dis = sch.total_discharge(k);
        if dis - spec.power_discharge_max > FEAS_TOL {
            push(StorageConstraint::DischargeCap, Some(k), dis - spec.power_discharge_max);
        }
        let cha = sch.total_charge(k);
        if cha - spec.power_charge_max > FEAS_TOL {
            push(StorageConstraint::ChargeCap, Some(k), cha - spec.power_charge_max);
        }
        let most_negative = sch
            .to_station_charge
            .iter()
            .chain(&sch.to_station_discharge)
            .map(|v| v[k])
            .chain([sch.grid_charge[k], sch.grid_discharge[k]])
            .fold(0.0_f64, f64::min);
        if -most_negative > FEAS_TOL {
            push(StorageConstraint::Nonnegativity, Some(k), -most_negative);
        }
        for i in 0..n {
            let gap = (sch.net_from_station[i][k] - (sch.to_station_charge[i][k] - sch.to_station_discharge[i][k])).abs();
            if gap > FEAS_TOL {
                push(StorageConstraint::NetFlow, Some(k), gap);
            }
        }
        let gap = (sch.net_from_grid[k] - (sch.grid_charge[k] - sch.grid_discharge[k])).abs();
        if gap > FEAS_TOL {
            push(StorageConstraint::NetFlow, Some(k), gap);
        }
        if !spec.grid_access && (sch.grid_charge[k].abs() + sch.grid_discharge[k].abs()) > FEAS_TOL {
            push(StorageConstraint::GridAccess, Some(k), sch.grid_charge[k].abs() + sch.grid_discharge[k].abs());
        }
        let next = sch.soc[k] + cha * dt * spec.eff_charge - dis * dt / spec.eff_discharge;
        let gap = (sch.soc[k + 1] - next).abs();
        if gap > FEAS_TOL {
            push(StorageConstraint::EnergyDynamics, Some(k), gap);
        }
    }
    for (k, &e) in sch.soc.iter().enumerate() {
        let over = (spec.energy_min - e).max(e - spec.energy_max);
        if over > FEAS_TOL {
            push(StorageConstraint::EnergyBounds, Some(k), over);
        }
    }
    let gap = (sch.soc[0] - spec.initial_energy).abs();
    if gap > FEAS_TOL {
        push(StorageConstraint::InitialEnergy, Some(0), gap);
    }
    if cyclic {
        let gap = (sch.soc[t] - sch.soc[0]).abs();
        if gap > FEAS_TOL {
            push(StorageConstraint::Cyclic, Some(t), gap);
        }
    }
    out
}

/// Variable indices of one storage inside a (possibly larger) program.
#[derive(Debug, Clone)]
pub struct StorageBlock {
    pub charge: Vec<Vec<usize>>,
    pub discharge: Vec<Vec<usize>>,
    /// Empty when the storage has no grid access.
    pub grid_charge: Vec<usize>,
    pub grid_discharge: Vec<usize>,
    /// End-of-slot energies `E_2 … E_{T+1}`.
    pub energy: Vec<usize>,
}

impl StorageBlock {
    /// Adds the storage's operating constraints and degradation cost to `prog`.
    pub fn build(prog: &mut ConvexProgram, spec: &StorageSpec, grid: &TimeGrid, cyclic: bool) -> Self {
        let t = grid.horizon_slots;
        let dt = grid.slot_hours;
        let tag = spec.storage_id;
        let mut charge = Vec::new();
        let mut discharge = Vec::new();
        for id in &spec.connected_stations {
            charge.push(prog.add_vars(&format!("ses{tag}.cs{id}.c"), t));
            discharge.push(prog.add_vars(&format!("ses{tag}.cs{id}.d"), t));
        }
        let (grid_charge, grid_discharge) = if spec.grid_access {
            (prog.add_vars(&format!("ses{tag}.g.c"), t), prog.add_vars(&format!("ses{tag}.g.d"), t))
        } else {
            (Vec::new(), Vec::new())
        };
        let energy = prog.add_vars(&format!("ses{tag}.e"), t);

        let all_vars: Vec<usize> = charge
            .iter()
            .chain(&discharge)
            .flatten()
            .chain(grid_charge.iter())
            .chain(grid_discharge.iter())
            .copied()
            .collect();
        for &v in &all_vars {
            prog.bound(v, 0.0, f64::INFINITY);
            prog.add_linear_cost(v, spec.degradation_coeff * dt);
        }

        for k in 0..t {
            let mut cha = LinExpr::new();
            let mut dis = LinExpr::new();
            for i in 0..charge.len() {
                cha.push(charge[i][k], 1.0);
                dis.push(discharge[i][k], 1.0);
            }
            if spec.grid_access {
                cha.push(grid_charge[k], 1.0);
                dis.push(grid_discharge[k], 1.0);
            }
            prog.add_le(dis.clone().plus(-spec.power_discharge_max));
            prog.add_le(cha.clone().plus(-spec.power_charge_max));

            // E_{k+1} − E_k − ηc·Δt·charge + Δt/ηd·discharge = 0
            let mut rec = LinExpr::var(energy[k]);
            rec.extend(&cha, -dt * spec.eff_charge);
            rec.extend(&dis, dt / spec.eff_discharge);
            if k == 0 {
                rec = rec.plus(-spec.initial_energy);
            } else {
                rec.push(energy[k - 1], -1.0);
            }
            prog.add_eq(rec);
            prog.bound(energy[k], spec.energy_min, spec.energy_max);
        }
        if cyclic && t > 0 {
            prog.fix(energy[t - 1], spec.initial_energy);
        }
        Self { charge, discharge, grid_charge, grid_discharge, energy }
    }

    /// `p_{b,i,t}` for the `i`-th connected station.
    pub fn station_net(&self, i: usize, t: usize) -> LinExpr {
        LinExpr::var(self.charge[i][t]).term(self.discharge[i][t], -1.0)
    }

    /// `p_{b,g,t}`; identically zero without grid access.
    pub fn grid_net(&self, t: usize) -> LinExpr {
        if self.grid_charge.is_empty() {
            LinExpr::new()
        } else {
            LinExpr::var(self.grid_charge[t]).term(self.grid_discharge[t], -1.0)
        }
    }

    pub fn decode(&self, spec: &StorageSpec, grid: &TimeGrid, sol: &ConicSolution) -> StorageSchedule {
        let t = grid.horizon_slots;
        let val = |i: usize| {
            let v = sol.primal[i];
            if v.abs() < 1e-12 {
                0.0
            } else {
                v
            }
        };
        let read = |ix: &Vec<usize>| ix.iter().map(|&i| val(i)).collect::<Vec<f64>>();
        let charge: Vec<Vec<f64>> = self.charge.iter().map(read).collect();
        let discharge: Vec<Vec<f64>> = self.discharge.iter().map(read).collect();
        let (gc, gd) = if self.grid_charge.is_empty() {
            (vec![0.0; t], vec![0.0; t])
        } else {
            (read(&self.grid_charge), read(&self.grid_discharge))
        };
        let mut s = StorageSchedule::from_components(charge, discharge, gc, gd, spec, grid);
        // report the program's own state variables rather than a re-simulation
        s.soc = std::iter::once(spec.initial_energy).chain(self.energy.iter().map(|&i| sol.primal[i])).collect();
        s
    }
}

#[derive(Debug, Clone)]
pub struct SesoProgram {
    pub program: ConvexProgram,
    pub block: StorageBlock,
}

/// Anchors and prices seen by one storage operator in a prediction step.
/// Station-indexed vectors follow `connected_stations`.
#[derive(Debug, Clone)]
pub struct SesoInputs<'a> {
    pub lambda: &'a [Vec<f64>],
    pub mu: &'a [f64],
    pub demand: &'a [Vec<f64>],
    pub to_grid: &'a [Vec<f64>],
    pub pv: &'a [Vec<f64>],
    pub grid_to_storage: &'a [f64],
}

/// Local program of one storage operator:
/// degradation − Σ λ·p_b·Δt − Σ μ·p_bg·Δt
/// + (β/2) Σ (Δt·(p̃_d + p_g + p_b − p_pv))² + (β/2) Σ (Δt·(p_gb + p_bg))².
pub fn assemble_seso_subproblem(
    spec: &StorageSpec,
    grid: &TimeGrid,
    cyclic: bool,
    inp: &SesoInputs<'_>,
    beta: f64,
) -> SesoProgram {
    let dt = grid.slot_hours;
    let mut program = ConvexProgram::new();
    let block = StorageBlock::build(&mut program, spec, grid, cyclic);
    for k in 0..grid.horizon_slots {
        for i in 0..spec.connected_stations.len() {
            let pb = block.station_net(i, k);
            program.add_linear_expr_cost(&pb, -inp.lambda[i][k] * dt);
            let mut r = LinExpr::new();
            r.extend(&pb, dt);
            let r = r.plus(dt * (inp.demand[i][k] + inp.to_grid[i][k] - inp.pv[i][k]));
            program.add_squared(&r, 0.5 * beta);
        }
        let pbg = block.grid_net(k);
        program.add_linear_expr_cost(&pbg, -inp.mu[k] * dt);
        let mut r = LinExpr::new();
        r.extend(&pbg, dt);
        let r = r.plus(dt * inp.grid_to_storage[k]);
        program.add_squared(&r, 0.5 * beta);
    }
    SesoProgram { program, block }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{solve, Tolerances};

    fn spec(n: usize) -> StorageSpec {
        StorageSpec::sized(1, 5, (1..=n as u32).collect(), 650.0)
    }

    #[test]
    fn degradation_examples() {
        let g = TimeGrid::hourly(3);
        let s = spec(2);
        let z = StorageSchedule::zeros(2, 3, &s);
        assert_eq!(degradation_cost(&z, &s, &g), 0.0);
        let mut one = z.clone();
        one.grid_charge[1] = 100.0;
        assert!((degradation_cost(&one, &s, &g) - 1.0).abs() < 1e-12);
        let mut two = one.clone();
        two.grid_charge[1] = 200.0;
        assert!((degradation_cost(&two, &s, &g) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn soc_examples() {
        let g = TimeGrid::hourly(2);
        let s = spec(1);
        let sch = StorageSchedule::from_components(
            vec![vec![0.0; 2]],
            vec![vec![0.0; 2]],
            vec![100.0, 0.0],
            vec![0.0, 0.0],
            &s,
            &g,
        );
        assert!((sch.soc[1] - 420.0).abs() < 1e-9);
        let x = 100.0;
        let round = StorageSchedule::from_components(
            vec![vec![x, 0.0]],
            vec![vec![0.0, 0.95 * 0.95 * x]],
            vec![0.0; 2],
            vec![0.0; 2],
            &s,
            &g,
        );
        assert!((round.soc[2] - round.soc[0]).abs() < 1e-9);
        assert!(check_storage_feasibility(&round, &s, &g, true).is_empty());
    }

    #[test]
    fn feasibility_names_constraints() {
        let g = TimeGrid::hourly(2);
        let s = spec(1);
        let cap = s.power_discharge_max;
        let sch = StorageSchedule::from_components(
            vec![vec![0.0; 2]],
            vec![vec![cap, 0.0]],
            vec![0.0; 2],
            vec![1.0, 0.0],
            &s,
            &g,
        );
        let v = check_storage_feasibility(&sch, &s, &g, false);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].constraint, StorageConstraint::DischargeCap);

        // drain to E_min − 0.5 kWh
        let drain = (s.initial_energy - s.energy_min + 0.5) * s.eff_discharge;
        let sch = StorageSchedule::from_components(
            vec![vec![0.0; 2]],
            vec![vec![0.0; 2]],
            vec![0.0; 2],
            vec![drain / 2.0, drain / 2.0],
            &s,
            &g,
        );
        let v = check_storage_feasibility(&sch, &s, &g, false);
        assert!(v.iter().all(|x| x.constraint == StorageConstraint::EnergyBounds));
        assert!((v[0].amount - 0.5).abs() < 1e-9);
    }

    #[test]
    fn seso_program_dimensions_and_zero_optimum() {
        let g = TimeGrid::hourly(24);
        let s = spec(4);
        let zeros4 = vec![vec![0.0; 24]; 4];
        let z = vec![0.0; 24];
        let inp = SesoInputs { lambda: &zeros4, mu: &z, demand: &zeros4, to_grid: &zeros4, pv: &zeros4, grid_to_storage: &z };
        let p = assemble_seso_subproblem(&s, &g, true, &inp, 0.05);
        assert_eq!(p.program.num_vars(), 24 * 11);
        let sol = solve(&p.program, Tolerances::default());
        assert!(sol.is_optimal());
        assert!(sol.objective.abs() < 1e-6);
        let d = p.block.decode(&s, &g, &sol);
        assert!(d.throughput(&g) < 1e-4);
    }

    #[test]
    fn raising_mu_increases_grid_charging() {
        let g = TimeGrid::hourly(4);
        let s = spec(1);
        let zeros = vec![vec![0.0; 4]];
        let z = vec![0.0; 4];
        let grid_flow = |mu: &[f64]| {
            let inp = SesoInputs { lambda: &zeros, mu, demand: &zeros, to_grid: &zeros, pv: &zeros, grid_to_storage: &z };
            let p = assemble_seso_subproblem(&s, &g, true, &inp, 0.05);
            let sol = solve(&p.program, Tolerances::default());
            p.block.decode(&s, &g, &sol).net_from_grid
        };
        let base = grid_flow(&[0.0, -0.05, 0.0, 0.0]);
        let raised = grid_flow(&[0.5, -0.05, 0.0, 0.0]);
        assert!(raised[0] > base[0] + 1e-3);
    }
}
