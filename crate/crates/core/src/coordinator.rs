//! Distributed prediction–correction coordination: each operator solves only
//! its own program against announced prices and anchors, and the network
//! operator updates the prices until they stop moving.

use std::io::Write;
use std::time::{Duration, Instant};

use nalgebra::{Matrix3, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ev::{assemble_cso_subproblem, station_cost, EvSchedule, StationState};
use crate::kernel::{solve, ConicSolution, ConvexProgram, SolveStatus, Tolerances};
use crate::network::{assemble_dso_subproblem, dso_energy_cost, DsoInputs, FlowState, NetworkBlock};
use crate::oracle::{membership, operating_costs, Allocation, PriceSystem, StationAllocation};
use crate::scenario::Scenario;
use crate::storage::{assemble_seso_subproblem, degradation_cost, SesoInputs, StorageSchedule};

/// How the correction step moves the prices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DualVariant {
    /// `λ ← λ − α(λ − λ̃)`.
    MainText,
    /// Full third row of the correction matrix applied to the variational
    /// prediction `ξ̃ = λ − βΔt(p̃_d + p_b + p_g − p_pv)`, which prices the fresh
    /// station decision against the previous storage and grid trades:
    /// `λ ← λ − α(−βΔt(p_b − p̃_b) − βΔt(p_g − p̃_g) + λ − ξ̃)`.
    ///
    /// Algebraically this yields the same iterates as [`DualVariant::MainText`];
    /// the two are computed independently so that either can be audited
    /// against the other.
    #[default]
    Appendix,
}

impl std::str::FromStr for DualVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "main" | "main_text" => Ok(Self::MainText),
            "appendix" => Ok(Self::Appendix),
            other => Err(format!("unknown dual variant `{other}` (expected main or appendix)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoordinationParams {
    /// Penalty weight, $/kWh².
    pub beta: f64,
    /// Correction step size.
    pub alpha: f64,
    /// Blend between the storage and grid corrections.
    pub tau: f64,
    /// Stopping tolerance on the price change, $/kWh.
    pub delta: f64,
    pub max_iterations: usize,
    pub dual_variant: DualVariant,
}

impl Default for CoordinationParams {
    fn default() -> Self {
        Self { beta: 5e-4, alpha: 0.9, tau: 0.0, delta: 1e-3, max_iterations: 500, dual_variant: DualVariant::Appendix }
    }
}

#[derive(Debug, Error)]
pub enum CoordinationError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("iteration {iteration}: {agent} subproblem ended with status {status:?}")]
    Subproblem { iteration: usize, agent: String, status: SolveStatus },
}

impl CoordinationError {
    /// True when a local subproblem was proven infeasible (as opposed to a
    /// solver stall or bad parameters).
    pub fn is_infeasible(&self) -> bool {
        matches!(self, CoordinationError::Subproblem { status: SolveStatus::Infeasible, .. })
    }
}

impl CoordinationParams {
    pub fn validate(&self) -> Result<(), CoordinationError> {
        let bad = |m: String| Err(CoordinationError::InvalidParams(m));
        if !(self.beta > 0.0) {
            return bad(format!("beta must be positive, got {}", self.beta));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return bad(format!("alpha must lie in (0, 1], got {}", self.alpha));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return bad(format!("tau must lie in [0, 1], got {}", self.tau));
        }
        if !(self.delta > 0.0) {
            return bad(format!("delta must be positive, got {}", self.delta));
        }
        let a1 = check_condition_a1(self.alpha, self.tau);
        if !a1.holds {
            return bad(format!(
                "convergence condition fails for alpha={}, tau={} (leading minors {:?})",
                self.alpha, self.tau, a1.minors
            ));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Convergence condition and correction matrices

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionA1 {
    pub holds: bool,
    pub minors: [f64; 3],
    pub min_eigenvalue: f64,
}

pub fn condition_a1_matrix(alpha: f64, tau: f64) -> Matrix3<f64> {
    let a = alpha;
    Matrix3::new(
        2.0 - 2.0 * a - a * tau,
        1.0 - a - a * tau,
        -1.0 + a,
        1.0 - a - a * tau,
        2.0 - 2.0 * a,
        -1.0 + a,
        -1.0 + a,
        -1.0 + a,
        2.0 - a,
    )
}

/// Positive definiteness of the (α, τ) condition matrix, tested by strictly
/// positive leading principal minors.
pub fn check_condition_a1(alpha: f64, tau: f64) -> ConditionA1 {
    let m = condition_a1_matrix(alpha, tau);
    let minors = [m[(0, 0)], m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)], m.determinant()];
    let min_eigenvalue = SymmetricEigen::new(m).eigenvalues.min();
    ConditionA1 { holds: minors.iter().all(|&x| x > 0.0), minors, min_eigenvalue }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrectionMatrices {
    pub q: Matrix3<f64>,
    pub m: Matrix3<f64>,
    pub h: Matrix3<f64>,
    pub g: Matrix3<f64>,
}

impl CorrectionMatrices {
    /// `(name, row-major entries)` of each matrix, for reports.
    pub fn rows(&self) -> [(&'static str, [[f64; 3]; 3]); 4] {
        let r = |m: &Matrix3<f64>| std::array::from_fn(|i| std::array::from_fn(|j| m[(i, j)]));
        [("q", r(&self.q)), ("m", r(&self.m)), ("h", r(&self.h)), ("g", r(&self.g))]
    }
}

/// `M`, the closed-form `H = Q·M⁻¹`, and `G = Qᵀ + Q − α·Mᵀ·H·M` in
/// scalar block form over (storage trade, grid trade, price).
pub fn build_correction_matrices(alpha: f64, tau: f64, beta: f64) -> CorrectionMatrices {
    let q = Matrix3::new(beta, 0.0, 0.0, beta, beta, 0.0, -1.0, -1.0, 1.0 / beta);
    let m = Matrix3::new(1.0, -(1.0 - tau), 0.0, tau, 1.0, 0.0, -beta, -beta, 1.0);
    let d = 1.0 + tau * (1.0 - tau);
    let h2 = beta * (1.0 - tau) / d;
    let h = Matrix3::new(beta / d, h2, 0.0, h2, beta * (2.0 - tau) / d, 0.0, 0.0, 0.0, 1.0 / beta);
    let g = q.transpose() + q - alpha * m.transpose() * h * m;
    CorrectionMatrices { q, m, h, g }
}

// ---------------------------------------------------------------------------
// Iterates

/// Primal anchors and prices carried between iterations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordinationState {
    pub demand: Vec<Vec<f64>>,
    pub to_grid: Vec<Vec<f64>>,
    pub to_storage: Vec<Vec<f64>>,
    pub storage_from_grid: Vec<Vec<f64>>,
    pub grid_to_storage: Vec<Vec<f64>>,
    pub lambda: Vec<Vec<f64>>,
    pub mu: Vec<Vec<f64>>,
    pub k: usize,
}

impl CoordinationState {
    /// All trades and prices at zero.
    pub fn zeros(s: &Scenario) -> Self {
        let z = |n: usize| vec![vec![0.0; s.slots()]; n];
        let (ns, nb) = (s.stations.len(), s.storages.len());
        Self {
            demand: z(ns),
            to_grid: z(ns),
            to_storage: z(ns),
            storage_from_grid: z(nb),
            grid_to_storage: z(nb),
            lambda: z(ns),
            mu: z(nb),
            k: 0,
        }
    }

    /// State matching an allocation and price system, e.g. a centralized optimum.
    pub fn from_allocation(s: &Scenario, a: &Allocation, prices: &PriceSystem) -> Self {
        Self {
            demand: a.stations.iter().map(|x| x.state.demand.clone()).collect(),
            to_grid: a.flow.station_exchange.clone(),
            to_storage: a.stations.iter().map(|x| x.state.to_storage.clone()).collect(),
            storage_from_grid: a.storages.iter().map(|b| b.net_from_grid.clone()).collect(),
            grid_to_storage: (0..s.storages.len())
                .map(|b| {
                    if a.flow.storage_exchange[b].is_empty() {
                        vec![0.0; s.slots()]
                    } else {
                        a.flow.storage_exchange[b].clone()
                    }
                })
                .collect(),
            lambda: prices.station_price.clone(),
            mu: prices.storage_price.clone(),
            k: 0,
        }
    }

    pub fn prices(&self) -> PriceSystem {
        PriceSystem { station_price: self.lambda.clone(), storage_price: self.mu.clone() }
    }
}

/// Everything one prediction step produces.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub schedules: Vec<Vec<EvSchedule>>,
    pub demand: Vec<Vec<f64>>,
    pub storages: Vec<StorageSchedule>,
    /// `p̃_b` per station (zero for stations without storage).
    pub to_storage: Vec<Vec<f64>>,
    pub flow: FlowState,
    pub to_grid: Vec<Vec<f64>>,
    pub storage_from_grid: Vec<Vec<f64>>,
    pub grid_to_storage: Vec<Vec<f64>>,
    pub lambda: Vec<Vec<f64>>,
    pub mu: Vec<Vec<f64>>,
    pub timing: StepTiming,
}

/// Wall-clock spent per agent class in one prediction step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StepTiming {
    /// Mean single-CSO solve time, seconds.
    pub cso_mean_s: f64,
    pub seso_mean_s: f64,
    pub dso_s: f64,
    pub wall_s: f64,
}

fn check(sol: &ConicSolution, iteration: usize, agent: impl FnOnce() -> String) -> Result<(), CoordinationError> {
    if sol.status == SolveStatus::Optimal {
        Ok(())
    } else {
        Err(CoordinationError::Subproblem { iteration, agent: agent(), status: sol.status })
    }
}

/// Solves every local program once: stations in parallel, then storages in
/// parallel with fresh station demand, then the network with fresh storage
/// trades; finally the price predictions.
pub fn prediction_step(s: &Scenario, st: &CoordinationState, beta: f64) -> Result<Prediction, CoordinationError> {
    let wall = Instant::now();
    let grid = s.time;
    let dt = s.dt();
    let slots = s.slots();
    let it = st.k + 1;
    let tol = Tolerances::default();
    let m = membership(s);

    let stations: Vec<(Vec<EvSchedule>, Vec<f64>, Duration)> = s
        .stations
        .par_iter()
        .enumerate()
        .map(|(i, spec)| {
            let t0 = Instant::now();
            let p = assemble_cso_subproblem(spec, &grid, &st.lambda[i], &st.to_grid[i], &st.to_storage[i], beta);
            let sol = solve(&p.program, tol);
            check(&sol, it, || format!("station {}", spec.station_id))?;
            Ok((p.block.decode_schedules(spec, &grid, &sol), p.block.decode_demand(&sol), t0.elapsed()))
        })
        .collect::<Result<_, CoordinationError>>()?;
    let demand: Vec<Vec<f64>> = stations.iter().map(|x| x.1.clone()).collect();

    let storages: Vec<(StorageSchedule, Duration)> = s
        .storages
        .par_iter()
        .enumerate()
        .map(|(b, spec)| {
            let t0 = Instant::now();
            let members = s.storage_members(b);
            let pick = |v: &Vec<Vec<f64>>| members.iter().map(|&i| v[i].clone()).collect::<Vec<_>>();
            let lambda = pick(&st.lambda);
            let dem = pick(&demand);
            let to_grid = pick(&st.to_grid);
            let pv: Vec<Vec<f64>> = members.iter().map(|&i| s.stations[i].pv_profile.clone()).collect();
            let inp = SesoInputs {
                lambda: &lambda,
                mu: &st.mu[b],
                demand: &dem,
                to_grid: &to_grid,
                pv: &pv,
                grid_to_storage: &st.grid_to_storage[b],
            };
            let p = assemble_seso_subproblem(spec, &grid, s.cyclic_storage, &inp, beta);
            let sol = solve(&p.program, tol);
            check(&sol, it, || format!("storage {}", spec.storage_id))?;
            Ok((p.block.decode(spec, &grid, &sol), t0.elapsed()))
        })
        .collect::<Result<_, CoordinationError>>()?;

    let to_storage: Vec<Vec<f64>> = (0..s.stations.len())
        .map(|i| m[i].map_or_else(|| vec![0.0; slots], |(b, k)| storages[b].0.net_from_station[k].clone()))
        .collect();
    let storage_from_grid: Vec<Vec<f64>> = storages.iter().map(|x| x.0.net_from_grid.clone()).collect();

    let t0 = Instant::now();
    let inp = DsoInputs {
        lambda: &st.lambda,
        mu: &st.mu,
        demand: &demand,
        to_storage: &to_storage,
        storage_from_grid: &storage_from_grid,
    };
    let p = assemble_dso_subproblem(s, &inp, beta);
    let sol = solve(&p.program, tol);
    check(&sol, it, || "network".into())?;
    let flow = p.block.decode(s, &sol);
    let dso_s = t0.elapsed().as_secs_f64();
    let to_grid = flow.station_exchange.clone();
    let grid_to_storage: Vec<Vec<f64>> = (0..s.storages.len())
        .map(|b| if flow.storage_exchange[b].is_empty() { vec![0.0; slots] } else { flow.storage_exchange[b].clone() })
        .collect();

    let lambda = (0..s.stations.len())
        .map(|i| {
            (0..slots)
                .map(|t| {
                    let r = demand[i][t] + to_grid[i][t] + to_storage[i][t] - s.stations[i].pv_profile[t];
                    st.lambda[i][t] - beta * dt * r
                })
                .collect()
        })
        .collect();
    let mu = (0..s.storages.len())
        .map(|b| {
            (0..slots)
                .map(|t| {
                    if s.storages[b].grid_access {
                        st.mu[b][t] - beta * dt * (grid_to_storage[b][t] + storage_from_grid[b][t])
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();

    let mean = |d: &mut dyn Iterator<Item = Duration>, n: usize| {
        if n == 0 {
            0.0
        } else {
            d.map(|x| x.as_secs_f64()).sum::<f64>() / n as f64
        }
    };
    let timing = StepTiming {
        cso_mean_s: mean(&mut stations.iter().map(|x| x.2), stations.len()),
        seso_mean_s: mean(&mut storages.iter().map(|x| x.1), storages.len()),
        dso_s,
        wall_s: wall.elapsed().as_secs_f64(),
    };
    Ok(Prediction {
        schedules: stations.into_iter().map(|x| x.0).collect(),
        demand,
        storages: storages.into_iter().map(|x| x.0).collect(),
        to_storage,
        flow,
        to_grid,
        storage_from_grid,
        grid_to_storage,
        lambda,
        mu,
        timing,
    })
}

/// One price correction. `predicted` is the variant's own price prediction:
/// the all-prediction price `λ̃` for [`DualVariant::MainText`], and for
/// [`DualVariant::Appendix`] the price predicted from the fresh station
/// decision against the previous storage and grid trades. `d_storage` and
/// `d_grid` are `p − p̃` of the storage-side and grid-side trades.
pub fn dual_correction(
    variant: DualVariant,
    price: f64,
    predicted: f64,
    d_storage: f64,
    d_grid: f64,
    alpha: f64,
    beta_dt: f64,
) -> f64 {
    match variant {
        DualVariant::MainText => price - alpha * (price - predicted),
        DualVariant::Appendix => price - alpha * (-beta_dt * d_storage - beta_dt * d_grid + price - predicted),
    }
}

/// Blends the state toward the prediction with the correction matrix.
pub fn correction_step(s: &Scenario, st: &CoordinationState, pr: &Prediction, params: &CoordinationParams) -> CoordinationState {
    let (a, tau) = (params.alpha, params.tau);
    let bdt = params.beta * s.dt();
    let variant = params.dual_variant;
    let blend = |x_b: &[Vec<f64>], xt_b: &[Vec<f64>], x_g: &[Vec<f64>], xt_g: &[Vec<f64>], y: &[Vec<f64>], yt: &[Vec<f64>]| {
        let mut nb = Vec::with_capacity(x_b.len());
        let mut ng = Vec::with_capacity(x_b.len());
        let mut ny = Vec::with_capacity(x_b.len());
        for r in 0..x_b.len() {
            let (mut vb, mut vg, mut vy) = (Vec::new(), Vec::new(), Vec::new());
            for t in 0..x_b[r].len() {
                let db = x_b[r][t] - xt_b[r][t];
                let dg = x_g[r][t] - xt_g[r][t];
                vb.push(x_b[r][t] - a * (db - (1.0 - tau) * dg));
                vg.push(x_g[r][t] - a * (tau * db + dg));
                let predicted = match variant {
                    DualVariant::MainText => yt[r][t],
                    // undo the fresh storage and grid trades in λ̃
                    DualVariant::Appendix => yt[r][t] - bdt * (db + dg),
                };
                vy.push(dual_correction(variant, y[r][t], predicted, db, dg, a, bdt));
            }
            nb.push(vb);
            ng.push(vg);
            ny.push(vy);
        }
        (nb, ng, ny)
    };
    let (to_storage, to_grid, lambda) =
        blend(&st.to_storage, &pr.to_storage, &st.to_grid, &pr.to_grid, &st.lambda, &pr.lambda);
    let (storage_from_grid, grid_to_storage, mu) =
        blend(&st.storage_from_grid, &pr.storage_from_grid, &st.grid_to_storage, &pr.grid_to_storage, &st.mu, &pr.mu);
    CoordinationState {
        demand: pr.demand.clone(),
        to_grid,
        to_storage,
        storage_from_grid,
        grid_to_storage,
        lambda,
        mu,
        k: st.k + 1,
    }
}

/// Final dispatch: the network operator re-solves its power flow with every
/// station and storage trade fixed at the value the station or storage chose
/// in the last prediction, so the returned allocation clears exactly.
/// Returns `None` when the network cannot carry those trades.
pub fn settle(s: &Scenario, pr: &Prediction) -> Option<Allocation> {
    let mut prog = ConvexProgram::new();
    let net = NetworkBlock::build(&mut prog, s);
    for (i, st) in s.stations.iter().enumerate() {
        for t in 0..s.slots() {
            prog.fix(net.station_exchange[i][t], st.pv_profile[t] - pr.demand[i][t] - pr.to_storage[i][t]);
        }
    }
    for b in 0..s.storages.len() {
        for (t, &v) in net.storage_exchange[b].iter().enumerate() {
            prog.fix(v, -pr.storage_from_grid[b][t]);
        }
    }
    let sol = solve(&prog, Tolerances::default());
    if sol.status != SolveStatus::Optimal {
        return None;
    }
    let flow = net.decode(s, &sol);
    let mut a = prediction_allocation(s, pr);
    for (i, x) in a.stations.iter_mut().enumerate() {
        x.state.to_grid = flow.station_exchange[i].clone();
    }
    a.flow = flow;
    Some(a)
}

// ---------------------------------------------------------------------------
// Trace and driver

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub k: usize,
    pub cso_total: f64,
    pub seso_total: f64,
    pub dso: f64,
    /// Social cost of the predicted decisions.
    pub total: f64,
    pub lambda_gap: f64,
    pub mu_gap: f64,
    /// Largest coupling residual of the predicted decisions, kW.
    pub coupling_resid: f64,
    #[serde(skip)]
    pub timing: StepTiming,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace {
    pub rows: Vec<TraceRow>,
}

impl IterationTrace {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        for r in &self.rows {
            wr.serialize(r)?;
        }
        wr.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Converged,
    MaxIterations,
}

#[derive(Debug, Clone)]
pub struct CoordinationOutcome {
    pub status: RunStatus,
    /// The settled allocation, or the last prediction when settlement failed.
    pub allocation: Allocation,
    pub settled: bool,
    pub prices: PriceSystem,
    pub trace: IterationTrace,
    pub state: CoordinationState,
    pub runtime_s: f64,
}

impl CoordinationOutcome {
    pub fn converged(&self) -> bool {
        self.status == RunStatus::Converged
    }

    pub fn iterations(&self) -> usize {
        self.trace.len()
    }

    /// Social cost of the returned allocation.
    pub fn total_cost(&self, s: &Scenario) -> f64 {
        operating_costs(s, &self.allocation).total()
    }
}

fn norm_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter().flatten().zip(b.iter().flatten()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// The allocation formed by one prediction's local decisions.
pub fn prediction_allocation(s: &Scenario, pr: &Prediction) -> Allocation {
    Allocation {
        stations: (0..s.stations.len())
            .map(|i| StationAllocation {
                schedules: pr.schedules[i].clone(),
                state: StationState {
                    demand: pr.demand[i].clone(),
                    to_grid: pr.to_grid[i].clone(),
                    to_storage: pr.to_storage[i].clone(),
                },
            })
            .collect(),
        storages: pr.storages.clone(),
        flow: pr.flow.clone(),
    }
}

fn trace_row(s: &Scenario, st: &CoordinationState, pr: &Prediction, next: &CoordinationState) -> TraceRow {
    let grid = s.time;
    let dt = s.dt();
    let slots = s.slots();
    let mut cso_total = 0.0;
    let mut cs = 0.0;
    for (i, spec) in s.stations.iter().enumerate() {
        let c = station_cost(&pr.schedules[i], &spec.fleet, &grid);
        cs += c;
        cso_total += c + (0..slots).map(|t| st.lambda[i][t] * (spec.pv_profile[t] - pr.demand[i][t]) * dt).sum::<f64>();
    }
    let mut seso_total = 0.0;
    let mut bat = 0.0;
    for (b, spec) in s.storages.iter().enumerate() {
        let c = degradation_cost(&pr.storages[b], spec, &grid);
        bat += c;
        let mut pay = 0.0;
        for (k, &i) in s.storage_members(b).iter().enumerate() {
            pay += (0..slots).map(|t| st.lambda[i][t] * pr.storages[b].net_from_station[k][t] * dt).sum::<f64>();
        }
        pay += (0..slots).map(|t| st.mu[b][t] * pr.storage_from_grid[b][t] * dt).sum::<f64>();
        seso_total += c - pay;
    }
    let ds = dso_energy_cost(&pr.flow.grid_buy, &pr.flow.grid_sell, &s.tariff, dt);
    let mut dso = ds;
    for t in 0..slots {
        for i in 0..s.stations.len() {
            dso -= st.lambda[i][t] * pr.to_grid[i][t] * dt;
        }
        for b in 0..s.storages.len() {
            dso -= st.mu[b][t] * pr.grid_to_storage[b][t] * dt;
        }
    }
    let mut resid = 0.0_f64;
    for (i, spec) in s.stations.iter().enumerate() {
        for t in 0..slots {
            let r = pr.demand[i][t] + pr.to_grid[i][t] + pr.to_storage[i][t] - spec.pv_profile[t];
            resid = resid.max(r.abs());
        }
    }
    for b in 0..s.storages.len() {
        for t in 0..slots {
            resid = resid.max((pr.grid_to_storage[b][t] + pr.storage_from_grid[b][t]).abs());
        }
    }
    TraceRow {
        k: next.k,
        cso_total,
        seso_total,
        dso,
        total: cs + bat + ds,
        lambda_gap: norm_diff(&next.lambda, &st.lambda),
        mu_gap: norm_diff(&next.mu, &st.mu),
        coupling_resid: resid,
        timing: pr.timing,
    }
}

/// Runs prediction and correction from all-zero trades and prices until both
/// price changes fall below `delta` (Euclidean norm over all slots) or the
/// iteration budget is spent.
pub fn run_coordination(s: &Scenario, params: &CoordinationParams) -> Result<CoordinationOutcome, CoordinationError> {
    run_coordination_from(s, params, CoordinationState::zeros(s))
}

pub fn run_coordination_from(
    s: &Scenario,
    params: &CoordinationParams,
    init: CoordinationState,
) -> Result<CoordinationOutcome, CoordinationError> {
    params.validate()?;
    let start = Instant::now();
    let mut st = init;
    let mut trace = IterationTrace::default();
    let mut last = None;
    let mut status = RunStatus::MaxIterations;
    for _ in 0..params.max_iterations {
        let pr = prediction_step(s, &st, params.beta)?;
        let next = correction_step(s, &st, &pr, params);
        let row = trace_row(s, &st, &pr, &next);
        let done = row.lambda_gap <= params.delta && row.mu_gap <= params.delta;
        trace.rows.push(row);
        st = next;
        last = Some(pr);
        if done {
            status = RunStatus::Converged;
            break;
        }
    }
    let Some(pr) = last else {
        return Err(CoordinationError::InvalidParams("max_iterations must be at least 1".into()));
    };
    let (allocation, settled) = match settle(s, &pr) {
        Some(a) => (a, true),
        None => (prediction_allocation(s, &pr), false),
    };
    Ok(CoordinationOutcome {
        status,
        allocation,
        settled,
        prices: st.prices(),
        trace,
        state: st,
        runtime_s: start.elapsed().as_secs_f64(),
    })
}
