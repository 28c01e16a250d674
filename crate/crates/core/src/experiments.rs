//! Baseline variants, parameter sweeps and scalability runs.

use std::collections::BTreeSet;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coordinator::{run_coordination, CoordinationError, CoordinationParams, IterationTrace, RunStatus};
use crate::data::CLUSTER_BUSES;
use crate::oracle::{
    profit_allocation, solve_centralized_with, Allocation, ModelOptions, OracleError, PriceSystem, ProfitAllocation,
};
use crate::scenario::{synthesize_fleet, Scenario, StorageSpec};
use crate::storage::StorageSchedule;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Coordination(#[from] CoordinationError),
    #[error("not enough free bus groups: {needed} clusters requested, {available} available")]
    BusExhaustion { needed: usize, available: usize },
    #[error("template must hold exactly one storage with its stations, found {0}")]
    Template(String),
    #[error("invalid capacity split: {0}")]
    Split(String),
}

impl ExperimentError {
    pub fn is_infeasible(&self) -> bool {
        match self {
            ExperimentError::Oracle(e) => matches!(e, OracleError::Infeasible(_)),
            ExperimentError::Coordination(e) => e.is_infeasible(),
            _ => false,
        }
    }
}

/// Which model a benchmark run solves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantKind {
    /// No storage at all.
    B1NoStorage,
    /// Each station owns a slice of the shared capacity behind its meter.
    B2IndividualStorage,
    /// Shared storage, but every EV charges as soon as possible.
    B3Inelastic,
    Proposed,
}

impl VariantKind {
    pub const ALL: [VariantKind; 4] =
        [VariantKind::B1NoStorage, VariantKind::B2IndividualStorage, VariantKind::B3Inelastic, VariantKind::Proposed];

    pub fn label(self) -> &'static str {
        match self {
            Self::B1NoStorage => "B1",
            Self::B2IndividualStorage => "B2",
            Self::B3Inelastic => "B3",
            Self::Proposed => "Proposed",
        }
    }
}

impl std::str::FromStr for VariantKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "b1" => Ok(Self::B1NoStorage),
            "b2" => Ok(Self::B2IndividualStorage),
            "b3" => Ok(Self::B3Inelastic),
            "proposed" => Ok(Self::Proposed),
            other => Err(format!("unknown variant `{other}` (expected b1, b2, b3 or proposed)")),
        }
    }
}

/// How B2 divides a shared storage among its stations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SplitRule {
    #[default]
    Equal,
    /// Fractions per connected station, in connection order; must sum to 1.
    Fractions(Vec<f64>),
}

impl SplitRule {
    /// Capacity share of each of `members` connected stations.
    pub fn fractions(&self, members: usize) -> Result<Vec<f64>, ExperimentError> {
        match self {
            SplitRule::Equal => Ok(vec![1.0 / members as f64; members]),
            SplitRule::Fractions(f) => {
                if f.len() != members {
                    return Err(ExperimentError::Split(format!("{} fractions for {members} stations", f.len())));
                }
                if f.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
                    return Err(ExperimentError::Split(format!("fractions must lie in [0, 1]: {f:?}")));
                }
                let sum: f64 = f.iter().sum();
                if (sum - 1.0).abs() > 1e-9 {
                    return Err(ExperimentError::Split(format!("fractions sum to {sum}, not 1")));
                }
                Ok(f.clone())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkVariant {
    pub kind: VariantKind,
    pub split: SplitRule,
    /// Overrides the scenario's cyclic-storage setting when present.
    pub cyclic_storage: Option<bool>,
    /// Run the proposed variant with distributed coordination instead of the
    /// centralized solve. Ignored by the baselines.
    pub distributed: Option<CoordinationParams>,
}

impl BenchmarkVariant {
    pub fn new(kind: VariantKind) -> Self {
        Self { kind, split: SplitRule::Equal, cyclic_storage: None, distributed: None }
    }

    pub fn distributed(params: CoordinationParams) -> Self {
        Self { distributed: Some(params), ..Self::new(VariantKind::Proposed) }
    }

    /// The scenario and model options this variant actually solves.
    pub fn instantiate(&self, s: &Scenario) -> Result<(Scenario, ModelOptions), ExperimentError> {
        let mut out = s.clone();
        if let Some(c) = self.cyclic_storage {
            out.cyclic_storage = c;
        }
        let mut opts = ModelOptions::default();
        match self.kind {
            VariantKind::B1NoStorage => out.storages.clear(),
            VariantKind::B2IndividualStorage => out.storages = split_storages(s, &self.split)?,
            VariantKind::B3Inelastic => opts.fix_casap = true,
            VariantKind::Proposed => {}
        }
        Ok((out, opts))
    }
}

/// Replaces every shared storage with one behind-the-meter storage per
/// connected station, sized by the split rule.
pub fn split_storages(s: &Scenario, rule: &SplitRule) -> Result<Vec<StorageSpec>, ExperimentError> {
    let mut out = Vec::new();
    for sto in &s.storages {
        let fr = rule.fractions(sto.connected_stations.len())?;
        for (k, (&station, f)) in sto.connected_stations.iter().zip(fr).enumerate() {
            let bus = s.stations.iter().find(|st| st.station_id == station).map_or(sto.bus_id, |st| st.bus_id);
            let mut part = sto.rescaled(f);
            part.storage_id = sto.storage_id * 100 + k as u32 + 1;
            part.bus_id = bus;
            part.connected_stations = vec![station];
            part.grid_access = false;
            if f > 0.0 {
                out.push(part);
            }
        }
    }
    Ok(out)
}

/// Scenario with every storage scaled by `m`; storages scaled to nothing are
/// dropped.
pub fn scale_storage_capacity(s: &Scenario, m: f64) -> Scenario {
    let mut out = s.clone();
    out.storages = if m > 0.0 { s.storages.iter().map(|b| b.rescaled(m)).collect() } else { Vec::new() };
    out
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub variant: VariantKind,
    pub cso: Vec<f64>,
    pub seso: Vec<f64>,
    pub dso: f64,
    pub total: f64,
    /// `(B1 total − total) / B1 total`, when a B1 total is known.
    pub reduction: Option<f64>,
    pub runtime_s: f64,
    pub iterations: Option<usize>,
    #[serde(skip)]
    pub detail: Option<RunDetail>,
}

impl ExperimentResult {
    pub fn cso_total(&self) -> f64 {
        self.cso.iter().sum()
    }

    pub fn seso_total(&self) -> f64 {
        self.seso.iter().sum()
    }
}

/// Full solution behind an experiment row.
#[derive(Debug, Clone)]
pub struct RunDetail {
    pub scenario: Scenario,
    pub allocation: Allocation,
    pub prices: PriceSystem,
    pub profit: ProfitAllocation,
    pub trace: Option<IterationTrace>,
    pub converged: bool,
}

impl ExperimentResult {
    pub fn with_baseline(mut self, b1_total: f64) -> Self {
        self.reduction = Some((b1_total - self.total) / b1_total);
        self
    }
}

/// Solves one variant and reports its cost split. Baselines are always solved
/// centrally; the proposed variant runs distributed when requested.
pub fn run_benchmark(s: &Scenario, variant: &BenchmarkVariant) -> Result<ExperimentResult, ExperimentError> {
    let start = Instant::now();
    let (inst, opts) = variant.instantiate(s)?;
    let (allocation, prices, trace, converged) = match (variant.kind, &variant.distributed) {
        (VariantKind::Proposed, Some(params)) => {
            let out = run_coordination(&inst, params)?;
            let converged = out.status == RunStatus::Converged;
            (out.allocation, out.prices, Some(out.trace), converged)
        }
        _ => {
            let sol = solve_centralized_with(&inst, opts)?;
            (sol.allocation, sol.prices, None, true)
        }
    };
    let profit = profit_allocation(&inst, &allocation, &prices);
    let (cso, seso) = stakeholder_view(s, &inst, variant.kind, &profit);
    Ok(ExperimentResult {
        variant: variant.kind,
        cso,
        seso,
        dso: profit.dso,
        total: profit.total(),
        reduction: None,
        runtime_s: start.elapsed().as_secs_f64(),
        iterations: trace.as_ref().map(IterationTrace::len),
        detail: Some(RunDetail { scenario: inst, allocation, prices, profit, trace, converged }),
    })
}

/// All four variants, with reductions relative to B1.
pub fn run_all_variants(s: &Scenario) -> Result<Vec<ExperimentResult>, ExperimentError> {
    let mut out = VariantKind::ALL
        .iter()
        .map(|&k| run_benchmark(s, &BenchmarkVariant::new(k)))
        .collect::<Result<Vec<_>, _>>()?;
    let b1 = out[0].total;
    for r in &mut out {
        *r = r.clone().with_baseline(b1);
    }
    Ok(out)
}

/// Per-station and per-shared-storage costs in the original scenario's terms.
/// Behind-the-meter B2 slices fold into their station's cost; variants
/// without a given shared storage report zero for it.
fn stakeholder_view(original: &Scenario, inst: &Scenario, kind: VariantKind, p: &ProfitAllocation) -> (Vec<f64>, Vec<f64>) {
    let mut cso = p.cso.clone();
    match kind {
        VariantKind::B2IndividualStorage => {
            for (b, slice) in inst.storages.iter().enumerate() {
                if let Some(i) = inst.station_index(slice.connected_stations[0]) {
                    cso[i] += p.seso[b];
                }
            }
            (cso, vec![0.0; original.storages.len()])
        }
        VariantKind::B1NoStorage => (cso, vec![0.0; original.storages.len()]),
        _ => (cso, p.seso.clone()),
    }
}

// ---------------------------------------------------------------------------
// Sweeps

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub parameter: f64,
    pub variant: VariantKind,
    pub cso_total: f64,
    pub seso_total: f64,
    pub dso: f64,
    pub total: f64,
    /// Energy moved through all storages, kWh.
    pub storage_throughput: f64,
}

fn sweep_row(parameter: f64, r: &ExperimentResult) -> SweepRow {
    let throughput = r.detail.as_ref().map_or(0.0, |d| {
        d.allocation.storages.iter().map(|b: &StorageSchedule| b.throughput(&d.scenario.time)).sum()
    });
    SweepRow {
        parameter,
        variant: r.variant,
        cso_total: r.cso_total(),
        seso_total: r.seso_total(),
        dso: r.dso,
        total: r.total,
        storage_throughput: throughput,
    }
}

/// Capacity multipliers `0, 0.25, …, 2.5`.
pub fn default_capacity_multipliers() -> Vec<f64> {
    (0..=10).map(|k| k as f64 * 0.25).collect()
}

/// Totals per variant with every storage scaled by each multiplier.
pub fn capacity_sweep(s: &Scenario, multipliers: &[f64], variants: &[VariantKind]) -> Result<Vec<SweepRow>, ExperimentError> {
    let mut rows = Vec::new();
    for &m in multipliers {
        let scaled = scale_storage_capacity(s, m);
        for &k in variants {
            rows.push(sweep_row(m, &run_benchmark(&scaled, &BenchmarkVariant::new(k))?));
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coefficient {
    StorageDegradation,
    EvInconvenience,
}

impl std::str::FromStr for Coefficient {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "bat" => Ok(Self::StorageDegradation),
            "ev" => Ok(Self::EvInconvenience),
            other => Err(format!("unknown coefficient `{other}` (expected bat or ev)")),
        }
    }
}

impl Coefficient {
    pub fn default_value(self) -> f64 {
        match self {
            Self::StorageDegradation => 0.01,
            Self::EvInconvenience => 1e-4,
        }
    }

    /// Eleven log-spaced values over two decades centred on the default.
    pub fn default_grid(self) -> Vec<f64> {
        let c = self.default_value();
        (0..=10).map(|k| c * 10f64.powf(-1.0 + 0.2 * k as f64)).collect()
    }
}

pub fn with_coefficient(s: &Scenario, which: Coefficient, value: f64) -> Scenario {
    let mut out = s.clone();
    match which {
        Coefficient::StorageDegradation => {
            for b in &mut out.storages {
                b.degradation_coeff = value;
            }
        }
        Coefficient::EvInconvenience => {
            for ev in out.stations.iter_mut().flat_map(|st| st.fleet.iter_mut()) {
                ev.inconvenience_coeff = value;
            }
        }
    }
    out
}

pub fn coefficient_sweep(
    s: &Scenario,
    which: Coefficient,
    values: &[f64],
    variants: &[VariantKind],
) -> Result<Vec<SweepRow>, ExperimentError> {
    let mut rows = Vec::new();
    for &v in values {
        let inst = with_coefficient(s, which, v);
        for &k in variants {
            rows.push(sweep_row(v, &run_benchmark(&inst, &BenchmarkVariant::new(k))?));
        }
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Scalability

/// Copies the template's single storage cluster onto `groups` distinct bus
/// groups. The first copy keeps the template's buses; the others take the
/// next free groups of four adjacent buses. With `ev_per_station` every
/// station's fleet is redrawn from its demand pattern at that size.
pub fn replicate_cluster(
    template: &Scenario,
    groups: usize,
    ev_per_station: Option<usize>,
    seed: u64,
) -> Result<Scenario, ExperimentError> {
    if template.storages.len() != 1 {
        return Err(ExperimentError::Template(format!("{} storages", template.storages.len())));
    }
    let sto = &template.storages[0];
    let members: Vec<usize> = template.storage_members(0);
    if members.len() != template.stations.len() {
        return Err(ExperimentError::Template(format!("{} stations outside the cluster", template.stations.len() - members.len())));
    }
    let size = members.len();
    let used: BTreeSet<u32> = template.stations.iter().map(|st| st.bus_id).chain([sto.bus_id]).collect();
    let known: BTreeSet<u32> = template.network.buses.iter().map(|b| b.bus_id).collect();
    let free: Vec<Vec<u32>> = CLUSTER_BUSES
        .iter()
        .filter(|g| g.iter().all(|b| known.contains(b) && !used.contains(b) && *b != template.network.slack_bus_id))
        .map(|g| g[..size.min(4)].to_vec())
        .filter(|g| g.len() == size)
        .collect();
    if groups > free.len() + 1 {
        return Err(ExperimentError::BusExhaustion { needed: groups, available: free.len() + 1 });
    }
    let storage_pos = members.iter().position(|&i| template.stations[i].bus_id == sto.bus_id);
    let max_station = template.stations.iter().map(|st| st.station_id).max().unwrap_or(0);

    let mut out = template.clone();
    out.stations.clear();
    out.storages.clear();
    for g in 0..groups {
        let buses: Vec<u32> = if g == 0 {
            members.iter().map(|&i| template.stations[i].bus_id).collect()
        } else {
            free[g - 1].clone()
        };
        let mut ids = Vec::with_capacity(size);
        for (k, &i) in members.iter().enumerate() {
            let mut st = template.stations[i].clone();
            st.station_id = template.stations[i].station_id + g as u32 * max_station;
            st.bus_id = buses[k];
            if let Some(n) = ev_per_station {
                let pattern = st.pattern.unwrap_or(crate::scenario::DemandPattern::Residential);
                st.fleet = synthesize_fleet(n, pattern, seed.wrapping_mul(7919).wrapping_add(u64::from(st.station_id)));
            }
            ids.push(st.station_id);
            out.stations.push(st);
        }
        let mut b = sto.clone();
        b.storage_id = sto.storage_id + g as u32;
        b.connected_stations = ids;
        b.bus_id = if g == 0 { sto.bus_id } else { storage_pos.map_or(buses[0], |p| buses[p]) };
        out.storages.push(b);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleRow {
    pub groups: usize,
    pub stations: usize,
    pub storages: usize,
    pub evs: usize,
    pub iterations: usize,
    pub converged: bool,
    pub total_cost: f64,
    pub wall_s: f64,
    pub iteration_mean_s: f64,
    pub cso_mean_s: f64,
    pub seso_mean_s: f64,
    pub dso_mean_s: f64,
}

/// Distributed run on `groups` replicas of the template cluster.
pub fn scalability_run(
    template: &Scenario,
    groups: usize,
    ev_per_station: Option<usize>,
    params: &CoordinationParams,
) -> Result<(ScaleRow, IterationTrace), ExperimentError> {
    let s = replicate_cluster(template, groups, ev_per_station, 0)?;
    let out = run_coordination(&s, params)?;
    let n = out.trace.len().max(1) as f64;
    let mean = |f: fn(&crate::coordinator::TraceRow) -> f64| out.trace.rows.iter().map(f).sum::<f64>() / n;
    let row = ScaleRow {
        groups,
        stations: s.stations.len(),
        storages: s.storages.len(),
        evs: s.ev_count(),
        iterations: out.iterations(),
        converged: out.converged(),
        total_cost: out.total_cost(&s),
        wall_s: out.runtime_s,
        iteration_mean_s: mean(|r| r.timing.wall_s),
        cso_mean_s: mean(|r| r.timing.cso_mean_s),
        seso_mean_s: mean(|r| r.timing.seso_mean_s),
        dso_mean_s: mean(|r| r.timing.dso_s),
    };
    Ok((row, out.trace))
}
