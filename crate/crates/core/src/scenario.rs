//! Problem instances: time grid, feeder, stations with their EV fleets,
//! shared storages and the utility tariff.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SCHEMA_VERSION: u32 = 1;

/// Battery capacity of every synthesized EV, kWh.
pub const EV_BATTERY_KWH: f64 = 60.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub horizon_slots: usize,
    #[serde(default = "default_slot_hours")]
    pub slot_hours: f64,
}

fn default_slot_hours() -> f64 {
    1.0
}

fn default_true() -> bool {
    true
}

fn default_ev_energy_max() -> f64 {
    EV_BATTERY_KWH
}

impl TimeGrid {
    pub fn hourly(slots: usize) -> Self {
        Self { horizon_slots: slots, slot_hours: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvTask {
    pub arrival_slot: usize,
    pub departure_slot: usize,
    pub initial_energy: f64,
    pub required_energy: f64,
    #[serde(default)]
    pub energy_min: f64,
    #[serde(default = "default_ev_energy_max")]
    pub energy_max: f64,
    pub power_max: f64,
    pub eff_charge: f64,
    pub eff_discharge: f64,
    pub inconvenience_coeff: f64,
    pub depreciation_coeff: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DemandPattern {
    Residential,
    Workplace,
    Leisure,
}

impl std::str::FromStr for DemandPattern {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "residential" => Ok(Self::Residential),
            "workplace" => Ok(Self::Workplace),
            "leisure" => Ok(Self::Leisure),
            other => Err(format!("unknown demand pattern `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationSpec {
    pub station_id: u32,
    pub bus_id: u32,
    pub pv_profile: Vec<f64>,
    pub fleet: Vec<EvTask>,
    /// Arrival pattern the fleet was drawn from; used when a fleet is re-synthesized.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pattern: Option<DemandPattern>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StorageSpec {
    pub storage_id: u32,
    pub bus_id: u32,
    pub connected_stations: Vec<u32>,
    pub capacity: f64,
    pub energy_min: f64,
    pub energy_max: f64,
    pub power_charge_max: f64,
    pub power_discharge_max: f64,
    pub eff_charge: f64,
    pub eff_discharge: f64,
    pub degradation_coeff: f64,
    pub initial_energy: f64,
    /// Whether the storage may trade with the distribution network; storages
    /// owned by a single station behind its meter do not.
    #[serde(default = "default_true")]
    pub grid_access: bool,
}

impl StorageSpec {
    /// Storage sized by the usual rule of thumb: 10–90 % usable window, power
    /// at 0.3 C, starting half full.
    pub fn sized(storage_id: u32, bus_id: u32, stations: Vec<u32>, capacity: f64) -> Self {
        Self {
            storage_id,
            bus_id,
            connected_stations: stations,
            capacity,
            energy_min: 0.1 * capacity,
            energy_max: 0.9 * capacity,
            power_charge_max: 0.3 * capacity,
            power_discharge_max: 0.3 * capacity,
            eff_charge: 0.95,
            eff_discharge: 0.95,
            degradation_coeff: 0.01,
            initial_energy: 0.5 * capacity,
            grid_access: true,
        }
    }

    pub fn rescaled(&self, factor: f64) -> Self {
        Self {
            capacity: self.capacity * factor,
            energy_min: self.energy_min * factor,
            energy_max: self.energy_max * factor,
            power_charge_max: self.power_charge_max * factor,
            power_discharge_max: self.power_discharge_max * factor,
            initial_energy: self.initial_energy * factor,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BusSpec {
    pub bus_id: u32,
    /// Net active consumption bounds, kW.
    pub p_bounds: (f64, f64),
    /// Net reactive consumption bounds, kvar.
    pub q_bounds: (f64, f64),
    /// Squared voltage magnitude bounds, p.u.².
    pub v_bounds: (f64, f64),
    pub base_load_p: Vec<f64>,
    pub base_load_q: Vec<f64>,
}

/// `[from, to, r_pu, x_pu, l_max_pu]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineSpec {
    pub from_bus: u32,
    pub to_bus: u32,
    pub resistance: f64,
    pub reactance: f64,
    pub current_sq_max: f64,
}

impl Serialize for LineSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        (self.from_bus, self.to_bus, self.resistance, self.reactance, self.current_sq_max).serialize(s)
    }
}

impl<'de> Deserialize<'de> for LineSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let (from_bus, to_bus, resistance, reactance, current_sq_max) =
            <(u32, u32, f64, f64, f64)>::deserialize(d)?;
        Ok(Self { from_bus, to_bus, resistance, reactance, current_sq_max })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub buses: Vec<BusSpec>,
    pub lines: Vec<LineSpec>,
    pub slack_bus_id: u32,
    #[serde(default = "default_s_base")]
    pub s_base: f64,
    #[serde(default = "default_v_base")]
    pub v_base: f64,
}

fn default_s_base() -> f64 {
    1000.0
}

fn default_v_base() -> f64 {
    12.66
}

impl NetworkSpec {
    pub fn kw_to_pu(&self, kw: f64) -> f64 {
        kw / self.s_base
    }

    pub fn pu_to_kw(&self, pu: f64) -> f64 {
        pu * self.s_base
    }

    pub fn bus(&self, id: u32) -> Option<&BusSpec> {
        self.buses.iter().find(|b| b.bus_id == id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tariff {
    pub buy_price: Vec<f64>,
    pub sell_price: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub schema: u32,
    pub time: TimeGrid,
    pub network: NetworkSpec,
    pub stations: Vec<StationSpec>,
    pub storages: Vec<StorageSpec>,
    pub tariff: Tariff,
    /// Require every storage to end the horizon at its starting energy.
    #[serde(default = "default_true")]
    pub cyclic_storage: bool,
}

impl Scenario {
    pub fn slots(&self) -> usize {
        self.time.horizon_slots
    }

    pub fn dt(&self) -> f64 {
        self.time.slot_hours
    }

    pub fn station_index(&self, id: u32) -> Option<usize> {
        self.stations.iter().position(|s| s.station_id == id)
    }

    /// Storage serving each station (by position), if any.
    pub fn storage_of_station(&self) -> Vec<Option<usize>> {
        let mut out = vec![None; self.stations.len()];
        for (b, st) in self.storages.iter().enumerate() {
            for id in &st.connected_stations {
                if let Some(i) = self.station_index(*id) {
                    out[i] = Some(b);
                }
            }
        }
        out
    }

    /// Positions of the stations connected to storage `b`.
    pub fn storage_members(&self, b: usize) -> Vec<usize> {
        self.storages[b]
            .connected_stations
            .iter()
            .filter_map(|id| self.station_index(*id))
            .collect()
    }

    pub fn ev_count(&self) -> usize {
        self.stations.iter().map(|s| s.fleet.len()).sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    /// Parses and validates a scenario document.
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| ScenarioError::Schema(e.to_string()))?;
        match value.get("schema") {
            Some(serde_json::Value::Number(n)) if n.as_u64() == Some(SCHEMA_VERSION as u64) => {}
            Some(other) => {
                return Err(ScenarioError::Schema(format!(
                    "field `schema`: unsupported version {other}"
                )))
            }
            None => return Err(ScenarioError::Schema("missing field `schema`".into())),
        }
        let s: Scenario =
            serde_json::from_value(value).map_err(|e| ScenarioError::Schema(e.to_string()))?;
        let report = validate_scenario(&s);
        if let Some(v) = report.first_error() {
            return Err(v.clone().into());
        }
        Ok(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    Invariant,
    NotRadial,
    Arbitrage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub entity: String,
    pub reason: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.entity, self.reason)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn len(&self) -> usize {
        self.violations.len()
    }

    /// Most structural problem first: topology, then tariff, then anything else.
    pub fn first_error(&self) -> Option<&Violation> {
        let rank = |k: ViolationKind| match k {
            ViolationKind::NotRadial => 0,
            ViolationKind::Arbitrage => 1,
            ViolationKind::Invariant => 2,
        };
        self.violations.iter().min_by_key(|v| rank(v.kind))
    }

    fn push(&mut self, kind: ViolationKind, entity: impl Into<String>, reason: impl Into<String>) {
        self.violations.push(Violation { kind, entity: entity.into(), reason: reason.into() });
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read scenario: {0}")]
    Io(#[from] std::io::Error),
    #[error("schema violation: {0}")]
    Schema(String),
    #[error("invariant violated by {entity}: {reason}")]
    Invariant { entity: String, reason: String },
    #[error("network not radial: {0}")]
    NotRadial(String),
    #[error("tariff no-arbitrage violated: {0}")]
    Arbitrage(String),
}

impl From<Violation> for ScenarioError {
    fn from(v: Violation) -> Self {
        match v.kind {
            ViolationKind::NotRadial => Self::NotRadial(v.reason),
            ViolationKind::Arbitrage => Self::Arbitrage(format!("{}: {}", v.entity, v.reason)),
            ViolationKind::Invariant => Self::Invariant { entity: v.entity, reason: v.reason },
        }
    }
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario, ScenarioError> {
    let text = std::fs::read_to_string(path)?;
    Scenario::from_json(&text)
}

pub fn save_scenario(s: &Scenario, path: impl AsRef<Path>) -> Result<(), ScenarioError> {
    std::fs::write(path, s.to_json())?;
    Ok(())
}

const REL: f64 = 1e-9;

/// Checks whether `lines` form a spanning tree of `buses` rooted at `slack`,
/// with every line oriented away from the root. Returns a reason on failure.
pub fn radiality_problem(buses: &[u32], lines: &[LineSpec], slack: u32) -> Option<String> {
    let ids: BTreeSet<u32> = buses.iter().copied().collect();
    if !ids.contains(&slack) {
        return Some(format!("slack bus {slack} is not a bus"));
    }
    if lines.len() + 1 != ids.len() {
        return Some(format!("{} lines for {} buses (a tree needs {})", lines.len(), ids.len(), ids.len() - 1));
    }
    let mut parent: HashMap<u32, u32> = HashMap::new();
    for l in lines {
        if !ids.contains(&l.from_bus) || !ids.contains(&l.to_bus) {
            return Some(format!("line {}-{} references a missing bus", l.from_bus, l.to_bus));
        }
        if l.to_bus == slack {
            return Some(format!("line {}-{} points into the slack bus", l.from_bus, l.to_bus));
        }
        if parent.insert(l.to_bus, l.from_bus).is_some() {
            return Some(format!("bus {} has more than one upstream line", l.to_bus));
        }
    }
    for &b in &ids {
        let mut cur = b;
        let mut steps = 0;
        while cur != slack {
            match parent.get(&cur) {
                Some(&p) => cur = p,
                None => return Some(format!("bus {b} is not connected to the slack bus")),
            }
            steps += 1;
            if steps > ids.len() {
                return Some(format!("cycle through bus {b}"));
            }
        }
    }
    None
}

fn check_profile(r: &mut ValidationReport, entity: &str, name: &str, v: &[f64], t: usize, nonneg: bool) {
    if v.len() != t {
        r.push(ViolationKind::Invariant, entity, format!("{name} has length {} instead of {t}", v.len()));
    }
    if v.iter().any(|x| !x.is_finite()) {
        r.push(ViolationKind::Invariant, entity, format!("{name} has non-finite entries"));
    } else if nonneg && v.iter().any(|&x| x < 0.0) {
        r.push(ViolationKind::Invariant, entity, format!("{name} has negative entries"));
    }
}

/// Validates a single EV task; returned reasons are empty iff it is well formed.
pub fn ev_task_problems(task: &EvTask, grid: &TimeGrid) -> Vec<String> {
    let mut out = Vec::new();
    let t = grid.horizon_slots;
    if task.arrival_slot >= task.departure_slot {
        out.push(format!("arrival slot {} not before departure slot {}", task.arrival_slot, task.departure_slot));
    }
    if task.departure_slot > t {
        out.push(format!("departure slot {} beyond horizon {t}", task.departure_slot));
    }
    if !(task.energy_min <= task.initial_energy && task.initial_energy <= task.energy_max) {
        out.push("initial energy outside [E_min, E_max]".into());
    }
    if !(task.energy_min <= task.required_energy && task.required_energy <= task.energy_max) {
        out.push("required energy outside [E_min, E_max]".into());
    }
    if !(task.power_max > 0.0) {
        out.push("power_max must be positive".into());
    }
    for (name, eta) in [("eff_charge", task.eff_charge), ("eff_discharge", task.eff_discharge)] {
        if !(eta > 0.0 && eta <= 1.0) {
            out.push(format!("{name} outside (0, 1]"));
        }
    }
    if task.inconvenience_coeff < 0.0 || task.depreciation_coeff < 0.0 {
        out.push("cost coefficients must be nonnegative".into());
    }
    if out.is_empty() {
        let window = (task.departure_slot - task.arrival_slot) as f64 * grid.slot_hours;
        let need = (task.required_energy - task.initial_energy) / (task.power_max * task.eff_charge);
        if need > window * (1.0 + REL) {
            out.push(format!("required energy unreachable: needs {need:.3} h, window is {window:.3} h"));
        } else if let Err(e) = crate::ev::casap_profile(task, grid) {
            out.push(e.to_string());
        }
    }
    out
}

/// Lists every violated invariant, naming the offending entity.
pub fn validate_scenario(s: &Scenario) -> ValidationReport {
    let mut r = ValidationReport::default();
    let t = s.time.horizon_slots;
    if t == 0 {
        r.push(ViolationKind::Invariant, "time", "horizon_slots must be at least 1");
    }
    if !(s.time.slot_hours > 0.0) {
        r.push(ViolationKind::Invariant, "time", "slot_hours must be positive");
    }

    let net = &s.network;
    let mut bus_ids = BTreeSet::new();
    for b in &net.buses {
        let ent = format!("bus {}", b.bus_id);
        if !bus_ids.insert(b.bus_id) {
            r.push(ViolationKind::Invariant, &ent, "duplicate bus id");
        }
        if !(b.v_bounds.0 < b.v_bounds.1) || b.v_bounds.0 <= 0.0 {
            r.push(ViolationKind::Invariant, &ent, "voltage bounds must satisfy 0 < v_min < v_max");
        }
        if b.p_bounds.0 > b.p_bounds.1 || b.q_bounds.0 > b.q_bounds.1 {
            r.push(ViolationKind::Invariant, &ent, "power bounds are inverted");
        }
        check_profile(&mut r, &ent, "base_load_p", &b.base_load_p, t, false);
        check_profile(&mut r, &ent, "base_load_q", &b.base_load_q, t, false);
    }
    for l in &net.lines {
        if l.resistance < 0.0 || l.reactance < 0.0 || !(l.current_sq_max > 0.0) {
            r.push(
                ViolationKind::Invariant,
                format!("line {}-{}", l.from_bus, l.to_bus),
                "impedance must be nonnegative and current limit positive",
            );
        }
    }
    let ids: Vec<u32> = bus_ids.iter().copied().collect();
    if let Some(reason) = radiality_problem(&ids, &net.lines, net.slack_bus_id) {
        r.push(ViolationKind::NotRadial, "network", reason);
    }
    if !(net.s_base > 0.0) || !(net.v_base > 0.0) {
        r.push(ViolationKind::Invariant, "network", "s_base and v_base must be positive");
    }

    let mut station_ids = BTreeSet::new();
    for st in &s.stations {
        let ent = format!("station {}", st.station_id);
        if !station_ids.insert(st.station_id) {
            r.push(ViolationKind::Invariant, &ent, "duplicate station id");
        }
        if !bus_ids.contains(&st.bus_id) {
            r.push(ViolationKind::Invariant, &ent, format!("bus {} does not exist", st.bus_id));
        }
        check_profile(&mut r, &ent, "pv_profile", &st.pv_profile, t, true);
        for (v, task) in st.fleet.iter().enumerate() {
            for reason in ev_task_problems(task, &s.time) {
                r.push(ViolationKind::Invariant, format!("station {} ev {v}", st.station_id), reason);
            }
        }
    }

    let mut owner: BTreeMap<u32, u32> = BTreeMap::new();
    let mut storage_ids = BTreeSet::new();
    for b in &s.storages {
        let ent = format!("storage {}", b.storage_id);
        if !storage_ids.insert(b.storage_id) {
            r.push(ViolationKind::Invariant, &ent, "duplicate storage id");
        }
        if !bus_ids.contains(&b.bus_id) {
            r.push(ViolationKind::Invariant, &ent, format!("bus {} does not exist", b.bus_id));
        }
        if b.connected_stations.is_empty() {
            r.push(ViolationKind::Invariant, &ent, "connected_stations is empty");
        }
        for id in &b.connected_stations {
            if !station_ids.contains(id) {
                r.push(ViolationKind::Invariant, &ent, format!("connected station {id} does not exist"));
            }
            if let Some(prev) = owner.insert(*id, b.storage_id) {
                r.push(
                    ViolationKind::Invariant,
                    format!("station {id}"),
                    format!("connected to storages {prev} and {}", b.storage_id),
                );
            }
        }
        let ok = 0.0 <= b.energy_min
            && b.energy_min <= b.initial_energy
            && b.initial_energy <= b.energy_max
            && b.energy_max <= b.capacity;
        if !ok {
            r.push(ViolationKind::Invariant, &ent, "require 0 <= E_min <= E_init <= E_max <= capacity");
        }
        if !(b.power_charge_max > 0.0 && b.power_discharge_max > 0.0) {
            r.push(ViolationKind::Invariant, &ent, "power limits must be positive");
        }
        if !(b.eff_charge > 0.0 && b.eff_charge <= 1.0 && b.eff_discharge > 0.0 && b.eff_discharge <= 1.0) {
            r.push(ViolationKind::Invariant, &ent, "efficiencies outside (0, 1]");
        }
        if b.degradation_coeff < 0.0 {
            r.push(ViolationKind::Invariant, &ent, "degradation coefficient must be nonnegative");
        }
    }

    let tar = &s.tariff;
    check_profile(&mut r, "tariff", "buy_price", &tar.buy_price, t, false);
    check_profile(&mut r, "tariff", "sell_price", &tar.sell_price, t, false);
    for (k, (b, sl)) in tar.buy_price.iter().zip(&tar.sell_price).enumerate() {
        if !(sl < b) {
            r.push(ViolationKind::Arbitrage, format!("tariff slot {k}"), format!("sell {sl} is not below buy {b}"));
        }
    }
    r
}

fn seed_for(pattern: DemandPattern, seed: u64) -> u64 {
    let tag = match pattern {
        DemandPattern::Residential => 0x5245_5349,
        DemandPattern::Workplace => 0x574f_524b,
        DemandPattern::Leisure => 0x4c45_4953,
    };
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ tag
}

/// Draws a fleet for a 24-hour horizon of hourly slots.
///
/// Arrival windows by pattern: residential vehicles plug in over night
/// (either left connected since midnight or arriving in the evening),
/// workplace vehicles arrive in the morning and leave in the late afternoon,
/// leisure vehicles make short day-time visits. Every task keeps at least one
/// slack slot beyond its CASAP duration so its requirement is reachable.
pub fn synthesize_fleet(count: usize, pattern: DemandPattern, seed: u64) -> Vec<EvTask> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed_for(pattern, seed));
    let p_max = 6.6;
    let eta = 0.95;
    (0..count)
        .map(|_| {
            let (arr, dep) = match pattern {
                DemandPattern::Residential => {
                    if rng.gen_bool(0.35) {
                        (0, rng.gen_range(6..=8))
                    } else {
                        let a = rng.gen_range(17..=21);
                        (a, (a + rng.gen_range(3..=6)).min(24))
                    }
                }
                DemandPattern::Workplace => {
                    let a = rng.gen_range(7..=9);
                    (a, a + rng.gen_range(7..=9))
                }
                DemandPattern::Leisure => {
                    let a = rng.gen_range(10..=18);
                    (a, (a + rng.gen_range(2..=4)).min(24))
                }
            };
            let e_ini = (rng.gen_range(8.0..26.0_f64) * 10.0).round() / 10.0;
            let window = (dep - arr) as f64;
            // one slot of slack beyond the fastest possible charge
            let reachable = p_max * eta * (window - 1.0).max(0.5);
            let want = rng.gen_range(10.0..28.0_f64);
            let e_cha = (want.min(reachable) * 10.0).floor() / 10.0;
            let e_req = (e_ini + e_cha).min(0.9 * EV_BATTERY_KWH);
            EvTask {
                arrival_slot: arr,
                departure_slot: dep,
                initial_energy: e_ini,
                required_energy: e_req,
                energy_min: 0.0,
                energy_max: EV_BATTERY_KWH,
                power_max: p_max,
                eff_charge: eta,
                eff_discharge: eta,
                inconvenience_coeff: 1e-4,
                depreciation_coeff: 0.01,
            }
        })
        .collect()
}
