//! Bundled test data: the IEEE 33-bus feeder, a day of load shape and
//! tariff, station PV profiles, and builders for the reference cluster
//! (four charging stations sharing one storage) and its replicas.

use crate::scenario::{
    synthesize_fleet, BusSpec, DemandPattern, LineSpec, NetworkSpec, Scenario, StationSpec, StorageSpec, Tariff,
    TimeGrid, SCHEMA_VERSION,
};

/// `(from, to, r Ω, x Ω)` of the 33-bus feeder (Baran & Wu).
pub const IEEE33_LINES: [(u32, u32, f64, f64); 32] = [
    (1, 2, 0.0922, 0.0470),
    (2, 3, 0.4930, 0.2511),
    (3, 4, 0.3660, 0.1864),
    (4, 5, 0.3811, 0.1941),
    (5, 6, 0.8190, 0.7070),
    (6, 7, 0.1872, 0.6188),
    (7, 8, 0.7114, 0.2351),
    (8, 9, 1.0300, 0.7400),
    (9, 10, 1.0440, 0.7400),
    (10, 11, 0.1966, 0.0650),
    (11, 12, 0.3744, 0.1238),
    (12, 13, 1.4680, 1.1550),
    (13, 14, 0.5416, 0.7129),
    (14, 15, 0.5910, 0.5260),
    (15, 16, 0.7463, 0.5450),
    (16, 17, 1.2890, 1.7210),
    (17, 18, 0.7320, 0.5740),
    (2, 19, 0.1640, 0.1565),
    (19, 20, 1.5042, 1.3554),
    (20, 21, 0.4095, 0.4784),
    (21, 22, 0.7089, 0.9373),
    (3, 23, 0.4512, 0.3083),
    (23, 24, 0.8980, 0.7091),
    (24, 25, 0.8960, 0.7011),
    (6, 26, 0.2030, 0.1034),
    (26, 27, 0.2842, 0.1447),
    (27, 28, 1.0590, 0.9337),
    (28, 29, 0.8042, 0.7006),
    (29, 30, 0.5075, 0.2585),
    (30, 31, 0.9744, 0.9630),
    (31, 32, 0.3105, 0.3619),
    (32, 33, 0.3410, 0.5302),
];

/// Nominal `(P kW, Q kvar)` per bus, bus 1 first.
pub const IEEE33_LOADS: [(f64, f64); 33] = [
    (0.0, 0.0),
    (100.0, 60.0),
    (90.0, 40.0),
    (120.0, 80.0),
    (60.0, 30.0),
    (60.0, 20.0),
    (200.0, 100.0),
    (200.0, 100.0),
    (60.0, 20.0),
    (60.0, 20.0),
    (45.0, 30.0),
    (60.0, 35.0),
    (60.0, 35.0),
    (120.0, 80.0),
    (60.0, 10.0),
    (60.0, 20.0),
    (60.0, 20.0),
    (90.0, 40.0),
    (90.0, 40.0),
    (90.0, 40.0),
    (90.0, 40.0),
    (90.0, 40.0),
    (90.0, 50.0),
    (420.0, 200.0),
    (420.0, 200.0),
    (60.0, 25.0),
    (60.0, 25.0),
    (60.0, 20.0),
    (120.0, 70.0),
    (200.0, 600.0),
    (150.0, 70.0),
    (210.0, 100.0),
    (60.0, 40.0),
];

pub const IEEE33_KV: f64 = 12.66;

/// Fraction of nominal load per hour.
pub const LOAD_SHAPE: [f64; 24] = [
    0.36, 0.33, 0.31, 0.30, 0.31, 0.35, 0.42, 0.48, 0.52, 0.54, 0.55, 0.55, 0.54, 0.53, 0.53, 0.54, 0.56, 0.59,
    0.60, 0.59, 0.56, 0.50, 0.44, 0.39,
];

/// Utility energy price, $/kWh, shaped after a day-ahead LMP curve.
pub const BUY_PRICE: [f64; 24] = [
    0.028, 0.026, 0.025, 0.024, 0.025, 0.028, 0.034, 0.042, 0.046, 0.045, 0.043, 0.042, 0.041, 0.040, 0.041, 0.044,
    0.050, 0.062, 0.071, 0.065, 0.055, 0.045, 0.036, 0.031,
];

/// Feed-in price paid by the utility, $/kWh.
pub const SELL_PRICE: f64 = 0.01;

/// Squared-voltage limits, p.u.² (0.94–1.06 in magnitude).
pub const V_SQ_BOUNDS: (f64, f64) = (0.8836, 1.1236);

/// Squared-current limit of every line, p.u.².
pub const LINE_CURRENT_SQ_MAX: f64 = 16.0;

/// Bus injection limits where a station or storage connects, kW.
pub const BUS_P_BOUNDS: (f64, f64) = (-2000.0, 2000.0);

/// Bus groups of four adjacent buses, one per replicated cluster.
pub const CLUSTER_BUSES: [[u32; 4]; 6] =
    [[26, 27, 28, 29], [19, 20, 21, 22], [3, 23, 24, 25], [30, 31, 32, 33], [4, 5, 6, 7], [8, 9, 10, 11]];

/// Shape and size of the reference cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterConfig {
    /// `(fleet size, pattern, PV peak kW)` per station.
    pub stations: [(usize, DemandPattern, f64); 4],
    /// Index (0..4) of the station whose bus hosts the storage.
    pub storage_at: usize,
    pub storage_capacity: f64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            stations: [
                (20, DemandPattern::Residential, 120.0),
                (16, DemandPattern::Workplace, 200.0),
                (20, DemandPattern::Leisure, 160.0),
                (18, DemandPattern::Residential, 80.0),
            ],
            storage_at: 1,
            storage_capacity: 650.0,
        }
    }
}

/// Solar output per hour for a given peak, zero outside 06:00–18:00.
pub fn pv_profile(peak_kw: f64, slots: usize) -> Vec<f64> {
    (0..slots)
        .map(|t| {
            let h = (t % 24) as f64 + 0.5;
            if (6.0..18.0).contains(&h) {
                let v = peak_kw * (std::f64::consts::PI * (h - 6.0) / 12.0).sin();
                (v * 1e3).round() / 1e3
            } else {
                0.0
            }
        })
        .collect()
}

/// The 33-bus feeder with nominal loads scaled by `shape`.
pub fn ieee33_network(shape: &[f64]) -> NetworkSpec {
    let z_base = IEEE33_KV * IEEE33_KV / 1.0;
    let buses = IEEE33_LOADS
        .iter()
        .enumerate()
        .map(|(j, &(p, q))| BusSpec {
            bus_id: j as u32 + 1,
            p_bounds: BUS_P_BOUNDS,
            q_bounds: (-BUS_P_BOUNDS.1, BUS_P_BOUNDS.1),
            v_bounds: V_SQ_BOUNDS,
            base_load_p: shape.iter().map(|f| round6(p * f)).collect(),
            base_load_q: shape.iter().map(|f| round6(q * f)).collect(),
        })
        .collect();
    let lines = IEEE33_LINES
        .iter()
        .map(|&(f, t, r, x)| LineSpec {
            from_bus: f,
            to_bus: t,
            resistance: round9(r / z_base),
            reactance: round9(x / z_base),
            current_sq_max: LINE_CURRENT_SQ_MAX,
        })
        .collect();
    NetworkSpec { buses, lines, slack_bus_id: 1, s_base: 1000.0, v_base: IEEE33_KV }
}

fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

fn round9(x: f64) -> f64 {
    (x * 1e9).round() / 1e9
}

/// Stations and storage of one cluster placed on `buses`.
fn cluster(cfg: &ClusterConfig, buses: [u32; 4], group: usize, seed: u64, slots: usize) -> (Vec<StationSpec>, StorageSpec) {
    let first_id = group as u32 * 4 + 1;
    let stations: Vec<StationSpec> = cfg
        .stations
        .iter()
        .enumerate()
        .map(|(k, &(count, pattern, pv_peak))| {
            let station_id = first_id + k as u32;
            let fleet_seed = seed.wrapping_mul(1_000_003).wrapping_add(u64::from(station_id));
            StationSpec {
                station_id,
                bus_id: buses[k],
                pv_profile: pv_profile(pv_peak, slots),
                fleet: synthesize_fleet(count, pattern, fleet_seed),
                pattern: Some(pattern),
            }
        })
        .collect();
    let storage = StorageSpec::sized(
        group as u32 + 1,
        buses[cfg.storage_at],
        stations.iter().map(|s| s.station_id).collect(),
        cfg.storage_capacity,
    );
    (stations, storage)
}

/// The reference day: 33-bus feeder, one cluster at buses 26–29. Seed 0 is
/// the bundled instance; other seeds redraw the fleets.
pub fn reference_scenario(seed: u64) -> Scenario {
    clustered_scenario(&ClusterConfig::default(), 1, seed)
}

/// `groups` copies of the cluster on distinct bus groups.
///
/// # Panics
/// If `groups` exceeds the number of bus groups in [`CLUSTER_BUSES`].
pub fn clustered_scenario(cfg: &ClusterConfig, groups: usize, seed: u64) -> Scenario {
    assert!(groups <= CLUSTER_BUSES.len(), "at most {} clusters fit the feeder", CLUSTER_BUSES.len());
    let slots = LOAD_SHAPE.len();
    let mut stations = Vec::new();
    let mut storages = Vec::new();
    for (g, buses) in CLUSTER_BUSES.iter().take(groups).enumerate() {
        let (st, sto) = cluster(cfg, *buses, g, seed, slots);
        stations.extend(st);
        storages.push(sto);
    }
    Scenario {
        schema: SCHEMA_VERSION,
        time: TimeGrid::hourly(slots),
        network: ieee33_network(&LOAD_SHAPE),
        stations,
        storages,
        tariff: Tariff { buy_price: BUY_PRICE.to_vec(), sell_price: vec![SELL_PRICE; slots] },
        cyclic_storage: true,
    }
}

pub const BUNDLED_JSON: &str = include_str!("../data/ieee33_4cs_1ses.json");

/// The bundled 33-bus, 4-station, 1-storage day.
pub fn bundled_scenario() -> Scenario {
    Scenario::from_json(BUNDLED_JSON).expect("bundled scenario is valid")
}

/// Two clusters (8 stations, 2 storages) at buses 26–29 and 19–22.
pub const BUNDLED_TWO_CLUSTER_JSON: &str = include_str!("../data/ieee33_8cs_2ses.json");

/// Every bundled scenario with its file stem.
pub fn bundled_scenarios() -> Vec<(&'static str, Scenario)> {
    [("ieee33_4cs_1ses", BUNDLED_JSON), ("ieee33_8cs_2ses", BUNDLED_TWO_CLUSTER_JSON)]
        .into_iter()
        .map(|(name, text)| (name, Scenario::from_json(text).expect("bundled scenario is valid")))
        .collect()
}
