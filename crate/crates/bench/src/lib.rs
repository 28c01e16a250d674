//! Shared fixtures for the criterion benchmarks.

use chargeshare_core::data::{bundled_scenario, clustered_scenario, ClusterConfig};
use chargeshare_core::Scenario;

/// The single-cluster day used by most benches.
pub fn small() -> Scenario {
    bundled_scenario()
}

/// `groups` default clusters on the 33-bus feeder.
pub fn clustered(groups: usize) -> Scenario {
    clustered_scenario(&ClusterConfig::default(), groups, 0)
}
