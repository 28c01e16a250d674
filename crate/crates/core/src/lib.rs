//! Coordination of EV charging stations that share energy storage inside a
//! radial distribution network.
//!
//! Three kinds of agents trade energy: charging-station operators, shared
//! storage operators and the distribution network operator. The crate builds
//! each agent's convex program, solves the joint social-cost problem to get
//! equilibrium prices, and runs a prediction–correction coordination loop
//! that reaches the same prices with only local solves.

pub mod coordinator;
pub mod data;
pub mod ev;
pub mod experiments;
pub mod kernel;
pub mod network;
pub mod oracle;
pub mod report;
pub mod scenario;
pub mod storage;

pub use coordinator::{
    run_coordination, CoordinationError, CoordinationOutcome, CoordinationParams, DualVariant, IterationTrace,
};
pub use experiments::{run_benchmark, BenchmarkVariant, ExperimentError, ExperimentResult, VariantKind};
pub use kernel::{ConicSolution, ConvexProgram, LinExpr, SolveStatus};
pub use network::FlowState;
pub use oracle::{solve_centralized, Allocation, CentralSolution, OracleError, PriceSystem, ProfitAllocation};
pub use scenario::{load_scenario, save_scenario, Scenario, ScenarioError};
