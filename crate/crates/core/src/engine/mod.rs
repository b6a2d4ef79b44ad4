//! Scenario-driven cycle loop tying the protocol, power and FT models
//! together.
//!
//! Within a cycle the order is fixed: scenario events, protocol step, power
//! transitions, FT execution, energy accounting, trace.

mod metrics;
mod scenario;
mod sim;
mod sweep;

pub use metrics::{AppMetrics, Metrics, ReplicaMetrics, UtilSample, Utilization};
pub use scenario::{
    load_scenario, parse_scenario, InvadeAction, LoopSource, Scenario, ScenarioError,
    ScenarioEvent, StrategyKind,
};
pub use sim::{run, run_text, RunOptions, RunOutput};
pub use sweep::{
    apply_overrides, parse_value, point_seed, set_path, sweep, to_csv, Axis, SweepError,
    SweepOptions, SweepRow, METRIC_COLUMNS,
};

#[cfg(test)]
mod tests;
