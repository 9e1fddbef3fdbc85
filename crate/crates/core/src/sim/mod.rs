//! Discrete-time mesoscopic engine.
//!
//! Each step runs, in order: spawning, ground-truth event activation,
//! sensing and twin ingest, event detection, cloud planning, vehicle
//! movement, then counters and journals.

mod engine;
mod metrics;
mod scenario;

pub use engine::{
    record_encounter, resolve_events, run, run_with, shortest_distance_route, Journals, RunOutput,
    StepView, Vehicle, VehicleClass, VehiclePlace, VehicleState,
};
pub use metrics::{ClassMetrics, MetricsSummary, METRICS_HEADER};
pub(crate) use metrics::fmt_opt;
pub use scenario::{
    EventKind, EventLocation, EventPlan, RandomEvents, RsuSpec, ScheduledEvent, SensingSpec,
    SimulationScenario, SpawnSpec, DEFAULT_GATHERING_DENSITY,
};
