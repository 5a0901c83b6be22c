//! Deterministic discrete-event simulation of the two-way relay network.
//!
//! [`run`] executes one configuration; [`ts_baseline`] runs the same
//! configuration under traditional scheduling (the two end nodes alternate
//! uplink slots instead of superposing). Identical `(config, seed)` pairs
//! produce identical metrics and traces.

mod clock;
mod config;
mod engine;
mod metrics;

pub use clock::{ClockError, HardwareClock};
pub use config::{
    ArqConfig, CaptureConfig, ChannelConfig, ClockConfig, Fidelity, LatencyConfig, PerCurve,
    SimConfig, SimError, TrafficConfig, TrafficMode,
};
pub use engine::{app_payload, parse_app_payload, run, ts_baseline, Engine};
pub use metrics::{
    median_ps, ArqStats, Cdf, CostStats, DirectionStats, MetricsReport, NodeTimingStats,
    RelayStats, SyncSample, SyncStats,
};
