//! Two-way relay network stack built around physical-layer network coding.
//!
//! Two end nodes exchange packets through a relay that decodes the XOR of
//! simultaneously transmitted uplink packets and broadcasts it downlink.
//! Everything needed to make that work on a jittery host platform is here:
//!
//! - [`baseband`]: preamble generation, frame-synchronization correlators
//!   with operation-count instrumentation, channel estimation, and the
//!   phase-slope arrival-offset estimator.
//! - [`slot_timing`]: sample-counting arrival timestamps, slot-boundary
//!   initialization and windowed realignment, one-slot-ahead transmission
//!   scheduling, and sync-loss detection.
//! - [`linkcodec`]: the fixed-layout link packet, IEEE 802.11 CRC-32, the
//!   XOR-packet CRC check used by the relay, and downlink classification.
//! - [`arq`]: end-to-end selective-repeat ARQ with SACK, RTT estimation and
//!   timeout/window sizing; the relay is oblivious to it.
//! - [`mac`]: time-slotted FDD MAC state machines for end nodes and relay.
//! - [`simnet`]: a deterministic discrete-event engine with per-node drifting
//!   hardware clocks, host-latency jitter, sample- or packet-level channels,
//!   and a traditional-scheduling baseline.
//! - [`experiments`]: the measurement suite exposed by the `rpnc` binary.

pub mod arq;
pub mod baseband;
pub mod experiments;
pub mod linkcodec;
pub mod mac;
pub mod simnet;
pub mod slot_timing;
pub mod time;
