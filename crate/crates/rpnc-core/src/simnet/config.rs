//! Simulation configuration: the full key/value tree accepted from TOML.

use crate::baseband::OfdmParams;
use crate::time::{secs_to_ps, PS_PER_MS};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("config: {0}")]
    Config(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fidelity {
    /// Timing from exact clock arithmetic; packet outcomes from erasure
    /// models. Fast; used for throughput, ARQ, and latency work.
    PacketLevel,
    /// Materialize baseband windows and run the real detectors and channel
    /// estimators per slot. Used for synchronization-accuracy work.
    SampleLevel,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct ClockConfig {
    /// End node A oscillator error, parts per billion.
    pub drift_ppb_a: i64,
    pub drift_ppb_b: i64,
    pub drift_ppb_relay: i64,
    /// Hardware start-up instants, seconds on each node's own clock.
    pub t0_a_s: f64,
    pub t0_b_s: f64,
    pub t0_relay_s: f64,
}

impl Default for ClockConfig {
    fn default() -> Self {
        // TCXO-class parts, worst case opposing signs; the relay is the
        // network reference so its error is irrelevant and set to zero.
        ClockConfig {
            drift_ppb_a: 2_000,
            drift_ppb_b: -2_000,
            drift_ppb_relay: 0,
            t0_a_s: 0.25,
            t0_b_s: 0.40,
            t0_relay_s: 1.00,
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct LatencyConfig {
    /// Hardware-to-host path delay bounds, milliseconds (uniform).
    pub delta_min_ms: f64,
    pub delta_max_ms: f64,
    /// Host-to-hardware path delay bounds, milliseconds (uniform).
    pub phi_min_ms: f64,
    pub phi_max_ms: f64,
    /// Host encode latency per packet, milliseconds.
    pub encode_ms: f64,
    /// Decode completes this fraction of a slot after the packet's slot
    /// ends.
    pub decode_frac: f64,
}

impl Default for LatencyConfig {
    fn default() -> Self {
        LatencyConfig {
            delta_min_ms: 0.5,
            delta_max_ms: 4.0,
            phi_min_ms: 0.5,
            phi_max_ms: 4.0,
            encode_ms: 1.0,
            decode_frac: 0.6,
        }
    }
}

/// Packet error rate as a function of SNR.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerCurve {
    /// SNR-independent rate, for controlled experiments.
    Fixed { per: f64 },
    /// Logistic fit: per = 1 / (1 + exp(slope * (snr_db - mid_db))).
    Logistic { mid_db: f64, slope: f64 },
}

impl PerCurve {
    pub fn at(&self, snr_db: f64) -> f64 {
        match *self {
            PerCurve::Fixed { per } => per.clamp(0.0, 1.0),
            PerCurve::Logistic { mid_db, slope } => {
                1.0 / (1.0 + (slope * (snr_db - mid_db)).exp())
            }
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct ChannelConfig {
    pub uplink_snr_db: f64,
    pub downlink_snr_db: f64,
    /// Single-user uplink decode failure.
    pub per_single: PerCurve,
    /// XOR decode failure; worse than single-user at the same SNR.
    pub per_xor: PerCurve,
    /// Downlink decode failure per receiving node.
    pub per_downlink: PerCurve,
    /// One-way propagation delay, picoseconds (equal for both end nodes).
    pub propagation_ps: i64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        ChannelConfig {
            uplink_snr_db: 14.0,
            downlink_snr_db: 14.0,
            per_single: PerCurve::Logistic { mid_db: 6.0, slope: 1.2 },
            per_xor: PerCurve::Logistic { mid_db: 8.0, slope: 1.2 },
            per_downlink: PerCurve::Logistic { mid_db: 6.0, slope: 1.2 },
            propagation_ps: 0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrafficMode {
    /// Keep both senders' queues full.
    Saturated,
    /// Transfer a fixed number of payloads each way and verify every byte
    /// end to end.
    ReliableStream { payloads_per_direction: u64 },
    /// Sequential application-level echos from A, answered by B.
    Echo { count: u64 },
    /// Offered load in packets per second per direction.
    Rate { packets_per_s: f64 },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct TrafficConfig {
    pub mode: TrafficMode,
    /// Application payload bytes per packet.
    pub payload_size: usize,
}

impl Default for TrafficConfig {
    fn default() -> Self {
        TrafficConfig { mode: TrafficMode::Saturated, payload_size: 1516 }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct ArqConfig {
    pub enabled: bool,
    pub alpha: f64,
    pub beta: f64,
    /// Window before the first RTT sample.
    pub initial_window: usize,
    /// Slots a pending acknowledgement may wait for a data ride before a
    /// pure-ACK packet is generated.
    pub ack_delay_slots: u32,
    /// Initial RTT seed in slots (the minimum end-to-end loop).
    pub initial_rtt_slots: u32,
}

impl Default for ArqConfig {
    fn default() -> Self {
        ArqConfig {
            enabled: true,
            alpha: 0.125,
            beta: 0.25,
            initial_window: 8,
            ack_delay_slots: 1,
            initial_rtt_slots: 4,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct CaptureConfig {
    pub mac_trace: bool,
    pub arq_trace: bool,
    pub schedule_trace: bool,
    /// Keep the per-slot arrival-difference series (sample level).
    pub sync_series: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub seed: u64,
    pub fidelity: Fidelity,
    /// Run length in relay slots.
    pub slots: u64,
    /// Slot duration T_s, milliseconds.
    pub slot_ms: f64,
    /// Realignment window W, slots.
    pub window: u32,
    /// Downlink slots between consecutive reference packets when idle
    /// (0 = a reference in every slot).
    pub tx_gap: u64,
    /// Fixed data section size D, bytes.
    pub data_section: usize,
    pub realign_enabled: bool,
    /// Traditional scheduling baseline: A and B alternate uplink slots.
    pub ts_scheduling: bool,
    /// When false the relay measures uplink slots but forwards nothing,
    /// leaving the downlink to the beacon policy (sync experiments).
    pub relay_forwarding: bool,
    pub ofdm: OfdmParams,
    pub preamble_seed: u64,
    pub clocks: ClockConfig,
    pub latency: LatencyConfig,
    pub channel: ChannelConfig,
    pub traffic: TrafficConfig,
    pub arq: ArqConfig,
    pub capture: CaptureConfig,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            seed: 1,
            fidelity: Fidelity::PacketLevel,
            slots: 10_000,
            slot_ms: 10.0,
            window: 10,
            tx_gap: 0,
            data_section: crate::linkcodec::DEFAULT_DATA_SECTION,
            realign_enabled: true,
            ts_scheduling: false,
            relay_forwarding: true,
            ofdm: OfdmParams::default(),
            preamble_seed: 0xD0_5E_ED,
            clocks: ClockConfig::default(),
            latency: LatencyConfig::default(),
            channel: ChannelConfig::default(),
            traffic: TrafficConfig::default(),
            arq: ArqConfig::default(),
            capture: CaptureConfig::default(),
        }
    }
}

impl SimConfig {
    pub fn slot_duration_ps(&self) -> i64 {
        (self.slot_ms * PS_PER_MS as f64).round() as i64
    }

    pub fn validate(&self) -> Result<(), SimError> {
        self.ofdm.validate().map_err(|e| SimError::Config(e.to_string()))?;
        if self.slots == 0 {
            return Err(SimError::Config("slots must be positive".into()));
        }
        if self.slot_ms <= 0.0 {
            return Err(SimError::Config("slot_ms must be positive".into()));
        }
        if self.window == 0 {
            return Err(SimError::Config("window must be at least 1".into()));
        }
        if self.data_section < self.traffic.payload_size {
            return Err(SimError::Config(format!(
                "payload_size {} exceeds data section {}",
                self.traffic.payload_size, self.data_section
            )));
        }
        if self.data_section > crate::linkcodec::MAX_DATA_LEN {
            return Err(SimError::Config("data section exceeds the 11-bit length field".into()));
        }
        let lat = &self.latency;
        if lat.delta_min_ms < 0.0
            || lat.delta_min_ms > lat.delta_max_ms
            || lat.phi_min_ms < 0.0
            || lat.phi_min_ms > lat.phi_max_ms
        {
            return Err(SimError::Config("latency bounds are inverted".into()));
        }
        if (lat.delta_max_ms + lat.phi_max_ms) * PS_PER_MS as f64 >= self.slot_duration_ps() as f64
        {
            return Err(SimError::Config(
                "delta + phi must stay below the slot duration for one-slot-ahead operation"
                    .into(),
            ));
        }
        if !(0.0..1.0).contains(&lat.decode_frac) {
            return Err(SimError::Config("decode_frac must be in [0, 1)".into()));
        }
        if self.arq.alpha <= 0.0 || self.arq.alpha >= 1.0 || self.arq.beta <= 0.0 || self.arq.beta >= 1.0 {
            return Err(SimError::Config("alpha and beta must be in (0, 1)".into()));
        }
        let sp = crate::time::sample_period_ps(self.ofdm.bandwidth_hz)
            .ok_or_else(|| SimError::Config("bandwidth must divide 10^12 ps".into()))?;
        if self.slot_duration_ps() % sp != 0 {
            return Err(SimError::Config("slot duration must be a whole number of samples".into()));
        }
        Ok(())
    }

    pub fn samples_per_slot(&self) -> i64 {
        self.slot_duration_ps() / crate::time::sample_period_ps(self.ofdm.bandwidth_hz).unwrap()
    }

    pub fn t0_ps(&self, which: crate::linkcodec::EndNodeId) -> i64 {
        match which {
            crate::linkcodec::EndNodeId::A => secs_to_ps(self.clocks.t0_a_s),
            crate::linkcodec::EndNodeId::B => secs_to_ps(self.clocks.t0_b_s),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        SimConfig::default().validate().unwrap();
    }

    #[test]
    fn toml_round_trip() {
        let cfg = SimConfig::default();
        let text = toml::to_string_pretty(&cfg).unwrap();
        let back: SimConfig = toml::from_str(&text).unwrap();
        assert_eq!(back.slots, cfg.slots);
        assert_eq!(back.clocks.drift_ppb_a, cfg.clocks.drift_ppb_a);
        // Partial configs pick up defaults.
        let partial: SimConfig = toml::from_str("seed = 9\nslots = 50").unwrap();
        assert_eq!(partial.seed, 9);
        assert_eq!(partial.slots, 50);
        assert_eq!(partial.window, 10);
    }

    #[test]
    fn validation_failures() {
        let mut c = SimConfig::default();
        c.latency.delta_max_ms = 8.0;
        c.latency.phi_max_ms = 8.0;
        assert!(c.validate().is_err());
        let mut c = SimConfig::default();
        c.traffic.payload_size = 4000;
        assert!(c.validate().is_err());
        let mut c = SimConfig::default();
        c.window = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn per_curves() {
        let fixed = PerCurve::Fixed { per: 0.2 };
        assert_eq!(fixed.at(0.0), 0.2);
        assert_eq!(fixed.at(18.0), 0.2);
        let log = PerCurve::Logistic { mid_db: 6.0, slope: 1.2 };
        assert!(log.at(0.0) > 0.9);
        assert!(log.at(18.0) < 1e-4);
        // Non-increasing in SNR.
        let mut prev = 1.0;
        for snr in [0.0, 2.0, 4.0, 6.0, 8.0, 12.0, 18.0] {
            let p = log.at(snr);
            assert!(p <= prev);
            prev = p;
        }
    }
}
