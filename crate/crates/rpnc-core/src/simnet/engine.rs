//! The deterministic event loop.
//!
//! Three nodes (two end nodes, one relay) run on their own drifting hardware
//! clocks. All physical instants are integer picoseconds of global simulated
//! time; everything a node believes about time goes through its clock's
//! sample counting. Events are processed in (time, insertion) order, so a
//! `(config, seed)` pair fully determines every trace byte.

use super::clock::HardwareClock;
use super::config::{Fidelity, SimConfig, SimError, TrafficMode};
use super::metrics::{MetricsReport, SyncSample};
use crate::arq::{RecvBuffer, RttEstimator, SendWindow};
use crate::baseband::{
    estimate_csi, phase_slope_offset, sync_narrow, sync_standard, CorrelatorCost, Cpx,
    FramePreamble, PreambleRole, SampleStream,
};
use crate::linkcodec::{EndNodeId, LinkHeader, SackBlock};
use crate::mac::{
    DownlinkOutcome, EndNodeMac, EndNodeMacConfig, OutgoingPacket, RelayMac, RelayMacConfig,
    RxState, TxPlan,
};
use crate::time::{HwInstant, SimInstant, PS_PER_MS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap, HashSet};

#[derive(Clone, Debug, PartialEq, Eq)]
enum EventKind {
    EndSlotDetect { node: EndNodeId, slot: i64 },
    RelaySlotDetect { slot: i64 },
    UplinkDecode { relay_slot: i64 },
    DownlinkDecode { node: EndNodeId, image: Vec<u8>, arrival: SimInstant },
    AppOffer { node: EndNodeId },
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct Event {
    time: i64,
    seq: u64,
    kind: EventKind,
}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.time, self.seq).cmp(&(other.time, other.seq))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// Link-layer endpoint state at one end node.
struct Llc {
    enabled: bool,
    window: SendWindow,
    recv: RecvBuffer,
    rtt: RttEstimator,
    got_sample: bool,
    initial_window: usize,
    feedback_dirty: bool,
    slots_ack_waited: u32,
    raw_next_seq: u8,
}

impl Llc {
    fn window_limit(&self, slot_ps: i64) -> usize {
        if self.got_sample {
            self.rtt.window_size(slot_ps)
        } else {
            self.initial_window
        }
    }
}

struct AppState {
    next_send_index: [u64; 2],
    stream_total: u64,
    echo_total: u64,
    echo_sent_at: HashMap<u64, i64>,
    echo_next: u64,
    rate_period_ps: Option<i64>,
    started: [bool; 2],
}

struct UplinkTx {
    node: EndNodeId,
    image: Vec<u8>,
    emit_global: SimInstant,
}

fn node_idx(id: EndNodeId) -> usize {
    match id {
        EndNodeId::A => 0,
        EndNodeId::B => 1,
    }
}

fn role_of(id: EndNodeId) -> PreambleRole {
    match id {
        EndNodeId::A => PreambleRole::EndNodeA,
        EndNodeId::B => PreambleRole::EndNodeB,
    }
}

pub struct Engine {
    cfg: SimConfig,
    ts: i64,
    sp: i64,
    samples_per_slot: i64,
    now: SimInstant,
    seq: u64,
    queue: BinaryHeap<Reverse<Event>>,
    clocks: [HardwareClock; 2],
    relay_clock: HardwareClock,
    macs: [EndNodeMac; 2],
    relay: RelayMac,
    llc: [Llc; 2],
    app: AppState,
    uplink_buckets: HashMap<i64, Vec<UplinkTx>>,
    uplink_decode_scheduled: HashSet<i64>,
    rng_jitter: [ChaCha8Rng; 3],
    rng_erasure: ChaCha8Rng,
    rng_noise: ChaCha8Rng,
    preambles: [FramePreamble; 3],
    pub metrics: MetricsReport,
    end_time: SimInstant,
    drain_until: Option<SimInstant>,
}

/// Run a configuration to completion and return its metrics.
pub fn run(cfg: &SimConfig) -> Result<MetricsReport, SimError> {
    let mut engine = Engine::new(cfg.clone())?;
    engine.run_loop();
    Ok(engine.metrics)
}

/// The traditional-scheduling baseline: same stack, but the two end nodes
/// are scheduled into alternating uplink slots and the relay never sees a
/// superposition.
pub fn ts_baseline(cfg: &SimConfig) -> Result<MetricsReport, SimError> {
    let mut ts_cfg = cfg.clone();
    ts_cfg.ts_scheduling = true;
    run(&ts_cfg)
}

impl Engine {
    pub fn new(cfg: SimConfig) -> Result<Self, SimError> {
        cfg.validate()?;
        let ts = cfg.slot_duration_ps();
        let sp = crate::time::sample_period_ps(cfg.ofdm.bandwidth_hz).unwrap();
        let quant_10ns = |ps: i64| (ps / crate::time::PS_PER_10NS) * crate::time::PS_PER_10NS;

        // Global epoch: every radio has been running since g = 0; start-up
        // times are what each node's clock reports for its first sample.
        let mk_clock = |t0_s: f64, ppb: i64| {
            HardwareClock::new(
                HwInstant(quant_10ns(crate::time::secs_to_ps(t0_s))),
                SimInstant(0),
                cfg.ofdm.bandwidth_hz,
                ppb,
            )
            .map_err(|e| SimError::Config(e.to_string()))
        };
        let clock_a = mk_clock(cfg.clocks.t0_a_s, cfg.clocks.drift_ppb_a)?;
        let clock_b = mk_clock(cfg.clocks.t0_b_s, cfg.clocks.drift_ppb_b)?;
        let relay_clock = mk_clock(cfg.clocks.t0_relay_s, cfg.clocks.drift_ppb_relay)?;

        let mac_cfg = |id| EndNodeMacConfig {
            id,
            slot_duration_ps: ts,
            sample_period_ps: sp,
            window: cfg.window,
            tx_gap: cfg.tx_gap,
            data_section: cfg.data_section,
            realign_enabled: cfg.realign_enabled,
            ts_parity: if cfg.ts_scheduling {
                Some(match id {
                    EndNodeId::A => 0,
                    EndNodeId::B => 1,
                })
            } else {
                None
            },
        };
        let llc = |_| Llc {
            enabled: cfg.arq.enabled,
            window: SendWindow::new(cfg.arq.initial_window),
            recv: RecvBuffer::new(),
            rtt: RttEstimator::new(
                cfg.arq.initial_rtt_slots as i64 * ts,
                cfg.arq.alpha,
                cfg.arq.beta,
            ),
            got_sample: false,
            initial_window: cfg.arq.initial_window,
            feedback_dirty: false,
            slots_ack_waited: 0,
            raw_next_seq: 0,
        };

        let preambles = [
            FramePreamble::generate(PreambleRole::EndNodeA, &cfg.ofdm, cfg.preamble_seed)
                .map_err(|e| SimError::Config(e.to_string()))?,
            FramePreamble::generate(PreambleRole::EndNodeB, &cfg.ofdm, cfg.preamble_seed)
                .map_err(|e| SimError::Config(e.to_string()))?,
            FramePreamble::generate(PreambleRole::Relay, &cfg.ofdm, cfg.preamble_seed)
                .map_err(|e| SimError::Config(e.to_string()))?,
        ];

        let seed = cfg.seed;
        let sub = |tag: u64| ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ tag);

        let app = AppState {
            next_send_index: [0, 0],
            stream_total: match cfg.traffic.mode {
                TrafficMode::ReliableStream { payloads_per_direction } => payloads_per_direction,
                _ => 0,
            },
            echo_total: match cfg.traffic.mode {
                TrafficMode::Echo { count } => count,
                _ => 0,
            },
            echo_sent_at: HashMap::new(),
            echo_next: 0,
            rate_period_ps: match cfg.traffic.mode {
                TrafficMode::Rate { packets_per_s } if packets_per_s > 0.0 => {
                    Some((1e12 / packets_per_s) as i64)
                }
                _ => None,
            },
            started: [false, false],
        };

        // Stop the relay's slot chain after cfg.slots slots; everything else
        // drains on the horizon.
        let end_time = relay_clock
            .global_of_sample((cfg.slots as i64 + 2) * (ts / sp))
            + 2 * ts;

        let mut engine = Engine {
            samples_per_slot: ts / sp,
            ts,
            sp,
            now: SimInstant(0),
            seq: 0,
            queue: BinaryHeap::new(),
            clocks: [clock_a, clock_b],
            relay_clock,
            macs: [
                EndNodeMac::new(mac_cfg(EndNodeId::A)),
                EndNodeMac::new(mac_cfg(EndNodeId::B)),
            ],
            relay: RelayMac::new(RelayMacConfig {
                tx_gap: cfg.tx_gap,
                data_section: cfg.data_section,
            }),
            llc: [llc(0), llc(1)],
            app,
            uplink_buckets: HashMap::new(),
            uplink_decode_scheduled: HashSet::new(),
            rng_jitter: [sub(0xA0), sub(0xB0), sub(0xC0)],
            rng_erasure: sub(0xE0),
            rng_noise: sub(0xF0),
            preambles,
            metrics: MetricsReport::default(),
            end_time,
            drain_until: None,
            cfg,
        };

        // Warm-up horizon for measured deliveries: past the startup
        // transient and the first realignment windows.
        let warmup_slots = (engine.cfg.slots / 10).clamp(8, 100) as i64;
        engine.metrics.warmup_end_ps =
            engine.relay_boundary_global(warmup_slots).0;

        // The relay's own receive path starts the whole network.
        let first = engine.relay_detect_time(1);
        engine.push(first, EventKind::RelaySlotDetect { slot: 1 });
        Ok(engine)
    }

    fn push(&mut self, time: SimInstant, kind: EventKind) {
        self.seq += 1;
        self.queue.push(Reverse(Event { time: time.0.max(self.now.0), seq: self.seq, kind }));
    }

    fn jitter_ms(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> i64 {
        let ms = if hi > lo { rng.gen_range(lo..hi) } else { lo };
        (ms * PS_PER_MS as f64) as i64
    }

    fn delta_jitter(&mut self, who: usize) -> i64 {
        Self::jitter_ms(
            &mut self.rng_jitter[who],
            self.cfg.latency.delta_min_ms,
            self.cfg.latency.delta_max_ms,
        )
    }

    fn phi_jitter(&mut self, who: usize) -> i64 {
        Self::jitter_ms(
            &mut self.rng_jitter[who],
            self.cfg.latency.phi_min_ms,
            self.cfg.latency.phi_max_ms,
        )
    }

    fn relay_boundary_global(&self, slot: i64) -> SimInstant {
        self.relay_clock.global_of_sample(slot * self.samples_per_slot)
    }

    fn relay_detect_time(&mut self, slot: i64) -> SimInstant {
        let b = self.relay_boundary_global(slot);
        b + self.delta_jitter(2)
    }

    fn node_boundary_global(&self, node: EndNodeId, slot: i64) -> SimInstant {
        let mac = &self.macs[node_idx(node)];
        let sched = mac.sched.as_ref().expect("synced");
        let clock = &self.clocks[node_idx(node)];
        let tick = (sched.boundary(slot) - clock.t0) / self.sp;
        clock.global_of_sample(tick)
    }

    pub fn run_loop(&mut self) {
        while let Some(Reverse(ev)) = self.queue.pop() {
            if ev.time > self.end_time.0 {
                break;
            }
            if let Some(drain) = self.drain_until {
                if ev.time > drain.0 {
                    break;
                }
            }
            self.now = SimInstant(ev.time);
            match ev.kind {
                EventKind::RelaySlotDetect { slot } => self.on_relay_slot(slot),
                EventKind::EndSlotDetect { node, slot } => self.on_end_slot(node, slot),
                EventKind::UplinkDecode { relay_slot } => self.on_uplink_decode(relay_slot),
                EventKind::DownlinkDecode { node, image, arrival } => {
                    self.on_downlink_decode(node, image, arrival)
                }
                EventKind::AppOffer { node } => self.on_app_offer(node),
            }
        }
        for (i, llc) in self.llc.iter().enumerate() {
            let stats = if i == 0 { &mut self.metrics.arq_a } else { &mut self.metrics.arq_b };
            stats.final_rtt_est_ps = llc.rtt.rtt_est_ps();
            stats.final_rtt_dev_ps = llc.rtt.rtt_dev_ps();
            stats.final_window = llc.window_limit(self.ts);
        }
    }

    // ---- relay ------------------------------------------------------------

    fn on_relay_slot(&mut self, slot: i64) {
        self.metrics.slots_run = self.metrics.slots_run.max(slot as u64);
        if let Some(plan) = self.relay.on_slot_detect(slot) {
            self.emit_downlink(plan);
        }
        self.metrics.relay.forwarded = self.relay.forwarded;
        self.metrics.relay.beacons = self.relay.beacons_sent;
        if (slot as u64) < self.cfg.slots {
            let t = self.relay_detect_time(slot + 1);
            self.push(t, EventKind::RelaySlotDetect { slot: slot + 1 });
        }
    }

    fn emit_downlink(&mut self, plan: TxPlan) {
        let emit = self.relay_boundary_global(plan.target_slot);
        for node in [EndNodeId::A, EndNodeId::B] {
            let arrival = emit + self.cfg.channel.propagation_ps;
            let per = self.cfg.channel.per_downlink.at(self.cfg.channel.downlink_snr_db);
            if per > 0.0 && self.rng_erasure.gen_bool(per.clamp(0.0, 1.0)) {
                continue; // lost at this receiver; timing not updated either
            }
            let decode_ready = arrival
                + self.ts
                + (self.cfg.latency.decode_frac * self.ts as f64) as i64;
            self.push(
                decode_ready,
                EventKind::DownlinkDecode { node, image: plan.image.clone(), arrival },
            );
        }
    }

    fn on_uplink_decode(&mut self, relay_slot: i64) {
        self.uplink_decode_scheduled.remove(&relay_slot);
        let txs = self.uplink_buckets.remove(&relay_slot).unwrap_or_default();

        // Ground-truth arrival offsets in relay samples.
        let boundary_tick = relay_slot * self.samples_per_slot;
        let mut truth = [None, None];
        for tx in &txs {
            let (k, f) = self
                .relay_clock
                .sample_pos_at_global(tx.emit_global + self.cfg.channel.propagation_ps);
            truth[node_idx(tx.node)] = Some((k - boundary_tick) as f64 + f);
        }
        let c = self.cfg.ofdm.cp_len as f64;
        let mut violated = truth.iter().flatten().any(|t: &f64| t.abs() > c);
        if let (Some(a), Some(b)) = (truth[0], truth[1]) {
            violated |= (a - b).abs() > c;
            self.metrics.sync.slots_with_both += 1;
        }
        if violated && !txs.is_empty() {
            self.metrics.sync.within_cp_violations += 1;
        }

        let measured_dd = if self.cfg.fidelity == Fidelity::SampleLevel {
            self.measure_uplink_slot(relay_slot, &txs, truth)
        } else {
            None
        };
        if !txs.is_empty() || self.cfg.capture.sync_series {
            self.metrics.sync.samples.push(SyncSample {
                relay_slot,
                truth_a: truth[0],
                truth_b: truth[1],
                measured_dd,
            });
        }

        // Packet outcome through the erasure abstraction.
        match txs.len() {
            0 => self.metrics.relay.idle_slots += 1,
            n => {
                let per = if n == 2 {
                    self.cfg.channel.per_xor.at(self.cfg.channel.uplink_snr_db)
                } else {
                    self.cfg.channel.per_single.at(self.cfg.channel.uplink_snr_db)
                };
                let erased = per > 0.0 && self.rng_erasure.gen_bool(per.clamp(0.0, 1.0));
                if erased {
                    self.metrics.relay.failed_slots += 1;
                } else {
                    let images: Vec<(EndNodeId, Vec<u8>)> =
                        txs.into_iter().map(|t| (t.node, t.image)).collect();
                    match self.relay.screen_uplink(images) {
                        Ok(reception) => {
                            use crate::mac::UplinkReception::*;
                            match &reception {
                                Xor(_) => self.metrics.relay.xor_slots += 1,
                                Single(_) => self.metrics.relay.single_slots += 1,
                                Failed => self.metrics.relay.failed_slots += 1,
                                None => {}
                            }
                            if self.cfg.relay_forwarding {
                                self.relay.on_uplink_decoded(reception);
                            }
                        }
                        Err(_) => self.metrics.relay.failed_slots += 1,
                    }
                }
            }
        }
    }

    /// Sample-level measurement of one uplink slot: materialize the
    /// superposed window, identify users by narrow cross-correlation, and
    /// regress both arrival offsets from the co-located long training
    /// symbols.
    fn measure_uplink_slot(
        &mut self,
        relay_slot: i64,
        txs: &[UplinkTx],
        truth: [Option<f64>; 2],
    ) -> Option<f64> {
        let params = self.cfg.ofdm;
        let boundary_tick = relay_slot * self.samples_per_slot;
        let pre_len = self.preambles[0].len() as i64;
        let pad = (2 * params.cp_len + 4 * params.sts_len) as i64;
        let origin = (boundary_tick - pad).max(0);
        let len = (pre_len + 2 * pad) as usize;
        let mut stream = SampleStream::zeros(origin as u64, len);

        for tx in txs {
            let (k, f) = self
                .relay_clock
                .sample_pos_at_global(tx.emit_global + self.cfg.channel.propagation_ps);
            let rendered = self.preambles[node_idx(tx.node)].render(&params, f);
            stream.mix_at(k, &rendered);
        }
        let sigma2 = 10f64.powf(-self.cfg.channel.uplink_snr_db / 10.0);
        add_awgn(&mut self.rng_noise, &mut stream.samples, sigma2);

        let mut detected = [false, false];
        for id in [EndNodeId::A, EndNodeId::B] {
            let mut cost = CorrelatorCost::default();
            let det = sync_narrow(
                &stream,
                &self.preambles[node_idx(id)],
                boundary_tick as u64,
                &params,
                0.5,
                &mut cost,
            );
            self.metrics.costs.narrow_multiplies += cost.complex_multiplies;
            self.metrics.costs.narrow_invocations += 1;
            match det {
                Ok(Some(_)) => detected[node_idx(id)] = true,
                _ => {
                    if truth[node_idx(id)].is_some() {
                        self.metrics.sync.missed_detections += 1;
                    }
                }
            }
        }
        if !(detected[0] && detected[1]) {
            return None;
        }

        // One FFT window serves both users; their LTS fields are co-located
        // and subcarrier-disjoint. Cut mid-prefix so either user's offset
        // stays inside the cyclic region, then remove the known half-prefix
        // shift before regression.
        let lts_off = self.preambles[0].lts_body_offsets(&params)[0] as i64;
        debug_assert_eq!(lts_off, self.preambles[1].lts_body_offsets(&params)[0] as i64);
        let cut = boundary_tick + lts_off - (params.cp_len / 2) as i64;
        let region = match stream.window(cut as u64, params.n_subcarriers) {
            Ok(r) => r.to_vec(),
            Err(_) => return None,
        };
        let half_cp = (params.cp_len / 2) as f64;
        let mut dd = None;
        if let (Ok(mut csi_a), Ok(mut csi_b)) = (
            estimate_csi(&region, &self.preambles[0], &params, 0),
            estimate_csi(&region, &self.preambles[1], &params, 0),
        ) {
            derotate(&mut csi_a, &params, half_cp);
            derotate(&mut csi_b, &params, half_cp);
            if let (Ok(da), Ok(db)) = (phase_slope_offset(&csi_a), phase_slope_offset(&csi_b)) {
                dd = Some(da - db);
            }
        }
        dd
    }

    // ---- end nodes ---------------------------------------------------------

    fn on_end_slot(&mut self, node: EndNodeId, slot: i64) {
        let i = node_idx(node);
        if self.macs[i].rx_state != RxState::Sync {
            return; // chain stops until re-anchored
        }
        self.pump_llc(node);
        let now_ps = self.now.0;
        let outcome = match self.macs[i].on_slot_detect(slot, now_ps) {
            Ok(o) => o,
            Err(_) => return,
        };
        if let Some(delta) = outcome.realigned {
            if delta != 0 {
                let t = if i == 0 { &mut self.metrics.timing_a } else { &mut self.metrics.timing_b };
                t.realignments.push((slot, delta));
            }
        }
        if outcome.sync_lost {
            let t = if i == 0 { &mut self.metrics.timing_a } else { &mut self.metrics.timing_b };
            t.sync_losses += 1;
            return;
        }
        if let Some(plan) = outcome.transmit {
            self.handle_uplink_tx(node, plan);
        }
        let next = self.node_boundary_global(node, slot + 1) + self.delta_jitter(i);
        self.push(next, EventKind::EndSlotDetect { node, slot: slot + 1 });
    }

    fn handle_uplink_tx(&mut self, node: EndNodeId, plan: TxPlan) {
        let i = node_idx(node);
        // The one-slot-ahead rule guarantees the samples reach the radio in
        // time as long as the host-to-hardware path fits in the slot; the
        // configured jitter bounds enforce that, so the emission lands
        // exactly on the boundary.
        let _phi = self.phi_jitter(i);
        let emit_global = self.node_boundary_global(node, plan.target_slot);

        let header = LinkHeader::from_bytes(plan.image[..16].try_into().unwrap());
        if header.seq_flag && self.llc[i].enabled {
            self.llc[i].window.on_transmitted(header.seq_no, emit_global.0);
        }
        let arrival = emit_global + self.cfg.channel.propagation_ps;
        let relay_hw = self.relay_clock.hw_of_global(arrival);
        let m = (relay_hw - self.relay_clock.t0).div_euclid(self.ts);
        self.uplink_buckets
            .entry(m)
            .or_default()
            .push(UplinkTx { node, image: plan.image, emit_global });
        if self.uplink_decode_scheduled.insert(m) {
            let ready = self.relay_boundary_global(m + 1)
                + (self.cfg.latency.decode_frac * self.ts as f64) as i64;
            self.push(ready, EventKind::UplinkDecode { relay_slot: m });
        }
    }

    fn pump_llc(&mut self, node: EndNodeId) {
        let i = node_idx(node);
        let now_ps = self.now.0;
        let encode_ps = (self.cfg.latency.encode_ms * PS_PER_MS as f64) as i64;
        let payload_size = self.cfg.traffic.payload_size;

        // Admission from the application.
        match self.cfg.traffic.mode {
            TrafficMode::Saturated => {
                let limit = self.llc[i].window_limit(self.ts).max(2);
                while self.llc[i].window.queued_len() < limit {
                    let idx = self.app.next_send_index[i];
                    self.app.next_send_index[i] += 1;
                    self.llc[i].window.enqueue_payload(app_payload(node, idx, payload_size));
                }
            }
            TrafficMode::ReliableStream { .. } | TrafficMode::Echo { .. } | TrafficMode::Rate { .. } => {}
        }

        if self.llc[i].enabled {
            let limit = self.llc[i].window_limit(self.ts);
            self.llc[i].window.set_window_limit(limit);
            let timeout = self.llc[i].rtt.timeout_ps();
            let outs = self.llc[i].window.on_tick(now_ps, timeout);
            let has_outs = !outs.is_empty();
            for out in outs {
                let mut header = LinkHeader {
                    data_len: out.payload.len() as u16,
                    seq_flag: true,
                    seq_no: out.seq,
                    ..Default::default()
                };
                self.attach_feedback(i, &mut header);
                let stats = if i == 0 { &mut self.metrics.arq_a } else { &mut self.metrics.arq_b };
                stats.data_packets_sent += 1;
                if out.retransmit {
                    stats.retransmissions += 1;
                }
                self.macs[i].enqueue_outgoing(OutgoingPacket {
                    header,
                    payload: out.payload,
                    ready_at_ps: now_ps + encode_ps,
                });
            }
            // Pure acknowledgement when there is no reverse data to ride.
            let mac_empty = {
                let (p, s) = self.macs[i].queue_depths();
                p + s == 0
            };
            if !has_outs && mac_empty && self.llc[i].feedback_dirty {
                self.llc[i].slots_ack_waited += 1;
                if self.llc[i].slots_ack_waited >= self.cfg.arq.ack_delay_slots {
                    let mut header = LinkHeader::default();
                    self.attach_feedback(i, &mut header);
                    let stats =
                        if i == 0 { &mut self.metrics.arq_a } else { &mut self.metrics.arq_b };
                    stats.pure_acks_sent += 1;
                    self.macs[i].enqueue_outgoing(OutgoingPacket {
                        header,
                        payload: Vec::new(),
                        ready_at_ps: now_ps + encode_ps,
                    });
                }
            }
        } else {
            // Raw datagram path: one fresh payload per slot opportunity.
            let (p, s) = self.macs[i].queue_depths();
            if p + s < 2 {
                if let Some(payload) = self.next_raw_payload(node) {
                    let seq = self.llc[i].raw_next_seq;
                    self.llc[i].raw_next_seq = seq.wrapping_add(1);
                    let header = LinkHeader {
                        data_len: payload.len() as u16,
                        seq_flag: true,
                        seq_no: seq,
                        ..Default::default()
                    };
                    let stats = if i == 0 { &mut self.metrics.arq_a } else { &mut self.metrics.arq_b };
                    stats.data_packets_sent += 1;
                    self.macs[i].enqueue_outgoing(OutgoingPacket {
                        header,
                        payload,
                        ready_at_ps: now_ps + encode_ps,
                    });
                }
            }
        }
    }

    /// Next payload for the ARQ-off path, honoring the traffic mode.
    fn next_raw_payload(&mut self, node: EndNodeId) -> Option<Vec<u8>> {
        let i = node_idx(node);
        let size = self.cfg.traffic.payload_size;
        match self.cfg.traffic.mode {
            TrafficMode::Saturated => {
                let idx = self.app.next_send_index[i];
                self.app.next_send_index[i] += 1;
                Some(app_payload(node, idx, size))
            }
            TrafficMode::ReliableStream { payloads_per_direction } => {
                let idx = self.app.next_send_index[i];
                if idx < payloads_per_direction {
                    self.app.next_send_index[i] += 1;
                    Some(app_payload(node, idx, size))
                } else {
                    None
                }
            }
            // Echo and Rate enqueue through events/deliveries, which land in
            // the window queue even when ARQ is disabled.
            TrafficMode::Echo { .. } | TrafficMode::Rate { .. } => self.llc[i].window.pop_queued(),
        }
    }

    fn attach_feedback(&mut self, i: usize, header: &mut LinkHeader) {
        if self.llc[i].recv.has_feedback() {
            let (ack_no, sacks) = self.llc[i].recv.feedback();
            header.ack_flag = true;
            header.ack_no = ack_no;
            header.sack_blocks = sacks;
            self.llc[i].feedback_dirty = false;
            self.llc[i].slots_ack_waited = 0;
        }
    }

    fn on_downlink_decode(&mut self, node: EndNodeId, image: Vec<u8>, arrival: SimInstant) {
        let i = node_idx(node);

        // Locate the reference packet's first sample by counting.
        let arrival_tick = match self.cfg.fidelity {
            Fidelity::PacketLevel => {
                let (k, f) = self.clocks[i].sample_pos_at_global(arrival);
                if f >= 0.5 {
                    k + 1
                } else {
                    k
                }
            }
            Fidelity::SampleLevel => match self.detect_downlink_sample_level(node, arrival) {
                Some(tick) => tick,
                None => return, // undetected: timing not updated, packet lost
            },
        };
        let t_j = self.clocks[i].hw_of_sample(arrival_tick);
        let became_synced = self.macs[i].on_reference_detected(t_j);
        if became_synced {
            self.start_node(node);
        }

        let outcome = match self.macs[i].on_downlink(&image) {
            Ok(o) => o,
            Err(_) => return,
        };
        if let DownlinkOutcome::Data { header, payload } = outcome {
            let t = if i == 0 { &mut self.metrics.timing_a } else { &mut self.metrics.timing_b };
            t.decode_times_ps.push(self.now.0);
            if self.llc[i].enabled {
                if header.ack_flag {
                    let out =
                        self.llc[i].window.on_ack(header.ack_no, &header.sack_blocks, self.now.0);
                    let stats = if i == 0 { &mut self.metrics.arq_a } else { &mut self.metrics.arq_b };
                    for s in out.rtt_samples_ps {
                        if self.llc[i].rtt.update(s).is_ok() {
                            self.llc[i].got_sample = true;
                            stats.rtt_samples += 1;
                        }
                    }
                }
                if header.seq_flag {
                    let out = self.llc[i].recv.on_data(header.seq_no, payload);
                    self.llc[i].feedback_dirty = true;
                    for p in out.delivered {
                        self.app_deliver(node, p);
                    }
                }
            } else if header.seq_flag {
                self.app_deliver(node, payload);
            }
        }
    }

    /// Materialize the downlink window and run the receiver flowchart's
    /// detector: narrow around the tracked boundary in SYNC, the standard
    /// algorithm in INIT.
    fn detect_downlink_sample_level(&mut self, node: EndNodeId, arrival: SimInstant) -> Option<i64> {
        let i = node_idx(node);
        let params = self.cfg.ofdm;
        let (k, f) = self.clocks[i].sample_pos_at_global(arrival);
        let pre = &self.preambles[2];
        let pre_len = pre.len() as i64;
        let pad = (2 * params.cp_len + 4 * params.sts_len) as i64;
        let origin = (k - pad).max(0);
        let mut stream = SampleStream::zeros(origin as u64, (pre_len + 2 * pad) as usize);
        let rendered = pre.render(&params, f);
        stream.mix_at(k, &rendered);
        let sigma2 = 10f64.powf(-self.cfg.channel.downlink_snr_db / 10.0);
        add_awgn(&mut self.rng_noise, &mut stream.samples, sigma2);

        match self.macs[i].rx_state {
            RxState::Sync => {
                let sched = self.macs[i].sched.as_ref().unwrap();
                let slot = self.macs[i].slot_of(self.clocks[i].hw_of_global(arrival)).ok()?;
                let expected_tick = (sched.boundary(slot) - self.clocks[i].t0) / self.sp;
                let mut cost = CorrelatorCost::default();
                let det = sync_narrow(
                    &stream,
                    pre,
                    expected_tick.max(origin) as u64,
                    &params,
                    0.5,
                    &mut cost,
                )
                .ok()?;
                self.metrics.costs.narrow_multiplies += cost.complex_multiplies;
                self.metrics.costs.narrow_invocations += 1;
                det.map(|d| d.start_tick as i64)
            }
            RxState::Init => {
                let out = sync_standard(&stream, &[pre], &params, 0.8, 0.5).ok()?;
                self.metrics.costs.standard_multiplies += out.auto_cost.complex_multiplies
                    + out.cross_cost.complex_multiplies;
                out.detections.first().map(|d| d.start_tick as i64)
            }
        }
    }

    /// A node just acquired slot boundaries: start its detect chain and its
    /// application traffic.
    fn start_node(&mut self, node: EndNodeId) {
        let i = node_idx(node);
        let now_hw = self.clocks[i].hw_of_global(self.now);
        let n0 = match self.macs[i].slot_of(now_hw) {
            Ok(n) => n + 1,
            Err(_) => return,
        };
        let t = self.node_boundary_global(node, n0) + self.delta_jitter(i);
        self.push(t, EventKind::EndSlotDetect { node, slot: n0 });

        if !self.app.started[i] {
            self.app.started[i] = true;
            match self.cfg.traffic.mode {
                TrafficMode::ReliableStream { payloads_per_direction } => {
                    for idx in 0..payloads_per_direction {
                        self.llc[i]
                            .window
                            .enqueue_payload(app_payload(node, idx, self.cfg.traffic.payload_size));
                    }
                    self.app.next_send_index[i] = payloads_per_direction;
                }
                TrafficMode::Echo { count } => {
                    // Only A launches pings.
                    if node == EndNodeId::A && count > 0 {
                        self.launch_ping();
                    }
                }
                TrafficMode::Rate { .. } => {
                    if let Some(period) = self.app.rate_period_ps {
                        let t = self.now + period;
                        self.push(t, EventKind::AppOffer { node });
                    }
                }
                TrafficMode::Saturated => {}
            }
        }
    }

    fn launch_ping(&mut self) {
        let idx = self.app.echo_next;
        if idx >= self.app.echo_total {
            return;
        }
        self.app.echo_next += 1;
        self.app.echo_sent_at.insert(idx, self.now.0);
        self.llc[0]
            .window
            .enqueue_payload(app_payload(EndNodeId::A, idx, self.cfg.traffic.payload_size));
    }

    fn on_app_offer(&mut self, node: EndNodeId) {
        let i = node_idx(node);
        let idx = self.app.next_send_index[i];
        self.app.next_send_index[i] += 1;
        self.llc[i].window.enqueue_payload(app_payload(node, idx, self.cfg.traffic.payload_size));
        if let Some(period) = self.app.rate_period_ps {
            let t = self.now + period;
            self.push(t, EventKind::AppOffer { node });
        }
    }

    fn app_deliver(&mut self, receiver: EndNodeId, payload: Vec<u8>) {
        let Some((sender, index, intact)) = parse_app_payload(&payload) else {
            self.metrics.dir_mut(receiver).integrity_failures += 1;
            return;
        };
        let measuring = self.now.0 >= self.metrics.warmup_end_ps;
        let stats = self.metrics.dir_mut(receiver);
        stats.record(index, payload.len(), self.now.0, measuring);
        if !intact {
            stats.integrity_failures += 1;
        }
        let _ = sender;

        match self.cfg.traffic.mode {
            TrafficMode::Echo { count } => {
                if receiver == EndNodeId::B {
                    // Echo the ping back with the same index.
                    self.llc[1].window.enqueue_payload(app_payload(
                        EndNodeId::B,
                        index,
                        self.cfg.traffic.payload_size,
                    ));
                } else {
                    // A got the echo: one round trip complete.
                    if let Some(sent) = self.app.echo_sent_at.remove(&index) {
                        self.metrics.echo_rtts_ps.push(self.now.0 - sent);
                    }
                    if self.app.echo_next < count {
                        self.launch_ping();
                    } else if self.app.echo_sent_at.is_empty() {
                        self.drain_until = Some(self.now + 2 * self.ts);
                    }
                }
            }
            TrafficMode::ReliableStream { payloads_per_direction } => {
                if self.metrics.a_to_b.delivered >= payloads_per_direction
                    && self.metrics.b_to_a.delivered >= payloads_per_direction
                    && self.metrics.stream_completed_ps.is_none()
                {
                    self.metrics.stream_completed_ps = Some(self.now.0);
                    self.drain_until = Some(self.now + 2 * self.ts);
                }
            }
            _ => {}
        }
    }
}

fn add_awgn(rng: &mut ChaCha8Rng, samples: &mut [Cpx], sigma2: f64) {
    if sigma2 <= 0.0 {
        return;
    }
    let n = Normal::new(0.0, (sigma2 / 2.0).sqrt()).unwrap();
    for s in samples.iter_mut() {
        *s += Cpx::new(n.sample(rng), n.sample(rng));
    }
}

fn derotate(csi: &mut crate::baseband::Csi, params: &crate::baseband::OfdmParams, delay: f64) {
    let n = params.n_subcarriers as f64;
    for &bin in &csi.used_bins {
        let s = params.signed_of(bin) as f64;
        let ph = 2.0 * std::f64::consts::PI * s * delay / n;
        csi.per_subcarrier_gain[bin] *= Cpx::from_polar(1.0, ph);
    }
}

/// Application payload: sender tag, index, then a deterministic fill.
pub fn app_payload(sender: EndNodeId, index: u64, size: usize) -> Vec<u8> {
    let size = size.max(9);
    let mut p = Vec::with_capacity(size);
    p.push(match sender {
        EndNodeId::A => 0xAA,
        EndNodeId::B => 0xBB,
    });
    p.extend_from_slice(&index.to_le_bytes());
    for i in p.len()..size {
        p.push(((index as usize).wrapping_mul(31).wrapping_add(i) & 0xFF) as u8);
    }
    p
}

/// Recover (sender, index, pattern-intact) from a delivered payload.
pub fn parse_app_payload(p: &[u8]) -> Option<(EndNodeId, u64, bool)> {
    if p.len() < 9 {
        return None;
    }
    let sender = match p[0] {
        0xAA => EndNodeId::A,
        0xBB => EndNodeId::B,
        _ => return None,
    };
    let index = u64::from_le_bytes(p[1..9].try_into().unwrap());
    let intact = p[9..]
        .iter()
        .enumerate()
        .all(|(i, &b)| b == ((index as usize).wrapping_mul(31).wrapping_add(i + 9) & 0xFF) as u8);
    Some((sender, index, intact))
}
