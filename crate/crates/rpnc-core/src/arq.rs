//! End-to-end selective-repeat ARQ with selective acknowledgement.
//!
//! Only the two end nodes participate; the relay forwards correct packets
//! once and never requests retransmissions. The receiver buffers out-of-order
//! packets and returns a cumulative acknowledgement plus up to four SACK
//! blocks describing buffered runs. Retransmission is timeout-driven; the
//! timeout and the send-window size both derive from a smoothed RTT estimate.
//!
//! Sequence numbers are one byte. The window is capped at 127 so that a
//! sequence number can never be confused with its previous incarnation across
//! a wrap.

use crate::linkcodec::SackBlock;
use std::collections::VecDeque;

/// Hard cap keeping selective repeat unambiguous over the 8-bit space.
pub const MAX_WINDOW: usize = 127;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum ArqError {
    #[error("RTT sample must be positive, got {0} ps")]
    NonPositiveSample(i64),
}

/// Smoothed RTT and deviation, exponentially weighted.
#[derive(Clone, Copy, Debug)]
pub struct RttEstimator {
    rtt_est_ps: i64,
    rtt_dev_ps: i64,
    alpha: f64,
    beta: f64,
}

impl RttEstimator {
    pub const DEFAULT_ALPHA: f64 = 0.125;
    pub const DEFAULT_BETA: f64 = 0.25;

    pub fn new(initial_rtt_ps: i64, alpha: f64, beta: f64) -> Self {
        assert!(alpha > 0.0 && alpha < 1.0 && beta > 0.0 && beta < 1.0);
        assert!(initial_rtt_ps > 0);
        RttEstimator { rtt_est_ps: initial_rtt_ps, rtt_dev_ps: 0, alpha, beta }
    }

    /// Fold in one sample. The deviation update uses the pre-update estimate.
    pub fn update(&mut self, sample_ps: i64) -> Result<(), ArqError> {
        if sample_ps <= 0 {
            return Err(ArqError::NonPositiveSample(sample_ps));
        }
        let est = self.rtt_est_ps as f64;
        let dev = self.rtt_dev_ps as f64;
        let s = sample_ps as f64;
        self.rtt_dev_ps = ((1.0 - self.beta) * dev + self.beta * (s - est).abs()).round() as i64;
        self.rtt_est_ps = ((1.0 - self.alpha) * est + self.alpha * s).round() as i64;
        Ok(())
    }

    pub fn rtt_est_ps(&self) -> i64 {
        self.rtt_est_ps
    }

    pub fn rtt_dev_ps(&self) -> i64 {
        self.rtt_dev_ps
    }

    /// Retransmission timeout: `RTT_est + 4 * RTT_dev`.
    pub fn timeout_ps(&self) -> i64 {
        self.rtt_est_ps + 4 * self.rtt_dev_ps
    }

    /// Window that keeps the pipe full across the timeout: `ceil(timeout/T_s)`.
    pub fn window_size(&self, slot_duration_ps: i64) -> usize {
        assert!(slot_duration_ps > 0);
        let w = ((self.timeout_ps() + slot_duration_ps - 1) / slot_duration_ps).max(1);
        (w as usize).min(MAX_WINDOW)
    }
}

/// A packet the sender wants on the air.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OutPacket {
    pub seq: u8,
    pub payload: Vec<u8>,
    pub retransmit: bool,
}

#[derive(Clone, Debug)]
struct InFlight {
    seq: u8,
    payload: Vec<u8>,
    /// Hardware time of first transmission; RTT samples come from here.
    first_tx_ps: Option<i64>,
    /// Hardware time of the latest (re)transmission; timeouts age from here.
    last_tx_ps: Option<i64>,
    retransmits: u32,
    /// Handed to the MAC but not yet confirmed on the air.
    awaiting_air: bool,
}

/// Sliding-window sender state.
#[derive(Clone, Debug)]
pub struct SendWindow {
    base: u8,
    next_seq: u8,
    in_flight: Vec<InFlight>,
    window_limit: usize,
    queued: VecDeque<Vec<u8>>,
}

/// Result of processing one feedback header.
#[derive(Clone, Debug, Default)]
pub struct AckOutcome {
    /// Sequence numbers removed from flight by this feedback.
    pub acked: Vec<u8>,
    /// RTT samples from never-retransmitted packets, ps.
    pub rtt_samples_ps: Vec<i64>,
}

impl SendWindow {
    pub fn new(window_limit: usize) -> Self {
        SendWindow {
            base: 0,
            next_seq: 0,
            in_flight: Vec::new(),
            window_limit: window_limit.min(MAX_WINDOW),
            queued: VecDeque::new(),
        }
    }

    pub fn base(&self) -> u8 {
        self.base
    }

    pub fn next_seq(&self) -> u8 {
        self.next_seq
    }

    pub fn in_flight_len(&self) -> usize {
        self.in_flight.len()
    }

    pub fn queued_len(&self) -> usize {
        self.queued.len()
    }

    pub fn window_limit(&self) -> usize {
        self.window_limit
    }

    pub fn set_window_limit(&mut self, limit: usize) {
        self.window_limit = limit.clamp(1, MAX_WINDOW);
    }

    /// Accept a payload from the application.
    pub fn enqueue_payload(&mut self, payload: Vec<u8>) {
        self.queued.push_back(payload);
    }

    /// Take one queued payload without any window bookkeeping, for the
    /// datagram path when ARQ is disabled.
    pub fn pop_queued(&mut self) -> Option<Vec<u8>> {
        self.queued.pop_front()
    }

    pub fn is_idle(&self) -> bool {
        self.in_flight.is_empty() && self.queued.is_empty()
    }

    fn offset(&self, seq: u8) -> u8 {
        seq.wrapping_sub(self.base)
    }

    /// Emit everything currently eligible: first any in-flight packet whose
    /// last transmission has aged past the timeout (its timer resets), then
    /// new packets while the window has room. The MAC queues these and puts
    /// one on the air per uplink slot.
    ///
    /// Retransmitted packets back their timer off exponentially. Together
    /// with sampling only never-retransmitted packets this keeps a too-small
    /// initial estimate from locking into a retransmission storm: backed-off
    /// timers stop expiring, fresh packets get through unambiguously, and
    /// their samples pull the estimate up.
    pub fn on_tick(&mut self, now_ps: i64, timeout_ps: i64) -> Vec<OutPacket> {
        let mut out = Vec::new();
        for pkt in self.in_flight.iter_mut() {
            if let Some(last) = pkt.last_tx_ps {
                let backoff = timeout_ps.saturating_mul(1 << pkt.retransmits.min(6));
                if !pkt.awaiting_air && now_ps - last > backoff {
                    pkt.retransmits += 1;
                    pkt.last_tx_ps = Some(now_ps);
                    pkt.awaiting_air = true;
                    out.push(OutPacket { seq: pkt.seq, payload: pkt.payload.clone(), retransmit: true });
                }
            }
        }
        while self.in_flight.len() < self.window_limit && !self.queued.is_empty() {
            let payload = self.queued.pop_front().unwrap();
            let seq = self.next_seq;
            self.next_seq = self.next_seq.wrapping_add(1);
            self.in_flight.push(InFlight {
                seq,
                payload: payload.clone(),
                first_tx_ps: Some(now_ps),
                last_tx_ps: Some(now_ps),
                retransmits: 0,
                awaiting_air: true,
            });
            out.push(OutPacket { seq, payload, retransmit: false });
        }
        out
    }

    /// The MAC confirms the moment a sequence number actually went on the
    /// air, which is what RTT samples and timeout ages should measure.
    pub fn on_transmitted(&mut self, seq: u8, now_ps: i64) {
        if let Some(pkt) = self.in_flight.iter_mut().find(|p| p.seq == seq) {
            if pkt.retransmits == 0 {
                pkt.first_tx_ps = Some(now_ps);
            }
            pkt.last_tx_ps = Some(now_ps);
            pkt.awaiting_air = false;
        }
    }

    /// Apply cumulative + selective acknowledgement.
    pub fn on_ack(&mut self, ack_no: u8, sack_blocks: &[SackBlock], now_ps: i64) -> AckOutcome {
        let mut outcome = AckOutcome::default();
        let span = self.next_seq.wrapping_sub(self.base);

        let ack_dist = ack_no.wrapping_sub(self.base);
        let cumulative_advance = if ack_dist < span {
            Some(ack_dist)
        } else if ack_dist == 255 {
            None // re-ack of base - 1: nothing new cumulatively
        } else {
            return outcome; // stale or out-of-window feedback
        };

        let mut remove = vec![false; 256];
        if let Some(dist) = cumulative_advance {
            for d in 0..=dist {
                remove[self.base.wrapping_add(d) as usize] = true;
            }
        }
        for blk in sack_blocks {
            for k in 0..blk.length {
                let seq = blk.start_seq.wrapping_add(k);
                if self.offset(seq) < span {
                    remove[seq as usize] = true;
                }
            }
        }

        self.in_flight.retain(|pkt| {
            if remove[pkt.seq as usize] {
                if pkt.retransmits == 0 {
                    if let Some(first) = pkt.first_tx_ps {
                        if now_ps > first {
                            outcome.rtt_samples_ps.push(now_ps - first);
                        }
                    }
                }
                outcome.acked.push(pkt.seq);
                false
            } else {
                true
            }
        });

        if let Some(dist) = cumulative_advance {
            self.base = self.base.wrapping_add(dist).wrapping_add(1);
        }
        outcome
    }
}

/// Receiver-side reassembly state.
#[derive(Clone, Debug)]
pub struct RecvBuffer {
    expected: u8,
    any_received: bool,
    out_of_order: Vec<(u8, Vec<u8>)>,
}

/// What one data packet did to the receive state.
#[derive(Clone, Debug, Default)]
pub struct RecvOutcome {
    /// Payloads released to the application, in order.
    pub delivered: Vec<Vec<u8>>,
    /// Cumulative acknowledgement: the last in-order sequence received.
    pub ack_no: u8,
    /// Up to four buffered runs, nearest to the cumulative point first.
    pub sack_blocks: Vec<SackBlock>,
}

impl Default for RecvBuffer {
    fn default() -> Self {
        Self::new()
    }
}

impl RecvBuffer {
    pub fn new() -> Self {
        RecvBuffer { expected: 0, any_received: false, out_of_order: Vec::new() }
    }

    pub fn expected(&self) -> u8 {
        self.expected
    }

    /// True once there is anything worth acknowledging.
    pub fn has_feedback(&self) -> bool {
        self.any_received
    }

    pub fn buffered_len(&self) -> usize {
        self.out_of_order.len()
    }

    fn dist(&self, seq: u8) -> u8 {
        seq.wrapping_sub(self.expected)
    }

    /// Current cumulative + SACK state, for feedback packets.
    pub fn feedback(&self) -> (u8, Vec<SackBlock>) {
        (self.expected.wrapping_sub(1), self.sack_runs())
    }

    fn sack_runs(&self) -> Vec<SackBlock> {
        let mut dists: Vec<u8> = self.out_of_order.iter().map(|(s, _)| self.dist(*s)).collect();
        dists.sort_unstable();
        let mut runs: Vec<SackBlock> = Vec::new();
        for d in dists {
            match runs.last_mut() {
                Some(last)
                    if last.start_seq.wrapping_add(last.length) == self.expected.wrapping_add(d)
                        && last.length < 255 =>
                {
                    last.length += 1;
                }
                _ => {
                    if runs.len() == crate::linkcodec::MAX_SACK_BLOCKS {
                        break;
                    }
                    runs.push(SackBlock { start_seq: self.expected.wrapping_add(d), length: 1 });
                }
            }
        }
        runs
    }

    /// Handle a CRC-valid data packet.
    pub fn on_data(&mut self, seq: u8, payload: Vec<u8>) -> RecvOutcome {
        self.any_received = true;
        let d = self.dist(seq);
        let mut delivered = Vec::new();
        if d == 0 {
            delivered.push(payload);
            self.expected = self.expected.wrapping_add(1);
            // Drain any buffered run that is now in order.
            loop {
                match self.out_of_order.iter().position(|(s, _)| *s == self.expected) {
                    Some(idx) => {
                        delivered.push(self.out_of_order.swap_remove(idx).1);
                        self.expected = self.expected.wrapping_add(1);
                    }
                    None => break,
                }
            }
        } else if d < 128 {
            if !self.out_of_order.iter().any(|(s, _)| *s == seq) {
                self.out_of_order.push((seq, payload));
            }
        }
        // d >= 128: behind the cumulative point; re-acknowledge only.
        let (ack_no, sack_blocks) = self.feedback();
        RecvOutcome { delivered, ack_no, sack_blocks }
    }
}

/// Skeleton of the feedback fields to place in an outgoing header.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FeedbackPlan {
    pub seq: Option<u8>,
    pub ack: Option<(u8, Vec<SackBlock>)>,
}

/// Decide what an outgoing packet should carry. Data always piggybacks any
/// pending acknowledgement. With no reverse data, a pure-ACK packet (which
/// consumes no sequence number) is emitted once the feedback has waited
/// `ack_delay_slots`; `slots_waited` counts slots since feedback became due.
pub fn build_feedback(
    recv: &RecvBuffer,
    data_seq: Option<u8>,
    ack_delay_slots: u32,
    slots_waited: u32,
) -> Option<FeedbackPlan> {
    let ack = recv.has_feedback().then(|| recv.feedback());
    match (data_seq, ack) {
        (Some(seq), ack) => Some(FeedbackPlan { seq: Some(seq), ack }),
        (None, Some(ack)) if slots_waited >= ack_delay_slots => {
            Some(FeedbackPlan { seq: None, ack: Some(ack) })
        }
        _ => None,
    }
}
