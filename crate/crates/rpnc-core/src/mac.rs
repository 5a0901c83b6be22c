//! Time-slotted FDD MAC state machines.
//!
//! End nodes transmit only at slot boundaries of the schedule they track
//! from relay downlink arrivals, always one slot ahead of the boundary they
//! just detected in their receive path. The relay forwards every correctly
//! decoded uplink packet exactly once and injects beacons when it has been
//! silent for `tx_gap` slots, so the end nodes never starve for reference
//! packets. Uplink and downlink live on separate bands and never contend.

use crate::linkcodec::{
    classify_slot_ids, decode_packet, encode_packet, verify_xor_packet, xor_extract, CodecError,
    DownlinkKind, EndNodeId, LinkHeader,
};
use crate::slot_timing::{check_sync_loss, ArrivalRecord, SlotSchedule, TimingError};
use crate::time::HwInstant;
use std::collections::VecDeque;

#[derive(Debug, thiserror::Error)]
pub enum MacError {
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Timing(#[from] TimingError),
    #[error("no slot schedule yet")]
    NotSynchronized,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RxState {
    /// Slot boundaries unknown; scanning for any reference packet.
    Init,
    /// Boundaries acquired and tracked.
    Sync,
}

/// A payload handed down by the link layer, with the header fields it wants
/// on the air. The slot ID is assigned by the MAC at transmit time.
#[derive(Clone, Debug)]
pub struct OutgoingPacket {
    pub header: LinkHeader,
    pub payload: Vec<u8>,
    /// Host time at which PHY encoding completes and the packet samples are
    /// available for slotted transmission.
    pub ready_at_ps: i64,
}

/// A transmission the engine must put on the air at the target slot's
/// boundary.
#[derive(Clone, Debug)]
pub struct TxPlan {
    pub target_slot: i64,
    pub image: Vec<u8>,
}

/// Everything that happened inside one slot-boundary detection.
#[derive(Clone, Debug, Default)]
pub struct SlotDetectOutcome {
    /// Whole-sample boundary adjustment applied at this window end.
    pub realigned: Option<i64>,
    pub transmit: Option<TxPlan>,
    /// Too long without a reference packet; the caller must drop to INIT.
    pub sync_lost: bool,
}

/// What a decoded downlink packet meant to this end node.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DownlinkOutcome {
    Beacon,
    SelfEcho,
    /// A packet from the other end node, direct or extracted from an XOR
    /// packet.
    Data { header: LinkHeader, payload: Vec<u8> },
    /// An XOR packet whose self half is missing from the transmit history,
    /// or whose extracted image failed its checks. Timing was still updated.
    Unusable,
}

#[derive(Clone, Debug)]
pub struct EndNodeMacConfig {
    pub id: EndNodeId,
    pub slot_duration_ps: i64,
    pub sample_period_ps: i64,
    pub window: u32,
    pub tx_gap: u64,
    pub data_section: usize,
    pub realign_enabled: bool,
    /// When set, transmit only in target slots with this parity
    /// (traditional scheduling: A even, B odd).
    pub ts_parity: Option<i64>,
}

/// End-node MAC: slot tracking, the two PHY-facing queues, and downlink
/// packet classification with XOR extraction.
pub struct EndNodeMac {
    pub cfg: EndNodeMacConfig,
    pub rx_state: RxState,
    pub sched: Option<SlotSchedule>,
    /// Packets still being encoded by the host.
    tx_que_pkt: VecDeque<OutgoingPacket>,
    /// Encoded packets ready for slotted transmission.
    tx_que_sample: VecDeque<OutgoingPacket>,
    /// Transmitted packet images keyed by slot-ID byte, for XOR extraction.
    sent_ring: Vec<Option<Vec<u8>>>,
    pub slots_since_ref: u64,
    /// Realignment adjustments applied, most recent last: (trigger slot, samples).
    pub drift_applied: Vec<(i64, i64)>,
}

impl EndNodeMac {
    pub fn new(cfg: EndNodeMacConfig) -> Self {
        EndNodeMac {
            cfg,
            rx_state: RxState::Init,
            sched: None,
            tx_que_pkt: VecDeque::new(),
            tx_que_sample: VecDeque::new(),
            sent_ring: vec![None; 256],
            slots_since_ref: 0,
            drift_applied: Vec::new(),
        }
    }

    pub fn queue_depths(&self) -> (usize, usize) {
        (self.tx_que_pkt.len(), self.tx_que_sample.len())
    }

    /// Link layer hands a packet down; it becomes transmittable once the
    /// host finishes encoding it.
    pub fn enqueue_outgoing(&mut self, pkt: OutgoingPacket) {
        self.tx_que_pkt.push_back(pkt);
    }

    fn promote_encoded(&mut self, now_ps: i64) {
        while let Some(front) = self.tx_que_pkt.front() {
            if front.ready_at_ps <= now_ps {
                let pkt = self.tx_que_pkt.pop_front().unwrap();
                self.tx_que_sample.push_back(pkt);
            } else {
                break;
            }
        }
    }

    /// Slot ID carried in the header: never zero.
    pub fn slot_id_for(slot: i64) -> u8 {
        (slot.rem_euclid(255) as u8) + 1
    }

    /// The schedule's slot containing hardware time `t`.
    pub fn slot_of(&self, t: HwInstant) -> Result<i64, MacError> {
        let sched = self.sched.as_ref().ok_or(MacError::NotSynchronized)?;
        let base = sched.boundary(0);
        Ok((t - base).div_euclid(sched.slot_duration_ps()))
    }

    /// A reference packet's first sample was located at hardware time
    /// `arrival`. In INIT this anchors the slot grid; in SYNC it feeds the
    /// windowed realignment. Returns true when this arrival moved the node
    /// into SYNC.
    pub fn on_reference_detected(&mut self, arrival: HwInstant) -> bool {
        self.slots_since_ref = 0;
        match self.rx_state {
            RxState::Init => {
                match self.sched.as_mut() {
                    Some(sched) => sched.re_anchor(arrival),
                    None => {
                        self.sched = Some(SlotSchedule::init_boundaries(
                            arrival,
                            self.cfg.slot_duration_ps,
                            self.cfg.sample_period_ps,
                            self.cfg.window,
                        ));
                    }
                }
                self.rx_state = RxState::Sync;
                true
            }
            RxState::Sync => {
                if self.cfg.realign_enabled {
                    if let Ok(slot) = self.slot_of(arrival) {
                        let sched = self.sched.as_mut().unwrap();
                        // Arrivals whose slot already fell out of the window
                        // (the host decoded them after the window closed)
                        // still reset the sync-loss counter above but cannot
                        // feed the drift average.
                        let _ = sched.record_arrival(ArrivalRecord {
                            slot_index: slot,
                            arrival_time: arrival,
                        });
                    }
                }
                false
            }
        }
    }

    /// The counting block saw the boundary sample of slot `n`.
    pub fn on_slot_detect(&mut self, n: i64, now_ps: i64) -> Result<SlotDetectOutcome, MacError> {
        if self.rx_state != RxState::Sync {
            return Ok(SlotDetectOutcome::default());
        }
        let mut out = SlotDetectOutcome::default();

        self.slots_since_ref += 1;
        if check_sync_loss(self.slots_since_ref, self.cfg.tx_gap.max(1)) {
            self.rx_state = RxState::Init;
            out.sync_lost = true;
            return Ok(out);
        }

        {
            let sched = self.sched.as_mut().ok_or(MacError::NotSynchronized)?;
            if n == sched.trigger_slot() {
                let delta = if self.cfg.realign_enabled { sched.window_drift() } else { 0 };
                sched.realign(n, delta)?;
                if delta != 0 {
                    self.drift_applied.push((n, delta));
                }
                out.realigned = Some(delta);
            }
        }

        self.promote_encoded(now_ps);
        let target_slot = n + 1;
        let parity_ok = self.cfg.ts_parity.map_or(true, |p| target_slot.rem_euclid(2) == p);
        if parity_ok {
            if let Some(mut pkt) = self.tx_que_sample.pop_front() {
                let id = Self::slot_id_for(target_slot);
                match self.cfg.id {
                    EndNodeId::A => pkt.header.slot_id_a = id,
                    EndNodeId::B => pkt.header.slot_id_b = id,
                }
                let image = encode_packet(&pkt.header, &pkt.payload, self.cfg.data_section)?;
                self.sent_ring[id as usize] = Some(image.clone());
                out.transmit = Some(TxPlan { target_slot, image });
            }
        }
        Ok(out)
    }

    /// Process a CRC-screened downlink packet image. Classification comes
    /// from the two slot-ID bytes; XOR packets are stripped of the self
    /// half via the transmit history.
    pub fn on_downlink(&mut self, image: &[u8]) -> Result<DownlinkOutcome, MacError> {
        let kind = classify_slot_ids(image[0], image[1], self.cfg.id);
        match kind {
            DownlinkKind::Beacon => Ok(DownlinkOutcome::Beacon),
            DownlinkKind::SelfEcho => Ok(DownlinkOutcome::SelfEcho),
            DownlinkKind::FromOther => {
                let (header, payload, crc_ok) = decode_packet(image, self.cfg.data_section)?;
                if crc_ok {
                    Ok(DownlinkOutcome::Data { header, payload })
                } else {
                    Ok(DownlinkOutcome::Unusable)
                }
            }
            DownlinkKind::XorPacket => {
                let own_id = match self.cfg.id {
                    EndNodeId::A => image[0],
                    EndNodeId::B => image[1],
                };
                let Some(own_image) = self.sent_ring[own_id as usize].as_ref() else {
                    return Ok(DownlinkOutcome::Unusable);
                };
                let extracted = xor_extract(image, own_image)?;
                let (header, payload, crc_ok) = decode_packet(&extracted, self.cfg.data_section)?;
                if crc_ok {
                    Ok(DownlinkOutcome::Data { header, payload })
                } else {
                    Ok(DownlinkOutcome::Unusable)
                }
            }
        }
    }
}

/// What the relay saw in one uplink slot after decoding.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum UplinkReception {
    None,
    /// Exactly one end node transmitted and its packet decoded correctly.
    Single(Vec<u8>),
    /// Both transmitted; the XOR image passed the relay-side check.
    Xor(Vec<u8>),
    /// Decoding failed (erased or checksum mismatch). Nothing is forwarded
    /// and no retransmission is requested.
    Failed,
}

#[derive(Clone, Debug)]
pub struct RelayMacConfig {
    pub tx_gap: u64,
    pub data_section: usize,
}

/// Relay MAC: forward-once queue plus the beacon policy. The relay's slot
/// grid comes from its own hardware clock, so there is no tracking state.
pub struct RelayMac {
    pub cfg: RelayMacConfig,
    forward_queue: VecDeque<Vec<u8>>,
    pub slots_since_downlink: u64,
    beacon_image: Vec<u8>,
    pub forwarded: u64,
    pub beacons_sent: u64,
}

impl RelayMac {
    pub fn new(cfg: RelayMacConfig) -> Self {
        let beacon_image =
            encode_packet(&LinkHeader::default(), &[], cfg.data_section).expect("beacon encodes");
        RelayMac {
            cfg,
            forward_queue: VecDeque::new(),
            slots_since_downlink: 0,
            beacon_image,
            forwarded: 0,
            beacons_sent: 0,
        }
    }

    pub fn forward_depth(&self) -> usize {
        self.forward_queue.len()
    }

    /// Screen a raw uplink slot: single-user packets take the transmitter
    /// check, XOR packets the relay-side check.
    pub fn screen_uplink(
        &self,
        images: Vec<(EndNodeId, Vec<u8>)>,
    ) -> Result<UplinkReception, MacError> {
        match images.len() {
            0 => Ok(UplinkReception::None),
            1 => {
                let (_, image) = images.into_iter().next().unwrap();
                let (_, _, crc_ok) = decode_packet(&image, self.cfg.data_section)?;
                Ok(if crc_ok { UplinkReception::Single(image) } else { UplinkReception::Failed })
            }
            _ => {
                let mut it = images.into_iter();
                let (_, a) = it.next().unwrap();
                let (_, b) = it.next().unwrap();
                let xor = xor_extract(&a, &b)?;
                Ok(if verify_xor_packet(&xor, self.cfg.data_section)? {
                    UplinkReception::Xor(xor)
                } else {
                    UplinkReception::Failed
                })
            }
        }
    }

    /// Uplink slot decode finished: forward anything that survived, once.
    pub fn on_uplink_decoded(&mut self, reception: UplinkReception) {
        match reception {
            UplinkReception::Single(image) | UplinkReception::Xor(image) => {
                self.forward_queue.push_back(image);
                self.forwarded += 1;
            }
            UplinkReception::None | UplinkReception::Failed => {}
        }
    }

    /// The relay's counting block saw its slot boundary `n`: emit the head
    /// of the forward queue for slot `n + 1`, or a beacon if the downlink
    /// has been idle for `tx_gap` slots.
    pub fn on_slot_detect(&mut self, n: i64) -> Option<TxPlan> {
        if let Some(image) = self.forward_queue.pop_front() {
            self.slots_since_downlink = 0;
            return Some(TxPlan { target_slot: n + 1, image });
        }
        if self.slots_since_downlink >= self.cfg.tx_gap {
            self.slots_since_downlink = 0;
            self.beacons_sent += 1;
            return Some(TxPlan { target_slot: n + 1, image: self.beacon_image.clone() });
        }
        self.slots_since_downlink += 1;
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::time::PS_PER_MS;

    const TS: i64 = 10 * PS_PER_MS;
    const SP: i64 = 200_000;
    const D: usize = 256; // small data section keeps tests snappy

    fn cfg(id: EndNodeId) -> EndNodeMacConfig {
        EndNodeMacConfig {
            id,
            slot_duration_ps: TS,
            sample_period_ps: SP,
            window: 10,
            tx_gap: 1,
            data_section: D,
            realign_enabled: true,
            ts_parity: None,
        }
    }

    fn data_pkt(seq: u8, payload: &[u8], ready_at_ps: i64) -> OutgoingPacket {
        OutgoingPacket {
            header: LinkHeader {
                data_len: payload.len() as u16,
                seq_flag: true,
                seq_no: seq,
                ..Default::default()
            },
            payload: payload.to_vec(),
            ready_at_ps,
        }
    }

    #[test]
    fn init_to_sync_on_first_reference() {
        let mut mac = EndNodeMac::new(cfg(EndNodeId::A));
        assert_eq!(mac.rx_state, RxState::Init);
        assert!(mac.on_slot_detect(0, 0).unwrap().transmit.is_none());
        let became = mac.on_reference_detected(HwInstant(100 * PS_PER_MS));
        assert!(became);
        assert_eq!(mac.rx_state, RxState::Sync);
        // Boundaries anchored per the arrival.
        assert_eq!(mac.sched.as_ref().unwrap().boundary(3), HwInstant(130 * PS_PER_MS));
    }

    #[test]
    fn one_slot_ahead_transmission() {
        let mut mac = EndNodeMac::new(cfg(EndNodeId::A));
        mac.on_reference_detected(HwInstant(0));
        mac.enqueue_outgoing(data_pkt(0, b"hello", PS_PER_MS));
        let now = 5 * TS + PS_PER_MS;
        let out = mac.on_slot_detect(5, now).unwrap();
        let tx = out.transmit.expect("packet scheduled");
        assert_eq!(tx.target_slot, 6);
        // Slot ID byte is set and nonzero; node A writes byte 0.
        assert_eq!(tx.image[0], EndNodeMac::slot_id_for(6));
        assert_eq!(tx.image[1], 0);
    }

    #[test]
    fn empty_queue_skips_slot() {
        let mut mac = EndNodeMac::new(cfg(EndNodeId::B));
        mac.on_reference_detected(HwInstant(0));
        let out = mac.on_slot_detect(4, 4 * TS).unwrap();
        assert!(out.transmit.is_none());
    }

    #[test]
    fn packet_not_ready_until_encode_latency_elapses() {
        let mut mac = EndNodeMac::new(cfg(EndNodeId::A));
        mac.on_reference_detected(HwInstant(0));
        mac.enqueue_outgoing(data_pkt(0, b"x", 20 * TS));
        assert!(mac.on_slot_detect(3, 3 * TS).unwrap().transmit.is_none());
        assert!(mac.on_slot_detect(20, 20 * TS).unwrap().transmit.is_some());
    }

    #[test]
    fn ts_parity_gates_target_slots() {
        let mut c = cfg(EndNodeId::A);
        c.ts_parity = Some(0);
        let mut mac = EndNodeMac::new(c);
        mac.on_reference_detected(HwInstant(0));
        for i in 0..4 {
            mac.enqueue_outgoing(data_pkt(i, b"p", 0));
        }
        // Detection of slot 5 targets slot 6 (even): allowed.
        assert!(mac.on_slot_detect(5, 5 * TS).unwrap().transmit.is_some());
        // Detection of slot 6 targets slot 7 (odd): gated.
        assert!(mac.on_slot_detect(6, 6 * TS).unwrap().transmit.is_none());
    }

    #[test]
    fn window_trigger_realigns_and_clears() {
        let mut mac = EndNodeMac::new(cfg(EndNodeId::A));
        mac.on_reference_detected(HwInstant(0));
        // Arrivals 1.2 samples late in slots 0..=3.
        for slot in 0..4i64 {
            let t = HwInstant(slot * TS + (12 * SP) / 10);
            assert!(!mac.on_reference_detected(t));
        }
        for n in 0..9 {
            let out = mac.on_slot_detect(n, n * TS).unwrap();
            assert_eq!(out.realigned, None, "no trigger before slot 9");
        }
        let out = mac.on_slot_detect(9, 9 * TS).unwrap();
        assert_eq!(out.realigned, Some(1));
        assert_eq!(mac.sched.as_ref().unwrap().cumulative_adjust_samples(), 1);
    }

    #[test]
    fn sync_loss_after_ten_reference_intervals() {
        let mut mac = EndNodeMac::new(cfg(EndNodeId::A)); // tx_gap 1
        mac.on_reference_detected(HwInstant(0));
        let mut lost = false;
        for n in 0..=11 {
            let out = mac.on_slot_detect(n, n * TS).unwrap();
            if out.sync_lost {
                lost = true;
                assert_eq!(n, 10, "loss on the eleventh silent slot");
                break;
            }
        }
        assert!(lost);
        assert_eq!(mac.rx_state, RxState::Init);
        // A later beacon re-anchors.
        assert!(mac.on_reference_detected(HwInstant(50 * TS + 777 * SP)));
        assert_eq!(mac.rx_state, RxState::Sync);
        assert_eq!(mac.sched.as_ref().unwrap().window_index(), 0);
    }

    #[test]
    fn downlink_classification_and_xor_extraction() {
        let d = D;
        let mut mac_a = EndNodeMac::new(cfg(EndNodeId::A));
        mac_a.on_reference_detected(HwInstant(0));
        // A transmits in slot 6.
        mac_a.enqueue_outgoing(data_pkt(9, b"from A", 0));
        let tx_a = mac_a.on_slot_detect(5, 5 * TS).unwrap().transmit.unwrap();

        // B's concurrent packet.
        let mut hb = LinkHeader {
            data_len: 6,
            seq_flag: true,
            seq_no: 3,
            slot_id_b: EndNodeMac::slot_id_for(6),
            ..Default::default()
        };
        let img_b = encode_packet(&hb, b"from B", d).unwrap();
        let xor = xor_extract(&tx_a.image, &img_b).unwrap();

        // Relay screens and forwards; A extracts B's payload.
        let relay = RelayMac::new(RelayMacConfig { tx_gap: 10, data_section: d });
        let rec = relay
            .screen_uplink(vec![(EndNodeId::A, tx_a.image.clone()), (EndNodeId::B, img_b.clone())])
            .unwrap();
        assert_eq!(rec, UplinkReception::Xor(xor));
        let UplinkReception::Xor(fwd) = rec else { unreachable!() };
        match mac_a.on_downlink(&fwd).unwrap() {
            DownlinkOutcome::Data { header, payload } => {
                assert_eq!(payload, b"from B");
                assert_eq!(header.seq_no, 3);
            }
            other => panic!("unexpected {other:?}"),
        }

        // The same packet seen by a node that never transmitted half of it
        // is unusable (no self history).
        let mut mac_b = EndNodeMac::new(cfg(EndNodeId::B));
        mac_b.on_reference_detected(HwInstant(0));
        assert_eq!(mac_b.on_downlink(&fwd).unwrap(), DownlinkOutcome::Unusable);

        // Single-user downlink: B alone.
        hb.slot_id_b = 77;
        let img_b2 = encode_packet(&hb, b"from B", d).unwrap();
        match mac_a.on_downlink(&img_b2).unwrap() {
            DownlinkOutcome::Data { payload, .. } => assert_eq!(payload, b"from B"),
            other => panic!("unexpected {other:?}"),
        }
        // Self echo for B, beacon for both.
        assert_eq!(mac_b.on_downlink(&img_b2).unwrap(), DownlinkOutcome::SelfEcho);
        let beacon = encode_packet(&LinkHeader::default(), &[], d).unwrap();
        assert_eq!(mac_a.on_downlink(&beacon).unwrap(), DownlinkOutcome::Beacon);
    }

    #[test]
    fn relay_forwards_once_and_beacons_when_idle() {
        let d = D;
        let mut relay = RelayMac::new(RelayMacConfig { tx_gap: 3, data_section: d });
        let h = LinkHeader {
            data_len: 2,
            seq_flag: true,
            seq_no: 1,
            slot_id_a: 5,
            ..Default::default()
        };
        let img = encode_packet(&h, b"ab", d).unwrap();
        let rec = relay.screen_uplink(vec![(EndNodeId::A, img.clone())]).unwrap();
        assert_eq!(rec, UplinkReception::Single(img.clone()));
        relay.on_uplink_decoded(rec);
        // Forwarded exactly once.
        let tx = relay.on_slot_detect(7).unwrap();
        assert_eq!(tx.target_slot, 8);
        assert_eq!(tx.image, img);
        assert_eq!(relay.forward_depth(), 0);
        // Idle slots accumulate until the beacon gap fires.
        assert!(relay.on_slot_detect(8).is_none());
        assert!(relay.on_slot_detect(9).is_none());
        assert!(relay.on_slot_detect(10).is_none());
        let beacon = relay.on_slot_detect(11).expect("beacon due");
        assert!(beacon.image[..16 + d].iter().all(|&b| b == 0));
        assert_eq!(relay.beacons_sent, 1);
    }

    #[test]
    fn relay_drops_corrupted_uplink_silently() {
        let d = D;
        let mut relay = RelayMac::new(RelayMacConfig { tx_gap: 10, data_section: d });
        let h = LinkHeader { data_len: 2, seq_flag: true, slot_id_a: 9, ..Default::default() };
        let mut img = encode_packet(&h, b"ab", d).unwrap();
        img[20] ^= 0xFF; // corrupt the data section
        let rec = relay.screen_uplink(vec![(EndNodeId::A, img)]).unwrap();
        assert_eq!(rec, UplinkReception::Failed);
        relay.on_uplink_decoded(rec);
        assert_eq!(relay.forward_depth(), 0);
        assert_eq!(relay.forwarded, 0);
    }

    #[test]
    fn beacon_every_slot_when_tx_gap_zero() {
        let mut relay = RelayMac::new(RelayMacConfig { tx_gap: 0, data_section: D });
        for n in 0..5 {
            assert!(relay.on_slot_detect(n).is_some());
        }
        assert_eq!(relay.beacons_sent, 5);
    }
}
