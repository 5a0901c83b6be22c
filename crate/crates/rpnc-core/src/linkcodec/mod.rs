//! Link-layer packet codec.
//!
//! Every packet is `header (16) || data section (D, fixed) || crc (4)`.
//! The data section size `D` is constant for all packets on a link and the
//! CRC sits at a fixed position so that the relay can check XOR packets
//! without parsing them. Short payloads are zero-padded; the true length
//! travels in the header.
//!
//! Header layout, byte by byte:
//!
//! ```text
//! byte 0      slot ID of end node A (0 = no embedded packet from A)
//! byte 1      slot ID of end node B (0 = no embedded packet from B)
//! bytes 2-3   data length, little-endian; low 11 bits used (max 2048)
//! byte 4      reserved, 0
//! byte 5      bit 0 SEQ flag, bit 1 ACK flag, bits 2-4 reserved,
//!             bits 5-7 SACK block count (0..=4)
//! byte 6      sequence number
//! byte 7      acknowledgement number
//! bytes 8-15  four SACK block slots, 2 bytes each: (start seq, run length);
//!             unused slots are zero
//! ```
//!
//! The CRC is the transmitter-side [`crc32_dot11`] over `header || data`,
//! appended little-endian. In the uplink, simultaneous transmissions
//! superpose to the bitwise XOR of the two packet images; each transmitter
//! writes only its own slot-ID byte and zeroes the other's, so the slot-ID
//! bytes of the XOR image carry both IDs unmixed.

mod crc;

pub use crc::{crc32_dot11, crc32_xor_raw, verify_xor_crc};

use serde::{Deserialize, Serialize};

pub const HEADER_LEN: usize = 16;
pub const CRC_LEN: usize = 4;
/// Largest payload the 11-bit length field can describe.
pub const MAX_DATA_LEN: usize = 2048;
/// Default fixed data-section size: covers a 1500-byte MTU frame and makes
/// the whole packet 1536 bytes.
pub const DEFAULT_DATA_SECTION: usize = 1516;
pub const MAX_SACK_BLOCKS: usize = 4;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum CodecError {
    #[error("payload of {got} bytes exceeds limit {limit}")]
    OversizePayload { got: usize, limit: usize },
    #[error("header data_len {header} disagrees with payload length {payload}")]
    LengthMismatch { header: usize, payload: usize },
    #[error("packet is {got} bytes, expected {expected}")]
    WrongPacketLength { got: usize, expected: usize },
    #[error("more than {MAX_SACK_BLOCKS} SACK blocks")]
    TooManySackBlocks,
    #[error("XOR operands differ in length ({0} vs {1})")]
    XorLengthMismatch(usize, usize),
}

/// Which end node an observer is.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EndNodeId {
    A,
    B,
}

impl EndNodeId {
    pub fn other(self) -> EndNodeId {
        match self {
            EndNodeId::A => EndNodeId::B,
            EndNodeId::B => EndNodeId::A,
        }
    }
}

impl core::fmt::Display for EndNodeId {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(match self {
            EndNodeId::A => "A",
            EndNodeId::B => "B",
        })
    }
}

/// A run of consecutively received out-of-order sequence numbers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SackBlock {
    pub start_seq: u8,
    /// Number of packets in the run, >= 1.
    pub length: u8,
}

#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct LinkHeader {
    pub slot_id_a: u8,
    pub slot_id_b: u8,
    pub data_len: u16,
    pub seq_flag: bool,
    pub ack_flag: bool,
    pub seq_no: u8,
    pub ack_no: u8,
    pub sack_blocks: Vec<SackBlock>,
}

impl LinkHeader {
    pub fn to_bytes(&self) -> Result<[u8; HEADER_LEN], CodecError> {
        if self.sack_blocks.len() > MAX_SACK_BLOCKS {
            return Err(CodecError::TooManySackBlocks);
        }
        let mut b = [0u8; HEADER_LEN];
        b[0] = self.slot_id_a;
        b[1] = self.slot_id_b;
        b[2..4].copy_from_slice(&(self.data_len & 0x07FF).to_le_bytes());
        b[5] = (self.seq_flag as u8)
            | (self.ack_flag as u8) << 1
            | (self.sack_blocks.len() as u8) << 5;
        b[6] = self.seq_no;
        b[7] = self.ack_no;
        for (i, blk) in self.sack_blocks.iter().enumerate() {
            b[8 + 2 * i] = blk.start_seq;
            b[9 + 2 * i] = blk.length;
        }
        Ok(b)
    }

    pub fn from_bytes(b: &[u8; HEADER_LEN]) -> LinkHeader {
        let count = ((b[5] >> 5) as usize).min(MAX_SACK_BLOCKS);
        let sack_blocks = (0..count)
            .map(|i| SackBlock { start_seq: b[8 + 2 * i], length: b[9 + 2 * i] })
            .collect();
        LinkHeader {
            slot_id_a: b[0],
            slot_id_b: b[1],
            data_len: u16::from_le_bytes([b[2], b[3]]) & 0x07FF,
            seq_flag: b[5] & 1 != 0,
            ack_flag: b[5] & 2 != 0,
            seq_no: b[6],
            ack_no: b[7],
            sack_blocks,
        }
    }
}

/// What a downlink packet is, from one end node's point of view.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DownlinkKind {
    /// Both slot IDs set: XOR of the two uplink packets.
    XorPacket,
    /// Only the other node's slot ID set: its packet, forwarded unmixed.
    FromOther,
    /// Only my slot ID set: my own packet echoed back; discard.
    SelfEcho,
    /// Neither set: timing beacon.
    Beacon,
}

/// Classify a downlink packet from its two slot-ID bytes.
pub fn classify_slot_ids(slot_id_a: u8, slot_id_b: u8, me: EndNodeId) -> DownlinkKind {
    let (mine, other) = match me {
        EndNodeId::A => (slot_id_a, slot_id_b),
        EndNodeId::B => (slot_id_b, slot_id_a),
    };
    match (mine != 0, other != 0) {
        (true, true) => DownlinkKind::XorPacket,
        (false, true) => DownlinkKind::FromOther,
        (true, false) => DownlinkKind::SelfEcho,
        (false, false) => DownlinkKind::Beacon,
    }
}

pub fn classify_downlink(h: &LinkHeader, me: EndNodeId) -> DownlinkKind {
    classify_slot_ids(h.slot_id_a, h.slot_id_b, me)
}

pub fn packet_len(data_section: usize) -> usize {
    HEADER_LEN + data_section + CRC_LEN
}

/// Serialize `header || zero-padded data || crc`.
pub fn encode_packet(
    header: &LinkHeader,
    payload: &[u8],
    data_section: usize,
) -> Result<Vec<u8>, CodecError> {
    let limit = data_section.min(MAX_DATA_LEN);
    if payload.len() > limit {
        return Err(CodecError::OversizePayload { got: payload.len(), limit });
    }
    if header.data_len as usize != payload.len() {
        return Err(CodecError::LengthMismatch {
            header: header.data_len as usize,
            payload: payload.len(),
        });
    }
    let mut out = Vec::with_capacity(packet_len(data_section));
    out.extend_from_slice(&header.to_bytes()?);
    out.extend_from_slice(payload);
    out.resize(HEADER_LEN + data_section, 0);
    let crc = crc32_dot11(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

/// Parse a packet image. Fields are recovered even when the CRC does not
/// match; `crc_ok` reports the transmitter-side check. XOR packets must be
/// checked with [`verify_xor_packet`] instead.
pub fn decode_packet(
    bytes: &[u8],
    data_section: usize,
) -> Result<(LinkHeader, Vec<u8>, bool), CodecError> {
    let expected = packet_len(data_section);
    if bytes.len() != expected {
        return Err(CodecError::WrongPacketLength { got: bytes.len(), expected });
    }
    let header = LinkHeader::from_bytes(bytes[..HEADER_LEN].try_into().unwrap());
    let data = &bytes[HEADER_LEN..HEADER_LEN + data_section];
    let payload = data[..(header.data_len as usize).min(data_section)].to_vec();
    let stored = u32::from_le_bytes(bytes[expected - CRC_LEN..].try_into().unwrap());
    let crc_ok = crc32_dot11(&bytes[..HEADER_LEN + data_section]) == stored;
    Ok((header, payload, crc_ok))
}

/// Check an XOR packet image: raw polynomial remainder over `header || data`
/// against the XORed frame check sequence.
pub fn verify_xor_packet(bytes: &[u8], data_section: usize) -> Result<bool, CodecError> {
    let expected = packet_len(data_section);
    if bytes.len() != expected {
        return Err(CodecError::WrongPacketLength { got: bytes.len(), expected });
    }
    let stored = u32::from_le_bytes(bytes[expected - CRC_LEN..].try_into().unwrap());
    Ok(verify_xor_crc(&bytes[..HEADER_LEN + data_section], stored))
}

/// Bytewise XOR, used both to superpose simultaneous uplink images and to
/// strip the self-packet out of a received XOR packet.
pub fn xor_extract(a: &[u8], b: &[u8]) -> Result<Vec<u8>, CodecError> {
    if a.len() != b.len() {
        return Err(CodecError::XorLengthMismatch(a.len(), b.len()));
    }
    Ok(a.iter().zip(b).map(|(x, y)| x ^ y).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, RngCore, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const D: usize = DEFAULT_DATA_SECTION;

    fn data_header(me: EndNodeId, slot_id: u8, seq: u8, len: usize) -> LinkHeader {
        let mut h = LinkHeader { data_len: len as u16, seq_flag: true, seq_no: seq, ..Default::default() };
        match me {
            EndNodeId::A => h.slot_id_a = slot_id,
            EndNodeId::B => h.slot_id_b = slot_id,
        }
        h
    }

    #[test]
    fn header_layout_is_byte_exact() {
        let h = LinkHeader {
            slot_id_a: 5,
            slot_id_b: 0,
            data_len: 0x04D2, // 1234, fits in 11 bits
            seq_flag: true,
            ack_flag: true,
            seq_no: 42,
            ack_no: 17,
            sack_blocks: vec![
                SackBlock { start_seq: 50, length: 2 },
                SackBlock { start_seq: 60, length: 1 },
            ],
        };
        let b = h.to_bytes().unwrap();
        // Hand-built image from the documented layout.
        let expected: [u8; 16] =
            [5, 0, 0xD2, 0x04, 0, 0b0100_0011, 42, 17, 50, 2, 60, 1, 0, 0, 0, 0];
        assert_eq!(b, expected);
        assert_eq!(LinkHeader::from_bytes(&b), h);
    }

    #[test]
    fn packet_length_is_constant() {
        for len in [0usize, 1, 700, 1516] {
            let h = data_header(EndNodeId::A, 9, 1, len);
            let p = encode_packet(&h, &vec![0xAB; len], D).unwrap();
            assert_eq!(p.len(), 16 + D + 4);
        }
    }

    #[test]
    fn round_trip_random_packets() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let len = rng.gen_range(0..=D.min(MAX_DATA_LEN));
            let mut payload = vec![0u8; len];
            rng.fill_bytes(&mut payload);
            let nblocks = rng.gen_range(0..=4);
            let h = LinkHeader {
                slot_id_a: rng.gen(),
                slot_id_b: rng.gen(),
                data_len: len as u16,
                seq_flag: rng.gen(),
                ack_flag: rng.gen(),
                seq_no: rng.gen(),
                ack_no: rng.gen(),
                sack_blocks: (0..nblocks)
                    .map(|_| SackBlock { start_seq: rng.gen(), length: rng.gen_range(1..=255) })
                    .collect(),
            };
            let bytes = encode_packet(&h, &payload, D).unwrap();
            let (h2, p2, crc_ok) = decode_packet(&bytes, D).unwrap();
            assert!(crc_ok);
            assert_eq!(h2, h);
            assert_eq!(p2, payload);
        }
    }

    #[test]
    fn corrupted_crc_still_parses() {
        let h = data_header(EndNodeId::B, 3, 9, 4);
        let mut bytes = encode_packet(&h, b"ping", D).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 0xFF;
        let (h2, p2, crc_ok) = decode_packet(&bytes, D).unwrap();
        assert!(!crc_ok);
        assert_eq!(h2, h);
        assert_eq!(p2, b"ping");
    }

    #[test]
    fn length_errors() {
        let h = data_header(EndNodeId::A, 1, 0, 10);
        assert!(matches!(
            encode_packet(&h, &[0u8; 3000], D),
            Err(CodecError::OversizePayload { .. })
        ));
        let good = encode_packet(&data_header(EndNodeId::A, 1, 0, 2), b"hi", D).unwrap();
        assert!(matches!(
            decode_packet(&good[..good.len() - 1], D),
            Err(CodecError::WrongPacketLength { .. })
        ));
    }

    #[test]
    fn beacon_is_all_zeros_and_classifies() {
        let beacon = encode_packet(&LinkHeader::default(), &[], D).unwrap();
        assert!(beacon[..16 + D].iter().all(|&b| b == 0));
        let (h, _, crc_ok) = decode_packet(&beacon, D).unwrap();
        assert!(crc_ok);
        assert_eq!(classify_downlink(&h, EndNodeId::A), DownlinkKind::Beacon);
        assert_eq!(classify_downlink(&h, EndNodeId::B), DownlinkKind::Beacon);
    }

    #[test]
    fn downlink_classification_table() {
        let h = |a, b| LinkHeader { slot_id_a: a, slot_id_b: b, ..Default::default() };
        assert_eq!(classify_downlink(&h(5, 9), EndNodeId::A), DownlinkKind::XorPacket);
        assert_eq!(classify_downlink(&h(0, 9), EndNodeId::A), DownlinkKind::FromOther);
        assert_eq!(classify_downlink(&h(5, 0), EndNodeId::A), DownlinkKind::SelfEcho);
        assert_eq!(classify_downlink(&h(0, 0), EndNodeId::A), DownlinkKind::Beacon);
        // Symmetric for B.
        assert_eq!(classify_downlink(&h(5, 0), EndNodeId::B), DownlinkKind::FromOther);
        assert_eq!(classify_downlink(&h(0, 9), EndNodeId::B), DownlinkKind::SelfEcho);
    }

    #[test]
    fn superposed_uplink_round_trip() {
        // A and B transmit simultaneously; the relay sees the XOR image.
        // Slot IDs pass through because each node zeroes the other's byte.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut pa = vec![0u8; 100];
        let mut pb = vec![0u8; 64];
        rng.fill_bytes(&mut pa);
        rng.fill_bytes(&mut pb);
        let img_a = encode_packet(&data_header(EndNodeId::A, 7, 1, pa.len()), &pa, D).unwrap();
        let img_b = encode_packet(&data_header(EndNodeId::B, 7, 2, pb.len()), &pb, D).unwrap();
        let xor = xor_extract(&img_a, &img_b).unwrap();

        assert_eq!(xor[0], 7);
        assert_eq!(xor[1], 7);
        // Relay-side check passes on the XOR image without decoding it.
        assert!(verify_xor_packet(&xor, D).unwrap());
        // ... and fails once any bit is corrupted.
        let mut bad = xor.clone();
        bad[20] ^= 0x10;
        assert!(!verify_xor_packet(&bad, D).unwrap());

        // End node A strips its own image and recovers B's packet intact.
        let recovered = xor_extract(&xor, &img_a).unwrap();
        assert_eq!(recovered, img_b);
        let (hb, payload_b, crc_ok) = decode_packet(&recovered, D).unwrap();
        assert!(crc_ok);
        assert_eq!(classify_downlink(&hb, EndNodeId::A), DownlinkKind::FromOther);
        assert_eq!(payload_b, pb);
    }

    #[test]
    fn xor_involution_and_errors() {
        let a = vec![1u8, 2, 3];
        let b = vec![9u8, 8, 7];
        let x = xor_extract(&a, &b).unwrap();
        assert_eq!(xor_extract(&x, &a).unwrap(), b);
        assert_eq!(xor_extract(&a, &a).unwrap(), vec![0, 0, 0]);
        assert!(matches!(xor_extract(&a, &b[..2]), Err(CodecError::XorLengthMismatch(3, 2))));
    }

    #[test]
    fn uplink_slot_id_exclusivity() {
        // A packet built by node A always has byte 1 zero before superposition.
        let img_a = encode_packet(&data_header(EndNodeId::A, 200, 0, 1), b"x", D).unwrap();
        assert_eq!(img_a[1], 0);
        let img_b = encode_packet(&data_header(EndNodeId::B, 200, 0, 1), b"y", D).unwrap();
        assert_eq!(img_b[0], 0);
    }
}
