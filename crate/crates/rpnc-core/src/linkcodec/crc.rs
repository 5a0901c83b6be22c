//! IEEE 802.11 frame check sequence and its XOR-packet variant.
//!
//! Transmitters compute the standard CRC-32: register preset to all-ones
//! (the `L(x)` term), reflected bit order, final complement. A relay that
//! decodes the XOR of two simultaneously transmitted packets cannot reuse
//! that check directly because the preset and the complement are affine, not
//! linear: XORing two transmitter-side CRCs cancels both. The XOR packet is
//! therefore checked against the plain polynomial remainder with no preset
//! and no complement ([`crc32_xor_raw`]).

/// Reflected form of the degree-32 generator polynomial.
const POLY_REFLECTED: u32 = 0xEDB8_8320;

const fn build_table() -> [u32; 256] {
    let mut table = [0u32; 256];
    let mut i = 0;
    while i < 256 {
        let mut crc = i as u32;
        let mut bit = 0;
        while bit < 8 {
            crc = if crc & 1 != 0 { (crc >> 1) ^ POLY_REFLECTED } else { crc >> 1 };
            bit += 1;
        }
        table[i] = crc;
        i += 1;
    }
    table
}

static CRC_TABLE: [u32; 256] = build_table();

fn crc32_with(init: u32, xorout: u32, bytes: &[u8]) -> u32 {
    let mut crc = init;
    for &b in bytes {
        crc = (crc >> 8) ^ CRC_TABLE[((crc ^ b as u32) & 0xFF) as usize];
    }
    crc ^ xorout
}

/// The CRC-32 a transmitter puts in the frame check sequence.
pub fn crc32_dot11(bytes: &[u8]) -> u32 {
    crc32_with(0xFFFF_FFFF, 0xFFFF_FFFF, bytes)
}

/// Plain `P(x)*x^32 mod G(x)` remainder: no register preset, no final
/// complement. Equals the XOR of the two transmitter-side CRCs when `bytes`
/// is the XOR of the two transmitted bit streams.
pub fn crc32_xor_raw(bytes: &[u8]) -> u32 {
    crc32_with(0, 0, bytes)
}

/// Check an XOR packet region against its received (XORed) frame check
/// sequence.
pub fn verify_xor_crc(bytes: &[u8], crc_rx: u32) -> bool {
    crc32_xor_raw(bytes) == crc_rx
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, RngCore, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Bit-serial long division oracle. Bits enter in transmission order
    /// (LSB first within each byte); the first 32 message bits are
    /// complemented (the L(x) preset), 32 zero bits are appended (the x^32
    /// shift), and the stream is divided by the generator. Remainder bit for
    /// x^31 is transmitted first, i.e. it lands in bit 0 of the returned
    /// word.
    fn crc32_bit_serial(bytes: &[u8], preset: bool, complement: bool) -> u32 {
        const G: u64 = 0x1_04C1_1DB7; // x^32 + ... + 1, 33 bits
        let mut bits: Vec<u8> = Vec::with_capacity(bytes.len() * 8 + 32);
        for &b in bytes {
            for i in 0..8 {
                bits.push((b >> i) & 1);
            }
        }
        bits.extend(std::iter::repeat(0).take(32));
        if preset {
            // L(x) complements the 32 highest-order positions of the padded
            // stream, which for short messages reach into the padding.
            for bit in bits.iter_mut().take(32) {
                *bit ^= 1;
            }
        }

        let mut reg: u64 = 0;
        for &bit in &bits {
            reg = (reg << 1) | bit as u64;
            if reg & (1 << 32) != 0 {
                reg ^= G;
            }
        }
        // reg holds the remainder, x^31 coefficient at bit 31.
        let mut out = 0u32;
        for i in 0..32 {
            let coeff = ((reg >> (31 - i)) & 1) as u32; // x^(31-i)... bit for x^31 first
            out |= coeff << i;
        }
        if complement {
            out = !out;
        }
        out
    }

    #[test]
    fn published_check_value() {
        // The standard check input for this generator.
        assert_eq!(crc32_dot11(b"123456789"), 0xCBF4_3926);
        assert_eq!(crc32_bit_serial(b"123456789", true, true), 0xCBF4_3926);
    }

    #[test]
    fn empty_input_is_complement_of_preset() {
        assert_eq!(crc32_dot11(&[]), 0x0000_0000);
        assert_eq!(crc32_xor_raw(&[]), 0);
    }

    #[test]
    fn table_matches_bit_serial_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5EED);
        for _ in 0..300 {
            let len = rng.gen_range(0..256);
            let mut buf = vec![0u8; len];
            rng.fill_bytes(&mut buf);
            assert_eq!(crc32_dot11(&buf), crc32_bit_serial(&buf, true, true));
            assert_eq!(crc32_xor_raw(&buf), crc32_bit_serial(&buf, false, false));
        }
    }

    #[test]
    fn single_bit_flips_always_change_crc() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut buf = vec![0u8; 1000];
        rng.fill_bytes(&mut buf);
        let base = crc32_dot11(&buf);
        for _ in 0..10_000 {
            let bit = rng.gen_range(0..buf.len() * 8);
            buf[bit / 8] ^= 1 << (bit % 8);
            assert_ne!(crc32_dot11(&buf), base);
            buf[bit / 8] ^= 1 << (bit % 8);
        }
    }

    #[test]
    fn xor_of_transmitter_crcs_verifies_as_raw_remainder() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let len = rng.gen_range(1..512);
            let mut a = vec![0u8; len];
            let mut b = vec![0u8; len];
            rng.fill_bytes(&mut a);
            rng.fill_bytes(&mut b);
            let xored: Vec<u8> = a.iter().zip(&b).map(|(x, y)| x ^ y).collect();
            let crc_xor = crc32_dot11(&a) ^ crc32_dot11(&b);
            assert!(verify_xor_crc(&xored, crc_xor));
            // Identical payloads cancel to all zeros with a zero CRC.
            let self_xor: Vec<u8> = a.iter().map(|x| x ^ x).collect();
            assert!(verify_xor_crc(&self_xor, crc32_dot11(&a) ^ crc32_dot11(&a)));
        }
    }

    #[test]
    fn xor_crc_detects_single_bit_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut a = vec![0u8; 256];
        let mut b = vec![0u8; 256];
        rng.fill_bytes(&mut a);
        rng.fill_bytes(&mut b);
        let mut xored: Vec<u8> = a.iter().zip(&b).map(|(x, y)| x ^ y).collect();
        let crc_xor = crc32_dot11(&a) ^ crc32_dot11(&b);
        for _ in 0..1000 {
            let bit = rng.gen_range(0..xored.len() * 8);
            xored[bit / 8] ^= 1 << (bit % 8);
            assert!(!verify_xor_crc(&xored, crc_xor));
            xored[bit / 8] ^= 1 << (bit % 8);
        }
    }
}
