//! XOR demapping of superimposed BPSK.
//!
//! The relay never recovers the two uplink bit streams separately; it maps
//! each received symbol straight to the XOR of the two transmitted bits by
//! picking the most likely `(bit_a, bit_b)` pair on the 4-point superimposed
//! constellation. Pairs that are ambiguous under symmetric channels map to
//! the same XOR value, which is exactly why the mapping works.

use super::{BasebandError, Cpx};

/// Map received symbols to XOR bits. Bit 0 transmits as `+h`, bit 1 as `-h`.
pub fn xor_demap_bpsk(y: &[Cpx], h_a: Cpx, h_b: Cpx) -> Result<Vec<bool>, BasebandError> {
    if h_a.norm_sqr() == 0.0 || h_b.norm_sqr() == 0.0 {
        return Err(BasebandError::ZeroChannelGain);
    }
    // The four constellation points and their XOR labels.
    let points = [
        (h_a + h_b, false),  // (0, 0)
        (h_a - h_b, true),   // (0, 1)
        (-h_a + h_b, true),  // (1, 0)
        (-h_a - h_b, false), // (1, 1)
    ];
    Ok(y.iter()
        .map(|&v| {
            points
                .iter()
                .min_by(|(p, _), (q, _)| {
                    (v - p).norm_sqr().partial_cmp(&(v - q).norm_sqr()).unwrap()
                })
                .unwrap()
                .1
        })
        .collect())
}

/// BPSK mapping used by the tests and the sample-level channel.
pub fn bpsk(bit: bool) -> f64 {
    if bit {
        -1.0
    } else {
        1.0
    }
}
