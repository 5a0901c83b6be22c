//! Complex-baseband signal machinery.
//!
//! Covers preamble construction (short and long training symbols with cyclic
//! prefixes), the three frame-synchronization algorithms with per-operation
//! cost instrumentation, least-squares channel estimation over per-user
//! subcarrier sets, the phase-slope arrival-offset estimator, and the XOR
//! demapper for superimposed BPSK.

mod correlate;
mod csi;
mod demap;
mod fft;
mod golden;
mod preamble;

pub use correlate::{
    auto_correlate_stream, cross_correlate, sync_exhaustive_cross, sync_narrow, sync_standard,
    AutoTrace, CrossPeak, Detection, StandardSync,
};
pub use csi::{arrival_diff, estimate_csi, phase_slope_offset};
pub use demap::xor_demap_bpsk;
pub use golden::{read_golden, write_golden, GoldenManifest, GoldenVector};
pub use preamble::{gen_preamble, FieldSpan, FramePreamble, PreambleField};

use serde::{Deserialize, Serialize};

pub type Cpx = num_complex::Complex64;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum BasebandError {
    #[error("invalid OFDM parameters: {0}")]
    InvalidParams(&'static str),
    #[error("window [{start}, {end}) outside stream [{lo}, {hi})")]
    WindowOutOfBounds { start: u64, end: u64, lo: u64, hi: u64 },
    #[error("stream too short: need {need} samples, have {have}")]
    StreamTooShort { need: usize, have: usize },
    #[error("region must be {expected} samples, got {got}")]
    WrongRegionLength { expected: usize, got: usize },
    #[error("degenerate CSI: fewer than two usable subcarriers")]
    DegenerateCsi,
    #[error("channel gain is zero")]
    ZeroChannelGain,
}

/// Who a preamble belongs to. The two end nodes use distinct training
/// sequences in non-overlapping time positions; the relay has its own,
/// one OFDM symbol shorter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PreambleRole {
    EndNodeA,
    EndNodeB,
    Relay,
}

impl PreambleRole {
    pub(crate) fn seed_tag(self) -> u64 {
        match self {
            PreambleRole::EndNodeA => 0xA11C_E000,
            PreambleRole::EndNodeB => 0xB0B0_0000,
            PreambleRole::Relay => 0x5E1A_7000,
        }
    }
}

impl core::fmt::Display for PreambleRole {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(match self {
            PreambleRole::EndNodeA => "A",
            PreambleRole::EndNodeB => "B",
            PreambleRole::Relay => "R",
        })
    }
}

/// OFDM dimensioning. The two repeated short training symbols plus their
/// cyclic prefix span exactly one OFDM symbol, so `2 * sts_len ==
/// n_subcarriers`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OfdmParams {
    /// Samples per OFDM symbol body (N_s).
    pub n_subcarriers: usize,
    /// Cyclic prefix length (C).
    pub cp_len: usize,
    /// Short training symbol length (L).
    pub sts_len: usize,
    /// Sample rate (B), samples per second.
    pub bandwidth_hz: u64,
}

impl Default for OfdmParams {
    fn default() -> Self {
        OfdmParams { n_subcarriers: 64, cp_len: 32, sts_len: 32, bandwidth_hz: 5_000_000 }
    }
}

impl OfdmParams {
    pub fn validate(&self) -> Result<(), BasebandError> {
        if self.n_subcarriers == 0 || self.cp_len == 0 || self.sts_len == 0 {
            return Err(BasebandError::InvalidParams("all counts must be positive"));
        }
        if !self.n_subcarriers.is_power_of_two() {
            return Err(BasebandError::InvalidParams("n_subcarriers must be a power of two"));
        }
        if self.cp_len >= self.n_subcarriers {
            return Err(BasebandError::InvalidParams("cp_len must be below n_subcarriers"));
        }
        if 2 * self.sts_len != self.n_subcarriers {
            return Err(BasebandError::InvalidParams(
                "2*sts_len + cp_len must span one OFDM symbol (2*sts_len == n_subcarriers)",
            ));
        }
        if self.bandwidth_hz == 0 {
            return Err(BasebandError::InvalidParams("bandwidth must be positive"));
        }
        Ok(())
    }

    /// Cyclic prefix plus body.
    pub fn symbol_len(&self) -> usize {
        self.cp_len + self.n_subcarriers
    }

    /// Signed subcarrier indices carrying energy, 802.11-style: guard bands
    /// and DC are null, `|s|` up to 13/32 of the FFT size is used.
    pub fn used_subcarriers(&self) -> Vec<i32> {
        let half = (self.n_subcarriers * 13 / 32) as i32;
        let mut v: Vec<i32> = (-half..=-1).collect();
        v.extend(1..=half);
        v
    }

    /// The disjoint per-user split of the used subcarriers: even signed
    /// indices for end node A, odd for end node B, all of them for the relay.
    pub fn lts_subcarriers(&self, role: PreambleRole) -> Vec<i32> {
        self.used_subcarriers()
            .into_iter()
            .filter(|s| match role {
                PreambleRole::EndNodeA => s % 2 == 0,
                PreambleRole::EndNodeB => s % 2 != 0,
                PreambleRole::Relay => true,
            })
            .collect()
    }

    /// Map a signed subcarrier index to its FFT bin.
    pub fn bin_of(&self, s: i32) -> usize {
        if s >= 0 {
            s as usize
        } else {
            (self.n_subcarriers as i32 + s) as usize
        }
    }

    /// Map an FFT bin to its signed subcarrier index.
    pub fn signed_of(&self, bin: usize) -> i32 {
        if bin <= self.n_subcarriers / 2 {
            bin as i32
        } else {
            bin as i32 - self.n_subcarriers as i32
        }
    }
}

/// A run of baseband samples positioned on the owning node's sample
/// timeline: `samples[0]` is absolute sample tick `origin_tick`.
#[derive(Clone, Debug, Default)]
pub struct SampleStream {
    pub origin_tick: u64,
    pub samples: Vec<Cpx>,
}

impl SampleStream {
    pub fn new(origin_tick: u64, samples: Vec<Cpx>) -> Self {
        SampleStream { origin_tick, samples }
    }

    pub fn zeros(origin_tick: u64, len: usize) -> Self {
        SampleStream { origin_tick, samples: vec![Cpx::new(0.0, 0.0); len] }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// One past the last absolute tick.
    pub fn end_tick(&self) -> u64 {
        self.origin_tick + self.samples.len() as u64
    }

    pub fn get(&self, tick: u64) -> Option<Cpx> {
        if tick < self.origin_tick {
            return None;
        }
        self.samples.get((tick - self.origin_tick) as usize).copied()
    }

    /// Add `signal` into this stream starting at absolute `tick`, clipping to
    /// the overlap.
    pub fn mix_at(&mut self, tick: i64, signal: &[Cpx]) {
        for (i, &s) in signal.iter().enumerate() {
            let abs = tick + i as i64;
            if abs < self.origin_tick as i64 {
                continue;
            }
            let idx = (abs - self.origin_tick as i64) as usize;
            if idx >= self.samples.len() {
                break;
            }
            self.samples[idx] += s;
        }
    }

    pub fn window(&self, start: u64, len: usize) -> Result<&[Cpx], BasebandError> {
        let end = start + len as u64;
        if start < self.origin_tick || end > self.end_tick() {
            return Err(BasebandError::WindowOutOfBounds {
                start,
                end,
                lo: self.origin_tick,
                hi: self.end_tick(),
            });
        }
        let s = (start - self.origin_tick) as usize;
        Ok(&self.samples[s..s + len])
    }
}

/// Running tally of correlation-kernel arithmetic. Only the complex
/// multiply/accumulate work of the correlators is counted; normalization
/// energies are maintained with real-valued prefix sums.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CorrelatorCost {
    pub complex_multiplies: u64,
    pub complex_adds: u64,
}

impl CorrelatorCost {
    pub fn merge(&mut self, other: CorrelatorCost) {
        self.complex_multiplies += other.complex_multiplies;
        self.complex_adds += other.complex_adds;
    }
}

/// Per-subcarrier channel gains estimated from one user's long training
/// symbols. Unused bins hold zero.
#[derive(Clone, Debug)]
pub struct Csi {
    pub per_subcarrier_gain: Vec<Cpx>,
    pub used_bins: Vec<usize>,
    pub source_role: PreambleRole,
}
