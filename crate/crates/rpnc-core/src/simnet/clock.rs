//! Per-node hardware clocks with parts-per-billion rate error.
//!
//! A node's oscillator produces samples at `B * (1 + ppb/1e9)` per true
//! second, but the node itself counts time as if the rate were exactly `B`.
//! Conversions between a node's sample grid and global simulated time are
//! exact integer arithmetic: tick-to-global uses a ceiling division and
//! global-to-tick a floor division chosen so that round-tripping any sample
//! index is the identity.

use crate::time::{sample_period_ps, HwInstant, SimInstant};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum ClockError {
    #[error("sample rate must divide 10^12 ps")]
    BadRate,
}

#[derive(Clone, Copy, Debug)]
pub struct HardwareClock {
    /// Hardware time of sample 0, as the node reports it (10 ns grid).
    pub t0: HwInstant,
    /// Global simulated time at which sample 0 was taken.
    pub g0: SimInstant,
    /// Nominal rate B, samples per second.
    pub nominal_rate: u64,
    /// Oscillator rate error, parts per billion.
    pub drift_ppb: i64,
    period_ps: i64,
}

const PPB: i128 = 1_000_000_000;

impl HardwareClock {
    pub fn new(
        t0: HwInstant,
        g0: SimInstant,
        nominal_rate: u64,
        drift_ppb: i64,
    ) -> Result<Self, ClockError> {
        let period_ps = sample_period_ps(nominal_rate).ok_or(ClockError::BadRate)?;
        Ok(HardwareClock { t0, g0, nominal_rate, drift_ppb, period_ps })
    }

    /// Nominal sample period in picoseconds.
    pub fn period_ps(&self) -> i64 {
        self.period_ps
    }

    fn q(&self) -> i128 {
        PPB + self.drift_ppb as i128
    }

    /// Hardware timestamp of sample `k`: exact nominal grid.
    pub fn hw_of_sample(&self, k: i64) -> HwInstant {
        self.t0 + k * self.period_ps
    }

    /// Global time at which sample `k` is taken. A fast clock (ppb > 0)
    /// takes its samples earlier in true time.
    pub fn global_of_sample(&self, k: i64) -> SimInstant {
        let num = k as i128 * self.period_ps as i128 * PPB;
        self.g0 + ceil_div(num, self.q()) as i64
    }

    /// Index of the sample interval containing global time `g`.
    pub fn sample_at_global(&self, g: SimInstant) -> i64 {
        let num = (g - self.g0) as i128 * self.q();
        floor_div(num, self.period_ps as i128 * PPB) as i64
    }

    /// Sample position of global time `g` with its fractional part.
    pub fn sample_pos_at_global(&self, g: SimInstant) -> (i64, f64) {
        let den = self.period_ps as i128 * PPB;
        let num = (g - self.g0) as i128 * self.q();
        let k = floor_div(num, den);
        let rem = num - k * den;
        (k as i64, rem as f64 / den as f64)
    }

    /// Global time of a hardware timestamp (need not be on the sample grid).
    pub fn global_of_hw(&self, t: HwInstant) -> SimInstant {
        let num = (t - self.t0) as i128 * PPB;
        self.g0 + ceil_div(num, self.q()) as i64
    }

    /// Hardware time corresponding to a global instant.
    pub fn hw_of_global(&self, g: SimInstant) -> HwInstant {
        let num = (g - self.g0) as i128 * self.q();
        self.t0 + floor_div(num, PPB) as i64
    }
}

fn floor_div(a: i128, b: i128) -> i128 {
    a.div_euclid(b)
}

fn ceil_div(a: i128, b: i128) -> i128 {
    -((-a).div_euclid(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::time::PS_PER_SEC;

    #[test]
    fn zero_drift_is_transparent() {
        let c =
            HardwareClock::new(HwInstant(0), SimInstant(PS_PER_SEC), 5_000_000, 0).unwrap();
        assert_eq!(c.global_of_sample(50_000), SimInstant(PS_PER_SEC + 50_000 * 200_000));
        assert_eq!(c.sample_at_global(SimInstant(PS_PER_SEC + 999_999)), 4);
        assert_eq!(c.hw_of_global(c.global_of_hw(HwInstant(123_456_780_000))), HwInstant(123_456_780_000));
    }

    #[test]
    fn sample_round_trip_is_identity_under_drift() {
        for ppb in [-20_000i64, -2_000, -1, 0, 1, 2_000, 20_000] {
            let c = HardwareClock::new(HwInstant(77_000), SimInstant(13), 5_000_000, ppb).unwrap();
            for k in [0i64, 1, 7, 50_000, 5_000_000, 499_999_999] {
                let g = c.global_of_sample(k);
                assert_eq!(c.sample_at_global(g), k, "ppb {ppb} k {k}");
                // The next picosecond still belongs to sample k.
                assert_eq!(c.sample_at_global(g + 1), k, "ppb {ppb} k {k}");
            }
        }
    }

    #[test]
    fn fast_clock_samples_early() {
        let fast =
            HardwareClock::new(HwInstant(0), SimInstant(0), 5_000_000, 20_000).unwrap();
        let slow =
            HardwareClock::new(HwInstant(0), SimInstant(0), 5_000_000, -20_000).unwrap();
        let k = 5_000_000; // one nominal second of samples
        assert!(fast.global_of_sample(k) < SimInstant(PS_PER_SEC));
        assert!(slow.global_of_sample(k) > SimInstant(PS_PER_SEC));
        // 20 ppm over one second is 20 us.
        let skew = SimInstant(PS_PER_SEC) - fast.global_of_sample(k);
        let expect = 20 * crate::time::PS_PER_US;
        assert!((skew - expect).abs() < 1000, "skew {skew}");
    }

    #[test]
    fn drift_accumulates_one_sample_per_slot_at_20ppm() {
        // 20 ppm of a 10 ms slot is 200 ns: exactly one 5 MHz sample.
        let c = HardwareClock::new(HwInstant(0), SimInstant(0), 5_000_000, 20_000).unwrap();
        let slot_samples = 50_000i64;
        let g_slot = c.global_of_sample(slot_samples);
        let nominal = SimInstant(10 * crate::time::PS_PER_MS);
        let skew = nominal - g_slot;
        assert!((skew - 200_000).abs() < 10, "skew {skew} ps");
    }

    #[test]
    fn fractional_positions() {
        let c = HardwareClock::new(HwInstant(0), SimInstant(0), 5_000_000, 0).unwrap();
        let (k, f) = c.sample_pos_at_global(SimInstant(300_000));
        assert_eq!(k, 1);
        assert!((f - 0.5).abs() < 1e-12);
    }
}
