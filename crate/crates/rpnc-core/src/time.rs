//! Integer time types.
//!
//! All timestamps are integer picoseconds so that sample-tick arithmetic is
//! exact over arbitrarily long runs. Two frames exist and must not be mixed:
//! a node's own hardware-clock time ([`HwInstant`], what sample counting
//! produces) and the global simulated time ([`SimInstant`], what the event
//! queue orders by). Conversion between the two goes through
//! [`crate::simnet::HardwareClock`].

pub const PS_PER_SEC: i64 = 1_000_000_000_000;
pub const PS_PER_MS: i64 = 1_000_000_000;
pub const PS_PER_US: i64 = 1_000_000;
/// Hardware start-up times are reported on a 10 ns grid.
pub const PS_PER_10NS: i64 = 10_000;

/// A point on a node's hardware clock, in picoseconds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct HwInstant(pub i64);

/// A point in global simulated time, in picoseconds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct SimInstant(pub i64);

macro_rules! instant_impl {
    ($t:ident) => {
        impl $t {
            pub fn from_secs_f64(s: f64) -> Self {
                $t((s * PS_PER_SEC as f64).round() as i64)
            }
            pub fn as_secs_f64(self) -> f64 {
                self.0 as f64 / PS_PER_SEC as f64
            }
            pub fn ps(self) -> i64 {
                self.0
            }
        }
        impl core::ops::Add<i64> for $t {
            type Output = $t;
            fn add(self, rhs: i64) -> $t {
                $t(self.0 + rhs)
            }
        }
        impl core::ops::Sub<i64> for $t {
            type Output = $t;
            fn sub(self, rhs: i64) -> $t {
                $t(self.0 - rhs)
            }
        }
        impl core::ops::Sub<$t> for $t {
            type Output = i64;
            fn sub(self, rhs: $t) -> i64 {
                self.0 - rhs.0
            }
        }
    };
}

instant_impl!(HwInstant);
instant_impl!(SimInstant);

pub fn secs_to_ps(s: f64) -> i64 {
    (s * PS_PER_SEC as f64).round() as i64
}

pub fn ps_to_secs(ps: i64) -> f64 {
    ps as f64 / PS_PER_SEC as f64
}

/// Exact picoseconds per sample for a sample rate that divides 10^12,
/// e.g. 5 MHz -> 200_000 ps.
pub fn sample_period_ps(bandwidth_hz: u64) -> Option<i64> {
    if bandwidth_hz == 0 || PS_PER_SEC as u64 % bandwidth_hz != 0 {
        return None;
    }
    Some((PS_PER_SEC as u64 / bandwidth_hz) as i64)
}
