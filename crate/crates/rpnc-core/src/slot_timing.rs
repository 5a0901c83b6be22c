//! Slot-boundary tracking by sample counting.
//!
//! A node derives the hardware arrival time of a reference packet by counting
//! samples from its first hardware sample: `T = T0 + N/B`. The very first
//! reference packet anchors the slot grid `S_n = T + n*T_s`. Because the
//! node's oscillator and the relay's oscillator drift apart, the node measures
//! the offsets `T_j - S_j` of reference arrivals over non-overlapping windows
//! of `W` slots and shifts all boundaries from the next window onward by the
//! floored mean offset, in whole samples.

use crate::time::HwInstant;
use serde::Serialize;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum TimingError {
    #[error("bandwidth must be a positive divisor of 10^12")]
    InvalidBandwidth,
    #[error("slot {slot} is outside the current window [{lo}, {hi}]")]
    SlotOutsideWindow { slot: i64, lo: i64, hi: i64 },
    #[error("slot {0} already has a reference arrival in this window")]
    DuplicateArrival(i64),
    #[error("realignment triggered at slot {got}, expected trigger slot {expected}")]
    WrongTriggerSlot { got: i64, expected: i64 },
}

/// One reference-packet arrival, timestamped by sample counting.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ArrivalRecord {
    pub slot_index: i64,
    pub arrival_time: HwInstant,
}

/// `T = T0 + N/B`: hardware arrival time from a sample count.
pub fn sample_count_arrival(
    n_samples: u64,
    t0: HwInstant,
    bandwidth_hz: u64,
) -> Result<HwInstant, TimingError> {
    let period = crate::time::sample_period_ps(bandwidth_hz).ok_or(TimingError::InvalidBandwidth)?;
    Ok(t0 + n_samples as i64 * period)
}

/// Detect loss of slot synchronization: no reference packet for more than ten
/// guaranteed reference intervals.
pub fn check_sync_loss(slots_since_last_ref: u64, tx_gap: u64) -> bool {
    debug_assert!(tx_gap >= 1);
    slots_since_last_ref > 10 * tx_gap
}

/// Conservative host-path delay bounds used to pick a transmit slot.
#[derive(Clone, Copy, Debug)]
pub struct TxDelayBound {
    /// Bound on the hardware-to-host receive-path delay, ps.
    pub delta_bound_ps: i64,
    /// Bound on the host-to-hardware transmit-path delay, ps.
    pub phi_bound_ps: i64,
    /// Skip the bounds and always target the next slot.
    pub one_slot_ahead: bool,
}

impl TxDelayBound {
    pub fn one_slot_ahead() -> Self {
        TxDelayBound { delta_bound_ps: 0, phi_bound_ps: 0, one_slot_ahead: true }
    }

    pub fn validate(&self, slot_duration_ps: i64) -> bool {
        !self.one_slot_ahead || self.delta_bound_ps + self.phi_bound_ps < slot_duration_ps
    }
}

/// Pick the transmit slot for a packet whose availability was noticed at the
/// detection of slot boundary `current_slot`. In one-slot-ahead mode this is
/// always `n + 1`; otherwise it is the first slot whose boundary is at least
/// `delta + phi` past the current one.
pub fn schedule_tx_slot(current_slot: i64, bounds: &TxDelayBound, sched: &SlotSchedule) -> i64 {
    if bounds.one_slot_ahead {
        return current_slot + 1;
    }
    let needed = bounds.delta_bound_ps + bounds.phi_bound_ps;
    if needed <= 0 {
        return current_slot;
    }
    // Boundaries within one window era are an exact T_s grid, so the argmin
    // over S_k >= S_n + needed reduces to a ceiling division.
    let ts = sched.slot_duration_ps();
    current_slot + (needed + ts - 1) / ts
}

/// The per-node slot-boundary state: anchor, grid, realignment window and the
/// cumulative whole-sample adjustment applied so far.
#[derive(Clone, Debug)]
pub struct SlotSchedule {
    anchor: HwInstant,
    slot_duration_ps: i64,
    sample_period_ps: i64,
    window: u32,
    window_index: u32,
    cumulative_adjust: i64,
    drift_history: Vec<i64>,
    arrivals: Vec<ArrivalRecord>,
}

impl SlotSchedule {
    /// Anchor the grid to the first reference arrival: `S_n[0] = T + n*T_s`.
    pub fn init_boundaries(
        first_ref_arrival: HwInstant,
        slot_duration_ps: i64,
        sample_period_ps: i64,
        window: u32,
    ) -> Self {
        assert!(slot_duration_ps > 0 && sample_period_ps > 0 && window > 0);
        SlotSchedule {
            anchor: first_ref_arrival,
            slot_duration_ps,
            sample_period_ps,
            window,
            window_index: 0,
            cumulative_adjust: 0,
            drift_history: Vec::new(),
            arrivals: Vec::new(),
        }
    }

    pub fn slot_duration_ps(&self) -> i64 {
        self.slot_duration_ps
    }

    pub fn sample_period_ps(&self) -> i64 {
        self.sample_period_ps
    }

    pub fn window(&self) -> u32 {
        self.window
    }

    /// Completed realignment rounds (the `i` of `S_n[i]`).
    pub fn window_index(&self) -> u32 {
        self.window_index
    }

    pub fn cumulative_adjust_samples(&self) -> i64 {
        self.cumulative_adjust
    }

    pub fn drift_history(&self) -> &[i64] {
        self.drift_history.as_slice()
    }

    pub fn arrivals_in_window(&self) -> &[ArrivalRecord] {
        &self.arrivals
    }

    /// First slot of the window currently being measured.
    pub fn current_window_start(&self) -> i64 {
        self.window_index as i64 * self.window as i64
    }

    /// The slot whose boundary detection triggers the drift computation.
    pub fn trigger_slot(&self) -> i64 {
        self.current_window_start() + self.window as i64 - 1
    }

    /// Current boundary of slot `n` (all completed adjustments applied).
    pub fn boundary(&self, n: i64) -> HwInstant {
        self.anchor + n * self.slot_duration_ps + self.cumulative_adjust * self.sample_period_ps
    }

    /// Boundary of slot `n` as it stood after realignment round `i`; the
    /// adjustment from round `k` shifts only slots `n >= k*W`.
    pub fn boundary_at_round(&self, n: i64, round: u32) -> HwInstant {
        let mut adjust = 0i64;
        for (k, delta) in self.drift_history.iter().take(round as usize).enumerate() {
            if n >= (k as i64 + 1) * self.window as i64 {
                adjust += delta;
            }
        }
        self.anchor + n * self.slot_duration_ps + adjust * self.sample_period_ps
    }

    /// Register a reference-packet arrival for the current window.
    pub fn record_arrival(&mut self, rec: ArrivalRecord) -> Result<(), TimingError> {
        let lo = self.current_window_start();
        let hi = lo + self.window as i64 - 1;
        if rec.slot_index < lo || rec.slot_index > hi {
            return Err(TimingError::SlotOutsideWindow { slot: rec.slot_index, lo, hi });
        }
        if self.arrivals.iter().any(|a| a.slot_index == rec.slot_index) {
            return Err(TimingError::DuplicateArrival(rec.slot_index));
        }
        self.arrivals.push(rec);
        Ok(())
    }

    /// Floored mean of `T_j - S_j` over the window, in whole samples; zero
    /// when no reference packet arrived.
    pub fn window_drift(&self) -> i64 {
        if self.arrivals.is_empty() {
            return 0;
        }
        let sum_ps: i128 = self
            .arrivals
            .iter()
            .map(|a| (a.arrival_time - self.boundary(a.slot_index)) as i128)
            .sum();
        let denom = self.arrivals.len() as i128 * self.sample_period_ps as i128;
        sum_ps.div_euclid(denom) as i64
    }

    /// Shift boundaries from the next window onward by `delta_samples` and
    /// open the next measurement window. Must be called exactly once per
    /// window, at its trigger slot.
    pub fn realign(&mut self, trigger_slot: i64, delta_samples: i64) -> Result<(), TimingError> {
        let expected = self.trigger_slot();
        if trigger_slot != expected {
            return Err(TimingError::WrongTriggerSlot { got: trigger_slot, expected });
        }
        self.cumulative_adjust += delta_samples;
        self.drift_history.push(delta_samples);
        self.window_index += 1;
        self.arrivals.clear();
        Ok(())
    }

    /// Restart counting from a fresh reference arrival (hardware overflow
    /// hands out a new start-up time, or sync was re-acquired after a loss).
    pub fn re_anchor(&mut self, first_ref_arrival: HwInstant) {
        self.anchor = first_ref_arrival;
        self.window_index = 0;
        self.cumulative_adjust = 0;
        self.drift_history.clear();
        self.arrivals.clear();
    }
}

/// One row of the per-slot schedule trace CSV.
#[derive(Clone, Debug, Serialize)]
pub struct ScheduleTraceRow {
    pub slot: i64,
    pub boundary_ps: i64,
    pub arrival_ps: Option<i64>,
    pub drift_applied: Option<i64>,
}

pub const SCHEDULE_TRACE_HEADER: &str = "slot,boundary_ps,arrival_ps,drift_applied_samples";

impl ScheduleTraceRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{}",
            self.slot,
            self.boundary_ps,
            self.arrival_ps.map_or(String::new(), |v| v.to_string()),
            self.drift_applied.map_or(String::new(), |v| v.to_string()),
        )
    }
}
