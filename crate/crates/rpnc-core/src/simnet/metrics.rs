//! Run outcomes: counters, series, and their CSV renderings.

use crate::linkcodec::EndNodeId;

/// Per-direction delivery accounting. Indices are application payload
/// numbers, checked for exactly-once in-order delivery.
#[derive(Clone, Debug, Default)]
pub struct DirectionStats {
    pub delivered: u64,
    pub delivered_bytes: u64,
    pub first_delivery_ps: Option<i64>,
    pub last_delivery_ps: Option<i64>,
    pub next_expected_index: u64,
    pub out_of_order: u64,
    pub duplicates: u64,
    pub integrity_failures: u64,
    /// Deliveries inside the measurement window (after warm-up).
    pub measured: u64,
}

impl DirectionStats {
    pub fn record(&mut self, index: u64, bytes: usize, now_ps: i64, measuring: bool) {
        self.delivered += 1;
        self.delivered_bytes += bytes as u64;
        self.first_delivery_ps.get_or_insert(now_ps);
        self.last_delivery_ps = Some(now_ps);
        if measuring {
            self.measured += 1;
        }
        use std::cmp::Ordering::*;
        match index.cmp(&self.next_expected_index) {
            Equal => self.next_expected_index += 1,
            Less => self.duplicates += 1,
            Greater => {
                self.out_of_order += 1;
                self.next_expected_index = index + 1;
            }
        }
    }

    /// Payloads per second over the span between first and last delivery.
    pub fn goodput_pps(&self) -> f64 {
        match (self.first_delivery_ps, self.last_delivery_ps) {
            (Some(a), Some(b)) if b > a => {
                (self.delivered.saturating_sub(1)) as f64
                    / crate::time::ps_to_secs(b - a)
            }
            _ => 0.0,
        }
    }
}

/// One uplink slot's ground truth and measurement at the relay.
#[derive(Clone, Copy, Debug)]
pub struct SyncSample {
    pub relay_slot: i64,
    /// True arrival offsets of each user in relay samples, when present.
    pub truth_a: Option<f64>,
    pub truth_b: Option<f64>,
    /// Phase-slope measurement of the arrival difference, when both users
    /// were present and estimable.
    pub measured_dd: Option<f64>,
}

#[derive(Clone, Debug, Default)]
pub struct SyncStats {
    pub samples: Vec<SyncSample>,
    /// Uplink slots where an arrival offset (or the pair spread) exceeded
    /// the cyclic prefix budget.
    pub within_cp_violations: u64,
    pub slots_with_both: u64,
    /// Narrow-sync misses at the relay (user transmitted but undetected).
    pub missed_detections: u64,
}

impl SyncStats {
    pub fn measured_abs_dd(&self) -> Vec<f64> {
        self.samples.iter().filter_map(|s| s.measured_dd.map(f64::abs)).collect()
    }

    pub fn truth_abs_dd(&self) -> Vec<f64> {
        self.samples
            .iter()
            .filter_map(|s| match (s.truth_a, s.truth_b) {
                (Some(a), Some(b)) => Some((a - b).abs()),
                _ => None,
            })
            .collect()
    }
}

#[derive(Clone, Debug, Default)]
pub struct RelayStats {
    pub xor_slots: u64,
    pub single_slots: u64,
    pub idle_slots: u64,
    pub failed_slots: u64,
    pub forwarded: u64,
    pub beacons: u64,
}

#[derive(Clone, Debug, Default)]
pub struct ArqStats {
    pub data_packets_sent: u64,
    pub retransmissions: u64,
    pub pure_acks_sent: u64,
    pub rtt_samples: u64,
    pub final_rtt_est_ps: i64,
    pub final_rtt_dev_ps: i64,
    pub final_window: usize,
}

#[derive(Clone, Debug, Default)]
pub struct NodeTimingStats {
    /// (trigger slot, samples) realignments actually applied.
    pub realignments: Vec<(i64, i64)>,
    pub sync_losses: u64,
    /// Decode instants of data-bearing downlink packets, ps.
    pub decode_times_ps: Vec<i64>,
}

/// Correlator cost totals per algorithm over a run.
#[derive(Clone, Debug, Default)]
pub struct CostStats {
    pub narrow_multiplies: u64,
    pub narrow_invocations: u64,
    pub standard_multiplies: u64,
    pub exhaustive_multiplies: u64,
}

#[derive(Clone, Debug, Default)]
pub struct MetricsReport {
    pub slots_run: u64,
    pub a_to_b: DirectionStats,
    pub b_to_a: DirectionStats,
    pub relay: RelayStats,
    pub arq_a: ArqStats,
    pub arq_b: ArqStats,
    pub timing_a: NodeTimingStats,
    pub timing_b: NodeTimingStats,
    pub sync: SyncStats,
    pub costs: CostStats,
    /// Application echo round trips, ps.
    pub echo_rtts_ps: Vec<i64>,
    /// Stream-transfer completion (both directions), ps, when it happened.
    pub stream_completed_ps: Option<i64>,
    pub warmup_end_ps: i64,
}

impl MetricsReport {
    pub fn dir(&self, to: EndNodeId) -> &DirectionStats {
        match to {
            EndNodeId::A => &self.b_to_a,
            EndNodeId::B => &self.a_to_b,
        }
    }

    pub fn dir_mut(&mut self, to: EndNodeId) -> &mut DirectionStats {
        match to {
            EndNodeId::A => &mut self.b_to_a,
            EndNodeId::B => &mut self.a_to_b,
        }
    }

    /// Exponentially smoothed series of decode gaps at one node, the
    /// stability summary: weight applies to each new gap.
    pub fn smoothed_decode_gaps(&self, node: EndNodeId, weight: f64) -> Vec<f64> {
        let times = match node {
            EndNodeId::A => &self.timing_a.decode_times_ps,
            EndNodeId::B => &self.timing_b.decode_times_ps,
        };
        let mut out = Vec::new();
        let mut smoothed: Option<f64> = None;
        for w in times.windows(2) {
            let gap = (w[1] - w[0]) as f64;
            smoothed = Some(match smoothed {
                None => gap,
                Some(s) => (1.0 - weight) * s + weight * gap,
            });
            out.push(smoothed.unwrap());
        }
        out
    }
}

/// Empirical CDF support: sorted |values| with quantile lookup.
#[derive(Clone, Debug)]
pub struct Cdf {
    sorted: Vec<f64>,
}

impl Cdf {
    pub fn of(mut values: Vec<f64>) -> Self {
        values.retain(|v| v.is_finite());
        values.sort_by(|a, b| a.partial_cmp(b).unwrap());
        Cdf { sorted: values }
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    /// Fraction of samples <= x.
    pub fn prob_at_most(&self, x: f64) -> f64 {
        if self.sorted.is_empty() {
            return 0.0;
        }
        let idx = self.sorted.partition_point(|&v| v <= x);
        idx as f64 / self.sorted.len() as f64
    }

    /// Smallest value covering fraction `q` of the samples.
    pub fn quantile(&self, q: f64) -> f64 {
        if self.sorted.is_empty() {
            return f64::NAN;
        }
        let q = q.clamp(0.0, 1.0);
        let idx = ((q * self.sorted.len() as f64).ceil() as usize).clamp(1, self.sorted.len());
        self.sorted[idx - 1]
    }

    /// CSV rows `value,cum_prob` at each sample point.
    pub fn csv(&self) -> String {
        let mut out = String::from("value,cum_prob\n");
        let n = self.sorted.len();
        for (i, v) in self.sorted.iter().enumerate() {
            out.push_str(&format!("{},{}\n", v, (i + 1) as f64 / n as f64));
        }
        out
    }
}

pub fn median_ps(samples: &[i64]) -> Option<i64> {
    if samples.is_empty() {
        return None;
    }
    let mut v = samples.to_vec();
    v.sort_unstable();
    Some(v[v.len() / 2])
}
