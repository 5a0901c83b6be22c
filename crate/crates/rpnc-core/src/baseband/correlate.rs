//! Correlators and the three frame-synchronization algorithms.
//!
//! - exhaustive cross-correlation: slide the known short-training sequence
//!   over every sample; `O(N*L)` multiplies per slot of `N` samples.
//! - standard (exhaustive autocorrelation, narrow cross-correlation): an
//!   `O(1)`-per-sample incremental autocorrelation flags the repeated
//!   training field, and only then is a short cross-correlation run in its
//!   vicinity; `O(N)` plus `O(C*L)` per detection.
//! - narrow cross-correlation: when slot boundaries are already known, only
//!   `C+1` start positions around the expected boundary are searched;
//!   `O(C*L)` per slot.
//!
//! Every operation accumulates its complex multiply/add counts so the three
//! algorithms can be compared on equal footing.

use super::{BasebandError, CorrelatorCost, Cpx, FramePreamble, OfdmParams, SampleStream};

/// A confirmed preamble: whose frame and where it starts.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Detection {
    pub role: super::PreambleRole,
    pub start_tick: u64,
}

/// Peak of a windowed cross-correlation.
#[derive(Clone, Copy, Debug)]
pub struct CrossPeak {
    /// Start position of the best-matching window.
    pub tick: u64,
    /// Raw correlation magnitude at the peak.
    pub magnitude: f64,
    /// Magnitude normalized by window and template energy, in [0, 1].
    pub normalized: f64,
}

/// Correlate `template` against windows starting at `search_start ..
/// search_start + search_len` and return the strongest. Costs `search_len *
/// L` complex multiplies.
pub fn cross_correlate(
    y: &SampleStream,
    template: &[Cpx],
    search_start: u64,
    search_len: usize,
    cost: &mut CorrelatorCost,
) -> Result<CrossPeak, BasebandError> {
    let l = template.len();
    if search_len == 0 || l == 0 {
        return Err(BasebandError::StreamTooShort { need: 1, have: 0 });
    }
    // The last window must fit in the stream.
    let _ = y.window(search_start, search_len + l - 1)?;
    let template_energy: f64 = template.iter().map(|x| x.norm_sqr()).sum();

    let mut best = CrossPeak { tick: search_start, magnitude: -1.0, normalized: 0.0 };
    let mut window_energy: f64 =
        y.window(search_start, l)?.iter().map(|x| x.norm_sqr()).sum();
    for p in search_start..search_start + search_len as u64 {
        let win = y.window(p, l)?;
        let c: Cpx = win.iter().zip(template).map(|(a, b)| a * b.conj()).sum();
        cost.complex_multiplies += l as u64;
        cost.complex_adds += (l - 1) as u64;
        let mag = c.norm();
        if mag > best.magnitude {
            let denom = (window_energy * template_energy).sqrt();
            best = CrossPeak {
                tick: p,
                magnitude: mag,
                normalized: if denom > 0.0 { mag / denom } else { 0.0 },
            };
        }
        // Slide the energy window (real arithmetic, not counted).
        if p + 1 + l as u64 <= y.end_tick() {
            window_energy += y.get(p + l as u64).map_or(0.0, |v| v.norm_sqr());
            window_energy -= y.get(p).map_or(0.0, |v| v.norm_sqr());
            window_energy = window_energy.max(0.0);
        }
    }
    Ok(best)
}

/// Incremental autocorrelation trace: `a[n]` compares the two length-`L`
/// windows ending at `n`, and `norm[n] = |a[n]| / sqrt(E1*E2)` with `E1`,
/// `E2` the two window energies. The symmetric normalization keeps edge
/// windows with almost no energy from flaring the metric.
#[derive(Clone, Debug)]
pub struct AutoTrace {
    /// Absolute tick of the first emitted value.
    pub first_tick: u64,
    pub values: Vec<Cpx>,
    pub norm: Vec<f64>,
}

impl AutoTrace {
    pub fn tick_of(&self, idx: usize) -> u64 {
        self.first_tick + idx as u64
    }
}

/// Compute `a[n]` for every position with two full windows, updating
/// incrementally: 2 complex multiplies per emitted value after warm-up.
pub fn auto_correlate_stream(
    y: &SampleStream,
    l: usize,
    cost: &mut CorrelatorCost,
) -> Result<AutoTrace, BasebandError> {
    if y.len() < 2 * l {
        return Err(BasebandError::StreamTooShort { need: 2 * l, have: y.len() });
    }
    let s = &y.samples;
    let n_out = s.len() - 2 * l + 1;
    let mut values = Vec::with_capacity(n_out);
    let mut norm = Vec::with_capacity(n_out);

    // Warm-up: direct sum for the first position.
    let mut a: Cpx = (0..l).map(|i| s[i] * s[i + l].conj()).sum();
    cost.complex_multiplies += l as u64;
    cost.complex_adds += (l - 1) as u64;
    let mut e_early: f64 = s[..l].iter().map(|x| x.norm_sqr()).sum();
    let mut e_late: f64 = s[l..2 * l].iter().map(|x| x.norm_sqr()).sum();
    let normalize = |a: &Cpx, e1: f64, e2: f64| {
        let denom = (e1 * e2).sqrt();
        if denom > 0.0 {
            a.norm() / denom
        } else {
            0.0
        }
    };
    values.push(a);
    norm.push(normalize(&a, e_early, e_late));

    for idx in 1..n_out {
        // Window pair now ends at sample idx + 2l - 1.
        let newest = idx + 2 * l - 1;
        a += s[newest - l] * s[newest].conj();
        a -= s[idx - 1] * s[idx - 1 + l].conj();
        cost.complex_multiplies += 2;
        cost.complex_adds += 2;
        e_early += s[newest - l].norm_sqr();
        e_early -= s[idx - 1].norm_sqr();
        e_late += s[newest].norm_sqr();
        e_late -= s[newest - l].norm_sqr();
        e_early = e_early.max(0.0);
        e_late = e_late.max(0.0);
        values.push(a);
        norm.push(normalize(&a, e_early, e_late));
    }

    Ok(AutoTrace { first_tick: y.origin_tick + 2 * l as u64 - 1, values, norm })
}

/// Where a role's first STS copy sits relative to its frame start.
fn sts_anchor_offset(pre: &FramePreamble, params: &OfdmParams) -> u64 {
    (pre.sts_field_offset() + pre.first_sts_copy_offset(params)) as u64
}

/// Scan the full correlation magnitude sequence for threshold-crossing local
/// maxima and group the copy train of each preamble into one detection.
///
/// A single window that only partially overlaps a signal edge can fluke past
/// the threshold (its normalization energy is tiny), so a detection requires
/// the repetition structure: two candidates spaced one training-symbol
/// length apart.
fn cluster_candidates(
    candidates: &[(u64, f64)],
    anchor_offset: u64,
    span: u64,
    l: u64,
    role: super::PreambleRole,
) -> Vec<Detection> {
    let mut detections = Vec::new();
    let mut i = 0;
    while i < candidates.len() {
        let leader = candidates[i].0;
        let mut group = Vec::new();
        while i < candidates.len() && candidates[i].0 <= leader + span {
            group.push(candidates[i].0);
            i += 1;
        }
        // Anchor on the earliest member that has a copy partner at +L.
        let anchor = group.iter().find(|&&a| {
            group.iter().any(|&b| b > a && (b - a).abs_diff(l) <= 1)
        });
        if let Some(&a) = anchor {
            if let Some(start) = a.checked_sub(anchor_offset) {
                detections.push(Detection { role, start_tick: start });
            }
        }
    }
    detections
}

/// Exhaustive cross-correlation over the whole stream, one pass per
/// candidate preamble.
pub fn sync_exhaustive_cross(
    y: &SampleStream,
    preambles: &[&FramePreamble],
    params: &OfdmParams,
    threshold: f64,
    cost: &mut CorrelatorCost,
) -> Result<Vec<Detection>, BasebandError> {
    let mut detections = Vec::new();
    for pre in preambles {
        let l = pre.sts_sequence.len();
        if y.len() < l {
            return Err(BasebandError::StreamTooShort { need: l, have: y.len() });
        }
        let template = &pre.sts_sequence;
        let template_energy: f64 = template.iter().map(|x| x.norm_sqr()).sum();
        let positions = y.len() - l + 1;
        let mut mags = Vec::with_capacity(positions);
        let mut window_energy: f64 = y.samples[..l].iter().map(|x| x.norm_sqr()).sum();
        for p in 0..positions {
            let win = &y.samples[p..p + l];
            let c: Cpx = win.iter().zip(template.iter()).map(|(a, b)| a * b.conj()).sum();
            cost.complex_multiplies += l as u64;
            cost.complex_adds += (l - 1) as u64;
            let denom = (window_energy * template_energy).sqrt();
            mags.push(if denom > 0.0 { c.norm() / denom } else { 0.0 });
            if p + 1 < positions {
                window_energy += y.samples[p + l].norm_sqr();
                window_energy -= y.samples[p].norm_sqr();
                window_energy = window_energy.max(0.0);
            }
        }
        let candidates: Vec<(u64, f64)> = (0..positions)
            .filter(|&p| {
                mags[p] >= threshold
                    && (p == 0 || mags[p] >= mags[p - 1])
                    && (p + 1 == positions || mags[p] >= mags[p + 1])
            })
            .map(|p| (y.origin_tick + p as u64, mags[p]))
            .collect();
        let span = (2 * params.sts_len + params.cp_len) as u64;
        detections.extend(cluster_candidates(
            &candidates,
            sts_anchor_offset(pre, params),
            span,
            params.sts_len as u64,
            pre.role,
        ));
    }
    detections.sort_by_key(|d| (d.start_tick, d.role as u8));
    Ok(detections)
}

/// Outcome of the standard algorithm, with its two cost components split
/// out: the always-on autocorrelation and the triggered cross-correlations.
#[derive(Clone, Debug, Default)]
pub struct StandardSync {
    pub detections: Vec<Detection>,
    pub auto_cost: CorrelatorCost,
    pub cross_cost: CorrelatorCost,
    pub cross_invocations: u64,
}

/// Exhaustive autocorrelation with narrow cross-correlation confirmation.
pub fn sync_standard(
    y: &SampleStream,
    preambles: &[&FramePreamble],
    params: &OfdmParams,
    auto_threshold: f64,
    cross_threshold: f64,
) -> Result<StandardSync, BasebandError> {
    let mut out = StandardSync::default();
    let l = params.sts_len;
    let c = params.cp_len;
    let trace = auto_correlate_stream(y, l, &mut out.auto_cost)?;

    // Rising-edge trigger: the plateau of a repeated training field starts
    // where both windows first sit inside it.
    let mut skip_until: u64 = 0;
    for idx in 0..trace.norm.len() {
        let n = trace.tick_of(idx);
        if n < skip_until || trace.norm[idx] < auto_threshold {
            continue;
        }
        // Two full windows inside the field end at anchor + 2L - 1; search
        // the field anchor within the prefix-length vicinity of the estimate.
        let anchor_est = n.saturating_sub(2 * l as u64 - 1);
        let mut confirmed = false;
        for pre in preambles {
            let vicinity = (c / 2) as u64;
            let lo = anchor_est.saturating_sub(vicinity).max(y.origin_tick);
            let hi = (anchor_est + vicinity).min(y.end_tick().saturating_sub(l as u64));
            if hi < lo {
                continue;
            }
            let search_len = (hi - lo + 1) as usize;
            out.cross_invocations += 1;
            let peak = cross_correlate(y, &pre.sts_sequence, lo, search_len, &mut out.cross_cost)?;
            if peak.normalized >= cross_threshold {
                if let Some(start) = peak.tick.checked_sub(sts_anchor_offset(pre, params)) {
                    out.detections.push(Detection { role: pre.role, start_tick: start });
                    // Re-arm past the field and its trailing plateau decay.
                    skip_until = peak.tick + (3 * l + c) as u64;
                    confirmed = true;
                    break;
                }
            }
        }
        if !confirmed {
            // False alarm: re-arm past this plateau sample run.
            skip_until = n + l as u64;
        }
    }
    out.detections.sort_by_key(|d| (d.start_tick, d.role as u8));
    Ok(out)
}

/// Narrow cross-correlation around a known expected frame start. Searches
/// `expected_tick - C/2 ..= expected_tick + C/2` and returns the peak if it
/// clears the threshold. Costs at most `(C+1) * L` multiplies.
pub fn sync_narrow(
    y: &SampleStream,
    pre: &FramePreamble,
    expected_tick: u64,
    params: &OfdmParams,
    threshold: f64,
    cost: &mut CorrelatorCost,
) -> Result<Option<Detection>, BasebandError> {
    let c = params.cp_len as u64;
    let anchor = sts_anchor_offset(pre, params);
    let center = expected_tick + anchor;
    let lo = center.saturating_sub(c / 2);
    let search_len = (c + 1) as usize;
    let peak = cross_correlate(y, &pre.sts_sequence, lo, search_len, cost)?;
    if peak.normalized >= threshold {
        Ok(peak.tick.checked_sub(anchor).map(|start_tick| Detection { role: pre.role, start_tick }))
    } else {
        Ok(None)
    }
}
