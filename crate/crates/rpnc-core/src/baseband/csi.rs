//! Channel estimation and the phase-slope arrival-offset estimator.
//!
//! A delay of `d` samples rotates subcarrier `s` by `-2*pi*s*d / N_s`, so the
//! slope of unwrapped phase versus signed subcarrier index measures arrival
//! offsets with sub-sample resolution. The relay estimates both users'
//! channels from one superposed long-training reception because their
//! subcarrier sets are disjoint; the difference of the two regressed offsets
//! is the arrival-time difference of the two uplink signals.

use super::fft::fft;
use super::{BasebandError, Cpx, Csi, FramePreamble, OfdmParams};
use std::f64::consts::PI;

/// Least-squares per-subcarrier channel gains for one user from an
/// `N_s`-sample long-training body (the FFT window after the prefix cut).
/// `lts_index` picks which of the role's LTS symbols the region holds.
pub fn estimate_csi(
    lts_region: &[Cpx],
    pre: &FramePreamble,
    params: &OfdmParams,
    lts_index: usize,
) -> Result<Csi, BasebandError> {
    let n = params.n_subcarriers;
    if lts_region.len() != n {
        return Err(BasebandError::WrongRegionLength { expected: n, got: lts_region.len() });
    }
    let mut spec = lts_region.to_vec();
    fft(&mut spec);
    let mut gains = vec![Cpx::new(0.0, 0.0); n];
    let mut used_bins = Vec::new();
    for &s in &params.lts_subcarriers(pre.role) {
        let bin = params.bin_of(s);
        let x = pre.lts_freq[lts_index][bin];
        if x.norm_sqr() == 0.0 {
            continue;
        }
        gains[bin] = spec[bin] / x;
        used_bins.push(bin);
    }
    if used_bins.len() < 2 {
        return Err(BasebandError::DegenerateCsi);
    }
    Ok(Csi { per_subcarrier_gain: gains, used_bins, source_role: pre.role })
}

/// Arrival offset in samples from the phase slope of the channel estimate.
///
/// Phases are unwrapped along ascending signed subcarrier index, then fit by
/// least squares; the slope `zeta` maps to `delta = -zeta * N_s / (2*pi)`.
/// Unambiguous while the phase step between neighboring used subcarriers
/// stays under half a turn.
pub fn phase_slope_offset(csi: &Csi) -> Result<f64, BasebandError> {
    let n = csi.per_subcarrier_gain.len();
    let half = n / 2;
    let mut points: Vec<(f64, f64)> = csi
        .used_bins
        .iter()
        .filter_map(|&bin| {
            let g = csi.per_subcarrier_gain[bin];
            if g.norm_sqr() > 0.0 {
                let s = if bin <= half { bin as i64 } else { bin as i64 - n as i64 };
                Some((s as f64, g.arg()))
            } else {
                None
            }
        })
        .collect();
    if points.len() < 2 {
        return Err(BasebandError::DegenerateCsi);
    }
    points.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

    // Sequential unwrap: wrap each step into (-pi, pi].
    let mut unwrapped = Vec::with_capacity(points.len());
    let mut prev = points[0].1;
    let mut offset = 0.0;
    unwrapped.push((points[0].0, prev));
    for &(s, ph) in &points[1..] {
        let mut d = ph - prev;
        while d > PI {
            d -= 2.0 * PI;
        }
        while d <= -PI {
            d += 2.0 * PI;
        }
        offset += d;
        unwrapped.push((s, points[0].1 + offset));
        prev = ph;
    }

    let m = unwrapped.len() as f64;
    let mean_s: f64 = unwrapped.iter().map(|p| p.0).sum::<f64>() / m;
    let mean_p: f64 = unwrapped.iter().map(|p| p.1).sum::<f64>() / m;
    let num: f64 = unwrapped.iter().map(|p| (p.0 - mean_s) * (p.1 - mean_p)).sum();
    let den: f64 = unwrapped.iter().map(|p| (p.0 - mean_s).powi(2)).sum();
    if den == 0.0 {
        return Err(BasebandError::DegenerateCsi);
    }
    let slope = num / den;
    Ok(-slope * n as f64 / (2.0 * PI))
}

/// Arrival-time difference of two users measured from the same reception.
pub fn arrival_diff(csi_a: &Csi, csi_b: &Csi) -> Result<f64, BasebandError> {
    Ok(phase_slope_offset(csi_a)? - phase_slope_offset(csi_b)?)
}

#[cfg(test)]
mod tests {
    use super::super::{FramePreamble, OfdmParams, PreambleRole};
    use super::*;

    fn params() -> OfdmParams {
        OfdmParams::default()
    }

    /// The LTS body as received after an exact integer-sample delay within
    /// the cyclic prefix: a circular rotation of the transmitted body.
    fn delayed_lts_body(pre: &FramePreamble, params: &OfdmParams, delay: usize) -> Vec<Cpx> {
        let n = params.n_subcarriers;
        let body_off = pre.lts_body_offsets(params)[0];
        let body = &pre.samples[body_off..body_off + n];
        (0..n).map(|i| body[(i + n - delay) % n]).collect()
    }

    #[test]
    fn identity_channel_gives_unit_gains() {
        let p = params();
        let pre = FramePreamble::generate(PreambleRole::Relay, &p, 1).unwrap();
        let body_off = pre.lts_body_offsets(&p)[0];
        let region = &pre.samples[body_off..body_off + p.n_subcarriers];
        let csi = estimate_csi(region, &pre, &p, 0).unwrap();
        for &bin in &csi.used_bins {
            let g = csi.per_subcarrier_gain[bin];
            assert!((g - Cpx::new(1.0, 0.0)).norm() < 1e-9, "bin {bin}: {g}");
        }
        assert!((phase_slope_offset(&csi).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn flat_complex_gain_passes_through() {
        let p = params();
        let pre = FramePreamble::generate(PreambleRole::Relay, &p, 1).unwrap();
        let g = Cpx::new(0.3, -0.8);
        let body_off = pre.lts_body_offsets(&p)[0];
        let region: Vec<Cpx> =
            pre.samples[body_off..body_off + p.n_subcarriers].iter().map(|x| x * g).collect();
        let csi = estimate_csi(&region, &pre, &p, 0).unwrap();
        for &bin in &csi.used_bins {
            assert!((csi.per_subcarrier_gain[bin] - g).norm() < 1e-9);
        }
    }

    #[test]
    fn one_sample_delay_has_expected_phase_slope() {
        let p = params();
        let pre = FramePreamble::generate(PreambleRole::Relay, &p, 1).unwrap();
        let region = delayed_lts_body(&pre, &p, 1);
        let csi = estimate_csi(&region, &pre, &p, 0).unwrap();
        // Each subcarrier rotates by -2*pi*s/N for a one-sample delay.
        for &bin in &csi.used_bins {
            let s = p.signed_of(bin) as f64;
            let expect = -2.0 * PI * s / p.n_subcarriers as f64;
            let got = csi.per_subcarrier_gain[bin].arg();
            let mut d = got - expect;
            while d > PI {
                d -= 2.0 * PI;
            }
            while d <= -PI {
                d += 2.0 * PI;
            }
            assert!(d.abs() < 1e-9, "bin {bin}");
        }
        assert!((phase_slope_offset(&csi).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn integer_delay_recovered_exactly() {
        let p = params();
        let pre = FramePreamble::generate(PreambleRole::Relay, &p, 1).unwrap();
        for delay in [0usize, 1, 2, 3, 4] {
            let region = delayed_lts_body(&pre, &p, delay);
            let csi = estimate_csi(&region, &pre, &p, 0).unwrap();
            let est = phase_slope_offset(&csi).unwrap();
            assert!((est - delay as f64).abs() < 1e-6, "delay {delay}: est {est}");
        }
    }

    #[test]
    fn fractional_delay_recovered_against_interpolation_oracle() {
        let p = params();
        let pre = FramePreamble::generate(PreambleRole::Relay, &p, 1).unwrap();
        let n = p.n_subcarriers;
        let body_off = pre.lts_body_offsets(&p)[0];
        let body = &pre.samples[body_off..body_off + n];
        // Band-limited interpolation oracle: resample the cyclic body with
        // the periodic sinc (Dirichlet) kernel, exact for even-length cyclic
        // signals with an empty Nyquist bin (the training loads leave it
        // empty). Independent of the frequency-ramp construction used by the
        // renderer.
        let dirichlet = |u: f64| -> f64 {
            let r = u.rem_euclid(n as f64);
            if r.abs() < 1e-12 || (n as f64 - r).abs() < 1e-12 {
                return 1.0;
            }
            (PI * u).sin() / (n as f64 * (PI * u / n as f64).tan())
        };
        let delay = 1.5f64;
        let region: Vec<Cpx> = (0..n)
            .map(|i| {
                body.iter()
                    .enumerate()
                    .map(|(j, &x)| x * dirichlet(i as f64 - delay - j as f64))
                    .sum()
            })
            .collect();
        let csi = estimate_csi(&region, &pre, &p, 0).unwrap();
        let est = phase_slope_offset(&csi).unwrap();
        assert!((est - delay).abs() < 0.1, "est {est}");
    }

    #[test]
    fn superposed_users_estimate_independently() {
        let p = params();
        let pa = FramePreamble::generate(PreambleRole::EndNodeA, &p, 1).unwrap();
        let pb = FramePreamble::generate(PreambleRole::EndNodeB, &p, 1).unwrap();
        let ga = Cpx::new(0.9, 0.1);
        let gb = Cpx::new(-0.2, 0.7);
        let n = p.n_subcarriers;
        let off_a = pa.lts_body_offsets(&p)[0];
        let off_b = pb.lts_body_offsets(&p)[0];
        assert_eq!(off_a, off_b, "LTS fields are co-located in time");
        let region: Vec<Cpx> = (0..n)
            .map(|i| pa.samples[off_a + i] * ga + pb.samples[off_b + i] * gb)
            .collect();
        let csi_a = estimate_csi(&region, &pa, &p, 0).unwrap();
        let csi_b = estimate_csi(&region, &pb, &p, 0).unwrap();
        for &bin in &csi_a.used_bins {
            assert!((csi_a.per_subcarrier_gain[bin] - ga).norm() < 1e-9);
        }
        for &bin in &csi_b.used_bins {
            assert!((csi_b.per_subcarrier_gain[bin] - gb).norm() < 1e-9);
        }
    }

    #[test]
    fn arrival_diff_measures_relative_delay() {
        let p = params();
        let pa = FramePreamble::generate(PreambleRole::EndNodeA, &p, 1).unwrap();
        let pb = FramePreamble::generate(PreambleRole::EndNodeB, &p, 1).unwrap();
        let n = p.n_subcarriers;
        let off = pa.lts_body_offsets(&p)[0];
        // A delayed by 2 samples, B on time, superposed.
        let region: Vec<Cpx> = (0..n)
            .map(|i| {
                let a = pa.samples[off + (i + n - 2) % n];
                let b = pb.samples[off + i];
                a + b
            })
            .collect();
        let csi_a = estimate_csi(&region, &pa, &p, 0).unwrap();
        let csi_b = estimate_csi(&region, &pb, &p, 0).unwrap();
        let d = arrival_diff(&csi_a, &csi_b).unwrap();
        assert!((d - 2.0).abs() < 0.1, "diff {d}");
        let rev = arrival_diff(&csi_b, &csi_a).unwrap();
        assert!((d + rev).abs() < 1e-9, "antisymmetry");
    }

    #[test]
    fn identical_channels_have_zero_diff() {
        let p = params();
        let pa = FramePreamble::generate(PreambleRole::EndNodeA, &p, 1).unwrap();
        let pb = FramePreamble::generate(PreambleRole::EndNodeB, &p, 1).unwrap();
        let n = p.n_subcarriers;
        let off = pa.lts_body_offsets(&p)[0];
        let region: Vec<Cpx> = (0..n).map(|i| pa.samples[off + i] + pb.samples[off + i]).collect();
        let csi_a = estimate_csi(&region, &pa, &p, 0).unwrap();
        let csi_b = estimate_csi(&region, &pb, &p, 0).unwrap();
        assert!(arrival_diff(&csi_a, &csi_b).unwrap().abs() < 1e-9);
    }

    #[test]
    fn degenerate_csi_is_an_error() {
        let p = params();
        let pre = FramePreamble::generate(PreambleRole::Relay, &p, 1).unwrap();
        let csi = Csi {
            per_subcarrier_gain: vec![Cpx::new(0.0, 0.0); p.n_subcarriers],
            used_bins: vec![],
            source_role: PreambleRole::Relay,
        };
        assert_eq!(phase_slope_offset(&csi), Err(BasebandError::DegenerateCsi));
        let short = vec![Cpx::new(0.0, 0.0); 10];
        assert!(matches!(
            estimate_csi(&short, &pre, &p, 0),
            Err(BasebandError::WrongRegionLength { .. })
        ));
    }
}
