//! Frame preambles: training fields, their layout, and generation.
//!
//! End-node frames carry four training symbols; the two nodes' short
//! training fields sit in disjoint time positions so the relay can identify
//! transmitters, and their long training symbols load disjoint subcarrier
//! sets so the relay can estimate both channels from one superposed
//! reception. The relay's own (downlink) preamble omits the second short
//! training field and is one OFDM symbol shorter.
//!
//! ```text
//! end node A: [ 2STS(A) | silence  | LTS | LTS ]
//! end node B: [ silence | 2STS(B)  | LTS | LTS ]
//! relay:      [ 2STS(R) | LTS | LTS ]
//! ```
//!
//! Every field is one OFDM symbol long: a cyclic prefix of `C` samples
//! followed by an `N_s`-sample body. The 2STS body is the length-`L` short
//! training symbol repeated twice.

use super::fft::{fft, ifft};
use super::{BasebandError, Cpx, OfdmParams, PreambleRole, SampleStream};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PreambleField {
    /// Two repeated short training symbols plus cyclic prefix.
    Sts(PreambleRole),
    /// The slot where the other end node transmits its short training field.
    Silence,
    /// Long training symbol plus cyclic prefix, by ordinal. The two LTS
    /// carry independent loads so that no lag-L repetition straddles their
    /// junction and falsely arms the autocorrelation trigger.
    Lts(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FieldSpan {
    pub field: PreambleField,
    pub offset: usize,
    pub len: usize,
}

#[derive(Clone, Debug)]
pub struct FramePreamble {
    pub role: PreambleRole,
    /// The length-L unit the cross-correlators search for.
    pub sts_sequence: Vec<Cpx>,
    /// Frequency-domain loads of each LTS symbol, indexed by FFT bin; zero
    /// off this role's subcarrier set.
    pub lts_freq: Vec<Vec<Cpx>>,
    pub layout: Vec<FieldSpan>,
    /// Time-domain preamble as transmitted.
    pub samples: Vec<Cpx>,
}

impl FramePreamble {
    pub fn generate(
        role: PreambleRole,
        params: &OfdmParams,
        seed: u64,
    ) -> Result<FramePreamble, BasebandError> {
        params.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ role.seed_tag());
        let n = params.n_subcarriers;
        let l = params.sts_len;

        // Unit-power QPSK short training symbol, unique per role.
        let scale = std::f64::consts::FRAC_1_SQRT_2;
        let sts_sequence: Vec<Cpx> = (0..l)
            .map(|_| {
                let re = if rng.gen::<bool>() { scale } else { -scale };
                let im = if rng.gen::<bool>() { scale } else { -scale };
                Cpx::new(re, im)
            })
            .collect();

        // BPSK loads on this role's subcarriers, scaled for unit average
        // sample power in the time domain; each LTS symbol gets its own
        // loads.
        let bins = params.lts_subcarriers(role);
        let amp = n as f64 / (bins.len() as f64).sqrt();
        let lts_freq: Vec<Vec<Cpx>> = (0..2)
            .map(|_| {
                let mut loads = vec![Cpx::new(0.0, 0.0); n];
                for &s in &bins {
                    let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
                    loads[params.bin_of(s)] = Cpx::new(sign * amp, 0.0);
                }
                loads
            })
            .collect();

        let sym = params.symbol_len();
        let layout: Vec<FieldSpan> = match role {
            PreambleRole::EndNodeA => vec![
                FieldSpan { field: PreambleField::Sts(role), offset: 0, len: sym },
                FieldSpan { field: PreambleField::Silence, offset: sym, len: sym },
                FieldSpan { field: PreambleField::Lts(0), offset: 2 * sym, len: sym },
                FieldSpan { field: PreambleField::Lts(1), offset: 3 * sym, len: sym },
            ],
            PreambleRole::EndNodeB => vec![
                FieldSpan { field: PreambleField::Silence, offset: 0, len: sym },
                FieldSpan { field: PreambleField::Sts(role), offset: sym, len: sym },
                FieldSpan { field: PreambleField::Lts(0), offset: 2 * sym, len: sym },
                FieldSpan { field: PreambleField::Lts(1), offset: 3 * sym, len: sym },
            ],
            PreambleRole::Relay => vec![
                FieldSpan { field: PreambleField::Sts(role), offset: 0, len: sym },
                FieldSpan { field: PreambleField::Lts(0), offset: sym, len: sym },
                FieldSpan { field: PreambleField::Lts(1), offset: 2 * sym, len: sym },
            ],
        };

        let mut pre = FramePreamble { role, sts_sequence, lts_freq, layout, samples: Vec::new() };
        pre.samples = pre.render(params, 0.0);
        Ok(pre)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Offset of this role's own 2STS field within the frame.
    pub fn sts_field_offset(&self) -> usize {
        self.layout
            .iter()
            .find(|f| matches!(f.field, PreambleField::Sts(_)))
            .map(|f| f.offset)
            .unwrap()
    }

    /// Offset of the first full STS copy within the 2STS field. The cyclic
    /// prefix replays the tail of the repeated body, so with `C >= L` a full
    /// copy already starts inside the prefix.
    pub fn first_sts_copy_offset(&self, params: &OfdmParams) -> usize {
        params.cp_len.saturating_sub(params.sts_len)
    }

    /// Offsets of the LTS symbol bodies (past their cyclic prefixes), in
    /// ordinal order.
    pub fn lts_body_offsets(&self, params: &OfdmParams) -> Vec<usize> {
        let mut spans: Vec<(usize, usize)> = self
            .layout
            .iter()
            .filter_map(|f| match f.field {
                PreambleField::Lts(k) => Some((k, f.offset + params.cp_len)),
                _ => None,
            })
            .collect();
        spans.sort_unstable();
        spans.into_iter().map(|(_, off)| off).collect()
    }

    /// Render the preamble with a fractional-sample delay applied per OFDM
    /// symbol as a frequency-domain phase ramp. The integer part of an
    /// arrival offset is handled by placement; this models the residual.
    pub fn render(&self, params: &OfdmParams, frac_delay: f64) -> Vec<Cpx> {
        let n = params.n_subcarriers;
        let c = params.cp_len;
        let total = self.layout.last().map(|f| f.offset + f.len).unwrap_or(0);
        let mut out = vec![Cpx::new(0.0, 0.0); total];
        for span in &self.layout {
            let body: Vec<Cpx> = match span.field {
                PreambleField::Silence => continue,
                PreambleField::Sts(_) => {
                    let mut b = self.sts_sequence.clone();
                    b.extend_from_slice(&self.sts_sequence);
                    b
                }
                PreambleField::Lts(k) => {
                    let mut b = self.lts_freq[k].clone();
                    ifft(&mut b);
                    b
                }
            };
            let body = if frac_delay == 0.0 {
                body
            } else {
                let mut spec = body;
                fft(&mut spec);
                for (k, v) in spec.iter_mut().enumerate() {
                    let s = params.signed_of(k) as f64;
                    let ph = -2.0 * std::f64::consts::PI * s * frac_delay / n as f64;
                    *v *= Cpx::from_polar(1.0, ph);
                }
                ifft(&mut spec);
                spec
            };
            // Cyclic prefix: the last C samples of the body.
            out[span.offset..span.offset + c].copy_from_slice(&body[n - c..]);
            out[span.offset + c..span.offset + c + n].copy_from_slice(&body);
        }
        out
    }
}

/// Generate a role's preamble as a sample stream at tick 0.
pub fn gen_preamble(
    role: PreambleRole,
    params: &OfdmParams,
    seed: u64,
) -> Result<SampleStream, BasebandError> {
    Ok(SampleStream::new(0, FramePreamble::generate(role, params, seed)?.samples))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> OfdmParams {
        OfdmParams::default()
    }

    #[test]
    fn deterministic_per_role_and_seed() {
        let p = params();
        let a1 = gen_preamble(PreambleRole::EndNodeA, &p, 1).unwrap();
        let a2 = gen_preamble(PreambleRole::EndNodeA, &p, 1).unwrap();
        assert_eq!(a1.samples, a2.samples);
        let a3 = gen_preamble(PreambleRole::EndNodeA, &p, 2).unwrap();
        assert_ne!(a1.samples, a3.samples);
        let b = gen_preamble(PreambleRole::EndNodeB, &p, 1).unwrap();
        assert_ne!(a1.samples, b.samples);
    }

    #[test]
    fn relay_preamble_is_one_symbol_shorter() {
        let p = params();
        let a = gen_preamble(PreambleRole::EndNodeA, &p, 1).unwrap();
        let r = gen_preamble(PreambleRole::Relay, &p, 1).unwrap();
        // One OFDM symbol (body + prefix): 64 + 32 = 96 with defaults.
        assert_eq!(a.len() - r.len(), p.n_subcarriers + p.cp_len);
        assert_eq!(a.len() - r.len(), 96);
        assert_eq!(a.len(), 4 * p.symbol_len());
    }

    #[test]
    fn sts_windows_do_not_overlap() {
        let p = params();
        let a = FramePreamble::generate(PreambleRole::EndNodeA, &p, 1).unwrap();
        let b = FramePreamble::generate(PreambleRole::EndNodeB, &p, 1).unwrap();
        let sym = p.symbol_len();
        // A is silent while B trains, and vice versa.
        assert!(a.samples[sym..2 * sym].iter().all(|s| s.norm() == 0.0));
        assert!(b.samples[..sym].iter().all(|s| s.norm() == 0.0));
        // Inner product of A's STS window with B's concurrent samples of the
        // noiseless superposition is exactly A's window energy: B adds zero.
        let sup: Vec<Cpx> = a.samples.iter().zip(&b.samples).map(|(x, y)| x + y).collect();
        let dot: Cpx = a.samples[..sym].iter().zip(&b.samples[..sym]).map(|(x, y)| x * y.conj()).sum();
        assert_eq!(dot, Cpx::new(0.0, 0.0));
        let sup_dot: Cpx =
            a.samples[..sym].iter().zip(&sup[..sym]).map(|(x, y)| y * x.conj()).sum();
        let self_dot: Cpx =
            a.samples[..sym].iter().map(|x| x * x.conj()).sum();
        assert!((sup_dot - self_dot).norm() < 1e-12);
    }

    #[test]
    fn sts_field_is_periodic() {
        let p = params();
        let a = FramePreamble::generate(PreambleRole::EndNodeA, &p, 1).unwrap();
        let l = p.sts_len;
        // With C == L the field is three exact copies of the unit.
        let field = &a.samples[..p.symbol_len()];
        assert_eq!(&field[..l], a.sts_sequence.as_slice());
        assert_eq!(&field[l..2 * l], a.sts_sequence.as_slice());
        assert_eq!(&field[2 * l..3 * l], a.sts_sequence.as_slice());
        assert_eq!(a.first_sts_copy_offset(&p), 0);
    }

    #[test]
    fn training_fields_have_unit_average_power() {
        let p = params();
        for role in [PreambleRole::EndNodeA, PreambleRole::EndNodeB, PreambleRole::Relay] {
            let pre = FramePreamble::generate(role, &p, 1).unwrap();
            for span in &pre.layout {
                if span.field == PreambleField::Silence {
                    continue;
                }
                // The symbol body is exactly unit average power; the field
                // including the prefix replays a body segment, so it only
                // approximates it.
                let body = &pre.samples[span.offset + p.cp_len..span.offset + span.len];
                let body_avg: f64 =
                    body.iter().map(|s| s.norm_sqr()).sum::<f64>() / body.len() as f64;
                assert!((body_avg - 1.0).abs() < 1e-9, "{role:?} body power {body_avg}");
                let field = &pre.samples[span.offset..span.offset + span.len];
                let field_avg: f64 =
                    field.iter().map(|s| s.norm_sqr()).sum::<f64>() / field.len() as f64;
                assert!((field_avg - 1.0).abs() < 0.1, "{role:?} field power {field_avg}");
            }
        }
    }

    #[test]
    fn zero_fractional_delay_is_identity() {
        let p = params();
        let a = FramePreamble::generate(PreambleRole::EndNodeA, &p, 1).unwrap();
        let rendered = a.render(&p, 0.0);
        assert_eq!(rendered.len(), a.samples.len());
        for (x, y) in rendered.iter().zip(&a.samples) {
            assert!((x - y).norm() < 1e-12);
        }
    }

    #[test]
    fn one_sample_fractional_delay_is_a_cyclic_shift_per_body() {
        let p = params();
        let a = FramePreamble::generate(PreambleRole::EndNodeA, &p, 1).unwrap();
        let shifted = a.render(&p, 1.0);
        let n = p.n_subcarriers;
        let c = p.cp_len;
        for span in &a.layout {
            if span.field == PreambleField::Silence {
                continue;
            }
            let body = &a.samples[span.offset + c..span.offset + c + n];
            let body_shifted = &shifted[span.offset + c..span.offset + c + n];
            for i in 0..n {
                let expect = body[(i + n - 1) % n];
                assert!((body_shifted[i] - expect).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn invalid_params_rejected() {
        let mut p = params();
        p.sts_len = 30;
        assert!(gen_preamble(PreambleRole::Relay, &p, 0).is_err());
    }
}
