//! Cached FFT plans shared across the crate.

use super::Cpx;
use rustfft::{Fft, FftPlanner};
use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

type PlanKey = (usize, bool);

fn plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    static PLANS: OnceLock<Mutex<HashMap<PlanKey, Arc<dyn Fft<f64>>>>> = OnceLock::new();
    let plans = PLANS.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = plans.lock().unwrap();
    guard
        .entry((n, inverse))
        .or_insert_with(|| {
            let mut planner = FftPlanner::new();
            if inverse {
                planner.plan_fft_inverse(n)
            } else {
                planner.plan_fft_forward(n)
            }
        })
        .clone()
}

/// In-place forward DFT (no scaling).
pub fn fft(buf: &mut [Cpx]) {
    plan(buf.len(), false).process(buf);
}

/// In-place inverse DFT with 1/N scaling, so `ifft(fft(x)) == x`.
pub fn ifft(buf: &mut [Cpx]) {
    let n = buf.len();
    plan(n, true).process(buf);
    let scale = 1.0 / n as f64;
    for v in buf.iter_mut() {
        *v *= scale;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let mut buf: Vec<Cpx> =
            (0..64).map(|i| Cpx::new((i as f64).sin(), (i as f64 * 0.3).cos())).collect();
        let orig = buf.clone();
        fft(&mut buf);
        ifft(&mut buf);
        for (a, b) in buf.iter().zip(&orig) {
            assert!((a - b).norm() < 1e-12);
        }
    }
}
