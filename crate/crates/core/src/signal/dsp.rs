//! Filter prototypes and FFT helpers used by the modulators.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::FftPlanner;

/// Root-raised-cosine taps spanning `span` symbols at `sps` samples per
/// symbol, normalised to unit energy.
pub fn rrc_taps(rolloff: f64, span: usize, sps: usize) -> Vec<f64> {
    let n = span * sps;
    let half = (n / 2) as isize;
    let beta = rolloff;
    let mut taps: Vec<f64> = (-half..=half)
        .map(|k| {
            let t = k as f64 / sps as f64;
            if k == 0 {
                1.0 - beta + 4.0 * beta / PI
            } else if beta > 0.0 && ((4.0 * beta * t).abs() - 1.0).abs() < 1e-12 {
                beta / 2f64.sqrt()
                    * ((1.0 + 2.0 / PI) * (PI / (4.0 * beta)).sin() + (1.0 - 2.0 / PI) * (PI / (4.0 * beta)).cos())
            } else {
                let num = (PI * t * (1.0 - beta)).sin() + 4.0 * beta * t * (PI * t * (1.0 + beta)).cos();
                let den = PI * t * (1.0 - (4.0 * beta * t).powi(2));
                num / den
            }
        })
        .collect();
    let energy = taps.iter().map(|v| v * v).sum::<f64>().sqrt();
    taps.iter_mut().for_each(|v| *v /= energy);
    taps
}

/// Gaussian frequency-shaping filter with bandwidth-time product `bt`,
/// normalised to unit DC gain.
pub fn gaussian_taps(bt: f64, span: usize, sps: usize) -> Vec<f64> {
    let n = span * sps;
    let half = (n / 2) as isize;
    let alpha = (2f64.ln() / 2.0).sqrt() / bt;
    let mut taps: Vec<f64> = (-half..=half)
        .map(|k| {
            let t = k as f64 / sps as f64;
            (-(PI * t / alpha).powi(2)).exp()
        })
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|v| *v /= sum);
    taps
}

/// Full linear convolution of a complex signal with real taps.
pub(crate) fn convolve(signal: &[Complex64], taps: &[f64]) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); signal.len() + taps.len() - 1];
    for (i, &s) in signal.iter().enumerate() {
        if s == Complex64::new(0.0, 0.0) {
            continue;
        }
        for (k, &h) in taps.iter().enumerate() {
            out[i + k] += s * h;
        }
    }
    out
}

/// Gaussian noise low-passed to `cutoff` cycles/sample, returned as the
/// one-sided spectrum-shaped real message and its analytic counterpart.
pub(crate) fn bandlimited_message<R: Rng + ?Sized>(
    length: usize,
    cutoff: f64,
    rng: &mut R,
) -> (Vec<f64>, Vec<Complex64>) {
    let n = (2 * length).next_power_of_two();
    let mut buf: Vec<Complex64> = (0..n)
        .map(|_| Complex64::new(StandardNormal.sample(rng), 0.0))
        .collect();
    let mut planner = FftPlanner::<f64>::new();
    planner.plan_fft_forward(n).process(&mut buf);
    let mut analytic = buf.clone();
    for k in 0..n {
        let f = if k <= n / 2 { k as f64 } else { k as f64 - n as f64 } / n as f64;
        if f.abs() > cutoff {
            buf[k] = Complex64::new(0.0, 0.0);
        }
        // analytic signal keeps DC, doubles positive and drops negative bins
        analytic[k] = if f.abs() > cutoff || f < 0.0 {
            Complex64::new(0.0, 0.0)
        } else if k == 0 {
            buf[k]
        } else {
            buf[k] * 2.0
        };
    }
    let inverse = planner.plan_fft_inverse(n);
    inverse.process(&mut buf);
    inverse.process(&mut analytic);
    let scale = 1.0 / n as f64;
    let real = buf[..length].iter().map(|c| c.re * scale).collect();
    let analytic = analytic[..length].iter().map(|c| c * scale).collect();
    (real, analytic)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rrc_is_symmetric_unit_energy() {
        let taps = rrc_taps(0.35, 8, 8);
        assert_eq!(taps.len(), 65);
        for k in 0..taps.len() / 2 {
            assert!((taps[k] - taps[taps.len() - 1 - k]).abs() < 1e-12);
        }
        let e: f64 = taps.iter().map(|v| v * v).sum();
        assert!((e - 1.0).abs() < 1e-12);
        // peak at the centre
        let peak = taps.iter().cloned().fold(f64::MIN, f64::max);
        assert_eq!(peak, taps[32]);
    }

    #[test]
    fn rrc_handles_singular_points() {
        // rolloff 0.25 at sps 4 puts t = 1/(4β) = 1 exactly on a tap
        let taps = rrc_taps(0.25, 4, 4);
        assert!(taps.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn gaussian_unit_dc_gain() {
        let taps = gaussian_taps(0.35, 4, 8);
        assert!((taps.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
