//! Single-tap channel: timing resample, phase offset, carrier frequency
//! offset and complex AWGN.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::ComplexSequence;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelConfig {
    /// Target SNR against a unit-power input. `f64::INFINITY` disables noise.
    pub snr_db: f64,
    /// Normalised cycles/sample.
    pub carrier_freq_offset: f64,
    /// Radians.
    pub phase_offset: f64,
    /// Output sample `n` reads the input at position `n * ratio`.
    pub timing_resample_ratio: f64,
    pub seed: u64,
}

impl ChannelConfig {
    pub fn noiseless() -> Self {
        ChannelConfig {
            snr_db: f64::INFINITY,
            carrier_freq_offset: 0.0,
            phase_offset: 0.0,
            timing_resample_ratio: 1.0,
            seed: 0,
        }
    }

    pub fn awgn(snr_db: f64, seed: u64) -> Self {
        ChannelConfig {
            snr_db,
            seed,
            ..Self::noiseless()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.snr_db.is_nan() || self.snr_db == f64::NEG_INFINITY {
            return Err(Error::Config(format!("invalid SNR {}", self.snr_db)));
        }
        if !(0.9..=1.1).contains(&self.timing_resample_ratio) {
            return Err(Error::Config(format!(
                "timing resample ratio {} outside [0.9, 1.1]",
                self.timing_resample_ratio
            )));
        }
        if !self.carrier_freq_offset.is_finite() || !self.phase_offset.is_finite() {
            return Err(Error::Config("channel offsets must be finite".into()));
        }
        Ok(())
    }

    /// Noise variance relative to unit signal power, `10^(-snr/10)`.
    pub fn noise_power(&self) -> f64 {
        if self.snr_db == f64::INFINITY {
            0.0
        } else {
            10f64.powf(-self.snr_db / 10.0)
        }
    }
}

pub fn apply_channel(x: &ComplexSequence, cfg: &ChannelConfig) -> Result<ComplexSequence> {
    cfg.validate()?;
    if x.i().iter().chain(x.q()).any(|v| !v.is_finite()) {
        return Err(Error::Numeric("channel input has non-finite samples".into()));
    }
    let n = x.len();
    let (mut re, mut im) = resample(x, cfg.timing_resample_ratio);

    if cfg.phase_offset != 0.0 || cfg.carrier_freq_offset != 0.0 {
        for k in 0..n {
            let angle = cfg.phase_offset + 2.0 * PI * cfg.carrier_freq_offset * k as f64;
            let (s, c) = angle.sin_cos();
            let (a, b) = (re[k], im[k]);
            re[k] = a * c - b * s;
            im[k] = a * s + b * c;
        }
    }

    let noise_power = cfg.noise_power();
    if noise_power > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let normal = Normal::new(0.0, (noise_power / 2.0).sqrt())
            .map_err(|e| Error::Numeric(format!("noise distribution: {e}")))?;
        for k in 0..n {
            re[k] += normal.sample(&mut rng);
            im[k] += normal.sample(&mut rng);
        }
    }
    ComplexSequence::from_f64(&re, &im)
}

/// Linear-interpolation resampler; positions past the end read zeros.
fn resample(x: &ComplexSequence, ratio: f64) -> (Vec<f64>, Vec<f64>) {
    let n = x.len();
    let at = |v: &[f32], idx: usize| if idx < n { v[idx] as f64 } else { 0.0 };
    let mut re = Vec::with_capacity(n);
    let mut im = Vec::with_capacity(n);
    for k in 0..n {
        let pos = k as f64 * ratio;
        let base = pos.floor() as usize;
        let frac = pos - base as f64;
        if frac == 0.0 {
            re.push(at(x.i(), base));
            im.push(at(x.q(), base));
        } else {
            re.push((1.0 - frac) * at(x.i(), base) + frac * at(x.i(), base + 1));
            im.push((1.0 - frac) * at(x.q(), base) + frac * at(x.q(), base + 1));
        }
    }
    (re, im)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{modulate, Modulation, ModulatorConfig};

    fn qpsk(seed: u64) -> ComplexSequence {
        modulate(Modulation::Qpsk, 128, seed, &ModulatorConfig::default()).unwrap()
    }

    #[test]
    fn identity_channel_is_exact() {
        let x = qpsk(1);
        assert_eq!(apply_channel(&x, &ChannelConfig::noiseless()).unwrap(), x);
    }

    #[test]
    fn quarter_turn_maps_i_q_to_minus_q_i() {
        let x = qpsk(2);
        let cfg = ChannelConfig {
            phase_offset: PI / 2.0,
            ..ChannelConfig::noiseless()
        };
        let y = apply_channel(&x, &cfg).unwrap();
        for k in 0..x.len() {
            assert!((y.i()[k] + x.q()[k]).abs() < 1e-6);
            assert!((y.q()[k] - x.i()[k]).abs() < 1e-6);
        }
    }

    #[test]
    fn phase_and_cfo_commute() {
        let x = qpsk(3);
        let both = ChannelConfig {
            phase_offset: 0.7,
            carrier_freq_offset: 0.013,
            ..ChannelConfig::noiseless()
        };
        let phase_only = ChannelConfig {
            phase_offset: 0.7,
            ..ChannelConfig::noiseless()
        };
        let cfo_only = ChannelConfig {
            carrier_freq_offset: 0.013,
            ..ChannelConfig::noiseless()
        };
        let direct = apply_channel(&x, &both).unwrap();
        let a = apply_channel(&apply_channel(&x, &phase_only).unwrap(), &cfo_only).unwrap();
        let b = apply_channel(&apply_channel(&x, &cfo_only).unwrap(), &phase_only).unwrap();
        for k in 0..x.len() {
            for y in [&a, &b] {
                assert!((y.i()[k] - direct.i()[k]).abs() < 1e-5);
                assert!((y.q()[k] - direct.q()[k]).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn noise_is_seeded() {
        let x = qpsk(4);
        let a = apply_channel(&x, &ChannelConfig::awgn(5.0, 9)).unwrap();
        assert_eq!(a, apply_channel(&x, &ChannelConfig::awgn(5.0, 9)).unwrap());
        assert_ne!(a, apply_channel(&x, &ChannelConfig::awgn(5.0, 10)).unwrap());
    }

    #[test]
    fn invalid_configs_rejected() {
        let x = qpsk(5);
        let cfg = ChannelConfig {
            timing_resample_ratio: 1.2,
            ..ChannelConfig::noiseless()
        };
        assert!(matches!(apply_channel(&x, &cfg), Err(Error::Config(_))));
        assert!(matches!(
            apply_channel(&x, &ChannelConfig::awgn(f64::NAN, 0)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn resample_interpolates_linearly() {
        let x = ComplexSequence::new(vec![0.0, 1.0, 2.0, 3.0], vec![0.0; 4]).unwrap();
        let cfg = ChannelConfig {
            timing_resample_ratio: 0.95,
            ..ChannelConfig::noiseless()
        };
        let y = apply_channel(&x, &cfg).unwrap();
        for k in 0..4 {
            assert!((y.i()[k] as f64 - 0.95 * k as f64).abs() < 1e-6);
        }
    }
}
