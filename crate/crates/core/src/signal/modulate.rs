//! Baseband modulators for the eleven-class set.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dsp::{bandlimited_message, convolve, gaussian_taps, rrc_taps};
use super::ComplexSequence;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Modulation {
    Bpsk,
    Qpsk,
    Psk8,
    Pam4,
    Qam16,
    Qam64,
    Gfsk,
    Cpfsk,
    Wbfm,
    AmDsb,
    AmSsb,
}

impl Modulation {
    pub const ALL: [Modulation; 11] = [
        Modulation::Bpsk,
        Modulation::Qpsk,
        Modulation::Psk8,
        Modulation::Pam4,
        Modulation::Qam16,
        Modulation::Qam64,
        Modulation::Gfsk,
        Modulation::Cpfsk,
        Modulation::Wbfm,
        Modulation::AmDsb,
        Modulation::AmSsb,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Modulation::Bpsk => "BPSK",
            Modulation::Qpsk => "QPSK",
            Modulation::Psk8 => "8PSK",
            Modulation::Pam4 => "PAM4",
            Modulation::Qam16 => "QAM16",
            Modulation::Qam64 => "QAM64",
            Modulation::Gfsk => "GFSK",
            Modulation::Cpfsk => "CPFSK",
            Modulation::Wbfm => "WBFM",
            Modulation::AmDsb => "AM-DSB",
            Modulation::AmSsb => "AM-SSB",
        }
    }

    /// Position in [`Modulation::ALL`].
    pub fn id(self) -> u32 {
        Self::ALL.iter().position(|&m| m == self).unwrap() as u32
    }

    pub fn from_id(id: u32) -> Result<Self> {
        Self::ALL
            .get(id as usize)
            .copied()
            .ok_or_else(|| Error::Config(format!("unknown modulation id {id}")))
    }

    pub fn is_analog(self) -> bool {
        matches!(self, Modulation::Wbfm | Modulation::AmDsb | Modulation::AmSsb)
    }

    pub fn bits_per_symbol(self) -> usize {
        match self {
            Modulation::Bpsk | Modulation::Gfsk | Modulation::Cpfsk => 1,
            Modulation::Qpsk | Modulation::Pam4 => 2,
            Modulation::Psk8 => 3,
            Modulation::Qam16 => 4,
            Modulation::Qam64 => 6,
            Modulation::Wbfm | Modulation::AmDsb | Modulation::AmSsb => 0,
        }
    }

    /// Maps one symbol's bits (MSB first) to its constellation point.
    /// Frequency-shift keys map to the NRZ level `±1`.
    pub fn map_bits(self, bits: &[u8]) -> Complex64 {
        debug_assert_eq!(bits.len(), self.bits_per_symbol());
        let value = bits.iter().fold(0usize, |acc, &b| (acc << 1) | (b & 1) as usize);
        match self {
            Modulation::Bpsk | Modulation::Gfsk | Modulation::Cpfsk => Complex64::new(1.0 - 2.0 * value as f64, 0.0),
            Modulation::Qpsk => {
                let s = std::f64::consts::FRAC_1_SQRT_2;
                Complex64::new(s * (1.0 - 2.0 * bits[0] as f64), s * (1.0 - 2.0 * bits[1] as f64))
            }
            Modulation::Psk8 => {
                let position = gray_decode(value);
                Complex64::from_polar(1.0, 2.0 * PI * position as f64 / 8.0)
            }
            Modulation::Pam4 => Complex64::new(gray_pam_level(value, 2), 0.0),
            Modulation::Qam16 => Complex64::new(gray_pam_level(value >> 2, 2), gray_pam_level(value & 0b11, 2)),
            Modulation::Qam64 => Complex64::new(gray_pam_level(value >> 3, 3), gray_pam_level(value & 0b111, 3)),
            Modulation::Wbfm | Modulation::AmDsb | Modulation::AmSsb => Complex64::new(0.0, 0.0),
        }
    }
}

impl fmt::Display for Modulation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Modulation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let wanted = s.trim().to_ascii_uppercase().replace('_', "-");
        Self::ALL
            .iter()
            .copied()
            .find(|m| m.name() == wanted || m.name().replace('-', "") == wanted.replace('-', ""))
            .ok_or_else(|| Error::Config(format!("unknown modulation '{s}'")))
    }
}

fn gray_decode(mut g: usize) -> usize {
    let mut b = g;
    while g > 1 {
        g >>= 1;
        b ^= g;
    }
    b
}

/// Gray-coded PAM level in `{-(2^bits - 1), ..., 2^bits - 1}` (odd integers).
fn gray_pam_level(value: usize, bits: u32) -> f64 {
    let position = gray_decode(value);
    2.0 * position as f64 - ((1usize << bits) - 1) as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PulseShape {
    Rectangular,
    RootRaisedCosine { rolloff: f64, span: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModulatorConfig {
    /// Samples per symbol for the digital classes.
    pub sps: usize,
    pub pulse: PulseShape,
    /// Bandwidth-time product of the GFSK Gaussian filter.
    pub gaussian_bt: f64,
    pub gaussian_span: usize,
    /// Modulation index `h` shared by GFSK and CPFSK.
    pub fsk_index: f64,
    /// Message bandwidth range (cycles/sample) for the analog classes.
    pub analog_bandwidth: (f64, f64),
    /// Peak frequency deviation of WBFM, cycles/sample per unit-RMS message.
    pub fm_deviation: f64,
    pub am_depth: f64,
}

impl Default for ModulatorConfig {
    fn default() -> Self {
        ModulatorConfig {
            sps: 8,
            pulse: PulseShape::RootRaisedCosine { rolloff: 0.35, span: 8 },
            gaussian_bt: 0.35,
            gaussian_span: 4,
            fsk_index: 0.5,
            analog_bandwidth: (0.05, 0.15),
            fm_deviation: 0.1,
            am_depth: 0.5,
        }
    }
}

/// Bits and their mapped symbols for a digital modulation.
#[derive(Clone, Debug, PartialEq)]
pub struct SymbolStream {
    pub bits: Vec<u8>,
    pub symbols: Vec<Complex64>,
}

/// Draws `n_symbols` uniformly random symbols.
pub fn symbol_stream<R: Rng + ?Sized>(kind: Modulation, n_symbols: usize, rng: &mut R) -> Result<SymbolStream> {
    let bps = kind.bits_per_symbol();
    if bps == 0 {
        return Err(Error::Config(format!("{kind} has no symbol alphabet")));
    }
    let bits: Vec<u8> = (0..n_symbols * bps).map(|_| rng.random_range(0..2u8)).collect();
    let symbols = bits.chunks_exact(bps).map(|b| kind.map_bits(b)).collect();
    Ok(SymbolStream { bits, symbols })
}

/// Upsamples `symbols` by `sps` and filters with the pulse; the output is
/// aligned so sample `k * sps` carries symbol `k` at its peak, and holds
/// `symbols.len() * sps` samples.
pub fn shape_symbols(symbols: &[Complex64], sps: usize, pulse: PulseShape) -> Vec<Complex64> {
    let mut up = vec![Complex64::new(0.0, 0.0); symbols.len() * sps];
    for (k, &s) in symbols.iter().enumerate() {
        up[k * sps] = s;
    }
    let (taps, delay) = match pulse {
        PulseShape::Rectangular => (vec![1.0; sps], 0),
        PulseShape::RootRaisedCosine { rolloff, span } => (rrc_taps(rolloff, span, sps), span * sps / 2),
    };
    let full = convolve(&up, &taps);
    full[delay..delay + up.len()].to_vec()
}

/// Generates one unit-power record; deterministic in `seed`.
pub fn modulate(kind: Modulation, length: usize, seed: u64, cfg: &ModulatorConfig) -> Result<ComplexSequence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    modulate_with(kind, length, &mut rng, cfg)
}

/// [`modulate`] drawing from a caller-provided stream.
pub fn modulate_with<R: Rng + ?Sized>(
    kind: Modulation,
    length: usize,
    rng: &mut R,
    cfg: &ModulatorConfig,
) -> Result<ComplexSequence> {
    if length == 0 {
        return Err(Error::Config("modulated length must be positive".into()));
    }
    if !kind.is_analog() && cfg.sps < 2 {
        return Err(Error::Config(format!(
            "{kind} needs at least 2 samples per symbol, got {}",
            cfg.sps
        )));
    }
    let samples = match kind {
        Modulation::Gfsk | Modulation::Cpfsk => frequency_shift(kind, length, rng, cfg)?,
        Modulation::Wbfm | Modulation::AmDsb | Modulation::AmSsb => analog(kind, length, rng, cfg),
        _ => linear(kind, length, rng, cfg)?,
    };
    normalize_power(&samples)
}

fn linear<R: Rng + ?Sized>(
    kind: Modulation,
    length: usize,
    rng: &mut R,
    cfg: &ModulatorConfig,
) -> Result<Vec<Complex64>> {
    let sps = cfg.sps;
    let guard = match cfg.pulse {
        PulseShape::Rectangular => 0,
        PulseShape::RootRaisedCosine { span, .. } => span * sps,
    };
    let jitter = rng.random_range(0..sps);
    let n_symbols = (guard * 2 + jitter + length).div_ceil(sps) + 1;
    let stream = symbol_stream(kind, n_symbols, rng)?;
    let shaped = shape_symbols(&stream.symbols, sps, cfg.pulse);
    let start = guard + jitter;
    Ok(shaped[start..start + length].to_vec())
}

fn frequency_shift<R: Rng + ?Sized>(
    kind: Modulation,
    length: usize,
    rng: &mut R,
    cfg: &ModulatorConfig,
) -> Result<Vec<Complex64>> {
    let sps = cfg.sps;
    let guard = if kind == Modulation::Gfsk {
        cfg.gaussian_span * sps
    } else {
        0
    };
    let jitter = rng.random_range(0..sps);
    let n_symbols = (guard * 2 + jitter + length).div_ceil(sps) + 1;
    let stream = symbol_stream(kind, n_symbols, rng)?;
    let held: Vec<f64> = stream
        .symbols
        .iter()
        .flat_map(|s| std::iter::repeat_n(s.re, sps))
        .collect();
    let freq: Vec<f64> = if kind == Modulation::Gfsk {
        let taps = gaussian_taps(cfg.gaussian_bt, cfg.gaussian_span, sps);
        let delay = taps.len() / 2;
        let as_complex: Vec<Complex64> = held.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        convolve(&as_complex, &taps)[delay..delay + held.len()]
            .iter()
            .map(|c| c.re)
            .collect()
    } else {
        held
    };
    // deviation h / (2 * sps) cycles/sample per unit NRZ level
    let step = PI * cfg.fsk_index / sps as f64;
    let start = guard + jitter;
    let mut phase = rng.random_range(0.0..2.0 * PI);
    Ok(freq[start..start + length]
        .iter()
        .map(|&f| {
            phase += step * f;
            Complex64::from_polar(1.0, phase)
        })
        .collect())
}

fn analog<R: Rng + ?Sized>(kind: Modulation, length: usize, rng: &mut R, cfg: &ModulatorConfig) -> Vec<Complex64> {
    let (lo, hi) = cfg.analog_bandwidth;
    let cutoff = if hi > lo { rng.random_range(lo..hi) } else { lo };
    let (message, analytic) = bandlimited_message(length, cutoff, rng);
    let rms = (message.iter().map(|v| v * v).sum::<f64>() / length as f64)
        .sqrt()
        .max(1e-12);
    match kind {
        Modulation::Wbfm => {
            let mut phase = 0.0;
            message
                .iter()
                .map(|&m| {
                    phase += 2.0 * PI * cfg.fm_deviation * m / rms;
                    Complex64::from_polar(1.0, phase)
                })
                .collect()
        }
        Modulation::AmDsb => {
            let peak = message.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-12);
            message
                .iter()
                .map(|&m| Complex64::new(1.0 + cfg.am_depth * m / peak, 0.0))
                .collect()
        }
        Modulation::AmSsb => analytic,
        _ => unreachable!("analog() only handles analog classes"),
    }
}

fn normalize_power(samples: &[Complex64]) -> Result<ComplexSequence> {
    let power = samples.iter().map(|c| c.norm_sqr()).sum::<f64>() / samples.len() as f64;
    if !(power.is_finite() && power > 0.0) {
        return Err(Error::Numeric(format!("cannot normalise signal with power {power}")));
    }
    let scale = power.sqrt().recip();
    let i: Vec<f64> = samples.iter().map(|c| c.re * scale).collect();
    let q: Vec<f64> = samples.iter().map(|c| c.im * scale).collect();
    ComplexSequence::from_f64(&i, &q)
}
