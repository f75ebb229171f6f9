//! Amplitude-preserving subband features.
//!
//! For every subband response `z_s[n]` the map holds the base triplet
//! `[ln(1 + |z|), Re z, Im z]` followed, for each lag `l`, by the triplet of
//! the phase-motion product `δ_{s,l}[n] = z_s[n] · conj(z_s[n - l])`. The
//! product is defined as zero for `n < l` so every channel keeps length `T`.
//!
//! Channel layout is subband-major: subband `s` occupies channels
//! `3(1+L)s .. 3(1+L)(s+1)`, base triplet first, then lags in ascending order.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frontend::SubbandResponse;
use crate::scalar::Scalar;

pub const DEFAULT_LAGS: [usize; 4] = [1, 2, 4, 8];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct LagSet(Vec<usize>);

impl LagSet {
    /// Lags must be positive and strictly ascending. An empty set yields
    /// base features only.
    pub fn new(lags: Vec<usize>) -> Result<Self> {
        if lags.first() == Some(&0) {
            return Err(Error::Config("lags must be positive".into()));
        }
        if lags.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!("lags must be strictly ascending, got {lags:?}")));
        }
        Ok(LagSet(lags))
    }

    pub fn lags(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    fn check_len(&self, t: usize) -> Result<()> {
        match self.0.last() {
            Some(&l) if l >= t => Err(Error::Shape(format!("lag {l} not below sequence length {t}"))),
            _ => Ok(()),
        }
    }
}

impl Default for LagSet {
    fn default() -> Self {
        LagSet(DEFAULT_LAGS.to_vec())
    }
}

impl TryFrom<Vec<usize>> for LagSet {
    type Error = Error;

    fn try_from(v: Vec<usize>) -> Result<Self> {
        LagSet::new(v)
    }
}

impl From<LagSet> for Vec<usize> {
    fn from(l: LagSet) -> Self {
        l.0
    }
}

/// Number of feature channels for `S` subbands and `L` lags.
pub fn feature_channels(num_subbands: usize, num_lags: usize) -> usize {
    3 * num_subbands * (1 + num_lags)
}

/// Real `channels x T` feature array, channel-major.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap<F> {
    pub channels: usize,
    pub len: usize,
    pub data: Vec<F>,
}

impl<F: Scalar> FeatureMap<F> {
    pub fn channel(&self, c: usize) -> &[F] {
        &self.data[c * self.len..(c + 1) * self.len]
    }
}

/// Phase-motion products, `S x L x T` planar complex.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionProducts<F> {
    pub num_subbands: usize,
    pub num_lags: usize,
    pub len: usize,
    pub re: Vec<F>,
    pub im: Vec<F>,
}

#[inline]
fn log_mag<F: Scalar>(re: F, im: F) -> F {
    re.hypot(im).ln_1p()
}

/// `[ln(1 + |z|), Re z, Im z]` per subband, `3S x T`.
pub fn base_features<F: Scalar>(z: &SubbandResponse<F>) -> Vec<F> {
    let t = z.len;
    let mut out = vec![F::zero(); 3 * z.num_subbands * t];
    for s in 0..z.num_subbands {
        let (zr, zi) = (&z.re[s * t..(s + 1) * t], &z.im[s * t..(s + 1) * t]);
        let block = &mut out[3 * s * t..3 * (s + 1) * t];
        let (mag, rest) = block.split_at_mut(t);
        let (re, im) = rest.split_at_mut(t);
        for n in 0..t {
            mag[n] = log_mag(zr[n], zi[n]);
        }
        re.copy_from_slice(zr);
        im.copy_from_slice(zi);
    }
    out
}

pub fn phase_motion_products<F: Scalar>(z: &SubbandResponse<F>, lags: &LagSet) -> Result<MotionProducts<F>> {
    let t = z.len;
    lags.check_len(t)?;
    let (s_count, l_count) = (z.num_subbands, lags.len());
    let mut re = vec![F::zero(); s_count * l_count * t];
    let mut im = vec![F::zero(); s_count * l_count * t];
    for s in 0..s_count {
        let (zr, zi) = (&z.re[s * t..(s + 1) * t], &z.im[s * t..(s + 1) * t]);
        for (j, &l) in lags.lags().iter().enumerate() {
            let base = (s * l_count + j) * t;
            for n in l..t {
                let (a, b) = (zr[n], zi[n]);
                let (c, d) = (zr[n - l], zi[n - l]);
                // (a + jb)(c - jd)
                re[base + n] = a * c + b * d;
                im[base + n] = b * c - a * d;
            }
        }
    }
    Ok(MotionProducts {
        num_subbands: s_count,
        num_lags: l_count,
        len: t,
        re,
        im,
    })
}

/// `[ln(1 + |δ|), Re δ, Im δ]` per (subband, lag), `3SL x T`.
pub fn motion_features<F: Scalar>(delta: &MotionProducts<F>) -> Vec<F> {
    let t = delta.len;
    let groups = delta.num_subbands * delta.num_lags;
    let mut out = vec![F::zero(); 3 * groups * t];
    for g in 0..groups {
        let (dr, di) = (&delta.re[g * t..(g + 1) * t], &delta.im[g * t..(g + 1) * t]);
        let block = &mut out[3 * g * t..3 * (g + 1) * t];
        for n in 0..t {
            block[n] = log_mag(dr[n], di[n]);
        }
        block[t..2 * t].copy_from_slice(dr);
        block[2 * t..].copy_from_slice(di);
    }
    out
}

/// Interleaves base and motion triplets into the subband-major layout.
pub fn assemble_feature_map<F: Scalar>(
    base: &[F],
    motion: &[F],
    num_subbands: usize,
    num_lags: usize,
    len: usize,
) -> Result<FeatureMap<F>> {
    if base.len() != 3 * num_subbands * len || motion.len() != 3 * num_subbands * num_lags * len {
        return Err(Error::Shape(format!(
            "feature blocks ({}, {}) inconsistent with S={num_subbands}, L={num_lags}, T={len}",
            base.len(),
            motion.len()
        )));
    }
    let channels = feature_channels(num_subbands, num_lags);
    let mut data = Vec::with_capacity(channels * len);
    let triplet = 3 * len;
    for s in 0..num_subbands {
        data.extend_from_slice(&base[s * triplet..(s + 1) * triplet]);
        data.extend_from_slice(&motion[s * num_lags * triplet..(s + 1) * num_lags * triplet]);
    }
    Ok(FeatureMap { channels, len, data })
}

/// Human-readable channel labels in map order, e.g. `s0.base.logmag` or
/// `s3.lag4.im`.
pub fn channel_names(num_subbands: usize, lags: &LagSet) -> Vec<String> {
    let parts = ["logmag", "re", "im"];
    let mut names = Vec::with_capacity(feature_channels(num_subbands, lags.len()));
    for s in 0..num_subbands {
        let groups = std::iter::once("base".to_string()).chain(lags.lags().iter().map(|l| format!("lag{l}")));
        for g in groups {
            names.extend(parts.iter().map(|p| format!("s{s}.{g}.{p}")));
        }
    }
    names
}

/// Full feature map of one subband response.
pub fn feature_map<F: Scalar>(z: &SubbandResponse<F>, lags: &LagSet) -> Result<FeatureMap<F>> {
    let delta = phase_motion_products(z, lags)?;
    assemble_feature_map(
        &base_features(z),
        &motion_features(&delta),
        z.num_subbands,
        lags.len(),
        z.len,
    )
}

/// Cotangent of `ln(1 + |u|)` pulled back to `u`; zero at the origin.
#[inline]
fn log_mag_pullback<F: Scalar>(g: F, re: F, im: F) -> (F, F) {
    let r = re.hypot(im);
    if r == F::zero() || g == F::zero() {
        return (F::zero(), F::zero());
    }
    let scale = g / ((F::one() + r) * r);
    (scale * re, scale * im)
}

/// Gradient of a loss with respect to `z`, given the cotangent of every
/// feature channel (`grad` laid out like [`FeatureMap::data`]).
pub fn phase_motion_backward<F: Scalar>(
    z: &SubbandResponse<F>,
    lags: &LagSet,
    grad: &[F],
) -> Result<SubbandResponse<F>> {
    let t = z.len;
    lags.check_len(t)?;
    let per_subband = 3 * (1 + lags.len());
    if grad.len() != per_subband * z.num_subbands * t {
        return Err(Error::Shape(format!(
            "feature cotangent has {} values, expected {}",
            grad.len(),
            per_subband * z.num_subbands * t
        )));
    }
    let mut out = SubbandResponse::zeros(z.num_subbands, t);
    for s in 0..z.num_subbands {
        let (zr, zi) = (&z.re[s * t..(s + 1) * t], &z.im[s * t..(s + 1) * t]);
        let (gr_out, gi_out) = (&mut out.re[s * t..(s + 1) * t], &mut out.im[s * t..(s + 1) * t]);
        let block = &grad[s * per_subband * t..(s + 1) * per_subband * t];
        for n in 0..t {
            let (mr, mi) = log_mag_pullback(block[n], zr[n], zi[n]);
            gr_out[n] += mr + block[t + n];
            gi_out[n] += mi + block[2 * t + n];
        }
        for (j, &l) in lags.lags().iter().enumerate() {
            let g = &block[3 * (1 + j) * t..3 * (2 + j) * t];
            for n in l..t {
                let (a, b) = (zr[n], zi[n]);
                let (c, d) = (zr[n - l], zi[n - l]);
                let (dr, di) = (a * c + b * d, b * c - a * d);
                let (mr, mi) = log_mag_pullback(g[n], dr, di);
                let (gr, gi) = (g[t + n] + mr, g[2 * t + n] + mi);
                // ∂/∂z[n] = G · z[n-l]; ∂/∂z[n-l] = conj(G) · z[n]
                gr_out[n] += gr * c - gi * d;
                gi_out[n] += gr * d + gi * c;
                gr_out[n - l] += gr * a + gi * b;
                gi_out[n - l] += gr * b - gi * a;
            }
        }
    }
    Ok(out)
}
