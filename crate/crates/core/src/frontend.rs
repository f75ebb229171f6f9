//! Learnable complex subband filter bank.
//!
//! Each subband response is the complex correlation of the baseband input
//! with one complex filter,
//! `z_s[n] = Σ_k w_s[k] · x[n + k - P]` with `P = (K - 1) / 2`,
//! zero-padded so the output keeps the input length. Written out in real
//! arithmetic this is `y_r = x_r ⋆ w_r - x_i ⋆ w_i`, `y_i = x_r ⋆ w_i + x_i ⋆ w_r`.
//! The kernel is not flipped.
//!
//! Gradients use the complex cotangent convention: for a real loss `L` and a
//! complex quantity `u`, the cotangent is `∂L/∂Re(u) + j ∂L/∂Im(u)`.

use std::f64::consts::PI;

use rand::Rng;
use rustfft::{num_complex::Complex64, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{uniform, view, view_mut, Parameters, TensorKind, TensorView, TensorViewMut};
use crate::scalar::Scalar;

/// Lower bound applied to Morlet bandwidths.
pub const SIGMA_MIN: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parameterization {
    Free,
    FixedMorlet,
    LearnableMorlet,
}

/// `S` complex filters of odd length `K`, stored planar as `S x K`.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexFilterBank<F> {
    mode: Parameterization,
    num_filters: usize,
    kernel_len: usize,
    taps_re: Vec<F>,
    taps_im: Vec<F>,
    center_freqs: Vec<F>,
    bandwidths: Vec<F>,
}

/// `S` complex subband sequences of length `T`, planar `S x T`.
#[derive(Clone, Debug, PartialEq)]
pub struct SubbandResponse<F> {
    pub num_subbands: usize,
    pub len: usize,
    pub re: Vec<F>,
    pub im: Vec<F>,
}

impl<F: Scalar> SubbandResponse<F> {
    pub fn zeros(num_subbands: usize, len: usize) -> Self {
        SubbandResponse {
            num_subbands,
            len,
            re: vec![F::zero(); num_subbands * len],
            im: vec![F::zero(); num_subbands * len],
        }
    }
}

/// Gradients of a bank's taps, `S x K` each.
#[derive(Clone, Debug, PartialEq)]
pub struct TapGrads<F> {
    pub re: Vec<F>,
    pub im: Vec<F>,
}

fn check_kernel(num_filters: usize, kernel_len: usize) -> Result<()> {
    if num_filters == 0 {
        return Err(Error::Config("filter bank needs at least one filter".into()));
    }
    if kernel_len.is_multiple_of(2) {
        return Err(Error::Config(format!("kernel length must be odd, got {kernel_len}")));
    }
    Ok(())
}

impl<F: Scalar> ComplexFilterBank<F> {
    /// Free bank with explicit taps.
    pub fn from_taps(num_filters: usize, kernel_len: usize, taps_re: Vec<F>, taps_im: Vec<F>) -> Result<Self> {
        check_kernel(num_filters, kernel_len)?;
        if taps_re.len() != num_filters * kernel_len || taps_im.len() != num_filters * kernel_len {
            return Err(Error::Shape(format!(
                "expected {num_filters}x{kernel_len} taps, got {} / {}",
                taps_re.len(),
                taps_im.len()
            )));
        }
        Ok(ComplexFilterBank {
            mode: Parameterization::Free,
            num_filters,
            kernel_len,
            taps_re,
            taps_im,
            center_freqs: Vec::new(),
            bandwidths: Vec::new(),
        })
    }

    /// Free bank with taps drawn from `U[-1/√(SK), 1/√(SK)]`.
    pub fn random_free<R: Rng + ?Sized>(num_filters: usize, kernel_len: usize, rng: &mut R) -> Result<Self> {
        check_kernel(num_filters, kernel_len)?;
        let n = num_filters * kernel_len;
        let bound = 1.0 / (n as f64).sqrt();
        let taps_re = uniform(n, bound, rng);
        let taps_im = uniform(n, bound, rng);
        Self::from_taps(num_filters, kernel_len, taps_re, taps_im)
    }

    /// Morlet bank with centre frequencies evenly spaced in (-0.5, 0.5) and
    /// a common initial bandwidth of `max((K - 1) / 6, 1)` samples.
    pub fn morlet(num_filters: usize, kernel_len: usize, mode: Parameterization) -> Result<Self> {
        check_kernel(num_filters, kernel_len)?;
        if mode == Parameterization::Free {
            return Err(Error::Config("morlet() needs a Morlet parameterization".into()));
        }
        let center_freqs = (0..num_filters)
            .map(|s| F::of(-0.5 + (s as f64 + 0.5) / num_filters as f64))
            .collect();
        let sigma = ((kernel_len as f64 - 1.0) / 6.0).max(1.0);
        let bandwidths = vec![F::of(sigma); num_filters];
        Self::morlet_with(kernel_len, mode, center_freqs, bandwidths)
    }

    pub fn morlet_with(
        kernel_len: usize,
        mode: Parameterization,
        center_freqs: Vec<F>,
        bandwidths: Vec<F>,
    ) -> Result<Self> {
        let num_filters = center_freqs.len();
        check_kernel(num_filters, kernel_len)?;
        if bandwidths.len() != num_filters {
            return Err(Error::Shape("one bandwidth per centre frequency".into()));
        }
        if bandwidths.iter().any(|s| !(*s > F::zero())) {
            return Err(Error::Config("Morlet bandwidths must be positive".into()));
        }
        let n = num_filters * kernel_len;
        Ok(ComplexFilterBank {
            mode,
            num_filters,
            kernel_len,
            taps_re: vec![F::zero(); n],
            taps_im: vec![F::zero(); n],
            center_freqs,
            bandwidths,
        })
    }

    pub fn mode(&self) -> Parameterization {
        self.mode
    }

    pub fn num_filters(&self) -> usize {
        self.num_filters
    }

    pub fn kernel_len(&self) -> usize {
        self.kernel_len
    }

    pub fn center_freqs(&self) -> &[F] {
        &self.center_freqs
    }

    pub fn bandwidths(&self) -> &[F] {
        &self.bandwidths
    }

    /// Same-shaped bank with every tensor zeroed; used as a gradient holder.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.data.iter_mut().for_each(|v| *v = F::zero());
        }
        z.taps_re.iter_mut().for_each(|v| *v = F::zero());
        z.taps_im.iter_mut().for_each(|v| *v = F::zero());
        z
    }

    /// Current filter taps; Morlet modes regenerate them from `(f_s, σ_s)`.
    pub fn taps(&self) -> (Vec<F>, Vec<F>) {
        match self.mode {
            Parameterization::Free => (self.taps_re.clone(), self.taps_im.clone()),
            _ => morlet_taps(&self.center_freqs, &self.bandwidths, self.kernel_len),
        }
    }

    /// `nfft`-point DFT of every filter's taps (zero-padded), one row per
    /// filter, bin `k` at `k / nfft` cycles per sample.
    pub fn frequency_response(&self, nfft: usize) -> Result<Vec<Vec<Complex64>>> {
        if nfft < self.kernel_len {
            return Err(Error::Config(format!(
                "DFT length {nfft} is shorter than the kernel length {}",
                self.kernel_len
            )));
        }
        let (re, im) = self.taps();
        let fft = FftPlanner::new().plan_fft_forward(nfft);
        Ok((0..self.num_filters)
            .map(|s| {
                let mut buf = vec![Complex64::new(0.0, 0.0); nfft];
                let row = s * self.kernel_len..(s + 1) * self.kernel_len;
                for (b, (r, i)) in buf.iter_mut().zip(re[row.clone()].iter().zip(&im[row])) {
                    *b = Complex64::new(r.as_f64(), i.as_f64());
                }
                fft.process(&mut buf);
                buf
            })
            .collect())
    }

    pub fn forward(&self, x_re: &[F], x_im: &[F]) -> Result<SubbandResponse<F>> {
        let (w_re, w_im) = self.taps();
        complex_conv_forward(x_re, x_im, &w_re, &w_im, self.num_filters, self.kernel_len)
    }

    /// Folds tap gradients into this bank's parameter gradients: taps for the
    /// free mode, `(f_s, σ_s)` for learnable Morlet, nothing for fixed Morlet.
    pub fn accumulate_grads(&self, tap_grads: &TapGrads<F>, into: &mut ComplexFilterBank<F>) {
        match self.mode {
            Parameterization::Free => {
                add(&mut into.taps_re, &tap_grads.re);
                add(&mut into.taps_im, &tap_grads.im);
            }
            Parameterization::LearnableMorlet => {
                let (gf, gs) = morlet_backward(&self.center_freqs, &self.bandwidths, self.kernel_len, tap_grads);
                add(&mut into.center_freqs, &gf);
                add(&mut into.bandwidths, &gs);
            }
            Parameterization::FixedMorlet => {}
        }
    }
}

fn add<F: Scalar>(acc: &mut [F], v: &[F]) {
    for (a, &b) in acc.iter_mut().zip(v) {
        *a += b;
    }
}

impl<F: Scalar> Parameters<F> for ComplexFilterBank<F> {
    fn tensors(&self) -> Vec<TensorView<'_, F>> {
        match self.mode {
            Parameterization::Free => vec![
                view("frontend.taps_re", TensorKind::Trainable, &self.taps_re),
                view("frontend.taps_im", TensorKind::Trainable, &self.taps_im),
            ],
            mode => {
                let kind = if mode == Parameterization::LearnableMorlet {
                    TensorKind::Trainable
                } else {
                    TensorKind::Frozen
                };
                vec![
                    view("frontend.center_freqs", kind, &self.center_freqs),
                    view("frontend.bandwidths", kind, &self.bandwidths),
                ]
            }
        }
    }

    fn tensors_mut(&mut self) -> Vec<TensorViewMut<'_, F>> {
        match self.mode {
            Parameterization::Free => vec![
                view_mut("frontend.taps_re", TensorKind::Trainable, &mut self.taps_re),
                view_mut("frontend.taps_im", TensorKind::Trainable, &mut self.taps_im),
            ],
            mode => {
                let kind = if mode == Parameterization::LearnableMorlet {
                    TensorKind::Trainable
                } else {
                    TensorKind::Frozen
                };
                vec![
                    view_mut("frontend.center_freqs", kind, &mut self.center_freqs),
                    view_mut("frontend.bandwidths", kind, &mut self.bandwidths),
                ]
            }
        }
    }
}

/// Complex correlation of `x` with `S` filters, "same" zero padding.
pub fn complex_conv_forward<F: Scalar>(
    x_re: &[F],
    x_im: &[F],
    w_re: &[F],
    w_im: &[F],
    num_filters: usize,
    kernel_len: usize,
) -> Result<SubbandResponse<F>> {
    let t = x_re.len();
    if x_im.len() != t {
        return Err(Error::Shape("I and Q lengths differ".into()));
    }
    if t < kernel_len {
        return Err(Error::Shape(format!(
            "sequence length {t} shorter than kernel {kernel_len}"
        )));
    }
    if w_re.len() != num_filters * kernel_len || w_im.len() != w_re.len() {
        return Err(Error::Shape("tap arrays do not match S x K".into()));
    }
    let pad = kernel_len / 2;
    let mut out = SubbandResponse::zeros(num_filters, t);
    for s in 0..num_filters {
        let wr = &w_re[s * kernel_len..(s + 1) * kernel_len];
        let wi = &w_im[s * kernel_len..(s + 1) * kernel_len];
        let zr = &mut out.re[s * t..(s + 1) * t];
        let zi = &mut out.im[s * t..(s + 1) * t];
        for n in 0..t {
            let lo = pad.saturating_sub(n);
            let hi = kernel_len.min(t + pad - n);
            let (mut ar, mut ai) = (F::zero(), F::zero());
            for k in lo..hi {
                let m = n + k - pad;
                ar += x_re[m] * wr[k] - x_im[m] * wi[k];
                ai += x_re[m] * wi[k] + x_im[m] * wr[k];
            }
            zr[n] = ar;
            zi[n] = ai;
        }
    }
    Ok(out)
}

/// Adjoint of [`complex_conv_forward`]: returns `(grad_x_re, grad_x_im)` and
/// the tap gradients.
pub fn complex_conv_backward<F: Scalar>(
    x_re: &[F],
    x_im: &[F],
    w_re: &[F],
    w_im: &[F],
    kernel_len: usize,
    grad_z: &SubbandResponse<F>,
) -> Result<(Vec<F>, Vec<F>, TapGrads<F>)> {
    let t = x_re.len();
    let num_filters = grad_z.num_subbands;
    if grad_z.len != t || x_im.len() != t || w_re.len() != num_filters * kernel_len || w_im.len() != w_re.len() {
        return Err(Error::Shape("backward shapes do not match the forward pass".into()));
    }
    let pad = kernel_len / 2;
    let mut gx_re = vec![F::zero(); t];
    let mut gx_im = vec![F::zero(); t];
    let mut gw_re = vec![F::zero(); num_filters * kernel_len];
    let mut gw_im = vec![F::zero(); num_filters * kernel_len];
    for s in 0..num_filters {
        let wr = &w_re[s * kernel_len..(s + 1) * kernel_len];
        let wi = &w_im[s * kernel_len..(s + 1) * kernel_len];
        let gr = &grad_z.re[s * t..(s + 1) * t];
        let gi = &grad_z.im[s * t..(s + 1) * t];
        let gwr = &mut gw_re[s * kernel_len..(s + 1) * kernel_len];
        let gwi = &mut gw_im[s * kernel_len..(s + 1) * kernel_len];
        for n in 0..t {
            let (g_r, g_i) = (gr[n], gi[n]);
            if g_r == F::zero() && g_i == F::zero() {
                continue;
            }
            let lo = pad.saturating_sub(n);
            let hi = kernel_len.min(t + pad - n);
            for k in lo..hi {
                let m = n + k - pad;
                // g * conj(x) and g * conj(w)
                gwr[k] += g_r * x_re[m] + g_i * x_im[m];
                gwi[k] += g_i * x_re[m] - g_r * x_im[m];
                gx_re[m] += g_r * wr[k] + g_i * wi[k];
                gx_im[m] += g_i * wr[k] - g_r * wi[k];
            }
        }
    }
    Ok((gx_re, gx_im, TapGrads { re: gw_re, im: gw_im }))
}

fn clamped_sigma<F: Scalar>(sigma: F) -> (f64, bool) {
    let s = sigma.as_f64();
    if s <= SIGMA_MIN {
        (SIGMA_MIN, true)
    } else {
        (s, false)
    }
}

/// `w_s[n] = exp(-n²/(2σ²)) · exp(j2πf n) / ‖·‖₂` for `n ∈ [-P, P]`.
pub fn morlet_taps<F: Scalar>(center_freqs: &[F], bandwidths: &[F], kernel_len: usize) -> (Vec<F>, Vec<F>) {
    let pad = (kernel_len / 2) as isize;
    let mut re = Vec::with_capacity(center_freqs.len() * kernel_len);
    let mut im = Vec::with_capacity(center_freqs.len() * kernel_len);
    for (f, sigma) in center_freqs.iter().zip(bandwidths) {
        let f = f.as_f64();
        let (sigma, _) = clamped_sigma(*sigma);
        let env: Vec<f64> = (-pad..=pad)
            .map(|n| (-((n * n) as f64) / (2.0 * sigma * sigma)).exp())
            .collect();
        let norm = env.iter().map(|g| g * g).sum::<f64>().sqrt();
        for (g, n) in env.iter().zip(-pad..=pad) {
            let (s, c) = (2.0 * PI * f * n as f64).sin_cos();
            re.push(F::of(g * c / norm));
            im.push(F::of(g * s / norm));
        }
    }
    (re, im)
}

/// Chain rule from tap gradients to `(∂L/∂f_s, ∂L/∂σ_s)`. A clamped
/// bandwidth receives zero gradient.
pub fn morlet_backward<F: Scalar>(
    center_freqs: &[F],
    bandwidths: &[F],
    kernel_len: usize,
    grad_w: &TapGrads<F>,
) -> (Vec<F>, Vec<F>) {
    let pad = (kernel_len / 2) as isize;
    let (w_re, w_im) = morlet_taps(center_freqs, bandwidths, kernel_len);
    let mut grad_f = Vec::with_capacity(center_freqs.len());
    let mut grad_sigma = Vec::with_capacity(center_freqs.len());
    for s in 0..center_freqs.len() {
        let (sigma, clamped) = clamped_sigma(bandwidths[s]);
        let s3 = sigma.powi(3);
        // d(log norm)/dσ = Σ g_m² m² / σ³ / Σ g_m²
        let (mut num, mut den) = (0.0, 0.0);
        for m in -pad..=pad {
            let g2 = (-((m * m) as f64) / (sigma * sigma)).exp();
            num += g2 * (m * m) as f64 / s3;
            den += g2;
        }
        let dlog_norm = num / den;
        let (mut gf, mut gs) = (0.0, 0.0);
        for (k, n) in (-pad..=pad).enumerate() {
            let idx = s * kernel_len + k;
            let (wr, wi) = (w_re[idx].as_f64(), w_im[idx].as_f64());
            let (gr, gi) = (grad_w.re[idx].as_f64(), grad_w.im[idx].as_f64());
            let n = n as f64;
            // dw/df = j2πn·w
            let (dfr, dfi) = (-2.0 * PI * n * wi, 2.0 * PI * n * wr);
            gf += gr * dfr + gi * dfi;
            // dw/dσ = w·(n²/σ³ - dlog‖·‖/dσ)
            let scale = n * n / s3 - dlog_norm;
            gs += (gr * wr + gi * wi) * scale;
        }
        grad_f.push(F::of(gf));
        grad_sigma.push(if clamped { F::zero() } else { F::of(gs) });
    }
    (grad_f, grad_sigma)
}
