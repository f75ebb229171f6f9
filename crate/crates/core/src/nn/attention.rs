//! Scaled additive attention pooling over time.
//!
//! `u_t = tanh(W h_t + b)`, `e_t = v·u_t`, `α = softmax(e / √A)` and the
//! pooled vector is `Σ_t α_t h_t`.

use rand::Rng;

use super::{tanh, uniform, view, view_mut, Parameters, TensorKind, TensorView, TensorViewMut};
use crate::error::{Error, Result};
use crate::linalg::{add_row_sums, gemm, MatMut, MatRef};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct AdditiveAttention<F> {
    input: usize,
    dim: usize,
    /// `input x A`
    pub weight: Vec<F>,
    pub bias: Vec<F>,
    pub score: Vec<F>,
}

#[derive(Clone, Debug)]
pub struct AttentionCache<F> {
    h: Vec<F>,
    u: Vec<F>,
    /// `B x T` attention weights.
    pub alpha: Vec<F>,
    batch: usize,
    len: usize,
}

impl<F: Scalar> AdditiveAttention<F> {
    pub fn new(input: usize, dim: usize, weight: Vec<F>, bias: Vec<F>, score: Vec<F>) -> Result<Self> {
        if dim == 0 || weight.len() != input * dim || bias.len() != dim || score.len() != dim {
            return Err(Error::Shape("attention parameter shape mismatch".into()));
        }
        Ok(AdditiveAttention {
            input,
            dim,
            weight,
            bias,
            score,
        })
    }

    pub fn init<R: Rng + ?Sized>(input: usize, dim: usize, rng: &mut R) -> Result<Self> {
        let wb = 1.0 / (input as f64).sqrt();
        let weight = uniform(input * dim, wb, rng);
        let bias = uniform(dim, wb, rng);
        let score = uniform(dim, 1.0 / (dim as f64).sqrt(), rng);
        Self::new(input, dim, weight, bias, score)
    }

    pub fn input(&self) -> usize {
        self.input
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn zeros_like(&self) -> Self {
        AdditiveAttention {
            weight: vec![F::zero(); self.weight.len()],
            bias: vec![F::zero(); self.bias.len()],
            score: vec![F::zero(); self.score.len()],
            ..self.clone()
        }
    }

    /// Raw scores `e_t` for `h` laid out `(B·T) x input`.
    fn scores(&self, h: &[F], rows: usize) -> (Vec<F>, Vec<F>) {
        let a = self.dim;
        let mut u = Vec::with_capacity(rows * a);
        for _ in 0..rows {
            u.extend_from_slice(&self.bias);
        }
        gemm(
            F::one(),
            MatRef::new(h, rows, self.input),
            MatRef::new(&self.weight, self.input, a),
            F::one(),
            MatMut::new(&mut u, rows, a),
        );
        u.iter_mut().for_each(|v| *v = tanh(*v));
        let e = u
            .chunks_exact(a)
            .map(|row| row.iter().zip(&self.score).fold(F::zero(), |s, (&x, &w)| s + x * w))
            .collect();
        (u, e)
    }

    /// Returns the pooled `B x input` matrix.
    pub fn forward(&self, h: &[F], batch: usize, len: usize) -> Result<(Vec<F>, AttentionCache<F>)> {
        let d = self.input;
        if h.len() != batch * len * d || len == 0 {
            return Err(Error::Shape(format!(
                "attention input has {} values, expected {batch}x{len}x{d}",
                h.len()
            )));
        }
        let rows = batch * len;
        let (u, e) = self.scores(h, rows);
        let scale = F::one() / F::of(self.dim as f64).sqrt();
        let mut alpha = vec![F::zero(); rows];
        let mut pooled = vec![F::zero(); batch * d];
        for b in 0..batch {
            let eb = &e[b * len..(b + 1) * len];
            let ab = &mut alpha[b * len..(b + 1) * len];
            let max = eb.iter().fold(F::neg_infinity(), |m, &v| m.max(v * scale));
            let mut total = F::zero();
            for (a, &v) in ab.iter_mut().zip(eb) {
                *a = (v * scale - max).exp();
                total += *a;
            }
            let out = &mut pooled[b * d..(b + 1) * d];
            for (t, a) in ab.iter_mut().enumerate() {
                *a /= total;
                let ht = &h[(b * len + t) * d..(b * len + t + 1) * d];
                for (o, &x) in out.iter_mut().zip(ht) {
                    *o += *a * x;
                }
            }
        }
        Ok((
            pooled,
            AttentionCache {
                h: h.to_vec(),
                u,
                alpha,
                batch,
                len,
            },
        ))
    }

    /// Returns the cotangent of `h` and accumulates parameter gradients.
    pub fn backward(&self, cache: &AttentionCache<F>, dpooled: &[F], grads: &mut AdditiveAttention<F>) -> Vec<F> {
        let (d, a) = (self.input, self.dim);
        let (batch, len) = (cache.batch, cache.len);
        let rows = batch * len;
        let scale = F::one() / F::of(a as f64).sqrt();
        let mut dh = vec![F::zero(); rows * d];
        let mut de = vec![F::zero(); rows];
        for b in 0..batch {
            let dout = &dpooled[b * d..(b + 1) * d];
            let ab = &cache.alpha[b * len..(b + 1) * len];
            let mut dalpha = vec![F::zero(); len];
            for t in 0..len {
                let row = b * len + t;
                let ht = &cache.h[row * d..(row + 1) * d];
                dalpha[t] = ht.iter().zip(dout).fold(F::zero(), |s, (&x, &g)| s + x * g);
                for (dx, &g) in dh[row * d..(row + 1) * d].iter_mut().zip(dout) {
                    *dx += ab[t] * g;
                }
            }
            let mean = ab.iter().zip(&dalpha).fold(F::zero(), |s, (&p, &g)| s + p * g);
            for t in 0..len {
                de[b * len + t] = ab[t] * (dalpha[t] - mean) * scale;
            }
        }
        let mut da = vec![F::zero(); rows * a];
        for (r, row) in da.chunks_exact_mut(a).enumerate() {
            let u = &cache.u[r * a..(r + 1) * a];
            for j in 0..a {
                grads.score[j] += de[r] * u[j];
                row[j] = de[r] * self.score[j] * (F::one() - u[j] * u[j]);
            }
        }
        add_row_sums(&mut grads.bias, &da, a);
        gemm(
            F::one(),
            MatRef::new(&cache.h, rows, d).t(),
            MatRef::new(&da, rows, a),
            F::one(),
            MatMut::new(&mut grads.weight, d, a),
        );
        gemm(
            F::one(),
            MatRef::new(&da, rows, a),
            MatRef::new(&self.weight, d, a).t(),
            F::one(),
            MatMut::new(&mut dh, rows, d),
        );
        dh
    }
}

impl<F: Scalar> Parameters<F> for AdditiveAttention<F> {
    fn tensors(&self) -> Vec<TensorView<'_, F>> {
        let t = TensorKind::Trainable;
        vec![
            view("attn.weight", t, &self.weight),
            view("attn.bias", t, &self.bias),
            view("attn.score", t, &self.score),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<TensorViewMut<'_, F>> {
        let t = TensorKind::Trainable;
        vec![
            view_mut("attn.weight", t, &mut self.weight),
            view_mut("attn.bias", t, &mut self.bias),
            view_mut("attn.score", t, &mut self.score),
        ]
    }
}
