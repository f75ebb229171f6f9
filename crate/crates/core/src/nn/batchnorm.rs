//! Per-channel batch normalisation over rows of a `(B·T) x C` matrix.

use serde::{Deserialize, Serialize};

use super::{view, view_mut, Parameters, TensorKind, TensorView, TensorViewMut};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Batch statistics.
    Train,
    /// Running statistics.
    Eval,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm<F> {
    channels: usize,
    pub momentum: f64,
    pub eps: f64,
    pub gamma: Vec<F>,
    pub beta: Vec<F>,
    pub running_mean: Vec<F>,
    pub running_var: Vec<F>,
}

/// Biased batch statistics of one forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats<F> {
    pub mean: Vec<F>,
    pub var: Vec<F>,
    pub count: usize,
}

#[derive(Clone, Debug)]
pub struct BatchNormCache<F> {
    mode: Mode,
    xhat: Vec<F>,
    inv_std: Vec<F>,
}

impl<F: Scalar> BatchNorm<F> {
    pub fn new(channels: usize, momentum: f64, eps: f64) -> Self {
        BatchNorm {
            channels,
            momentum,
            eps,
            gamma: vec![F::one(); channels],
            beta: vec![F::zero(); channels],
            running_mean: vec![F::zero(); channels],
            running_var: vec![F::one(); channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn zeros_like(&self) -> Self {
        BatchNorm {
            gamma: vec![F::zero(); self.channels],
            beta: vec![F::zero(); self.channels],
            running_mean: vec![F::zero(); self.channels],
            running_var: vec![F::zero(); self.channels],
            ..self.clone()
        }
    }

    /// Normalises `rows x channels` input. Train mode needs at least two rows.
    pub fn forward(
        &self,
        x: &[F],
        rows: usize,
        mode: Mode,
    ) -> Result<(Vec<F>, BatchNormCache<F>, Option<BatchStats<F>>)> {
        let c = self.channels;
        if x.len() != rows * c {
            return Err(Error::Shape(format!(
                "batch norm input has {} values, expected {rows}x{c}",
                x.len()
            )));
        }
        let eps = F::of(self.eps);
        let (mean, var, stats) = match mode {
            Mode::Train => {
                if rows < 2 {
                    return Err(Error::Config(format!(
                        "train-mode batch norm needs at least 2 values per channel, got {rows}"
                    )));
                }
                let n = F::of(rows as f64);
                let mut mean = vec![F::zero(); c];
                for row in x.chunks_exact(c) {
                    for (m, &v) in mean.iter_mut().zip(row) {
                        *m += v;
                    }
                }
                mean.iter_mut().for_each(|m| *m /= n);
                let mut var = vec![F::zero(); c];
                for row in x.chunks_exact(c) {
                    for ((s, &v), &m) in var.iter_mut().zip(row).zip(&mean) {
                        let d = v - m;
                        *s += d * d;
                    }
                }
                var.iter_mut().for_each(|s| *s /= n);
                let stats = BatchStats {
                    mean: mean.clone(),
                    var: var.clone(),
                    count: rows,
                };
                (mean, var, Some(stats))
            }
            Mode::Eval => (self.running_mean.clone(), self.running_var.clone(), None),
        };
        let inv_std: Vec<F> = var.iter().map(|&v| (v + eps).sqrt().recip()).collect();
        let mut xhat = vec![F::zero(); rows * c];
        let mut y = vec![F::zero(); rows * c];
        for ((xr, hr), yr) in x
            .chunks_exact(c)
            .zip(xhat.chunks_exact_mut(c))
            .zip(y.chunks_exact_mut(c))
        {
            for j in 0..c {
                let h = (xr[j] - mean[j]) * inv_std[j];
                hr[j] = h;
                yr[j] = self.gamma[j] * h + self.beta[j];
            }
        }
        Ok((y, BatchNormCache { mode, xhat, inv_std }, stats))
    }

    /// Returns `dx` and accumulates `dγ`, `dβ` into `grads`.
    pub fn backward(&self, cache: &BatchNormCache<F>, dy: &[F], grads: &mut BatchNorm<F>) -> Vec<F> {
        let c = self.channels;
        let rows = dy.len() / c;
        let mut sum_dy = vec![F::zero(); c];
        let mut sum_dy_xhat = vec![F::zero(); c];
        for (dr, hr) in dy.chunks_exact(c).zip(cache.xhat.chunks_exact(c)) {
            for j in 0..c {
                sum_dy[j] += dr[j];
                sum_dy_xhat[j] += dr[j] * hr[j];
            }
        }
        for j in 0..c {
            grads.gamma[j] += sum_dy_xhat[j];
            grads.beta[j] += sum_dy[j];
        }
        let mut dx = vec![F::zero(); rows * c];
        match cache.mode {
            Mode::Eval => {
                for (dxr, dr) in dx.chunks_exact_mut(c).zip(dy.chunks_exact(c)) {
                    for j in 0..c {
                        dxr[j] = dr[j] * self.gamma[j] * cache.inv_std[j];
                    }
                }
            }
            Mode::Train => {
                // dx = γ/σ · (dy - mean(dy) - x̂ · mean(dy · x̂))
                let n = F::of(rows as f64);
                for ((dxr, dr), hr) in dx
                    .chunks_exact_mut(c)
                    .zip(dy.chunks_exact(c))
                    .zip(cache.xhat.chunks_exact(c))
                {
                    for j in 0..c {
                        dxr[j] =
                            self.gamma[j] * cache.inv_std[j] * (dr[j] - sum_dy[j] / n - hr[j] * sum_dy_xhat[j] / n);
                    }
                }
            }
        }
        dx
    }

    /// Momentum update of the running statistics; the running variance uses
    /// the unbiased batch variance.
    pub fn update_running(&mut self, stats: &BatchStats<F>) {
        let m = F::of(self.momentum);
        let keep = F::one() - m;
        let n = stats.count as f64;
        let unbias = F::of(n / (n - 1.0).max(1.0));
        for j in 0..self.channels {
            self.running_mean[j] = keep * self.running_mean[j] + m * stats.mean[j];
            self.running_var[j] = keep * self.running_var[j] + m * stats.var[j] * unbias;
        }
    }
}

impl<F: Scalar> Parameters<F> for BatchNorm<F> {
    fn tensors(&self) -> Vec<TensorView<'_, F>> {
        vec![
            view("bn.gamma", TensorKind::Trainable, &self.gamma),
            view("bn.beta", TensorKind::Trainable, &self.beta),
            view("bn.running_mean", TensorKind::Buffer, &self.running_mean),
            view("bn.running_var", TensorKind::Buffer, &self.running_var),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<TensorViewMut<'_, F>> {
        vec![
            view_mut("bn.gamma", TensorKind::Trainable, &mut self.gamma),
            view_mut("bn.beta", TensorKind::Trainable, &mut self.beta),
            view_mut("bn.running_mean", TensorKind::Buffer, &mut self.running_mean),
            view_mut("bn.running_var", TensorKind::Buffer, &mut self.running_var),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standardised_input_passes_through() {
        let bn = BatchNorm::<f64>::new(1, 0.1, 1e-5);
        let x = vec![-1.0, 1.0, -1.0, 1.0];
        let (y, _, stats) = bn.forward(&x, 4, Mode::Train).unwrap();
        let stats = stats.unwrap();
        assert_eq!((stats.mean[0], stats.var[0]), (0.0, 1.0));
        for (a, b) in y.iter().zip(&x) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn constant_channel_maps_to_zero() {
        let bn = BatchNorm::<f64>::new(2, 0.1, 1e-5);
        let x = vec![3.0, 1.0, 3.0, 2.0, 3.0, 6.0];
        let (y, _, _) = bn.forward(&x, 3, Mode::Train).unwrap();
        assert!(y.iter().step_by(2).all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn two_row_hand_statistics() {
        let mut bn = BatchNorm::<f64>::new(1, 0.1, 1e-5);
        bn.gamma[0] = 2.0;
        bn.beta[0] = 0.5;
        // mean 3, biased var 4
        let (y, _, stats) = bn.forward(&[1.0, 5.0], 2, Mode::Train).unwrap();
        let s = (4.0f64 + 1e-5).sqrt();
        assert!((y[0] - (2.0 * -2.0 / s + 0.5)).abs() < 1e-12);
        assert!((y[1] - (2.0 * 2.0 / s + 0.5)).abs() < 1e-12);
        bn.update_running(&stats.unwrap());
        assert!((bn.running_mean[0] - 0.3).abs() < 1e-12);
        // unbiased var 8: 0.9 * 1 + 0.1 * 8
        assert!((bn.running_var[0] - 1.7).abs() < 1e-12);
    }

    #[test]
    fn train_mode_needs_two_values() {
        let bn = BatchNorm::<f64>::new(1, 0.1, 1e-5);
        assert!(matches!(bn.forward(&[1.0], 1, Mode::Train), Err(Error::Config(_))));
        assert!(bn.forward(&[1.0], 1, Mode::Eval).is_ok());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut bn = BatchNorm::<f64>::new(2, 0.1, 1e-5);
        bn.gamma = vec![1.3, -0.7];
        bn.beta = vec![0.2, 0.1];
        let x: Vec<f64> = (0..10)
            .map(|i| ((i * 7 % 5) as f64 - 2.0) * 0.3 + i as f64 * 0.01)
            .collect();
        let c: Vec<f64> = (0..10).map(|i| (i as f64 * 0.9).sin()).collect();
        for mode in [Mode::Train, Mode::Eval] {
            let loss = |x: &[f64]| -> f64 {
                bn.forward(x, 5, mode)
                    .unwrap()
                    .0
                    .iter()
                    .zip(&c)
                    .map(|(a, b)| a * b)
                    .sum()
            };
            let (_, cache, _) = bn.forward(&x, 5, mode).unwrap();
            let mut grads = bn.zeros_like();
            let dx = bn.backward(&cache, &c, &mut grads);
            for i in 0..10 {
                let mut p = x.clone();
                let mut m = x.clone();
                p[i] += 1e-6;
                m[i] -= 1e-6;
                let numeric = (loss(&p) - loss(&m)) / 2e-6;
                assert!((dx[i] - numeric).abs() < 1e-7, "{mode:?} {i}: {} vs {numeric}", dx[i]);
            }
        }
    }
}
