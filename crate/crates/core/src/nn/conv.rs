//! Channel-mixing 1-D convolution ("same" zero padding, stride 1) via im2col.

use rand::Rng;

use super::{uniform, view, view_mut, Parameters, TensorKind, TensorView, TensorViewMut};
use crate::error::{Error, Result};
use crate::linalg::{add_row_sums, gemm, MatMut, MatRef};
use crate::scalar::Scalar;

/// Weights are stored `[k][in][out]`, i.e. a `(k·in) x out` matrix that
/// multiplies im2col rows.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv1d<F> {
    in_channels: usize,
    out_channels: usize,
    kernel: usize,
    pub weight: Vec<F>,
    pub bias: Vec<F>,
}

#[derive(Clone, Debug)]
pub struct ConvCache<F> {
    cols: Vec<F>,
    batch: usize,
    len: usize,
}

impl<F: Scalar> Conv1d<F> {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, weight: Vec<F>, bias: Vec<F>) -> Result<Self> {
        if kernel.is_multiple_of(2) {
            return Err(Error::Config(format!("mixing kernel must be odd, got {kernel}")));
        }
        if weight.len() != kernel * in_channels * out_channels || bias.len() != out_channels {
            return Err(Error::Shape("convolution weight/bias shape mismatch".into()));
        }
        Ok(Conv1d {
            in_channels,
            out_channels,
            kernel,
            weight,
            bias,
        })
    }

    /// PyTorch-style `U[-1/√(in·k), 1/√(in·k)]` initialisation.
    pub fn init<R: Rng + ?Sized>(in_channels: usize, out_channels: usize, kernel: usize, rng: &mut R) -> Result<Self> {
        let bound = 1.0 / ((in_channels * kernel) as f64).sqrt();
        let weight = uniform(kernel * in_channels * out_channels, bound, rng);
        let bias = uniform(out_channels, bound, rng);
        Self::new(in_channels, out_channels, kernel, weight, bias)
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn kernel(&self) -> usize {
        self.kernel
    }

    pub fn zeros_like(&self) -> Self {
        Conv1d {
            weight: vec![F::zero(); self.weight.len()],
            bias: vec![F::zero(); self.bias.len()],
            ..self.clone()
        }
    }

    /// `x` is `(batch·len) x in`, rows ordered `(b, t)`.
    pub fn forward(&self, x: &[F], batch: usize, len: usize) -> Result<(Vec<F>, ConvCache<F>)> {
        let (cin, cout, k) = (self.in_channels, self.out_channels, self.kernel);
        if x.len() != batch * len * cin {
            return Err(Error::Shape(format!(
                "conv input has {} values, expected {batch}x{len}x{cin}",
                x.len()
            )));
        }
        let pad = k / 2;
        let width = k * cin;
        let rows = batch * len;
        let mut cols = vec![F::zero(); rows * width];
        for b in 0..batch {
            for t in 0..len {
                let dst = &mut cols[(b * len + t) * width..(b * len + t + 1) * width];
                for kk in 0..k {
                    let src_t = t + kk;
                    if src_t < pad || src_t - pad >= len {
                        continue;
                    }
                    let src = (b * len + src_t - pad) * cin;
                    dst[kk * cin..(kk + 1) * cin].copy_from_slice(&x[src..src + cin]);
                }
            }
        }
        let mut y = Vec::with_capacity(rows * cout);
        for _ in 0..rows {
            y.extend_from_slice(&self.bias);
        }
        gemm(
            F::one(),
            MatRef::new(&cols, rows, width),
            MatRef::new(&self.weight, width, cout),
            F::one(),
            MatMut::new(&mut y, rows, cout),
        );
        Ok((y, ConvCache { cols, batch, len }))
    }

    pub fn backward(&self, cache: &ConvCache<F>, dy: &[F], grads: &mut Conv1d<F>) -> Vec<F> {
        let (cin, cout, k) = (self.in_channels, self.out_channels, self.kernel);
        let (batch, len) = (cache.batch, cache.len);
        let rows = batch * len;
        let width = k * cin;
        add_row_sums(&mut grads.bias, dy, cout);
        gemm(
            F::one(),
            MatRef::new(&cache.cols, rows, width).t(),
            MatRef::new(dy, rows, cout),
            F::one(),
            MatMut::new(&mut grads.weight, width, cout),
        );
        let mut dcols = vec![F::zero(); rows * width];
        gemm(
            F::one(),
            MatRef::new(dy, rows, cout),
            MatRef::new(&self.weight, width, cout).t(),
            F::zero(),
            MatMut::new(&mut dcols, rows, width),
        );
        let pad = k / 2;
        let mut dx = vec![F::zero(); rows * cin];
        for b in 0..batch {
            for t in 0..len {
                let src = &dcols[(b * len + t) * width..(b * len + t + 1) * width];
                for kk in 0..k {
                    let src_t = t + kk;
                    if src_t < pad || src_t - pad >= len {
                        continue;
                    }
                    let dst = (b * len + src_t - pad) * cin;
                    for (d, &g) in dx[dst..dst + cin].iter_mut().zip(&src[kk * cin..(kk + 1) * cin]) {
                        *d += g;
                    }
                }
            }
        }
        dx
    }
}

impl<F: Scalar> Parameters<F> for Conv1d<F> {
    fn tensors(&self) -> Vec<TensorView<'_, F>> {
        vec![
            view("mix.weight", TensorKind::Trainable, &self.weight),
            view("mix.bias", TensorKind::Trainable, &self.bias),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<TensorViewMut<'_, F>> {
        vec![
            view_mut("mix.weight", TensorKind::Trainable, &mut self.weight),
            view_mut("mix.bias", TensorKind::Trainable, &mut self.bias),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn direct(conv: &Conv1d<f64>, x: &[f64], batch: usize, len: usize) -> Vec<f64> {
        let (cin, cout, k) = (conv.in_channels, conv.out_channels, conv.kernel);
        let pad = (k / 2) as isize;
        let mut y = vec![0.0; batch * len * cout];
        for b in 0..batch {
            for t in 0..len as isize {
                for o in 0..cout {
                    let mut acc = conv.bias[o];
                    for kk in 0..k as isize {
                        let src = t + kk - pad;
                        if src < 0 || src >= len as isize {
                            continue;
                        }
                        for c in 0..cin {
                            acc +=
                                conv.weight[(kk as usize * cin + c) * cout + o] * x[(b * len + src as usize) * cin + c];
                        }
                    }
                    y[(b * len + t as usize) * cout + o] = acc;
                }
            }
        }
        y
    }

    #[test]
    fn matches_direct_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let conv = Conv1d::<f64>::init(3, 4, 3, &mut rng).unwrap();
        let x: Vec<f64> = uniform(2 * 5 * 3, 1.0, &mut rng);
        let (y, _) = conv.forward(&x, 2, 5).unwrap();
        for (a, b) in y.iter().zip(direct(&conv, &x, 2, 5)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn pointwise_kernel_is_matrix_multiply() {
        let w = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2 in, 3 out
        let conv = Conv1d::new(2, 3, 1, w, vec![0.0; 3]).unwrap();
        let (y, _) = conv.forward(&[1.0, -1.0, 0.5, 2.0], 1, 2).unwrap();
        assert_eq!(y, vec![-3.0, -3.0, -3.0, 8.5, 11.0, 13.5]);
    }

    #[test]
    fn zero_weights_emit_bias() {
        let conv = Conv1d::new(2, 2, 3, vec![0.0; 12], vec![0.25, -1.0]).unwrap();
        let (y, _) = conv.forward(&[1.0; 8], 1, 4).unwrap();
        assert_eq!(y, vec![0.25, -1.0, 0.25, -1.0, 0.25, -1.0, 0.25, -1.0]);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let conv = Conv1d::<f64>::init(3, 2, 3, &mut rng).unwrap();
        let x: Vec<f64> = uniform(2 * 4 * 3, 1.0, &mut rng);
        let c: Vec<f64> = uniform(2 * 4 * 2, 1.0, &mut rng);
        let loss = |conv: &Conv1d<f64>, x: &[f64]| -> f64 {
            conv.forward(x, 2, 4)
                .unwrap()
                .0
                .iter()
                .zip(&c)
                .map(|(a, b)| a * b)
                .sum()
        };
        let (_, cache) = conv.forward(&x, 2, 4).unwrap();
        let mut grads = conv.zeros_like();
        let dx = conv.backward(&cache, &c, &mut grads);
        let h = 1e-6;
        for i in 0..x.len() {
            let (mut p, mut m) = (x.clone(), x.clone());
            p[i] += h;
            m[i] -= h;
            assert!((dx[i] - (loss(&conv, &p) - loss(&conv, &m)) / (2.0 * h)).abs() < 1e-8);
        }
        for i in 0..conv.weight.len() {
            let (mut p, mut m) = (conv.clone(), conv.clone());
            p.weight[i] += h;
            m.weight[i] -= h;
            assert!((grads.weight[i] - (loss(&p, &x) - loss(&m, &x)) / (2.0 * h)).abs() < 1e-8);
        }
        assert!((grads.bias[0] - c.iter().step_by(2).sum::<f64>()).abs() < 1e-12);
    }
}
