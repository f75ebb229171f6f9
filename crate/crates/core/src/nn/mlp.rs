//! Two-layer perceptron head: `Linear → ReLU → Linear`.

use rand::Rng;

use super::{uniform, view, view_mut, Parameters, TensorKind, TensorView, TensorViewMut};
use crate::error::{Error, Result};
use crate::linalg::{add_row_sums, gemm, MatMut, MatRef};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<F> {
    input: usize,
    hidden: usize,
    output: usize,
    /// `input x hidden`
    pub w1: Vec<F>,
    pub b1: Vec<F>,
    /// `hidden x output`
    pub w2: Vec<F>,
    pub b2: Vec<F>,
}

#[derive(Clone, Debug)]
pub struct MlpCache<F> {
    x: Vec<F>,
    hidden: Vec<F>,
    rows: usize,
}

fn affine<F: Scalar>(x: &[F], rows: usize, w: &[F], b: &[F], cols_in: usize, cols_out: usize) -> Vec<F> {
    let mut y = Vec::with_capacity(rows * cols_out);
    for _ in 0..rows {
        y.extend_from_slice(b);
    }
    gemm(
        F::one(),
        MatRef::new(x, rows, cols_in),
        MatRef::new(w, cols_in, cols_out),
        F::one(),
        MatMut::new(&mut y, rows, cols_out),
    );
    y
}

impl<F: Scalar> Mlp<F> {
    pub fn init<R: Rng + ?Sized>(input: usize, hidden: usize, output: usize, rng: &mut R) -> Self {
        let b1 = 1.0 / (input as f64).sqrt();
        let b2 = 1.0 / (hidden as f64).sqrt();
        Mlp {
            input,
            hidden,
            output,
            w1: uniform(input * hidden, b1, rng),
            b1: uniform(hidden, b1, rng),
            w2: uniform(hidden * output, b2, rng),
            b2: uniform(output, b2, rng),
        }
    }

    pub fn input(&self) -> usize {
        self.input
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn output(&self) -> usize {
        self.output
    }

    pub fn zeros_like(&self) -> Self {
        Mlp {
            w1: vec![F::zero(); self.w1.len()],
            b1: vec![F::zero(); self.b1.len()],
            w2: vec![F::zero(); self.w2.len()],
            b2: vec![F::zero(); self.b2.len()],
            ..self.clone()
        }
    }

    /// `x` is `rows x input`; returns `rows x output` logits.
    pub fn forward(&self, x: &[F], rows: usize) -> Result<(Vec<F>, MlpCache<F>)> {
        if x.len() != rows * self.input {
            return Err(Error::Shape(format!(
                "MLP input has {} values, expected {rows}x{}",
                x.len(),
                self.input
            )));
        }
        let mut hidden = affine(x, rows, &self.w1, &self.b1, self.input, self.hidden);
        hidden.iter_mut().for_each(|v| *v = v.max(F::zero()));
        let y = affine(&hidden, rows, &self.w2, &self.b2, self.hidden, self.output);
        Ok((
            y,
            MlpCache {
                x: x.to_vec(),
                hidden,
                rows,
            },
        ))
    }

    pub fn backward(&self, cache: &MlpCache<F>, dy: &[F], grads: &mut Mlp<F>) -> Vec<F> {
        let (i, h, o, rows) = (self.input, self.hidden, self.output, cache.rows);
        add_row_sums(&mut grads.b2, dy, o);
        gemm(
            F::one(),
            MatRef::new(&cache.hidden, rows, h).t(),
            MatRef::new(dy, rows, o),
            F::one(),
            MatMut::new(&mut grads.w2, h, o),
        );
        let mut dh = vec![F::zero(); rows * h];
        gemm(
            F::one(),
            MatRef::new(dy, rows, o),
            MatRef::new(&self.w2, h, o).t(),
            F::zero(),
            MatMut::new(&mut dh, rows, h),
        );
        // ReLU subgradient is 0 at the kink
        for (g, &a) in dh.iter_mut().zip(&cache.hidden) {
            if a <= F::zero() {
                *g = F::zero();
            }
        }
        add_row_sums(&mut grads.b1, &dh, h);
        gemm(
            F::one(),
            MatRef::new(&cache.x, rows, i).t(),
            MatRef::new(&dh, rows, h),
            F::one(),
            MatMut::new(&mut grads.w1, i, h),
        );
        let mut dx = vec![F::zero(); rows * i];
        gemm(
            F::one(),
            MatRef::new(&dh, rows, h),
            MatRef::new(&self.w1, i, h).t(),
            F::zero(),
            MatMut::new(&mut dx, rows, i),
        );
        dx
    }
}

impl<F: Scalar> Parameters<F> for Mlp<F> {
    fn tensors(&self) -> Vec<TensorView<'_, F>> {
        let t = TensorKind::Trainable;
        vec![
            view("mlp.w1", t, &self.w1),
            view("mlp.b1", t, &self.b1),
            view("mlp.w2", t, &self.w2),
            view("mlp.b2", t, &self.b2),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<TensorViewMut<'_, F>> {
        let t = TensorKind::Trainable;
        vec![
            view_mut("mlp.w1", t, &mut self.w1),
            view_mut("mlp.b1", t, &mut self.b1),
            view_mut("mlp.w2", t, &mut self.w2),
            view_mut("mlp.b2", t, &mut self.b2),
        ]
    }
}
