//! Adam with bias correction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Parameters, TensorKind};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Optimiser state: first and second moments per tensor plus the step count.
#[derive(Clone, Debug)]
pub struct Adam<F> {
    config: AdamConfig,
    step: u64,
    m: Vec<Vec<F>>,
    v: Vec<Vec<F>>,
}

impl<F: Scalar> Adam<F> {
    pub fn new<P: Parameters<F>>(config: AdamConfig, params: &P) -> Self {
        let zeros: Vec<Vec<F>> = params.tensors().iter().map(|t| vec![F::zero(); t.data.len()]).collect();
        Adam {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update to every trainable tensor of `params`. Frozen
    /// tensors and buffers are left untouched. A non-finite gradient aborts
    /// the step before anything is modified.
    pub fn step<P: Parameters<F>>(&mut self, params: &mut P, grads: &P) -> Result<()> {
        let grads = grads.tensors();
        for g in &grads {
            if g.kind == TensorKind::Trainable {
                if let Some(i) = g.data.iter().position(|v| !v.is_finite()) {
                    return Err(Error::Numeric(format!(
                        "non-finite gradient in tensor '{}' at index {i}: {}",
                        g.name, g.data[i]
                    )));
                }
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c = self.config;
        let (b1, b2) = (F::of(c.beta1), F::of(c.beta2));
        let bc1 = F::of(1.0 - c.beta1.powi(t));
        let bc2 = F::of(1.0 - c.beta2.powi(t));
        let (lr, eps) = (F::of(c.learning_rate), F::of(c.eps));
        for (idx, (p, g)) in params.tensors_mut().into_iter().zip(&grads).enumerate() {
            if p.kind != TensorKind::Trainable {
                continue;
            }
            let (m, v) = (&mut self.m[idx], &mut self.v[idx]);
            for (((w, &gv), mi), vi) in p.data.iter_mut().zip(g.data).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + (F::one() - b1) * gv;
                *vi = b2 * *vi + (F::one() - b2) * gv * gv;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Scales every trainable gradient so the global L2 norm is at most
/// `max_norm`. Returns the norm before scaling.
pub fn clip_grad_norm<F: Scalar, P: Parameters<F>>(grads: &mut P, max_norm: f64) -> f64 {
    let mut sq = 0.0f64;
    for t in grads.tensors() {
        if t.kind == TensorKind::Trainable {
            sq += t.data.iter().map(|v| v.as_f64().powi(2)).sum::<f64>();
        }
    }
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = F::of(max_norm / norm);
        for t in grads.tensors_mut() {
            if t.kind == TensorKind::Trainable {
                t.data.iter_mut().for_each(|v| *v *= s);
            }
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{TensorView, TensorViewMut};

    #[derive(Clone)]
    struct Pair {
        w: Vec<f64>,
        frozen: Vec<f64>,
    }

    impl Parameters<f64> for Pair {
        fn tensors(&self) -> Vec<TensorView<'_, f64>> {
            vec![
                TensorView {
                    name: "w",
                    kind: TensorKind::Trainable,
                    data: &self.w,
                },
                TensorView {
                    name: "frozen",
                    kind: TensorKind::Frozen,
                    data: &self.frozen,
                },
            ]
        }

        fn tensors_mut(&mut self) -> Vec<TensorViewMut<'_, f64>> {
            vec![
                TensorViewMut {
                    name: "w",
                    kind: TensorKind::Trainable,
                    data: &mut self.w,
                },
                TensorViewMut {
                    name: "frozen",
                    kind: TensorKind::Frozen,
                    data: &mut self.frozen,
                },
            ]
        }
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut p = Pair {
            w: vec![1.0, -2.0],
            frozen: vec![3.0],
        };
        let g = Pair {
            w: vec![0.0; 2],
            frozen: vec![0.0],
        };
        let mut opt = Adam::new(AdamConfig::default(), &p);
        opt.step(&mut p, &g).unwrap();
        assert_eq!(p.w, vec![1.0, -2.0]);
    }

    #[test]
    fn first_step_moves_by_learning_rate_against_the_gradient() {
        let mut p = Pair {
            w: vec![0.0, 0.0],
            frozen: vec![3.0],
        };
        let g = Pair {
            w: vec![0.7, -3.0],
            frozen: vec![5.0],
        };
        let mut opt = Adam::new(AdamConfig::default(), &p);
        opt.step(&mut p, &g).unwrap();
        assert!((p.w[0] + 1e-3).abs() < 1e-9);
        assert!((p.w[1] - 1e-3).abs() < 1e-9);
        assert_eq!(p.frozen, vec![3.0]);
    }

    #[test]
    fn non_finite_gradient_names_the_tensor() {
        let mut p = Pair {
            w: vec![0.0],
            frozen: vec![0.0],
        };
        let g = Pair {
            w: vec![f64::NAN],
            frozen: vec![0.0],
        };
        let mut opt = Adam::new(AdamConfig::default(), &p);
        match opt.step(&mut p, &g) {
            Err(Error::Numeric(msg)) => assert!(msg.contains("'w'")),
            other => panic!("{other:?}"),
        }
        assert_eq!(opt.steps(), 0);
    }

    #[test]
    fn clipping_bounds_the_global_norm() {
        let mut g = Pair {
            w: vec![3.0, 4.0],
            frozen: vec![100.0],
        };
        assert_eq!(clip_grad_norm(&mut g, 1.0), 5.0);
        assert!((g.w[0] - 0.6).abs() < 1e-12 && (g.w[1] - 0.8).abs() < 1e-12);
        assert_eq!(g.frozen, vec![100.0]);
    }
}
