//! Layers of the temporal classifier plus the tensor registry shared by
//! every parameterised component.

mod attention;
mod batchnorm;
mod conv;
mod gru;
mod mlp;

pub use attention::{AdditiveAttention, AttentionCache};
pub use batchnorm::{BatchNorm, BatchNormCache, BatchStats, Mode};
pub use conv::{Conv1d, ConvCache};
pub use gru::{BiGru, GruCache, GruDirection};
pub use mlp::{Mlp, MlpCache};

use rand::Rng;

use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TensorKind {
    /// Updated by the optimiser and counted in the parameter budget.
    Trainable,
    /// Stored in checkpoints but never updated or counted.
    Frozen,
    /// Running statistics; stored, not counted, updated outside the optimiser.
    Buffer,
}

#[derive(Debug)]
pub struct TensorView<'a, F> {
    pub name: &'static str,
    pub kind: TensorKind,
    pub data: &'a [F],
}

#[derive(Debug)]
pub struct TensorViewMut<'a, F> {
    pub name: &'static str,
    pub kind: TensorKind,
    pub data: &'a mut [F],
}

/// Ordered view over the tensors of a component. The order is part of the
/// checkpoint format.
pub trait Parameters<F> {
    fn tensors(&self) -> Vec<TensorView<'_, F>>;
    fn tensors_mut(&mut self) -> Vec<TensorViewMut<'_, F>>;
}

pub(crate) fn view<'a, F>(name: &'static str, kind: TensorKind, data: &'a [F]) -> TensorView<'a, F> {
    TensorView { name, kind, data }
}

pub(crate) fn view_mut<'a, F>(name: &'static str, kind: TensorKind, data: &'a mut [F]) -> TensorViewMut<'a, F> {
    TensorViewMut { name, kind, data }
}

/// Uniform fill in `[-bound, bound]`.
pub(crate) fn uniform<F: Scalar, R: Rng + ?Sized>(len: usize, bound: f64, rng: &mut R) -> Vec<F> {
    (0..len).map(|_| F::of(rng.random_range(-bound..=bound))).collect()
}

#[inline]
pub(crate) fn sigmoid<F: Scalar>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

/// Hyperbolic tangent through a single `exp_m1`, which is several times
/// cheaper than the libm routine and keeps full relative accuracy near zero.
#[inline]
pub(crate) fn tanh<F: Scalar>(x: F) -> F {
    let two = F::one() + F::one();
    let e = (-two * x.abs()).exp_m1();
    (-e / (two + e)).copysign(x)
}
