//! Layer kernels with explicit forward/backward passes.
//!
//! Every layer caches what its backward pass needs during `forward`; calling
//! `backward` first is a [`crate::Error::State`]. Parameter gradients are
//! overwritten (not accumulated) by each backward call, and skipped entirely
//! for layers marked non-trainable.

pub mod conv;
pub mod dropout;
pub mod gradcheck;
pub mod linear;
pub mod lrn;
pub mod pool;
pub mod relu;
pub mod softmax;

pub use conv::{conv2d_backward, conv2d_forward, Conv2d, ConvParams};
pub use dropout::{dropout, Dropout};
pub use gradcheck::{gradient_check, gradient_check_fn};
pub use linear::Linear;
pub use lrn::{Lrn, LrnParams};
pub use pool::MaxPool;
pub use relu::Relu;
pub use softmax::{softmax, softmax_loss, SoftmaxLoss};

use rand::SeedableRng;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// RNG used for every stochastic layer and sampler in the crate.
pub type NnRng = rand_chacha::ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> NnRng {
    NnRng::seed_from_u64(seed)
}

#[cfg(test)]
pub(crate) fn test_rng(seed: u64) -> NnRng {
    seeded_rng(seed)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Test,
}

/// A named trainable tensor with its most recent gradient.
#[derive(Clone, Debug)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

impl<T: Scalar> Param<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self {
            name: name.into(),
            value,
            grad,
        }
    }
}

pub trait Layer<T: Scalar>: Send {
    fn forward(&mut self, input: &Tensor<T>, mode: Mode, rng: &mut NnRng) -> Result<Tensor<T>>;

    /// Returns the input gradient when `need_input_grad` is set.
    fn backward(&mut self, grad_out: &Tensor<T>, need_input_grad: bool) -> Result<Option<Tensor<T>>>;

    fn params(&self) -> Vec<&Param<T>> {
        Vec::new()
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        Vec::new()
    }

    fn set_trainable(&mut self, _trainable: bool) {}
}

/// Collapses every axis after the first.
#[derive(Default)]
pub struct Flatten {
    input_shape: Option<Vec<usize>>,
}

impl<T: Scalar> Layer<T> for Flatten {
    fn forward(&mut self, input: &Tensor<T>, _mode: Mode, _rng: &mut NnRng) -> Result<Tensor<T>> {
        let n = *input
            .shape()
            .first()
            .ok_or_else(|| Error::config("cannot flatten a scalar"))?;
        let d = input.len() / n.max(1);
        self.input_shape = Some(input.shape().to_vec());
        input.clone().reshape(&[n, d])
    }

    fn backward(&mut self, grad_out: &Tensor<T>, need_input_grad: bool) -> Result<Option<Tensor<T>>> {
        let shape = self
            .input_shape
            .as_ref()
            .ok_or_else(|| Error::State("flatten backward called before forward".into()))?;
        if !need_input_grad {
            return Ok(None);
        }
        grad_out.clone().reshape(shape).map(Some)
    }
}
