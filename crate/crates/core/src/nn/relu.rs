use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

use super::{Layer, Mode, NnRng};

pub fn relu<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| if v > T::zero() { v } else { T::zero() })
}

#[derive(Default)]
pub struct Relu<T> {
    cached_input: Option<Tensor<T>>,
}

impl<T: Scalar> Relu<T> {
    pub fn new() -> Self {
        Self { cached_input: None }
    }
}

impl<T: Scalar> Layer<T> for Relu<T> {
    fn forward(&mut self, input: &Tensor<T>, _mode: Mode, _rng: &mut NnRng) -> Result<Tensor<T>> {
        self.cached_input = Some(input.clone());
        Ok(relu(input))
    }

    fn backward(&mut self, grad_out: &Tensor<T>, need_input_grad: bool) -> Result<Option<Tensor<T>>> {
        let input = self
            .cached_input
            .as_ref()
            .ok_or_else(|| Error::State("relu backward called before forward".into()))?;
        if !need_input_grad {
            return Ok(None);
        }
        let data = input
            .data()
            .iter()
            .zip(grad_out.data())
            .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
            .collect();
        Tensor::from_vec(input.shape(), data).map(Some)
    }
}
