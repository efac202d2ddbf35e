use crate::error::{Error, Result};
use crate::tensor::{matmul, MatRef, Scalar, Tensor};

use super::{Layer, Mode, NnRng, Param};

/// `output = input * W + b` with `W` stored as `(in, out)`.
pub struct Linear<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    trainable: bool,
    cached_input: Option<Tensor<T>>,
}

impl<T: Scalar> Linear<T> {
    pub fn new(weight: Param<T>, bias: Param<T>) -> Self {
        Self {
            weight,
            bias,
            trainable: true,
            cached_input: None,
        }
    }

    pub fn apply(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let (n, d) = input.dims2()?;
        let (din, m) = self.weight.value.dims2()?;
        if d != din || self.bias.value.len() != m {
            return Err(Error::config(format!(
                "fully connected layer expects {} inputs and {} biases, got input {:?} and bias {:?}",
                din,
                m,
                input.shape(),
                self.bias.value.shape()
            )));
        }
        let mut out = Tensor::zeros(&[n, m]);
        matmul(
            MatRef::new(input.data(), n, d),
            MatRef::new(self.weight.value.data(), d, m),
            out.data_mut(),
            false,
        );
        for row in out.data_mut().chunks_mut(m) {
            for (v, &b) in row.iter_mut().zip(self.bias.value.data()) {
                *v = *v + b;
            }
        }
        Ok(out)
    }
}

impl<T: Scalar> Layer<T> for Linear<T> {
    fn forward(&mut self, input: &Tensor<T>, _mode: Mode, _rng: &mut NnRng) -> Result<Tensor<T>> {
        let out = self.apply(input)?;
        self.cached_input = Some(input.clone());
        Ok(out)
    }

    fn backward(&mut self, grad_out: &Tensor<T>, need_input_grad: bool) -> Result<Option<Tensor<T>>> {
        let input = self
            .cached_input
            .as_ref()
            .ok_or_else(|| Error::State("fully connected backward called before forward".into()))?;
        let (n, d) = input.dims2()?;
        let m = self.bias.value.len();
        if grad_out.shape() != [n, m] {
            return Err(Error::config(format!(
                "grad_out {:?} does not match output [{n}, {m}]",
                grad_out.shape()
            )));
        }
        if self.trainable {
            let mut gw = Tensor::zeros(&[d, m]);
            matmul(
                MatRef::new(input.data(), n, d).t(),
                MatRef::new(grad_out.data(), n, m),
                gw.data_mut(),
                false,
            );
            let mut gb = Tensor::zeros(&[m]);
            for row in grad_out.data().chunks(m) {
                for (acc, &g) in gb.data_mut().iter_mut().zip(row) {
                    *acc = *acc + g;
                }
            }
            self.weight.grad = gw;
            self.bias.grad = gb;
        }
        if !need_input_grad {
            return Ok(None);
        }
        let mut gi = Tensor::zeros(&[n, d]);
        matmul(
            MatRef::new(grad_out.data(), n, m),
            MatRef::new(self.weight.value.data(), d, m).t(),
            gi.data_mut(),
            false,
        );
        Ok(Some(gi))
    }

    fn params(&self) -> Vec<&Param<T>> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.weight, &mut self.bias]
    }

    fn set_trainable(&mut self, trainable: bool) {
        self.trainable = trainable;
    }
}
