use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

use super::{Layer, Mode, NnRng};

/// Inverted dropout: survivors are scaled by `1 / (1 - ratio)` at train time
/// so test mode is the identity. Returns the output and the mask used.
pub fn dropout<T: Scalar>(
    input: &Tensor<T>,
    ratio: f64,
    mode: Mode,
    rng: &mut NnRng,
) -> Result<(Tensor<T>, Option<Tensor<T>>)> {
    if !(0.0..1.0).contains(&ratio) {
        return Err(Error::config(format!("dropout ratio must be in [0, 1), got {ratio}")));
    }
    if mode == Mode::Test || ratio == 0.0 {
        return Ok((input.clone(), None));
    }
    let keep = T::from_f64_lossy(1.0 / (1.0 - ratio));
    let mask = Tensor::from_fn(input.shape(), |_| {
        if rng.random::<f64>() < ratio {
            T::zero()
        } else {
            keep
        }
    });
    let data = input
        .data()
        .iter()
        .zip(mask.data())
        .map(|(&x, &m)| x * m)
        .collect();
    Ok((Tensor::from_vec(input.shape(), data)?, Some(mask)))
}

pub struct Dropout<T> {
    pub ratio: f64,
    mask: Option<Option<Tensor<T>>>,
}

impl<T: Scalar> Dropout<T> {
    pub fn new(ratio: f64) -> Self {
        Self { ratio, mask: None }
    }
}

impl<T: Scalar> Layer<T> for Dropout<T> {
    fn forward(&mut self, input: &Tensor<T>, mode: Mode, rng: &mut NnRng) -> Result<Tensor<T>> {
        let (out, mask) = dropout(input, self.ratio, mode, rng)?;
        self.mask = Some(mask);
        Ok(out)
    }

    fn backward(&mut self, grad_out: &Tensor<T>, need_input_grad: bool) -> Result<Option<Tensor<T>>> {
        let mask = self
            .mask
            .as_ref()
            .ok_or_else(|| Error::State("dropout backward called before forward".into()))?;
        if !need_input_grad {
            return Ok(None);
        }
        match mask {
            None => Ok(Some(grad_out.clone())),
            Some(m) => {
                let data = grad_out
                    .data()
                    .iter()
                    .zip(m.data())
                    .map(|(&g, &k)| g * k)
                    .collect();
                Tensor::from_vec(grad_out.shape(), data).map(Some)
            }
        }
    }
}
