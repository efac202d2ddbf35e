use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

use super::{Layer, Mode, NnRng};

/// Max pooling without padding; output size uses floor division.
///
/// Ties resolve to the first element of the window in row-major scan order,
/// so the backward routing is deterministic.
pub struct MaxPool {
    pub size: usize,
    pub stride: usize,
    cache: Option<(Vec<usize>, Vec<usize>)>,
}

impl MaxPool {
    pub fn new(size: usize, stride: usize) -> Self {
        Self {
            size,
            stride,
            cache: None,
        }
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        if self.size == 0 || self.stride == 0 {
            return Err(Error::config("pool size and stride must be >= 1"));
        }
        if h < self.size || w < self.size {
            return Err(Error::config(format!(
                "{0}x{0} pooling window does not fit {1}x{2} input",
                self.size, h, w
            )));
        }
        Ok(((h - self.size) / self.stride + 1, (w - self.size) / self.stride + 1))
    }

    /// Returns the pooled tensor and the flat argmax index of every output.
    pub fn pool<T: Scalar>(&self, input: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
        let (n, c, h, w) = input.dims4()?;
        let (oh, ow) = self.output_hw(h, w)?;
        let mut out = Tensor::zeros(&[n, c, oh, ow]);
        let mut argmax = vec![0usize; out.len()];
        let src = input.data();
        let mut o = 0;
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let (y0, x0) = (oy * self.stride, ox * self.stride);
                    let mut best = base + y0 * w + x0;
                    for y in y0..y0 + self.size {
                        for x in x0..x0 + self.size {
                            let idx = base + y * w + x;
                            if src[idx] > src[best] {
                                best = idx;
                            }
                        }
                    }
                    out.data_mut()[o] = src[best];
                    argmax[o] = best;
                    o += 1;
                }
            }
        }
        Ok((out, argmax))
    }
}

impl<T: Scalar> Layer<T> for MaxPool {
    fn forward(&mut self, input: &Tensor<T>, _mode: Mode, _rng: &mut NnRng) -> Result<Tensor<T>> {
        let (out, argmax) = self.pool(input)?;
        self.cache = Some((input.shape().to_vec(), argmax));
        Ok(out)
    }

    fn backward(&mut self, grad_out: &Tensor<T>, need_input_grad: bool) -> Result<Option<Tensor<T>>> {
        let (shape, argmax) = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::State("maxpool backward called before forward".into()))?;
        if !need_input_grad {
            return Ok(None);
        }
        if grad_out.len() != argmax.len() {
            return Err(Error::config("maxpool grad_out does not match forward output"));
        }
        let mut grad_in = Tensor::zeros(shape);
        let gi = grad_in.data_mut();
        for (&idx, &g) in argmax.iter().zip(grad_out.data()) {
            gi[idx] = gi[idx] + g;
        }
        Ok(Some(grad_in))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::gradient_check;
    use crate::nn::{seeded_rng, test_rng};
    use rand::Rng;

    #[test]
    fn ramp_windows() {
        let input = Tensor::<f64>::from_fn(&[1, 1, 4, 4], |i| i as f64);
        let (out, _) = MaxPool::new(2, 2).pool(&input).unwrap();
        assert_eq!(out.data(), &[5.0, 7.0, 13.0, 15.0]);
    }

    #[test]
    fn constant_input_routes_to_first_element() {
        let input = Tensor::<f64>::full(&[1, 1, 4, 4], 3.0);
        let mut pool = MaxPool::new(2, 2);
        let out = pool.forward(&input, Mode::Test, &mut seeded_rng(0)).unwrap();
        assert!(out.data().iter().all(|&v| v == 3.0));
        let g = pool
            .backward(&Tensor::from_vec(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap(), true)
            .unwrap()
            .unwrap();
        #[rustfmt::skip]
        let expected = [
            1.0, 0.0, 2.0, 0.0,
            0.0, 0.0, 0.0, 0.0,
            3.0, 0.0, 4.0, 0.0,
            0.0, 0.0, 0.0, 0.0,
        ];
        assert_eq!(g.data(), &expected);
    }

    #[test]
    fn alexnet_pool_shape() {
        let pool = MaxPool::new(3, 2);
        assert_eq!(pool.output_hw(55, 55).unwrap(), (27, 27));
        assert_eq!(MaxPool::new(6, 6).output_hw(55, 55).unwrap(), (9, 9));
    }

    #[test]
    fn gradient_mass_preserved_without_overlap() {
        let mut rng = test_rng(2);
        let input = Tensor::<f64>::from_fn(&[2, 3, 6, 6], |_| rng.random());
        let mut pool = MaxPool::new(2, 3);
        let out = pool.forward(&input, Mode::Train, &mut seeded_rng(0)).unwrap();
        let go = Tensor::from_fn(out.shape(), |_| rng.random_range(-1.0..1.0));
        let gi: Tensor<f64> = pool.backward(&go, true).unwrap().unwrap();
        assert!((gi.sum() - go.sum()).abs() < 1e-12);
    }

    #[test]
    fn finite_difference_gradients() {
        let mut rng = test_rng(4);
        let input = Tensor::<f64>::from_fn(&[1, 2, 7, 7], |_| rng.random_range(-1.0..1.0));
        let err = gradient_check(&mut MaxPool::new(3, 2), &input, 1e-5, 1).unwrap();
        assert!(err < 1e-7, "max relative error {err}");
    }
}
