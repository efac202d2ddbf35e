use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::arch::{FreezeMask, Network};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// `base_lr * factor^floor(iter / step)`.
pub fn lr_at(iter: usize, base_lr: f64, factor: f64, step: usize) -> f64 {
    let k = iter / step.max(1);
    base_lr * factor.powi(k.min(i32::MAX as usize) as i32)
}

/// One elementwise AdaGrad update:
/// `accum += g^2; param -= lr * g / (sqrt(accum) + eps)`.
pub fn adagrad_step<T: Scalar>(
    param: &mut Tensor<T>,
    grad: &Tensor<T>,
    accum: &mut Tensor<T>,
    lr: f64,
    epsilon: f64,
    iteration: usize,
) -> Result<()> {
    if param.shape() != grad.shape() || param.shape() != accum.shape() {
        return Err(Error::config(format!(
            "adagrad shapes differ: param {:?}, grad {:?}, accum {:?}",
            param.shape(),
            grad.shape(),
            accum.shape()
        )));
    }
    if !grad.is_finite() {
        return Err(Error::Training {
            iteration,
            reason: "non-finite gradient".into(),
        });
    }
    let lr = T::from_f64_lossy(lr);
    let eps = T::from_f64_lossy(epsilon);
    for ((p, &g), a) in param.data_mut().iter_mut().zip(grad.data()).zip(accum.data_mut()) {
        *a = *a + g * g;
        *p = *p - lr * g / (a.sqrt() + eps);
    }
    Ok(())
}

/// Accumulated squared gradients, keyed by parameter name.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AdaGradState {
    pub epsilon: f64,
    #[serde(skip)]
    pub accum: BTreeMap<String, Tensor<f32>>,
}

impl AdaGradState {
    pub fn new(epsilon: f64) -> Self {
        Self {
            epsilon,
            accum: BTreeMap::new(),
        }
    }

    /// Updates every parameter outside the frozen stages.
    pub fn step(&mut self, net: &mut Network<f32>, mask: &FreezeMask, lr: f64, iteration: usize) -> Result<()> {
        for (stage, p) in net.params_mut() {
            if mask.is_frozen(stage) {
                continue;
            }
            let accum = self
                .accum
                .entry(p.name.clone())
                .or_insert_with(|| Tensor::zeros(p.value.shape()));
            adagrad_step(&mut p.value, &p.grad, accum, lr, self.epsilon, iteration)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule() {
        assert_eq!(lr_at(0, 1e-4, 0.1, 1000), 1e-4);
        assert_eq!(lr_at(999, 1e-4, 0.1, 1000), 1e-4);
        assert!((lr_at(1000, 1e-4, 0.1, 1000) - 1e-5).abs() < 1e-20);
        assert!((lr_at(2500, 1e-4, 0.1, 1000) - 1e-6).abs() < 1e-21);
        assert_eq!(lr_at(123_456, 0.3, 1.0, 10), 0.3);
        // far past underflow the rate is exactly zero, not NaN
        assert_eq!(lr_at(450_000, 1e-4, 0.1, 1000), 0.0);
    }

    #[test]
    fn hand_computed_step() {
        let mut p = Tensor::<f64>::full(&[1], 1.0);
        let mut a = Tensor::<f64>::zeros(&[1]);
        adagrad_step(&mut p, &Tensor::full(&[1], 0.5), &mut a, 0.1, 1e-8, 0).unwrap();
        assert_eq!(a.data()[0], 0.25);
        assert!((p.data()[0] - (1.0 - 0.1 * 0.5 / (0.5 + 1e-8))).abs() < 1e-15);
        assert!((p.data()[0] - 0.9).abs() < 1e-7);
    }

    #[test]
    fn zero_gradient_is_noop() {
        let mut p = Tensor::<f32>::full(&[3], 0.7);
        let mut a = Tensor::<f32>::full(&[3], 0.2);
        adagrad_step(&mut p, &Tensor::zeros(&[3]), &mut a, 0.5, 1e-8, 0).unwrap();
        assert!(p.data().iter().all(|&v| v == 0.7));
        assert!(a.data().iter().all(|&v| v == 0.2));
    }

    #[test]
    fn non_finite_gradient_reports_iteration() {
        let mut p = Tensor::<f32>::zeros(&[2]);
        let mut a = Tensor::<f32>::zeros(&[2]);
        let g = Tensor::from_vec(&[2], vec![1.0, f32::INFINITY]).unwrap();
        match adagrad_step(&mut p, &g, &mut a, 0.1, 1e-8, 17) {
            Err(Error::Training { iteration, .. }) => assert_eq!(iteration, 17),
            other => panic!("expected training error, got {other:?}"),
        }
    }

    #[test]
    fn accumulator_nondecreasing_and_steps_shrink() {
        let mut p = Tensor::<f64>::zeros(&[1]);
        let mut a = Tensor::<f64>::zeros(&[1]);
        let mut last_acc = 0.0;
        let mut last_step = f64::INFINITY;
        for _ in 0..20 {
            let before = p.data()[0];
            adagrad_step(&mut p, &Tensor::full(&[1], -0.3), &mut a, 0.01, 1e-8, 0).unwrap();
            let step = (p.data()[0] - before).abs();
            assert!(a.data()[0] >= last_acc);
            assert!(step <= last_step);
            last_acc = a.data()[0];
            last_step = step;
        }
    }
}
