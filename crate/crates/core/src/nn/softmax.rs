use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Row-wise softmax of `(N, C)` logits, max-subtracted for stability.
pub fn softmax<T: Scalar>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, c) = logits.dims2()?;
    let mut probs = logits.clone();
    for row in probs.data_mut().chunks_mut(c) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total = total + *v;
        }
        for v in row.iter_mut() {
            *v = *v / total;
        }
    }
    Ok(probs)
}

pub struct SoftmaxLoss<T> {
    /// Mean negative log-likelihood over the batch.
    pub loss: T,
    pub probs: Tensor<T>,
    /// `(probs - onehot) / N`.
    pub grad_logits: Tensor<T>,
}

pub fn softmax_loss<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<SoftmaxLoss<T>> {
    let (n, c) = logits.dims2()?;
    if labels.len() != n {
        return Err(Error::config(format!("{} labels for a batch of {}", labels.len(), n)));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::config(format!("label {bad} outside [0, {c})")));
    }
    let probs = softmax(logits)?;
    let inv_n = T::one() / T::from_usize(n).unwrap_or_else(T::one);
    let mut loss = T::zero();
    let mut grad = probs.clone();
    for (i, &label) in labels.iter().enumerate() {
        let row = &logits.data()[i * c..(i + 1) * c];
        // log-sum-exp form keeps the loss finite when the true-class probability underflows
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
        loss = loss + (lse - row[label]);
        let g = &mut grad.data_mut()[i * c..(i + 1) * c];
        g[label] = g[label] - T::one();
        g.iter_mut().for_each(|v| *v = *v * inv_n);
    }
    Ok(SoftmaxLoss {
        loss: loss * inv_n,
        probs,
        grad_logits: grad,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::gradient_check_fn;
    use crate::nn::test_rng;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn uniform_logits() {
        let out = softmax_loss(&Tensor::<f64>::full(&[2, 10], 0.3), &[4, 7]).unwrap();
        assert!(out.probs.data().iter().all(|&p| (p - 0.1).abs() < 1e-15));
        assert!((out.loss - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn saturated_true_label() {
        let mut logits = Tensor::<f64>::zeros(&[1, 10]);
        logits.data_mut()[3] = 1000.0;
        let out = softmax_loss(&logits, &[3]).unwrap();
        assert!(out.loss.abs() < 1e-12);
        assert!((out.probs.data()[3] - 1.0).abs() < 1e-12);
        assert!(out.grad_logits.data().iter().all(|g| g.abs() < 1e-12));
    }

    #[test]
    fn bad_label_rejected() {
        assert!(softmax_loss(&Tensor::<f32>::zeros(&[1, 10]), &[10]).is_err());
    }

    #[test]
    fn finite_difference_gradients() {
        let mut rng = test_rng(21);
        let logits = Tensor::<f64>::from_fn(&[4, 10], |_| rng.random_range(-3.0..3.0));
        let labels = [1, 0, 9, 4];
        let analytic = softmax_loss(&logits, &labels).unwrap().grad_logits;
        let err = gradient_check_fn(
            |x| Ok(softmax_loss(x, &labels)?.loss),
            &logits,
            &analytic,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-5, "max relative error {err}");
    }

    proptest! {
        #[test]
        fn rows_are_distributions_and_argmax_preserved(v in prop::collection::vec(-50.0f64..50.0, 10)) {
            let logits = Tensor::from_vec(&[1, 10], v.clone()).unwrap();
            let p = softmax(&logits).unwrap();
            prop_assert!((p.sum() - 1.0).abs() < 1e-6);
            prop_assert!(p.data().iter().all(|&x| (0.0..=1.0).contains(&x)));
            let argmax = |xs: &[f64]| xs.iter().enumerate().fold(0, |b, (i, &x)| if x > xs[b] { i } else { b });
            prop_assert_eq!(argmax(&v), argmax(p.data()));
        }
    }
}
