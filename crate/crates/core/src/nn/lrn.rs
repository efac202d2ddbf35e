//! Cross-channel local response normalization.
//!
//! `b_c = a_c / (k + alpha/n * sum_{j in window(c)} a_j^2)^beta`, where the
//! window spans `n` channels centered on `c` and is clipped at the channel
//! bounds.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

use super::{Layer, Mode, NnRng};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrnParams {
    pub size: usize,
    pub alpha: f64,
    pub beta: f64,
    pub k: f64,
}

impl Default for LrnParams {
    fn default() -> Self {
        Self {
            size: 5,
            alpha: 1e-4,
            beta: 0.75,
            k: 1.0,
        }
    }
}

impl LrnParams {
    pub fn validate(&self) -> Result<()> {
        if self.size % 2 == 0 {
            return Err(Error::config(format!("LRN window must be odd, got {}", self.size)));
        }
        Ok(())
    }
}

pub struct Lrn<T> {
    pub params: LrnParams,
    cache: Option<(Tensor<T>, Tensor<T>)>,
}

impl<T: Scalar> Lrn<T> {
    pub fn new(params: LrnParams) -> Self {
        Self { params, cache: None }
    }

    /// Per-element `k + alpha/n * windowed sum of squares`.
    fn scales(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        self.params.validate()?;
        let (n, c, h, w) = input.dims4()?;
        let half = self.params.size / 2;
        let coeff = T::from_f64_lossy(self.params.alpha / self.params.size as f64);
        let k = T::from_f64_lossy(self.params.k);
        let plane = h * w;
        let mut scale = Tensor::full(input.shape(), k);
        for img in 0..n {
            let src = input.outer(img);
            let dst = scale.outer_mut(img);
            for ch in 0..c {
                let lo = ch.saturating_sub(half);
                let hi = (ch + half).min(c - 1);
                let out = &mut dst[ch * plane..(ch + 1) * plane];
                for j in lo..=hi {
                    let a = &src[j * plane..(j + 1) * plane];
                    for (s, &v) in out.iter_mut().zip(a) {
                        *s = *s + coeff * v * v;
                    }
                }
            }
        }
        Ok(scale)
    }

    pub fn normalize(&self, input: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let scale = self.scales(input)?;
        let beta = T::from_f64_lossy(self.params.beta);
        let data = input
            .data()
            .iter()
            .zip(scale.data())
            .map(|(&a, &s)| a * s.powf(-beta))
            .collect();
        Ok((Tensor::from_vec(input.shape(), data)?, scale))
    }
}

impl<T: Scalar> Layer<T> for Lrn<T> {
    fn forward(&mut self, input: &Tensor<T>, _mode: Mode, _rng: &mut NnRng) -> Result<Tensor<T>> {
        let (out, scale) = self.normalize(input)?;
        self.cache = Some((input.clone(), scale));
        Ok(out)
    }

    fn backward(&mut self, grad_out: &Tensor<T>, need_input_grad: bool) -> Result<Option<Tensor<T>>> {
        let (input, scale) = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::State("LRN backward called before forward".into()))?;
        if !need_input_grad {
            return Ok(None);
        }
        let (n, c, h, w) = input.dims4()?;
        let plane = h * w;
        let half = self.params.size / 2;
        let beta = T::from_f64_lossy(self.params.beta);
        let cross = T::from_f64_lossy(2.0 * self.params.alpha * self.params.beta / self.params.size as f64);

        // ratio_j = g_j * a_j * s_j^(-beta-1), the shared term of the cross-channel derivative
        let ratio: Vec<T> = grad_out
            .data()
            .iter()
            .zip(input.data())
            .zip(scale.data())
            .map(|((&g, &a), &s)| g * a * s.powf(-beta - T::one()))
            .collect();

        let mut grad_in = Tensor::zeros(input.shape());
        for img in 0..n {
            let off = img * c * plane;
            let gi = grad_in.outer_mut(img);
            for ch in 0..c {
                let lo = ch.saturating_sub(half);
                let hi = (ch + half).min(c - 1);
                for p in 0..plane {
                    let idx = ch * plane + p;
                    let mut acc = T::zero();
                    for j in lo..=hi {
                        acc = acc + ratio[off + j * plane + p];
                    }
                    let a = input.data()[off + idx];
                    let s = scale.data()[off + idx];
                    let g = grad_out.data()[off + idx];
                    gi[idx] = g * s.powf(-beta) - cross * a * acc;
                }
            }
        }
        Ok(Some(grad_in))
    }
}
