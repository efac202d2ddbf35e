//! Central finite-difference gradient checks in double precision.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::{seeded_rng, Layer, Mode};

const FLOOR: f64 = 1e-12;

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

/// Compares a layer's backward pass with central differences of
/// `L = sum(out * R)` for a fixed random projection `R`.
///
/// Covers the input and every parameter. Returns the maximum of
/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-12)`.
pub fn gradient_check(
    layer: &mut dyn Layer<f64>,
    input: &Tensor<f64>,
    eps: f64,
    seed: u64,
) -> Result<f64> {
    // Stochastic layers see the same rng stream on every evaluation.
    let run = |layer: &mut dyn Layer<f64>, x: &Tensor<f64>| {
        layer.forward(x, Mode::Train, &mut seeded_rng(seed))
    };

    let out = run(layer, input)?;
    out.ensure_finite("gradient check forward")?;
    let mut proj_rng = seeded_rng(seed ^ 0x9e37_79b9_7f4a_7c15);
    let projection = Tensor::from_fn(out.shape(), |_| proj_rng.random_range(-1.0..1.0));

    layer.set_trainable(true);
    let grad_in = layer
        .backward(&projection, true)?
        .ok_or_else(|| Error::State("layer returned no input gradient".into()))?;
    let param_grads: Vec<Tensor<f64>> = layer.params().iter().map(|p| p.grad.clone()).collect();

    // Differences are formed elementwise before projecting to limit cancellation.
    let directional = |plus: &Tensor<f64>, minus: &Tensor<f64>| -> Result<f64> {
        plus.ensure_finite("gradient check perturbed forward")?;
        minus.ensure_finite("gradient check perturbed forward")?;
        Ok(plus
            .data()
            .iter()
            .zip(minus.data())
            .zip(projection.data())
            .map(|((&p, &m), &r)| (p - m) * r)
            .sum::<f64>()
            / (2.0 * eps))
    };

    let mut worst = 0.0f64;
    let mut x = input.clone();
    for i in 0..x.len() {
        let orig = x.data()[i];
        x.data_mut()[i] = orig + eps;
        let plus = run(layer, &x)?;
        x.data_mut()[i] = orig - eps;
        let minus = run(layer, &x)?;
        x.data_mut()[i] = orig;
        let numeric = directional(&plus, &minus)?;
        worst = worst.max(relative_error(grad_in.data()[i], numeric));
    }

    for (p, analytic) in param_grads.iter().enumerate() {
        for i in 0..analytic.len() {
            let orig = layer.params()[p].value.data()[i];
            layer.params_mut()[p].value.data_mut()[i] = orig + eps;
            let plus = run(layer, input)?;
            layer.params_mut()[p].value.data_mut()[i] = orig - eps;
            let minus = run(layer, input)?;
            layer.params_mut()[p].value.data_mut()[i] = orig;
            let numeric = directional(&plus, &minus)?;
            worst = worst.max(relative_error(analytic.data()[i], numeric));
        }
    }
    if !worst.is_finite() {
        return Err(Error::NonFinite {
            context: "gradient check error".into(),
        });
    }
    Ok(worst)
}

/// Checks an analytic gradient of a scalar function against central differences.
pub fn gradient_check_fn(
    mut f: impl FnMut(&Tensor<f64>) -> Result<f64>,
    x: &Tensor<f64>,
    analytic: &Tensor<f64>,
    eps: f64,
) -> Result<f64> {
    if analytic.shape() != x.shape() {
        return Err(Error::config("analytic gradient shape differs from input"));
    }
    let mut probe = x.clone();
    let mut worst = 0.0f64;
    for i in 0..probe.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let plus = f(&probe)?;
        probe.data_mut()[i] = orig - eps;
        let minus = f(&probe)?;
        probe.data_mut()[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite {
                context: "gradient check function value".into(),
            });
        }
        worst = worst.max(relative_error(analytic.data()[i], (plus - minus) / (2.0 * eps)));
    }
    Ok(worst)
}
