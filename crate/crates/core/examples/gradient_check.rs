//! Finite-difference check of every layer's backward pass.
//!
//! cargo run --example gradient_check

use rand::Rng;

use matforge::nn::conv::{Conv2d, ConvParams};
use matforge::nn::{gradient_check, gradient_check_fn, seeded_rng, softmax_loss, Linear, Lrn, LrnParams, MaxPool, Param, Relu};
use matforge::Tensor;

fn main() -> matforge::Result<()> {
    let mut rng = seeded_rng(0);
    let mut rand = |shape: &[usize]| Tensor::<f64>::from_fn(shape, |_| rng.random_range(-1.0..1.0));

    let p = ConvParams::square(4, 3, 2, 1).with_groups(2);
    let mut conv = Conv2d::new(p, Param::new("w", rand(&p.weight_shape(2))), Param::new("b", rand(&[4])));
    println!("conv     {:.2e}", gradient_check(&mut conv, &rand(&[2, 2, 7, 7]), 1e-5, 1)?);

    let mut fc = Linear::new(Param::new("w", rand(&[8, 5])), Param::new("b", rand(&[5])));
    println!("fc       {:.2e}", gradient_check(&mut fc, &rand(&[3, 8]), 1e-5, 2)?);

    println!("relu     {:.2e}", gradient_check(&mut Relu::new(), &rand(&[2, 3, 4, 4]), 1e-5, 3)?);
    println!("maxpool  {:.2e}", gradient_check(&mut MaxPool::new(3, 2), &rand(&[1, 2, 9, 9]), 1e-5, 4)?);

    let mut lrn = Lrn::new(LrnParams { alpha: 0.3, ..Default::default() });
    println!("lrn      {:.2e}", gradient_check(&mut lrn, &rand(&[1, 7, 3, 3]).map(|v| v * 3.0), 1e-5, 5)?);

    let logits = rand(&[4, 10]);
    let labels = [3, 0, 9, 5];
    let analytic = softmax_loss(&logits, &labels)?.grad_logits;
    let err = gradient_check_fn(|x| Ok(softmax_loss(x, &labels)?.loss), &logits, &analytic, 1e-5)?;
    println!("softmax  {err:.2e}");
    Ok(())
}
