//! AdaGrad on a one-dimensional quadratic under the step schedule.
//!
//! cargo run --example adagrad_schedule

use matforge::optim::{adagrad_step, lr_at, TrainingConfig};
use matforge::Tensor;

fn main() -> matforge::Result<()> {
    let cfg = TrainingConfig::default();
    for it in [0, 999, 1000, 2000, 5000] {
        println!("lr at iteration {it:>5}: {:e}", cfg.lr_at(it));
    }
    let mut p = Tensor::<f64>::zeros(&[1]);
    let mut accum = Tensor::<f64>::zeros(&[1]);
    for it in 0..12 {
        let g = Tensor::from_vec(&[1], vec![p.data()[0] - 3.0])?;
        let lr = lr_at(it, 1.0, 0.5, 4);
        adagrad_step(&mut p, &g, &mut accum, lr, 1e-8, it)?;
        println!("step {it:>2}  lr {lr:<6} p {:.6}", p.data()[0]);
    }
    Ok(())
}
