//! Trains the shallow net on synthetic swatches until it memorizes them.
//!
//! cargo run --release --example overfit_swatches -- [iterations]

use std::time::Instant;

use matforge::arch::{build_vanilla_with, FreezeMask, Network, VanillaConfig};
use matforge::dataset::synth::swatch_set;
use matforge::dataset::InMemorySamples;
use matforge::intrinsics::InputMode;
use matforge::optim::{evaluate, train, TrainData, TrainingConfig};

fn main() -> matforge::Result<()> {
    let iterations = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(5000);
    let input = 59;
    let net_cfg = VanillaConfig {
        input_size: input,
        ..Default::default()
    };
    let mut net = Network::<f32>::new(build_vanilla_with(&net_cfg)?, 7)?;
    let data = InMemorySamples::from_images(swatch_set(5, 72, 72, 11));
    let cfg = TrainingConfig {
        base_lr: std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(1e-2),
        lr_step: std::env::args().nth(3).and_then(|s| s.parse().ok()).unwrap_or(100_000),
        max_iterations: iterations,
        crop_size: input,
        seed: 7,
        ..Default::default()
    };
    let start = Instant::now();
    let td = TrainData {
        train: &data,
        val: None,
        mean: None,
    };
    let out = train(&mut net, &FreezeMask::none(), &td, &cfg, &mut |_, _, _| Ok(()))?;
    let windows = out.log.window_means(100);
    for (i, w) in windows.iter().enumerate().step_by((windows.len() / 10).max(1)) {
        println!("iterations {:>5}..: mean loss {w:.4}", i * 100);
    }
    let eval = evaluate(&mut net, &data, input, None, InputMode::Rgb)?;
    println!(
        "training accuracy {:.3} after {iterations} iterations in {:.1}s",
        eval.accuracy(),
        start.elapsed().as_secs_f64()
    );
    for r in eval.records.iter().filter(|r| !r.is_correct()) {
        println!("  sample {}: {} predicted as {} ({:.2})", r.sample_id, r.true_category, r.predicted, r.confidence);
    }
    Ok(())
}
