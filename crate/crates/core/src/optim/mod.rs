//! AdaGrad, the step learning-rate schedule, and the train/evaluate loops.

mod adagrad;
mod eval;
mod train;

pub use adagrad::{adagrad_step, lr_at, AdaGradState};
pub use eval::{evaluate, Evaluation};
pub use train::{train, LogRow, TrainData, TrainLog, TrainOutcome, TrainingConfig};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{build_vanilla_with, freeze_stages, FreezeMask, Network, VanillaConfig};
    use crate::dataset::synth::swatch_set;
    use crate::dataset::{Category, InMemorySamples, SampleSource};
    use crate::error::{Error, Result};
    use crate::intrinsics::InputMode;
    use crate::tensor::Tensor;

    fn small_vanilla() -> Network<f32> {
        let cfg = VanillaConfig {
            input_size: 27,
            filters: 8,
            hidden: 16,
            pool_size: 2,
            pool_stride: 2,
            ..Default::default()
        };
        Network::new(build_vanilla_with(&cfg).unwrap(), 1).unwrap()
    }

    fn config(iters: usize) -> TrainingConfig {
        TrainingConfig {
            max_iterations: iters,
            crop_size: 27,
            base_lr: 1e-3,
            lr_step: 100_000,
            ..Default::default()
        }
    }

    fn data() -> InMemorySamples {
        InMemorySamples::from_images(swatch_set(2, 32, 32, 0))
    }

    fn run(net: &mut Network<f32>, mask: &FreezeMask, cfg: &TrainingConfig) -> Result<TrainOutcome> {
        let d = data();
        let td = TrainData {
            train: &d,
            val: Some(&d),
            mean: None,
        };
        train(net, mask, &td, cfg, &mut |_, _, _| Ok(()))
    }

    #[test]
    fn everything_frozen_keeps_weights() {
        let mut net = small_vanilla();
        let before: Vec<Tensor<f32>> = net.params().iter().map(|(_, p)| p.value.clone()).collect();
        let mask = FreezeMask::everything(net.spec());
        run(&mut net, &mask, &config(15)).unwrap();
        for ((_, p), b) in net.params().iter().zip(&before) {
            assert_eq!(&p.value, b);
        }
    }

    #[test]
    fn frozen_stage_only() {
        let mut net = small_vanilla();
        let conv = net.param("conv1.weight").unwrap().value.clone();
        let fc = net.param("fc2.weight").unwrap().value.clone();
        let mask = freeze_stages(net.spec(), 1).unwrap();
        run(&mut net, &mask, &config(10)).unwrap();
        assert_eq!(net.param("conv1.weight").unwrap().value, conv);
        assert_ne!(net.param("fc2.weight").unwrap().value, fc);
    }

    #[test]
    fn deterministic() {
        let (mut a, mut b) = (small_vanilla(), small_vanilla());
        let la = run(&mut a, &FreezeMask::none(), &config(20)).unwrap().log;
        let lb = run(&mut b, &FreezeMask::none(), &config(20)).unwrap().log;
        assert_eq!(la, lb);
        for ((_, p), (_, q)) in a.params().iter().zip(b.params().iter()) {
            assert_eq!(p.value, q.value);
        }
        assert_eq!(la.rows.len(), 20);
        assert!(la.rows.windows(2).all(|w| w[0].iteration < w[1].iteration));
    }

    #[test]
    fn validation_and_checkpoints() {
        let mut net = small_vanilla();
        let cfg = TrainingConfig {
            eval_every: 5,
            checkpoint_every: 4,
            ..config(10)
        };
        let d = data();
        let td = TrainData {
            train: &d,
            val: Some(&d),
            mean: None,
        };
        let mut seen = Vec::new();
        let out = train(&mut net, &FreezeMask::none(), &td, &cfg, &mut |it, _, _| {
            seen.push(it);
            Ok(())
        })
        .unwrap();
        assert_eq!(seen, [4, 8, 10]);
        let vals: Vec<usize> = out.log.rows.iter().filter(|r| r.val_accuracy.is_some()).map(|r| r.iteration).collect();
        assert_eq!(vals, [4, 9]);
    }

    #[test]
    fn bad_configurations() {
        let mut net = small_vanilla();
        let mut d = data();
        d.items.retain(|(_, c, _)| *c != Category::Water);
        let td = TrainData {
            train: &d,
            val: None,
            mean: None,
        };
        let err = train(&mut net, &FreezeMask::none(), &td, &config(1), &mut |_, _, _| Ok(())).unwrap_err();
        assert!(matches!(err, Error::Config(ref m) if m.contains("water")));
        let cfg = TrainingConfig {
            crop_size: 31,
            ..config(1)
        };
        assert!(run(&mut net, &FreezeMask::none(), &cfg).is_err());
        let cfg = TrainingConfig {
            lr_decay_factor: 0.0,
            ..config(1)
        };
        assert!(run(&mut net, &FreezeMask::none(), &cfg).is_err());
    }

    #[test]
    fn evaluation_is_deterministic_and_row_stochastic() {
        let mut net = small_vanilla();
        let d = data();
        let a = evaluate(&mut net, &d, 27, None, InputMode::Rgb).unwrap();
        let b = evaluate(&mut net, &d, 27, None, InputMode::Rgb).unwrap();
        assert_eq!(a.records, b.records);
        assert_eq!(a.records.len(), d.len());
        for (row, &n) in a.confusion.matrix.iter().zip(&a.confusion.counts) {
            if n > 0 {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
        assert!(a.records.iter().all(|r| r.confidence > 0.0 && r.confidence <= 1.0));
    }
}
