use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::adagrad::{lr_at, AdaGradState};
use super::eval::evaluate;
use crate::arch::{FreezeMask, Network};
use crate::dataset::{center_crop, crop, subtract_mean, Category, SampleSource};
use crate::error::{Error, Result};
use crate::image_io::chw;
use crate::intrinsics::InputMode;
use crate::nn::{seeded_rng, softmax_loss, Mode, NnRng};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub base_lr: f64,
    pub lr_decay_factor: f64,
    /// Iterations between learning-rate decays.
    pub lr_step: usize,
    pub max_iterations: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Validation interval in iterations; 0 disables validation.
    pub eval_every: usize,
    /// Checkpoint interval in iterations; 0 keeps only the final state.
    pub checkpoint_every: usize,
    pub freeze_k: usize,
    pub input_mode: InputMode,
    pub normalize_mean: bool,
    /// Side of the square training crop; must equal the network input size.
    pub crop_size: usize,
    pub epsilon: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            base_lr: 1e-4,
            lr_decay_factor: 0.1,
            lr_step: 1000,
            max_iterations: 450_000,
            batch_size: 1,
            seed: 0,
            eval_every: 0,
            checkpoint_every: 0,
            freeze_k: 0,
            input_mode: InputMode::Rgb,
            normalize_mean: false,
            crop_size: 227,
            epsilon: 1e-8,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0) {
            return Err(Error::config("base_lr must be positive"));
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor <= 1.0) {
            return Err(Error::config("lr_decay_factor must lie in (0, 1]"));
        }
        if self.batch_size == 0 || self.lr_step == 0 || self.crop_size == 0 {
            return Err(Error::config("batch_size, lr_step and crop_size must be at least 1"));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::config("epsilon must be positive"));
        }
        Ok(())
    }

    pub fn lr_at(&self, iter: usize) -> f64 {
        lr_at(iter, self.base_lr, self.lr_decay_factor, self.lr_step)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub iteration: usize,
    pub lr: f64,
    pub loss: f64,
    pub val_accuracy: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
}

impl TrainLog {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))?;
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Mean loss over consecutive windows of `size` iterations.
    pub fn window_means(&self, size: usize) -> Vec<f64> {
        self.rows
            .chunks(size.max(1))
            .map(|c| c.iter().map(|r| r.loss).sum::<f64>() / c.len() as f64)
            .collect()
    }
}

/// Everything the loop reads besides the network.
pub struct TrainData<'a> {
    pub train: &'a dyn SampleSource,
    pub val: Option<&'a dyn SampleSource>,
    /// Per-tower mean images subtracted from every crop.
    pub mean: Option<&'a [Tensor<f32>]>,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub state: AdaGradState,
    pub log: TrainLog,
}

/// Crops every tower input at the same place, subtracts the mean and adds a
/// batch axis.
pub(crate) fn prepare(inputs: Vec<Tensor<f32>>, size: usize, corner: Option<(usize, usize)>, mean: Option<&[Tensor<f32>]>) -> Result<Vec<Tensor<f32>>> {
    inputs
        .into_iter()
        .enumerate()
        .map(|(t, x)| {
            let c = match corner {
                Some((y, xx)) => crop(&x, y, xx, size, size)?,
                None => center_crop(&x, size, size)?,
            };
            let c = match mean {
                Some(m) => subtract_mean(&c, &m[t])?,
                None => c,
            };
            let shape = c.shape().to_vec();
            c.reshape(&[1, shape[0], shape[1], shape[2]])
        })
        .collect()
}

fn random_corner(first: &Tensor<f32>, size: usize, rng: &mut NnRng) -> Result<(usize, usize)> {
    let (_, h, w) = chw(first)?;
    if h < size || w < size {
        return Err(Error::Input(format!("{h}x{w} image is smaller than a {size}px crop")));
    }
    Ok((rng.random_range(0..=h - size), rng.random_range(0..=w - size)))
}

fn concat_batch(per_sample: Vec<Vec<Tensor<f32>>>) -> Result<Vec<Tensor<f32>>> {
    let towers = per_sample[0].len();
    (0..towers)
        .map(|t| {
            let items: Vec<Tensor<f32>> = per_sample
                .iter()
                .map(|s| {
                    let shape = s[t].shape()[1..].to_vec();
                    s[t].clone().reshape(&shape)
                })
                .collect::<Result<_>>()?;
            Tensor::stack(&items)
        })
        .collect()
}

/// Trains `net` in place with AdaGrad on uniformly sampled random crops.
///
/// Sampling, cropping and dropout draw from streams seeded by `cfg.seed`, so
/// equal inputs give bit-identical weights. `on_checkpoint` runs every
/// `checkpoint_every` iterations and once at the end.
pub fn train(
    net: &mut Network<f32>,
    mask: &FreezeMask,
    data: &TrainData<'_>,
    cfg: &TrainingConfig,
    on_checkpoint: &mut dyn FnMut(usize, &Network<f32>, &TrainLog) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let n = data.train.len();
    if n == 0 {
        return Err(Error::config("training split is empty"));
    }
    let mut present = [false; Category::ALL.len()];
    for i in 0..n {
        present[data.train.label(i).index()] = true;
    }
    if let Some(missing) = Category::ALL.into_iter().find(|c| !present[c.index()]) {
        return Err(Error::config(format!("category {missing} has no training samples")));
    }
    if net.spec().input_size != cfg.crop_size {
        return Err(Error::config(format!(
            "crop size {} differs from network input {}",
            cfg.crop_size,
            net.spec().input_size
        )));
    }
    if net.spec().towers.len() != cfg.input_mode.num_towers() {
        return Err(Error::config(format!(
            "input mode {} needs {} towers, network has {}",
            cfg.input_mode,
            cfg.input_mode.num_towers(),
            net.spec().towers.len()
        )));
    }

    net.set_freeze(mask);
    let mut sample_rng = seeded_rng(cfg.seed);
    let mut dropout_rng = seeded_rng(cfg.seed.wrapping_add(0x9e37_79b9));
    let mut state = AdaGradState::new(cfg.epsilon);
    let mut log = TrainLog::default();

    for it in 0..cfg.max_iterations {
        let mut batch = Vec::with_capacity(cfg.batch_size);
        let mut labels = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
            let i = sample_rng.random_range(0..n);
            let inputs = data.train.load(i)?;
            let corner = random_corner(&inputs[0], cfg.crop_size, &mut sample_rng)?;
            batch.push(prepare(inputs, cfg.crop_size, Some(corner), data.mean)?);
            labels.push(data.train.label(i).index());
        }
        let inputs = concat_batch(batch)?;
        let logits = net.forward(&inputs, Mode::Train, &mut dropout_rng).map_err(|e| Error::Training {
            iteration: it,
            reason: e.to_string(),
        })?;
        let loss = softmax_loss(&logits, &labels)?;
        if !loss.loss.is_finite() {
            return Err(Error::Training {
                iteration: it,
                reason: format!("loss became {}", loss.loss),
            });
        }
        net.backward(&loss.grad_logits)?;
        let lr = cfg.lr_at(it);
        state.step(net, mask, lr, it)?;

        let done = it + 1;
        let val_accuracy = match data.val {
            Some(val) if cfg.eval_every > 0 && done % cfg.eval_every == 0 => {
                let acc = evaluate(net, val, cfg.crop_size, data.mean, cfg.input_mode)?.accuracy();
                log::info!("iteration {done}: validation accuracy {acc:.4}");
                Some(acc)
            }
            _ => None,
        };
        log.rows.push(LogRow {
            iteration: it,
            lr,
            loss: loss.loss as f64,
            val_accuracy,
        });
        if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 && done != cfg.max_iterations {
            on_checkpoint(done, net, &log)?;
        }
    }
    on_checkpoint(cfg.max_iterations, net, &log)?;
    Ok(TrainOutcome { state, log })
}
