use super::train::prepare;
use crate::analysis::{confusion, ConfusionMatrix, PredictionRecord};
use crate::arch::Network;
use crate::dataset::{Category, SampleSource};
use crate::error::{Error, Result};
use crate::intrinsics::InputMode;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct Evaluation {
    pub records: Vec<PredictionRecord>,
    pub confusion: ConfusionMatrix,
    /// Ids of samples that could not be loaded.
    pub skipped: Vec<String>,
}

impl Evaluation {
    pub fn accuracy(&self) -> f64 {
        self.confusion.accuracy()
    }

    pub fn per_category_accuracy(&self) -> [Option<f64>; Category::ALL.len()] {
        self.confusion.per_category_accuracy()
    }
}

/// One center-crop test-mode forward pass per sample.
pub fn evaluate(
    net: &mut Network<f32>,
    source: &dyn SampleSource,
    crop: usize,
    mean: Option<&[Tensor<f32>]>,
    mode: InputMode,
) -> Result<Evaluation> {
    if source.is_empty() {
        return Err(Error::config("evaluation split is empty"));
    }
    let mut records = Vec::with_capacity(source.len());
    let mut skipped = Vec::new();
    for i in 0..source.len() {
        let inputs = match source.load(i) {
            Ok(x) => x,
            Err(e) => {
                log::warn!("skipping {}: {e}", source.id(i));
                skipped.push(source.id(i));
                continue;
            }
        };
        let probs = net.predict(&prepare(inputs, crop, None, mean)?)?;
        let (best, conf) = probs
            .data()
            .iter()
            .enumerate()
            .fold((0, f32::NEG_INFINITY), |b, (k, &p)| if p > b.1 { (k, p) } else { b });
        records.push(PredictionRecord {
            sample_id: source.id(i),
            true_category: source.label(i),
            predicted: Category::from_index(best)
                .ok_or_else(|| Error::config(format!("network predicts class {best} beyond the 10 categories")))?,
            confidence: conf as f64,
            input_mode: mode,
        });
    }
    if !skipped.is_empty() {
        log::warn!("{} of {} samples skipped", skipped.len(), source.len());
    }
    Ok(Evaluation {
        confusion: confusion(&records),
        records,
        skipped,
    })
}
