//! Prediction records, confusion matrices and confidence statistics.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::Category;
use crate::error::{Error, Result};
use crate::intrinsics::InputMode;

const K: usize = Category::ALL.len();

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub sample_id: String,
    pub true_category: Category,
    pub predicted: Category,
    /// Largest softmax probability.
    pub confidence: f64,
    pub input_mode: InputMode,
}

impl PredictionRecord {
    pub fn is_correct(&self) -> bool {
        self.true_category == self.predicted
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConfusionMatrix {
    /// Row `i` is the distribution of predictions for true category `i`.
    pub matrix: [[f64; K]; K],
    pub counts: [usize; K],
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    /// Per-category accuracy; `None` for categories without samples.
    pub fn per_category_accuracy(&self) -> [Option<f64>; K] {
        std::array::from_fn(|i| (self.counts[i] > 0).then_some(self.matrix[i][i]))
    }

    /// Count-weighted trace.
    pub fn accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        (0..K).map(|i| self.counts[i] as f64 * self.matrix[i][i]).sum::<f64>() / total as f64
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_path(path, e))?;
        let mut header = vec!["true".to_string(), "count".to_string()];
        header.extend(Category::ALL.iter().map(|c| c.to_string()));
        w.write_record(&header)?;
        for (i, row) in self.matrix.iter().enumerate() {
            let mut rec = vec![Category::ALL[i].to_string(), self.counts[i].to_string()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

fn csv_path(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Analysis(format!("{}: {other:?}", path.display())),
    }
}

pub fn confusion(records: &[PredictionRecord]) -> ConfusionMatrix {
    let mut hits = [[0usize; K]; K];
    let mut counts = [0usize; K];
    for r in records {
        hits[r.true_category.index()][r.predicted.index()] += 1;
        counts[r.true_category.index()] += 1;
    }
    let matrix = std::array::from_fn(|i| {
        std::array::from_fn(|j| {
            if counts[i] == 0 {
                0.0
            } else {
                hits[i][j] as f64 / counts[i] as f64
            }
        })
    });
    ConfusionMatrix { matrix, counts }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoryConfidence {
    pub category: Category,
    pub n_correct: usize,
    pub mean_conf_correct: Option<f64>,
    pub n_wrong: usize,
    /// Mean confidence of this category's misclassified samples.
    pub mean_conf_wrong: Option<f64>,
    pub n_wrongly_as: usize,
    /// Mean confidence of other categories' samples predicted as this one.
    pub mean_conf_when_predicted_wrongly_as: Option<f64>,
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

pub fn confidence_stats(records: &[PredictionRecord]) -> Vec<CategoryConfidence> {
    Category::ALL
        .into_iter()
        .map(|c| {
            let pick = |f: &dyn Fn(&PredictionRecord) -> bool| -> Vec<f64> {
                records.iter().filter(|r| f(r)).map(|r| r.confidence).collect()
            };
            let correct = pick(&|r| r.true_category == c && r.is_correct());
            let wrong = pick(&|r| r.true_category == c && !r.is_correct());
            let wrongly_as = pick(&|r| r.predicted == c && !r.is_correct());
            CategoryConfidence {
                category: c,
                n_correct: correct.len(),
                mean_conf_correct: mean(&correct),
                n_wrong: wrong.len(),
                mean_conf_wrong: mean(&wrong),
                n_wrongly_as: wrongly_as.len(),
                mean_conf_when_predicted_wrongly_as: mean(&wrongly_as),
            }
        })
        .collect()
}

/// The `k` most confident wrong predictions; ties keep sample-id order.
pub fn top_misclassifications(records: &[PredictionRecord], k: usize) -> Vec<PredictionRecord> {
    let mut wrong: Vec<&PredictionRecord> = records.iter().filter(|r| !r.is_correct()).collect();
    wrong.sort_by(|a, b| {
        b.confidence
            .total_cmp(&a.confidence)
            .then_with(|| a.sample_id.cmp(&b.sample_id))
    });
    wrong.into_iter().take(k).cloned().collect()
}

pub fn write_predictions(path: &Path, records: &[PredictionRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_path(path, e))?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_path(path, e))?;
    let records: Vec<PredictionRecord> = r.deserialize().collect::<std::result::Result<_, _>>()?;
    if let Some(bad) = records.iter().find(|r| !(r.confidence > 0.0 && r.confidence <= 1.0)) {
        return Err(Error::Analysis(format!(
            "sample {} has confidence {} outside (0, 1]",
            bad.sample_id, bad.confidence
        )));
    }
    Ok(records)
}

pub fn write_confidence(path: &Path, stats: &[CategoryConfidence]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_path(path, e))?;
    for s in stats {
        w.serialize(s)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::seeded_rng;
    use rand::Rng;

    fn rec(id: &str, t: Category, p: Category, conf: f64) -> PredictionRecord {
        PredictionRecord {
            sample_id: id.into(),
            true_category: t,
            predicted: p,
            confidence: conf,
            input_mode: InputMode::Rgb,
        }
    }

    #[test]
    fn perfect_predictions_give_identity() {
        let records: Vec<_> = Category::ALL.iter().map(|&c| rec(c.as_str(), c, c, 0.9)).collect();
        let cm = confusion(&records);
        for i in 0..K {
            for j in 0..K {
                assert_eq!(cm.matrix[i][j], if i == j { 1.0 } else { 0.0 });
            }
        }
        assert_eq!(cm.accuracy(), 1.0);
    }

    #[test]
    fn uniform_predictions_approach_tenth() {
        let mut rng = seeded_rng(5);
        let records: Vec<_> = (0..10_000)
            .map(|i| {
                let t = Category::ALL[i % K];
                let p = Category::ALL[rng.random_range(0..K)];
                rec(&i.to_string(), t, p, 0.5)
            })
            .collect();
        let cm = confusion(&records);
        for row in &cm.matrix {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(row.iter().all(|v| (v - 0.1).abs() < 0.03));
        }
    }

    #[test]
    fn always_class_zero_is_chance() {
        let records: Vec<_> = (0..100)
            .map(|i| rec(&i.to_string(), Category::ALL[i % K], Category::Fabric, 0.7))
            .collect();
        let cm = confusion(&records);
        assert!((cm.accuracy() - 0.1).abs() < 1e-12);
        assert_eq!(cm.per_category_accuracy()[0], Some(1.0));
        assert_eq!(cm.per_category_accuracy()[1], Some(0.0));
    }

    #[test]
    fn confidence_groups() {
        let one = confidence_stats(&[rec("a", Category::Wood, Category::Wood, 0.8)]);
        let wood = &one[Category::Wood.index()];
        assert_eq!(wood.mean_conf_correct, Some(0.8));
        assert_eq!(wood.mean_conf_wrong, None);
        assert_eq!(wood.mean_conf_when_predicted_wrongly_as, None);

        let records = [
            rec("a", Category::Wood, Category::Wood, 0.9),
            rec("b", Category::Wood, Category::Stone, 0.5),
            rec("c", Category::Glass, Category::Wood, 0.6),
        ];
        let stats = confidence_stats(&records);
        let wood = &stats[Category::Wood.index()];
        assert_eq!((wood.mean_conf_correct, wood.mean_conf_wrong), (Some(0.9), Some(0.5)));
        assert_eq!(wood.mean_conf_when_predicted_wrongly_as, Some(0.6));
        let total: usize = stats.iter().map(|s| s.n_correct + s.n_wrong).sum();
        assert_eq!(total, records.len());
    }

    #[test]
    fn top_errors() {
        let correct = [rec("a", Category::Wood, Category::Wood, 0.99)];
        assert!(top_misclassifications(&correct, 3).is_empty());
        let records = [
            rec("x", Category::Wood, Category::Stone, 0.9),
            rec("y", Category::Wood, Category::Stone, 0.7),
            rec("z", Category::Wood, Category::Stone, 0.8),
            rec("w", Category::Wood, Category::Stone, 0.8),
        ];
        let top = top_misclassifications(&records, 3);
        let ids: Vec<&str> = top.iter().map(|r| r.sample_id.as_str()).collect();
        assert_eq!(ids, ["x", "w", "z"]);
        assert_eq!(top_misclassifications(&records, 10).len(), 4);
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        let records = vec![
            rec("img,1", Category::Glass, Category::Water, 0.25),
            rec("img2", Category::Paper, Category::Paper, 1.0),
        ];
        write_predictions(&path, &records).unwrap();
        assert_eq!(read_predictions(&path).unwrap(), records);
        let cm_path = dir.path().join("c.csv");
        confusion(&records).write_csv(&cm_path).unwrap();
        let text = std::fs::read_to_string(cm_path).unwrap();
        assert!(text.starts_with("true,count,fabric"));
        assert_eq!(text.lines().count(), 11);
    }
}
