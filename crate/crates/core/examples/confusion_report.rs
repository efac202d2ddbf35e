//! Confusion matrix, confidences and worst errors from prediction records.
//!
//! cargo run --example confusion_report

use rand::Rng;

use matforge::analysis::{confidence_stats, confusion, top_misclassifications, PredictionRecord};
use matforge::dataset::Category;
use matforge::intrinsics::InputMode;
use matforge::nn::seeded_rng;

fn main() {
    let mut rng = seeded_rng(4);
    // A classifier that is right 60% of the time and otherwise picks a neighbor.
    let records: Vec<PredictionRecord> = (0..300)
        .map(|i| {
            let t = rng.random_range(0..10);
            let p = if rng.random_bool(0.6) { t } else { (t + rng.random_range(1..3)) % 10 };
            PredictionRecord {
                sample_id: format!("img{i:03}"),
                true_category: Category::from_index(t).unwrap(),
                predicted: Category::from_index(p).unwrap(),
                confidence: rng.random_range(0.2..1.0),
                input_mode: InputMode::Rgb,
            }
        })
        .collect();
    let cm = confusion(&records);
    println!("accuracy {:.3}", cm.accuracy());
    print!("{:<8}", "");
    for c in Category::ALL {
        print!("{:>6.4}", c.as_str());
    }
    println!();
    for (c, row) in Category::ALL.iter().zip(&cm.matrix) {
        print!("{c:<8}");
        for v in row {
            print!("{v:>6.2}");
        }
        println!();
    }
    for s in confidence_stats(&records) {
        println!("{s:?}");
    }
    for r in top_misclassifications(&records, 3) {
        println!("{} {} -> {} ({:.2})", r.sample_id, r.true_category, r.predicted, r.confidence);
    }
}
