use proptest::prelude::*;

use matforge::analysis::{confusion, PredictionRecord};
use matforge::dataset::{split, Category, DatasetManifest, SampleRecord, Split};
use matforge::intrinsics::InputMode;
use matforge::weights::{load_weights, save_weights};
use matforge::Tensor;

fn manifest(counts: &[usize]) -> DatasetManifest {
    DatasetManifest {
        records: Category::ALL
            .into_iter()
            .zip(counts)
            .flat_map(|(c, &n)| (0..n).map(move |i| (c, i)))
            .map(|(c, i)| SampleRecord {
                image_path: format!("{c}/{i}.png").into(),
                category: c,
                crop_region: None,
                split: Split::Train,
                content_hash: (c.index() * 10_000 + i) as u64,
            })
            .collect(),
        ..Default::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn split_quotas_are_exact(counts in prop::collection::vec(8usize..40, 10), val in 0usize..4, test in 0usize..4, seed: u64) {
        let m = manifest(&counts);
        let s = split(&m, seed, val, test).unwrap();
        prop_assert_eq!(s.records.len(), m.records.len());
        for (c, &n) in Category::ALL.into_iter().zip(&counts) {
            prop_assert_eq!(s.count(Split::Val, c), val);
            prop_assert_eq!(s.count(Split::Test, c), test);
            prop_assert_eq!(s.count(Split::Train, c), n - val - test);
        }
    }

    #[test]
    fn confusion_rows_are_distributions(pairs in prop::collection::vec((0usize..10, 0usize..10), 1..200)) {
        let records: Vec<PredictionRecord> = pairs
            .iter()
            .enumerate()
            .map(|(i, &(t, p))| PredictionRecord {
                sample_id: i.to_string(),
                true_category: Category::from_index(t).unwrap(),
                predicted: Category::from_index(p).unwrap(),
                confidence: 0.5,
                input_mode: InputMode::Rgb,
            })
            .collect();
        let cm = confusion(&records);
        prop_assert_eq!(cm.total(), records.len());
        for (row, &n) in cm.matrix.iter().zip(&cm.counts) {
            let sum: f64 = row.iter().sum();
            let ok = if n == 0 { sum == 0.0 } else { (sum - 1.0).abs() < 1e-9 };
            prop_assert!(ok, "row sum {} over {} records", sum, n);
        }
    }

    #[test]
    fn weights_round_trip(values in prop::collection::vec(-1e6f32..1e6, 1..64), split_at in 0usize..64) {
        let k = split_at.min(values.len());
        let a = Tensor::from_vec(&[k], values[..k].to_vec()).unwrap();
        let b = Tensor::from_vec(&[values.len() - k, 1], values[k..].to_vec()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_weights([("a", &a), ("b", &b)], dir.path()).unwrap();
        let back = load_weights(dir.path()).unwrap();
        prop_assert_eq!(back, vec![("a".to_string(), a), ("b".to_string(), b)]);
    }
}
