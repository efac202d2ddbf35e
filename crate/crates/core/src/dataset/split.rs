use rand::seq::SliceRandom;

use super::{Category, DatasetManifest, Split};
use crate::error::{Error, Result};
use crate::nn::seeded_rng;

fn indices_by_category(m: &DatasetManifest) -> Vec<(Category, Vec<usize>)> {
    Category::ALL
        .into_iter()
        .map(|c| {
            let idx = m
                .records
                .iter()
                .enumerate()
                .filter(|(_, r)| r.category == c)
                .map(|(i, _)| i)
                .collect();
            (c, idx)
        })
        .collect()
}

/// Seeded per-category assignment: `val_per_cat` to val, `test_per_cat` to
/// test, the remainder to train.
pub fn split(manifest: &DatasetManifest, seed: u64, val_per_cat: usize, test_per_cat: usize) -> Result<DatasetManifest> {
    let held_out = val_per_cat + test_per_cat;
    let groups = indices_by_category(manifest);
    if held_out > 0 {
        if let Some((c, idx)) = groups.iter().find(|(_, idx)| idx.len() <= held_out) {
            return Err(Error::Dataset(format!(
                "category {c} has {} images, needs at least {}",
                idx.len(),
                held_out + 1
            )));
        }
    }
    let mut out = manifest.clone();
    let mut rng = seeded_rng(seed);
    for (_, mut idx) in groups {
        idx.shuffle(&mut rng);
        for (k, i) in idx.into_iter().enumerate() {
            out.records[i].split = if k < val_per_cat {
                Split::Val
            } else if k < held_out {
                Split::Test
            } else {
                Split::Train
            };
        }
    }
    out.split_seed = Some(seed);
    out.quotas = Some((val_per_cat, test_per_cat));
    Ok(out)
}

/// Twenty test images per hundred-image category, the rest for training.
///
/// Categories of other sizes get a proportional 20% test share.
pub fn fmd_split(manifest: &DatasetManifest, seed: u64) -> Result<DatasetManifest> {
    let mut out = manifest.clone();
    let mut rng = seeded_rng(seed);
    for (c, mut idx) in indices_by_category(manifest) {
        if idx.len() != 100 {
            log::warn!("category {c} has {} images instead of 100; using a 20% test share", idx.len());
        }
        let n_test = (idx.len() as f64 * 0.2).round() as usize;
        idx.shuffle(&mut rng);
        for (k, i) in idx.into_iter().enumerate() {
            out.records[i].split = if k < n_test { Split::Test } else { Split::Train };
        }
    }
    out.split_seed = Some(seed);
    out.quotas = None;
    Ok(out)
}
