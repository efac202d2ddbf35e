//! Leung-Malik texture responses of swatch patches in two principal components.
//!
//! cargo run --example lm_pca

use matforge::analysis::{lm_bank, patch_features, pca_fit, pca_project, random_gray_patches, Aggregation, PATCH_SIZE};
use matforge::dataset::synth::swatch_set;
use matforge::nn::seeded_rng;

fn main() -> matforge::Result<()> {
    let bank = lm_bank();
    println!("{} filters of {}x{}", bank.filters.len(), bank.support, bank.support);
    let mut rng = seeded_rng(2);
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (category, img) in swatch_set(3, 96, 96, 5) {
        for patch in random_gray_patches(&img, 2, PATCH_SIZE, &mut rng)? {
            features.push(patch_features(&patch, &bank, Aggregation::MeanAbs)?);
            labels.push(category);
        }
    }
    let model = pca_fit(&features)?;
    println!("explained variance {:.3e} {:.3e}", model.explained_variance[0], model.explained_variance[1]);
    for (f, c) in features.iter().zip(&labels).step_by(6) {
        let [x, y] = pca_project(&model, f)?;
        println!("  {c:<8} {x:>9.4} {y:>9.4}");
    }
    Ok(())
}
