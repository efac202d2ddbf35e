//! Saves a network, reloads it, and transfers its filter stages into a
//! branched network with a fresh classifier.
//!
//! cargo run --example pretrained_weights

use matforge::arch::{build_branched_with, build_deep_with, DeepConfig, Fusion, Network};
use matforge::weights::{load_network, load_pretrained, save_network, NameMap};

fn main() -> matforge::Result<()> {
    let dir = std::env::temp_dir().join("matforge_pretrained_example");
    let cfg = DeepConfig {
        input_size: 67,
        filters: [8, 8, 8, 8, 8],
        mlp_width: 16,
        ..Default::default()
    };
    let source = Network::<f32>::new(build_deep_with(&cfg)?, 1)?;
    let manifest = save_network(&source, &dir)?;
    println!("saved {} tensors to {}", manifest.entries.len(), dir.display());
    let reloaded = load_network(&dir)?;
    println!("reload identical: {}", reloaded.param("conv1.weight").unwrap().value == source.param("conv1.weight").unwrap().value);

    let mut branched = Network::<f32>::new(build_branched_with(&cfg, Fusion::Concat)?, 2)?;
    let map = NameMap::standard(&branched);
    let report = load_pretrained(&dir, &map, &mut branched, true)?;
    println!("loaded {} tensors, kept fresh: {:?}", report.loaded.len(), report.reinitialized);
    Ok(())
}
