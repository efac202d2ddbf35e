//! Writes a synthetic swatch dataset that `matforge train` can read.
//!
//! cargo run --example swatch_dataset -- <out-dir> [per-class] [size] [seed]

use std::path::PathBuf;

use matforge::dataset::synth::swatch_dataset;
use matforge::dataset::Split;

fn main() -> matforge::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "swatches".into()));
    let per_class = args.next().and_then(|s| s.parse().ok()).unwrap_or(5);
    let size = args.next().and_then(|s| s.parse().ok()).unwrap_or(72);
    let seed = args.next().and_then(|s| s.parse().ok()).unwrap_or(11);
    let manifest = swatch_dataset(&out, per_class, size, seed, Split::Train)?;
    println!("wrote {} swatches of {size}px to {}", manifest.records.len(), out.display());
    Ok(())
}
