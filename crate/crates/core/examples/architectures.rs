//! Prints the layer table and inferred shapes of each network.
//!
//! cargo run --example architectures

use matforge::arch::{build_branched, build_deep, build_vanilla, Fusion, NetworkSpec};

fn show(spec: &NetworkSpec) -> matforge::Result<()> {
    println!("{} ({} tower(s), {} filter stages)", spec.name, spec.towers.len(), spec.num_stages());
    for t in spec.infer_shapes()? {
        println!("  {:<22} {:<16} {:?}", t.layer, t.kind, t.output);
    }
    Ok(())
}

fn main() -> matforge::Result<()> {
    show(&build_vanilla(227)?)?;
    show(&build_deep(3)?)?;
    show(&build_branched(Fusion::Concat)?)?;
    Ok(())
}
