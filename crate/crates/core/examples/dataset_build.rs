//! Curates the toy corpus and assigns FMD-style splits.
//!
//! cargo run --example dataset_build -- [work-dir]

use std::path::PathBuf;

use matforge::dataset::synth::toy_corpus;
use matforge::dataset::{fmd_split, ingest, IngestParams, Split};

fn main() -> matforge::Result<()> {
    let work = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "toy".into()));
    let corpus = work.join("corpus");
    let (annotations, _) = toy_corpus(&corpus)?;
    let outcome = ingest(&corpus, &annotations, &work.join("dataset"), &IngestParams::default())?;
    for r in &outcome.manifest.records {
        println!("accepted {:<32} {}", r.image_path.display(), r.category);
    }
    for r in &outcome.rejected {
        println!("rejected {:<32} {:?}: {}", r.file, r.rule, r.detail);
    }
    let split = fmd_split(&outcome.manifest, 0)?;
    for s in Split::ALL {
        println!("{}: {}", s.as_str(), split.records_in(s).len());
    }
    Ok(())
}
