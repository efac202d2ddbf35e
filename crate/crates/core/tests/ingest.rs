use std::fs;

use matforge::dataset::synth::toy_corpus;
use matforge::dataset::{ingest, DatasetManifest, IngestParams, RejectRule, REJECTED_FILE};

fn outcome_by_file(out: &matforge::dataset::IngestOutcome) -> Vec<(String, Option<RejectRule>)> {
    let mut got: Vec<(String, Option<RejectRule>)> = out
        .manifest
        .records
        .iter()
        .map(|r| {
            let stored = r.image_path.file_stem().unwrap().to_string_lossy().replace("__", "/");
            (format!("{stored}.png"), None)
        })
        .chain(out.rejected.iter().map(|r| (r.file.clone(), Some(r.rule))))
        .collect();
    got.sort();
    got
}

#[test]
fn toy_corpus_accept_reject_set() {
    let corpus = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    let (annotations, expected) = toy_corpus(corpus.path()).unwrap();
    let outcome = ingest(corpus.path(), &annotations, out.path(), &IngestParams::default()).unwrap();
    assert_eq!(outcome_by_file(&outcome), expected);
    assert!(out.path().join(REJECTED_FILE).is_file());
    for r in &outcome.manifest.records {
        let img = image::open(out.path().join(&r.image_path)).unwrap();
        assert!(img.width().min(img.height()) <= 384, "{}", r.image_path.display());
    }
}

#[test]
fn ingest_is_idempotent() {
    let corpus = tempfile::tempdir().unwrap();
    let (annotations, _) = toy_corpus(corpus.path()).unwrap();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = ingest(corpus.path(), &annotations, a.path(), &IngestParams::default()).unwrap();
    let second = ingest(corpus.path(), &annotations, b.path(), &IngestParams::default()).unwrap();
    assert_eq!(first.manifest, second.manifest);
    assert_eq!(first.rejected, second.rejected);
    for r in &first.manifest.records {
        assert_eq!(fs::read(a.path().join(&r.image_path)).unwrap(), fs::read(b.path().join(&r.image_path)).unwrap());
    }
    first.manifest.save(a.path()).unwrap();
    assert_eq!(DatasetManifest::load(a.path()).unwrap(), first.manifest);
}
