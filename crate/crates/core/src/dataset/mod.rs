//! Material corpus records, curation, splitting and augmentation.

mod augment;
mod ingest;
mod source;
mod split;
pub mod synth;

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use augment::{center_crop, crop, mask_fill, mean_image, random_crop, source_mean, subtract_mean, MaskFill};
pub use ingest::{ingest, load_annotations, Annotation, IngestOutcome, IngestParams, Rejection, RejectRule, IMAGES_DIR, REJECTED_FILE};
pub use source::{DiskSamples, InMemorySamples, SampleSource};
pub use split::{fmd_split, split};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Fabric,
    Foliage,
    Glass,
    Leather,
    Metal,
    Paper,
    Plastic,
    Stone,
    Water,
    Wood,
}

impl Category {
    pub const ALL: [Category; 10] = [
        Category::Fabric,
        Category::Foliage,
        Category::Glass,
        Category::Leather,
        Category::Metal,
        Category::Paper,
        Category::Plastic,
        Category::Stone,
        Category::Water,
        Category::Wood,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Fabric => "fabric",
            Category::Foliage => "foliage",
            Category::Glass => "glass",
            Category::Leather => "leather",
            Category::Metal => "metal",
            Category::Paper => "paper",
            Category::Plastic => "plastic",
            Category::Stone => "stone",
            Category::Water => "water",
            Category::Wood => "wood",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

impl FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::Dataset(format!("unknown category `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    #[default]
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::config(format!("unknown split `{s}`")))
    }
}

/// Axis-aligned rectangle in source pixels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl Rect {
    pub fn fits_within(&self, width: u32, height: u32) -> bool {
        self.w > 0
            && self.h > 0
            && self.x.checked_add(self.w).is_some_and(|r| r <= width)
            && self.y.checked_add(self.h).is_some_and(|b| b <= height)
    }
}

mod hex_u64 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &u64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format!("{v:016x}"))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
        let text = String::deserialize(d)?;
        u64::from_str_radix(&text, 16).map_err(serde::de::Error::custom)
    }
}

/// 64-bit FNV-1a of a byte string.
pub fn content_hash(bytes: &[u8]) -> u64 {
    use std::hash::Hasher;
    let mut h = fnv::FnvHasher::default();
    h.write(bytes);
    h.finish()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    /// Relative to the manifest directory.
    pub image_path: PathBuf,
    pub category: Category,
    /// Region of the original source file the stored image was cut from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crop_region: Option<Rect>,
    #[serde(default)]
    pub split: Split,
    #[serde(with = "hex_u64")]
    pub content_hash: u64,
}

pub type CategoryCounts = BTreeMap<Category, usize>;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub format_version: u32,
    pub split_seed: Option<u64>,
    /// `(val_per_category, test_per_category)` of the last split.
    pub quotas: Option<(usize, usize)>,
    pub counts: BTreeMap<Split, CategoryCounts>,
    /// Directory (weights format) holding the training mean image, if computed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_image: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DatasetManifest {
    pub records: Vec<SampleRecord>,
    pub split_seed: Option<u64>,
    pub quotas: Option<(usize, usize)>,
    pub mean_image: Option<PathBuf>,
}

pub const HEADER_FILE: &str = "manifest.json";
pub const RECORDS_FILE: &str = "records.jsonl";

impl DatasetManifest {
    pub fn counts(&self) -> BTreeMap<Split, CategoryCounts> {
        let mut out: BTreeMap<Split, CategoryCounts> = BTreeMap::new();
        for r in &self.records {
            *out.entry(r.split).or_default().entry(r.category).or_default() += 1;
        }
        out
    }

    pub fn count(&self, split: Split, category: Category) -> usize {
        self.records
            .iter()
            .filter(|r| r.split == split && r.category == category)
            .count()
    }

    pub fn records_in(&self, split: Split) -> Vec<SampleRecord> {
        self.records.iter().filter(|r| r.split == split).cloned().collect()
    }

    pub fn header(&self) -> ManifestHeader {
        ManifestHeader {
            format_version: 1,
            split_seed: self.split_seed,
            quotas: self.quotas,
            counts: self.counts(),
            mean_image: self.mean_image.clone(),
        }
    }

    /// Writes `manifest.json` and `records.jsonl` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let header_path = dir.join(HEADER_FILE);
        fs::write(&header_path, serde_json::to_string_pretty(&self.header())?)
            .map_err(|e| Error::io(&header_path, e))?;
        let path = dir.join(RECORDS_FILE);
        let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = BufWriter::new(file);
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n").map_err(|e| Error::io(&path, e))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let header_path = dir.join(HEADER_FILE);
        let text = fs::read_to_string(&header_path).map_err(|e| Error::io(&header_path, e))?;
        let header: ManifestHeader = serde_json::from_str(&text)?;
        let path = dir.join(RECORDS_FILE);
        let file = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
        let mut records = Vec::new();
        for line in BufReader::new(file).lines() {
            let line = line.map_err(|e| Error::io(&path, e))?;
            if !line.trim().is_empty() {
                records.push(serde_json::from_str(&line)?);
            }
        }
        let manifest = Self {
            records,
            split_seed: header.split_seed,
            quotas: header.quotas,
            mean_image: header.mean_image,
        };
        if manifest.counts() != header.counts {
            return Err(Error::Dataset(format!(
                "{} counts disagree with {}",
                header_path.display(),
                path.display()
            )));
        }
        Ok(manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(i: u64, category: Category, split: Split) -> SampleRecord {
        SampleRecord {
            image_path: format!("images/{i}.png").into(),
            category,
            crop_region: (i % 2 == 0).then_some(Rect { x: 1, y: 2, w: 3, h: 4 }),
            split,
            content_hash: i.wrapping_mul(0x1234_5678_9abc),
        }
    }

    #[test]
    fn category_order_and_parsing() {
        assert_eq!(Category::ALL.len(), 10);
        assert_eq!(Category::Fabric.index(), 0);
        assert_eq!(Category::Wood.index(), 9);
        for c in Category::ALL {
            assert_eq!(c.as_str().parse::<Category>().unwrap(), c);
            assert_eq!(Category::from_index(c.index()), Some(c));
        }
        assert!("brick".parse::<Category>().is_err());
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = DatasetManifest {
            records: vec![
                record(1, Category::Glass, Split::Val),
                record(2, Category::Wood, Split::Train),
                record(u64::MAX / 7, Category::Wood, Split::Test),
            ],
            split_seed: Some(9),
            quotas: Some((1, 1)),
            mean_image: None,
        };
        m.save(dir.path()).unwrap();
        assert_eq!(DatasetManifest::load(dir.path()).unwrap(), m);
        assert_eq!(m.count(Split::Train, Category::Wood), 1);
        let text = fs::read_to_string(dir.path().join(RECORDS_FILE)).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.contains("\"split\":\"val\""));
    }

    #[test]
    fn tampered_records_detected() {
        let dir = tempfile::tempdir().unwrap();
        let m = DatasetManifest {
            records: vec![record(1, Category::Glass, Split::Val)],
            ..Default::default()
        };
        m.save(dir.path()).unwrap();
        fs::write(dir.path().join(RECORDS_FILE), "").unwrap();
        assert!(matches!(DatasetManifest::load(dir.path()), Err(Error::Dataset(_))));
    }

    #[test]
    fn rect_bounds() {
        let r = Rect { x: 10, y: 0, w: 90, h: 50 };
        assert!(r.fits_within(100, 50));
        assert!(!r.fits_within(99, 50));
        assert!(!Rect { x: 0, y: 0, w: 0, h: 1 }.fits_within(5, 5));
    }
}
