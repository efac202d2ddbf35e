//! Corpus curation: decode, deduplicate, screen, trim, gate, crop, resize.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use image::imageops::{self, FilterType};
use image::RgbImage;
use serde::{Deserialize, Serialize};

use super::{content_hash, Category, DatasetManifest, Rect, SampleRecord, Split};
use crate::error::{Error, Result};
use crate::image_io::decode;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    /// Path relative to the corpus directory, `/`-separated.
    pub file: String,
    pub category: Category,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region: Option<Rect>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

pub fn load_annotations(path: &Path) -> Result<Vec<Annotation>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| {
            Error::Dataset(format!("{}:{}: {e}", path.display(), i + 1))
        })?);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IngestParams {
    pub min_long: u32,
    pub min_short: u32,
    /// Shortest side after resizing; images are never upscaled.
    pub target_short: u32,
    pub blank_std: f64,
    pub color_spread: f64,
    pub border_tolerance: f64,
    pub border_fraction: f64,
    /// Smallest accepted side after region cropping; training crops need this much.
    pub min_region: u32,
    /// Annotation flags that mark manual rejections (clip art, compositions).
    pub reject_flags: Vec<String>,
}

impl Default for IngestParams {
    fn default() -> Self {
        Self {
            min_long: 400,
            min_short: 300,
            target_short: 384,
            blank_std: 1e-3,
            color_spread: 0.02,
            border_tolerance: 0.02,
            border_fraction: 0.99,
            min_region: 227,
            reject_flags: ["clipart", "composition", "multi_material", "reject"]
                .map(String::from)
                .to_vec(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectRule {
    MissingAnnotation,
    Undecodable,
    Duplicate,
    Blank,
    Grayscale,
    ManualFlag,
    TooSmall,
    InvalidRegion,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub file: String,
    pub rule: RejectRule,
    pub detail: String,
}

#[derive(Clone, Debug)]
pub struct IngestOutcome {
    pub manifest: DatasetManifest,
    pub rejected: Vec<Rejection>,
}

pub const IMAGES_DIR: &str = "images";
pub const REJECTED_FILE: &str = "rejected.json";

fn list_files(root: &Path) -> Result<Vec<String>> {
    let mut out = Vec::new();
    let mut stack = vec![PathBuf::new()];
    while let Some(rel) = stack.pop() {
        let dir = root.join(&rel);
        for entry in fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
            let entry = entry.map_err(|e| Error::io(&dir, e))?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if name.starts_with('.') {
                continue;
            }
            let child = rel.join(&name);
            let ty = entry.file_type().map_err(|e| Error::io(entry.path(), e))?;
            if ty.is_dir() {
                stack.push(child);
            } else if ty.is_file() {
                out.push(child.to_string_lossy().replace('\\', "/"));
            }
        }
    }
    out.sort();
    Ok(out)
}

fn pixel(img: &RgbImage, x: u32, y: u32) -> [f64; 3] {
    img.get_pixel(x, y).0.map(|v| v as f64 / 255.0)
}

fn is_blank(img: &RgbImage, threshold: f64) -> bool {
    let raw = img.as_raw();
    let n = raw.len() as f64;
    let mean = raw.iter().map(|&v| v as f64 / 255.0).sum::<f64>() / n;
    let var = raw.iter().map(|&v| (v as f64 / 255.0 - mean).powi(2)).sum::<f64>() / n;
    var.sqrt() < threshold
}

/// Largest per-pixel spread between the RGB channels.
fn color_spread(img: &RgbImage) -> f64 {
    img.pixels()
        .map(|p| {
            let max = p.0.iter().max().copied().unwrap_or(0);
            let min = p.0.iter().min().copied().unwrap_or(0);
            (max - min) as f64 / 255.0
        })
        .fold(0.0, f64::max)
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    values[values.len() / 2]
}

fn line_is_stride(pixels: &[[f64; 3]], tol: f64, fraction: f64) -> bool {
    if pixels.is_empty() {
        return false;
    }
    let med: Vec<f64> = (0..3)
        .map(|c| median(&mut pixels.iter().map(|p| p[c]).collect::<Vec<_>>()))
        .collect();
    let close = pixels
        .iter()
        .filter(|p| (0..3).all(|c| (p[c] - med[c]).abs() <= tol + 1e-12))
        .count();
    close as f64 >= fraction * pixels.len() as f64
}

/// Peels near-uniform rows and columns off every side until none qualifies.
///
/// Returns the surviving rectangle, possibly empty.
fn trim_borders(img: &RgbImage, tol: f64, fraction: f64) -> Rect {
    let (mut x0, mut y0, mut x1, mut y1) = (0u32, 0u32, img.width(), img.height());
    let row = |y: u32, x0: u32, x1: u32| (x0..x1).map(|x| pixel(img, x, y)).collect::<Vec<_>>();
    let col = |x: u32, y0: u32, y1: u32| (y0..y1).map(|y| pixel(img, x, y)).collect::<Vec<_>>();
    loop {
        let mut changed = false;
        while y0 < y1 && line_is_stride(&row(y0, x0, x1), tol, fraction) {
            y0 += 1;
            changed = true;
        }
        while y1 > y0 && line_is_stride(&row(y1 - 1, x0, x1), tol, fraction) {
            y1 -= 1;
            changed = true;
        }
        while x0 < x1 && line_is_stride(&col(x0, y0, y1), tol, fraction) {
            x0 += 1;
            changed = true;
        }
        while x1 > x0 && line_is_stride(&col(x1 - 1, y0, y1), tol, fraction) {
            x1 -= 1;
            changed = true;
        }
        if !changed || x0 >= x1 || y0 >= y1 {
            break;
        }
    }
    Rect {
        x: x0,
        y: y0,
        w: x1.saturating_sub(x0),
        h: y1.saturating_sub(y0),
    }
}

fn intersect(a: Rect, b: Rect) -> Option<Rect> {
    let x0 = a.x.max(b.x);
    let y0 = a.y.max(b.y);
    let x1 = (a.x + a.w).min(b.x + b.w);
    let y1 = (a.y + a.h).min(b.y + b.h);
    (x1 > x0 && y1 > y0).then_some(Rect {
        x: x0,
        y: y0,
        w: x1 - x0,
        h: y1 - y0,
    })
}

fn shrink_to_short_side(img: RgbImage, target: u32) -> RgbImage {
    let (w, h) = img.dimensions();
    let short = w.min(h);
    if short <= target {
        return img;
    }
    let scale = target as f64 / short as f64;
    let (nw, nh) = if w <= h {
        (target, ((h as f64 * scale).round() as u32).max(target))
    } else {
        (((w as f64 * scale).round() as u32).max(target), target)
    };
    imageops::resize(&img, nw, nh, FilterType::Triangle)
}

fn stored_name(file: &str) -> String {
    let stem = file.rsplit_once('.').map_or(file, |(s, _)| s);
    format!("{}.png", stem.replace('/', "__"))
}

enum Verdict {
    Accept(RgbImage, Option<Rect>),
    Reject(RejectRule, String),
}

fn screen(img: RgbImage, ann: &Annotation, p: &IngestParams) -> Verdict {
    use Verdict::Reject;
    if is_blank(&img, p.blank_std) {
        return Reject(RejectRule::Blank, "pixel standard deviation below threshold".into());
    }
    let spread = color_spread(&img);
    if spread < p.color_spread {
        return Reject(RejectRule::Grayscale, format!("max channel spread {spread:.4}"));
    }
    if let Some(flag) = ann.flags.iter().find(|f| p.reject_flags.contains(f)) {
        return Reject(RejectRule::ManualFlag, flag.clone());
    }
    let kept = trim_borders(&img, p.border_tolerance, p.border_fraction);
    let (long, short) = (kept.w.max(kept.h), kept.w.min(kept.h));
    if long < p.min_long || short < p.min_short {
        return Reject(
            RejectRule::TooSmall,
            format!("{}x{} after border trim", kept.w, kept.h),
        );
    }
    let region = match ann.region {
        Some(r) if !r.fits_within(img.width(), img.height()) => {
            return Reject(RejectRule::InvalidRegion, format!("{r:?} outside image"));
        }
        Some(r) => match intersect(r, kept) {
            Some(c) if c.w.min(c.h) >= p.min_region => c,
            _ => {
                return Reject(
                    RejectRule::InvalidRegion,
                    format!("{r:?} leaves less than {} px after trimming", p.min_region),
                )
            }
        },
        None => kept,
    };
    let cut = imageops::crop_imm(&img, region.x, region.y, region.w, region.h).to_image();
    let recorded = (region != Rect { x: 0, y: 0, w: img.width(), h: img.height() }).then_some(region);
    Verdict::Accept(shrink_to_short_side(cut, p.target_short), recorded)
}

/// Runs the curation chain over every file under `corpus_dir` in lexicographic
/// order, writing accepted images, the manifest and `rejected.json` to `out_dir`.
///
/// Duplicates keep the first occurrence. All records start in the train split.
pub fn ingest(corpus_dir: &Path, annotations: &[Annotation], out_dir: &Path, params: &IngestParams) -> Result<IngestOutcome> {
    let by_file: HashMap<&str, &Annotation> = annotations.iter().map(|a| (a.file.as_str(), a)).collect();
    let images_dir = out_dir.join(IMAGES_DIR);
    fs::create_dir_all(&images_dir).map_err(|e| Error::io(&images_dir, e))?;

    let mut seen_source = HashSet::new();
    let mut seen_output = HashSet::new();
    let mut records = Vec::new();
    let mut rejected = Vec::new();
    let mut reject = |file: &str, rule, detail: String| {
        log::info!("rejected {file}: {rule:?} ({detail})");
        rejected.push(Rejection {
            file: file.to_string(),
            rule,
            detail,
        });
    };

    for file in list_files(corpus_dir)? {
        let Some(ann) = by_file.get(file.as_str()) else {
            reject(&file, RejectRule::MissingAnnotation, "no annotation".into());
            continue;
        };
        let path = corpus_dir.join(&file);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let img = match decode(&bytes, &path) {
            Ok(img) => img.to_rgb8(),
            Err(e) => {
                reject(&file, RejectRule::Undecodable, e.to_string());
                continue;
            }
        };
        if !seen_source.insert(content_hash(&bytes)) {
            reject(&file, RejectRule::Duplicate, "byte-identical to an earlier file".into());
            continue;
        }
        match screen(img, ann, params) {
            Verdict::Reject(rule, detail) => reject(&file, rule, detail),
            Verdict::Accept(img, region) => {
                let name = stored_name(&file);
                let dest = images_dir.join(&name);
                img.save(&dest).map_err(|source| Error::Image {
                    path: dest.clone(),
                    source,
                })?;
                let stored = fs::read(&dest).map_err(|e| Error::io(&dest, e))?;
                let hash = content_hash(&stored);
                if !seen_output.insert(hash) {
                    fs::remove_file(&dest).map_err(|e| Error::io(&dest, e))?;
                    reject(&file, RejectRule::Duplicate, "identical after curation".into());
                    continue;
                }
                records.push(SampleRecord {
                    image_path: Path::new(IMAGES_DIR).join(name),
                    category: ann.category,
                    crop_region: region,
                    split: Split::Train,
                    content_hash: hash,
                });
            }
        }
    }
    for a in annotations {
        if !corpus_dir.join(&a.file).is_file() {
            log::warn!("annotation for missing file {}", a.file);
        }
    }

    let manifest = DatasetManifest {
        records,
        ..Default::default()
    };
    manifest.save(out_dir)?;
    let report = out_dir.join(REJECTED_FILE);
    fs::write(&report, serde_json::to_string_pretty(&rejected)?).map_err(|e| Error::io(&report, e))?;
    Ok(IngestOutcome { manifest, rejected })
}
