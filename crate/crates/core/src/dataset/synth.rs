//! Synthetic material swatches and a toy corpus for exercising the pipeline.

use std::fs;
use std::path::Path;

use rand::Rng;

use super::{content_hash, Annotation, Category, DatasetManifest, RejectRule, SampleRecord, Split};
use crate::error::{Error, Result};
use crate::image_io::save_rgb;
use crate::nn::seeded_rng;
use crate::tensor::Tensor;

const PALETTE: [[f32; 3]; 10] = [
    [0.80, 0.15, 0.20],
    [0.20, 0.65, 0.15],
    [0.55, 0.85, 0.90],
    [0.40, 0.10, 0.35],
    [0.55, 0.60, 0.70],
    [0.95, 0.92, 0.70],
    [0.85, 0.20, 0.80],
    [0.30, 0.30, 0.28],
    [0.10, 0.25, 0.75],
    [0.95, 0.65, 0.05],
];

/// A `[3, h, w]` swatch whose color and pattern identify the category.
///
/// `seed` varies the noise and pattern phase between images of one class.
pub fn swatch(category: Category, h: usize, w: usize, seed: u64) -> Tensor<f32> {
    let k = category.index();
    let base = PALETTE[k];
    let mut rng = seeded_rng(seed.wrapping_mul(31).wrapping_add(k as u64));
    let phase = rng.random_range(0..8usize);
    let period = 4 + k % 3 * 2;
    let plane = h * w;
    let noise: Vec<f32> = (0..plane).map(|_| rng.random_range(-0.06..0.06)).collect();
    Tensor::from_fn(&[3, h, w], |i| {
        let (c, p) = (i / plane, i % plane);
        let (y, x) = (p / w + phase, p % w + phase);
        let shade = match k % 4 {
            0 => 1.0,
            1 => if (y / period) % 2 == 0 { 1.0 } else { 0.7 },
            2 => if (x / period) % 2 == 0 { 1.0 } else { 0.7 },
            _ => if (x / period + y / period) % 2 == 0 { 1.0 } else { 0.7 },
        };
        (base[c] * shade + noise[p]).clamp(0.0, 1.0)
    })
}

/// `per_class` swatches of every category.
pub fn swatch_set(per_class: usize, h: usize, w: usize, seed: u64) -> Vec<(Category, Tensor<f32>)> {
    Category::ALL
        .into_iter()
        .flat_map(|c| (0..per_class).map(move |i| (c, i)))
        .map(|(c, i)| (c, swatch(c, h, w, seed.wrapping_add(i as u64 * 1000))))
        .collect()
}

/// Writes `swatch_set(per_class, size, size, seed)` as PNGs under `dir` with a
/// manifest that puts every image in `split`.
pub fn swatch_dataset(dir: &Path, per_class: usize, size: usize, seed: u64, split: Split) -> Result<DatasetManifest> {
    let images = dir.join("images");
    fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    let mut records = Vec::new();
    for (i, (category, img)) in swatch_set(per_class, size, size, seed).into_iter().enumerate() {
        let rel = Path::new("images").join(format!("{category}_{i:04}.png"));
        let path = dir.join(&rel);
        save_rgb(&img, &path)?;
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        records.push(SampleRecord {
            image_path: rel,
            category,
            crop_region: None,
            split,
            content_hash: content_hash(&bytes),
        });
    }
    let manifest = DatasetManifest {
        records,
        split_seed: None,
        quotas: None,
        mean_image: None,
    };
    manifest.save(dir)?;
    Ok(manifest)
}

/// Expected ingest outcome per corpus file; `None` means accepted.
pub type ToyExpectation = Vec<(String, Option<RejectRule>)>;

/// Writes a small corpus that trips every curation rule once.
pub fn toy_corpus(dir: &Path) -> Result<(Vec<Annotation>, ToyExpectation)> {
    let mut annotations = Vec::new();
    let mut expected = Vec::new();
    let mut put = |file: &str, category: Category, img: Option<Tensor<f32>>, flags: &[&str], rule: Option<RejectRule>, annotate: bool| -> Result<()> {
        let path = dir.join(file);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        match img {
            Some(img) => save_rgb(&img, &path)?,
            None => fs::write(&path, b"not an image").map_err(|e| Error::io(&path, e))?,
        }
        if annotate {
            annotations.push(Annotation {
                file: file.into(),
                category,
                region: None,
                flags: flags.iter().map(|f| f.to_string()).collect(),
            });
        }
        expected.push((file.to_string(), rule));
        Ok(())
    };

    put("fabric/good.png", Category::Fabric, Some(swatch(Category::Fabric, 400, 500, 1)), &[], None, true)?;
    put("foliage/tall.png", Category::Foliage, Some(swatch(Category::Foliage, 450, 320, 2)), &[], None, true)?;
    put("glass/small.png", Category::Glass, Some(swatch(Category::Glass, 300, 399, 3)), &[], Some(RejectRule::TooSmall), true)?;
    let mut rng = seeded_rng(4);
    let gray: Vec<f32> = (0..400 * 500).map(|_| rng.random_range(0.2..0.8)).collect();
    let gray = Tensor::from_fn(&[3, 400, 500], |i| gray[i % (400 * 500)]);
    put("metal/gray.png", Category::Metal, Some(gray), &[], Some(RejectRule::Grayscale), true)?;
    put("stone/blank.png", Category::Stone, Some(Tensor::full(&[3, 420, 520], 0.5)), &[], Some(RejectRule::Blank), true)?;
    let inner = swatch(Category::Stone, 500, 700, 5);
    let bordered = Tensor::from_fn(&[3, 600, 800], |i| {
        let (c, p) = (i / 480_000, i % 480_000);
        let (y, x) = (p / 800, p % 800);
        if (50..550).contains(&y) && (50..750).contains(&x) {
            inner.data()[(c * 500 + y - 50) * 700 + x - 50]
        } else {
            1.0
        }
    });
    put("stone/bordered.png", Category::Stone, Some(bordered), &[], None, true)?;
    put("wood/clip.png", Category::Wood, Some(swatch(Category::Wood, 400, 500, 6)), &["clipart"], Some(RejectRule::ManualFlag), true)?;
    put("wood/notes.png", Category::Wood, None, &[], Some(RejectRule::Undecodable), true)?;
    put("leather/unlabeled.png", Category::Leather, Some(swatch(Category::Leather, 400, 500, 7)), &[], Some(RejectRule::MissingAnnotation), false)?;

    let src = dir.join("fabric/good.png");
    let dup = dir.join("paper/copy.png");
    fs::create_dir_all(dir.join("paper")).map_err(|e| Error::io(dir.join("paper"), e))?;
    fs::copy(&src, &dup).map_err(|e| Error::io(&dup, e))?;
    annotations.push(Annotation {
        file: "paper/copy.png".into(),
        category: Category::Paper,
        region: None,
        flags: vec![],
    });
    expected.push(("paper/copy.png".into(), Some(RejectRule::Duplicate)));
    expected.sort();
    Ok((annotations, expected))
}
