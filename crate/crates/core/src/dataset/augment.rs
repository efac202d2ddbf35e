use rand::Rng;
use serde::{Deserialize, Serialize};

use super::source::SampleSource;
use crate::error::{Error, Result};
use crate::image_io::chw;
use crate::tensor::{Scalar, Tensor};

/// Copies the `h x w` window with top-left corner `(y, x)` from a `[C, H, W]` image.
pub fn crop<T: Scalar>(image: &Tensor<T>, y: usize, x: usize, h: usize, w: usize) -> Result<Tensor<T>> {
    let (c, ih, iw) = chw(image)?;
    if y + h > ih || x + w > iw {
        return Err(Error::Input(format!(
            "crop {h}x{w} at ({y}, {x}) exceeds {ih}x{iw} image"
        )));
    }
    let d = image.data();
    let mut out = Vec::with_capacity(c * h * w);
    for ch in 0..c {
        for row in y..y + h {
            let start = (ch * ih + row) * iw + x;
            out.extend_from_slice(&d[start..start + w]);
        }
    }
    Tensor::from_vec(&[c, h, w], out)
}

/// Picks the corner uniformly among all placements fully inside the image.
pub fn random_crop<T: Scalar>(image: &Tensor<T>, h: usize, w: usize, rng: &mut impl Rng) -> Result<Tensor<T>> {
    let (_, ih, iw) = chw(image)?;
    if ih < h || iw < w {
        return Err(Error::Input(format!("{ih}x{iw} image is smaller than a {h}x{w} crop")));
    }
    let y = rng.random_range(0..=ih - h);
    let x = rng.random_range(0..=iw - w);
    crop(image, y, x, h, w)
}

pub fn center_crop<T: Scalar>(image: &Tensor<T>, h: usize, w: usize) -> Result<Tensor<T>> {
    let (_, ih, iw) = chw(image)?;
    if ih < h || iw < w {
        return Err(Error::Input(format!("{ih}x{iw} image is smaller than a {h}x{w} crop")));
    }
    crop(image, (ih - h) / 2, (iw - w) / 2, h, w)
}

/// Per-element mean of equally shaped images.
pub fn mean_image<'a, T: Scalar + 'a>(images: impl IntoIterator<Item = &'a Tensor<T>>) -> Result<Tensor<T>> {
    let mut acc: Option<(Vec<f64>, Vec<usize>)> = None;
    let mut n = 0usize;
    for img in images {
        let (sum, shape) = acc.get_or_insert_with(|| (vec![0.0; img.len()], img.shape().to_vec()));
        if img.shape() != shape.as_slice() {
            return Err(Error::Input(format!(
                "mean image needs equal shapes, got {:?} and {:?}",
                shape,
                img.shape()
            )));
        }
        for (s, &v) in sum.iter_mut().zip(img.data()) {
            *s += v.as_f64();
        }
        n += 1;
    }
    let (sum, shape) = acc.ok_or_else(|| Error::Dataset("mean of an empty split".into()))?;
    Tensor::from_vec(&shape, sum.into_iter().map(|s| T::from_f64_lossy(s / n as f64)).collect())
}

/// Center-crop mean of every tower input over a sample source.
pub fn source_mean(source: &dyn SampleSource, h: usize, w: usize) -> Result<Vec<Tensor<f32>>> {
    let mut sums: Vec<Vec<f64>> = Vec::new();
    let mut count = 0usize;
    for i in 0..source.len() {
        let inputs = match source.load(i) {
            Ok(x) => x,
            Err(e) => {
                log::warn!("skipping {} in mean image: {e}", source.id(i));
                continue;
            }
        };
        if sums.is_empty() {
            sums = vec![vec![0.0; 3 * h * w]; inputs.len()];
        }
        for (sum, x) in sums.iter_mut().zip(&inputs) {
            let c = center_crop(x, h, w)?;
            if c.len() != sum.len() {
                return Err(Error::Input(format!("mean image expects 3 channels, got {:?}", c.shape())));
            }
            for (s, &v) in sum.iter_mut().zip(c.data()) {
                *s += v as f64;
            }
        }
        count += 1;
    }
    if count == 0 {
        return Err(Error::Dataset("mean of an empty split".into()));
    }
    sums.into_iter()
        .map(|s| Tensor::from_vec(&[3, h, w], s.into_iter().map(|v| (v / count as f64) as f32).collect()))
        .collect()
}

pub fn subtract_mean<T: Scalar>(sample: &Tensor<T>, mean: &Tensor<T>) -> Result<Tensor<T>> {
    if sample.shape() != mean.shape() {
        return Err(Error::Input(format!(
            "sample {:?} and mean {:?} differ in shape",
            sample.shape(),
            mean.shape()
        )));
    }
    let data = sample.data().iter().zip(mean.data()).map(|(&a, &b)| a - b).collect();
    Tensor::from_vec(sample.shape(), data)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskFill {
    /// The image's global mean color.
    MeanColor,
    White,
}

/// Replaces pixels where `mask` is false; `mask` is row-major `H x W`.
pub fn mask_fill<T: Scalar>(image: &Tensor<T>, mask: &[bool], mode: MaskFill) -> Result<Tensor<T>> {
    let (c, h, w) = chw(image)?;
    if mask.len() != h * w {
        return Err(Error::Input(format!("mask has {} pixels, image has {h}x{w}", mask.len())));
    }
    let plane = h * w;
    let fill: Vec<T> = (0..c)
        .map(|ch| match mode {
            MaskFill::White => T::one(),
            MaskFill::MeanColor => {
                let s: f64 = image.data()[ch * plane..(ch + 1) * plane].iter().map(|v| v.as_f64()).sum();
                T::from_f64_lossy(s / plane as f64)
            }
        })
        .collect();
    let mut out = image.clone();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        if !mask[i % plane] {
            *v = fill[i / plane];
        }
    }
    Ok(out)
}
