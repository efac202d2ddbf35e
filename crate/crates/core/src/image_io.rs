//! Conversions between decoded images and `[C, H, W]` tensors in `[0, 1]`.

use std::path::Path;

use image::{DynamicImage, GrayImage, RgbImage};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub fn from_rgb<T: Scalar>(img: &RgbImage) -> Tensor<T> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw = img.as_raw();
    let plane = h * w;
    Tensor::from_fn(&[3, h, w], |i| {
        let (c, p) = (i / plane, i % plane);
        T::from_f64_lossy(raw[p * 3 + c] as f64 / 255.0)
    })
}

fn quantize<T: Scalar>(v: T) -> u8 {
    (v.as_f64().clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Quantizes a `[3, H, W]` tensor, clamping to `[0, 1]`.
pub fn to_rgb<T: Scalar>(t: &Tensor<T>) -> Result<RgbImage> {
    let (c, h, w) = chw(t)?;
    if c != 3 {
        return Err(Error::Input(format!("expected 3 channels, got {c}")));
    }
    let plane = h * w;
    let d = t.data();
    let raw: Vec<u8> = (0..plane * 3).map(|i| quantize(d[(i % 3) * plane + i / 3])).collect();
    Ok(RgbImage::from_raw(w as u32, h as u32, raw).expect("buffer sized from dims"))
}

/// Quantizes a `[1, H, W]` tensor, clamping to `[0, 1]`.
pub fn to_gray<T: Scalar>(t: &Tensor<T>) -> Result<GrayImage> {
    let (c, h, w) = chw(t)?;
    if c != 1 {
        return Err(Error::Input(format!("expected 1 channel, got {c}")));
    }
    let raw = t.data().iter().map(|&v| quantize(v)).collect();
    Ok(GrayImage::from_raw(w as u32, h as u32, raw).expect("buffer sized from dims"))
}

pub fn chw<T: Scalar>(t: &Tensor<T>) -> Result<(usize, usize, usize)> {
    match *t.shape() {
        [c, h, w] => Ok((c, h, w)),
        ref other => Err(Error::Input(format!("expected a [C, H, W] image, got {other:?}"))),
    }
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<DynamicImage> {
    image::load_from_memory(bytes).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Reads any supported image file as RGB.
pub fn load_rgb<T: Scalar>(path: &Path) -> Result<Tensor<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(from_rgb(&decode(&bytes, path)?.to_rgb8()))
}

pub fn save_rgb<T: Scalar>(t: &Tensor<T>, path: &Path) -> Result<()> {
    to_rgb(t)?.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

pub fn save_gray<T: Scalar>(t: &Tensor<T>, path: &Path) -> Result<()> {
    to_gray(t)?.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rgb_round_trip_is_exact() {
        let img = RgbImage::from_fn(5, 3, |x, y| image::Rgb([x as u8 * 40, y as u8 * 90, 7]));
        let t: Tensor<f32> = from_rgb(&img);
        assert_eq!(t.shape(), [3, 3, 5]);
        assert_eq!(t.data()[2 * 15], 7.0 / 255.0);
        assert_eq!(to_rgb(&t).unwrap(), img);
    }

    #[test]
    fn png_on_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.png");
        let t = Tensor::<f64>::from_fn(&[1, 2, 2], |i| i as f64 / 3.0);
        save_gray(&t, &path).unwrap();
        let back: Tensor<f64> = load_rgb(&path).unwrap();
        assert_eq!(back.shape(), [3, 2, 2]);
        assert!((back.data()[3] - 1.0).abs() < 1e-12);
        assert!(to_gray(&back).is_err());
    }
}
