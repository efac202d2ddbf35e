//! Shading/reflectance split of an RGB image with `image = shading * reflectance`.
//!
//! Shading is the Gaussian-smoothed luminance, floored to stay positive;
//! reflectance is whatever remains after dividing it out.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image_io::chw;
use crate::tensor::{Scalar, Tensor};

pub const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecomposeParams {
    /// Blur radius of the luminance estimate, in pixels.
    pub sigma: f64,
    pub s_floor: f64,
}

impl Default for DecomposeParams {
    fn default() -> Self {
        Self {
            sigma: 12.0,
            s_floor: 1e-3,
        }
    }
}

#[derive(Clone, Debug)]
pub struct IntrinsicPair<T> {
    /// `[1, H, W]`, values in `[s_floor, 1]` for images in `[0, 1]`.
    pub shading: Tensor<T>,
    /// `[3, H, W]`, nonnegative.
    pub reflectance: Tensor<T>,
}

impl<T: Scalar> IntrinsicPair<T> {
    /// Largest per-channel `|image - s * R|`, optionally only over unfloored pixels.
    pub fn reconstruction_error(&self, image: &Tensor<T>, s_floor: Option<f64>) -> f64 {
        let s = self.shading.data();
        let plane = s.len();
        let mut worst = 0.0f64;
        for (i, (&r, &x)) in self.reflectance.data().iter().zip(image.data()).enumerate() {
            let sp = s[i % plane];
            if s_floor.is_some_and(|f| sp.as_f64() <= f) {
                continue;
            }
            worst = worst.max((x.as_f64() - (sp * r).as_f64()).abs());
        }
        worst
    }
}

/// Separable Gaussian blur of a single `h x w` plane.
///
/// The kernel is truncated at `ceil(3 sigma)` and renormalized at the borders,
/// so constant planes stay constant.
pub fn gaussian_blur(plane: &[f64], h: usize, w: usize, sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return plane.to_vec();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let pass = |src: &[f64], len: usize, stride: usize, lines: usize, line_stride: usize| {
        let mut out = vec![0.0; src.len()];
        for line in 0..lines {
            let base = line * line_stride;
            for i in 0..len as isize {
                let (mut acc, mut norm) = (0.0, 0.0);
                let lo = (i - radius).max(0);
                let hi = (i + radius).min(len as isize - 1);
                for j in lo..=hi {
                    let k = kernel[(j - i + radius) as usize];
                    acc += k * src[base + j as usize * stride];
                    norm += k;
                }
                out[base + i as usize * stride] = acc / norm;
            }
        }
        out
    };
    let rows = pass(plane, w, 1, h, w);
    pass(&rows, h, w, w, 1)
}

pub fn luminance<T: Scalar>(image: &Tensor<T>) -> Result<Vec<f64>> {
    let (c, h, w) = chw(image)?;
    if c != 3 {
        return Err(Error::Input(format!("luminance needs 3 channels, got {c}")));
    }
    let plane = h * w;
    let d = image.data();
    Ok((0..plane)
        .map(|p| (0..3).map(|ch| LUMA[ch] * d[ch * plane + p].as_f64()).sum())
        .collect())
}

pub fn decompose<T: Scalar>(image: &Tensor<T>, params: &DecomposeParams) -> Result<IntrinsicPair<T>> {
    if !image.is_finite() {
        return Err(Error::Input("image contains non-finite pixels".into()));
    }
    if !(params.s_floor > 0.0) || !(params.sigma >= 0.0) {
        return Err(Error::config("decomposition needs s_floor > 0 and sigma >= 0"));
    }
    let (_, h, w) = chw(image)?;
    let blurred = gaussian_blur(&luminance(image)?, h, w, params.sigma);
    let shading: Vec<T> = blurred
        .iter()
        .map(|&v| T::from_f64_lossy(v.max(params.s_floor)))
        .collect();
    let plane = h * w;
    let reflectance: Vec<T> = image
        .data()
        .iter()
        .enumerate()
        .map(|(i, &x)| if x == T::zero() { T::zero() } else { x / shading[i % plane] })
        .collect();
    Ok(IntrinsicPair {
        shading: Tensor::from_vec(&[1, h, w], shading)?,
        reflectance: Tensor::from_vec(&[3, h, w], reflectance)?,
    })
}

/// Copies a single-channel shading map into three identical channels.
pub fn replicate_shading<T: Scalar>(s: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, h, w) = chw(s)?;
    if c != 1 {
        return Err(Error::Input(format!("shading must have 1 channel, got {c}")));
    }
    let mut data = Vec::with_capacity(3 * h * w);
    for _ in 0..3 {
        data.extend_from_slice(s.data());
    }
    Tensor::from_vec(&[3, h, w], data)
}

/// Which image representation feeds the network.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputMode {
    #[default]
    Rgb,
    Reflectance,
    Shading,
    /// Reflectance and shading towers side by side.
    Branched,
}

impl InputMode {
    pub const ALL: [InputMode; 4] = [
        InputMode::Rgb,
        InputMode::Reflectance,
        InputMode::Shading,
        InputMode::Branched,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            InputMode::Rgb => "rgb",
            InputMode::Reflectance => "reflectance",
            InputMode::Shading => "shading",
            InputMode::Branched => "branched",
        }
    }

    pub fn num_towers(self) -> usize {
        if self == InputMode::Branched {
            2
        } else {
            1
        }
    }
}

impl fmt::Display for InputMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

impl FromStr for InputMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        InputMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::config(format!("unknown input mode `{s}`")))
    }
}

/// Network inputs for one image, one `[3, H, W]` tensor per tower.
pub fn select_input<T: Scalar>(image: &Tensor<T>, mode: InputMode, params: &DecomposeParams) -> Result<Vec<Tensor<T>>> {
    if mode == InputMode::Rgb {
        return Ok(vec![image.clone()]);
    }
    let pair = decompose(image, params)?;
    Ok(match mode {
        InputMode::Reflectance => vec![pair.reflectance],
        InputMode::Shading => vec![replicate_shading(&pair.shading)?],
        _ => vec![pair.reflectance, replicate_shading(&pair.shading)?],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::seeded_rng;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_image(h: usize, w: usize, seed: u64) -> Tensor<f64> {
        let mut rng = seeded_rng(seed);
        Tensor::from_fn(&[3, h, w], |_| rng.random())
    }

    #[test]
    fn constant_gray() {
        let img = Tensor::<f64>::full(&[3, 9, 7], 0.5);
        let pair = decompose(&img, &DecomposeParams::default()).unwrap();
        assert!(pair.shading.data().iter().all(|&s| (s - 0.5).abs() < 1e-12));
        assert!(pair.reflectance.data().iter().all(|&r| (r - 1.0).abs() < 1e-12));
    }

    #[test]
    fn black_image_floors() {
        let img = Tensor::<f32>::zeros(&[3, 4, 4]);
        let pair = decompose(&img, &DecomposeParams::default()).unwrap();
        assert!(pair.shading.data().iter().all(|&s| s == 1e-3));
        assert!(pair.reflectance.data().iter().all(|&r| r == 0.0));
    }

    #[test]
    fn reconstruction_and_channel_counts() {
        let img = random_image(20, 30, 3);
        let pair = decompose(&img, &DecomposeParams::default()).unwrap();
        assert_eq!(pair.shading.shape(), [1, 20, 30]);
        assert_eq!(pair.reflectance.shape(), [3, 20, 30]);
        assert!(pair.reconstruction_error(&img, Some(1e-3)) <= 1e-6);
        assert!(pair.reflectance.data().iter().all(|&r| r >= 0.0));
    }

    #[test]
    fn grayscale_gives_uniform_reflectance_channels() {
        let mut rng = seeded_rng(4);
        let g: Vec<f64> = (0..64).map(|_| rng.random()).collect();
        let img = Tensor::from_fn(&[3, 8, 8], |i| g[i % 64]);
        let r = decompose(&img, &DecomposeParams { sigma: 2.0, s_floor: 1e-3 }).unwrap().reflectance;
        assert_eq!(r.outer(0), r.outer(1));
        assert_eq!(r.outer(1), r.outer(2));
    }

    #[test]
    fn modes() {
        let img = random_image(6, 6, 5);
        let p = DecomposeParams::default();
        assert_eq!(select_input(&img, InputMode::Rgb, &p).unwrap()[0], img);
        let s = &select_input(&img, InputMode::Shading, &p).unwrap()[0];
        assert_eq!(s.outer(0), s.outer(2));
        assert_eq!(select_input(&img, InputMode::Branched, &p).unwrap().len(), 2);
        let px = replicate_shading(&Tensor::<f64>::full(&[1, 2, 2], 0.7)).unwrap();
        assert_eq!(px.shape(), [3, 2, 2]);
        assert!(px.data().iter().all(|&v| v == 0.7));
        assert_eq!("shading".parse::<InputMode>().unwrap(), InputMode::Shading);
        assert!("depth".parse::<InputMode>().is_err());
    }

    #[test]
    fn constant_luminance_reflectance_is_image_over_constant() {
        // each pixel has luminance 0.4 but varying chroma
        let img = Tensor::<f64>::from_fn(&[3, 5, 5], |i| {
            let (c, p) = (i / 25, i % 25);
            let t = (p % 5) as f64 * 0.05;
            match c {
                0 => 0.4 + t * 0.114 / 0.299,
                1 => 0.4,
                _ => 0.4 - t,
            }
        });
        let r = &select_input(&img, InputMode::Reflectance, &DecomposeParams::default()).unwrap()[0];
        for (a, b) in r.data().iter().zip(img.data()) {
            assert!((a - b / 0.4).abs() < 1e-12);
        }
    }

    #[test]
    fn non_finite_rejected() {
        let mut img = Tensor::<f64>::zeros(&[3, 2, 2]);
        img.data_mut()[1] = f64::NAN;
        assert!(matches!(decompose(&img, &DecomposeParams::default()), Err(Error::Input(_))));
    }

    proptest! {
        #[test]
        fn scale_covariance(c in 0.05f64..1.0, seed in 0u64..1000) {
            let img = random_image(10, 12, seed).map(|v| 0.2 + 0.8 * v);
            let p = DecomposeParams { sigma: 3.0, s_floor: 1e-3 };
            let a = decompose(&img, &p).unwrap();
            let b = decompose(&img.map(|v| v * c), &p).unwrap();
            for (sa, sb) in a.shading.data().iter().zip(b.shading.data()) {
                prop_assert!((sa * c - sb).abs() < 1e-5);
            }
            prop_assert!(a.reflectance.max_abs_diff(&b.reflectance) < 1e-5);
        }
    }
}
