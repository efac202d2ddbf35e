//! Leung-Malik texture filter bank and per-patch responses.

use std::f64::consts::{PI, SQRT_2};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image_io::chw;
use crate::intrinsics::luminance;
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LmParams {
    /// Odd filter width and height.
    pub support: usize,
    /// Scales of the oriented derivative filters.
    pub oriented_scales: Vec<f64>,
    pub orientations: usize,
    /// Ratio of the along-edge to across-edge standard deviation.
    pub elongation: f64,
    /// Base scales of the Laplacian-of-Gaussian and Gaussian filters.
    pub blob_scales: Vec<f64>,
    /// Each LoG scale is repeated at this multiple.
    pub log_multiplier: f64,
}

impl Default for LmParams {
    fn default() -> Self {
        Self {
            support: 49,
            oriented_scales: vec![1.0, SQRT_2, 2.0],
            orientations: 6,
            elongation: 3.0,
            blob_scales: vec![1.0, SQRT_2, 2.0, 2.0 * SQRT_2],
            log_multiplier: 2.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterKind {
    FirstDerivative,
    SecondDerivative,
    LaplacianOfGaussian,
    Gaussian,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LmFilter {
    pub kind: FilterKind,
    pub sigma: f64,
    /// Radians; the derivative axis is rotated by this angle from the y axis.
    pub orientation: f64,
    /// Row-major `support x support`.
    pub taps: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LmBank {
    pub support: usize,
    /// First derivatives, second derivatives, LoGs, then Gaussians.
    pub filters: Vec<LmFilter>,
}

fn gauss1d(sigma: f64, x: f64, order: u8) -> f64 {
    let var = sigma * sigma;
    let g = (-x * x / (2.0 * var)).exp() / (2.0 * PI * var).sqrt();
    match order {
        0 => g,
        1 => -g * x / var,
        _ => g * (x * x - var) / (var * var),
    }
}

fn grid(support: usize) -> impl Iterator<Item = (f64, f64)> {
    let half = (support / 2) as isize;
    (-half..=half).flat_map(move |y| (-half..=half).map(move |x| (x as f64, y as f64)))
}

fn zero_mean_l1(mut taps: Vec<f64>) -> Vec<f64> {
    let mean = taps.iter().sum::<f64>() / taps.len() as f64;
    taps.iter_mut().for_each(|v| *v -= mean);
    l1(taps)
}

fn l1(mut taps: Vec<f64>) -> Vec<f64> {
    let norm: f64 = taps.iter().map(|v| v.abs()).sum();
    taps.iter_mut().for_each(|v| *v /= norm);
    taps
}

fn oriented(support: usize, sigma: f64, elongation: f64, theta: f64, order: u8) -> Vec<f64> {
    let (s, c) = theta.sin_cos();
    let taps = grid(support)
        .map(|(x, y)| {
            let u = c * x - s * y;
            let v = s * x + c * y;
            gauss1d(elongation * sigma, u, 0) * gauss1d(sigma, v, order)
        })
        .collect();
    zero_mean_l1(taps)
}

fn log_filter(support: usize, sigma: f64) -> Vec<f64> {
    let var = sigma * sigma;
    let taps = grid(support)
        .map(|(x, y)| {
            let r2 = x * x + y * y;
            (r2 - 2.0 * var) / (var * var) * (-r2 / (2.0 * var)).exp()
        })
        .collect();
    zero_mean_l1(taps)
}

fn gaussian(support: usize, sigma: f64) -> Vec<f64> {
    l1(grid(support)
        .map(|(x, y)| (-(x * x + y * y) / (2.0 * sigma * sigma)).exp())
        .collect())
}

/// The 48-filter bank with default parameters.
pub fn lm_bank() -> LmBank {
    lm_bank_with(&LmParams::default()).expect("default parameters are valid")
}

pub fn lm_bank_with(p: &LmParams) -> Result<LmBank> {
    if p.support % 2 == 0 || p.orientations == 0 {
        return Err(Error::config("LM bank needs an odd support and at least one orientation"));
    }
    let mut filters = Vec::new();
    for (kind, order) in [(FilterKind::FirstDerivative, 1), (FilterKind::SecondDerivative, 2)] {
        for &sigma in &p.oriented_scales {
            for k in 0..p.orientations {
                let theta = PI * k as f64 / p.orientations as f64;
                filters.push(LmFilter {
                    kind,
                    sigma,
                    orientation: theta,
                    taps: oriented(p.support, sigma, p.elongation, theta, order),
                });
            }
        }
    }
    let log_scales = p.blob_scales.iter().copied().chain(p.blob_scales.iter().map(|s| s * p.log_multiplier));
    for sigma in log_scales {
        filters.push(LmFilter {
            kind: FilterKind::LaplacianOfGaussian,
            sigma,
            orientation: 0.0,
            taps: log_filter(p.support, sigma),
        });
    }
    for &sigma in &p.blob_scales {
        filters.push(LmFilter {
            kind: FilterKind::Gaussian,
            sigma,
            orientation: 0.0,
            taps: gaussian(p.support, sigma),
        });
    }
    Ok(LmBank {
        support: p.support,
        filters,
    })
}

/// How filter responses over a patch collapse to one number.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    #[default]
    MeanAbs,
    MaxAbs,
    Energy,
}

pub const PATCH_SIZE: usize = 60;

/// Valid-region correlation of a square grayscale patch with every filter.
pub fn patch_features(patch: &Tensor<f64>, bank: &LmBank, agg: Aggregation) -> Result<Vec<f64>> {
    let (h, w) = patch.dims2()?;
    if h != PATCH_SIZE || w != PATCH_SIZE {
        return Err(Error::Analysis(format!(
            "patch must be {PATCH_SIZE}x{PATCH_SIZE}, got {h}x{w}"
        )));
    }
    let k = bank.support;
    if k > h {
        return Err(Error::Analysis(format!("{k}x{k} filters exceed the patch")));
    }
    let out = h - k + 1;
    let px = patch.data();
    Ok(bank
        .filters
        .iter()
        .map(|f| {
            let mut acc = 0.0f64;
            for oy in 0..out {
                for ox in 0..out {
                    let mut r = 0.0;
                    for ky in 0..k {
                        let row = &px[(oy + ky) * w + ox..(oy + ky) * w + ox + k];
                        let taps = &f.taps[ky * k..(ky + 1) * k];
                        r += row.iter().zip(taps).map(|(a, b)| a * b).sum::<f64>();
                    }
                    acc = match agg {
                        Aggregation::MeanAbs => acc + r.abs(),
                        Aggregation::MaxAbs => acc.max(r.abs()),
                        Aggregation::Energy => acc + r * r,
                    };
                }
            }
            match agg {
                Aggregation::MaxAbs => acc,
                _ => acc / (out * out) as f64,
            }
        })
        .collect())
}

/// Seeded square grayscale patches from a `[3, H, W]` image.
pub fn random_gray_patches<T: Scalar>(image: &Tensor<T>, n: usize, size: usize, rng: &mut impl Rng) -> Result<Vec<Tensor<f64>>> {
    let (_, h, w) = chw(image)?;
    if h < size || w < size {
        return Err(Error::Analysis(format!("{h}x{w} image is smaller than a {size}px patch")));
    }
    let gray = luminance(image)?;
    Ok((0..n)
        .map(|_| {
            let y = rng.random_range(0..=h - size);
            let x = rng.random_range(0..=w - size);
            Tensor::from_fn(&[size, size], |i| gray[(y + i / size) * w + x + i % size])
        })
        .collect())
}
