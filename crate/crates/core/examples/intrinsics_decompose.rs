//! Shading/reflectance split of a synthetic swatch under a lighting ramp.
//!
//! cargo run --example intrinsics_decompose -- [out-dir]

use std::path::PathBuf;

use matforge::dataset::synth::swatch;
use matforge::dataset::Category;
use matforge::image_io::{save_gray, save_rgb};
use matforge::intrinsics::{decompose, DecomposeParams};
use matforge::Tensor;

fn main() -> matforge::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| ".".into()));
    std::fs::create_dir_all(&out).map_err(|e| matforge::Error::Io { path: out.clone(), source: e })?;
    let (h, w) = (96, 128);
    let base = swatch(Category::Wood, h, w, 1).cast::<f64>();
    let lit = Tensor::from_fn(&[3, h, w], |i| base.data()[i] * (0.2 + 0.8 * (i % w) as f64 / w as f64));
    let params = DecomposeParams::default();
    let pair = decompose(&lit, &params)?;
    save_rgb(&lit, &out.join("lit.png"))?;
    save_gray(&pair.shading, &out.join("lit.shading.png"))?;
    let peak = pair.reflectance.data().iter().copied().fold(1.0, f64::max);
    save_rgb(&pair.reflectance.map(|v| v / peak), &out.join("lit.reflectance.png"))?;
    let s = pair.shading.data();
    println!("shading left {:.3}, right {:.3}", s[h / 2 * w], s[h / 2 * w + w - 1]);
    println!("max |I - s R| {:.2e}", pair.reconstruction_error(&lit, Some(params.s_floor)));
    Ok(())
}
