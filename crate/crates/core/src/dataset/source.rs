use std::path::{Path, PathBuf};

use super::{Category, SampleRecord};
use crate::error::Result;
use crate::image_io::load_rgb;
use crate::intrinsics::{select_input, DecomposeParams, InputMode};
use crate::tensor::Tensor;

/// Labeled images as the training and evaluation loops consume them.
pub trait SampleSource {
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    fn label(&self, i: usize) -> Category;
    fn id(&self, i: usize) -> String;
    /// Full-size network inputs, one `[3, H, W]` tensor per tower.
    fn load(&self, i: usize) -> Result<Vec<Tensor<f32>>>;
}

#[derive(Clone, Debug, Default)]
pub struct InMemorySamples {
    pub items: Vec<(String, Category, Vec<Tensor<f32>>)>,
}

impl InMemorySamples {
    /// Wraps single-tower images with ids `0`, `1`, ...
    pub fn from_images(images: Vec<(Category, Tensor<f32>)>) -> Self {
        Self {
            items: images
                .into_iter()
                .enumerate()
                .map(|(i, (c, t))| (i.to_string(), c, vec![t]))
                .collect(),
        }
    }
}

impl SampleSource for InMemorySamples {
    fn len(&self) -> usize {
        self.items.len()
    }

    fn label(&self, i: usize) -> Category {
        self.items[i].1
    }

    fn id(&self, i: usize) -> String {
        self.items[i].0.clone()
    }

    fn load(&self, i: usize) -> Result<Vec<Tensor<f32>>> {
        Ok(self.items[i].2.clone())
    }
}

/// Manifest records decoded from disk on demand.
///
/// Intrinsic decomposition runs on the full image before any cropping.
pub struct DiskSamples {
    pub root: PathBuf,
    pub records: Vec<SampleRecord>,
    pub mode: InputMode,
    pub decompose: DecomposeParams,
}

impl DiskSamples {
    pub fn new(root: &Path, records: Vec<SampleRecord>, mode: InputMode) -> Self {
        Self {
            root: root.to_path_buf(),
            records,
            mode,
            decompose: DecomposeParams::default(),
        }
    }
}

impl SampleSource for DiskSamples {
    fn len(&self) -> usize {
        self.records.len()
    }

    fn label(&self, i: usize) -> Category {
        self.records[i].category
    }

    fn id(&self, i: usize) -> String {
        self.records[i].image_path.to_string_lossy().into_owned()
    }

    fn load(&self, i: usize) -> Result<Vec<Tensor<f32>>> {
        let image = load_rgb::<f32>(&self.root.join(&self.records[i].image_path))?;
        select_input(&image, self.mode, &self.decompose)
    }
}
