//! Texture-complexity analysis and classifier diagnostics.

mod lm;
mod pca;
mod records;

use std::path::Path;

use crate::dataset::Category;
use crate::error::{Error, Result};

pub use lm::{
    lm_bank, lm_bank_with, patch_features, random_gray_patches, Aggregation, FilterKind, LmBank, LmFilter, LmParams,
    PATCH_SIZE,
};
pub use pca::{pca_fit, pca_project, pca_reconstruct, PcaModel};
pub use records::{
    confidence_stats, confusion, read_predictions, top_misclassifications, write_confidence, write_predictions,
    CategoryConfidence, ConfusionMatrix, PredictionRecord,
};

/// Writes `x,y,category` rows for a scatter plot.
pub fn write_scatter(path: &Path, points: &[([f64; 2], Category)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Analysis(format!("{}: {e}", path.display())))?;
    w.write_record(["x", "y", "category"])?;
    for ([x, y], c) in points {
        w.write_record([x.to_string(), y.to_string(), c.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
