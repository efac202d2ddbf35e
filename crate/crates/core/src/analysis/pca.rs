use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Two-component principal subspace of a feature set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// Orthonormal rows, largest variance first.
    pub components: [Vec<f64>; 2],
    pub explained_variance: [f64; 2],
}

/// Fits the top two eigenvectors of the sample covariance.
///
/// Each component is signed so its largest-magnitude entry is positive.
pub fn pca_fit(features: &[Vec<f64>]) -> Result<PcaModel> {
    let n = features.len();
    if n < 3 {
        return Err(Error::Analysis(format!("PCA needs at least 3 samples, got {n}")));
    }
    let d = features[0].len();
    if d < 2 || features.iter().any(|f| f.len() != d) {
        return Err(Error::Analysis("PCA needs equally sized vectors of dimension >= 2".into()));
    }
    let mut mean = vec![0.0; d];
    for f in features {
        for (m, v) in mean.iter_mut().zip(f) {
            *m += v / n as f64;
        }
    }
    let centered = DMatrix::from_fn(n, d, |i, j| features[i][j] - mean[j]);
    let cov = (centered.transpose() * &centered) / (n - 1) as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let (l0, l1) = (eig.eigenvalues[order[0]], eig.eigenvalues[order[1]]);
    if !(l0 > 0.0) || l1 <= l0 * 1e-12 {
        return Err(Error::Analysis(format!(
            "covariance has rank below 2 (top eigenvalues {l0:e}, {l1:e})"
        )));
    }
    let component = |k: usize| {
        let col: Vec<f64> = eig.eigenvectors.column(order[k]).iter().copied().collect();
        let pivot = col.iter().copied().fold(0.0f64, |a, v| if v.abs() > a.abs() { v } else { a });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        col.into_iter().map(|v| v * sign).collect::<Vec<f64>>()
    };
    Ok(PcaModel {
        mean,
        components: [component(0), component(1)],
        explained_variance: [l0, l1],
    })
}

pub fn pca_project(model: &PcaModel, v: &[f64]) -> Result<[f64; 2]> {
    if v.len() != model.mean.len() {
        return Err(Error::Analysis(format!(
            "vector has {} entries, model expects {}",
            v.len(),
            model.mean.len()
        )));
    }
    let centered = DVector::from_iterator(v.len(), v.iter().zip(&model.mean).map(|(a, m)| a - m));
    let dot = |c: &[f64]| c.iter().zip(centered.iter()).map(|(a, b)| a * b).sum();
    Ok([dot(&model.components[0]), dot(&model.components[1])])
}

/// Maps a projection back into feature space.
pub fn pca_reconstruct(model: &PcaModel, p: [f64; 2]) -> Vec<f64> {
    model
        .mean
        .iter()
        .enumerate()
        .map(|(j, m)| m + p[0] * model.components[0][j] + p[1] * model.components[1][j])
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::seeded_rng;
    use rand::Rng;

    fn plane_data(n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = seeded_rng(seed);
        let origin: Vec<f64> = (0..48).map(|_| rng.random_range(-1.0..1.0)).collect();
        let a: Vec<f64> = (0..48).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..48).map(|_| rng.random_range(-1.0..1.0)).collect();
        (0..n)
            .map(|_| {
                let (s, t): (f64, f64) = (rng.random_range(-3.0..3.0), rng.random_range(-1.0..1.0));
                (0..48).map(|j| origin[j] + s * a[j] + t * b[j]).collect()
            })
            .collect()
    }

    #[test]
    fn rank_two_data_reconstructs_exactly() {
        let data = plane_data(40, 1);
        let model = pca_fit(&data).unwrap();
        for v in &data {
            let back = pca_reconstruct(&model, pca_project(&model, v).unwrap());
            for (x, y) in back.iter().zip(v) {
                assert!((x - y).abs() < 1e-8);
            }
        }
        let [c0, c1] = &model.components;
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        assert!((dot(c0, c0) - 1.0).abs() < 1e-8);
        assert!((dot(c1, c1) - 1.0).abs() < 1e-8);
        assert!(dot(c0, c1).abs() < 1e-8);
        assert!(model.explained_variance[0] >= model.explained_variance[1]);
        assert_eq!(pca_project(&model, &model.mean.clone()).unwrap(), [0.0, 0.0]);
    }

    #[test]
    fn order_invariant() {
        let data = plane_data(30, 2);
        let mut rev = data.clone();
        rev.reverse();
        let (a, b) = (pca_fit(&data).unwrap(), pca_fit(&rev).unwrap());
        for k in 0..2 {
            for (x, y) in a.components[k].iter().zip(&b.components[k]) {
                assert!((x - y).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn degenerate_inputs() {
        assert!(pca_fit(&[vec![1.0, 2.0], vec![2.0, 3.0]]).is_err());
        let line: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64, 2.0 * i as f64, 0.0]).collect();
        assert!(pca_fit(&line).is_err());
    }
}
