//! Matching distances: absolute propensity differences and Mahalanobis
//! distance under the case-cohort weighted covariance.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Minimum eigenvalue a covariance must exceed to be used unconditioned.
pub const MIN_EIGENVALUE: f64 = 1e-10;
/// Ridge multiplier applied to `trace / p` when conditioning is needed.
pub const RIDGE_FACTOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceKind {
    PropensityEuclidean,
    Mahalanobis,
}

/// `sum rho_i (x_i - mu_W)(x_i - mu_W)^T / (sum rho_i - 1)` with the
/// weighted mean `mu_W`.
pub fn weighted_covariance(x: &[Vec<f64>], rho: &[f64]) -> Result<DMatrix<f64>> {
    if x.len() != rho.len() || x.is_empty() {
        return Err(Error::contract("covariate rows and weights must be nonempty and aligned"));
    }
    let p = x[0].len();
    let total: f64 = rho.iter().sum();
    if !(total > 1.0) {
        return Err(Error::domain(format!("sum of weights must exceed one, got {total}")));
    }
    let mut mean = vec![0.0; p];
    for (row, &w) in x.iter().zip(rho) {
        if row.len() != p {
            return Err(Error::contract("ragged covariate rows"));
        }
        for (m, v) in mean.iter_mut().zip(row) {
            *m += w * v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= total);
    let mut cov = DMatrix::<f64>::zeros(p, p);
    for (row, &w) in x.iter().zip(rho) {
        if w == 0.0 {
            continue;
        }
        for a in 0..p {
            let da = row[a] - mean[a];
            for b in 0..=a {
                cov[(a, b)] += w * da * (row[b] - mean[b]);
            }
        }
    }
    for a in 0..p {
        for b in 0..=a {
            let v = cov[(a, b)] / (total - 1.0);
            cov[(a, b)] = v;
            cov[(b, a)] = v;
        }
    }
    Ok(cov)
}

/// Adds a small ridge when the smallest eigenvalue is not safely positive.
/// Returns the matrix and whether the ridge was applied.
pub fn condition_covariance(cov: &DMatrix<f64>) -> (DMatrix<f64>, bool) {
    let eig = SymmetricEigen::new(cov.clone());
    let min_eig = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if min_eig > MIN_EIGENVALUE {
        return (cov.clone(), false);
    }
    let p = cov.nrows() as f64;
    let mut lambda = RIDGE_FACTOR * cov.trace() / p;
    if !(lambda > 0.0) {
        lambda = RIDGE_FACTOR;
    }
    // lift the spectrum enough that the minimum clears the threshold
    let lift = lambda.max(MIN_EIGENVALUE - min_eig + lambda);
    let mut out = cov.clone();
    for i in 0..cov.nrows() {
        out[(i, i)] += lift;
    }
    log::info!("covariance conditioned with ridge {lift:e} (min eigenvalue {min_eig:e})");
    (out, true)
}

/// `[(x1 - x2)^T sigma^{-1} (x1 - x2)]^{1/2}`.
pub fn mahalanobis(x1: &[f64], x2: &[f64], sigma: &DMatrix<f64>) -> Result<f64> {
    let p = sigma.nrows();
    if x1.len() != p || x2.len() != p || sigma.ncols() != p {
        return Err(Error::contract("dimension mismatch in Mahalanobis distance"));
    }
    let chol = sigma
        .clone()
        .cholesky()
        .ok_or_else(|| Error::domain("covariance matrix is not positive definite"))?;
    let diff = DVector::from_iterator(p, x1.iter().zip(x2).map(|(a, b)| a - b));
    let solved = chol.solve(&diff);
    Ok(diff.dot(&solved).max(0.0).sqrt())
}

/// How matching distances are computed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceSpec {
    pub kind: DistanceKind,
    /// Covariance of the matching covariates (Mahalanobis only).
    pub covariance: Option<Vec<Vec<f64>>>,
    pub matching_covariate_indices: Vec<usize>,
    pub ridge_applied: bool,
    #[serde(skip)]
    whitener: Option<DMatrix<f64>>,
}

impl DistanceSpec {
    pub fn propensity() -> Self {
        DistanceSpec {
            kind: DistanceKind::PropensityEuclidean,
            covariance: None,
            matching_covariate_indices: Vec::new(),
            ridge_applied: false,
            whitener: None,
        }
    }

    /// Mahalanobis distance under `cov` (conditioned if near singular) on
    /// the given covariate columns.
    pub fn mahalanobis(cov: &DMatrix<f64>, matching_covariate_indices: Vec<usize>) -> Result<Self> {
        if cov.nrows() != cov.ncols() || cov.nrows() != matching_covariate_indices.len() {
            return Err(Error::contract("covariance shape does not match the matching covariates"));
        }
        let (conditioned, ridge_applied) = condition_covariance(cov);
        let chol = conditioned
            .clone()
            .cholesky()
            .ok_or_else(|| Error::domain("covariance matrix is not positive definite"))?;
        let l_inv = chol
            .l()
            .try_inverse()
            .ok_or_else(|| Error::domain("covariance factor is singular"))?;
        let covariance = (0..conditioned.nrows())
            .map(|i| conditioned.row(i).iter().copied().collect())
            .collect();
        Ok(DistanceSpec {
            kind: DistanceKind::Mahalanobis,
            covariance: Some(covariance),
            matching_covariate_indices,
            ridge_applied,
            whitener: Some(l_inv),
        })
    }

    /// Maps a subject to coordinates in which the distance is Euclidean:
    /// the propensity score itself, or whitened matching covariates.
    pub fn embed(&self, covariates: &[f64], propensity: f64) -> Vec<f64> {
        match self.kind {
            DistanceKind::PropensityEuclidean => vec![propensity],
            DistanceKind::Mahalanobis => {
                let w = self.whitener.as_ref().expect("Mahalanobis spec without whitener");
                let sel: Vec<f64> = self.matching_covariate_indices.iter().map(|&j| covariates[j]).collect();
                (0..w.nrows())
                    .map(|i| (0..=i).map(|k| w[(i, k)] * sel[k]).sum())
                    .collect()
            }
        }
    }
}

/// Euclidean distance between embedded points.
#[inline]
pub fn embedded_distance(a: &[f64], b: &[f64]) -> f64 {
    if a.len() == 1 {
        return (a[0] - b[0]).abs();
    }
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}
