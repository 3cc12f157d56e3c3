//! Fréchet distance between Gaussian feature summaries.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use ndarray::{Array1, Array2, Axis};

use crate::{Error, Result};

const SYMMETRY_TOL: f64 = 1e-9;
pub const NEGATIVE_EIGEN_TOL: f64 = -1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSummary {
    pub mean: Array1<f64>,
    pub covariance: Array2<f64>,
}

impl GaussianSummary {
    /// Sample mean and unbiased covariance of feature rows. Requires at least
    /// twice as many rows as feature dimensions.
    pub fn fit(features: &Array2<f64>) -> Result<Self> {
        let (n, d) = features.dim();
        if n < 2 * d.max(1) {
            return Err(Error::config(format!(
                "{n} samples are too few for a {d}-dimensional covariance (need {})",
                2 * d
            )));
        }
        let mean = features.mean_axis(Axis(0)).expect("non-empty");
        let centered = features - &mean;
        let mut covariance = centered.t().dot(&centered) / (n - 1) as f64;
        // Exact symmetry; the product is symmetric up to rounding.
        for i in 0..d {
            for j in 0..i {
                let v = 0.5 * (covariance[[i, j]] + covariance[[j, i]]);
                covariance[[i, j]] = v;
                covariance[[j, i]] = v;
            }
        }
        Ok(GaussianSummary { mean, covariance })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

fn to_matrix(a: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

fn check_symmetric(a: &Array2<f64>) -> Result<()> {
    let scale = a.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    for i in 0..a.nrows() {
        for j in 0..i {
            if (a[[i, j]] - a[[j, i]]).abs() > SYMMETRY_TOL * scale {
                return Err(Error::config(format!(
                    "covariance not symmetric at ({i}, {j})"
                )));
            }
        }
    }
    Ok(())
}

/// Eigenvalues below zero (round-off) are clamped before the square root.
fn sym_sqrt(m: DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m);
    let roots = DVector::from_iterator(
        eig.eigenvalues.len(),
        eig.eigenvalues.iter().map(|&l| l.max(0.0).sqrt()),
    );
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// `||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^{1/2})`, with the trace of
/// the cross term taken as `Tr((S_a^{1/2} S_b S_a^{1/2})^{1/2})`.
pub fn frechet_distance(a: &GaussianSummary, b: &GaussianSummary) -> Result<f64> {
    if a.dim() != b.dim()
        || a.covariance.dim() != (a.dim(), a.dim())
        || b.covariance.dim() != (b.dim(), b.dim())
    {
        return Err(Error::Shape {
            expected: a.dim(),
            actual: b.dim(),
        });
    }
    check_symmetric(&a.covariance)?;
    check_symmetric(&b.covariance)?;
    let mean_term: f64 = a
        .mean
        .iter()
        .zip(&b.mean)
        .map(|(x, y)| (x - y).powi(2))
        .sum();
    let (sa, sb) = (to_matrix(&a.covariance), to_matrix(&b.covariance));
    let root_a = sym_sqrt(sa.clone());
    let inner = &root_a * &sb * &root_a;
    let inner = (&inner + inner.transpose()) * 0.5;
    let cross: f64 = SymmetricEigen::new(inner)
        .eigenvalues
        .iter()
        .map(|&l| l.max(0.0).sqrt())
        .sum();
    let value = mean_term + sa.trace() + sb.trace() - 2.0 * cross;
    Ok(value.max(0.0))
}
