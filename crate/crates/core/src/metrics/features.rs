//! Seeded random-projection features: `tanh(P x + b)`.

use ndarray::{Array1, Array2};
use rand_distr::{Distribution, Normal};

use crate::glyphgen::{ImageSample, LabeledSet};
use crate::rng;
use crate::{Error, Result};

pub const FEATURE_DIM: usize = 64;
pub const INPUT_DIM: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureExtractor {
    /// `FEATURE_DIM x INPUT_DIM`.
    pub projection: Array2<f64>,
    pub bias: Array1<f64>,
    pub seed: u64,
}

/// Projection entries are `N(0, 1/INPUT_DIM)`; bias is zero.
pub fn make_extractor(seed: u64) -> FeatureExtractor {
    let normal = Normal::new(0.0, 1.0 / (INPUT_DIM as f64).sqrt()).expect("finite std");
    let mut rng = rng::stream(seed, "feature-extractor", 0);
    FeatureExtractor {
        projection: Array2::from_shape_simple_fn((FEATURE_DIM, INPUT_DIM), || {
            normal.sample(&mut rng)
        }),
        bias: Array1::zeros(FEATURE_DIM),
        seed,
    }
}

impl FeatureExtractor {
    pub fn dim(&self) -> usize {
        self.projection.nrows()
    }

    pub fn features(&self, sample: &ImageSample) -> Vec<f64> {
        let x = Array1::from(sample.pixels_f64());
        (self.projection.dot(&x) + &self.bias)
            .mapv(f64::tanh)
            .to_vec()
    }
}

/// One feature row per sample, in set order.
pub fn extract_features(f: &FeatureExtractor, set: &LabeledSet) -> Result<Array2<f64>> {
    if set.is_empty() {
        return Err(Error::config("cannot extract features from an empty set"));
    }
    let mut out = Array2::zeros((set.len(), f.dim()));
    for (mut row, sample) in out.rows_mut().into_iter().zip(&set.samples) {
        if sample.pixels.len() != f.projection.ncols() {
            return Err(Error::Shape {
                expected: f.projection.ncols(),
                actual: sample.pixels.len(),
            });
        }
        row.assign(&Array1::from(f.features(sample)));
    }
    Ok(out)
}
