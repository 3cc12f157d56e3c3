//! Fidelity and reusability metrics over a frozen feature extractor.

pub mod classifier;
pub mod features;
pub mod frechet;

pub use classifier::{alignment_score, train_frozen_classifier, FrozenClassifier};
pub use features::{extract_features, make_extractor, FeatureExtractor};
pub use frechet::{frechet_distance, GaussianSummary};

use serde::{Deserialize, Serialize};

use crate::glyphgen::LabeledSet;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub iteration: usize,
    pub ffd: f64,
    pub sfd: f64,
    pub alignment: f64,
}

/// Mean Euclidean feature distance between index-aligned pairs.
pub fn sfd(extractor: &FeatureExtractor, set_k: &LabeledSet, set_0: &LabeledSet) -> Result<f64> {
    if set_k.len() != set_0.len() {
        return Err(Error::Shape {
            expected: set_0.len(),
            actual: set_k.len(),
        });
    }
    if set_0.is_empty() {
        return Err(Error::config("sfd of empty sets"));
    }
    let fk = extract_features(extractor, set_k)?;
    let f0 = extract_features(extractor, set_0)?;
    Ok(sfd_from_features(&fk, &f0))
}

pub(crate) fn sfd_from_features(fk: &ndarray::Array2<f64>, f0: &ndarray::Array2<f64>) -> f64 {
    let total: f64 = fk
        .rows()
        .into_iter()
        .zip(f0.rows())
        .map(|(a, b)| {
            a.iter()
                .zip(b)
                .map(|(x, y)| (x - y).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .sum();
    total / fk.nrows() as f64
}

/// `ffd_K - ffd_1`; lower means the chain degrades less.
pub fn reusability(records: &[MetricsRecord], k: usize) -> Result<f64> {
    let find = |it: usize| {
        records
            .iter()
            .find(|r| r.iteration == it)
            .map(|r| r.ffd)
            .ok_or(Error::MissingIteration(it))
    };
    Ok(find(k)? - find(1)?)
}

/// Frozen yardsticks shared by every iteration of a chain: the extractor, the
/// alignment classifier and the original set's feature statistics.
#[derive(Debug, Clone)]
pub struct Evaluator {
    pub extractor: FeatureExtractor,
    pub classifier: FrozenClassifier,
    reference: GaussianSummary,
    reference_features: ndarray::Array2<f64>,
}

impl Evaluator {
    pub fn new(
        extractor: FeatureExtractor,
        classifier: FrozenClassifier,
        d0: &LabeledSet,
    ) -> Result<Self> {
        let reference_features = extract_features(&extractor, d0)?;
        let reference = GaussianSummary::fit(&reference_features)?;
        Ok(Evaluator {
            extractor,
            classifier,
            reference,
            reference_features,
        })
    }

    /// Scores `set_k` (index-aligned with the original set) for iteration `k`.
    pub fn evaluate(&self, iteration: usize, set_k: &LabeledSet) -> Result<MetricsRecord> {
        if set_k.len() != self.reference_features.nrows() {
            return Err(Error::Shape {
                expected: self.reference_features.nrows(),
                actual: set_k.len(),
            });
        }
        let features = extract_features(&self.extractor, set_k)?;
        let summary = GaussianSummary::fit(&features)?;
        Ok(MetricsRecord {
            iteration,
            ffd: frechet_distance(&summary, &self.reference)?,
            sfd: sfd_from_features(&features, &self.reference_features),
            alignment: alignment_score(&self.classifier, set_k)?,
        })
    }
}
