//! Frozen label classifier standing in for a text-image alignment score.

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};

use crate::diffusion::optim::{Adam, Params};
use crate::glyphgen::LabeledSet;
use crate::rng;
use crate::{Error, Result};

const HIDDEN: usize = 64;
const EPOCHS: usize = 40;
const BATCH: usize = 64;
const LEARNING_RATE: f64 = 3e-3;

/// `input -> 64 (ReLU) -> classes`, softmax output.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenClassifier {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

impl FrozenClassifier {
    /// All-zero weights: every prediction is uniform.
    pub fn uniform(input_dim: usize, classes: usize) -> Self {
        FrozenClassifier {
            w1: Array2::zeros((HIDDEN, input_dim)),
            b1: Array1::zeros(HIDDEN),
            w2: Array2::zeros((classes, HIDDEN)),
            b2: Array1::zeros(classes),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.w2.nrows()
    }

    fn hidden(&self, x: &Array2<f64>) -> Array2<f64> {
        (x.dot(&self.w1.t()) + &self.b1).mapv(|v| v.max(0.0))
    }

    fn softmax(logits: Array2<f64>) -> Array2<f64> {
        let mut probs = logits;
        for mut row in probs.rows_mut() {
            let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            row.mapv_inplace(|v| (v - max).exp());
            let sum = row.sum();
            row /= sum;
        }
        probs
    }

    /// Class probabilities, one row per input row.
    pub fn predict(&self, x: &Array2<f64>) -> Array2<f64> {
        Self::softmax(self.hidden(x).dot(&self.w2.t()) + &self.b2)
    }
}

impl Params for FrozenClassifier {
    fn visit(&self, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        f(
            "w1",
            self.w1.shape(),
            self.w1.as_slice().expect("standard layout"),
        );
        f(
            "b1",
            self.b1.shape(),
            self.b1.as_slice().expect("standard layout"),
        );
        f(
            "w2",
            self.w2.shape(),
            self.w2.as_slice().expect("standard layout"),
        );
        f(
            "b2",
            self.b2.shape(),
            self.b2.as_slice().expect("standard layout"),
        );
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        f("w1", self.w1.as_slice_mut().expect("standard layout"));
        f("b1", self.b1.as_slice_mut().expect("standard layout"));
        f("w2", self.w2.as_slice_mut().expect("standard layout"));
        f("b2", self.b2.as_slice_mut().expect("standard layout"));
    }
}

fn set_matrix(set: &LabeledSet) -> Result<Array2<f64>> {
    let dim = set
        .samples
        .first()
        .map(|s| s.pixels.len())
        .ok_or_else(|| Error::config("empty set"))?;
    let mut x = Array2::zeros((set.len(), dim));
    for (mut row, s) in x.rows_mut().into_iter().zip(&set.samples) {
        if s.pixels.len() != dim {
            return Err(Error::Shape {
                expected: dim,
                actual: s.pixels.len(),
            });
        }
        row.iter_mut()
            .zip(&s.pixels)
            .for_each(|(d, &p)| *d = f64::from(p));
    }
    Ok(x)
}

/// Trains on the base set with cross-entropy and Adam, then returns the
/// frozen classifier.
pub fn train_frozen_classifier(
    base_set: &LabeledSet,
    classes: usize,
    seed: u64,
) -> Result<FrozenClassifier> {
    let mut seen = vec![false; classes];
    for s in &base_set.samples {
        if s.label >= classes {
            return Err(Error::config(format!(
                "label {} outside [0, {classes})",
                s.label
            )));
        }
        seen[s.label] = true;
    }
    if let Some(missing) = seen.iter().position(|&s| !s) {
        return Err(Error::config(format!(
            "classifier training set has no samples of label {missing}"
        )));
    }
    let x_all = set_matrix(base_set)?;
    let labels = base_set.labels();
    let input_dim = x_all.ncols();

    let mut clf = FrozenClassifier::uniform(input_dim, classes);
    let mut init = rng::stream(seed, "classifier-init", 0);
    let n1 = Normal::new(0.0, (2.0 / input_dim as f64).sqrt()).expect("finite std");
    clf.w1.iter_mut().for_each(|w| *w = n1.sample(&mut init));
    let n2 = Normal::new(0.0, (1.0 / HIDDEN as f64).sqrt()).expect("finite std");
    clf.w2.iter_mut().for_each(|w| *w = n2.sample(&mut init));

    let mut opt = Adam::new(LEARNING_RATE, clf.param_count());
    for epoch in 0..EPOCHS {
        let mut order: Vec<usize> = (0..base_set.len()).collect();
        order.shuffle(&mut rng::stream(seed, "classifier-shuffle", epoch as u64));
        for chunk in order.chunks(BATCH) {
            let x = x_all.select(Axis(0), chunk);
            let h = clf.hidden(&x);
            let mut d_logits = FrozenClassifier::softmax(h.dot(&clf.w2.t()) + &clf.b2);
            for (mut row, &i) in d_logits.rows_mut().into_iter().zip(chunk) {
                row[labels[i]] -= 1.0;
            }
            d_logits /= chunk.len() as f64;
            let mut d_h = d_logits.dot(&clf.w2);
            d_h.zip_mut_with(&h, |d, &a| {
                if a <= 0.0 {
                    *d = 0.0
                }
            });
            let grads = FrozenClassifier {
                w1: d_h.t().dot(&x),
                b1: d_h.sum_axis(Axis(0)),
                w2: d_logits.t().dot(&h),
                b2: d_logits.sum_axis(Axis(0)),
            };
            opt.step(&mut clf, &grads);
        }
    }
    Ok(clf)
}

/// Mean probability the classifier assigns to each image's own label.
pub fn alignment_score(clf: &FrozenClassifier, set: &LabeledSet) -> Result<f64> {
    let x = set_matrix(set)?;
    if x.ncols() != clf.w1.ncols() {
        return Err(Error::Shape {
            expected: clf.w1.ncols(),
            actual: x.ncols(),
        });
    }
    let probs = clf.predict(&x);
    let mut total = 0.0;
    for (row, s) in probs.rows().into_iter().zip(&set.samples) {
        if s.label >= clf.num_classes() {
            return Err(Error::config(format!(
                "label {} outside classifier range",
                s.label
            )));
        }
        total += row[s.label];
    }
    Ok(total / set.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::glyphgen::{generate_set, Role, NUM_CLASSES};

    #[test]
    fn uniform_classifier_scores_one_over_c() {
        let clf = FrozenClassifier::uniform(256, NUM_CLASSES);
        let set = generate_set(Role::Base, 16, 0).unwrap();
        approx::assert_abs_diff_eq!(alignment_score(&clf, &set).unwrap(), 0.125, epsilon = 1e-12);
        let probs = clf.predict(&Array2::zeros((2, 256)));
        for row in probs.rows() {
            approx::assert_abs_diff_eq!(row.sum(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn trained_classifier_aligns_and_detects_shuffles() {
        let base = generate_set(Role::Base, 1024, 0).unwrap();
        let clf = train_frozen_classifier(&base, NUM_CLASSES, 0).unwrap();
        let own = alignment_score(&clf, &base).unwrap();
        assert!(own > 0.8, "alignment on training set {own}");

        let mut shuffled = base.clone();
        for (i, s) in shuffled.samples.iter_mut().enumerate() {
            s.label = (s.label + 1 + i % 3) % NUM_CLASSES;
        }
        assert!(alignment_score(&clf, &shuffled).unwrap() < own);
    }

    #[test]
    fn requires_label_coverage() {
        let target = generate_set(Role::Target, 64, 0).unwrap();
        assert!(train_frozen_classifier(&target, NUM_CLASSES, 0).is_err());
    }
}
