//! Per-iteration modifications of the finetuning set.

use rand::seq::index;

use super::config::Scenario;
use crate::glyphgen::{perturb_set, LabeledSet, Origin};
use crate::rng;
use crate::{Error, Result};

/// Indices replaced by originals at iteration `k`: `round(r * n)` distinct
/// positions drawn from a `(seed, k)` stream, in ascending order.
pub fn mixed_indices(n: usize, fraction: f64, seed: u64, k: usize) -> Vec<usize> {
    let count = ((fraction * n as f64).round() as usize).min(n);
    let mut rng = rng::stream(seed, "real-mix", k as u64);
    let mut picked = index::sample(&mut rng, n, count).into_vec();
    picked.sort_unstable();
    picked
}

/// Applies the scenario to `d_k` before it is used for finetuning.
pub fn apply_scenario(
    d_k: &LabeledSet,
    d0: &LabeledSet,
    scenario: &Scenario,
    seed: u64,
    k: usize,
) -> Result<LabeledSet> {
    let mut out = d_k.clone();
    if scenario.real_mix_fraction > 0.0 {
        if d_k.len() != d0.len() {
            return Err(Error::Shape {
                expected: d0.len(),
                actual: d_k.len(),
            });
        }
        let picked = mixed_indices(d0.len(), scenario.real_mix_fraction, seed, k);
        for &i in &picked {
            out.samples[i] = d0.samples[i].clone();
        }
        if !picked.is_empty() && k > 0 {
            out.origin = Origin::Mixed;
        }
    }
    if k == 0 && scenario.input_noise_sigma > 0.0 {
        out = perturb_set(
            &out,
            scenario.input_noise_sigma,
            rng::derive_seed(&[seed, rng::purpose_id("input-noise")]),
        )?;
    }
    Ok(out)
}
