//! Analytic-vs-central-difference gradient verification.

use ndarray::Array2;
use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;

use super::lora::LoraAdapter;
use super::model::{EpsModel, Grads};
use super::optim::Params;
use super::schedule::NoiseSchedule;
use super::train::{apply_condition_drop, batch_loss, loss_and_grads_with_labels, TrainBatch};
use crate::rng;
use crate::{Error, Result};

const BATCH: usize = 4;
const DROP_PROB: f64 = 0.3;
/// Base finite-difference step, scaled by `max(1, |theta|)`.
const STEP: f64 = 5e-3;
/// Gradients below this magnitude are compared absolutely.
const REL_FLOOR: f64 = 1e-8;

fn probe_batch(model: &EpsModel, t_train: usize, seed: u64) -> TrainBatch {
    let mut rng = rng::stream(seed, "gradcheck-batch", 0);
    let dim = model.config.image_dim;
    TrainBatch {
        x0: Array2::from_shape_simple_fn((BATCH, dim), || rng.sample(StandardNormal)),
        labels: (0..BATCH)
            .map(|_| rng.random_range(0..model.num_classes()))
            .collect(),
        timesteps: (0..BATCH).map(|_| rng.random_range(0..t_train)).collect(),
        eps: Array2::from_shape_simple_fn((BATCH, dim), || rng.sample(StandardNormal)),
    }
}

/// Max relative error between analytic gradients and fourth-order central
/// differences with step `5e-3 * max(1, |theta|)`, over `n_params` randomly chosen
/// trainable parameters (the adapter when given, else the base model).
pub fn grad_check(
    model: &EpsModel,
    adapter: Option<&LoraAdapter>,
    n_params: usize,
    seed: u64,
) -> Result<f64> {
    grad_check_with(model, adapter, n_params, seed, |_| {})
}

/// [`grad_check`] with a hook that may alter the analytic gradients first.
pub fn grad_check_with(
    model: &EpsModel,
    adapter: Option<&LoraAdapter>,
    n_params: usize,
    seed: u64,
    corrupt: impl FnOnce(&mut Grads),
) -> Result<f64> {
    if n_params == 0 {
        return Err(Error::config("grad_check needs at least one parameter"));
    }
    let sched = NoiseSchedule::default();
    let batch = probe_batch(model, sched.t_train(), seed);
    let labels = apply_condition_drop(
        &batch.labels,
        DROP_PROB,
        model.config.null_label(),
        &mut rng::stream(seed, "gradcheck-drop", 0),
    );
    let (_, mut grads) =
        loss_and_grads_with_labels(model, adapter, &batch, &labels, &sched, false)?;
    corrupt(&mut grads);
    let analytic = grads.to_flat();

    let total = analytic.len();
    let picks = index::sample(
        &mut rng::stream(seed, "gradcheck-pick", 0),
        total,
        n_params.min(total),
    );

    let mut worst = 0.0f64;
    match adapter {
        Some(adapter) => {
            let base = adapter.to_flat();
            let mut probe = adapter.clone();
            for i in picks.iter() {
                let numeric = central_difference(&base, i, |flat| {
                    probe.load_flat(flat);
                    batch_loss(model, Some(&probe), &batch, &labels, &sched)
                })?;
                worst = worst.max(relative_error(analytic[i], numeric));
            }
        }
        None => {
            let base = model.to_flat();
            let mut probe = model.clone();
            for i in picks.iter() {
                let numeric = central_difference(&base, i, |flat| {
                    probe.load_flat(flat);
                    batch_loss(&probe, None, &batch, &labels, &sched)
                })?;
                worst = worst.max(relative_error(analytic[i], numeric));
            }
        }
    }
    Ok(worst)
}

fn central_difference(
    base: &[f64],
    index: usize,
    mut loss: impl FnMut(&[f64]) -> Result<f64>,
) -> Result<f64> {
    let theta = base[index];
    let h = STEP * theta.abs().max(1.0);
    let mut flat = base.to_vec();
    let mut at = |offset: f64| {
        flat[index] = theta + offset;
        loss(&flat)
    };
    let (p1, m1, p2, m2) = (at(h)?, at(-h)?, at(2.0 * h)?, at(-2.0 * h)?);
    Ok((8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h))
}

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::lora::attach_lora;
    use crate::diffusion::model::ModelConfig;

    fn small() -> ModelConfig {
        ModelConfig {
            image_dim: 20,
            time_dim: 6,
            label_dim: 3,
            hidden: vec![12, 9],
            num_classes: 4,
        }
    }

    fn adapter_with_up(model: &EpsModel) -> LoraAdapter {
        let mut adapter = attach_lora(model, 3, 8.0, 2).unwrap();
        let mut rng = rng::stream(1, "up", 0);
        for layer in &mut adapter.layers {
            layer
                .up
                .iter_mut()
                .for_each(|v| *v = 0.1 * rng.sample::<f64, _>(StandardNormal));
        }
        adapter
            .embed_delta
            .iter_mut()
            .for_each(|v| *v = 0.1 * rng.sample::<f64, _>(StandardNormal));
        adapter
    }

    #[test]
    fn base_gradients_match_finite_differences() {
        let model = EpsModel::new(small(), 7).unwrap();
        let err = grad_check(&model, None, 150, 3).unwrap();
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn adapter_gradients_match_finite_differences() {
        let model = EpsModel::new(small(), 7).unwrap();
        let adapter = adapter_with_up(&model);
        let err = grad_check(&model, Some(&adapter), 150, 4).unwrap();
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn corrupted_gradient_is_detected() {
        let model = EpsModel::new(small(), 7).unwrap();
        let err = grad_check_with(&model, None, 200, 3, |g| {
            if let Grads::Base(g) = g {
                g.layers[1].weight.mapv_inplace(|v| 2.0 * v);
            }
        })
        .unwrap();
        assert!(err > 0.4, "mutation not detected: {err}");
    }

    #[test]
    fn zero_parameter_count_is_rejected() {
        let model = EpsModel::new(small(), 7).unwrap();
        assert!(grad_check(&model, None, 0, 0).is_err());
    }
}
