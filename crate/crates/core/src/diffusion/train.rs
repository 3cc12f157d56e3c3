//! MSE epsilon-prediction training with condition drop.
//!
//! Randomness comes from four named streams per epoch (`shuffle`, `timestep`,
//! `noise`, `drop`). The drop stream yields exactly one uniform per sample
//! whatever the drop probability, so changing `cond_drop_prob` never moves
//! the other streams.

use std::io::Write;
use std::path::Path;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::lora::LoraAdapter;
use super::model::{EpsModel, GradTarget, Grads};
use super::optim::{clip_global_norm, Adam, Params};
use super::schedule::NoiseSchedule;
use super::to_model_space;
use crate::glyphgen::LabeledSet;
use crate::rng::{self, StreamRng};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch: usize,
    pub cond_drop_prob: f64,
    pub clip_norm: f64,
    pub freeze_embed: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    /// Finetuning defaults.
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            epochs: 100,
            batch: 64,
            cond_drop_prob: 0.0,
            clip_norm: 1.0,
            freeze_embed: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Base-model defaults; the drop keeps the null embedding trained for the
    /// unconditional branch.
    pub fn pretrain() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            epochs: 200,
            cond_drop_prob: 0.1,
            ..TrainConfig::default()
        }
    }

    // Negated comparisons also reject NaN.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.cond_drop_prob) {
            return Err(Error::config(format!(
                "cond_drop_prob {} outside [0, 1]",
                self.cond_drop_prob
            )));
        }
        if self.epochs == 0 || self.batch == 0 {
            return Err(Error::config("epochs and batch must be at least 1"));
        }
        // Zero is accepted as a frozen-parameter dry run.
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config(format!(
                "learning rate {} must be finite and non-negative",
                self.learning_rate
            )));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::config("clip_norm must be positive"));
        }
        Ok(())
    }
}

/// Clean images (model space, one row per sample) with their labels,
/// timesteps and target noise.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainBatch {
    pub x0: Array2<f64>,
    pub labels: Vec<usize>,
    pub timesteps: Vec<usize>,
    pub eps: Array2<f64>,
}

impl TrainBatch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn noisy(&self, sched: &NoiseSchedule) -> Result<Array2<f64>> {
        let mut x_t = self.x0.clone();
        for ((mut row, eps), &t) in x_t
            .rows_mut()
            .into_iter()
            .zip(self.eps.rows())
            .zip(&self.timesteps)
        {
            if t >= sched.t_train() {
                return Err(Error::config(format!("timestep {t} outside schedule")));
            }
            let ab = sched.alpha_bar(t);
            let (signal, noise) = (ab.sqrt(), (1.0 - ab).sqrt());
            row.zip_mut_with(&eps, |x, &e| *x = signal * *x + noise * e);
        }
        Ok(x_t)
    }
}

/// Replaces each label by `null` with probability `p`, consuming one uniform
/// per sample.
pub fn apply_condition_drop(
    labels: &[usize],
    p: f64,
    null: usize,
    rng: &mut impl Rng,
) -> Vec<usize> {
    labels
        .iter()
        .map(|&l| {
            let u: f64 = rng.random();
            if u < p {
                null
            } else {
                l
            }
        })
        .collect()
}

fn check_batch(batch: &TrainBatch) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::config("empty training batch"));
    }
    let n = batch.len();
    if batch.x0.nrows() != n || batch.eps.nrows() != n || batch.timesteps.len() != n {
        return Err(Error::Shape {
            expected: n,
            actual: batch.x0.nrows(),
        });
    }
    Ok(())
}

/// Mean squared error for the given (already dropped) labels.
pub(crate) fn batch_loss(
    model: &EpsModel,
    adapter: Option<&LoraAdapter>,
    batch: &TrainBatch,
    labels: &[usize],
    sched: &NoiseSchedule,
) -> Result<f64> {
    check_batch(batch)?;
    let x_t = batch.noisy(sched)?;
    let pred = model.forward(adapter, x_t.view(), &batch.timesteps, labels)?;
    Ok((pred - &batch.eps).mapv(|d| d * d).mean().unwrap_or(0.0))
}

pub(crate) fn loss_and_grads_with_labels(
    model: &EpsModel,
    adapter: Option<&LoraAdapter>,
    batch: &TrainBatch,
    labels: &[usize],
    sched: &NoiseSchedule,
    freeze_embed: bool,
) -> Result<(f64, Grads)> {
    check_batch(batch)?;
    let x_t = batch.noisy(sched)?;
    let (pred, cache) = model.forward_cached(adapter, x_t.view(), &batch.timesteps, labels)?;
    let diff = pred - &batch.eps;
    let count = diff.len() as f64;
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / count;
    let d_out = diff * (2.0 / count);
    let target = match adapter {
        Some(_) => GradTarget::Adapter {
            embed: !freeze_embed,
        },
        None => GradTarget::Base,
    };
    let grads = model.backward(adapter, &cache, d_out, target)?;
    Ok((loss, grads))
}

/// Loss and gradients for one batch. Without an adapter the gradients cover
/// the base parameters; with one they cover the adapter (embedding delta
/// left at zero when `freeze_embed`).
pub fn loss_and_grads(
    model: &EpsModel,
    adapter: Option<&LoraAdapter>,
    batch: &TrainBatch,
    sched: &NoiseSchedule,
    drop_prob: f64,
    freeze_embed: bool,
    rng: &mut impl Rng,
) -> Result<(f64, Grads)> {
    check_batch(batch)?;
    let labels = apply_condition_drop(&batch.labels, drop_prob, model.config.null_label(), rng);
    loss_and_grads_with_labels(model, adapter, batch, &labels, sched, freeze_embed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    /// Mean batch loss per epoch, weighted by batch size.
    pub epoch_losses: Vec<f64>,
}

impl TrainOutcome {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("epoch,mean_loss\n");
        for (i, loss) in self.epoch_losses.iter().enumerate() {
            out.push_str(&format!("{},{}\n", i + 1, loss));
        }
        std::fs::File::create(path)
            .and_then(|mut f| f.write_all(out.as_bytes()))
            .map_err(|e| Error::io(path, e))
    }
}

/// Shared epoch loop; `step` performs one optimizer update and returns the
/// batch loss.
fn run_epochs(
    set: &LabeledSet,
    cfg: &TrainConfig,
    sched: &NoiseSchedule,
    mut step: impl FnMut(&TrainBatch, &mut StreamRng) -> Result<f64>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if set.is_empty() {
        return Err(Error::config("cannot train on an empty set"));
    }
    let dim = set.samples[0].pixels.len();
    let mut x0_all = Array2::zeros((set.len(), dim));
    for (mut row, sample) in x0_all.rows_mut().into_iter().zip(&set.samples) {
        if sample.pixels.len() != dim {
            return Err(Error::Shape {
                expected: dim,
                actual: sample.pixels.len(),
            });
        }
        row.assign(&ndarray::Array1::from(to_model_space(&sample.pixels)));
    }
    let t_train = sched.t_train();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let e = epoch as u64;
        let mut order: Vec<usize> = (0..set.len()).collect();
        order.shuffle(&mut rng::stream(cfg.seed, "shuffle", e));
        let mut t_rng = rng::stream(cfg.seed, "timestep", e);
        let mut noise_rng = rng::stream(cfg.seed, "noise", e);
        let mut drop_rng = rng::stream(cfg.seed, "drop", e);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch) {
            let batch = TrainBatch {
                x0: x0_all.select(Axis(0), chunk),
                labels: chunk.iter().map(|&i| set.samples[i].label).collect(),
                timesteps: chunk
                    .iter()
                    .map(|_| t_rng.random_range(0..t_train))
                    .collect(),
                eps: Array2::from_shape_simple_fn((chunk.len(), dim), || {
                    noise_rng.sample(StandardNormal)
                }),
            };
            let loss = step(&batch, &mut drop_rng)?;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, loss });
            }
            total += loss * chunk.len() as f64;
        }
        epoch_losses.push(total / set.len() as f64);
    }
    Ok(TrainOutcome { epoch_losses })
}

/// Trains every base parameter in place.
pub fn pretrain(
    model: &mut EpsModel,
    set: &LabeledSet,
    cfg: &TrainConfig,
    sched: &NoiseSchedule,
) -> Result<TrainOutcome> {
    model.check_schedule(sched)?;
    let mut opt = Adam::new(cfg.learning_rate, model.param_count());
    run_epochs(set, cfg, sched, |batch, drop_rng| {
        let (loss, grads) = loss_and_grads(
            &*model,
            None,
            batch,
            sched,
            cfg.cond_drop_prob,
            false,
            drop_rng,
        )?;
        let Grads::Base(mut grads) = grads else {
            unreachable!("base gradients without adapter")
        };
        clip_global_norm(&mut grads, cfg.clip_norm);
        opt.step(model, &grads);
        Ok(loss)
    })
}

/// Trains only the adapter; `model` is borrowed immutably.
pub fn finetune(
    model: &EpsModel,
    adapter: &mut LoraAdapter,
    set: &LabeledSet,
    cfg: &TrainConfig,
    sched: &NoiseSchedule,
) -> Result<TrainOutcome> {
    adapter.check_compatible(model)?;
    model.check_schedule(sched)?;
    let mut opt = Adam::new(cfg.learning_rate, adapter.param_count());
    run_epochs(set, cfg, sched, |batch, drop_rng| {
        let (loss, grads) = loss_and_grads(
            model,
            Some(&*adapter),
            batch,
            sched,
            cfg.cond_drop_prob,
            cfg.freeze_embed,
            drop_rng,
        )?;
        let Grads::Adapter(mut grads) = grads else {
            unreachable!("adapter gradients with adapter")
        };
        clip_global_norm(&mut grads, cfg.clip_norm);
        opt.step(adapter, &grads);
        Ok(loss)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::lora::attach_lora;
    use crate::diffusion::model::ModelConfig;
    use crate::glyphgen::{generate_set, Role};

    fn small_config() -> ModelConfig {
        ModelConfig {
            image_dim: 256,
            time_dim: 8,
            label_dim: 4,
            hidden: vec![32],
            num_classes: 8,
        }
    }

    fn random_batch(n: usize, seed: u64) -> TrainBatch {
        let mut rng = rng::stream(seed, "batch", 0);
        TrainBatch {
            x0: Array2::from_shape_simple_fn((n, 256), || rng.sample(StandardNormal)),
            labels: (0..n).map(|i| i % 8).collect(),
            timesteps: (0..n).map(|i| 100 + 37 * i).collect(),
            eps: Array2::from_shape_simple_fn((n, 256), || rng.sample(StandardNormal)),
        }
    }

    #[test]
    fn perfect_prediction_has_zero_loss() {
        let model = EpsModel::zeros(small_config()).unwrap();
        let mut batch = random_batch(4, 1);
        batch.eps.fill(0.0);
        let mut rng = rng::stream(0, "drop", 0);
        let (loss, grads) = loss_and_grads(
            &model,
            None,
            &batch,
            &NoiseSchedule::default(),
            0.0,
            false,
            &mut rng,
        )
        .unwrap();
        assert_eq!(loss, 0.0);
        assert!(grads.to_flat().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn empty_batch_is_rejected() {
        let model = EpsModel::zeros(small_config()).unwrap();
        let mut batch = random_batch(1, 1);
        batch.x0 = Array2::zeros((0, 256));
        batch.eps = Array2::zeros((0, 256));
        batch.labels.clear();
        batch.timesteps.clear();
        let mut rng = rng::stream(0, "drop", 0);
        assert!(loss_and_grads(
            &model,
            None,
            &batch,
            &NoiseSchedule::default(),
            0.0,
            false,
            &mut rng
        )
        .is_err());
    }

    #[test]
    fn zero_drop_matches_dropless_path() {
        let model = EpsModel::new(small_config(), 4).unwrap();
        let batch = random_batch(6, 2);
        let sched = NoiseSchedule::default();
        let mut rng = rng::stream(0, "drop", 0);
        let with_drop = loss_and_grads(&model, None, &batch, &sched, 0.0, false, &mut rng).unwrap();
        let without =
            loss_and_grads_with_labels(&model, None, &batch, &batch.labels, &sched, false).unwrap();
        assert_eq!(with_drop, without);
    }

    #[test]
    fn full_drop_routes_to_null_label() {
        let mut rng = rng::stream(0, "drop", 0);
        let labels = apply_condition_drop(&[0, 1, 2, 3], 1.0, 8, &mut rng);
        assert_eq!(labels, vec![8; 4]);
        let kept = apply_condition_drop(&[0, 1, 2, 3], 0.0, 8, &mut rng);
        assert_eq!(kept, vec![0, 1, 2, 3]);
    }

    #[test]
    fn frozen_embedding_gets_no_gradient() {
        let model = EpsModel::new(small_config(), 4).unwrap();
        let mut adapter = attach_lora(&model, 2, 8.0, 1).unwrap();
        adapter.layers[0].up.fill(0.01);
        let batch = random_batch(5, 3);
        let sched = NoiseSchedule::default();
        let labels = batch.labels.clone();
        let (_, g) =
            loss_and_grads_with_labels(&model, Some(&adapter), &batch, &labels, &sched, true)
                .unwrap();
        let Grads::Adapter(g) = g else { panic!() };
        assert!(g.embed_delta.iter().all(|&v| v == 0.0));
        let (_, g) =
            loss_and_grads_with_labels(&model, Some(&adapter), &batch, &labels, &sched, false)
                .unwrap();
        let Grads::Adapter(g) = g else { panic!() };
        assert!(g.embed_delta.iter().any(|&v| v != 0.0));
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let set = generate_set(Role::Base, 64, 0).unwrap();
        let sched = NoiseSchedule::default();
        let mut model = EpsModel::new(small_config(), 1).unwrap();
        let before = model.clone();
        let cfg = TrainConfig {
            learning_rate: 0.0,
            epochs: 1,
            ..TrainConfig::pretrain()
        };
        pretrain(&mut model, &set, &cfg, &sched).unwrap();
        assert_eq!(model, before);
    }

    #[test]
    fn training_is_deterministic_and_finetune_leaves_base() {
        let set = generate_set(Role::Target, 48, 0).unwrap();
        let sched = NoiseSchedule::default();
        let model = EpsModel::new(small_config(), 1).unwrap();
        let snapshot = model.clone();
        let cfg = TrainConfig {
            epochs: 3,
            batch: 16,
            learning_rate: 1e-3,
            cond_drop_prob: 0.2,
            ..TrainConfig::default()
        };
        let mut a = attach_lora(&model, 2, 8.0, 5).unwrap();
        let mut b = attach_lora(&model, 2, 8.0, 5).unwrap();
        let oa = finetune(&model, &mut a, &set, &cfg, &sched).unwrap();
        let ob = finetune(&model, &mut b, &set, &cfg, &sched).unwrap();
        assert_eq!(a, b);
        assert_eq!(oa, ob);
        assert_eq!(model, snapshot);
        assert!(a.layers.iter().any(|l| l.up.iter().any(|&v| v != 0.0)));
    }

    #[test]
    fn pretraining_reduces_loss() {
        let set = generate_set(Role::Base, 256, 0).unwrap();
        let sched = NoiseSchedule::default();
        let mut model = EpsModel::new(small_config(), 0).unwrap();
        let cfg = TrainConfig {
            epochs: 30,
            ..TrainConfig::pretrain()
        };
        let out = pretrain(&mut model, &set, &cfg, &sched).unwrap();
        assert_eq!(out.epoch_losses.len(), 30);
        let first = out.epoch_losses[0];
        let last = *out.epoch_losses.last().unwrap();
        assert!(last < 0.8 * first, "{first} -> {last}");
    }

    #[test]
    fn invalid_configs() {
        let mut cfg = TrainConfig {
            cond_drop_prob: 1.5,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
        cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
        cfg = TrainConfig {
            learning_rate: f64::NAN,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
