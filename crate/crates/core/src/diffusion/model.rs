//! Fully connected epsilon-prediction network with manual backpropagation.
//!
//! Input row layout: `[noisy image | sinusoidal time embedding | label embedding]`.
//! The label table has one extra row (index `num_classes`) holding the null
//! embedding used for unconditional predictions.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::lora::LoraAdapter;
use super::optim::Params;
use super::schedule::NoiseSchedule;
use crate::rng;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub image_dim: usize,
    pub time_dim: usize,
    pub label_dim: usize,
    pub hidden: Vec<usize>,
    pub num_classes: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            image_dim: 256,
            time_dim: 32,
            label_dim: 16,
            hidden: vec![256, 256],
            num_classes: crate::glyphgen::NUM_CLASSES,
        }
    }
}

impl ModelConfig {
    pub fn input_dim(&self) -> usize {
        self.image_dim + self.time_dim + self.label_dim
    }

    pub fn null_label(&self) -> usize {
        self.num_classes
    }

    /// `(in, out)` per dense layer.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut widths = vec![self.input_dim()];
        widths.extend(&self.hidden);
        widths.push(self.image_dim);
        widths.windows(2).map(|w| (w[0], w[1])).collect()
    }

    fn label_offset(&self) -> usize {
        self.image_dim + self.time_dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_dim == 0 || self.label_dim == 0 || self.num_classes == 0 {
            return Err(Error::config("model dimensions must be positive"));
        }
        if !self.time_dim.is_multiple_of(2) {
            return Err(Error::config("time embedding dimension must be even"));
        }
        if self.hidden.contains(&0) {
            return Err(Error::config("hidden widths must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `out x in`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Dense {
            weight: Array2::zeros((out_dim, in_dim)),
            bias: Array1::zeros(out_dim),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpsModel {
    pub config: ModelConfig,
    pub layers: Vec<Dense>,
    /// `(num_classes + 1) x label_dim`.
    pub label_embed: Array2<f64>,
    /// Fixed per-timestep gain of the `x_t` skip added to the network output,
    /// `sqrt(1 - alpha_bar_t)` rounded to `f32`. Not trainable. Empty means no
    /// skip.
    pub output_skip: Vec<f64>,
}

/// Skip gains for `sched`.
pub fn output_skip_for(sched: &NoiseSchedule) -> Vec<f64> {
    sched
        .alpha_bars
        .iter()
        .map(|&ab| f64::from((1.0 - ab).sqrt() as f32))
        .collect()
}

/// `[sin(t w_0) .. sin(t w_{k-1}), cos(t w_0) .. cos(t w_{k-1})]` with
/// `w_i = 10000^(-i/k)`, `k = dim / 2`.
pub fn time_embedding(t: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let freq = (-(10_000f64).ln() * i as f64 / half as f64).exp();
        let arg = t as f64 * freq;
        out[i] = arg.sin();
        out[half + i] = arg.cos();
    }
    out
}

fn silu(z: f64) -> f64 {
    z / (1.0 + (-z).exp())
}

fn silu_grad(z: f64) -> f64 {
    let s = 1.0 / (1.0 + (-z).exp());
    s * (1.0 + z * (1.0 - s))
}

/// Activations saved by a forward pass for the backward pass.
pub(crate) struct ForwardCache {
    /// Input to each layer.
    inputs: Vec<Array2<f64>>,
    /// Pre-activations of the hidden layers.
    preacts: Vec<Array2<f64>>,
    /// `x A^T` per layer when an adapter is present.
    lora_hidden: Vec<Array2<f64>>,
    labels: Vec<usize>,
}

/// Which parameters a backward pass differentiates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradTarget {
    Base,
    Adapter { embed: bool },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Grads {
    Base(EpsModel),
    Adapter(LoraAdapter),
}

impl Grads {
    pub fn to_flat(&self) -> Vec<f64> {
        match self {
            Grads::Base(m) => m.to_flat(),
            Grads::Adapter(a) => a.to_flat(),
        }
    }
}

impl EpsModel {
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let layers = config
            .layer_dims()
            .into_iter()
            .map(|(i, o)| Dense::zeros(i, o))
            .collect();
        let label_embed = Array2::zeros((config.num_classes + 1, config.label_dim));
        Ok(EpsModel {
            config,
            layers,
            label_embed,
            output_skip: Vec::new(),
        })
    }

    /// He-style Gaussian init for hidden layers, `1/sqrt(in)` for the output
    /// layer, standard normal label embeddings, zero biases, and the output
    /// skip of the default schedule.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut model = EpsModel::zeros(config)?;
        model.output_skip = output_skip_for(&NoiseSchedule::default());
        let last = model.layers.len() - 1;
        for (i, layer) in model.layers.iter_mut().enumerate() {
            let gain = if i == last { 1.0 } else { 2.0 };
            let std = (gain / layer.in_dim() as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("finite std");
            let mut rng = rng::stream(seed, "init-layer", i as u64);
            layer
                .weight
                .iter_mut()
                .for_each(|w| *w = normal.sample(&mut rng));
        }
        let mut rng = rng::stream(seed, "init-embed", 0);
        let normal = Normal::new(0.0, 1.0).expect("finite std");
        model
            .label_embed
            .iter_mut()
            .for_each(|w| *w = normal.sample(&mut rng));
        Ok(model)
    }

    /// Fails when the skip gains were built for a different schedule.
    pub fn check_schedule(&self, sched: &NoiseSchedule) -> Result<()> {
        if self.output_skip.is_empty() || self.output_skip == output_skip_for(sched) {
            Ok(())
        } else {
            Err(Error::config(
                "model skip gains do not match the noise schedule",
            ))
        }
    }

    pub fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    fn check_inputs(&self, x_t: &ArrayView2<f64>, t: &[usize], labels: &[usize]) -> Result<()> {
        if x_t.ncols() != self.config.image_dim {
            return Err(Error::Shape {
                expected: self.config.image_dim,
                actual: x_t.ncols(),
            });
        }
        if t.len() != x_t.nrows() || labels.len() != x_t.nrows() {
            return Err(Error::Shape {
                expected: x_t.nrows(),
                actual: t.len().min(labels.len()),
            });
        }
        if !self.output_skip.is_empty() {
            if let Some(&bad) = t.iter().find(|&&ti| ti >= self.output_skip.len()) {
                return Err(Error::config(format!(
                    "timestep {bad} outside the model's {} skip gains",
                    self.output_skip.len()
                )));
            }
        }
        if let Some(&bad) = labels.iter().find(|&&l| l > self.config.num_classes) {
            return Err(Error::config(format!(
                "label {bad} outside [0, {}]",
                self.config.num_classes
            )));
        }
        Ok(())
    }

    fn build_input(
        &self,
        adapter: Option<&LoraAdapter>,
        x_t: &ArrayView2<f64>,
        t: &[usize],
        labels: &[usize],
    ) -> Array2<f64> {
        let cfg = &self.config;
        let (n, off) = (x_t.nrows(), cfg.label_offset());
        let mut input = Array2::zeros((n, cfg.input_dim()));
        input.slice_mut(s![.., ..cfg.image_dim]).assign(x_t);
        for (i, (&ti, &label)) in t.iter().zip(labels).enumerate() {
            let temb = time_embedding(ti, cfg.time_dim);
            let mut row = input.row_mut(i);
            for (j, v) in temb.into_iter().enumerate() {
                row[cfg.image_dim + j] = v;
            }
            let embed = self.label_embed.row(label);
            for j in 0..cfg.label_dim {
                row[off + j] = match adapter {
                    Some(a) => embed[j] + a.embed_delta[[label, j]],
                    None => embed[j],
                };
            }
        }
        input
    }

    pub(crate) fn forward_cached(
        &self,
        adapter: Option<&LoraAdapter>,
        x_t: ArrayView2<f64>,
        t: &[usize],
        labels: &[usize],
    ) -> Result<(Array2<f64>, ForwardCache)> {
        self.check_inputs(&x_t, t, labels)?;
        if let Some(a) = adapter {
            a.check_compatible(self)?;
        }
        let mut act = self.build_input(adapter, &x_t, t, labels);
        let mut cache = ForwardCache {
            inputs: Vec::with_capacity(self.layers.len()),
            preacts: Vec::with_capacity(self.layers.len()),
            lora_hidden: Vec::new(),
            labels: labels.to_vec(),
        };
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = act.dot(&layer.weight.t()) + &layer.bias;
            if let Some(a) = adapter {
                let lora = &a.layers[i];
                let hidden = act.dot(&lora.down.t());
                z.scaled_add(a.scaling(), &hidden.dot(&lora.up.t()));
                cache.lora_hidden.push(hidden);
            }
            cache.inputs.push(act);
            if i == last {
                if !self.output_skip.is_empty() {
                    for ((mut row, x), &ti) in z.rows_mut().into_iter().zip(x_t.rows()).zip(t) {
                        row.scaled_add(self.output_skip[ti], &x);
                    }
                }
                return Ok((z, cache));
            }
            act = z.mapv(silu);
            cache.preacts.push(z);
        }
        unreachable!("model has at least one layer")
    }

    /// Batched epsilon prediction; rows are independent samples.
    pub fn forward(
        &self,
        adapter: Option<&LoraAdapter>,
        x_t: ArrayView2<f64>,
        t: &[usize],
        labels: &[usize],
    ) -> Result<Array2<f64>> {
        self.forward_cached(adapter, x_t, t, labels)
            .map(|(out, _)| out)
    }

    pub fn predict_eps(
        &self,
        adapter: Option<&LoraAdapter>,
        x_t: &[f64],
        t: usize,
        label: usize,
    ) -> Result<Vec<f64>> {
        let view = ArrayView2::from_shape((1, x_t.len()), x_t).map_err(|_| Error::Shape {
            expected: self.config.image_dim,
            actual: x_t.len(),
        })?;
        let out = self.forward(adapter, view, &[t], &[label])?;
        Ok(out.into_raw_vec_and_offset().0)
    }

    /// Backpropagates `d_out` (gradient of the loss w.r.t. the network output)
    /// through a cached forward pass.
    pub(crate) fn backward(
        &self,
        adapter: Option<&LoraAdapter>,
        cache: &ForwardCache,
        d_out: Array2<f64>,
        target: GradTarget,
    ) -> Result<Grads> {
        let cfg = &self.config;
        let (off, end) = (cfg.label_offset(), cfg.input_dim());
        let mut grads = match (target, adapter) {
            (GradTarget::Base, _) => Grads::Base(EpsModel::zeros(cfg.clone())?),
            (GradTarget::Adapter { .. }, Some(a)) => Grads::Adapter(a.zeros_like()),
            (GradTarget::Adapter { .. }, None) => {
                return Err(Error::config(
                    "adapter gradients requested without an adapter",
                ))
            }
        };
        let want_embed = match target {
            GradTarget::Base => true,
            GradTarget::Adapter { embed } => embed,
        };

        let mut dz = d_out;
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let x = &cache.inputs[l];
            // dz . B, shared by the adapter grads and the input grad.
            let dz_up = adapter.map(|a| dz.dot(&a.layers[l].up));
            match &mut grads {
                Grads::Base(g) => {
                    g.layers[l].weight = dz.t().dot(x);
                    g.layers[l].bias = dz.sum_axis(Axis(0));
                }
                Grads::Adapter(g) => {
                    let a = adapter.expect("checked above");
                    let sigma = a.scaling();
                    let du = dz_up.as_ref().expect("adapter present");
                    g.layers[l].up = dz.t().dot(&cache.lora_hidden[l]) * sigma;
                    g.layers[l].down = du.t().dot(x) * sigma;
                }
            }
            if l > 0 {
                let mut dx = dz.dot(&layer.weight);
                if let (Some(a), Some(du)) = (adapter, &dz_up) {
                    dx.scaled_add(a.scaling(), &du.dot(&a.layers[l].down));
                }
                let pre = &cache.preacts[l - 1];
                dx.zip_mut_with(pre, |d, &z| *d *= silu_grad(z));
                dz = dx;
            } else if want_embed {
                let mut dx = dz.dot(&layer.weight.slice(s![.., off..end]));
                if let (Some(a), Some(du)) = (adapter, &dz_up) {
                    dx.scaled_add(
                        a.scaling(),
                        &du.dot(&a.layers[l].down.slice(s![.., off..end])),
                    );
                }
                let table = match &mut grads {
                    Grads::Base(g) => &mut g.label_embed,
                    Grads::Adapter(g) => &mut g.embed_delta,
                };
                for (row, &label) in dx.rows().into_iter().zip(&cache.labels) {
                    let mut dst = table.row_mut(label);
                    dst += &row;
                }
            }
        }
        Ok(grads)
    }
}

pub fn predict_eps(
    model: &EpsModel,
    adapter: Option<&LoraAdapter>,
    x_t: &[f64],
    t: usize,
    label: usize,
) -> Result<Vec<f64>> {
    model.predict_eps(adapter, x_t, t, label)
}

impl Params for EpsModel {
    fn visit(&self, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        for (i, layer) in self.layers.iter().enumerate() {
            let w = layer.weight.as_slice().expect("standard layout");
            f(&format!("layers.{i}.weight"), layer.weight.shape(), w);
            let b = layer.bias.as_slice().expect("standard layout");
            f(&format!("layers.{i}.bias"), layer.bias.shape(), b);
        }
        let e = self.label_embed.as_slice().expect("standard layout");
        f("label_embed", self.label_embed.shape(), e);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        for (i, layer) in self.layers.iter_mut().enumerate() {
            let w = layer.weight.as_slice_mut().expect("standard layout");
            f(&format!("layers.{i}.weight"), w);
            let b = layer.bias.as_slice_mut().expect("standard layout");
            f(&format!("layers.{i}.bias"), b);
        }
        let e = self.label_embed.as_slice_mut().expect("standard layout");
        f("label_embed", e);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand_distr::StandardNormal;

    pub(crate) fn small_config() -> ModelConfig {
        ModelConfig {
            image_dim: 12,
            time_dim: 4,
            label_dim: 3,
            hidden: vec![10, 8],
            num_classes: 3,
        }
    }

    fn random_input(n: usize, dim: usize, seed: u64) -> Array2<f64> {
        let mut rng = rng::stream(seed, "test-input", 0);
        Array2::from_shape_fn((n, dim), |_| StandardNormal.sample(&mut rng))
    }

    #[test]
    fn zero_network_predicts_zero() {
        let model = EpsModel::zeros(ModelConfig::default()).unwrap();
        let x = vec![0.3; 256];
        let out = model.predict_eps(None, &x, 500, 2).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_is_deterministic() {
        let model = EpsModel::new(ModelConfig::default(), 5).unwrap();
        let x = random_input(3, 256, 1);
        let a = model
            .forward(None, x.view(), &[1, 400, 999], &[0, 3, 8])
            .unwrap();
        let b = model
            .forward(None, x.view(), &[1, 400, 999], &[0, 3, 8])
            .unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn batch_rows_match_single_predictions() {
        let model = EpsModel::new(ModelConfig::default(), 5).unwrap();
        let x = random_input(37, 256, 2);
        let t: Vec<usize> = (0..37).map(|i| i * 27).collect();
        let labels: Vec<usize> = (0..37).map(|i| i % 9).collect();
        let batch = model.forward(None, x.view(), &t, &labels).unwrap();
        for i in [0, 7, 36] {
            let row = x.row(i).to_vec();
            let single = model.predict_eps(None, &row, t[i], labels[i]).unwrap();
            assert_eq!(batch.row(i).to_vec(), single, "row {i}");
        }
    }

    #[test]
    fn label_range_is_checked() {
        let model = EpsModel::new(small_config(), 1).unwrap();
        let x = vec![0.0; 12];
        assert!(model.predict_eps(None, &x, 3, 3).is_ok());
        assert!(model.predict_eps(None, &x, 3, 4).is_err());
        assert!(model.predict_eps(None, &x[..5], 3, 0).is_err());
    }

    #[test]
    fn label_table_has_null_row() {
        let model = EpsModel::new(ModelConfig::default(), 0).unwrap();
        assert_eq!(model.label_embed.nrows(), 9);
        assert_eq!(model.layers[0].weight.shape(), &[256, 304]);
        assert_eq!(model.layers[2].weight.shape(), &[256, 256]);
    }

    #[test]
    fn time_embedding_layout() {
        let e = time_embedding(0, 8);
        assert_eq!(e, vec![0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0]);
        let e = time_embedding(3, 8);
        approx::assert_abs_diff_eq!(e[0], 3f64.sin(), epsilon = 1e-15);
    }
}
