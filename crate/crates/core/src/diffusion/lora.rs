//! Low-rank adapters over every dense layer plus an additive label-embedding
//! delta. The effective weight of layer `l` is `W + (scaling / rank) * B A`.

use ndarray::Array2;
use rand_distr::{Distribution, Normal};

use super::model::EpsModel;
use super::optim::Params;
use crate::rng;
use crate::{Error, Result};

pub const DEFAULT_RANK: usize = 4;
pub const DEFAULT_WEIGHT_SCALING: f64 = 8.0;
const DOWN_INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq)]
pub struct LoraLayer {
    /// `rank x in`.
    pub down: Array2<f64>,
    /// `out x rank`.
    pub up: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoraAdapter {
    pub rank: usize,
    pub weight_scaling: f64,
    pub layers: Vec<LoraLayer>,
    /// Same shape as the label table, null row included.
    pub embed_delta: Array2<f64>,
}

impl LoraAdapter {
    pub fn scaling(&self) -> f64 {
        self.weight_scaling / self.rank as f64
    }

    pub fn zeros_like(&self) -> LoraAdapter {
        LoraAdapter {
            rank: self.rank,
            weight_scaling: self.weight_scaling,
            layers: self
                .layers
                .iter()
                .map(|l| LoraLayer {
                    down: Array2::zeros(l.down.raw_dim()),
                    up: Array2::zeros(l.up.raw_dim()),
                })
                .collect(),
            embed_delta: Array2::zeros(self.embed_delta.raw_dim()),
        }
    }

    pub fn check_compatible(&self, model: &EpsModel) -> Result<()> {
        let ok = self.layers.len() == model.layers.len()
            && self.embed_delta.raw_dim() == model.label_embed.raw_dim()
            && self.layers.iter().zip(&model.layers).all(|(a, l)| {
                a.down.shape() == [self.rank, l.in_dim()]
                    && a.up.shape() == [l.out_dim(), self.rank]
            });
        if ok {
            Ok(())
        } else {
            Err(Error::config("adapter shapes do not match the model"))
        }
    }

    /// `W + scaling * B A` for one layer.
    pub fn merged_weight(&self, model: &EpsModel, layer: usize) -> Array2<f64> {
        let lora = &self.layers[layer];
        let mut w = model.layers[layer].weight.clone();
        w.scaled_add(self.scaling(), &lora.up.dot(&lora.down));
        w
    }
}

/// Fresh adapter: Gaussian `down` (std 0.02), zero `up`, zero embedding delta.
pub fn attach_lora(
    model: &EpsModel,
    rank: usize,
    weight_scaling: f64,
    seed: u64,
) -> Result<LoraAdapter> {
    if rank == 0 {
        return Err(Error::config("adapter rank must be at least 1"));
    }
    let normal = Normal::new(0.0, DOWN_INIT_STD).expect("finite std");
    let layers = model
        .layers
        .iter()
        .enumerate()
        .map(|(i, layer)| {
            let (in_dim, out_dim) = (layer.in_dim(), layer.out_dim());
            if rank > in_dim.min(out_dim) {
                return Err(Error::config(format!(
                    "adapter rank {rank} exceeds layer {i} dims {out_dim}x{in_dim}"
                )));
            }
            let mut rng = rng::stream(seed, "lora-down", i as u64);
            Ok(LoraLayer {
                down: Array2::from_shape_fn((rank, in_dim), |_| normal.sample(&mut rng)),
                up: Array2::zeros((out_dim, rank)),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LoraAdapter {
        rank,
        weight_scaling,
        layers,
        embed_delta: Array2::zeros(model.label_embed.raw_dim()),
    })
}

impl Params for LoraAdapter {
    fn visit(&self, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        for (i, layer) in self.layers.iter().enumerate() {
            let d = layer.down.as_slice().expect("standard layout");
            f(&format!("lora.{i}.down"), layer.down.shape(), d);
            let u = layer.up.as_slice().expect("standard layout");
            f(&format!("lora.{i}.up"), layer.up.shape(), u);
        }
        let e = self.embed_delta.as_slice().expect("standard layout");
        f("embed_delta", self.embed_delta.shape(), e);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        for (i, layer) in self.layers.iter_mut().enumerate() {
            let d = layer.down.as_slice_mut().expect("standard layout");
            f(&format!("lora.{i}.down"), d);
            let u = layer.up.as_slice_mut().expect("standard layout");
            f(&format!("lora.{i}.up"), u);
        }
        let e = self.embed_delta.as_slice_mut().expect("standard layout");
        f("embed_delta", e);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::model::ModelConfig;
    use ndarray::Array2;
    use rand_distr::StandardNormal;

    fn model() -> EpsModel {
        EpsModel::new(ModelConfig::default(), 3).unwrap()
    }

    #[test]
    fn shapes_follow_layers() {
        let m = model();
        let a = attach_lora(&m, 4, 8.0, 1).unwrap();
        assert_eq!(a.layers[0].down.shape(), &[4, 304]);
        assert_eq!(a.layers[0].up.shape(), &[256, 4]);
        assert_eq!(a.scaling(), 2.0);
        assert!(a.layers.iter().all(|l| l.up.iter().all(|&v| v == 0.0)));
        assert!(a.embed_delta.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rank_limits() {
        let m = model();
        assert!(attach_lora(&m, 0, 8.0, 1).is_err());
        assert!(attach_lora(&m, 257, 8.0, 1).is_err());
        assert!(attach_lora(&m, 256, 8.0, 1).is_ok());
    }

    #[test]
    fn fresh_adapter_is_identity() {
        let m = model();
        let a = attach_lora(&m, 4, 8.0, 9).unwrap();
        let mut rng = rng::stream(0, "t", 0);
        let x = Array2::from_shape_fn((16, 256), |_| StandardNormal.sample(&mut rng));
        let t: Vec<usize> = (0..16).map(|i| i * 60).collect();
        let labels: Vec<usize> = (0..16).map(|i| i % 9).collect();
        let base = m.forward(None, x.view(), &t, &labels).unwrap();
        let adapted = m.forward(Some(&a), x.view(), &t, &labels).unwrap();
        assert_eq!(base, adapted);
    }

    #[test]
    fn merged_weight_matches_definition() {
        let m = model();
        let mut a = attach_lora(&m, 4, 8.0, 9).unwrap();
        let mut rng = rng::stream(0, "up", 0);
        a.layers[1]
            .up
            .iter_mut()
            .for_each(|v| *v = StandardNormal.sample(&mut rng));
        let merged = a.merged_weight(&m, 1);
        let (w, up, down) = (&m.layers[1].weight, &a.layers[1].up, &a.layers[1].down);
        for (i, j) in [(0, 0), (17, 200), (255, 255)] {
            let delta: f64 = (0..4).map(|r| up[[i, r]] * down[[r, j]]).sum();
            approx::assert_relative_eq!(
                merged[[i, j]],
                w[[i, j]] + 2.0 * delta,
                max_relative = 1e-12
            );
        }

        // The factored forward pass agrees with a merged dense layer.
        let x = Array2::from_shape_fn((5, 304), |_| StandardNormal.sample(&mut rng));
        let factored = x.dot(&m.layers[0].weight.t())
            + 2.0 * x.dot(&a.layers[0].down.t()).dot(&a.layers[0].up.t());
        let merged = x.dot(&a.merged_weight(&m, 0).t());
        for (p, q) in factored.iter().zip(merged.iter()) {
            approx::assert_abs_diff_eq!(p, q, epsilon = 1e-10);
        }
    }
}
