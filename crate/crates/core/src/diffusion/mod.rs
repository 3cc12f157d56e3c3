//! Conditional epsilon-prediction diffusion: schedule, network, adapters and
//! training.

pub mod gradcheck;
pub mod lora;
pub mod model;
pub mod optim;
pub mod schedule;
pub mod train;

pub use gradcheck::grad_check;
pub use lora::{attach_lora, LoraAdapter};
pub use model::{EpsModel, ModelConfig};
pub use schedule::{build_schedule, q_sample, NoiseSchedule};
pub use train::{finetune, loss_and_grads, pretrain, TrainBatch, TrainConfig, TrainOutcome};

/// Maps pixel intensities in [0, 1] onto the model's [-1, 1] range.
pub fn to_model_space(pixels: &[f32]) -> Vec<f64> {
    pixels.iter().map(|&p| 2.0 * f64::from(p) - 1.0).collect()
}

/// Inverse of [`to_model_space`] without clamping.
pub fn from_model_space(value: f64) -> f64 {
    (value + 1.0) / 2.0
}
