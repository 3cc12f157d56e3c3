//! Classifier-free-guided ancestral sampling.
//!
//! Sampling walks `t_sample` uniformly strided timesteps of the training
//! schedule from the noisiest one down to zero. Step `0` is the first (noisiest)
//! step, so scheduled guidance decays as sampling progresses.

use std::io::Write;
use std::path::Path;

use ndarray::{Array2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diffusion::{from_model_space, EpsModel, LoraAdapter, NoiseSchedule};
use crate::glyphgen::{ImageSample, LabeledSet, Origin};
use crate::rng::{self, StreamRng};
use crate::{Error, Result};

/// Images sampled together in one batched reverse pass.
const SAMPLE_CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuidanceMode {
    Fixed,
    ExpSchedule,
    LinearSchedule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GuidancePolicy {
    pub mode: GuidanceMode,
    pub s0: f64,
    pub alpha: f64,
    pub t_sample: usize,
}

impl Default for GuidancePolicy {
    fn default() -> Self {
        GuidancePolicy {
            mode: GuidanceMode::Fixed,
            s0: 7.5,
            alpha: 2.0,
            t_sample: 30,
        }
    }
}

impl GuidancePolicy {
    pub fn fixed(s0: f64) -> Self {
        GuidancePolicy {
            mode: GuidanceMode::Fixed,
            s0,
            ..Default::default()
        }
    }

    pub fn exp_schedule(s0: f64, alpha: f64) -> Self {
        GuidancePolicy {
            mode: GuidanceMode::ExpSchedule,
            s0,
            alpha,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.s0 >= 0.0 && self.s0.is_finite()) {
            return Err(Error::config(format!("s0 {} must be >= 0", self.s0)));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::config(format!("alpha {} must be >= 0", self.alpha)));
        }
        if self.t_sample == 0 {
            return Err(Error::config("t_sample must be at least 1"));
        }
        Ok(())
    }
}

/// Guidance scale at sampling step `step` (0 = noisiest, `t_sample` = end).
/// The linear schedule runs from `s0` to `s0 * exp(-alpha)`, matching the
/// exponential schedule at both ends.
pub fn eval_scale(policy: &GuidancePolicy, step: usize) -> Result<f64> {
    policy.validate()?;
    if step > policy.t_sample {
        return Err(Error::config(format!(
            "step {step} outside [0, {}]",
            policy.t_sample
        )));
    }
    let progress = step as f64 / policy.t_sample as f64;
    Ok(match policy.mode {
        GuidanceMode::Fixed => policy.s0,
        GuidanceMode::ExpSchedule => policy.s0 * (-policy.alpha * progress).exp(),
        GuidanceMode::LinearSchedule => {
            let end = policy.s0 * (-policy.alpha).exp();
            policy.s0 + (end - policy.s0) * progress
        }
    })
}

/// `eps_uncond + s * (eps_cond - eps_uncond)`, evaluated as
/// `(1 - s) * eps_uncond + s * eps_cond` so that `s = 1` and `s = 0` return
/// the corresponding branch exactly.
pub fn guided_eps(eps_cond: &[f64], eps_uncond: &[f64], s: f64) -> Result<Vec<f64>> {
    if eps_cond.len() != eps_uncond.len() {
        return Err(Error::Shape {
            expected: eps_cond.len(),
            actual: eps_uncond.len(),
        });
    }
    Ok(eps_cond
        .iter()
        .zip(eps_uncond)
        .map(|(&c, &u)| combine(c, u, s))
        .collect())
}

#[inline]
fn combine(c: f64, u: f64, s: f64) -> f64 {
    (1.0 - s) * u + s * c
}

/// Per-step instrumentation of a reverse pass.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SampleTrace {
    /// Mean over the batch of `||eps_cond - eps_uncond||_2`, before scaling.
    pub diff_norms: Vec<f64>,
    /// Guidance scale applied at each step.
    pub scales: Vec<f64>,
    /// Flattened batch state after each step, in pixel units and unclamped.
    /// Only filled when snapshots are requested.
    #[serde(skip)]
    pub snapshots: Vec<Vec<f64>>,
}

impl SampleTrace {
    pub fn len(&self) -> usize {
        self.diff_norms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diff_norms.is_empty()
    }

    pub fn mean_diff_norm(&self) -> f64 {
        if self.diff_norms.is_empty() {
            0.0
        } else {
            self.diff_norms.iter().sum::<f64>() / self.diff_norms.len() as f64
        }
    }

    /// Pre-clamp final state if snapshots were recorded.
    pub fn final_state(&self) -> Option<&[f64]> {
        self.snapshots.last().map(|s| s.as_slice())
    }

    pub fn write_csv(&self, iteration: usize, path: &Path) -> Result<()> {
        let mut out = String::from("iteration,step,applied_scale,mean_diff_norm\n");
        for (step, (s, d)) in self.scales.iter().zip(&self.diff_norms).enumerate() {
            out.push_str(&format!("{iteration},{step},{s},{d}\n"));
        }
        std::fs::File::create(path)
            .and_then(|mut f| f.write_all(out.as_bytes()))
            .map_err(|e| Error::io(path, e))
    }
}

/// Which predictions drive the reverse update.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    /// Guided combination of both branches per the policy.
    Guided,
    /// Conditional prediction only.
    Conditional,
    /// Null-label prediction only.
    Unconditional,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SamplerOptions {
    pub record_snapshots: bool,
}

/// Descending timesteps, uniformly strided from `t_train - 1` to `0`.
pub fn sampling_timesteps(t_train: usize, t_sample: usize) -> Vec<usize> {
    if t_sample <= 1 {
        return vec![t_train - 1];
    }
    (0..t_sample)
        .map(|j| {
            let frac = (t_sample - 1 - j) as f64 / (t_sample - 1) as f64;
            (frac * (t_train - 1) as f64).round() as usize
        })
        .collect()
}

struct ReverseOutput {
    /// Final model-space state, one row per image.
    state: Array2<f64>,
    /// Per-image diff norms, `[step][image]`.
    diff_norms: Vec<Vec<f64>>,
    scales: Vec<f64>,
    snapshots: Vec<Vec<f64>>,
}

#[allow(clippy::too_many_arguments)]
fn reverse_diffusion(
    model: &EpsModel,
    adapter: Option<&LoraAdapter>,
    labels: &[usize],
    rngs: &mut [StreamRng],
    policy: &GuidancePolicy,
    sched: &NoiseSchedule,
    branch: Branch,
    options: SamplerOptions,
) -> Result<ReverseOutput> {
    policy.validate()?;
    model.check_schedule(sched)?;
    let (n, dim) = (labels.len(), model.config.image_dim);
    let null = vec![model.config.null_label(); n];
    let mut x = Array2::zeros((n, dim));
    for (mut row, rng) in x.rows_mut().into_iter().zip(rngs.iter_mut()) {
        row.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
    }
    let steps = sampling_timesteps(sched.t_train(), policy.t_sample);
    let mut out = ReverseOutput {
        state: Array2::zeros((0, dim)),
        diff_norms: Vec::with_capacity(steps.len()),
        scales: Vec::with_capacity(steps.len()),
        snapshots: Vec::new(),
    };
    for (step, &t) in steps.iter().enumerate() {
        let ts = vec![t; n];
        let scale = eval_scale(policy, step)?;
        let (eps, norms) = match branch {
            Branch::Conditional => (model.forward(adapter, x.view(), &ts, labels)?, vec![0.0; n]),
            Branch::Unconditional => (model.forward(adapter, x.view(), &ts, &null)?, vec![0.0; n]),
            Branch::Guided => {
                let cond = model.forward(adapter, x.view(), &ts, labels)?;
                let uncond = model.forward(adapter, x.view(), &ts, &null)?;
                let norms = cond
                    .rows()
                    .into_iter()
                    .zip(uncond.rows())
                    .map(|(c, u)| {
                        c.iter()
                            .zip(u)
                            .map(|(a, b)| (a - b).powi(2))
                            .sum::<f64>()
                            .sqrt()
                    })
                    .collect();
                let mut eps = uncond;
                eps.zip_mut_with(&cond, |u, &c| *u = combine(c, *u, scale));
                (eps, norms)
            }
        };

        let ab = sched.alpha_bar(t);
        let ab_prev = steps.get(step + 1).map_or(1.0, |&tp| sched.alpha_bar(tp));
        let sigma = ((1.0 - ab_prev) / (1.0 - ab) * (1.0 - ab / ab_prev))
            .max(0.0)
            .sqrt();
        let dir = (1.0 - ab_prev - sigma * sigma).max(0.0).sqrt();
        let (sqrt_ab, sqrt_1m_ab, sqrt_ab_prev) = (ab.sqrt(), (1.0 - ab).sqrt(), ab_prev.sqrt());
        for ((mut row, e), rng) in x
            .rows_mut()
            .into_iter()
            .zip(eps.rows())
            .zip(rngs.iter_mut())
        {
            for (v, &e) in row.iter_mut().zip(e.iter()) {
                // Clip the clean estimate to the data range and re-derive the
                // noise consistent with it.
                let x0 = ((*v - sqrt_1m_ab * e) / sqrt_ab).clamp(-1.0, 1.0);
                let e = (*v - sqrt_ab * x0) / sqrt_1m_ab;
                let z: f64 = rng.sample(StandardNormal);
                *v = sqrt_ab_prev * x0 + dir * e + sigma * z;
            }
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { step });
        }
        if options.record_snapshots {
            out.snapshots
                .push(x.iter().map(|&v| from_model_space(v)).collect());
        }
        out.diff_norms.push(norms);
        out.scales.push(scale);
    }
    out.state = x;
    Ok(out)
}

fn decode(state: &Array2<f64>, labels: &[usize], size: usize) -> Vec<ImageSample> {
    state
        .axis_iter(Axis(0))
        .zip(labels)
        .map(|(row, &label)| ImageSample {
            pixels: row
                .iter()
                .map(|&v| from_model_space(v).clamp(0.0, 1.0) as f32)
                .collect(),
            size,
            label,
        })
        .collect()
}

fn image_side(model: &EpsModel) -> usize {
    (model.config.image_dim as f64).sqrt().round() as usize
}

fn check_label(model: &EpsModel, label: usize) -> Result<()> {
    if label >= model.num_classes() {
        return Err(Error::config(format!(
            "prompt label {label} outside [0, {})",
            model.num_classes()
        )));
    }
    Ok(())
}

/// Samples one image. The RNG stream is determined by `seed` alone.
pub fn sample_image(
    model: &EpsModel,
    adapter: Option<&LoraAdapter>,
    label: usize,
    policy: &GuidancePolicy,
    sched: &NoiseSchedule,
    seed: u64,
) -> Result<(ImageSample, SampleTrace)> {
    sample_image_with(
        model,
        adapter,
        label,
        policy,
        sched,
        seed,
        Branch::Guided,
        SamplerOptions::default(),
    )
}

/// [`sample_image`] with an explicit branch selection and options.
#[allow(clippy::too_many_arguments)]
pub fn sample_image_with(
    model: &EpsModel,
    adapter: Option<&LoraAdapter>,
    label: usize,
    policy: &GuidancePolicy,
    sched: &NoiseSchedule,
    seed: u64,
    branch: Branch,
    options: SamplerOptions,
) -> Result<(ImageSample, SampleTrace)> {
    check_label(model, label)?;
    let mut rngs = vec![rng::stream(seed, "sample", 0)];
    let out = reverse_diffusion(
        model,
        adapter,
        &[label],
        &mut rngs,
        policy,
        sched,
        branch,
        options,
    )?;
    let image = decode(&out.state, &[label], image_side(model)).remove(0);
    let trace = SampleTrace {
        diff_norms: out.diff_norms.iter().map(|d| d[0]).collect(),
        scales: out.scales,
        snapshots: out.snapshots,
    };
    Ok((image, trace))
}

/// Seed of replica `replica` of prompt `prompt_index`.
pub fn image_seed(seed: u64, iteration: usize, prompt_index: usize, replica: usize) -> u64 {
    rng::derive_seed(&[seed, iteration as u64, prompt_index as u64, replica as u64])
}

/// Generates `images_per_prompt` images for every prompt. Output is ordered
/// replica-major: the first `prompts.len()` images are replica 0 in prompt
/// order, then replica 1, and so on. The returned trace averages over all
/// images.
#[allow(clippy::too_many_arguments)]
pub fn generate_set(
    model: &EpsModel,
    adapter: Option<&LoraAdapter>,
    prompts: &[usize],
    policy: &GuidancePolicy,
    sched: &NoiseSchedule,
    seed: u64,
    iteration: usize,
    images_per_prompt: usize,
    options: SamplerOptions,
) -> Result<(LabeledSet, SampleTrace)> {
    if prompts.is_empty() {
        return Err(Error::config("prompt list is empty"));
    }
    if images_per_prompt == 0 {
        return Err(Error::config("images_per_prompt must be at least 1"));
    }
    for &label in prompts {
        check_label(model, label)?;
    }
    let jobs: Vec<(usize, usize)> = (0..images_per_prompt)
        .flat_map(|r| (0..prompts.len()).map(move |i| (i, r)))
        .collect();
    let side = image_side(model);
    let steps = policy.t_sample;
    let mut samples = Vec::with_capacity(jobs.len());
    let mut norm_sums = vec![0.0; steps];
    let mut scales = Vec::new();
    let mut snapshots: Vec<Vec<f64>> =
        vec![Vec::new(); if options.record_snapshots { steps } else { 0 }];
    for chunk in jobs.chunks(SAMPLE_CHUNK) {
        let labels: Vec<usize> = chunk.iter().map(|&(i, _)| prompts[i]).collect();
        let mut rngs: Vec<StreamRng> = chunk
            .iter()
            .map(|&(i, r)| rng::stream(image_seed(seed, iteration, i, r), "sample", 0))
            .collect();
        let out = reverse_diffusion(
            model,
            adapter,
            &labels,
            &mut rngs,
            policy,
            sched,
            Branch::Guided,
            options,
        )?;
        // Accumulate in image order so chunking never changes the sums.
        for (sum, per_image) in norm_sums.iter_mut().zip(&out.diff_norms) {
            for d in per_image {
                *sum += d;
            }
        }
        for (acc, snap) in snapshots.iter_mut().zip(out.snapshots) {
            acc.extend(snap);
        }
        scales = out.scales;
        samples.extend(decode(&out.state, &labels, side));
    }
    let count = jobs.len() as f64;
    let trace = SampleTrace {
        diff_norms: norm_sums.into_iter().map(|s| s / count).collect(),
        scales,
        snapshots,
    };
    let set = LabeledSet {
        samples,
        iteration,
        seed,
        origin: Origin::Generated,
        role: None,
    };
    Ok((set, trace))
}
