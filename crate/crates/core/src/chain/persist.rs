//! Checkpoints and labeled sets on disk.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::blob::{find, read_blob, write_blob, Tensor};
use crate::diffusion::optim::Params;
use crate::diffusion::{attach_lora, EpsModel, LoraAdapter, ModelConfig};
use crate::glyphgen::{ImageSample, LabeledSet, Origin, Role};
use crate::metrics::FrozenClassifier;
use crate::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const DATA_FILE: &str = "data.rdt";
const MODEL_META: &str = "model.config";
const ADAPTER_META: &str = "lora.config";
const MODEL_SKIP: &str = "model.output_skip";

/// Rounds every parameter to the nearest `f32`, so an in-memory model equals
/// its reloaded checkpoint exactly.
pub fn round_to_f32(params: &mut impl Params) {
    params.visit_mut(&mut |_, data| data.iter_mut().for_each(|v| *v = f64::from(*v as f32)));
}

pub fn params_to_tensors(params: &impl Params) -> Result<Vec<Tensor>> {
    let mut out = Vec::new();
    let mut failure = None;
    params.visit(
        &mut |name, shape, data| match Tensor::from_f64(name, shape, data) {
            Ok(t) => out.push(t),
            Err(e) => failure = Some(e),
        },
    );
    match failure {
        Some(e) => Err(e.into()),
        None => Ok(out),
    }
}

/// Overwrites every parameter of `params` from same-named tensors.
pub fn load_params(params: &mut impl Params, tensors: &[Tensor]) -> Result<()> {
    let mut failure = None;
    params.visit_mut(&mut |name, data| {
        if failure.is_some() {
            return;
        }
        match find(tensors, name) {
            Ok(t) if t.data.len() == data.len() => data
                .iter_mut()
                .zip(&t.data)
                .for_each(|(d, &v)| *d = f64::from(v)),
            Ok(t) => {
                failure = Some(Error::Shape {
                    expected: data.len(),
                    actual: t.data.len(),
                })
            }
            Err(e) => failure = Some(e),
        }
    });
    failure.map_or(Ok(()), Err)
}

fn meta_tensor(name: &str, values: &[usize]) -> Result<Tensor> {
    let data = values.iter().map(|&v| v as f32).collect();
    Ok(Tensor::new(name, vec![values.len()], data)?)
}

fn read_meta(tensors: &[Tensor], name: &str) -> Result<Vec<usize>> {
    find(tensors, name)?
        .data
        .iter()
        .map(|&v| {
            if v >= 0.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(Error::config(format!("bad value {v} in {name}")))
            }
        })
        .collect()
}

pub fn model_tensors(model: &EpsModel) -> Result<Vec<Tensor>> {
    let c = &model.config;
    let mut meta = vec![c.image_dim, c.time_dim, c.label_dim, c.num_classes];
    meta.extend(&c.hidden);
    let mut out = vec![meta_tensor(MODEL_META, &meta)?];
    if !model.output_skip.is_empty() {
        let n = model.output_skip.len();
        out.push(Tensor::from_f64(MODEL_SKIP, &[n], &model.output_skip)?);
    }
    out.extend(params_to_tensors(model)?);
    Ok(out)
}

pub fn model_from_tensors(tensors: &[Tensor]) -> Result<EpsModel> {
    let meta = read_meta(tensors, MODEL_META)?;
    if meta.len() < 4 {
        return Err(Error::config("model config tensor too short"));
    }
    let config = ModelConfig {
        image_dim: meta[0],
        time_dim: meta[1],
        label_dim: meta[2],
        num_classes: meta[3],
        hidden: meta[4..].to_vec(),
    };
    let mut model = EpsModel::zeros(config)?;
    if let Some(skip) = tensors.iter().find(|t| t.name == MODEL_SKIP) {
        model.output_skip = skip.to_f64();
    }
    load_params(&mut model, tensors)?;
    Ok(model)
}

pub fn save_model(path: &Path, model: &EpsModel) -> Result<()> {
    write_blob(path, &model_tensors(model)?)
}

pub fn load_model(path: &Path) -> Result<EpsModel> {
    model_from_tensors(&read_blob(path)?)
}

pub fn adapter_tensors(adapter: &LoraAdapter) -> Result<Vec<Tensor>> {
    let meta = Tensor::new(
        ADAPTER_META,
        vec![2],
        vec![adapter.rank as f32, adapter.weight_scaling as f32],
    )?;
    let mut out = vec![meta];
    out.extend(params_to_tensors(adapter)?);
    Ok(out)
}

pub fn adapter_from_tensors(model: &EpsModel, tensors: &[Tensor]) -> Result<LoraAdapter> {
    let meta = find(tensors, ADAPTER_META)?;
    let [rank, scaling] = meta.data[..] else {
        return Err(Error::config("adapter config tensor must hold two values"));
    };
    let mut adapter = attach_lora(model, rank as usize, f64::from(scaling), 0)?.zeros_like();
    load_params(&mut adapter, tensors)?;
    Ok(adapter)
}

pub fn save_adapter(path: &Path, adapter: &LoraAdapter) -> Result<()> {
    write_blob(path, &adapter_tensors(adapter)?)
}

pub fn load_adapter(path: &Path, model: &EpsModel) -> Result<LoraAdapter> {
    adapter_from_tensors(model, &read_blob(path)?)
}

pub fn save_classifier(path: &Path, clf: &FrozenClassifier) -> Result<()> {
    write_blob(path, &params_to_tensors(clf)?)
}

pub fn load_classifier(path: &Path) -> Result<FrozenClassifier> {
    let tensors = read_blob(path)?;
    let w1 = find(&tensors, "w1")?;
    let w2 = find(&tensors, "w2")?;
    if w1.dims.len() != 2 || w2.dims.len() != 2 {
        return Err(Error::config("classifier weights must be matrices"));
    }
    let mut clf = FrozenClassifier::uniform(w1.dims[1], w2.dims[0]);
    load_params(&mut clf, &tensors)?;
    Ok(clf)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetManifest {
    pub seed: u64,
    pub role: Option<Role>,
    pub n: usize,
    pub iteration: usize,
    pub origin: Origin,
    pub labels: Vec<usize>,
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        path: path.into(),
        source,
    })?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.into(),
        source,
    })
}

pub fn save_set(dir: &Path, set: &LabeledSet) -> Result<()> {
    let size = set
        .image_size()
        .ok_or_else(|| Error::config("cannot save an empty set"))?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = SetManifest {
        seed: set.seed,
        role: set.role,
        n: set.len(),
        iteration: set.iteration,
        origin: set.origin,
        labels: set.labels(),
    };
    write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    let pixels: Vec<f32> = set
        .samples
        .iter()
        .flat_map(|s| s.pixels.iter().copied())
        .collect();
    let tensor = Tensor::new("pixels", vec![set.len(), size, size], pixels)?;
    write_blob(&dir.join(DATA_FILE), &[tensor])
}

pub fn load_set(dir: &Path) -> Result<LabeledSet> {
    let manifest: SetManifest = read_json(&dir.join(MANIFEST_FILE))?;
    let tensors = read_blob(&dir.join(DATA_FILE))?;
    let pixels = find(&tensors, "pixels")?;
    let &[n, h, w] = pixels.dims.as_slice() else {
        return Err(Error::config("pixel tensor must be n x size x size"));
    };
    if h != w || n != manifest.n || manifest.labels.len() != n {
        return Err(Error::config(format!(
            "{}: manifest and pixel tensor disagree",
            dir.display()
        )));
    }
    let samples = pixels
        .data
        .chunks_exact(h * w)
        .zip(&manifest.labels)
        .map(|(p, &label)| ImageSample::new(p.to_vec(), h, label))
        .collect::<Result<Vec<_>>>()?;
    Ok(LabeledSet {
        samples,
        iteration: manifest.iteration,
        seed: manifest.seed,
        origin: manifest.origin,
        role: manifest.role,
    })
}
