//! Browser bindings: guidance schedules, glyph rendering and spectral
//! profiles. Every export is a plain function over numbers and byte buffers.
//!
//! The [`ops`] module holds the logic with ordinary errors so it can be tested
//! natively; the exported wrappers only convert errors to `JsError`.

use wasm_bindgen::prelude::*;

pub mod ops {
    use diffchain::forensics::{
        angular_profile, power_spectrum_2d, radial_profile, DEFAULT_ANGULAR_BINS,
        DEFAULT_RADIAL_BINS,
    };
    use diffchain::glyphgen::{
        perturb_set, render_glyph, GlyphSpec, LabeledSet, Origin, Shape, IMAGE_SIZE, NUM_CLASSES,
    };
    use diffchain::guidance::{eval_scale, GuidanceMode, GuidancePolicy};
    use diffchain::{Error, Result};

    pub fn parse_mode(mode: &str) -> Result<GuidanceMode> {
        match mode {
            "fixed" => Ok(GuidanceMode::Fixed),
            "exp_schedule" => Ok(GuidanceMode::ExpSchedule),
            "linear_schedule" => Ok(GuidanceMode::LinearSchedule),
            other => Err(Error::Config(format!("unknown guidance mode {other:?}"))),
        }
    }

    /// Guidance scale at every step `0..=t_sample`.
    pub fn guidance_curve(mode: &str, s0: f64, alpha: f64, t_sample: usize) -> Result<Vec<f64>> {
        let policy = GuidancePolicy {
            mode: parse_mode(mode)?,
            s0,
            alpha,
            t_sample,
        };
        (0..=t_sample)
            .map(|step| eval_scale(&policy, step))
            .collect()
    }

    pub fn shape_names() -> Vec<String> {
        (0..NUM_CLASSES)
            .filter_map(|i| Shape::from_index(i).ok())
            .map(|s| s.name().to_owned())
            .collect()
    }

    /// One glyph plus clamped Gaussian pixel noise, `IMAGE_SIZE^2` values in `[0, 1]`.
    pub fn render_glyph_pixels(
        shape: usize,
        stroke_width: u32,
        fill: f64,
        jitter_seed: u64,
        noise_sigma: f64,
        noise_seed: u64,
    ) -> Result<Vec<f32>> {
        let spec = GlyphSpec {
            label: shape,
            shape: Shape::from_index(shape)?,
            stroke_width,
            fill,
            jitter_seed,
        };
        let set = LabeledSet {
            samples: vec![render_glyph(&spec, IMAGE_SIZE)?],
            iteration: 0,
            seed: noise_seed,
            origin: Origin::Rendered,
            role: None,
        };
        let noisy = perturb_set(&set, noise_sigma, noise_seed)?;
        Ok(noisy
            .samples
            .into_iter()
            .next()
            .map(|s| s.pixels)
            .unwrap_or_default())
    }

    pub fn gray_to_rgba(values: &[f32]) -> Vec<u8> {
        values
            .iter()
            .flat_map(|&v| {
                let g = (255.0 * v.clamp(0.0, 1.0)).round() as u8;
                [g, g, g, 255]
            })
            .collect()
    }

    fn spectrum_of(pixels: &[f32]) -> Result<ndarray::Array2<f64>> {
        let values: Vec<f64> = pixels.iter().map(|&p| f64::from(p)).collect();
        power_spectrum_2d(&values, IMAGE_SIZE, IMAGE_SIZE)
    }

    /// DC-centered `log(1 + power)`, scaled to `[0, 1]`.
    pub fn log_spectrum(pixels: &[f32]) -> Result<Vec<f32>> {
        let power = spectrum_of(pixels)?.mapv(f64::ln_1p);
        let hi = power.iter().cloned().fold(0.0, f64::max);
        let scale = if hi > 0.0 { 1.0 / hi } else { 0.0 };
        Ok(power.iter().map(|&p| (p * scale) as f32).collect())
    }

    pub fn radial_density(pixels: &[f32]) -> Result<Vec<f64>> {
        radial_profile(&spectrum_of(pixels)?, DEFAULT_RADIAL_BINS)
    }

    pub fn angular_density(pixels: &[f32]) -> Result<Vec<f64>> {
        angular_profile(&spectrum_of(pixels)?, DEFAULT_ANGULAR_BINS)
    }
}

fn js<T>(r: diffchain::Result<T>) -> Result<T, JsError> {
    r.map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen]
pub fn guidance_curve(
    mode: &str,
    s0: f64,
    alpha: f64,
    t_sample: usize,
) -> Result<Vec<f64>, JsError> {
    js(ops::guidance_curve(mode, s0, alpha, t_sample))
}

#[wasm_bindgen]
pub fn shape_names() -> Vec<String> {
    ops::shape_names()
}

#[wasm_bindgen]
pub fn image_size() -> usize {
    diffchain::glyphgen::IMAGE_SIZE
}

#[wasm_bindgen]
pub fn render_glyph_pixels(
    shape: usize,
    stroke_width: u32,
    fill: f64,
    jitter_seed: u64,
    noise_sigma: f64,
    noise_seed: u64,
) -> Result<Vec<f32>, JsError> {
    js(ops::render_glyph_pixels(
        shape,
        stroke_width,
        fill,
        jitter_seed,
        noise_sigma,
        noise_seed,
    ))
}

/// Grayscale values to RGBA bytes for a canvas `ImageData`.
#[wasm_bindgen]
pub fn gray_to_rgba(values: &[f32]) -> Vec<u8> {
    ops::gray_to_rgba(values)
}

#[wasm_bindgen]
pub fn log_spectrum(pixels: &[f32]) -> Result<Vec<f32>, JsError> {
    js(ops::log_spectrum(pixels))
}

#[wasm_bindgen]
pub fn radial_density(pixels: &[f32]) -> Result<Vec<f64>, JsError> {
    js(ops::radial_density(pixels))
}

#[wasm_bindgen]
pub fn angular_density(pixels: &[f32]) -> Result<Vec<f64>, JsError> {
    js(ops::angular_density(pixels))
}
