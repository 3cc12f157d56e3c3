//! Procedural glyph datasets.
//!
//! The base role covers all [`NUM_CLASSES`] shapes with thin, dim strokes and
//! is used for pretraining. The target role uses a fixed four-shape subset in
//! a bold style and plays the original finetuning set of a chain.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::rng;
use crate::{Error, Result};

pub const NUM_CLASSES: usize = 8;
pub const IMAGE_SIZE: usize = 16;
/// Labels drawn by the target role, in cycling order.
pub const TARGET_LABELS: [usize; 4] = [0, 2, 5, 7];

const SUPERSAMPLE: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Circle,
    Square,
    Triangle,
    Cross,
    Star,
    Ring,
    Bar,
    Diamond,
}

impl Shape {
    pub const ALL: [Shape; NUM_CLASSES] = [
        Shape::Circle,
        Shape::Square,
        Shape::Triangle,
        Shape::Cross,
        Shape::Star,
        Shape::Ring,
        Shape::Bar,
        Shape::Diamond,
    ];

    pub fn from_index(index: usize) -> Result<Shape> {
        Shape::ALL
            .get(index)
            .copied()
            .ok_or_else(|| Error::config(format!("invalid shape index {index}")))
    }

    pub fn name(self) -> &'static str {
        match self {
            Shape::Circle => "circle",
            Shape::Square => "square",
            Shape::Triangle => "triangle",
            Shape::Cross => "cross",
            Shape::Star => "star",
            Shape::Ring => "ring",
            Shape::Bar => "bar",
            Shape::Diamond => "diamond",
        }
    }

    /// Signed distance in shape units (circumradius ~1); negative inside.
    fn distance(self, x: f64, y: f64) -> f64 {
        let box_sdf = |hx: f64, hy: f64| (x.abs() - hx).max(y.abs() - hy);
        match self {
            Shape::Circle => x.hypot(y) - 1.0,
            Shape::Square => box_sdf(0.8, 0.8),
            Shape::Triangle => {
                // Apex up (negative y), inradius 0.5.
                let normals = [
                    (0.0, 1.0),
                    (-0.866_025_403_8, -0.5),
                    (0.866_025_403_8, -0.5),
                ];
                normals
                    .iter()
                    .map(|(nx, ny)| x * nx + y * ny)
                    .fold(f64::NEG_INFINITY, f64::max)
                    - 0.5
            }
            Shape::Cross => box_sdf(1.0, 0.22).min(box_sdf(0.22, 1.0)),
            Shape::Star => {
                let phi = y.atan2(x) + std::f64::consts::FRAC_PI_2;
                let radius = 0.45 + 0.55 * (0.5 + 0.5 * (5.0 * phi).cos());
                x.hypot(y) - radius
            }
            Shape::Ring => (x.hypot(y) - 0.75).abs() - 0.12,
            Shape::Bar => box_sdf(1.0, 0.25),
            Shape::Diamond => (x.abs() + y.abs() - 1.0) / std::f64::consts::SQRT_2,
        }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Shape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Shape> {
        Shape::ALL
            .iter()
            .copied()
            .find(|shape| shape.name() == s)
            .ok_or_else(|| Error::config(format!("invalid shape {s:?}")))
    }
}

/// Parameters of one rendered glyph. `fill` is the ink intensity, so a zero
/// fill renders an empty canvas.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlyphSpec {
    pub label: usize,
    pub shape: Shape,
    pub stroke_width: u32,
    pub fill: f64,
    pub jitter_seed: u64,
}

impl GlyphSpec {
    pub fn validate(&self) -> Result<()> {
        if self.label >= NUM_CLASSES {
            return Err(Error::config(format!(
                "label {} outside [0, {NUM_CLASSES})",
                self.label
            )));
        }
        if !(1..=4).contains(&self.stroke_width) {
            return Err(Error::config(format!(
                "stroke width {} outside 1..=4",
                self.stroke_width
            )));
        }
        if !(0.0..=1.0).contains(&self.fill) {
            return Err(Error::config(format!("fill {} outside [0, 1]", self.fill)));
        }
        Ok(())
    }
}

/// One square grayscale image with its conditioning label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageSample {
    pub pixels: Vec<f32>,
    pub size: usize,
    pub label: usize,
}

impl ImageSample {
    pub fn new(pixels: Vec<f32>, size: usize, label: usize) -> Result<Self> {
        if pixels.len() != size * size {
            return Err(Error::Shape {
                expected: size * size,
                actual: pixels.len(),
            });
        }
        Ok(Self {
            pixels,
            size,
            label,
        })
    }

    pub fn pixels_f64(&self) -> Vec<f64> {
        self.pixels.iter().map(|&p| f64::from(p)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Base,
    Target,
}

impl FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Role> {
        match s {
            "base" => Ok(Role::Base),
            "target" => Ok(Role::Target),
            other => Err(Error::config(format!("unknown role {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Rendered,
    Generated,
    Mixed,
    Perturbed,
}

/// An ordered labeled image set. Sample order is the prompt order shared by
/// every iteration of a chain.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    pub samples: Vec<ImageSample>,
    pub iteration: usize,
    pub seed: u64,
    pub origin: Origin,
    pub role: Option<Role>,
}

impl LabeledSet {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    pub fn image_size(&self) -> Option<usize> {
        self.samples.first().map(|s| s.size)
    }

    /// All pixel values of the set, in sample order.
    pub fn pixel_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.samples
            .iter()
            .flat_map(|s| s.pixels.iter().map(|&p| f64::from(p)))
    }

    /// Population standard deviation over every pixel in the set.
    pub fn pixel_std(&self) -> f64 {
        let count = self.samples.iter().map(|s| s.pixels.len()).sum::<usize>();
        if count == 0 {
            return 0.0;
        }
        let mean = self.pixel_values().sum::<f64>() / count as f64;
        let var = self.pixel_values().map(|v| (v - mean).powi(2)).sum::<f64>() / count as f64;
        var.sqrt()
    }

    /// The first `n` samples, keeping provenance.
    pub fn head(&self, n: usize) -> LabeledSet {
        LabeledSet {
            samples: self.samples.iter().take(n).cloned().collect(),
            ..self.clone_meta()
        }
    }

    pub(crate) fn clone_meta(&self) -> LabeledSet {
        LabeledSet {
            samples: Vec::new(),
            iteration: self.iteration,
            seed: self.seed,
            origin: self.origin,
            role: self.role,
        }
    }
}

struct Jitter {
    dx: f64,
    dy: f64,
    scale: f64,
    angle: f64,
}

impl Jitter {
    fn from_seed(seed: u64) -> Self {
        let mut rng = rng::stream(seed, "glyph-jitter", 0);
        Jitter {
            dx: rng.random_range(-1.5..1.5),
            dy: rng.random_range(-1.5..1.5),
            scale: rng.random_range(0.85..1.1),
            angle: rng.random_range(-0.35..0.35),
        }
    }
}

/// Renders a glyph with 4x supersampling and box downsampling.
pub fn render_glyph(spec: &GlyphSpec, size: usize) -> Result<ImageSample> {
    if size < 8 {
        return Err(Error::config(format!("canvas size {size} below 8")));
    }
    spec.validate()?;
    let jitter = Jitter::from_seed(spec.jitter_seed);
    let center = size as f64 / 2.0;
    let radius = size as f64 * 0.32 * jitter.scale;
    let (sin, cos) = (-jitter.angle).sin_cos();
    let dilation = (f64::from(spec.stroke_width) - 1.0) / 2.0;
    let sub = 1.0 / SUPERSAMPLE as f64;
    let norm = (SUPERSAMPLE * SUPERSAMPLE) as f64;

    let mut pixels = vec![0f32; size * size];
    if spec.fill == 0.0 {
        return ImageSample::new(pixels, size, spec.label);
    }
    for row in 0..size {
        for col in 0..size {
            let mut covered = 0usize;
            for sy in 0..SUPERSAMPLE {
                for sx in 0..SUPERSAMPLE {
                    let px = col as f64 + (sx as f64 + 0.5) * sub - center - jitter.dx;
                    let py = row as f64 + (sy as f64 + 0.5) * sub - center - jitter.dy;
                    let (u, v) = (
                        (px * cos - py * sin) / radius,
                        (px * sin + py * cos) / radius,
                    );
                    if spec.shape.distance(u, v) * radius <= dilation {
                        covered += 1;
                    }
                }
            }
            pixels[row * size + col] = (spec.fill * covered as f64 / norm) as f32;
        }
    }
    ImageSample::new(pixels, size, spec.label)
}

/// The glyph parameters used for sample `index` of a generated set.
pub fn sample_spec(role: Role, index: usize, seed: u64) -> GlyphSpec {
    let mut rng = rng::stream(seed, "glyph-spec", index as u64);
    let (label, stroke_width, fill) = match role {
        Role::Base => (
            index % NUM_CLASSES,
            rng.random_range(1..=2),
            rng.random_range(0.55..0.85),
        ),
        Role::Target => (
            TARGET_LABELS[index % TARGET_LABELS.len()],
            rng.random_range(3..=4),
            rng.random_range(0.9..=1.0),
        ),
    };
    GlyphSpec {
        label,
        shape: Shape::ALL[label],
        stroke_width,
        fill,
        jitter_seed: rng.random(),
    }
}

pub fn generate_set(role: Role, n: usize, seed: u64) -> Result<LabeledSet> {
    if n == 0 {
        return Err(Error::config("set size must be at least 1"));
    }
    if role == Role::Base && n < NUM_CLASSES {
        return Err(Error::config(format!(
            "base set of {n} samples cannot cover {NUM_CLASSES} labels"
        )));
    }
    let samples = (0..n)
        .map(|i| render_glyph(&sample_spec(role, i, seed), IMAGE_SIZE))
        .collect::<Result<Vec<_>>>()?;
    Ok(LabeledSet {
        samples,
        iteration: 0,
        seed,
        origin: Origin::Rendered,
        role: Some(role),
    })
}

/// Adds clamped i.i.d. Gaussian pixel noise. Labels and order are unchanged.
pub fn perturb_set(set: &LabeledSet, sigma: f64, seed: u64) -> Result<LabeledSet> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::config(format!("noise sigma {sigma} must be >= 0")));
    }
    let samples = set
        .samples
        .iter()
        .enumerate()
        .map(|(i, sample)| {
            let mut rng = rng::stream(seed, "perturb", i as u64);
            let pixels = sample
                .pixels
                .iter()
                .map(|&p| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    if sigma == 0.0 {
                        p
                    } else {
                        (f64::from(p) + sigma * z).clamp(0.0, 1.0) as f32
                    }
                })
                .collect();
            ImageSample {
                pixels,
                size: sample.size,
                label: sample.label,
            }
        })
        .collect();
    Ok(LabeledSet {
        samples,
        origin: Origin::Perturbed,
        ..set.clone_meta()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn circle() -> GlyphSpec {
        GlyphSpec {
            label: 0,
            shape: Shape::Circle,
            stroke_width: 2,
            fill: 0.8,
            jitter_seed: 11,
        }
    }

    #[test]
    fn zero_fill_renders_blank() {
        for width in 1..=4 {
            let spec = GlyphSpec {
                fill: 0.0,
                stroke_width: width,
                ..circle()
            };
            let img = render_glyph(&spec, 16).unwrap();
            assert!(img.pixels.iter().all(|&p| p == 0.0));
        }
    }

    #[test]
    fn rendering_is_deterministic() {
        let a = render_glyph(&circle(), 16).unwrap();
        let b = render_glyph(&circle(), 16).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.label, 0);
    }

    #[test]
    fn circle_pixel_count_golden() {
        let img = render_glyph(&circle(), 16).unwrap();
        let nonzero = img.pixels.iter().filter(|&&p| p > 0.0).count();
        assert!(nonzero > 0 && nonzero < 256);
        assert_eq!(nonzero, CIRCLE_NONZERO_GOLDEN);
    }

    // Recorded from a single render of `circle()` at size 16.
    const CIRCLE_NONZERO_GOLDEN: usize = 94;

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(render_glyph(&circle(), 7).is_err());
        let bad_width = GlyphSpec {
            stroke_width: 0,
            ..circle()
        };
        assert!(render_glyph(&bad_width, 16).is_err());
        let bad_label = GlyphSpec {
            label: NUM_CLASSES,
            ..circle()
        };
        assert!(render_glyph(&bad_label, 16).is_err());
        assert!("hexagon".parse::<Shape>().is_err());
        assert!(Shape::from_index(8).is_err());
        assert_eq!("ring".parse::<Shape>().unwrap(), Shape::Ring);
    }

    #[test]
    fn every_shape_renders_inside_canvas() {
        for (i, shape) in Shape::ALL.iter().enumerate() {
            let spec = GlyphSpec {
                label: i,
                shape: *shape,
                stroke_width: 1,
                fill: 1.0,
                jitter_seed: 3,
            };
            let img = render_glyph(&spec, 16).unwrap();
            let ink: f32 = img.pixels.iter().sum();
            assert!(ink > 4.0, "{shape} too faint: {ink}");
            assert!(img.pixels.iter().all(|p| (0.0..=1.0).contains(p)));
            // borders stay mostly dark
            let border: f32 = (0..16)
                .map(|c| img.pixels[c] + img.pixels[15 * 16 + c])
                .sum();
            assert!(border < 4.0, "{shape} leaks onto the border");
        }
    }

    #[test]
    fn base_set_label_histogram_is_uniform() {
        let set = generate_set(Role::Base, 4096, 0).unwrap();
        assert_eq!(set.len(), 4096);
        let mut counts = [0usize; NUM_CLASSES];
        for s in &set.samples {
            counts[s.label] += 1;
        }
        assert!(counts.iter().all(|&c| c == 512));

        let odd = generate_set(Role::Base, 21, 0).unwrap();
        let mut counts = [0usize; NUM_CLASSES];
        for s in &odd.samples {
            counts[s.label] += 1;
        }
        let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
        assert!(hi - lo <= 1);
    }

    #[test]
    fn target_set_is_deterministic_and_styled() {
        let a = generate_set(Role::Target, 512, 0).unwrap();
        let b = generate_set(Role::Target, 512, 0).unwrap();
        assert_eq!(a, b);
        assert!(a.samples.iter().all(|s| TARGET_LABELS.contains(&s.label)));
        let base = generate_set(Role::Base, 512, 0).unwrap();
        let ink = |set: &LabeledSet| set.pixel_values().sum::<f64>() / set.len() as f64;
        assert!(ink(&a) > ink(&base));
        assert_ne!(generate_set(Role::Target, 512, 1).unwrap(), a);
    }

    #[test]
    fn base_set_needs_label_coverage() {
        assert!(generate_set(Role::Base, 4, 0).is_err());
        assert!(generate_set(Role::Target, 0, 0).is_err());
        assert!(generate_set(Role::Target, 4, 0).is_ok());
    }

    #[test]
    fn perturbation_contracts() {
        let set = generate_set(Role::Target, 16, 2).unwrap();
        let same = perturb_set(&set, 0.0, 9).unwrap();
        assert_eq!(same.samples, set.samples);
        assert_eq!(same.origin, Origin::Perturbed);

        let a = perturb_set(&set, 0.05, 9).unwrap();
        let b = perturb_set(&set, 0.05, 9).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.samples, set.samples);
        assert_eq!(a.labels(), set.labels());

        let loud = perturb_set(&set, 10.0, 9).unwrap();
        assert!(loud.pixel_values().all(|p| (0.0..=1.0).contains(&p)));
        assert!(perturb_set(&set, -0.1, 9).is_err());
    }
}
