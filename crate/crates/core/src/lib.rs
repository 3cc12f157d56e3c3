//! Self-consuming diffusion finetuning chains on a procedural glyph dataset.
//!
//! A small conditional epsilon-predicting network is pretrained on a broad set
//! of rendered glyphs, then repeatedly finetuned (through a fresh low-rank
//! adapter each time) on images it generated itself. The crate measures how
//! quickly the generated sets degrade and how condition-drop finetuning plus
//! a decaying guidance scale slows that degradation.
//!
//! Modules follow the pipeline:
//!
//! * [`glyphgen`] renders the labeled datasets.
//! * [`diffusion`] holds the noise schedule, network, adapters and training.
//! * [`guidance`] runs classifier-free-guided ancestral sampling.
//! * [`metrics`] computes feature distances, reusability and alignment.
//! * [`forensics`] computes histograms, spectra and residual fingerprints.
//! * [`chain`] orchestrates iterations, persistence and reports.

pub mod chain;
pub mod diffusion;
pub mod error;
pub mod forensics;
pub mod glyphgen;
pub mod guidance;
pub mod metrics;
pub mod rng;

pub use error::{Error, Result};
