//! Forensic artifacts for one generated set.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::blob::{find, read_blob, write_blob, Tensor};
use crate::forensics::{
    angular_profile, heatmap_pgm, histogram_csv, log_heatmap_pgm, mean_power_spectrum, profile_csv,
    radial_profile, residual_autocorrelation, value_histogram, DEFAULT_ANGULAR_BINS,
    DEFAULT_HISTOGRAM_BINS, DEFAULT_RADIAL_BINS,
};
use crate::glyphgen::LabeledSet;
use crate::{Error, Result};

pub const FINAL_STATE_FILE: &str = "final_state.rdt";
/// Range of the pre-clamp sampler-state histogram, in pixel units.
pub const STATE_RANGE: (f64, f64) = (-0.5, 1.5);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForensicSummary {
    pub radial: Vec<f64>,
    pub angular: Vec<f64>,
    pub residual_radial: Vec<f64>,
    pub files: Vec<String>,
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn map_tensor(name: &str, map: &ndarray::Array2<f64>) -> Result<Tensor> {
    let (h, w) = map.dim();
    let data: Vec<f64> = map.iter().copied().collect();
    Ok(Tensor::from_f64(name, &[h, w], &data)?)
}

pub fn save_final_state(dir: &Path, state: &[f64], n: usize) -> Result<()> {
    let dim = state.len().checked_div(n).unwrap_or(0);
    let t = Tensor::from_f64("final_state", &[n, dim], state)?;
    write_blob(&dir.join(FINAL_STATE_FILE), &[t])
}

pub fn load_final_state(dir: &Path) -> Result<Option<Vec<f64>>> {
    let path = dir.join(FINAL_STATE_FILE);
    if !path.exists() {
        return Ok(None);
    }
    Ok(Some(find(&read_blob(&path)?, "final_state")?.to_f64()))
}

/// Writes spectra, profiles, fingerprint and histograms for `set` into `dir`.
/// `final_state` is the unclamped sampler output, when available.
pub fn analyze_set(
    dir: &Path,
    set: &LabeledSet,
    final_state: Option<&[f64]>,
) -> Result<ForensicSummary> {
    let power = mean_power_spectrum(set)?;
    let radial = radial_profile(&power, DEFAULT_RADIAL_BINS)?;
    let angular = angular_profile(&power, DEFAULT_ANGULAR_BINS)?;
    let fp = residual_autocorrelation(set)?;
    let residual_radial = radial_profile(&fp.power_spectrum, DEFAULT_RADIAL_BINS)?;

    let mut files = Vec::new();
    let mut emit = |name: &str, bytes: Vec<u8>| -> Result<()> {
        write(&dir.join(name), bytes)?;
        files.push(name.to_owned());
        Ok(())
    };
    emit("radial.csv", profile_csv(&radial).into_bytes())?;
    emit("angular.csv", profile_csv(&angular).into_bytes())?;
    emit(
        "residual_radial.csv",
        profile_csv(&residual_radial).into_bytes(),
    )?;
    emit("spectrum.pgm", log_heatmap_pgm(&power))?;
    emit("residual_spectrum.pgm", log_heatmap_pgm(&fp.power_spectrum))?;
    emit("autocorrelation.pgm", heatmap_pgm(&fp.autocorrelation))?;
    let pixels: Vec<f64> = set.pixel_values().collect();
    let hist = value_histogram(&pixels, (0.0, 1.0), DEFAULT_HISTOGRAM_BINS)?;
    emit("pixel_histogram.csv", histogram_csv(&hist).into_bytes())?;
    if let Some(state) = final_state {
        let hist = value_histogram(state, STATE_RANGE, DEFAULT_HISTOGRAM_BINS)?;
        emit("state_histogram.csv", histogram_csv(&hist).into_bytes())?;
    }
    let tensors = vec![
        map_tensor("mean_power_spectrum", &power)?,
        map_tensor("residual_autocorrelation", &fp.autocorrelation)?,
        map_tensor("residual_power_spectrum", &fp.power_spectrum)?,
    ];
    write_blob(&dir.join("fingerprint.rdt"), &tensors)?;
    files.push("fingerprint.rdt".to_owned());
    Ok(ForensicSummary {
        radial,
        angular,
        residual_radial,
        files,
    })
}

/// Long-format table of every iteration's profiles.
pub fn profiles_csv(rows: &[(usize, ForensicSummary)]) -> String {
    let mut out = String::from("iteration,kind,bin,density\n");
    for (it, s) in rows {
        for (kind, values) in [
            ("radial", &s.radial),
            ("angular", &s.angular),
            ("residual_radial", &s.residual_radial),
        ] {
            for (b, v) in values.iter().enumerate() {
                out.push_str(&format!("{it},{kind},{b},{v}\n"));
            }
        }
    }
    out
}

/// Recomputes the forensic files of every iteration of a finished run,
/// including the original set in `iter_00`, and writes `profiles.csv`.
pub fn analyze_run(run_dir: &Path) -> Result<Vec<(usize, ForensicSummary)>> {
    let report = super::report::load_report(run_dir)?;
    let mut rows = Vec::new();
    let origin = run_dir.join(super::run::iteration_dir_name(0));
    let d0 = super::persist::load_set(&origin.join("set"))?;
    rows.push((0, analyze_set(&origin, &d0, None)?));
    for a in &report.iterations {
        let set_dir = run_dir.join(&a.set_path);
        let dir = set_dir
            .parent()
            .ok_or_else(|| Error::config(format!("bad set path {}", a.set_path)))?
            .to_path_buf();
        let set = super::persist::load_set(&set_dir)?;
        let state = load_final_state(&dir)?;
        rows.push((a.iteration, analyze_set(&dir, &set, state.as_deref())?));
    }
    let path = run_dir.join("profiles.csv");
    write(&path, profiles_csv(&rows))?;
    Ok(rows)
}
