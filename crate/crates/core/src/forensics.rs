//! Degradation diagnostics: value histograms, 2-D power spectra with radial
//! and angular profiles, residual autocorrelation fingerprints and
//! score-difference trace tables.
//!
//! DFT convention: unnormalized forward transform, `1 / N` inverse. Under it
//! `sum |F|^2 = H * W * sum |x|^2`. Power maps are DC-centered: frequency
//! `(v, u)` (rows, columns) sits at index `(v + H/2) mod H, (u + W/2) mod W`.

use std::f64::consts::PI;

use ndarray::Array2;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::glyphgen::LabeledSet;
use crate::guidance::SampleTrace;
use crate::{Error, Result};

pub const DEFAULT_HISTOGRAM_BINS: usize = 64;
pub const DEFAULT_RADIAL_BINS: usize = 8;
pub const DEFAULT_ANGULAR_BINS: usize = 16;
pub const RESIDUAL_BLUR_SIGMA: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueHistogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub total: u64,
}

impl ValueHistogram {
    /// Counts normalized to a probability density over the bin widths.
    pub fn density(&self) -> Vec<f64> {
        self.counts
            .iter()
            .zip(self.edges.windows(2))
            .map(|(&c, w)| c as f64 / (self.total as f64 * (w[1] - w[0])))
            .collect()
    }
}

/// Uniform-bin histogram; values outside `[lo, hi)` land in the edge bins.
pub fn value_histogram(values: &[f64], range: (f64, f64), bins: usize) -> Result<ValueHistogram> {
    let (lo, hi) = range;
    if values.is_empty() {
        return Err(Error::config("histogram of an empty value list"));
    }
    if lo.partial_cmp(&hi) != Some(std::cmp::Ordering::Less) || bins == 0 {
        return Err(Error::config(format!(
            "invalid histogram range [{lo}, {hi}) with {bins} bins"
        )));
    }
    let width = (hi - lo) / bins as f64;
    let edges = (0..=bins)
        .map(|i| if i == bins { hi } else { lo + width * i as f64 })
        .collect();
    let mut counts = vec![0u64; bins];
    for &v in values {
        let pos = ((v - lo) / width).floor();
        let bin = if pos.is_nan() || pos < 0.0 {
            0
        } else {
            (pos as usize).min(bins - 1)
        };
        counts[bin] += 1;
    }
    Ok(ValueHistogram {
        edges,
        counts,
        total: values.len() as u64,
    })
}

fn fft2(data: &mut [Complex64], h: usize, w: usize, inverse: bool) {
    let mut planner = FftPlanner::new();
    let (row_fft, col_fft) = if inverse {
        (planner.plan_fft_inverse(w), planner.plan_fft_inverse(h))
    } else {
        (planner.plan_fft_forward(w), planner.plan_fft_forward(h))
    };
    for row in data.chunks_exact_mut(w) {
        row_fft.process(row);
    }
    let mut column = vec![Complex64::new(0.0, 0.0); h];
    for c in 0..w {
        for r in 0..h {
            column[r] = data[r * w + c];
        }
        col_fft.process(&mut column);
        for r in 0..h {
            data[r * w + c] = column[r];
        }
    }
    if inverse {
        let scale = 1.0 / (h * w) as f64;
        data.iter_mut().for_each(|v| *v *= scale);
    }
}

/// Squared DFT magnitude, DC-centered.
pub fn power_spectrum_2d(image: &[f64], h: usize, w: usize) -> Result<Array2<f64>> {
    if h < 2 || w < 2 {
        return Err(Error::config("power spectrum needs at least 2x2 pixels"));
    }
    if image.len() != h * w {
        return Err(Error::Shape {
            expected: h * w,
            actual: image.len(),
        });
    }
    let mut data: Vec<Complex64> = image.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft2(&mut data, h, w, false);
    let mut power = Array2::zeros((h, w));
    for r in 0..h {
        for c in 0..w {
            power[[(r + h / 2) % h, (c + w / 2) % w]] = data[r * w + c].norm_sqr();
        }
    }
    Ok(power)
}

/// Signed frequency `(v, u)` of a centered index.
fn centered_freq(r: usize, c: usize, h: usize, w: usize) -> (f64, f64) {
    (r as f64 - (h / 2) as f64, c as f64 - (w / 2) as f64)
}

fn bin_means(sums: Vec<f64>, counts: Vec<usize>) -> Vec<f64> {
    sums.into_iter()
        .zip(counts)
        .map(|(s, n)| if n == 0 { 0.0 } else { s / n as f64 })
        .collect()
}

/// Radial bin of each centered frequency: `floor(bins * r / r_max)`, with the
/// largest radius folded into the last bin. DC is in bin 0.
pub fn radial_bin_index(h: usize, w: usize, bins: usize) -> Array2<usize> {
    let r_max = centered_freq(0, 0, h, w)
        .0
        .hypot(centered_freq(0, 0, h, w).1);
    Array2::from_shape_fn((h, w), |(r, c)| {
        let (v, u) = centered_freq(r, c, h, w);
        let b = (bins as f64 * v.hypot(u) / r_max + 1e-9).floor() as usize;
        b.min(bins - 1)
    })
}

/// Mean power per ring of spatial frequency.
pub fn radial_profile(power: &Array2<f64>, bins: usize) -> Result<Vec<f64>> {
    if bins == 0 {
        return Err(Error::config("radial profile needs at least one bin"));
    }
    let (h, w) = power.dim();
    let index = radial_bin_index(h, w, bins);
    let (mut sums, mut counts) = (vec![0.0; bins], vec![0usize; bins]);
    for ((r, c), &p) in power.indexed_iter() {
        let b = index[[r, c]];
        sums[b] += p;
        counts[b] += 1;
    }
    Ok(bin_means(sums, counts))
}

/// Orientation sector of a non-DC frequency, folded into `[0, pi)`.
pub fn angular_bin(v: f64, u: f64, bins: usize) -> usize {
    let mut theta = v.atan2(u);
    if theta < 0.0 {
        theta += PI;
    }
    let b = (bins as f64 * theta / PI + 1e-9).floor() as usize;
    b % bins
}

/// Mean power per orientation sector of width `pi / bins`; DC excluded.
pub fn angular_profile(power: &Array2<f64>, bins: usize) -> Result<Vec<f64>> {
    if bins == 0 {
        return Err(Error::config("angular profile needs at least one bin"));
    }
    let (h, w) = power.dim();
    let (mut sums, mut counts) = (vec![0.0; bins], vec![0usize; bins]);
    for ((r, c), &p) in power.indexed_iter() {
        let (v, u) = centered_freq(r, c, h, w);
        if v == 0.0 && u == 0.0 {
            continue;
        }
        let b = angular_bin(v, u, bins);
        sums[b] += p;
        counts[b] += 1;
    }
    Ok(bin_means(sums, counts))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralProfile {
    pub radial: Vec<f64>,
    pub angular: Vec<f64>,
}

/// Mean power spectrum of the images in a set.
pub fn mean_power_spectrum(set: &LabeledSet) -> Result<Array2<f64>> {
    let size = set
        .image_size()
        .ok_or_else(|| Error::config("spectrum of an empty set"))?;
    let mut acc = Array2::zeros((size, size));
    for s in &set.samples {
        acc += &power_spectrum_2d(&s.pixels_f64(), size, size)?;
    }
    Ok(acc / set.len() as f64)
}

pub fn spectral_profile(
    set: &LabeledSet,
    radial_bins: usize,
    angular_bins: usize,
) -> Result<SpectralProfile> {
    let power = mean_power_spectrum(set)?;
    Ok(SpectralProfile {
        radial: radial_profile(&power, radial_bins)?,
        angular: angular_profile(&power, angular_bins)?,
    })
}

/// Mirror index with edge repetition (`d c b a | a b c d | d c b a`).
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - 1 - m;
    }
    m as usize
}

/// Separable Gaussian blur, kernel truncated at `3 sigma`, reflect padding.
pub fn gaussian_blur(image: &[f64], h: usize, w: usize, sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);

    let mut tmp = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            tmp[r * w + c] = (-radius..=radius)
                .zip(&kernel)
                .map(|(k, &kv)| kv * image[r * w + reflect(c as isize + k, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            out[r * w + c] = (-radius..=radius)
                .zip(&kernel)
                .map(|(k, &kv)| kv * tmp[reflect(r as isize + k, h) * w + c])
                .sum();
        }
    }
    out
}

/// High-pass residual `x - blur(x)`.
pub fn residual(image: &[f64], h: usize, w: usize) -> Vec<f64> {
    let blurred = gaussian_blur(image, h, w, RESIDUAL_BLUR_SIGMA);
    image.iter().zip(blurred).map(|(x, b)| x - b).collect()
}

/// Full linear autocorrelation `A[dy, dx] = sum_p r(p) r(p + d)` for lags in
/// `[-(H-1), H-1] x [-(W-1), W-1]`, zero lag at `(H-1, W-1)`. Computed as the
/// inverse transform of `|F(r)|^2` over a zero-padded `(2H-1) x (2W-1)` grid.
pub fn autocorrelation_full(signal: &[f64], h: usize, w: usize) -> Array2<f64> {
    let (ph, pw) = (2 * h - 1, 2 * w - 1);
    let mut data = vec![Complex64::new(0.0, 0.0); ph * pw];
    for r in 0..h {
        for c in 0..w {
            data[r * pw + c] = Complex64::new(signal[r * w + c], 0.0);
        }
    }
    fft2(&mut data, ph, pw, false);
    data.iter_mut()
        .for_each(|v| *v = Complex64::new(v.norm_sqr(), 0.0));
    fft2(&mut data, ph, pw, true);
    Array2::from_shape_fn((ph, pw), |(r, c)| {
        // Row r holds lag r - (h - 1); negative lags wrap to the end.
        let lr = (r + ph - (h - 1)) % ph;
        let lc = (c + pw - (w - 1)) % pw;
        data[lr * pw + lc].re
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fingerprint {
    /// Mean residual autocorrelation, `(2H-1) x (2W-1)`, zero lag centered.
    pub autocorrelation: Array2<f64>,
    /// Mean residual power spectrum, `H x W`, DC-centered.
    pub power_spectrum: Array2<f64>,
}

pub fn residual_autocorrelation(set: &LabeledSet) -> Result<Fingerprint> {
    let size = set
        .image_size()
        .ok_or_else(|| Error::config("fingerprint of an empty set"))?;
    let mut auto = Array2::zeros((2 * size - 1, 2 * size - 1));
    let mut power = Array2::zeros((size, size));
    for s in &set.samples {
        let r = residual(&s.pixels_f64(), size, size);
        auto += &autocorrelation_full(&r, size, size);
        power += &power_spectrum_2d(&r, size, size)?;
    }
    let n = set.len() as f64;
    Ok(Fingerprint {
        autocorrelation: auto / n,
        power_spectrum: power / n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub step: usize,
    pub applied_scale: f64,
    pub mean_diff_norm: f64,
}

/// Elementwise mean of the traces recorded for each iteration.
pub fn diff_trace_summary(traces: &[(usize, Vec<SampleTrace>)]) -> Result<Vec<TraceRow>> {
    let steps = traces
        .iter()
        .flat_map(|(_, ts)| ts.iter())
        .map(|t| t.len())
        .next()
        .unwrap_or(0);
    let mut rows = Vec::new();
    for (iteration, ts) in traces {
        if ts.is_empty() {
            continue;
        }
        if ts
            .iter()
            .any(|t| t.len() != steps || t.scales.len() != steps)
        {
            return Err(Error::config("traces have mixed step counts"));
        }
        let n = ts.len() as f64;
        for step in 0..steps {
            rows.push(TraceRow {
                iteration: *iteration,
                step,
                applied_scale: ts.iter().map(|t| t.scales[step]).sum::<f64>() / n,
                mean_diff_norm: ts.iter().map(|t| t.diff_norms[step]).sum::<f64>() / n,
            });
        }
    }
    Ok(rows)
}

pub fn trace_rows_csv(rows: &[TraceRow]) -> String {
    let mut out = String::from("iteration,step,applied_scale,mean_diff_norm\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.iteration, r.step, r.applied_scale, r.mean_diff_norm
        ));
    }
    out
}

pub fn profile_csv(values: &[f64]) -> String {
    let mut out = String::from("bin,density\n");
    for (i, v) in values.iter().enumerate() {
        out.push_str(&format!("{i},{v}\n"));
    }
    out
}

pub fn histogram_csv(hist: &ValueHistogram) -> String {
    let mut out = String::from("lo,hi,count,density\n");
    for ((w, c), d) in hist.edges.windows(2).zip(&hist.counts).zip(hist.density()) {
        out.push_str(&format!("{},{},{},{}\n", w[0], w[1], c, d));
    }
    out
}

/// Binary 8-bit PGM of a map, min-max scaled to `0..=255`.
pub fn heatmap_pgm(map: &Array2<f64>) -> Vec<u8> {
    let (h, w) = map.dim();
    let lo = map.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = map.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(
        map.iter()
            .map(|&v| (255.0 * (v - lo) / span).round().clamp(0.0, 255.0) as u8),
    );
    out
}

/// Heat map of `log(1 + power)`, which keeps the DC peak from flattening the rest.
pub fn log_heatmap_pgm(power: &Array2<f64>) -> Vec<u8> {
    heatmap_pgm(&power.mapv(|p| p.max(0.0).ln_1p()))
}

/// One row of images with a one-pixel black gutter, raw `[0, 1]` intensities.
pub fn image_row_pgm(images: &[&[f32]], size: usize) -> Vec<u8> {
    let count = images.len().max(1);
    let w = count * (size + 1) + 1;
    let h = size + 2;
    let mut pixels = vec![0u8; w * h];
    for (i, img) in images.iter().enumerate() {
        for r in 0..size {
            for c in 0..size {
                let v = f64::from(img[r * size + c]).clamp(0.0, 1.0);
                pixels[(r + 1) * w + 1 + i * (size + 1) + c] = (255.0 * v).round() as u8;
            }
        }
    }
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(pixels);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::glyphgen::{generate_set, ImageSample, Origin, Role};
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn noise_image(seed: u64, n: usize) -> Vec<f64> {
        let mut rng = crate::rng::stream(seed, "white-noise", 0);
        (0..n * n).map(|_| rng.sample(StandardNormal)).collect()
    }

    fn set_of(images: Vec<Vec<f64>>, size: usize) -> LabeledSet {
        LabeledSet {
            samples: images
                .into_iter()
                .map(|p| ImageSample::new(p.iter().map(|&v| v as f32).collect(), size, 0).unwrap())
                .collect(),
            iteration: 0,
            seed: 0,
            origin: Origin::Generated,
            role: None,
        }
    }

    #[test]
    fn histogram_conservation_and_delta() {
        let h = value_histogram(&[0.3; 50], (0.0, 1.0), 64).unwrap();
        assert_eq!(h.counts.iter().filter(|&&c| c > 0).count(), 1);
        assert_eq!(h.counts.iter().sum::<u64>(), 50);
        assert!(h.edges.windows(2).all(|w| w[0] < w[1]));

        let wild = [-5.0, 0.0, 0.999, 1.0, 7.0, f64::NAN];
        let h = value_histogram(&wild, (0.0, 1.0), 4).unwrap();
        assert_eq!(h.counts.iter().sum::<u64>(), 6);
        assert_eq!(h.counts[0], 3);
        assert_eq!(h.counts[3], 3);
        assert!(value_histogram(&[], (0.0, 1.0), 4).is_err());
        assert!(value_histogram(&[0.1], (1.0, 1.0), 4).is_err());
    }

    #[test]
    fn histogram_of_normal_draws_peaks_in_center() {
        let mut rng = crate::rng::stream(0, "hist-normal", 0);
        let values: Vec<f64> = (0..10_000).map(|_| rng.sample(StandardNormal)).collect();
        let h = value_histogram(&values, (-4.0, 4.0), 64).unwrap();
        let center = h.counts[31].max(h.counts[32]);
        assert!(center > h.counts[0] && center > h.counts[63]);
        approx::assert_abs_diff_eq!(
            h.density().iter().sum::<f64>() * 0.125,
            1.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn constant_image_is_pure_dc() {
        let p = power_spectrum_2d(&[0.5; 256], 16, 16).unwrap();
        assert!((p[[8, 8]] - (0.5 * 256.0f64).powi(2)).abs() < 1e-9);
        let off: f64 = p.iter().sum::<f64>() - p[[8, 8]];
        assert!(off.abs() < 1e-18);
        let radial = radial_profile(&p, 8).unwrap();
        assert!(radial[0] > 0.0);
        assert!(radial[1..].iter().all(|&v| v.abs() < 1e-18));
    }

    #[test]
    fn parseval_identity() {
        for seed in 0..5 {
            let x = noise_image(seed, 16);
            let p = power_spectrum_2d(&x, 16, 16).unwrap();
            let lhs: f64 = p.sum();
            let rhs = 256.0 * x.iter().map(|v| v * v).sum::<f64>();
            assert!(((lhs - rhs) / rhs).abs() < 1e-9);
        }
        let rect: Vec<f64> = (0..6 * 10).map(|i| (i as f64 * 0.37).sin()).collect();
        let p = power_spectrum_2d(&rect, 6, 10).unwrap();
        let rhs = 60.0 * rect.iter().map(|v| v * v).sum::<f64>();
        assert!(((p.sum() - rhs) / rhs).abs() < 1e-9);
    }

    #[test]
    fn horizontal_cosine_peaks_on_horizontal_axis() {
        let x: Vec<f64> = (0..256)
            .map(|i| (2.0 * PI * 4.0 * (i % 16) as f64 / 16.0).cos())
            .collect();
        let p = power_spectrum_2d(&x, 16, 16).unwrap();
        let mut peaks: Vec<(usize, usize)> = p
            .indexed_iter()
            .filter(|(_, &v)| v > 1.0)
            .map(|(ix, _)| ix)
            .collect();
        peaks.sort();
        assert_eq!(peaks, vec![(8, 4), (8, 12)]);
    }

    #[test]
    fn radial_bins_partition_frequencies() {
        let index = radial_bin_index(16, 16, 8);
        let mut counts = [0usize; 8];
        index.iter().for_each(|&b| counts[b] += 1);
        assert_eq!(counts.iter().sum::<usize>(), 256);
        assert!(counts.iter().all(|&c| c > 0));
        assert_eq!(index[[8, 8]], 0);
    }

    #[test]
    fn white_noise_radial_profile_is_flat() {
        let mut mean = Array2::zeros((16, 16));
        for seed in 0..100 {
            mean += &power_spectrum_2d(&noise_image(seed, 16), 16, 16).unwrap();
        }
        let radial = radial_profile(&(mean / 100.0), 8).unwrap();
        let avg = radial.iter().sum::<f64>() / 8.0;
        for r in radial {
            assert!((r - avg).abs() / avg < 0.10, "{r} vs {avg}");
        }
    }

    #[test]
    fn rotated_stripes_shift_angular_profile() {
        let stripes: Vec<f64> = (0..256)
            .map(|i| (2.0 * PI * 3.0 * (i / 16) as f64 / 16.0).sin())
            .collect();
        // 90 degree rotation: out[r][c] = in[c][15 - r]
        let rotated: Vec<f64> = (0..256)
            .map(|i| {
                let (r, c) = (i / 16, i % 16);
                stripes[c * 16 + (15 - r)]
            })
            .collect();
        let a = angular_profile(&power_spectrum_2d(&stripes, 16, 16).unwrap(), 16).unwrap();
        let b = angular_profile(&power_spectrum_2d(&rotated, 16, 16).unwrap(), 16).unwrap();
        let scale = a.iter().cloned().fold(0.0, f64::max);
        assert!(scale > 0.0);
        for k in 0..16 {
            assert!((b[(k + 8) % 16] - a[k]).abs() <= 1e-12 * scale, "bin {k}");
        }
    }

    #[test]
    fn angular_bins_are_rotation_consistent() {
        for v in -8i32..8 {
            for u in -8i32..8 {
                if (u, v) == (0, 0) {
                    continue;
                }
                let a = angular_bin(v as f64, u as f64, 16);
                let b = angular_bin(u as f64, -v as f64, 16);
                assert_eq!((a + 8) % 16, b, "({v}, {u})");
            }
        }
    }

    #[test]
    fn autocorrelation_zero_lag_is_energy() {
        let x = noise_image(3, 16);
        let a = autocorrelation_full(&x, 16, 16);
        assert_eq!(a.dim(), (31, 31));
        let energy: f64 = x.iter().map(|v| v * v).sum();
        assert!((a[[15, 15]] - energy).abs() < 1e-9 * energy);
        // Brute-force check of a few lags.
        for &(dy, dx) in &[(1isize, 0isize), (-2, 3), (15, -15)] {
            let mut brute = 0.0;
            for r in 0..16isize {
                for c in 0..16isize {
                    let (r2, c2) = (r + dy, c + dx);
                    if (0..16).contains(&r2) && (0..16).contains(&c2) {
                        brute += x[(r * 16 + c) as usize] * x[(r2 * 16 + c2) as usize];
                    }
                }
            }
            let got = a[[(15 + dy) as usize, (15 + dx) as usize]];
            assert!(
                (got - brute).abs() < 1e-9,
                "lag ({dy},{dx}): {got} vs {brute}"
            );
        }
        let max = a.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(max, a[[15, 15]]);
    }

    #[test]
    fn white_noise_fingerprint_is_peaked() {
        let images: Vec<Vec<f64>> = (0..100).map(|s| noise_image(s, 16)).collect();
        let fp = residual_autocorrelation(&set_of(images, 16)).unwrap();
        let zero = fp.autocorrelation[[15, 15]];
        let off_mean = (fp.autocorrelation.iter().map(|v| v.abs()).sum::<f64>() - zero.abs())
            / (31.0 * 31.0 - 1.0);
        assert!(off_mean < 0.1 * zero, "{off_mean} vs {zero}");
    }

    #[test]
    fn fingerprint_of_identical_images() {
        let glyph = generate_set(Role::Target, 1, 4).unwrap();
        let mut repeated = glyph.clone();
        repeated.samples = vec![glyph.samples[0].clone(); 5];
        let one = residual_autocorrelation(&glyph).unwrap();
        let many = residual_autocorrelation(&repeated).unwrap();
        for (a, b) in one.autocorrelation.iter().zip(many.autocorrelation.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        let r = residual(&glyph.samples[0].pixels_f64(), 16, 16);
        let energy: f64 = r.iter().map(|v| v * v).sum();
        assert!((one.autocorrelation[[15, 15]] - energy).abs() < 1e-12);
    }

    #[test]
    fn blur_preserves_constants() {
        let b = gaussian_blur(&[0.7; 64], 8, 8, 1.0);
        assert!(b.iter().all(|v| (v - 0.7).abs() < 1e-12));
        assert_eq!(reflect(-1, 5), 0);
        assert_eq!(reflect(-2, 5), 1);
        assert_eq!(reflect(5, 5), 4);
        assert_eq!(reflect(6, 5), 3);
    }

    #[test]
    fn pgm_headers() {
        let map = Array2::from_shape_fn((2, 3), |(r, c)| (r * 3 + c) as f64);
        let pgm = heatmap_pgm(&map);
        assert!(pgm.starts_with(b"P5\n3 2\n255\n"));
        assert_eq!(&pgm[pgm.len() - 6..], &[0, 51, 102, 153, 204, 255]);
        let img = vec![1.0f32; 4];
        let row = image_row_pgm(&[&img, &img], 2);
        assert!(row.starts_with(b"P5\n7 4\n255\n"));
    }

    #[test]
    fn trace_summary() {
        let zero = SampleTrace {
            diff_norms: vec![0.0; 4],
            scales: vec![7.5; 4],
            snapshots: Vec::new(),
        };
        let rows = diff_trace_summary(&[(1, vec![zero.clone(), zero.clone()])]).unwrap();
        assert_eq!(rows.len(), 4);
        assert!(rows.iter().all(|r| r.mean_diff_norm == 0.0));

        let t = SampleTrace {
            diff_norms: vec![1.0, 2.5, 0.25],
            scales: vec![3.0, 2.0, 1.0],
            snapshots: Vec::new(),
        };
        let rows = diff_trace_summary(&[(6, vec![t.clone()])]).unwrap();
        assert_eq!(
            rows.iter().map(|r| r.mean_diff_norm).collect::<Vec<_>>(),
            t.diff_norms
        );
        assert_eq!(
            rows.iter().map(|r| r.applied_scale).collect::<Vec<_>>(),
            t.scales
        );
        assert!(diff_trace_summary(&[(1, vec![t]), (2, vec![zero])]).is_err());
    }
}
