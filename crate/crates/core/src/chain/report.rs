//! Report files of a finished chain. Everything except `timing.json` is a pure
//! function of the report, so identical runs give identical bytes.

use std::fmt::Write as _;
use std::path::Path;

use super::persist::{load_set, read_json, write_json};
use super::run::ChainReport;
use crate::forensics::{image_row_pgm, trace_rows_csv};
use crate::metrics::MetricsRecord;
use crate::{Error, Result};

pub const GRID_ITERATIONS: [usize; 3] = [1, 3, 6];
pub const GRID_SAMPLES: usize = 8;
pub const REPORT_JSON: &str = "report.json";

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn metrics_csv(records: &[MetricsRecord]) -> String {
    let mut out = String::from("iteration,ffd,sfd,alignment\n");
    for r in records {
        let _ = writeln!(out, "{},{},{},{}", r.iteration, r.ffd, r.sfd, r.alignment);
    }
    out
}

pub fn parse_metrics_csv(text: &str) -> Result<Vec<MetricsRecord>> {
    let bad = |line: &str| Error::config(format!("malformed metrics row {line:?}"));
    text.lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 4 {
                return Err(bad(line));
            }
            Ok(MetricsRecord {
                iteration: f[0].parse().map_err(|_| bad(line))?,
                ffd: f[1].parse().map_err(|_| bad(line))?,
                sfd: f[2].parse().map_err(|_| bad(line))?,
                alignment: f[3].parse().map_err(|_| bad(line))?,
            })
        })
        .collect()
}

fn curves_csv(report: &ChainReport) -> String {
    let mut out = String::from("iteration,ffd,sfd,alignment,mean_diff_norm,pixel_std\n");
    for a in &report.iterations {
        let m = &a.metrics;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            a.iteration, m.ffd, m.sfd, m.alignment, a.mean_diff_norm, a.pixel_std
        );
    }
    out
}

fn tradeoff_csv(report: &ChainReport) -> String {
    let c = &report.config;
    let ffd_1 = report.records.first().map(|r| r.ffd).unwrap_or(f64::NAN);
    let reuse = report
        .reusability
        .map(|r| r.to_string())
        .unwrap_or_default();
    format!(
        "mode,s0,alpha,cond_drop_prob,seed,k_iterations,ffd_1,reusability\n{},{},{},{},{},{},{},{}\n",
        serde_json::to_value(c.guidance.mode)
            .ok()
            .and_then(|v| v.as_str().map(str::to_owned))
            .unwrap_or_default(),
        c.guidance.s0,
        c.guidance.alpha,
        c.train.cond_drop_prob,
        c.seed,
        c.k_iterations,
        ffd_1,
        reuse
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirectionalChecks {
    pub ffd_rises: bool,
    pub diff_norm_rises: bool,
    pub pixel_std_shrinks: bool,
}

/// Last-versus-first comparisons; `None` for single-iteration chains.
pub fn directional_checks(report: &ChainReport) -> Option<DirectionalChecks> {
    let first = report.iterations.first()?;
    let last = report.iterations.last()?;
    if first.iteration == last.iteration {
        return None;
    }
    Some(DirectionalChecks {
        ffd_rises: last.metrics.ffd > first.metrics.ffd,
        diff_norm_rises: last.mean_diff_norm > first.mean_diff_norm,
        pixel_std_shrinks: last.pixel_std < first.pixel_std,
    })
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "yes"
    } else {
        "no"
    }
}

fn report_md(report: &ChainReport) -> Result<String> {
    let c = &report.config;
    let k = c.k_iterations;
    let mut md = String::from("# Chain report\n\n## Configuration\n\n```json\n");
    md.push_str(&serde_json::to_string_pretty(c).map_err(|e| Error::config(e.to_string()))?);
    md.push_str("\n```\n\n## Iterations\n\n");
    md.push_str(
        "| iteration | FFD | SFD | alignment | mean diff norm | pixel std | final loss |\n",
    );
    md.push_str("|---:|---:|---:|---:|---:|---:|---:|\n");
    let _ = writeln!(md, "| 0 | | | | | {:.6} | |", report.d0_pixel_std);
    for a in &report.iterations {
        let m = &a.metrics;
        let _ = writeln!(
            md,
            "| {} | {:.6} | {:.6} | {:.4} | {:.6} | {:.6} | {:.6} |",
            a.iteration, m.ffd, m.sfd, m.alignment, a.mean_diff_norm, a.pixel_std, a.final_loss
        );
    }
    md.push_str("\n## Reusability\n\n");
    match report.reusability {
        Some(r) => {
            let _ = writeln!(md, "FFD_{k} - FFD_1 = {r:.6}");
        }
        None => md.push_str("Undefined for a single iteration.\n"),
    }
    md.push_str("\n## Directional checks\n\n");
    match (
        directional_checks(report),
        report.iterations.first(),
        report.iterations.last(),
    ) {
        (Some(d), Some(f), Some(l)) => {
            let _ = writeln!(
                md,
                "- FFD rises from iteration 1 to {k}: {} ({:.6} -> {:.6})",
                verdict(d.ffd_rises),
                f.metrics.ffd,
                l.metrics.ffd
            );
            let _ = writeln!(
                md,
                "- Mean score-difference norm rises: {} ({:.6} -> {:.6})",
                verdict(d.diff_norm_rises),
                f.mean_diff_norm,
                l.mean_diff_norm
            );
            let _ = writeln!(
                md,
                "- Pixel standard deviation shrinks: {} ({:.6} -> {:.6})",
                verdict(d.pixel_std_shrinks),
                f.pixel_std,
                l.pixel_std
            );
        }
        _ => md.push_str("Not applicable for a single iteration.\n"),
    }
    md.push_str("\n## Files\n\n");
    for &g in GRID_ITERATIONS.iter().filter(|&&g| g <= k) {
        let _ = writeln!(md, "- `{}`", grid_name(g));
    }
    md.push_str("- `metrics.csv`, `traces.csv`, `curves.csv`, `tradeoff.csv`\n");
    Ok(md)
}

fn grid_name(k: usize) -> String {
    format!("grid_iter_{k:02}.pgm")
}

/// Writes every report file into `dir`. Sample grids read the generated sets
/// referenced by the report, relative to `dir`.
pub fn emit_report(report: &ChainReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write(&dir.join("metrics.csv"), metrics_csv(&report.records))?;
    write(&dir.join("traces.csv"), trace_rows_csv(&report.traces))?;
    write(&dir.join("curves.csv"), curves_csv(report))?;
    write(&dir.join("tradeoff.csv"), tradeoff_csv(report))?;
    write(&dir.join("report.md"), report_md(report)?)?;
    write_json(&dir.join(REPORT_JSON), report)?;
    for &g in &GRID_ITERATIONS {
        let Some(a) = report.iteration(g) else {
            continue;
        };
        let set = load_set(&dir.join(&a.set_path))?;
        let size = set.image_size().unwrap_or(0);
        let images: Vec<&[f32]> = set
            .samples
            .iter()
            .take(GRID_SAMPLES)
            .map(|s| s.pixels.as_slice())
            .collect();
        write(&dir.join(grid_name(g)), image_row_pgm(&images, size))?;
    }
    if !report.wall_clock.is_empty() {
        write_json(&dir.join("timing.json"), &report.wall_clock)?;
    }
    Ok(())
}

/// Reloads `report.json` from a run directory.
pub fn load_report(dir: &Path) -> Result<ChainReport> {
    read_json(&dir.join(REPORT_JSON))
}
