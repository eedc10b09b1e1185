use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::metrics::MetricsReport;
use super::{BenchConfig, HarnessError};
use crate::sim::RearrangementInstance;

pub const DATASET_FORMAT: &str = "mvrearrange-dataset";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn format_err(path: &Path, e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

pub fn load_config(path: &Path) -> Result<BenchConfig, HarnessError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    toml::from_str(&text).map_err(|e| HarnessError::ConfigParse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), HarnessError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| format_err(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, HarnessError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| format_err(path, e))
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| format_err(path, e))?;
    for row in rows {
        w.serialize(row).map_err(|e| format_err(path, e))?;
    }
    w.flush().map_err(io_err(path))
}

fn cell(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.digits$}"))
}

/// Plain-text tables of a report. Includes the wall-clock time, which the
/// machine-readable files leave out.
pub fn render_table(report: &MetricsReport) -> String {
    let mut out = String::new();
    if !report.pose.is_empty() {
        let _ = writeln!(
            out,
            "{:<8} {:<12} {:>6} {:>7} {:>8} {:>10} {:>10} {:>9} {:>7}",
            "regime", "view", "scenes", "objects", "accepted", "med_rot°", "med_t_cm", "retrieval", "purity"
        );
        for s in &report.pose {
            let _ = writeln!(
                out,
                "{:<8} {:<12} {:>6} {:>7} {:>8} {:>10} {:>10} {:>9} {:>7}",
                s.regime.name(),
                s.view.name(),
                s.scenes,
                s.objects,
                s.accepted,
                cell(s.median_rotation_deg, 3),
                cell(s.median_translation_cm, 3),
                cell(s.retrieval_accuracy.map(|f| 100.0 * f), 1),
                cell(s.purity_rate.map(|f| 100.0 * f), 1),
            );
        }
    }
    if !report.completion.is_empty() {
        let _ = writeln!(
            out,
            "{:<8} {:>6} {:>11} {:>10} {:>13} {:>8}",
            "regime", "scenes", "multi_step%", "one_step%", "manipulations", "buffers"
        );
        for s in &report.completion {
            let _ = writeln!(
                out,
                "{:<8} {:>6} {:>11} {:>10} {:>13} {:>8}",
                s.regime.name(),
                s.scenes,
                cell(s.multi_step_rate, 1),
                cell(s.one_step_rate, 1),
                s.manipulations,
                s.buffer_moves
            );
        }
    }
    if !report.skipped.is_empty() {
        let _ = writeln!(out, "skipped: {}", report.skipped.join(", "));
    }
    let _ = writeln!(out, "wall clock: {:.2} s", report.wall_clock.as_secs_f64());
    out
}

/// Writes `summary.json`, the row files and `summary.txt` into `dir`.
/// Returns the paths written.
pub fn write_report(report: &MetricsReport, dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut written = vec![dir.join("summary.json")];
    write_json(&written[0], report)?;
    if !report.pose_records.is_empty() {
        let p = dir.join("pose_rows.csv");
        write_csv(&p, &report.pose_records)?;
        written.push(p);
    }
    if !report.completion_records.is_empty() {
        let p = dir.join("completion_rows.csv");
        write_csv(&p, &report.completion_records)?;
        written.push(p);
    }
    let p = dir.join("summary.txt");
    fs::write(&p, render_table(report)).map_err(io_err(&p))?;
    written.push(p);
    Ok(written)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    pub config: BenchConfig,
    /// Instance files relative to the manifest.
    pub scenes: Vec<String>,
}

pub fn write_dataset(
    dir: &Path,
    config: &BenchConfig,
    instances: &[RearrangementInstance],
) -> Result<PathBuf, HarnessError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut scenes = Vec::new();
    for inst in instances {
        let name = format!("scene_{}_{}.json", inst.config.rotation.name(), inst.config.seed);
        write_json(&dir.join(&name), inst)?;
        scenes.push(name);
    }
    let manifest = DatasetManifest {
        format: DATASET_FORMAT.to_string(),
        config: config.clone(),
        scenes,
    };
    let path = dir.join("manifest.json");
    write_json(&path, &manifest)?;
    Ok(path)
}

pub fn read_dataset(manifest_path: &Path) -> Result<(DatasetManifest, Vec<RearrangementInstance>), HarnessError> {
    let manifest: DatasetManifest = read_json(manifest_path)?;
    if manifest.format != DATASET_FORMAT {
        return Err(format_err(manifest_path, format!("unexpected format {:?}", manifest.format)));
    }
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let instances = manifest
        .scenes
        .iter()
        .map(|name| read_json(&dir.join(name)))
        .collect::<Result<_, _>>()?;
    Ok((manifest, instances))
}
