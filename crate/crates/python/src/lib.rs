//! Python access to the simulator, localization and planning pipeline.
//! Structured results cross the boundary as JSON text.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use mvrearrange::geometry::{self, UnitVec3, Vec3};
use mvrearrange::harness::{self, BenchConfig, HarnessError, Workbench};
use mvrearrange::localization::pose_report;

fn runtime(e: HarnessError) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn to_json<T: serde::Serialize>(value: &T) -> PyResult<String> {
    serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

/// Parses a TOML bench configuration; empty text gives the defaults.
fn config(text: Option<&str>, scenes: Option<usize>, seed: Option<u64>) -> PyResult<BenchConfig> {
    let mut cfg: BenchConfig = match text {
        Some(t) => toml::from_str(t).map_err(|e| PyValueError::new_err(e.to_string()))?,
        None => BenchConfig::default(),
    };
    if let Some(n) = scenes {
        cfg.scenes = n;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn unit(v: [f64; 3]) -> PyResult<UnitVec3> {
    UnitVec3::new(Vec3::from(v)).map_err(|e| PyValueError::new_err(e.to_string()))
}

#[pyfunction]
fn angular_distance(a: [f64; 3], b: [f64; 3]) -> PyResult<f64> {
    Ok(geometry::angular_distance(&unit(a)?, &unit(b)?))
}

#[pyfunction]
fn median(values: Vec<f64>) -> Option<f64> {
    harness::median(&values)
}

#[pyfunction]
fn default_config() -> PyResult<String> {
    toml::to_string(&BenchConfig::default()).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

/// Pose report of one scene as JSON.
#[pyfunction]
#[pyo3(signature = (seed, config=None))]
fn localize(py: Python<'_>, seed: u64, config: Option<&str>) -> PyResult<String> {
    let cfg = self::config(config, None, Some(seed))?;
    let report = py.detach(|| -> Result<_, HarnessError> {
        let regime = cfg.regimes.first().copied().unwrap_or(cfg.sim.rotation);
        let wb = Workbench::new(cfg.clone())?;
        let inst = wb.instance(seed, regime)?;
        let db = wb.database(&inst, harness::ViewMode::MultiView)?;
        Ok(pose_report(&wb.localize(&inst, &db)?))
    });
    to_json(&report.map_err(runtime)?)
}

/// Full localize-and-rearrange run of one scene; returns the execution
/// result (move log, counts, final scene) as JSON.
#[pyfunction]
#[pyo3(signature = (seed, config=None))]
fn rearrange(py: Python<'_>, seed: u64, config: Option<&str>) -> PyResult<String> {
    let cfg = self::config(config, None, Some(seed))?;
    let exec = py.detach(|| -> Result<_, HarnessError> {
        let regime = cfg.regimes.first().copied().unwrap_or(cfg.sim.rotation);
        let wb = Workbench::new(cfg.clone())?;
        let inst = wb.instance(seed, regime)?;
        let db = wb.database(&inst, harness::ViewMode::MultiView)?;
        let objects = wb.localize(&inst, &db)?;
        wb.rearrange(&inst, &db, &objects)
    });
    to_json(&exec.map_err(runtime)?)
}

/// Pose bench summary as JSON.
#[pyfunction]
#[pyo3(signature = (config=None, scenes=None, seed=None))]
fn bench_pose(py: Python<'_>, config: Option<&str>, scenes: Option<usize>, seed: Option<u64>) -> PyResult<String> {
    let cfg = self::config(config, scenes, seed)?;
    let report = py.detach(|| harness::run_pose_bench(&cfg)).map_err(runtime)?;
    to_json(&report)
}

/// Completion bench summary as JSON.
#[pyfunction]
#[pyo3(signature = (config=None, scenes=None, seed=None))]
fn bench_completion(py: Python<'_>, config: Option<&str>, scenes: Option<usize>, seed: Option<u64>) -> PyResult<String> {
    let cfg = self::config(config, scenes, seed)?;
    let report = py.detach(|| harness::run_completion_bench(&cfg)).map_err(runtime)?;
    to_json(&report)
}

#[pymodule]
fn mvrearrange_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(angular_distance, m)?)?;
    m.add_function(wrap_pyfunction!(median, m)?)?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(localize, m)?)?;
    m.add_function(wrap_pyfunction!(rearrange, m)?)?;
    m.add_function(wrap_pyfunction!(bench_pose, m)?)?;
    m.add_function(wrap_pyfunction!(bench_completion, m)?)?;
    Ok(())
}
