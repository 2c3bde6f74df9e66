//! Python bindings for the leaf-grasping pipeline.
//!
//! Exposes the synthetic scene generator, the renderer, the perception
//! pipeline, the arm kinematics, and the manifest runner. Structured data
//! crosses the boundary as JSON strings (the same schemas the CLI writes);
//! aggregate metrics come back as a plain dict.
//!
//! ```python
//! import leafgrasp_py as lg
//!
//! scene = lg.Scene.generate(seed=42, n_leaves=3, occlusion=0.0)
//! render = scene.render(lg.CameraIntrinsics.default_vga(), "lab", seed=0)
//! posesets, dropped = lg.perceive(render)
//! metrics = lg.simulate(seed=7, scenes=10, leaves_min=1, leaves_max=3,
//!                       occlusion=0.2, preset="lab")
//! ```

use leafgrasp_core::geometry::{CameraIntrinsics as CoreIntrinsics, Pose, UnitQuat, Vec3};
use leafgrasp_core::kinematics::{fk, solve_ik, ArmModel, IkConfig, JointVector};
use leafgrasp_core::manifest::{execute_manifest, RunManifest};
use leafgrasp_core::perception::{perceive as core_perceive, BinaryMask, Observation};
use leafgrasp_core::scenegen::{gen_batch, render as core_render, GtRecord, NoiseModel, Scene as CoreScene};
use leafgrasp_core::workflow::{lpb_metrics, LpbReport};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use std::path::Path;

type Position = (f64, f64, f64);
type Quaternion = (f64, f64, f64, f64);

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Pinhole camera intrinsics; integer pixel coordinates address centers.
#[pyclass(name = "CameraIntrinsics", skip_from_py_object)]
#[derive(Clone)]
struct PyIntrinsics {
    inner: CoreIntrinsics,
}

#[pymethods]
impl PyIntrinsics {
    #[new]
    fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> PyResult<Self> {
        let inner = CoreIntrinsics::new(fx, fy, cx, cy, width, height);
        inner.validate().map_err(value_err)?;
        Ok(Self { inner })
    }

    /// The 640x480 default lens used by the CLI.
    #[staticmethod]
    fn default_vga() -> Self {
        Self {
            inner: CoreIntrinsics::default_vga(),
        }
    }

    #[getter]
    fn width(&self) -> u32 {
        self.inner.width
    }

    #[getter]
    fn height(&self) -> u32 {
        self.inner.height
    }

    fn __repr__(&self) -> String {
        format!(
            "CameraIntrinsics(fx={}, fy={}, cx={}, cy={}, width={}, height={})",
            self.inner.fx,
            self.inner.fy,
            self.inner.cx,
            self.inner.cy,
            self.inner.width,
            self.inner.height
        )
    }
}

/// A rendered observation: depth, per-leaf masks, and ground truth.
#[pyclass(name = "Render")]
struct PyRender {
    observation: Observation,
    masks: Vec<BinaryMask>,
    gt: Vec<GtRecord>,
    intrinsics: CoreIntrinsics,
}

#[pymethods]
impl PyRender {
    #[getter]
    fn width(&self) -> u32 {
        self.observation.depth.width()
    }

    #[getter]
    fn height(&self) -> u32 {
        self.observation.depth.height()
    }

    #[getter]
    fn num_leaves(&self) -> usize {
        self.masks.len()
    }

    /// Row-major depth in meters; 0 marks missing values.
    fn depth(&self) -> Vec<f32> {
        self.observation.depth.values().to_vec()
    }

    /// Row-major boolean mask of leaf `i`.
    fn mask(&self, i: usize) -> PyResult<Vec<bool>> {
        self.masks
            .get(i)
            .map(|m| m.bits().to_vec())
            .ok_or_else(|| PyValueError::new_err(format!("no mask {i}")))
    }

    /// Ground-truth records (camera frame) as a JSON array.
    fn gt_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.gt).map_err(value_err)
    }

    fn __repr__(&self) -> String {
        format!(
            "Render({}x{}, {} leaves)",
            self.width(),
            self.height(),
            self.masks.len()
        )
    }
}

/// A synthetic foliage batch.
#[pyclass(name = "Scene", skip_from_py_object)]
#[derive(Clone)]
struct PyScene {
    inner: CoreScene,
}

#[pymethods]
impl PyScene {
    /// Deterministically generates a batch of leaves at the 0.5 m standoff.
    #[staticmethod]
    #[pyo3(signature = (seed, n_leaves, occlusion=0.0))]
    fn generate(seed: u64, n_leaves: usize, occlusion: f64) -> PyResult<Self> {
        Ok(Self {
            inner: gen_batch(seed, n_leaves, occlusion).map_err(value_err)?,
        })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: serde_json::from_str(text).map_err(value_err)?,
        })
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string_pretty(&self.inner).map_err(value_err)
    }

    #[getter]
    fn n_leaves(&self) -> usize {
        self.inner.leaves.len()
    }

    /// Renders the scene to depth + masks + ground truth under a noise
    /// preset ("lab", "field", or "none").
    #[pyo3(signature = (intrinsics, preset="lab", seed=0))]
    fn render(&self, intrinsics: &PyIntrinsics, preset: &str, seed: u64) -> PyResult<PyRender> {
        let noise = NoiseModel::from_preset(preset).map_err(value_err)?;
        let (observation, masks, gt) =
            core_render(&self.inner, &intrinsics.inner, &noise, seed).map_err(value_err)?;
        Ok(PyRender {
            observation,
            masks,
            gt,
            intrinsics: intrinsics.inner,
        })
    }

    fn __repr__(&self) -> String {
        format!("Scene({} leaves, standoff {})", self.inner.leaves.len(), self.inner.standoff)
    }
}

/// A DH serial arm with damped least-squares IK.
#[pyclass(name = "Arm")]
struct PyArm {
    inner: ArmModel,
}

#[pymethods]
impl PyArm {
    /// The built-in 900 mm-class 6-DOF chain.
    #[staticmethod]
    fn default() -> Self {
        Self {
            inner: ArmModel::default_6dof(),
        }
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner: ArmModel = serde_json::from_str(text).map_err(value_err)?;
        inner.validate().map_err(value_err)?;
        Ok(Self { inner })
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string_pretty(&self.inner).map_err(value_err)
    }

    #[getter]
    fn dof(&self) -> usize {
        self.inner.dof()
    }

    #[getter]
    fn reach(&self) -> f64 {
        self.inner.reach()
    }

    /// Forward kinematics: joint angles (radians) to
    /// `((x, y, z), (w, qx, qy, qz))`.
    fn fk(&self, q: Vec<f64>) -> PyResult<(Position, Quaternion)> {
        let pose = fk(&self.inner, &JointVector::new(q)).map_err(value_err)?;
        Ok((
            (pose.position.x, pose.position.y, pose.position.z),
            (
                pose.orientation.w,
                pose.orientation.x,
                pose.orientation.y,
                pose.orientation.z,
            ),
        ))
    }

    /// Damped least-squares IK; returns joint angles or None when no
    /// solution meets the tolerances.
    #[pyo3(signature = (position, quaternion, seed_q=None, rng_seed=0))]
    fn solve_ik(
        &self,
        position: Position,
        quaternion: Quaternion,
        seed_q: Option<Vec<f64>>,
        rng_seed: u64,
    ) -> PyResult<Option<Vec<f64>>> {
        let target = Pose::new(
            Vec3::new(position.0, position.1, position.2),
            UnitQuat::from_components(quaternion.0, quaternion.1, quaternion.2, quaternion.3),
        );
        let seed = JointVector::new(seed_q.unwrap_or_else(|| vec![0.0; self.inner.dof()]));
        if seed.len() != self.inner.dof() {
            return Err(PyValueError::new_err(format!(
                "seed has {} joints, arm has {}",
                seed.len(),
                self.inner.dof()
            )));
        }
        let cfg = IkConfig {
            rng_seed,
            ..IkConfig::default()
        };
        match solve_ik(&self.inner, &target, &seed, &cfg) {
            Ok(q) => Ok(Some(q.angles)),
            Err(leafgrasp_core::kinematics::KinematicsError::NoSolution) => Ok(None),
            Err(e) => Err(value_err(e)),
        }
    }

    fn __repr__(&self) -> String {
        format!("Arm({} links, reach {:.3} m)", self.inner.dof(), self.inner.reach())
    }
}

/// Runs the perception pipeline over a render.
///
/// Returns `(posesets_json, dropped)` where `posesets_json` is the same
/// JSON array the CLI writes and `dropped` is a list of
/// `(leaf_id, reason)` tuples.
#[pyfunction]
fn perceive(render: &PyRender) -> PyResult<(String, Vec<(usize, String)>)> {
    let out = core_perceive(&render.observation, &render.masks, &render.intrinsics);
    let json = serde_json::to_string_pretty(&out.posesets).map_err(value_err)?;
    let dropped = out
        .dropped
        .into_iter()
        .map(|d| (d.leaf_id, d.reason))
        .collect();
    Ok((json, dropped))
}

fn report_to_dict<'py>(py: Python<'py>, report: &LpbReport) -> PyResult<Bound<'py, PyDict>> {
    let dict = PyDict::new(py);
    dict.set_item("n_batches", report.n_batches)?;
    dict.set_item("total_approaches", report.total_approaches)?;
    dict.set_item("successful_approaches", report.successful_approaches)?;
    dict.set_item("grasp_success_rate_pct", report.grasp_success_rate_pct)?;
    for row in &report.rows {
        dict.set_item(format!("lpb{}_avail_pct", row.k), row.availability_pct)?;
        dict.set_item(format!("lpb{}_success_pct", row.k), row.success_pct)?;
    }
    Ok(dict)
}

/// Generates, renders, perceives, and grasps `scenes` seeded batches and
/// returns `(results_json, metrics_dict)` — the in-memory equivalent of
/// `leafgrasp run`.
#[pyfunction]
#[pyo3(signature = (seed, scenes, leaves_min=1, leaves_max=3, occlusion=0.0, preset="lab"))]
fn simulate<'py>(
    py: Python<'py>,
    seed: u64,
    scenes: usize,
    leaves_min: usize,
    leaves_max: usize,
    occlusion: f64,
    preset: &str,
) -> PyResult<(String, Bound<'py, PyDict>)> {
    let mut manifest = RunManifest::generate(seed, scenes, leaves_min, leaves_max, occlusion);
    manifest.noise_preset = preset.to_string();
    let output = execute_manifest(&manifest, Path::new("."))
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    let results = leafgrasp_core::io::results_to_json(&output.doc)
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok((results, report_to_dict(py, &output.report)?))
}

/// Executes a full run-manifest JSON document (see the CLI's `run`
/// command); returns `(results_json, metrics_dict)`.
#[pyfunction]
#[pyo3(signature = (manifest_json, base_dir="."))]
fn run_manifest<'py>(
    py: Python<'py>,
    manifest_json: &str,
    base_dir: &str,
) -> PyResult<(String, Bound<'py, PyDict>)> {
    let manifest: RunManifest = serde_json::from_str(manifest_json).map_err(value_err)?;
    let output = execute_manifest(&manifest, Path::new(base_dir))
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    let results = leafgrasp_core::io::results_to_json(&output.doc)
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok((results, report_to_dict(py, &output.report)?))
}

/// Recomputes LPB metrics from a results.json document.
#[pyfunction]
fn metrics_from_results<'py>(py: Python<'py>, results_json: &str) -> PyResult<Bound<'py, PyDict>> {
    let doc: leafgrasp_core::io::ResultsDoc =
        serde_json::from_str(results_json).map_err(value_err)?;
    let report = lpb_metrics(&doc.batches).map_err(value_err)?;
    report_to_dict(py, &report)
}

#[pymodule]
fn leafgrasp_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyIntrinsics>()?;
    m.add_class::<PyScene>()?;
    m.add_class::<PyRender>()?;
    m.add_class::<PyArm>()?;
    m.add_function(wrap_pyfunction!(perceive, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(run_manifest, m)?)?;
    m.add_function(wrap_pyfunction!(metrics_from_results, m)?)?;
    Ok(())
}
