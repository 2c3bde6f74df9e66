//! Reproducible multi-scene runs described by a JSON manifest.
//!
//! A manifest pins everything a run needs: where scenes come from (a seeded
//! generator or scene files), the camera, the arm, the camera-to-base
//! extrinsic, planner and IK knobs, the noise preset, and one master seed.
//! Executing the same manifest twice produces byte-identical results.

use crate::derive_seed;
use crate::geometry::{CameraIntrinsics, Transform};
use crate::io::{read_json, FormatError, ResultsDoc, SceneDropLog};
use crate::kinematics::{ArmModel, IkConfig, JointVector};
use crate::perception::perceive;
use crate::planning::{ObstacleBox, PlannerConfig};
use crate::scenegen::{gen_batch, render, NoiseModel, Scene, SceneGenError};
use crate::workflow::{
    lpb_metrics, run_batch, BatchInput, BatchRun, GraspConfig, LpbReport, RunParams, SensorConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("scene error: {0}")]
    Scene(#[from] SceneGenError),
}

/// Where the run's scenes come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SceneSource {
    /// Generate `count` scenes with `leaves_min..=leaves_max` leaves each.
    #[serde(rename = "generate")]
    Generate {
        count: usize,
        leaves_min: usize,
        leaves_max: usize,
        occlusion: f64,
    },
    /// Load scene JSON files (relative paths resolve against the manifest).
    #[serde(rename = "files")]
    Files(Vec<PathBuf>),
}

/// The full run description. Every field except `scenes` has a default, so
/// a minimal manifest is just a scene source and a seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub scenes: SceneSource,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_preset")]
    pub noise_preset: String,
    /// Inline intrinsics; the VGA default when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intrinsics: Option<CameraIntrinsics>,
    /// Arm description file; the built-in 6-DOF model when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arm_file: Option<PathBuf>,
    /// Camera-to-base transform; a bench-style default mount when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extrinsic: Option<Transform>,
    #[serde(default)]
    pub planner: PlannerConfig,
    #[serde(default)]
    pub ik: IkConfig,
    #[serde(default)]
    pub grasp: GraspConfig,
    #[serde(default)]
    pub sensor: SensorConfig,
    /// Home configuration (radians); a neutral elbow-up pose when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub home: Option<Vec<f64>>,
    #[serde(default)]
    pub record_paths: bool,
    /// Where results land; a CLI `--out` flag overrides it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
}

fn default_preset() -> String {
    "lab".to_string()
}

impl RunManifest {
    /// A generated-scene manifest with all defaults.
    pub fn generate(seed: u64, count: usize, leaves_min: usize, leaves_max: usize, occlusion: f64) -> Self {
        Self {
            scenes: SceneSource::Generate {
                count,
                leaves_min,
                leaves_max,
                occlusion,
            },
            seed,
            noise_preset: default_preset(),
            intrinsics: None,
            arm_file: None,
            extrinsic: None,
            planner: PlannerConfig::default(),
            ik: IkConfig::default(),
            grasp: GraspConfig::default(),
            sensor: SensorConfig::default(),
            home: None,
            record_paths: false,
            out_dir: None,
        }
    }
}

/// Everything a run produces in memory.
#[derive(Debug)]
pub struct RunOutput {
    pub doc: ResultsDoc,
    pub report: LpbReport,
    pub arm_dof: usize,
}

/// Builds the scene list a manifest describes.
pub fn manifest_scenes(
    manifest: &RunManifest,
    base_dir: &Path,
) -> Result<Vec<Scene>, ManifestError> {
    match &manifest.scenes {
        SceneSource::Generate {
            count,
            leaves_min,
            leaves_max,
            occlusion,
        } => {
            if *count == 0 {
                return Err(ManifestError::Config("scene count must be positive".into()));
            }
            if *leaves_min == 0 || leaves_min > leaves_max {
                return Err(ManifestError::Config(format!(
                    "invalid leaf count range {leaves_min}..={leaves_max}"
                )));
            }
            let mut scenes = Vec::with_capacity(*count);
            for i in 0..*count {
                let mut rng =
                    ChaCha8Rng::seed_from_u64(derive_seed(manifest.seed, &[0x5ce0, i as u64]));
                let n = rng.random_range(*leaves_min..=*leaves_max);
                scenes.push(gen_batch(
                    derive_seed(manifest.seed, &[0x5ce1, i as u64]),
                    n,
                    *occlusion,
                )?);
            }
            Ok(scenes)
        }
        SceneSource::Files(files) => {
            if files.is_empty() {
                return Err(ManifestError::Config("scene file list is empty".into()));
            }
            files
                .iter()
                .map(|f| {
                    let path = resolve(base_dir, f);
                    if !path.exists() {
                        return Err(ManifestError::Config(format!(
                            "scene file not found: {}",
                            path.display()
                        )));
                    }
                    Ok(crate::io::read_scene(&path)?)
                })
                .collect()
        }
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn load_arm(manifest: &RunManifest, base_dir: &Path) -> Result<ArmModel, ManifestError> {
    let arm = match &manifest.arm_file {
        None => ArmModel::default_6dof(),
        Some(file) => {
            let path = resolve(base_dir, file);
            if !path.exists() {
                return Err(ManifestError::Config(format!(
                    "arm file not found: {}",
                    path.display()
                )));
            }
            read_json::<ArmModel>(&path)?
        }
    };
    arm.validate()
        .map_err(|e| ManifestError::Config(e.to_string()))?;
    Ok(arm)
}

/// Executes a manifest: for every scene, render -> perceive -> run the
/// manipulation workflow, then aggregate LPB metrics. Scenes run in
/// parallel; outputs are merged in scene order so results stay
/// deterministic.
pub fn execute_manifest(
    manifest: &RunManifest,
    base_dir: &Path,
) -> Result<RunOutput, ManifestError> {
    let intrinsics = manifest.intrinsics.unwrap_or_else(CameraIntrinsics::default_vga);
    intrinsics
        .validate()
        .map_err(|e| ManifestError::Config(e.to_string()))?;
    let noise = NoiseModel::from_preset(&manifest.noise_preset)
        .map_err(|e| ManifestError::Config(e.to_string()))?;
    let arm = load_arm(manifest, base_dir)?;
    let scenes = manifest_scenes(manifest, base_dir)?;

    let mut params = RunParams {
        extrinsic: manifest
            .extrinsic
            .unwrap_or_else(crate::workflow::default_extrinsic),
        planner: manifest.planner,
        ik: manifest.ik,
        grasp: manifest.grasp,
        sensor: manifest.sensor,
        seed: manifest.seed,
        record_paths: manifest.record_paths,
        ..RunParams::default()
    };
    if let Some(home) = &manifest.home {
        if home.len() != arm.dof() {
            return Err(ManifestError::Config(format!(
                "home configuration has {} joints, arm has {}",
                home.len(),
                arm.dof()
            )));
        }
        params.home = JointVector::new(home.clone());
    }

    let outcomes: Vec<Result<(BatchRun, SceneDropLog), ManifestError>> = scenes
        .par_iter()
        .enumerate()
        .map(|(i, scene)| run_scene(i as u64, scene, &intrinsics, &noise, &arm, &params))
        .collect();

    let mut batches = Vec::with_capacity(outcomes.len());
    let mut dropped_leaves = Vec::with_capacity(outcomes.len());
    for outcome in outcomes {
        let (batch, drops) = outcome?;
        log::info!(
            "scene {}: {} approaches, {} grasped, {:.2}s",
            batch.scene_id,
            batch.approaches.iter().filter(|a| a.is_approach()).count(),
            batch.approaches.iter().filter(|a| a.grasped).count(),
            batch.wall_time
        );
        batches.push(batch);
        dropped_leaves.push(drops);
    }

    let report = lpb_metrics(&batches).map_err(|e| ManifestError::Config(e.to_string()))?;
    let doc = ResultsDoc {
        manifest: serde_json::to_value(manifest).map_err(FormatError::from)?,
        batches,
        dropped_leaves,
    };
    Ok(RunOutput {
        doc,
        report,
        arm_dof: arm.dof(),
    })
}

/// Renders, perceives, and runs one scene end to end.
pub fn run_scene(
    scene_id: u64,
    scene: &Scene,
    intrinsics: &CameraIntrinsics,
    noise: &NoiseModel,
    arm: &ArmModel,
    params: &RunParams,
) -> Result<(BatchRun, SceneDropLog), ManifestError> {
    let render_seed = derive_seed(params.seed, &[0xe4de, scene_id]);
    let (obs, masks, gt) = render(scene, intrinsics, noise, render_seed)?;
    let perception = perceive(&obs, &masks, intrinsics);
    let obstacles = scene
        .camera_frame_leaves()
        .iter()
        .enumerate()
        .map(|(j, (pose, leaf))| ObstacleBox::for_leaf(*pose, leaf.length, leaf.width, j))
        .collect();
    let input = BatchInput {
        scene_id,
        posesets: perception.posesets,
        gt,
        obstacles,
    };
    let batch = run_batch(&input, arm, params);
    Ok((
        batch,
        SceneDropLog {
            scene_id,
            dropped: perception.dropped,
        },
    ))
}
