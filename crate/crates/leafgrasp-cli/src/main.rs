//! `leafgrasp`: scene generation, perception, full batch runs, and exports.
//!
//! Exit codes: 0 success, 2 usage or configuration errors, 3 malformed
//! input files, 4 internal failures. Log verbosity comes from the
//! `LEAFGRASP_LOG` environment variable (error/warn/info/debug/trace).

use clap::{Parser, Subcommand, ValueEnum};
use leafgrasp_core::derive_seed;
use leafgrasp_core::geometry::CameraIntrinsics;
use leafgrasp_core::io::{self, FormatError};
use leafgrasp_core::manifest::{
    execute_manifest, ManifestError, RunManifest, SceneSource,
};
use leafgrasp_core::perception::{
    backproject, filter_outliers, mask_depth, perceive, BinaryMask, Observation,
    Z_SCORE_THRESHOLD,
};
use leafgrasp_core::scenegen::{gen_batch, render, NoiseModel};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "leafgrasp",
    about = "Desk-scale leaf grasping: synthetic foliage, 6D pose perception, planning, and batch metrics",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum Preset {
    Lab,
    Field,
    None,
}

impl Preset {
    fn as_str(self) -> &'static str {
        match self {
            Preset::Lab => "lab",
            Preset::Field => "field",
            Preset::None => "none",
        }
    }
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum ExportFormat {
    Ply,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic batch and write its render to a directory.
    GenScene {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of leaves in the batch.
        #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
        leaves: u32,
        /// Pairwise overlap probability in [0, 1].
        #[arg(long, default_value_t = 0.0)]
        occlusion: f64,
        /// Depth noise preset applied at render time.
        #[arg(long, value_enum, default_value_t = Preset::Lab)]
        preset: Preset,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the perception pipeline over a rendered scene directory.
    Perceive {
        /// Directory holding depth.dpth, mask_*.pbm, and intrinsics.json.
        #[arg(long = "in")]
        input: PathBuf,
        /// Output pose-set file (default: <in>/posesets.json).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Execute a run manifest: render, perceive, plan, grasp, aggregate.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides the manifest's `out_dir`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Master seed override.
        #[arg(long)]
        seed: Option<u64>,
        /// Noise preset override.
        #[arg(long, value_enum)]
        preset: Option<Preset>,
        /// Generated-scene count override.
        #[arg(long)]
        scenes: Option<usize>,
    },
    /// Export clouds + pose axes (ply) or executed paths (csv).
    Export {
        /// Rendered scene directory (required for --format ply).
        #[arg(long = "in")]
        input: Option<PathBuf>,
        /// results.json from a run (required for --format csv).
        #[arg(long)]
        results: Option<PathBuf>,
        #[arg(long, value_enum)]
        format: ExportFormat,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
}

enum CliError {
    Config(String),
    Malformed(String),
    Internal(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Malformed(_) => 3,
            CliError::Internal(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Malformed(m) | CliError::Internal(m) => m,
        }
    }
}

impl From<FormatError> for CliError {
    fn from(e: FormatError) -> Self {
        match e {
            FormatError::Malformed(_) | FormatError::Json(_) => CliError::Malformed(e.to_string()),
            FormatError::Io(_) => CliError::Internal(e.to_string()),
        }
    }
}

impl From<ManifestError> for CliError {
    fn from(e: ManifestError) -> Self {
        match e {
            ManifestError::Config(_) => CliError::Config(e.to_string()),
            ManifestError::Format(f) => f.into(),
            ManifestError::Scene(_) => CliError::Config(e.to_string()),
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter("LEAFGRASP_LOG")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::GenScene {
            seed,
            leaves,
            occlusion,
            preset,
            out,
        } => cmd_gen_scene(seed, leaves as usize, occlusion, preset, &out),
        Command::Perceive { input, out } => cmd_perceive(&input, out.as_deref()),
        Command::Run {
            config,
            out,
            seed,
            preset,
            scenes,
        } => cmd_run(&config, out.as_deref(), seed, preset, scenes),
        Command::Export {
            input,
            results,
            format,
            out,
        } => cmd_export(input.as_deref(), results.as_deref(), format, &out),
    }
}

// ---------------------------------------------------------------------------
// gen-scene
// ---------------------------------------------------------------------------

fn cmd_gen_scene(
    seed: u64,
    leaves: usize,
    occlusion: f64,
    preset: Preset,
    out: &Path,
) -> Result<(), CliError> {
    let mut scene =
        gen_batch(seed, leaves, occlusion).map_err(|e| CliError::Config(e.to_string()))?;
    scene.noise_preset = Some(preset.as_str().to_string());
    let noise = NoiseModel::from_preset(preset.as_str()).expect("preset enum is exhaustive");
    let intrinsics = CameraIntrinsics::default_vga();
    let (obs, masks, gt) = render(&scene, &intrinsics, &noise, derive_seed(seed, &[0xe4de, 0]))
        .map_err(|e| CliError::Config(e.to_string()))?;

    std::fs::create_dir_all(out).map_err(|e| CliError::Internal(e.to_string()))?;
    io::write_scene(&out.join("scene.json"), &scene)?;
    io::write_depth(&out.join("depth.dpth"), &obs.depth)?;
    io::write_intrinsics(&out.join("intrinsics.json"), &intrinsics)?;
    io::write_gt(&out.join("gt.json"), &gt)?;
    for (i, mask) in masks.iter().enumerate() {
        io::write_mask(&out.join(format!("mask_{i:03}.pbm")), mask)?;
    }
    if let Some(rgb) = &obs.rgb {
        io::write_ppm(&out.join("rgb.ppm"), rgb)?;
    }
    println!(
        "wrote scene with {} leaves ({} masks) to {}",
        scene.leaves.len(),
        masks.len(),
        out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// perceive
// ---------------------------------------------------------------------------

fn load_render_dir(
    dir: &Path,
) -> Result<(CameraIntrinsics, Observation, Vec<BinaryMask>), CliError> {
    let intrinsics_path = dir.join("intrinsics.json");
    if !intrinsics_path.exists() {
        return Err(CliError::Config(format!(
            "no intrinsics.json in {}",
            dir.display()
        )));
    }
    let intrinsics = io::read_intrinsics(&intrinsics_path)?;
    let depth_path = dir.join("depth.dpth");
    if !depth_path.exists() {
        return Err(CliError::Config(format!(
            "no depth.dpth in {}",
            dir.display()
        )));
    }
    let depth = io::read_depth(&depth_path)?;

    let mut mask_paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| CliError::Internal(e.to_string()))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("mask_") && n.ends_with(".pbm"))
        })
        .collect();
    mask_paths.sort();
    let masks = mask_paths
        .iter()
        .map(|p| io::read_mask(p))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((intrinsics, Observation { depth, rgb: None }, masks))
}

fn cmd_perceive(input: &Path, out: Option<&Path>) -> Result<(), CliError> {
    let (intrinsics, obs, masks) = load_render_dir(input)?;
    let result = perceive(&obs, &masks, &intrinsics);
    for drop in &result.dropped {
        println!("dropped leaf {}: {}", drop.leaf_id, drop.reason);
    }
    let out_path = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| input.join("posesets.json"));
    io::write_posesets(&out_path, &result.posesets)?;
    println!(
        "perceived {} of {} leaves -> {}",
        result.posesets.len(),
        masks.len(),
        out_path.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// run
// ---------------------------------------------------------------------------

fn cmd_run(
    config: &Path,
    out: Option<&Path>,
    seed: Option<u64>,
    preset: Option<Preset>,
    scenes: Option<usize>,
) -> Result<(), CliError> {
    if !config.exists() {
        return Err(CliError::Config(format!(
            "config file not found: {}",
            config.display()
        )));
    }
    let mut manifest: RunManifest = io::read_json(config)?;
    if let Some(seed) = seed {
        manifest.seed = seed;
    }
    if let Some(preset) = preset {
        manifest.noise_preset = preset.as_str().to_string();
    }
    if let Some(n) = scenes {
        match &mut manifest.scenes {
            SceneSource::Generate { count, .. } => *count = n,
            SceneSource::Files(_) => {
                return Err(CliError::Config(
                    "--scenes only applies to generated-scene manifests".into(),
                ))
            }
        }
    }
    let out_dir = out
        .map(Path::to_path_buf)
        .or_else(|| manifest.out_dir.clone())
        .ok_or_else(|| {
            CliError::Config("no output directory (pass --out or set out_dir)".into())
        })?;

    let base_dir = config.parent().unwrap_or_else(|| Path::new("."));
    let output = execute_manifest(&manifest, base_dir)?;

    std::fs::create_dir_all(&out_dir).map_err(|e| CliError::Internal(e.to_string()))?;
    let results = io::results_to_json(&output.doc)?;
    io::write_atomic(&out_dir.join("results.json"), results.as_bytes())?;
    let metrics = io::metrics_csv(&manifest.noise_preset, &output.report);
    io::write_atomic(&out_dir.join("metrics.csv"), metrics.as_bytes())?;
    let spectra = io::spectra_csv(&output.doc.batches);
    io::write_atomic(&out_dir.join("spectra.csv"), spectra.as_bytes())?;

    let r = &output.report;
    println!(
        "{} batches, {} approaches, {} grasped ({:.1}%)",
        r.n_batches, r.total_approaches, r.successful_approaches, r.grasp_success_rate_pct
    );
    println!(
        "LPB availability {:.1}/{:.1}/{:.1}%, success {:.1}/{:.1}/{:.1}%",
        r.rows[0].availability_pct,
        r.rows[1].availability_pct,
        r.rows[2].availability_pct,
        r.rows[0].success_pct,
        r.rows[1].success_pct,
        r.rows[2].success_pct
    );
    println!("results in {}", out_dir.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// export
// ---------------------------------------------------------------------------

fn cmd_export(
    input: Option<&Path>,
    results: Option<&Path>,
    format: ExportFormat,
    out: &Path,
) -> Result<(), CliError> {
    std::fs::create_dir_all(out).map_err(|e| CliError::Internal(e.to_string()))?;
    match format {
        ExportFormat::Ply => {
            let dir = input.ok_or_else(|| {
                CliError::Config("--format ply needs --in <render dir>".into())
            })?;
            let (intrinsics, obs, masks) = load_render_dir(dir)?;
            let perception = perceive(&obs, &masks, &intrinsics);
            // Rebuild the filtered clouds the pose sets came from.
            let mut clouds = Vec::new();
            for ps in &perception.posesets {
                let masked = mask_depth(&obs.depth, &masks[ps.leaf_id])
                    .map_err(|e| CliError::Internal(e.to_string()))?;
                let cloud = backproject(&masked, &intrinsics, ps.leaf_id)
                    .map_err(|e| CliError::Internal(e.to_string()))?;
                let filtered = filter_outliers(&cloud, Z_SCORE_THRESHOLD);
                clouds.push((ps.leaf_id, filtered.points));
            }
            let ply = io::clouds_ply(&clouds, &perception.posesets);
            let path = out.join("clouds.ply");
            io::write_atomic(&path, ply.as_bytes())?;
            println!(
                "wrote {} ({} leaves, {} pose sets)",
                path.display(),
                clouds.len(),
                perception.posesets.len()
            );
        }
        ExportFormat::Csv => {
            let results_path = results.ok_or_else(|| {
                CliError::Config("--format csv needs --results <results.json>".into())
            })?;
            if !results_path.exists() {
                return Err(CliError::Config(format!(
                    "results file not found: {}",
                    results_path.display()
                )));
            }
            let doc: io::ResultsDoc = io::read_json(results_path)?;
            let dof = doc
                .batches
                .iter()
                .flat_map(|b| &b.approaches)
                .find_map(|a| a.path.as_ref().and_then(|p| p.first()).map(Vec::len))
                .unwrap_or(6);
            let csv = io::paths_csv(&doc.batches, dof);
            let path = out.join("paths.csv");
            io::write_atomic(&path, csv.as_bytes())?;
            let rows = csv.lines().count() - 1;
            println!("wrote {path_d} ({rows} waypoints)", path_d = path.display());
        }
    }
    Ok(())
}
