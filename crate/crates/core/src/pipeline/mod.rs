//! Staged pipeline over on-disk artifacts.
//!
//! Stages run in order (parse, pose refinement, placement, manifest export,
//! evaluation) and every stage reads its inputs from files written by the
//! previous one, so any boundary can be replaced by an external tool. Keyframe
//! jobs inside a stage run in parallel; their outputs are written in keyframe
//! order after the stage finishes.

pub mod demo;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, Luma};
use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::io::{load_labeled_mesh, load_mesh, write_obj};
use crate::geometry::TriMesh;
use crate::losses::annotation::{ContactAnnotation, ContactEntry, ObjectPointSource, ObjectRegions, CONTACT_VERSION};
use crate::losses::{ContactSpec, DEFAULT_K};
use crate::metrics::{evaluate_scene, write_pose_vectors, write_report, MetricsReport, MetricsSettings, PoseParamSet};
use crate::optim::OptimConfig;
use crate::placement::{
    apply_placement, optimize_placement, trace_to_csv, MaskTargets, PenetrationPoints, PlacementFile, PlacementParams, PlacementProblem,
    PlacementResult, SdfSettings,
};
use crate::posefit::{
    default_posefit_config, pose_trace_to_csv, read_depth, read_pose, refine_object_pose_weighted, write_pose, yaw_sweep, PoseFitResult,
    PoseWeights, DEFAULT_YAW_CANDIDATES,
};
use crate::scriptplan::{build_keyframe_plan, export_plan, parse_script, write_manifest, ActionScript, KeyframePlan, PlanManifest, DEFAULT_DURATION_HINT, DEFAULT_TRANSITION};
use crate::silhouette::io::{read_binary_mask, read_camera, write_binary_mask};
use crate::silhouette::{rasterize_silhouette, BinaryMask};

pub const CONFIG_VERSION: u32 = 1;

pub const SCRIPT_FILE: &str = "script.txt";
pub const PLAN_FILE: &str = "plan.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const REPORT_FILE: &str = "metrics.json";
pub const SCENE_FILE: &str = "scene.obj";
pub const POSES_FILE: &str = "poses.bin";
pub const RUN_FILE: &str = "run.json";
pub const CONFIG_COPY_FILE: &str = "config.json";

pub const POSE_FILE: &str = "pose.json";
pub const POSE_TRACE_FILE: &str = "pose_trace.csv";
pub const OBJECT_FILE: &str = "object.obj";
pub const PLACEMENT_FILE: &str = "placement.json";
pub const PLACEMENT_TRACE_FILE: &str = "placement_trace.csv";
pub const HUMAN_FILE: &str = "human.obj";
pub const MASK_H_FILE: &str = "mask_h.png";
pub const MASK_HOI_FILE: &str = "mask_hoi.png";
pub const PREVIEW_FILE: &str = "preview.png";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Config,
    Parse,
    Posefit,
    Placement,
    Export,
    Metrics,
}

impl Stage {
    pub fn exit_code(self) -> i32 {
        match self {
            Stage::Config => 2,
            Stage::Parse => 10,
            Stage::Posefit => 11,
            Stage::Placement => 12,
            Stage::Export => 13,
            Stage::Metrics => 14,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Stage::Config => "config",
            Stage::Parse => "parse",
            Stage::Posefit => "posefit",
            Stage::Placement => "placement",
            Stage::Export => "export",
            Stage::Metrics => "metrics",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error)]
#[error("{stage} stage failed: {message}")]
pub struct PipelineError {
    pub stage: Stage,
    pub message: String,
}

impl PipelineError {
    pub fn new(stage: Stage, message: impl Into<String>) -> Self {
        PipelineError { stage, message: message.into() }
    }

    pub fn exit_code(&self) -> i32 {
        self.stage.exit_code()
    }
}

trait StageContext<T> {
    fn stage(self, stage: Stage) -> Result<T, PipelineError>;
    fn stage_at(self, stage: Stage, path: &Path) -> Result<T, PipelineError>;
}

impl<T, E: fmt::Display> StageContext<T> for Result<T, E> {
    fn stage(self, stage: Stage) -> Result<T, PipelineError> {
        self.map_err(|e| PipelineError::new(stage, e.to_string()))
    }

    fn stage_at(self, stage: Stage, path: &Path) -> Result<T, PipelineError> {
        self.map_err(|e| PipelineError::new(stage, format!("{}: {e}", path.display())))
    }
}

/// Inputs for one object pose refinement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseInputs {
    pub depth: PathBuf,
    pub mask: PathBuf,
    pub init: PathBuf,
    #[serde(default)]
    pub yaw_sweep: bool,
}

/// Inputs for one keyframe. Without `contacts`, the contact list of the
/// matching script keyframe is used, with object regions looked up in
/// `regions` when given and the whole object mesh otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeyframeInputs {
    pub object: PathBuf,
    #[serde(default)]
    pub regions: Option<PathBuf>,
    #[serde(default)]
    pub contacts: Option<PathBuf>,
    pub camera: PathBuf,
    pub m_h_init: PathBuf,
    pub m_hoi_star: PathBuf,
    #[serde(default)]
    pub init: PlacementParams,
    #[serde(default)]
    pub pose: Option<PoseInputs>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InpaintFlags {
    pub literal_paper_renoise: bool,
    pub dilation_radius: usize,
}

impl Default for InpaintFlags {
    fn default() -> Self {
        InpaintFlags {
            literal_paper_renoise: false,
            dilation_radius: 3,
        }
    }
}

fn config_version() -> u32 {
    CONFIG_VERSION
}

fn default_duration() -> f64 {
    DEFAULT_DURATION_HINT
}

fn default_k() -> usize {
    DEFAULT_K
}

/// `seed` replaces the seeds inside the optimizer and metrics blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default = "config_version")]
    pub version: u32,
    pub script: PathBuf,
    pub human: PathBuf,
    #[serde(default)]
    pub human_labels: Option<PathBuf>,
    /// Static scene geometry; posed keyframe objects are added to it for evaluation.
    #[serde(default)]
    pub scene: Option<PathBuf>,
    pub keyframes: Vec<KeyframeInputs>,
    #[serde(default)]
    pub placement: OptimConfig,
    #[serde(default = "default_posefit_config")]
    pub posefit: OptimConfig,
    #[serde(default)]
    pub posefit_weights: PoseWeights,
    #[serde(default)]
    pub sdf: SdfSettings,
    #[serde(default = "default_k")]
    pub contact_k: usize,
    #[serde(default)]
    pub inpaint: InpaintFlags,
    #[serde(default)]
    pub metrics: MetricsSettings,
    #[serde(default = "default_duration")]
    pub duration_hint: f64,
    #[serde(default)]
    pub seed: u64,
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl PipelineConfig {
    /// Reads a JSON config and makes every relative path relative to the
    /// config file's directory.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).stage_at(Stage::Config, path)?;
        let mut config: PipelineConfig = serde_json::from_str(&text).stage_at(Stage::Config, path)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        config.resolve_paths(&base);
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        resolve(base, &mut self.script);
        resolve(base, &mut self.human);
        for p in [&mut self.human_labels, &mut self.scene].into_iter().flatten() {
            resolve(base, p);
        }
        for k in &mut self.keyframes {
            for p in [&mut k.object, &mut k.camera, &mut k.m_h_init, &mut k.m_hoi_star] {
                resolve(base, p);
            }
            for p in [&mut k.regions, &mut k.contacts].into_iter().flatten() {
                resolve(base, p);
            }
            if let Some(pose) = &mut k.pose {
                for p in [&mut pose.depth, &mut pose.mask, &mut pose.init] {
                    resolve(base, p);
                }
            }
        }
    }

    pub fn input_paths(&self) -> Vec<&Path> {
        let mut out = vec![self.script.as_path(), self.human.as_path()];
        out.extend(self.human_labels.as_deref());
        out.extend(self.scene.as_deref());
        for k in &self.keyframes {
            out.extend([k.object.as_path(), k.camera.as_path(), k.m_h_init.as_path(), k.m_hoi_star.as_path()]);
            out.extend(k.regions.as_deref());
            out.extend(k.contacts.as_deref());
            if let Some(p) = &k.pose {
                out.extend([p.depth.as_path(), p.mask.as_path(), p.init.as_path()]);
            }
        }
        out
    }

    /// Checks values and that every referenced input file exists.
    pub fn validate(&self) -> Result<(), PipelineError> {
        let fail = |m: String| Err(PipelineError::new(Stage::Config, m));
        if self.version != CONFIG_VERSION {
            return fail(format!("unsupported config version {}", self.version));
        }
        if let Some(missing) = self.input_paths().into_iter().find(|p| !p.is_file()) {
            return fail(format!("input file not found: {}", missing.display()));
        }
        if self.keyframes.is_empty() {
            return fail("config lists no keyframes".into());
        }
        self.placement_config().validate().map_err(|e| PipelineError::new(Stage::Config, format!("placement: {e}")))?;
        self.posefit_config().validate().map_err(|e| PipelineError::new(Stage::Config, format!("posefit: {e}")))?;
        self.posefit_weights.validate().stage(Stage::Config)?;
        for (i, k) in self.keyframes.iter().enumerate() {
            PlacementParams::new(k.init.scale, k.init.translation).map_err(|e| PipelineError::new(Stage::Config, format!("keyframe {}: {e}", i + 1)))?;
        }
        if self.contact_k == 0 {
            return fail("contact_k must be at least 1".into());
        }
        if !(self.duration_hint > 0.0 && self.duration_hint.is_finite()) {
            return fail(format!("duration_hint must be positive, got {}", self.duration_hint));
        }
        if !(self.metrics.contact_threshold > 0.0 && self.metrics.contact_threshold.is_finite()) || self.metrics.diversity_k == 0 {
            return fail("metrics: contact_threshold must be positive and diversity_k at least 1".into());
        }
        if self.sdf.resolution < 2 || !(self.sdf.padding >= 0.0 && self.sdf.padding.is_finite()) {
            return fail("sdf: resolution must be at least 2 and padding nonnegative".into());
        }
        Ok(())
    }

    pub fn placement_config(&self) -> OptimConfig {
        OptimConfig { seed: self.seed, ..self.placement }
    }

    pub fn posefit_config(&self) -> OptimConfig {
        OptimConfig { seed: self.seed, ..self.posefit }
    }

    pub fn metrics_settings(&self) -> MetricsSettings {
        MetricsSettings { seed: self.seed, ..self.metrics }
    }

    fn keyframe(&self, index: usize) -> Result<&KeyframeInputs, PipelineError> {
        self.keyframes
            .get(index)
            .ok_or_else(|| PipelineError::new(Stage::Config, format!("keyframe {} not in config ({} listed)", index + 1, self.keyframes.len())))
    }
}

/// `keyframe_01`, `keyframe_02`, ... under `out`.
pub fn keyframe_dir(out: &Path, keyframe_id: usize) -> PathBuf {
    out.join(format!("keyframe_{keyframe_id:02}"))
}

fn ensure_dir(dir: &Path, stage: Stage) -> Result<(), PipelineError> {
    fs::create_dir_all(dir).stage_at(stage, dir)
}

fn write_text(path: &Path, text: &str, stage: Stage) -> Result<(), PipelineError> {
    fs::write(path, text).stage_at(stage, path)
}

pub fn parse_stage(config: &PipelineConfig) -> Result<(ActionScript, KeyframePlan), PipelineError> {
    let text = fs::read_to_string(&config.script).stage_at(Stage::Parse, &config.script)?;
    let script = parse_script(&text).stage_at(Stage::Parse, &config.script)?;
    let plan = build_keyframe_plan(&script, DEFAULT_TRANSITION);
    if plan.keyframes.len() != config.keyframes.len() {
        return Err(PipelineError::new(
            Stage::Config,
            format!("script has {} interactive actions but the config lists {} keyframes", plan.keyframes.len(), config.keyframes.len()),
        ));
    }
    Ok((script, plan))
}

pub fn write_parse_outputs(out: &Path, script: &ActionScript, plan: &KeyframePlan) -> Result<(), PipelineError> {
    ensure_dir(out, Stage::Parse)?;
    write_text(&out.join(SCRIPT_FILE), &script.to_text(), Stage::Parse)?;
    let json = serde_json::to_string_pretty(plan).stage(Stage::Parse)?;
    write_text(&out.join(PLAN_FILE), &(json + "\n"), Stage::Parse)
}

/// `Ok(None)` when the keyframe has no pose inputs.
pub fn refine_keyframe_pose(config: &PipelineConfig, index: usize) -> Result<Option<PoseFitResult>, PipelineError> {
    let kf = config.keyframe(index)?;
    let Some(inputs) = &kf.pose else {
        return Ok(None);
    };
    let s = Stage::Posefit;
    let mesh = load_mesh(&kf.object).stage_at(s, &kf.object)?;
    let camera = read_camera(&kf.camera).stage_at(s, &kf.camera)?;
    let depth = read_depth(&inputs.depth).stage_at(s, &inputs.depth)?;
    let mask = read_binary_mask(&inputs.mask).stage_at(s, &inputs.mask)?;
    let mut init = read_pose(&inputs.init).stage_at(s, &inputs.init)?;
    if inputs.yaw_sweep {
        init = yaw_sweep(&mesh, &camera, &mask, &init, DEFAULT_YAW_CANDIDATES).stage(s)?.0;
    }
    let result = refine_object_pose_weighted(&mesh, &depth, &mask, &camera, &init, &config.posefit_config(), config.posefit_weights)
        .map_err(|e| PipelineError::new(s, format!("keyframe {}: {e}", index + 1)))?;
    Ok(Some(result))
}

pub fn write_pose_outputs(out: &Path, keyframe_id: usize, result: &PoseFitResult) -> Result<(), PipelineError> {
    let dir = keyframe_dir(out, keyframe_id);
    ensure_dir(&dir, Stage::Posefit)?;
    write_pose(&result.pose, &dir.join(POSE_FILE)).stage(Stage::Posefit)?;
    write_text(&dir.join(POSE_TRACE_FILE), &pose_trace_to_csv(&result.trace), Stage::Posefit)
}

/// Placement result plus the geometry and renders written next to it.
#[derive(Debug, Clone)]
pub struct PlacementOutcome {
    pub result: PlacementResult,
    pub human: TriMesh,
    pub object: TriMesh,
    pub mask_h: BinaryMask,
    pub mask_hoi: BinaryMask,
    pub preview: GrayImage,
}

fn contact_annotation(config: &PipelineConfig, plan: &KeyframePlan, index: usize) -> Result<ContactAnnotation, PipelineError> {
    let kf = config.keyframe(index)?;
    if let Some(path) = &kf.contacts {
        return ContactAnnotation::load(path).stage_at(Stage::Placement, path);
    }
    let source = if kf.regions.is_some() {
        ObjectPointSource::MeshRegionFile
    } else {
        ObjectPointSource::WholeMesh
    };
    Ok(ContactAnnotation {
        version: CONTACT_VERSION,
        contacts: plan.keyframes[index]
            .contacts
            .iter()
            .map(|c| ContactEntry {
                human_part: c.human_part,
                object_region: c.object_region.clone(),
                object_point_source: source,
            })
            .collect(),
    })
}

/// Gray preview: background 0, object 110, visible human 255.
fn preview_image(object_mask: &BinaryMask, human_mask: &BinaryMask) -> GrayImage {
    GrayImage::from_fn(object_mask.width() as u32, object_mask.height() as u32, |x, y| {
        let (x, y) = (x as usize, y as usize);
        Luma([if human_mask.get(x, y) {
            255
        } else if object_mask.get(x, y) {
            110
        } else {
            0
        }])
    })
}

/// Places the human for keyframe `index` (0-based). When the keyframe has
/// pose inputs, the refined pose is read from `out` and applied to the object.
pub fn place_keyframe(config: &PipelineConfig, plan: &KeyframePlan, index: usize, out: &Path) -> Result<PlacementOutcome, PipelineError> {
    let s = Stage::Placement;
    let kf = config.keyframe(index)?;
    if index >= plan.keyframes.len() {
        return Err(PipelineError::new(Stage::Config, format!("script has no keyframe {}", index + 1)));
    }
    let human = load_labeled_mesh(&config.human, config.human_labels.as_deref()).stage_at(s, &config.human)?;
    let mut object = load_mesh(&kf.object).stage_at(s, &kf.object)?;
    if kf.pose.is_some() {
        let pose_path = keyframe_dir(out, index + 1).join(POSE_FILE);
        if !pose_path.is_file() {
            return Err(PipelineError::new(s, format!("{} not found; run pose refinement first", pose_path.display())));
        }
        object = read_pose(&pose_path).stage_at(s, &pose_path)?.apply_mesh(&object);
    }
    let regions = match &kf.regions {
        Some(p) => Some(ObjectRegions::load(p).stage_at(s, p)?),
        None => None,
    };
    let annotation = contact_annotation(config, plan, index)?;
    let resolved = annotation.resolve(&human, &object, regions.as_ref()).stage(s)?;
    let spec = ContactSpec::new(
        resolved.human_vertices.iter().map(|&i| human.vertices()[i]).collect(),
        resolved.object_vertices.iter().map(|&i| object.vertices()[i]).collect(),
        config.contact_k,
    )
    .stage(s)?;
    let camera = read_camera(&kf.camera).stage_at(s, &kf.camera)?;
    let targets = MaskTargets {
        m_h_init: read_binary_mask(&kf.m_h_init).stage_at(s, &kf.m_h_init)?,
        m_hoi_star: read_binary_mask(&kf.m_hoi_star).stage_at(s, &kf.m_hoi_star)?,
    };
    let optim = config.placement_config();
    let problem = PlacementProblem::with_settings(
        &human,
        &object,
        spec,
        &camera,
        targets,
        optim.weights,
        optim.silhouette,
        config.sdf,
        PenetrationPoints::Vertices,
        optim.seed,
    )
    .stage(s)?;
    let result = optimize_placement(&problem, &kf.init, &optim).map_err(|e| PipelineError::new(s, format!("keyframe {}: {e}", index + 1)))?;
    let placed = apply_placement(&human, &result.params);
    let mask_h = rasterize_silhouette(&placed, &camera, None).stage(s)?;
    let mask_hoi = rasterize_silhouette(&placed, &camera, Some(&object)).stage(s)?;
    let object_mask = rasterize_silhouette(&object, &camera, None).stage(s)?;
    let preview = preview_image(&object_mask, &mask_hoi);
    Ok(PlacementOutcome {
        result,
        human: placed,
        object,
        mask_h,
        mask_hoi,
        preview,
    })
}

pub fn write_placement_outputs(out: &Path, keyframe_id: usize, outcome: &PlacementOutcome) -> Result<(), PipelineError> {
    let s = Stage::Placement;
    let dir = keyframe_dir(out, keyframe_id);
    ensure_dir(&dir, s)?;
    let file = PlacementFile::from(&outcome.result);
    write_text(&dir.join(PLACEMENT_FILE), &(serde_json::to_string_pretty(&file).stage(s)? + "\n"), s)?;
    write_text(&dir.join(PLACEMENT_TRACE_FILE), &trace_to_csv(&outcome.result.trace), s)?;
    write_obj(&outcome.human, &dir.join(HUMAN_FILE)).stage(s)?;
    write_obj(&outcome.object, &dir.join(OBJECT_FILE)).stage(s)?;
    write_binary_mask(&outcome.mask_h, &dir.join(MASK_H_FILE)).stage(s)?;
    write_binary_mask(&outcome.mask_hoi, &dir.join(MASK_HOI_FILE)).stage(s)?;
    let preview = dir.join(PREVIEW_FILE);
    outcome.preview.save(&preview).stage_at(s, &preview)
}

/// Writes the manifest with keyframe images given relative to `out`.
pub fn export_stage(config: &PipelineConfig, plan: &KeyframePlan, out: &Path) -> Result<PlanManifest, PipelineError> {
    let s = Stage::Export;
    let mut images = Vec::with_capacity(plan.keyframes.len());
    for k in &plan.keyframes {
        let rel = format!("keyframe_{:02}/{PREVIEW_FILE}", k.keyframe_id);
        if !out.join(&rel).is_file() {
            return Err(PipelineError::new(s, format!("keyframe image {} not found", out.join(&rel).display())));
        }
        images.push(rel);
    }
    let manifest = export_plan(plan, &images, config.duration_hint).stage(s)?;
    write_manifest(&manifest, &out.join(MANIFEST_FILE)).stage(s)?;
    Ok(manifest)
}

/// Scores the placed humans against the static scene plus every keyframe
/// object. Diversity runs over the `[s, tx, ty, tz]` placement vectors.
pub fn metrics_stage(config: &PipelineConfig, out: &Path) -> Result<MetricsReport, PipelineError> {
    let s = Stage::Metrics;
    let mut scene_parts = Vec::new();
    if let Some(p) = &config.scene {
        scene_parts.push(load_mesh(p).stage_at(s, p)?);
    }
    let mut bodies = Vec::new();
    let mut vectors = Vec::new();
    for id in 1..=config.keyframes.len() {
        let dir = keyframe_dir(out, id);
        let object = dir.join(OBJECT_FILE);
        scene_parts.push(load_mesh(&object).stage_at(s, &object)?);
        let human = dir.join(HUMAN_FILE);
        bodies.push(load_mesh(&human).stage_at(s, &human)?);
        let placement = dir.join(PLACEMENT_FILE);
        let text = fs::read_to_string(&placement).stage_at(s, &placement)?;
        let file: PlacementFile = serde_json::from_str(&text).stage_at(s, &placement)?;
        vectors.push(vec![file.scale, file.translation[0], file.translation[1], file.translation[2]]);
    }
    let refs: Vec<&TriMesh> = scene_parts.iter().collect();
    let scene = TriMesh::merge(&refs).stage(s)?;
    write_obj(&scene, &out.join(SCENE_FILE)).stage(s)?;
    let poses = PoseParamSet::new(vectors).stage(s)?;
    write_pose_vectors(&poses, &out.join(POSES_FILE)).stage(s)?;
    let report = evaluate_scene(&scene, &bodies, Some(&poses), &config.metrics_settings()).stage(s)?;
    write_report(&report, &out.join(REPORT_FILE)).stage(s)?;
    Ok(report)
}

fn thread_pool(jobs: Option<usize>) -> Result<rayon::ThreadPool, PipelineError> {
    rayon::ThreadPoolBuilder::new().num_threads(jobs.unwrap_or(0)).build().stage(Stage::Config)
}

/// Runs every keyframe job in parallel, then writes the successful outputs
/// in keyframe order up to the first failure.
fn fan_out<T: Send>(
    pool: &rayon::ThreadPool,
    count: usize,
    job: impl Fn(usize) -> Result<T, PipelineError> + Sync + Send,
    mut write: impl FnMut(usize, &T) -> Result<(), PipelineError>,
) -> Result<Vec<T>, PipelineError> {
    let results: Vec<Result<T, PipelineError>> = pool.install(|| (0..count).into_par_iter().map(&job).collect());
    let mut done = Vec::with_capacity(count);
    for (i, r) in results.into_iter().enumerate() {
        let value = r?;
        write(i, &value)?;
        done.push(value);
    }
    Ok(done)
}

pub fn posefit_stage(config: &PipelineConfig, out: &Path, jobs: Option<usize>) -> Result<(), PipelineError> {
    let pool = thread_pool(jobs)?;
    fan_out(
        &pool,
        config.keyframes.len(),
        |i| refine_keyframe_pose(config, i),
        |i, r| match r {
            Some(r) => write_pose_outputs(out, i + 1, r),
            None => Ok(()),
        },
    )?;
    Ok(())
}

pub fn placement_stage(config: &PipelineConfig, plan: &KeyframePlan, out: &Path, jobs: Option<usize>) -> Result<Vec<PlacementFile>, PipelineError> {
    let pool = thread_pool(jobs)?;
    let outcomes = fan_out(&pool, config.keyframes.len(), |i| place_keyframe(config, plan, i, out), |i, o| write_placement_outputs(out, i + 1, o))?;
    Ok(outcomes.iter().map(|o| PlacementFile::from(&o.result)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub started: String,
    pub status: String,
    pub failed_stage: Option<Stage>,
    pub exit_code: i32,
    pub message: Option<String>,
}

#[derive(Debug)]
pub struct RunOutcome {
    /// `None` when the config was rejected before a run directory was created.
    pub dir: Option<PathBuf>,
    pub result: Result<MetricsReport, PipelineError>,
}

impl RunOutcome {
    pub fn exit_code(&self) -> i32 {
        self.result.as_ref().map_or_else(|e| e.exit_code(), |_| 0)
    }
}

/// Creates `out_root/run-YYYYmmdd-HHMMSS` (with a numeric suffix when it
/// already exists).
pub fn create_run_dir(out_root: &Path, stamp: &str) -> Result<PathBuf, PipelineError> {
    ensure_dir(out_root, Stage::Config)?;
    let mut n = 1;
    loop {
        let name = if n == 1 { format!("run-{stamp}") } else { format!("run-{stamp}-{n}") };
        let dir = out_root.join(name);
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => n += 1,
            Err(e) => return Err(PipelineError::new(Stage::Config, format!("{}: {e}", dir.display()))),
        }
    }
}

fn run_stages(config: &PipelineConfig, dir: &Path, jobs: Option<usize>) -> Result<MetricsReport, PipelineError> {
    let copy = serde_json::to_string_pretty(config).stage(Stage::Config)?;
    write_text(&dir.join(CONFIG_COPY_FILE), &(copy + "\n"), Stage::Config)?;
    info!("parse: {}", config.script.display());
    let (script, plan) = parse_stage(config)?;
    write_parse_outputs(dir, &script, &plan)?;
    info!("posefit: {} keyframe(s)", config.keyframes.iter().filter(|k| k.pose.is_some()).count());
    posefit_stage(config, dir, jobs)?;
    info!("placement: {} keyframe(s)", config.keyframes.len());
    placement_stage(config, &plan, dir, jobs)?;
    info!("export: {} job(s)", plan.segments.len());
    export_stage(config, &plan, dir)?;
    info!("metrics");
    metrics_stage(config, dir)
}

/// Validates the config, then runs every stage into a fresh run directory.
/// Artifacts of completed stages are kept when a later stage fails.
pub fn run_pipeline(config: &PipelineConfig, out_root: &Path, jobs: Option<usize>) -> RunOutcome {
    if let Err(e) = config.validate() {
        return RunOutcome { dir: None, result: Err(e) };
    }
    let started = chrono::Local::now();
    let dir = match create_run_dir(out_root, &started.format("%Y%m%d-%H%M%S").to_string()) {
        Ok(d) => d,
        Err(e) => return RunOutcome { dir: None, result: Err(e) },
    };
    info!("run directory {}", dir.display());
    let result = run_stages(config, &dir, jobs);
    let record = RunRecord {
        started: started.to_rfc3339(),
        status: if result.is_ok() { "ok".into() } else { "failed".into() },
        failed_stage: result.as_ref().err().map(|e| e.stage),
        exit_code: result.as_ref().map_or_else(|e| e.exit_code(), |_| 0),
        message: result.as_ref().err().map(|e| e.message.clone()),
    };
    let record = serde_json::to_string_pretty(&record).expect("serializable") + "\n";
    let result = match (result, fs::write(dir.join(RUN_FILE), record)) {
        (Ok(_), Err(e)) => Err(PipelineError::new(Stage::Metrics, format!("{}: {e}", dir.join(RUN_FILE).display()))),
        (r, _) => r,
    };
    RunOutcome { dir: Some(dir), result }
}
