//! Bundled demo: a seated figure on a chair in an empty room, one sit action.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::UnitQuaternion;

use super::{InpaintFlags, KeyframeInputs, PipelineConfig, PipelineError, PoseInputs, Stage, StageContext, CONFIG_VERSION};
use crate::geometry::io::{write_obj, PartLabelFile};
use crate::geometry::{TriMesh, Vec3};
use crate::losses::annotation::ObjectRegions;
use crate::losses::DEFAULT_K;
use crate::metrics::MetricsSettings;
use crate::optim::OptimConfig;
use crate::placement::{apply_placement, PlacementParams, SdfSettings};
use crate::posefit::{default_posefit_config, render_depth, write_depth, write_pose, Pose6D, PoseWeights};
use crate::scriptplan::DEFAULT_DURATION_HINT;
use crate::silhouette::io::{write_binary_mask, write_camera};
use crate::silhouette::{rasterize_silhouette, BinaryMask, Camera, Intrinsics};
use crate::synthetic::{box_mesh, mannequin};

pub const DEMO_SCRIPT: &str = "A person walks into a small room and takes a seat on the chair.
---
1. [INTERACTIVE] Sit down on the chair @ chair | contacts: buttocks->seat
";

pub const SEAT_REGION: &str = "seat";
const SEAT_TOP: f64 = 0.483;
pub const DEMO_PLACEMENT_STEPS: usize = 1000;

/// In-memory demo inputs.
#[derive(Debug, Clone)]
pub struct DemoScene {
    pub human: TriMesh,
    pub chair: TriMesh,
    pub seat_vertices: Vec<usize>,
    pub room: TriMesh,
    pub camera: Camera,
    pub m_h_init: BinaryMask,
    pub m_hoi_star: BinaryMask,
    pub truth: PlacementParams,
    pub init: PlacementParams,
    pub chair_truth: Pose6D,
    pub chair_init: Pose6D,
}

/// Chair in its own frame: seat top at `SEAT_TOP`, backrest toward -Z. The
/// seat comes first, so seat vertex indices are stable.
fn chair() -> (TriMesh, Vec<usize>) {
    let seat = box_mesh(Vec3::new(-0.22, SEAT_TOP - 0.04, -0.17), Vec3::new(0.22, SEAT_TOP, 0.25), 3);
    let top: Vec<usize> = (0..seat.vertices().len()).filter(|&i| seat.vertices()[i].y == SEAT_TOP).collect();
    let back = box_mesh(Vec3::new(-0.22, SEAT_TOP, -0.22), Vec3::new(0.22, 0.95, -0.17), 2);
    let mut parts = vec![seat, back];
    for (x, z) in [(-0.22, -0.17), (0.18, -0.17), (-0.22, 0.21), (0.18, 0.21)] {
        parts.push(box_mesh(Vec3::new(x, 0.0, z), Vec3::new(x + 0.04, SEAT_TOP - 0.04, z + 0.04), 1));
    }
    let refs: Vec<&TriMesh> = parts.iter().collect();
    (TriMesh::merge(&refs).expect("chair is well formed"), top)
}

pub fn demo_scene() -> DemoScene {
    let human = mannequin(2);
    let truth = PlacementParams::new(1.05, Vec3::new(0.1, SEAT_TOP, 0.2)).expect("positive");
    let init = PlacementParams::new(1.0, truth.translation + Vec3::new(0.04, -0.03, 0.05)).expect("positive");
    let (chair, seat_vertices) = chair();
    let chair_truth = Pose6D::new(UnitQuaternion::identity(), Vec3::new(0.1, 0.0, 0.2), 1.0).expect("valid");
    let chair_init = Pose6D::new(
        UnitQuaternion::from_axis_angle(&Vec3::y_axis(), 3f64.to_radians()),
        chair_truth.translation() + Vec3::new(-0.02, 0.01, 0.02),
        1.03,
    )
    .expect("valid");
    let room = box_mesh(Vec3::new(-1.5, -0.05, -1.5), Vec3::new(1.5, 0.0, 1.5), 2);
    let placed = apply_placement(&human, &truth);
    let posed_chair = chair_truth.apply_mesh(&chair);
    let center = placed.bounds().center();
    let camera = Camera::look_at(
        center + Vec3::new(1.1, 0.9, 2.4),
        center,
        Vec3::y(),
        Intrinsics {
            fx: 140.0,
            fy: 140.0,
            cx: 64.0,
            cy: 64.0,
        },
        128,
        128,
    )
    .expect("valid camera");
    DemoScene {
        m_h_init: rasterize_silhouette(&placed, &camera, None).expect("render"),
        m_hoi_star: rasterize_silhouette(&placed, &camera, Some(&posed_chair)).expect("render"),
        human,
        chair,
        seat_vertices,
        room,
        camera,
        truth,
        init,
        chair_truth,
        chair_init,
    }
}

/// Config for the files written by [`write_demo`], with paths relative to
/// the demo directory.
pub fn demo_config(scene: &DemoScene) -> PipelineConfig {
    PipelineConfig {
        version: CONFIG_VERSION,
        script: "script.txt".into(),
        human: "human.obj".into(),
        human_labels: Some("human_parts.json".into()),
        scene: Some("room.obj".into()),
        keyframes: vec![KeyframeInputs {
            object: "chair.obj".into(),
            regions: Some("chair_regions.json".into()),
            contacts: None,
            camera: "camera.json".into(),
            m_h_init: "m_h_init.png".into(),
            m_hoi_star: "m_hoi_star.png".into(),
            init: scene.init,
            pose: Some(PoseInputs {
                depth: "chair_depth.bin".into(),
                mask: "chair_mask.png".into(),
                init: "chair_init_pose.json".into(),
                yaw_sweep: false,
            }),
        }],
        placement: OptimConfig {
            steps: DEMO_PLACEMENT_STEPS,
            ..OptimConfig::default()
        },
        posefit: default_posefit_config(),
        posefit_weights: PoseWeights::default(),
        sdf: SdfSettings::default(),
        contact_k: DEFAULT_K,
        inpaint: InpaintFlags::default(),
        metrics: MetricsSettings::default(),
        duration_hint: DEFAULT_DURATION_HINT,
        seed: 0,
    }
}

/// Writes the demo inputs and `config.json` into `dir`; returns the config path.
pub fn write_demo(dir: &Path) -> Result<PathBuf, PipelineError> {
    let s = Stage::Config;
    fs::create_dir_all(dir).stage_at(s, dir)?;
    let scene = demo_scene();
    fs::write(dir.join("script.txt"), DEMO_SCRIPT).stage(s)?;
    write_obj(&scene.human, &dir.join("human.obj")).stage(s)?;
    let labels = PartLabelFile::from_labels(scene.human.part_labels().expect("labeled"));
    fs::write(dir.join("human_parts.json"), serde_json::to_string_pretty(&labels).stage(s)? + "\n").stage(s)?;
    write_obj(&scene.chair, &dir.join("chair.obj")).stage(s)?;
    let mut regions = ObjectRegions::default();
    regions.regions.insert(SEAT_REGION.to_string(), scene.seat_vertices.clone());
    fs::write(dir.join("chair_regions.json"), serde_json::to_string_pretty(&regions).stage(s)? + "\n").stage(s)?;
    write_obj(&scene.room, &dir.join("room.obj")).stage(s)?;
    write_camera(&scene.camera, &dir.join("camera.json")).stage(s)?;
    write_binary_mask(&scene.m_h_init, &dir.join("m_h_init.png")).stage(s)?;
    write_binary_mask(&scene.m_hoi_star, &dir.join("m_hoi_star.png")).stage(s)?;
    write_depth(&render_depth(&scene.chair, &scene.camera, &scene.chair_truth), &dir.join("chair_depth.bin")).stage(s)?;
    let chair_mask = rasterize_silhouette(&scene.chair_truth.apply_mesh(&scene.chair), &scene.camera, None).stage(s)?;
    write_binary_mask(&chair_mask, &dir.join("chair_mask.png")).stage(s)?;
    write_pose(&scene.chair_init, &dir.join("chair_init_pose.json")).stage(s)?;
    let config = dir.join("config.json");
    fs::write(&config, serde_json::to_string_pretty(&demo_config(&scene)).stage(s)? + "\n").stage(s)?;
    Ok(config)
}
