//! Object pose refinement against a target depth map and silhouette.
//!
//! Parameters are a rotation tangent (left-multiplied onto the current
//! quaternion and folded back after every step), a translation and a log
//! scale. World vertices are `R (s v) + t`.

mod io;

use nalgebra::{Matrix3, SMatrix, SVector, Unit, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{TriMesh, Vec3};
use crate::losses::{soft_iou_with_grad, LossError};
use crate::optim::{AdamW, ConfigError, GradientMode, OptimConfig};
use crate::silhouette::{rasterize_depth, rasterize_silhouette, BinaryMask, Camera, RenderError, SoftRenderer};

pub use io::{read_depth, read_pose, write_depth, write_pose, DepthHeader, PoseFile, DEPTH_VERSION, POSE_VERSION};

/// Minimum number of set target-mask pixels.
pub const MIN_MASK_PIXELS: usize = 100;
pub const DEFAULT_YAW_CANDIDATES: usize = 16;

#[derive(Debug, Error)]
pub enum PoseError {
    #[error("target mask has {found} set pixels, at least {required} are needed")]
    InsufficientCoverage { found: usize, required: usize },
    #[error("invalid pose: {0}")]
    InvalidPose(String),
    #[error("target depth is {0}x{1} but the camera renders {2}x{3}")]
    TargetSize(usize, usize, usize, usize),
    #[error("loss at the initial pose is not finite ({0})")]
    NonFiniteInit(f64),
    #[error("optimization diverged at step {step}: loss {loss} (initial {initial})")]
    Diverged { step: usize, loss: f64, initial: f64 },
    #[error("{path}: {message}")]
    Format { path: String, message: String },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose6D {
    rotation: UnitQuaternion<f64>,
    translation: Vec3,
    scale: f64,
}

impl Default for Pose6D {
    fn default() -> Self {
        Pose6D {
            rotation: UnitQuaternion::identity(),
            translation: Vec3::zeros(),
            scale: 1.0,
        }
    }
}

impl Pose6D {
    pub fn new(rotation: UnitQuaternion<f64>, translation: Vec3, scale: f64) -> Result<Self, PoseError> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(PoseError::InvalidPose(format!("scale must be positive and finite, got {scale}")));
        }
        if !translation.iter().all(|v| v.is_finite()) || !rotation.coords.iter().all(|v| v.is_finite()) {
            return Err(PoseError::InvalidPose("non-finite component".into()));
        }
        Ok(Pose6D { rotation, translation, scale })
    }

    /// The quaternion must have unit norm within 1e-6; it is renormalized.
    pub fn from_wxyz(q: [f64; 4], translation: Vec3, scale: f64) -> Result<Self, PoseError> {
        let quat = nalgebra::Quaternion::new(q[0], q[1], q[2], q[3]);
        if (quat.norm() - 1.0).abs() > 1e-6 {
            return Err(PoseError::InvalidPose(format!("quaternion norm {} is not 1", quat.norm())));
        }
        Self::new(UnitQuaternion::from_quaternion(quat), translation, scale)
    }

    pub fn rotation(&self) -> &UnitQuaternion<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> Vec3 {
        self.translation
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn wxyz(&self) -> [f64; 4] {
        let q = self.rotation.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    pub fn apply(&self, v: &Vec3) -> Vec3 {
        self.rotation * (v * self.scale) + self.translation
    }

    pub fn apply_mesh(&self, mesh: &TriMesh) -> TriMesh {
        mesh.map_vertices(|v| self.apply(v))
    }

    /// Rotation angle between two poses in radians.
    pub fn angle_to(&self, other: &Pose6D) -> f64 {
        self.rotation.angle_to(&other.rotation)
    }

    /// Applies a tangent step: rotation `exp(w) R`, translation `t + dt`, scale `s exp(dl)`.
    pub fn retract(&self, delta: &SVector<f64, 7>) -> Pose6D {
        let w = Vector3::new(delta[0], delta[1], delta[2]);
        Pose6D {
            rotation: UnitQuaternion::new(w) * self.rotation,
            translation: self.translation + Vec3::new(delta[3], delta[4], delta[5]),
            scale: self.scale * delta[6].exp(),
        }
    }
}

/// Per-pixel depth in meters; 0 marks pixels without a valid depth.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl DepthMap {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self, PoseError> {
        if values.len() != width * height {
            return Err(PoseError::InvalidPose(format!("{} depth values for {width}x{height}", values.len())));
        }
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(PoseError::InvalidPose(format!("depth value {v} is not finite and nonnegative")));
        }
        Ok(DepthMap { width, height, values })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn valid_count(&self) -> usize {
        self.values.iter().filter(|&&v| v > 0.0).count()
    }
}

/// Nearest-hit camera Z of the posed mesh; 0 where nothing is hit.
pub fn render_depth(mesh: &TriMesh, camera: &Camera, pose: &Pose6D) -> DepthMap {
    let buffer = rasterize_depth(&pose.apply_mesh(mesh), camera);
    let values = buffer.depths().into_iter().map(|z| if z.is_finite() { z } else { 0.0 }).collect();
    DepthMap {
        width: camera.width(),
        height: camera.height(),
        values,
    }
}

fn skew(v: &Vec3) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseLoss {
    pub total: f64,
    pub depth: f64,
    pub silhouette: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseTraceRow {
    pub step: usize,
    pub loss: PoseLoss,
    pub pose: Pose6D,
}

pub const POSE_TRACE_HEADER: &str = "step,total,depth,silhouette,qw,qx,qy,qz,tx,ty,tz,scale";

pub fn pose_trace_to_csv(trace: &[PoseTraceRow]) -> String {
    let mut out = String::from(POSE_TRACE_HEADER);
    out.push('\n');
    for r in trace {
        let q = r.pose.wxyz();
        let t = r.pose.translation;
        out += &format!(
            "{},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?}\n",
            r.step, r.loss.total, r.loss.depth, r.loss.silhouette, q[0], q[1], q[2], q[3], t.x, t.y, t.z, r.pose.scale
        );
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseFitResult {
    pub pose: Pose6D,
    pub best_step: usize,
    pub trace: Vec<PoseTraceRow>,
}

/// Optimizer settings tuned for pose refinement: analytic gradients and a
/// shorter run than placement.
pub fn default_posefit_config() -> OptimConfig {
    OptimConfig {
        steps: 300,
        gradient_mode: GradientMode::Analytic,
        ..OptimConfig::default()
    }
}

/// Relative weights of the two residuals. Depth is in square meters, so it
/// gets a large weight to dominate the slightly biased soft-IoU optimum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PoseWeights {
    pub depth: f64,
    pub silhouette: f64,
}

impl Default for PoseWeights {
    fn default() -> Self {
        PoseWeights { depth: 100.0, silhouette: 1.0 }
    }
}

impl PoseWeights {
    pub fn validate(&self) -> Result<(), PoseError> {
        let ok = |w: f64| w >= 0.0 && w.is_finite();
        if !ok(self.depth) || !ok(self.silhouette) || self.depth + self.silhouette == 0.0 {
            return Err(PoseError::InvalidPose(format!("invalid residual weights {self:?}")));
        }
        Ok(())
    }
}

/// Fixed data for one refinement.
pub struct PoseProblem {
    mesh: TriMesh,
    camera: Camera,
    target_depth: DepthMap,
    target_mask: BinaryMask,
    renderer: SoftRenderer,
    weights: PoseWeights,
}

impl PoseProblem {
    pub fn new(
        mesh: &TriMesh,
        target_depth: DepthMap,
        target_mask: BinaryMask,
        camera: &Camera,
        config: &OptimConfig,
        weights: PoseWeights,
    ) -> Result<Self, PoseError> {
        config.validate()?;
        weights.validate()?;
        let (w, h) = (camera.width(), camera.height());
        if target_depth.width != w || target_depth.height != h {
            return Err(PoseError::TargetSize(target_depth.width, target_depth.height, w, h));
        }
        if target_mask.width() != w || target_mask.height() != h {
            return Err(PoseError::TargetSize(target_mask.width(), target_mask.height(), w, h));
        }
        let found = target_mask.count();
        if found < MIN_MASK_PIXELS {
            return Err(PoseError::InsufficientCoverage { found, required: MIN_MASK_PIXELS });
        }
        Ok(PoseProblem {
            mesh: mesh.clone(),
            camera: camera.clone(),
            target_depth,
            target_mask,
            renderer: SoftRenderer::new(mesh, camera, config.silhouette, None)?,
            weights,
        })
    }

    /// Mean squared depth residual over pixels set in the target mask and
    /// valid in both depth maps, with its tangent-space gradient.
    fn depth_term(&self, world: &[Vec3], pose: &Pose6D, with_grad: bool) -> (f64, SVector<f64, 7>) {
        let cam_verts: Vec<Vec3> = world.iter().map(|v| self.camera.to_camera(v)).collect();
        let posed = TriMesh::new(world.to_vec(), self.mesh.faces().to_vec()).expect("same topology");
        let buffer = rasterize_depth(&posed, &self.camera);
        let intr = self.camera.intrinsics();
        let rot_t = self.camera.rotation().transpose();
        let w = self.camera.width();
        let (mut sum, mut n) = (0.0, 0usize);
        let mut grad = SVector::<f64, 7>::zeros();
        for (i, &bit) in self.target_mask.bits().iter().enumerate() {
            let target = self.target_depth.values[i];
            if !bit || target <= 0.0 {
                continue;
            }
            let Some(face) = buffer.face(i) else { continue };
            let z = buffer.depth(i);
            let r = z - target;
            sum += r * r;
            n += 1;
            if !with_grad {
                continue;
            }
            // z = (n.a) / (n.ray); moving vertex k by d changes z by lambda_k (n.d) / (n.ray)
            let f = self.mesh.faces()[face];
            let [a, b, c] = [cam_verts[f[0]], cam_verts[f[1]], cam_verts[f[2]]];
            let ray = Vec3::new(((i % w) as f64 + 0.5 - intr.cx) / intr.fx, ((i / w) as f64 + 0.5 - intr.cy) / intr.fy, 1.0);
            let normal = (b - a).cross(&(c - a));
            let denom = normal.dot(&ray);
            if denom.abs() < 1e-12 {
                continue;
            }
            let p = ray * z;
            let area2 = normal.norm_squared();
            let lambdas = [(b - p).cross(&(c - p)).dot(&normal) / area2, (c - p).cross(&(a - p)).dot(&normal) / area2, (a - p).cross(&(b - p)).dot(&normal) / area2];
            let dz_world = rot_t * (normal / denom);
            for (k, &vi) in f.iter().enumerate() {
                grad += self.vertex_jacobian(vi, pose).transpose() * (dz_world * (2.0 * r * lambdas[k]));
            }
        }
        if n == 0 {
            return (0.0, SVector::zeros());
        }
        (sum / n as f64, grad / n as f64)
    }

    /// d world_vertex / d [w, t, log s] at zero tangent.
    fn vertex_jacobian(&self, vi: usize, pose: &Pose6D) -> SMatrix<f64, 3, 7> {
        let rs = pose.rotation * (self.mesh.vertices()[vi] * pose.scale);
        let mut j = SMatrix::<f64, 3, 7>::zeros();
        j.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-skew(&rs)));
        j.fixed_view_mut::<3, 3>(0, 3).copy_from(&Matrix3::identity());
        j.fixed_view_mut::<3, 1>(0, 6).copy_from(&rs);
        j
    }

    fn silhouette_term(&self, world: &[Vec3], pose: &Pose6D, with_grad: bool) -> Result<(f64, SVector<f64, 7>), PoseError> {
        if !with_grad {
            let r = self.renderer.render::<1>(world, None);
            let iou = crate::losses::soft_iou_binary(&r.plain, &self.target_mask)?;
            return Ok((1.0 - iou, SVector::zeros()));
        }
        let jac = |i: usize| self.vertex_jacobian(i, pose);
        let r = self.renderer.render::<7>(world, Some(&jac));
        let (iou, g) = soft_iou_with_grad(&r.plain, &self.target_mask)?;
        let mut grad = SVector::<f64, 7>::zeros();
        for (px, d) in &r.plain_grad {
            grad -= d * g[*px as usize];
        }
        Ok((1.0 - iou, grad))
    }

    pub fn evaluate(&self, pose: &Pose6D) -> Result<PoseLoss, PoseError> {
        let world: Vec<Vec3> = self.mesh.vertices().iter().map(|v| pose.apply(v)).collect();
        let depth = self.depth_term(&world, pose, false).0;
        let silhouette = self.silhouette_term(&world, pose, false)?.0;
        Ok(PoseLoss {
            total: self.weights.depth * depth + self.weights.silhouette * silhouette,
            depth,
            silhouette,
        })
    }

    /// Loss and gradient in the tangent coordinates `[w, t, log s]`.
    pub fn evaluate_with_grad(&self, pose: &Pose6D, mode: GradientMode, fd_eps: f64) -> Result<(PoseLoss, SVector<f64, 7>), PoseError> {
        match mode {
            GradientMode::Analytic => {
                let world: Vec<Vec3> = self.mesh.vertices().iter().map(|v| pose.apply(v)).collect();
                let (depth, gd) = self.depth_term(&world, pose, true);
                let (silhouette, gs) = self.silhouette_term(&world, pose, true)?;
                Ok((
                    PoseLoss {
                        total: self.weights.depth * depth + self.weights.silhouette * silhouette,
                        depth,
                        silhouette,
                    },
                    gd * self.weights.depth + gs * self.weights.silhouette,
                ))
            }
            GradientMode::FiniteDifference => {
                let loss = self.evaluate(pose)?;
                let mut grad = SVector::<f64, 7>::zeros();
                for k in 0..7 {
                    let mut d = SVector::<f64, 7>::zeros();
                    d[k] = fd_eps;
                    let up = self.evaluate(&pose.retract(&d))?.total;
                    let down = self.evaluate(&pose.retract(&-d))?.total;
                    grad[k] = (up - down) / (2.0 * fd_eps);
                }
                Ok((loss, grad))
            }
        }
    }
}

/// Adam descent in tangent coordinates; returns the best-so-far pose.
pub fn refine_object_pose(
    mesh: &TriMesh,
    target_depth: &DepthMap,
    target_mask: &BinaryMask,
    camera: &Camera,
    init: &Pose6D,
    config: &OptimConfig,
) -> Result<PoseFitResult, PoseError> {
    refine_object_pose_weighted(mesh, target_depth, target_mask, camera, init, config, PoseWeights::default())
}

pub fn refine_object_pose_weighted(
    mesh: &TriMesh,
    target_depth: &DepthMap,
    target_mask: &BinaryMask,
    camera: &Camera,
    init: &Pose6D,
    config: &OptimConfig,
    weights: PoseWeights,
) -> Result<PoseFitResult, PoseError> {
    let problem = PoseProblem::new(mesh, target_depth.clone(), target_mask.clone(), camera, config, weights)?;
    optimize_pose(&problem, init, config)
}

pub fn optimize_pose(problem: &PoseProblem, init: &Pose6D, config: &OptimConfig) -> Result<PoseFitResult, PoseError> {
    config.validate()?;
    let mut pose = Pose6D::new(init.rotation, init.translation, init.scale)?;
    let mut adam = AdamW::<7>::new(config);
    let mut trace = Vec::with_capacity(config.steps + 1);
    let mut best: Option<(f64, usize, Pose6D)> = None;
    let mut initial = f64::NAN;
    for step in 0..=config.steps {
        let (loss, grad) = problem.evaluate_with_grad(&pose, config.gradient_mode, config.fd_epsilon)?;
        if step == 0 {
            if !loss.total.is_finite() {
                return Err(PoseError::NonFiniteInit(loss.total));
            }
            initial = loss.total;
        } else if !loss.total.is_finite() || loss.total > 1e6 * initial.max(1e-12) {
            return Err(PoseError::Diverged {
                step,
                loss: loss.total,
                initial,
            });
        }
        trace.push(PoseTraceRow { step, loss, pose });
        if best.map_or(true, |(b, _, _)| loss.total < b) {
            best = Some((loss.total, step, pose));
        }
        if step == config.steps {
            break;
        }
        let mut delta = SVector::<f64, 7>::zeros();
        adam.step(&mut delta, &grad);
        pose = pose.retract(&delta);
    }
    let (_, best_step, pose) = best.expect("at least one step");
    Ok(PoseFitResult { pose, best_step, trace })
}

/// Tries `count` rotations about world +Y applied on top of `base` and keeps
/// the one whose hard silhouette best overlaps the target.
pub fn yaw_sweep(mesh: &TriMesh, camera: &Camera, target_mask: &BinaryMask, base: &Pose6D, count: usize) -> Result<(Pose6D, f64), PoseError> {
    let count = count.max(1);
    let mut best: Option<(Pose6D, f64)> = None;
    for k in 0..count {
        let yaw = UnitQuaternion::from_axis_angle(&Unit::new_normalize(Vector3::y()), std::f64::consts::TAU * k as f64 / count as f64);
        let pose = Pose6D {
            rotation: yaw * base.rotation,
            ..*base
        };
        let iou = rasterize_silhouette(&pose.apply_mesh(mesh), camera, None)?.iou(target_mask)?;
        if best.map_or(true, |(_, b)| iou > b) {
            best = Some((pose, iou));
        }
    }
    Ok(best.expect("count >= 1"))
}
