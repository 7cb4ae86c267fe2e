//! Scale and translation of the human mesh against contact, penetration and
//! silhouette losses.
//!
//! The unknowns are `theta = [ln s, tx, ty, tz]`. The human signed distance
//! field is built once in the canonical frame; under a placement the field is
//! `phi(x) = s * phi_c((x - t) / s)`.

use log::warn;
use nalgebra::{SMatrix, SVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{build_sdf, sample_sdf, GeometryError, SdfGrid, TriMesh, Vec3};
use crate::losses::{contact_loss_with_grad, mutual_knn_indices, soft_iou_with_grad, ContactSpec, LossError, LossWeights};
use crate::optim::{AdamW, ConfigError, GradientMode, OptimConfig};
use crate::silhouette::{BinaryMask, Camera, RenderError, OverlapTargets, SoftRasterConfig, SoftRender, SoftRenderer};

pub type Theta = SVector<f64, 4>;

#[derive(Debug, Error)]
pub enum PlacementError {
    #[error("scale must be positive and finite, got {0}")]
    InvalidScale(f64),
    #[error("target masks are {0}x{1} but the camera renders {2}x{3}")]
    TargetSize(usize, usize, usize, usize),
    #[error("loss at the initial parameters is not finite ({0})")]
    NonFiniteInit(f64),
    #[error("optimization diverged at step {step}: loss {loss} (initial {initial})")]
    Diverged { step: usize, loss: f64, initial: f64 },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlacementParams {
    pub scale: f64,
    pub translation: Vec3,
}

impl Default for PlacementParams {
    fn default() -> Self {
        PlacementParams {
            scale: 1.0,
            translation: Vec3::zeros(),
        }
    }
}

impl PlacementParams {
    pub fn new(scale: f64, translation: Vec3) -> Result<Self, PlacementError> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(PlacementError::InvalidScale(scale));
        }
        Ok(PlacementParams { scale, translation })
    }

    pub fn to_theta(&self) -> Theta {
        Theta::new(self.scale.ln(), self.translation.x, self.translation.y, self.translation.z)
    }

    pub fn from_theta(theta: &Theta) -> Self {
        PlacementParams {
            scale: theta[0].exp(),
            translation: Vec3::new(theta[1], theta[2], theta[3]),
        }
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        p * self.scale + self.translation
    }

    /// The placement equal to applying `self` first and then `outer`.
    pub fn then(&self, outer: &PlacementParams) -> PlacementParams {
        PlacementParams {
            scale: self.scale * outer.scale,
            translation: self.translation * outer.scale + outer.translation,
        }
    }
}

/// `v -> s * v + t`; faces and labels are unchanged.
pub fn apply_placement(mesh: &TriMesh, params: &PlacementParams) -> TriMesh {
    mesh.map_vertices(|v| params.apply(v))
}

/// Rendered-silhouette targets: the human alone and the human behind the object.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskTargets {
    pub m_h_init: BinaryMask,
    pub m_hoi_star: BinaryMask,
}

/// Which object points enter the penetration term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum PenetrationPoints {
    Vertices,
    /// Area-weighted surface samples drawn with the optimizer seed.
    SurfaceSamples { count: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SdfSettings {
    pub resolution: usize,
    pub padding: f64,
}

impl Default for SdfSettings {
    fn default() -> Self {
        SdfSettings {
            resolution: 128,
            padding: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub total: f64,
    pub pen: f64,
    pub hoi: f64,
    pub mask: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    pub loss: LossBreakdown,
    pub params: PlacementParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlacementResult {
    pub params: PlacementParams,
    pub best_step: usize,
    pub trace: Vec<TraceRow>,
}

pub const TRACE_HEADER: &str = "step,total,pen,hoi,mask,scale,tx,ty,tz";

/// Loss trace as CSV with a fixed header; floats use shortest round-trip form.
pub fn trace_to_csv(trace: &[TraceRow]) -> String {
    let mut out = String::from(TRACE_HEADER);
    out.push('\n');
    for r in trace {
        let t = r.params.translation;
        out.push_str(&format!(
            "{},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?}\n",
            r.step, r.loss.total, r.loss.pen, r.loss.hoi, r.loss.mask, r.params.scale, t.x, t.y, t.z
        ));
    }
    out
}

pub const PLACEMENT_VERSION: u32 = 1;

/// On-disk placement result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacementFile {
    pub version: u32,
    pub scale: f64,
    pub translation: [f64; 3],
    pub best_step: usize,
    pub steps: usize,
    pub loss: LossRecord,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub total: f64,
    pub pen: f64,
    pub hoi: f64,
    pub mask: f64,
}

impl From<&PlacementResult> for PlacementFile {
    fn from(r: &PlacementResult) -> Self {
        let l = r.trace[r.best_step].loss;
        let t = r.params.translation;
        PlacementFile {
            version: PLACEMENT_VERSION,
            scale: r.params.scale,
            translation: [t.x, t.y, t.z],
            best_step: r.best_step,
            steps: r.trace.len().saturating_sub(1),
            loss: LossRecord {
                total: l.total,
                pen: l.pen,
                hoi: l.hoi,
                mask: l.mask,
            },
        }
    }
}

impl PlacementFile {
    pub fn params(&self) -> Result<PlacementParams, PlacementError> {
        PlacementParams::new(self.scale, Vec3::from(self.translation))
    }
}

/// Everything about one placement that stays fixed while the parameters move.
pub struct PlacementProblem {
    human: TriMesh,
    sdf: SdfGrid,
    spec: ContactSpec,
    pen_points: Vec<Vec3>,
    renderer: SoftRenderer,
    targets: MaskTargets,
    target_counts: [usize; 2],
    weights: LossWeights,
}

impl PlacementProblem {
    pub fn new(
        human: &TriMesh,
        object: &TriMesh,
        spec: ContactSpec,
        camera: &Camera,
        targets: MaskTargets,
        weights: LossWeights,
        silhouette: SoftRasterConfig,
    ) -> Result<Self, PlacementError> {
        Self::with_settings(human, object, spec, camera, targets, weights, silhouette, SdfSettings::default(), PenetrationPoints::Vertices, 0)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn with_settings(
        human: &TriMesh,
        object: &TriMesh,
        spec: ContactSpec,
        camera: &Camera,
        targets: MaskTargets,
        weights: LossWeights,
        silhouette: SoftRasterConfig,
        sdf: SdfSettings,
        pen_points: PenetrationPoints,
        seed: u64,
    ) -> Result<Self, PlacementError> {
        weights.validate()?;
        for t in [&targets.m_h_init, &targets.m_hoi_star] {
            if t.width() != camera.width() || t.height() != camera.height() {
                return Err(PlacementError::TargetSize(t.width(), t.height(), camera.width(), camera.height()));
            }
        }
        let grid = build_sdf(human, sdf.resolution, sdf.padding)?;
        let pen_points = match pen_points {
            PenetrationPoints::Vertices => object.vertices().to_vec(),
            PenetrationPoints::SurfaceSamples { count } => object.sample_surface(count.max(1), &mut ChaCha8Rng::seed_from_u64(seed)),
        };
        if pen_points.is_empty() {
            return Err(LossError::EmptySet("object").into());
        }
        Ok(PlacementProblem {
            human: human.clone(),
            sdf: grid,
            spec,
            pen_points,
            renderer: SoftRenderer::new(human, camera, silhouette, Some(object))?,
            target_counts: [targets.m_h_init.count(), targets.m_hoi_star.count()],
            targets,
            weights,
        })
    }

    pub fn weights(&self) -> &LossWeights {
        &self.weights
    }

    pub fn sdf(&self) -> &SdfGrid {
        &self.sdf
    }

    /// Penetration term and its gradient in theta.
    pub fn penetration(&self, theta: &Theta) -> (f64, Theta) {
        let s = theta[0].exp();
        let t = Vec3::new(theta[1], theta[2], theta[3]);
        let n = self.pen_points.len() as f64;
        let (mut loss, mut grad) = (0.0, Theta::zeros());
        for v in &self.pen_points {
            let q = (v - t) / s;
            let sample = sample_sdf(&self.sdf, &q);
            let phi = s * sample.value;
            if phi < 0.0 {
                loss -= phi / n;
                let dphi_dlogs = s * (sample.value - sample.gradient.dot(&q));
                grad[0] -= dphi_dlogs / n;
                for a in 0..3 {
                    grad[a + 1] += sample.gradient[a] / n;
                }
            }
        }
        (loss, grad)
    }

    /// Contact term after mutual filtering of the placed human points.
    pub fn contact(&self, theta: &Theta) -> Result<(f64, Theta), PlacementError> {
        let params = PlacementParams::from_theta(theta);
        let placed: Vec<Vec3> = self.spec.human_points().iter().map(|p| params.apply(p)).collect();
        let object = self.spec.object_points();
        let (mut hi, mut oi) = mutual_knn_indices(&placed, object, self.spec.k());
        if hi.is_empty() || oi.is_empty() {
            warn!("mutual nearest-neighbor filter kept no pairs; using the unfiltered contact sets");
            hi = (0..placed.len()).collect();
            oi = (0..object.len()).collect();
        }
        let h: Vec<Vec3> = hi.iter().map(|&i| placed[i]).collect();
        let o: Vec<Vec3> = oi.iter().map(|&j| object[j]).collect();
        let (loss, g) = contact_loss_with_grad(&h, &o)?;
        let mut grad = Theta::zeros();
        for (gi, &i) in g.iter().zip(&hi) {
            grad[0] += gi.dot(&(self.spec.human_points()[i] * params.scale));
            grad[1] += gi.x;
            grad[2] += gi.y;
            grad[3] += gi.z;
        }
        Ok((loss, grad))
    }

    fn placed_vertices(&self, theta: &Theta) -> Vec<Vec3> {
        let params = PlacementParams::from_theta(theta);
        self.human.vertices().iter().map(|v| params.apply(v)).collect()
    }

    fn render<const P: usize>(&self, theta: &Theta, with_jacobian: bool) -> SoftRender<P> {
        let s = theta[0].exp();
        let verts = self.placed_vertices(theta);
        if with_jacobian {
            let canonical = self.human.vertices();
            let jac = |i: usize| -> SMatrix<f64, 3, P> {
                let mut j = SMatrix::<f64, 3, P>::zeros();
                let sv = canonical[i] * s;
                for r in 0..3 {
                    j[(r, 0)] = sv[r];
                    j[(r, r + 1)] = 1.0;
                }
                j
            };
            self.renderer.render::<P>(&verts, Some(&jac))
        } else {
            self.renderer.render::<P>(&verts, None)
        }
    }

    /// Silhouette term; the gradient is only filled when requested.
    pub fn mask(&self, theta: &Theta, analytic_grad: bool) -> Result<(f64, Theta), PlacementError> {
        if analytic_grad {
            let r = self.render::<4>(theta, true);
            let occluded = r.occluded.as_ref().expect("object occluder");
            let (iou_h, g_h) = soft_iou_with_grad(&r.plain, &self.targets.m_h_init)?;
            let (iou_hoi, g_hoi) = soft_iou_with_grad(occluded, &self.targets.m_hoi_star)?;
            let mut grad = Theta::zeros();
            for (px, d) in &r.plain_grad {
                grad -= d * g_h[*px as usize];
            }
            for (px, d) in &r.occluded_grad {
                grad -= d * g_hoi[*px as usize];
            }
            Ok(((1.0 - iou_h) + (1.0 - iou_hoi), grad))
        } else {
            let targets = OverlapTargets {
                plain: &self.targets.m_h_init,
                occluded: &self.targets.m_hoi_star,
                plain_count: self.target_counts[0],
                occluded_count: self.target_counts[1],
            };
            let [iou_h, iou_hoi] = self.renderer.overlap(&self.placed_vertices(theta), &targets)?;
            Ok(((1.0 - iou_h) + (1.0 - iou_hoi), Theta::zeros()))
        }
    }

    fn mask_fd(&self, theta: &Theta, eps: f64) -> Result<Theta, PlacementError> {
        let mut grad = Theta::zeros();
        for a in 0..4 {
            let mut up = *theta;
            let mut down = *theta;
            up[a] += eps;
            down[a] -= eps;
            grad[a] = (self.mask(&up, false)?.0 - self.mask(&down, false)?.0) / (2.0 * eps);
        }
        Ok(grad)
    }

    pub fn evaluate(&self, params: &PlacementParams) -> Result<LossBreakdown, PlacementError> {
        let theta = params.to_theta();
        let pen = self.penetration(&theta).0;
        let hoi = self.contact(&theta)?.0;
        let mask = self.mask(&theta, false)?.0;
        let total = crate::losses::total_loss(pen, hoi, mask, &self.weights)?;
        Ok(LossBreakdown { total, pen, hoi, mask })
    }

    /// Loss and total gradient in theta.
    pub fn evaluate_with_grad(&self, theta: &Theta, mode: GradientMode, fd_epsilon: f64) -> Result<(LossBreakdown, Theta), PlacementError> {
        let (pen, g_pen) = self.penetration(theta);
        let (hoi, g_hoi) = self.contact(theta)?;
        let w = &self.weights;
        let (mask, g_mask) = match mode {
            GradientMode::Analytic => self.mask(theta, true)?,
            GradientMode::FiniteDifference => {
                let m = self.mask(theta, false)?.0;
                let g = if w.gamma > 0.0 { self.mask_fd(theta, fd_epsilon)? } else { Theta::zeros() };
                (m, g)
            }
        };
        let total = crate::losses::total_loss(pen, hoi, mask, w)?;
        let grad = g_pen * w.alpha + g_hoi * w.beta + g_mask * w.gamma;
        Ok((LossBreakdown { total, pen, hoi, mask }, grad))
    }
}

/// Builds the problem from raw inputs and evaluates it once.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_objective(
    human: &TriMesh,
    object: &TriMesh,
    spec: &ContactSpec,
    camera: &Camera,
    targets: &MaskTargets,
    params: &PlacementParams,
    weights: &LossWeights,
    silhouette: &SoftRasterConfig,
) -> Result<LossBreakdown, PlacementError> {
    PlacementProblem::new(human, object, spec.clone(), camera, targets.clone(), *weights, *silhouette)?.evaluate(params)
}

/// Runs AdamW on theta for `config.steps` updates. The trace has one row per
/// evaluated iterate (the initial point plus one per update); the returned
/// parameters are the first iterate with the lowest recorded total.
pub fn optimize_placement(problem: &PlacementProblem, init: &PlacementParams, config: &OptimConfig) -> Result<PlacementResult, PlacementError> {
    config.validate()?;
    PlacementParams::new(init.scale, init.translation)?;
    let mut theta = init.to_theta();
    let mut adam = AdamW::<4>::new(config);
    let mut trace = Vec::with_capacity(config.steps + 1);
    let mut best: Option<(f64, usize, PlacementParams)> = None;
    let mut initial = f64::NAN;
    for step in 0..=config.steps {
        let (loss, grad) = problem.evaluate_with_grad(&theta, config.gradient_mode, config.fd_epsilon).map_err(|e| match e {
            PlacementError::Loss(LossError::NonFinite(..)) if step == 0 => PlacementError::NonFiniteInit(f64::NAN),
            e => e,
        })?;
        let params = PlacementParams::from_theta(&theta);
        if step == 0 {
            if !loss.total.is_finite() {
                return Err(PlacementError::NonFiniteInit(loss.total));
            }
            initial = loss.total;
        } else if !loss.total.is_finite() || loss.total > 1e6 * initial.max(1e-12) {
            return Err(PlacementError::Diverged {
                step,
                loss: loss.total,
                initial,
            });
        }
        trace.push(TraceRow { step, loss, params });
        if best.map_or(true, |(b, _, _)| loss.total < b) {
            best = Some((loss.total, step, params));
        }
        if step == config.steps {
            break;
        }
        adam.step(&mut theta, &grad);
    }
    let (_, best_step, params) = best.expect("at least one step");
    Ok(PlacementResult { params, best_step, trace })
}
