//! Pinhole camera, hard silhouette rasterization with an optional occluder,
//! and a differentiable soft silhouette.
//!
//! Conventions: the extrinsics map world to camera coordinates, the camera
//! looks down +Z with +X right and +Y down, the image origin is the top-left
//! corner and pixel `(x, y)` has its center at `(x + 0.5, y + 0.5)`.

pub mod io;
mod raster;
mod soft;

use nalgebra::{Matrix3, Vector2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{TriMesh, Vec3};

pub use raster::{rasterize_depth, DepthBuffer, NEAR_PLANE};
pub use soft::{MeshTopology, OverlapTargets, SoftRasterConfig, SoftRender, SoftRenderer};

pub type Vec2 = Vector2<f64>;

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("mesh is empty")]
    EmptyMesh,
    #[error("sharpness must be positive, got {0}")]
    InvalidSharpness(f64),
    #[error("mask size mismatch: {0}x{1} vs {2}x{3}")]
    SizeMismatch(usize, usize, usize, usize),
    #[error("{path}: {message}")]
    Format { path: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    intrinsics: Intrinsics,
    rotation: Matrix3<f64>,
    translation: Vec3,
    width: usize,
    height: usize,
}

impl Camera {
    pub fn new(
        intrinsics: Intrinsics,
        rotation: Matrix3<f64>,
        translation: Vec3,
        width: usize,
        height: usize,
    ) -> Result<Self, RenderError> {
        let Intrinsics { fx, fy, cx, cy } = intrinsics;
        if width == 0 || height == 0 {
            return Err(RenderError::InvalidCamera(format!("image size {width}x{height}")));
        }
        if !(fx > 0.0 && fy > 0.0 && fx.is_finite() && fy.is_finite()) {
            return Err(RenderError::InvalidCamera(format!("focal lengths {fx}, {fy}")));
        }
        if !(0.0..=width as f64).contains(&cx) || !(0.0..=height as f64).contains(&cy) {
            return Err(RenderError::InvalidCamera(format!(
                "principal point ({cx}, {cy}) outside {width}x{height}"
            )));
        }
        let ortho = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        if !(ortho <= 1e-6) || !(rotation.determinant() > 0.0) {
            return Err(RenderError::InvalidCamera("rotation is not orthonormal".into()));
        }
        if !translation.iter().all(|c| c.is_finite()) {
            return Err(RenderError::InvalidCamera("non-finite translation".into()));
        }
        Ok(Camera {
            intrinsics,
            rotation,
            translation,
            width,
            height,
        })
    }

    /// Camera at `eye` looking at `target`, with `up` projecting to image-up.
    pub fn look_at(
        eye: Vec3,
        target: Vec3,
        up: Vec3,
        intrinsics: Intrinsics,
        width: usize,
        height: usize,
    ) -> Result<Self, RenderError> {
        let forward = (target - eye)
            .try_normalize(1e-12)
            .ok_or_else(|| RenderError::InvalidCamera("eye equals target".into()))?;
        let right = forward
            .cross(&up)
            .try_normalize(1e-12)
            .ok_or_else(|| RenderError::InvalidCamera("up is parallel to the view direction".into()))?;
        let down = forward.cross(&right);
        let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        Camera::new(intrinsics, rotation, -(rotation * eye), width, height)
    }

    pub fn intrinsics(&self) -> Intrinsics {
        self.intrinsics
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> Vec3 {
        self.translation
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn to_camera(&self, world: &Vec3) -> Vec3 {
        self.rotation * world + self.translation
    }

    /// Pixel coordinates of a camera-space point (Z must be positive).
    pub fn project(&self, p: &Vec3) -> Vec2 {
        let Intrinsics { fx, fy, cx, cy } = self.intrinsics;
        Vec2::new(fx * p.x / p.z + cx, fy * p.y / p.z + cy)
    }

    /// Camera-space direction through pixel position `(u, v)`, with unit Z.
    pub fn ray(&self, u: f64, v: f64) -> Vec3 {
        let Intrinsics { fx, fy, cx, cy } = self.intrinsics;
        Vec3::new((u - cx) / fx, (v - cy) / fy, 1.0)
    }

    /// Same extrinsics, image and principal point scaled by `factor`.
    pub fn scaled(&self, factor: usize) -> Camera {
        let f = factor as f64;
        let i = self.intrinsics;
        Camera {
            intrinsics: Intrinsics {
                fx: i.fx * f,
                fy: i.fy * f,
                cx: i.cx * f,
                cy: i.cy * f,
            },
            rotation: self.rotation,
            translation: self.translation,
            width: self.width * factor,
            height: self.height * factor,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self, RenderError> {
        if bits.len() != width * height {
            return Err(RenderError::SizeMismatch(width, height, bits.len(), 1));
        }
        Ok(BinaryMask { width, height, bits })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        BinaryMask {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.bits[y * self.width + x] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Bounding box of set pixels as `(x0, y0, x1, y1)` inclusive.
    pub fn bounding_box(&self) -> Option<(usize, usize, usize, usize)> {
        let mut bb: Option<(usize, usize, usize, usize)> = None;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    bb = Some(match bb {
                        None => (x, y, x, y),
                        Some((a, b, c, d)) => (a.min(x), b.min(y), c.max(x), d.max(y)),
                    });
                }
            }
        }
        bb
    }

    pub fn to_soft(&self) -> SoftMask {
        SoftMask {
            width: self.width,
            height: self.height,
            values: self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        }
    }

    /// Hard intersection-over-union; two empty masks count as identical.
    pub fn iou(&self, other: &BinaryMask) -> Result<f64, RenderError> {
        check_same_size(self.width, self.height, other.width, other.height)?;
        let (mut inter, mut union) = (0usize, 0usize);
        for (&a, &b) in self.bits.iter().zip(&other.bits) {
            inter += (a && b) as usize;
            union += (a || b) as usize;
        }
        Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SoftMask {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl SoftMask {
    /// Values must lie in [0, 1].
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self, RenderError> {
        if values.len() != width * height {
            return Err(RenderError::SizeMismatch(width, height, values.len(), 1));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(RenderError::Format {
                path: "<soft mask>".into(),
                message: format!("value {v} outside [0, 1]"),
            });
        }
        Ok(SoftMask { width, height, values })
    }

    /// Caller guarantees the length and range invariants.
    pub(crate) fn from_raw(width: usize, height: usize, values: Vec<f64>) -> Self {
        debug_assert!(values.len() == width * height);
        SoftMask { width, height, values }
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        SoftMask {
            width,
            height,
            values: vec![value.clamp(0.0, 1.0); width * height],
        }
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

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len().max(1) as f64
    }

    pub fn threshold(&self, level: f64) -> BinaryMask {
        BinaryMask {
            width: self.width,
            height: self.height,
            bits: self.values.iter().map(|&v| v > level).collect(),
        }
    }
}

pub(crate) fn check_same_size(w0: usize, h0: usize, w1: usize, h1: usize) -> Result<(), RenderError> {
    if w0 != w1 || h0 != h1 {
        Err(RenderError::SizeMismatch(w0, h0, w1, h1))
    } else {
        Ok(())
    }
}

/// Hard silhouette: a pixel is set when some triangle covers its center and,
/// with an occluder, the mesh's nearest hit is strictly closer than the
/// occluder's. No back-face culling.
pub fn rasterize_silhouette(mesh: &TriMesh, camera: &Camera, occluder: Option<&TriMesh>) -> Result<BinaryMask, RenderError> {
    if mesh.is_empty() {
        return Err(RenderError::EmptyMesh);
    }
    let depth = rasterize_depth(mesh, camera);
    let occ = occluder.map(|o| rasterize_depth(o, camera));
    let bits = (0..depth.len())
        .map(|i| {
            let z = depth.depth(i);
            z.is_finite() && occ.as_ref().map_or(true, |o| z < o.depth(i))
        })
        .collect();
    Ok(BinaryMask {
        width: camera.width,
        height: camera.height,
        bits,
    })
}

/// Differentiable silhouette: `sigmoid(sharpness * signed distance)` to the
/// projected silhouette boundary, positive inside, multiplied by a soft depth
/// test against `occluder` when one is given.
pub fn soft_silhouette(
    mesh: &TriMesh,
    camera: &Camera,
    config: &SoftRasterConfig,
    occluder: Option<&TriMesh>,
) -> Result<SoftMask, RenderError> {
    let renderer = SoftRenderer::new(mesh, camera, *config, occluder)?;
    let render = renderer.render::<1>(mesh.vertices(), None);
    Ok(match occluder {
        Some(_) => render.occluded.expect("occluder given"),
        None => render.plain,
    })
}
