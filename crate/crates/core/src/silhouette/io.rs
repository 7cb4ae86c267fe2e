//! Mask PNGs and camera JSON.

use std::fs;
use std::path::Path;

use image::{GrayImage, ImageBuffer, Luma};
use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use super::{BinaryMask, Camera, Intrinsics, RenderError, SoftMask};
use crate::geometry::Vec3;

pub const CAMERA_VERSION: u32 = 1;
pub const CAMERA_CONVENTION: &str =
    "world-to-camera extrinsics; camera looks down +Z with +X right and +Y down; image origin top-left, pixel (x, y) centered at (x + 0.5, y + 0.5)";

fn format_err(path: &Path, message: impl Into<String>) -> RenderError {
    RenderError::Format {
        path: path.display().to_string(),
        message: message.into(),
    }
}

/// Writes 0 for unset, 255 for set.
pub fn write_binary_mask(mask: &BinaryMask, path: &Path) -> Result<(), RenderError> {
    let img: GrayImage = ImageBuffer::from_fn(mask.width() as u32, mask.height() as u32, |x, y| {
        Luma([if mask.get(x as usize, y as usize) { 255 } else { 0 }])
    });
    img.save(path).map_err(|e| format_err(path, e.to_string()))
}

/// Values are linearly quantized to 0..=255.
pub fn write_soft_mask(mask: &SoftMask, path: &Path) -> Result<(), RenderError> {
    let img: GrayImage = ImageBuffer::from_fn(mask.width() as u32, mask.height() as u32, |x, y| {
        Luma([(mask.get(x as usize, y as usize) * 255.0).round() as u8])
    });
    img.save(path).map_err(|e| format_err(path, e.to_string()))
}

pub fn read_soft_mask(path: &Path) -> Result<SoftMask, RenderError> {
    let img = image::open(path).map_err(|e| format_err(path, e.to_string()))?.into_luma8();
    let (w, h) = img.dimensions();
    let values = img.pixels().map(|p| p.0[0] as f64 / 255.0).collect();
    SoftMask::new(w as usize, h as usize, values)
}

/// Any nonzero gray level counts as set.
pub fn read_binary_mask(path: &Path) -> Result<BinaryMask, RenderError> {
    let img = image::open(path).map_err(|e| format_err(path, e.to_string()))?.into_luma8();
    let (w, h) = img.dimensions();
    BinaryMask::new(w as usize, h as usize, img.pixels().map(|p| p.0[0] > 127).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraFile {
    pub version: u32,
    pub convention: String,
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// Row-major world-to-camera rotation.
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

impl From<&Camera> for CameraFile {
    fn from(c: &Camera) -> Self {
        let r = c.rotation();
        let t = c.translation();
        let i = c.intrinsics();
        CameraFile {
            version: CAMERA_VERSION,
            convention: CAMERA_CONVENTION.to_string(),
            width: c.width(),
            height: c.height(),
            fx: i.fx,
            fy: i.fy,
            cx: i.cx,
            cy: i.cy,
            rotation: [
                [r[(0, 0)], r[(0, 1)], r[(0, 2)]],
                [r[(1, 0)], r[(1, 1)], r[(1, 2)]],
                [r[(2, 0)], r[(2, 1)], r[(2, 2)]],
            ],
            translation: [t.x, t.y, t.z],
        }
    }
}

impl CameraFile {
    pub fn to_camera(&self) -> Result<Camera, RenderError> {
        let r = self.rotation;
        let rotation = Matrix3::new(
            r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2],
        );
        Camera::new(
            Intrinsics {
                fx: self.fx,
                fy: self.fy,
                cx: self.cx,
                cy: self.cy,
            },
            rotation,
            Vec3::from(self.translation),
            self.width,
            self.height,
        )
    }
}

pub fn read_camera(path: &Path) -> Result<Camera, RenderError> {
    let text = fs::read_to_string(path)?;
    let file: CameraFile = serde_json::from_str(&text).map_err(|e| format_err(path, e.to_string()))?;
    file.to_camera()
}

pub fn write_camera(camera: &Camera, path: &Path) -> Result<(), RenderError> {
    let json = serde_json::to_string_pretty(&CameraFile::from(camera)).expect("serializable");
    fs::write(path, json + "\n")?;
    Ok(())
}
