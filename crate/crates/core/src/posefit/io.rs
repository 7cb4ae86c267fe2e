//! Depth maps (f32 binary or 16-bit PNG, each with a JSON sidecar) and pose JSON.

use std::fs;
use std::path::Path;

use image::{ImageBuffer, Luma};
use serde::{Deserialize, Serialize};

use super::{DepthMap, Pose6D, PoseError};
use crate::geometry::Vec3;

pub const DEPTH_VERSION: u32 = 1;
pub const POSE_VERSION: u32 = 1;

/// Sidecar for a depth file. `scale` converts stored u16 values to meters
/// and is 1 for f32 files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthHeader {
    pub width: usize,
    pub height: usize,
    pub dtype: String,
    pub scale: f64,
    pub version: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseFile {
    pub version: u32,
    /// (w, x, y, z)
    pub quaternion: [f64; 4],
    pub translation: [f64; 3],
    pub scale: f64,
}

fn format_err(path: &Path, message: impl Into<String>) -> PoseError {
    PoseError::Format {
        path: path.display().to_string(),
        message: message.into(),
    }
}

fn is_png(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png"))
}

/// `.png` paths store millimeters as u16 (scale 1e-3); anything else stores
/// little-endian f32 meters.
pub fn write_depth(depth: &DepthMap, path: &Path) -> Result<(), PoseError> {
    let header = if is_png(path) {
        let scale = 1e-3;
        let img: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_fn(depth.width as u32, depth.height as u32, |x, y| {
            Luma([(depth.get(x as usize, y as usize) / scale).round().min(u16::MAX as f64) as u16])
        });
        img.save(path).map_err(|e| format_err(path, e.to_string()))?;
        DepthHeader {
            width: depth.width,
            height: depth.height,
            dtype: "u16".into(),
            scale,
            version: DEPTH_VERSION,
        }
    } else {
        let bytes: Vec<u8> = depth.values.iter().flat_map(|&v| (v as f32).to_le_bytes()).collect();
        fs::write(path, bytes)?;
        DepthHeader {
            width: depth.width,
            height: depth.height,
            dtype: "f32".into(),
            scale: 1.0,
            version: DEPTH_VERSION,
        }
    };
    fs::write(path.with_extension("json"), serde_json::to_string_pretty(&header).expect("serializable") + "\n")?;
    Ok(())
}

pub fn read_depth(path: &Path) -> Result<DepthMap, PoseError> {
    let side = path.with_extension("json");
    let header: DepthHeader = serde_json::from_str(&fs::read_to_string(&side)?).map_err(|e| format_err(&side, e.to_string()))?;
    if header.version != DEPTH_VERSION {
        return Err(format_err(&side, format!("unsupported version {}", header.version)));
    }
    let n = header.width * header.height;
    let values: Vec<f64> = match header.dtype.as_str() {
        "u16" => {
            let img = image::open(path).map_err(|e| format_err(path, e.to_string()))?.into_luma16();
            if (img.width() as usize, img.height() as usize) != (header.width, header.height) {
                return Err(format_err(path, "image size disagrees with the sidecar"));
            }
            img.pixels().map(|p| p.0[0] as f64 * header.scale).collect()
        }
        "f32" => {
            let bytes = fs::read(path)?;
            if bytes.len() != 4 * n {
                return Err(format_err(path, format!("expected {} bytes, found {}", 4 * n, bytes.len())));
            }
            bytes.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64 * header.scale).collect()
        }
        other => return Err(format_err(&side, format!("unsupported dtype '{other}'"))),
    };
    DepthMap::new(header.width, header.height, values)
}

impl From<&Pose6D> for PoseFile {
    fn from(p: &Pose6D) -> Self {
        let t = p.translation();
        PoseFile {
            version: POSE_VERSION,
            quaternion: p.wxyz(),
            translation: [t.x, t.y, t.z],
            scale: p.scale(),
        }
    }
}

impl PoseFile {
    pub fn to_pose(&self) -> Result<Pose6D, PoseError> {
        if self.version != POSE_VERSION {
            return Err(PoseError::InvalidPose(format!("unsupported pose version {}", self.version)));
        }
        Pose6D::from_wxyz(self.quaternion, Vec3::from(self.translation), self.scale)
    }
}

pub fn write_pose(pose: &Pose6D, path: &Path) -> Result<(), PoseError> {
    fs::write(path, serde_json::to_string_pretty(&PoseFile::from(pose)).expect("serializable") + "\n")?;
    Ok(())
}

pub fn read_pose(path: &Path) -> Result<Pose6D, PoseError> {
    let file: PoseFile = serde_json::from_str(&fs::read_to_string(path)?).map_err(|e| format_err(path, e.to_string()))?;
    file.to_pose()
}
