//! Latent files (raw little-endian f32 plus a JSON sidecar) and schedule JSON.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{InpaintError, Latent, NoiseSchedule};

pub const LATENT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatentHeader {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub dtype: String,
    pub version: u32,
}

fn format_err(path: &Path, message: impl Into<String>) -> InpaintError {
    InpaintError::Format {
        path: path.display().to_string(),
        message: message.into(),
    }
}

/// `latent.bin` -> `latent.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Values are stored as f32, so a round trip rounds to single precision.
pub fn write_latent(latent: &Latent, path: &Path) -> Result<(), InpaintError> {
    let header = LatentHeader {
        channels: latent.channels(),
        height: latent.height(),
        width: latent.width(),
        dtype: "f32".into(),
        version: LATENT_VERSION,
    };
    let bytes: Vec<u8> = latent.data().iter().flat_map(|&v| (v as f32).to_le_bytes()).collect();
    fs::write(path, bytes)?;
    let json = serde_json::to_string_pretty(&header).expect("serializable");
    fs::write(sidecar_path(path), json + "\n")?;
    Ok(())
}

pub fn read_latent(path: &Path) -> Result<Latent, InpaintError> {
    let side = sidecar_path(path);
    let header: LatentHeader = serde_json::from_str(&fs::read_to_string(&side)?).map_err(|e| format_err(&side, e.to_string()))?;
    if header.version != LATENT_VERSION {
        return Err(format_err(&side, format!("unsupported version {}", header.version)));
    }
    if header.dtype != "f32" {
        return Err(format_err(&side, format!("unsupported dtype '{}'", header.dtype)));
    }
    let bytes = fs::read(path)?;
    let n = header.channels * header.height * header.width;
    if bytes.len() != 4 * n {
        return Err(format_err(path, format!("expected {} bytes, found {}", 4 * n, bytes.len())));
    }
    let data = bytes.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64).collect();
    Latent::new(header.channels, header.height, header.width, data)
}

pub fn read_schedule(path: &Path) -> Result<NoiseSchedule, InpaintError> {
    let values: Vec<f64> = serde_json::from_str(&fs::read_to_string(path)?).map_err(|e| format_err(path, e.to_string()))?;
    NoiseSchedule::new(values)
}

pub fn write_schedule(schedule: &NoiseSchedule, path: &Path) -> Result<(), InpaintError> {
    fs::write(path, serde_json::to_string(schedule.values()).expect("serializable") + "\n")?;
    Ok(())
}
