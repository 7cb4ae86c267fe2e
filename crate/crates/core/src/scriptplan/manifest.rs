//! Interpolation-job manifest: one job per plan segment, chained so each
//! job starts on the image the previous one ended on.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{ContactPair, Keyframe, KeyframePlan, PlanSegment};

pub const MANIFEST_VERSION: u32 = 1;
/// Seconds per interpolation job.
pub const DEFAULT_DURATION_HINT: f64 = 5.0;

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("plan has {keyframes} keyframes but {images} images were given")]
    ImageCountMismatch { keyframes: usize, images: usize },
    #[error("unsupported manifest version {0} (expected {MANIFEST_VERSION})")]
    Version(u32),
    #[error("manifest is inconsistent: {0}")]
    Inconsistent(String),
    #[error("duration hint must be positive and finite, got {0}")]
    InvalidDuration(f64),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestKeyframe {
    pub keyframe_id: usize,
    pub source_action: usize,
    pub target_object: String,
    pub contacts: Vec<ContactPair>,
    pub image: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestJob {
    pub start_image: String,
    pub end_image: String,
    pub prompt: String,
    pub duration_hint: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanManifest {
    pub version: u32,
    pub keyframes: Vec<ManifestKeyframe>,
    pub jobs: Vec<ManifestJob>,
}

pub fn export_plan(plan: &KeyframePlan, keyframe_images: &[String], duration_hint: f64) -> Result<PlanManifest, ManifestError> {
    if keyframe_images.len() != plan.keyframes.len() {
        return Err(ManifestError::ImageCountMismatch {
            keyframes: plan.keyframes.len(),
            images: keyframe_images.len(),
        });
    }
    if !(duration_hint.is_finite() && duration_hint > 0.0) {
        return Err(ManifestError::InvalidDuration(duration_hint));
    }
    let keyframes = plan
        .keyframes
        .iter()
        .zip(keyframe_images)
        .map(|(k, image)| ManifestKeyframe {
            keyframe_id: k.keyframe_id,
            source_action: k.source_action,
            target_object: k.target_object.clone(),
            contacts: k.contacts.clone(),
            image: image.clone(),
        })
        .collect();
    let jobs = plan
        .segments
        .iter()
        .map(|s| ManifestJob {
            start_image: keyframe_images[s.from_keyframe - 1].clone(),
            end_image: keyframe_images[s.to_keyframe - 1].clone(),
            prompt: s.transition_text.clone(),
            duration_hint,
        })
        .collect();
    Ok(PlanManifest {
        version: MANIFEST_VERSION,
        keyframes,
        jobs,
    })
}

/// Inverse of [`export_plan`]: recovers the plan and the image list.
pub fn import_manifest(manifest: &PlanManifest) -> Result<(KeyframePlan, Vec<String>), ManifestError> {
    if manifest.version != MANIFEST_VERSION {
        return Err(ManifestError::Version(manifest.version));
    }
    let n = manifest.keyframes.len();
    if n == 0 {
        return Err(ManifestError::Inconsistent("no keyframes".into()));
    }
    if manifest.jobs.len() != n - 1 {
        return Err(ManifestError::Inconsistent(format!("{} keyframes need {} jobs, found {}", n, n - 1, manifest.jobs.len())));
    }
    for (i, k) in manifest.keyframes.iter().enumerate() {
        if k.keyframe_id != i + 1 {
            return Err(ManifestError::Inconsistent(format!("keyframe {} has id {}", i + 1, k.keyframe_id)));
        }
    }
    let mut segments = Vec::with_capacity(n - 1);
    for (i, job) in manifest.jobs.iter().enumerate() {
        let (from, to) = (&manifest.keyframes[i], &manifest.keyframes[i + 1]);
        if job.start_image != from.image || job.end_image != to.image {
            return Err(ManifestError::Inconsistent(format!("job {} does not join keyframes {} and {}", i + 1, i + 1, i + 2)));
        }
        segments.push(PlanSegment {
            from_keyframe: i + 1,
            to_keyframe: i + 2,
            transition_text: job.prompt.clone(),
        });
    }
    let keyframes = manifest
        .keyframes
        .iter()
        .map(|k| Keyframe {
            keyframe_id: k.keyframe_id,
            source_action: k.source_action,
            target_object: k.target_object.clone(),
            contacts: k.contacts.clone(),
        })
        .collect();
    let images = manifest.keyframes.iter().map(|k| k.image.clone()).collect();
    Ok((KeyframePlan { keyframes, segments }, images))
}

pub fn write_manifest(manifest: &PlanManifest, path: &Path) -> Result<(), ManifestError> {
    fs::write(path, serde_json::to_string_pretty(manifest)? + "\n")?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<PlanManifest, ManifestError> {
    let manifest: PlanManifest = serde_json::from_str(&fs::read_to_string(path)?)?;
    import_manifest(&manifest)?;
    Ok(manifest)
}
