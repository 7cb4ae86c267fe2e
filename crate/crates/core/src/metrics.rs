//! Interaction and diversity metrics.
//!
//! Non-collision is the mean over bodies of the fraction of vertices with a
//! nonnegative scene SDF. Contact is the fraction of bodies with some vertex
//! within `threshold` of the scene surface. Entropy (nats) and cluster size
//! come from a seeded k-means over pose parameter vectors.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{build_sdf, GeometryError, SdfGrid, TriMesh};

pub const DEFAULT_CONTACT_THRESHOLD: f64 = 0.02;
pub const KMEANS_MAX_ITERS: usize = 300;
pub const POSE_VECTORS_VERSION: u32 = 1;
pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("no bodies to score")]
    NoBodies,
    #[error("body {0} has no vertices")]
    EmptyBody(usize),
    #[error("contact threshold must be positive, got {0}")]
    Threshold(f64),
    #[error("cluster count must be at least 1")]
    InvalidK,
    #[error("{samples} samples cannot form {k} clusters")]
    TooFewSamples { samples: usize, k: usize },
    #[error("invalid pose parameter set: {0}")]
    InvalidPoses(String),
    #[error("{path}: {message}")]
    Format { path: String, message: String },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn per_body<T: Send>(bodies: &[TriMesh], f: impl Fn(&TriMesh) -> T + Sync + Send) -> Result<Vec<T>, MetricsError> {
    if bodies.is_empty() {
        return Err(MetricsError::NoBodies);
    }
    if let Some(i) = bodies.iter().position(|b| b.vertices().is_empty()) {
        return Err(MetricsError::EmptyBody(i));
    }
    Ok(bodies.par_iter().map(f).collect())
}

pub fn non_collision_score(bodies: &[TriMesh], scene_sdf: &SdfGrid) -> Result<f64, MetricsError> {
    let fractions = per_body(bodies, |b| {
        let outside = b.vertices().iter().filter(|v| scene_sdf.sample(v).value >= 0.0).count();
        outside as f64 / b.vertices().len() as f64
    })?;
    Ok(fractions.iter().sum::<f64>() / fractions.len() as f64)
}

pub fn contact_score(bodies: &[TriMesh], scene_sdf: &SdfGrid, threshold: f64) -> Result<f64, MetricsError> {
    if !(threshold > 0.0 && threshold.is_finite()) {
        return Err(MetricsError::Threshold(threshold));
    }
    let touching = per_body(bodies, |b| b.vertices().iter().any(|v| scene_sdf.sample(v).value.abs() <= threshold))?;
    Ok(touching.iter().filter(|&&t| t).count() as f64 / touching.len() as f64)
}

/// Flat pose/shape parameter vectors of a common dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseParamSet {
    dim: usize,
    samples: Vec<Vec<f64>>,
}

impl PoseParamSet {
    pub fn new(samples: Vec<Vec<f64>>) -> Result<Self, MetricsError> {
        let dim = samples.first().ok_or_else(|| MetricsError::InvalidPoses("no samples".into()))?.len();
        if dim == 0 {
            return Err(MetricsError::InvalidPoses("zero-dimensional samples".into()));
        }
        if let Some(i) = samples.iter().position(|s| s.len() != dim) {
            return Err(MetricsError::InvalidPoses(format!("sample {i} has dimension {} instead of {dim}", samples[i].len())));
        }
        if samples.iter().flatten().any(|v| !v.is_finite()) {
            return Err(MetricsError::InvalidPoses("non-finite value".into()));
        }
        Ok(PoseParamSet { dim, samples })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[Vec<f64>] {
        &self.samples
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversityMetrics {
    pub entropy: f64,
    pub cluster_size: f64,
    pub assignments: Vec<usize>,
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(p: &[f64], centers: &[Vec<f64>]) -> usize {
    let mut best = (f64::INFINITY, 0);
    for (i, c) in centers.iter().enumerate() {
        let d = dist2(p, c);
        if d < best.0 {
            best = (d, i);
        }
    }
    best.1
}

/// k-means++ seeding followed by Lloyd iterations (at most
/// [`KMEANS_MAX_ITERS`]). Distance ties go to the lower cluster index and
/// empty clusters keep their previous center.
pub fn kmeans(poses: &PoseParamSet, k: usize, seed: u64) -> Result<Vec<usize>, MetricsError> {
    if k == 0 {
        return Err(MetricsError::InvalidK);
    }
    let n = poses.len();
    if n < k {
        return Err(MetricsError::TooFewSamples { samples: n, k });
    }
    let pts = &poses.samples;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = vec![pts[rng.gen_range(0..n)].clone()];
    let mut d2: Vec<f64> = pts.iter().map(|p| dist2(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.gen::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if r < d {
                    chosen = i;
                    break;
                }
                r -= d;
            }
            chosen
        } else {
            rng.gen_range(0..n)
        };
        centers.push(pts[pick].clone());
        for (i, p) in pts.iter().enumerate() {
            d2[i] = d2[i].min(dist2(p, &centers[centers.len() - 1]));
        }
    }

    let mut assign: Vec<usize> = pts.iter().map(|p| nearest(p, &centers)).collect();
    for _ in 0..KMEANS_MAX_ITERS {
        for (c, center) in centers.iter_mut().enumerate() {
            let members: Vec<&Vec<f64>> = pts.iter().zip(&assign).filter(|(_, &a)| a == c).map(|(p, _)| p).collect();
            if members.is_empty() {
                continue;
            }
            for d in 0..poses.dim {
                center[d] = members.iter().map(|m| m[d]).sum::<f64>() / members.len() as f64;
            }
        }
        let next: Vec<usize> = pts.iter().map(|p| nearest(p, &centers)).collect();
        if next == assign {
            break;
        }
        assign = next;
    }
    Ok(assign)
}

/// Entropy of the cluster-size histogram in nats, and the mean over
/// non-empty clusters of the mean pairwise Euclidean distance inside each
/// cluster (0 for singletons).
pub fn diversity_metrics(poses: &PoseParamSet, k: usize, seed: u64) -> Result<DiversityMetrics, MetricsError> {
    let assignments = kmeans(poses, k, seed)?;
    let n = poses.len() as f64;
    let mut entropy = 0.0;
    let mut sizes = Vec::new();
    for c in 0..k {
        let members: Vec<&Vec<f64>> = poses.samples.iter().zip(&assignments).filter(|(_, &a)| a == c).map(|(p, _)| p).collect();
        if members.is_empty() {
            continue;
        }
        let p = members.len() as f64 / n;
        entropy -= p * p.ln();
        let mut sum = 0.0;
        let mut pairs = 0usize;
        for i in 0..members.len() {
            for j in i + 1..members.len() {
                sum += dist2(members[i], members[j]).sqrt();
                pairs += 1;
            }
        }
        sizes.push(if pairs == 0 { 0.0 } else { sum / pairs as f64 });
    }
    let cluster_size = sizes.iter().sum::<f64>() / sizes.len() as f64;
    Ok(DiversityMetrics {
        entropy: entropy.max(0.0),
        cluster_size,
        assignments,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseVectorHeader {
    pub count: usize,
    pub dim: usize,
    pub dtype: String,
    pub version: u32,
}

/// Little-endian f32 vectors, row-major, with a JSON sidecar.
pub fn write_pose_vectors(poses: &PoseParamSet, path: &Path) -> Result<(), MetricsError> {
    let bytes: Vec<u8> = poses.samples.iter().flatten().flat_map(|&v| (v as f32).to_le_bytes()).collect();
    fs::write(path, bytes)?;
    let header = PoseVectorHeader {
        count: poses.len(),
        dim: poses.dim,
        dtype: "f32".into(),
        version: POSE_VECTORS_VERSION,
    };
    fs::write(path.with_extension("json"), serde_json::to_string_pretty(&header).expect("serializable") + "\n")?;
    Ok(())
}

pub fn read_pose_vectors(path: &Path) -> Result<PoseParamSet, MetricsError> {
    let side = path.with_extension("json");
    let err = |p: &Path, m: String| MetricsError::Format { path: p.display().to_string(), message: m };
    let header: PoseVectorHeader = serde_json::from_str(&fs::read_to_string(&side)?).map_err(|e| err(&side, e.to_string()))?;
    if header.version != POSE_VECTORS_VERSION || header.dtype != "f32" {
        return Err(err(&side, format!("unsupported version {} / dtype {}", header.version, header.dtype)));
    }
    let bytes = fs::read(path)?;
    if bytes.len() != 4 * header.count * header.dim {
        return Err(err(path, format!("expected {} bytes, found {}", 4 * header.count * header.dim, bytes.len())));
    }
    let flat: Vec<f64> = bytes.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64).collect();
    PoseParamSet::new(flat.chunks(header.dim.max(1)).map(|c| c.to_vec()).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricsSettings {
    pub contact_threshold: f64,
    pub sdf_resolution: usize,
    pub sdf_padding: f64,
    pub diversity_k: usize,
    pub seed: u64,
}

impl Default for MetricsSettings {
    fn default() -> Self {
        MetricsSettings {
            contact_threshold: DEFAULT_CONTACT_THRESHOLD,
            sdf_resolution: 128,
            sdf_padding: 0.1,
            diversity_k: 2,
            seed: 0,
        }
    }
}

/// Evaluation summary. Diversity fields are `None` when no pose vectors were
/// given or there are fewer samples than clusters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub version: u32,
    pub non_collision: f64,
    pub contact: f64,
    pub entropy: Option<f64>,
    pub cluster_size: Option<f64>,
    pub clip: String,
    pub bodies: usize,
    pub pose_samples: usize,
    pub settings: MetricsSettings,
}

pub fn evaluate_scene(scene: &TriMesh, bodies: &[TriMesh], poses: Option<&PoseParamSet>, settings: &MetricsSettings) -> Result<MetricsReport, MetricsError> {
    let sdf = build_sdf(scene, settings.sdf_resolution, settings.sdf_padding)?;
    let non_collision = non_collision_score(bodies, &sdf)?;
    let contact = contact_score(bodies, &sdf, settings.contact_threshold)?;
    let diversity = match poses {
        Some(p) if p.len() >= settings.diversity_k => Some(diversity_metrics(p, settings.diversity_k, settings.seed)?),
        _ => None,
    };
    Ok(MetricsReport {
        version: REPORT_VERSION,
        non_collision,
        contact,
        entropy: diversity.as_ref().map(|d| d.entropy),
        cluster_size: diversity.as_ref().map(|d| d.cluster_size),
        clip: "unavailable".into(),
        bodies: bodies.len(),
        pose_samples: poses.map_or(0, |p| p.len()),
        settings: *settings,
    })
}

pub fn write_report(report: &MetricsReport, path: &Path) -> Result<(), MetricsError> {
    fs::write(path, serde_json::to_string_pretty(report).expect("serializable") + "\n")?;
    Ok(())
}
