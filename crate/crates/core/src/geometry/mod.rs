//! Triangle meshes, body-part labels, signed distance fields and the
//! spatial queries the losses are built on.

mod bvh;
pub mod io;
mod sdf;

use std::fmt;
use std::str::FromStr;

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bvh::TriangleBvh;
pub use sdf::{build_sdf, ray_parity_inside, sample_sdf, SdfGrid, SdfSample};

pub type Vec3 = Vector3<f64>;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("mesh has no vertices or no faces")]
    EmptyMesh,
    #[error("face {face} references vertex {index} but the mesh has {count} vertices")]
    FaceIndexOutOfRange { face: usize, index: usize, count: usize },
    #[error("face {face} is degenerate (repeated vertex index)")]
    DegenerateFace { face: usize },
    #[error("part labels cover {labels} vertices but the mesh has {vertices}")]
    LabelCountMismatch { labels: usize, vertices: usize },
    #[error("unknown body part '{0}'")]
    UnknownPart(String),
    #[error("SDF resolution {0} is below the minimum of 8")]
    ResolutionTooLow(usize),
    #[error("SDF padding must be positive, got {0}")]
    InvalidPadding(f64),
    #[error("invalid SDF grid: {0}")]
    InvalidGrid(String),
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// The fixed 15-part partition of the body surface used by contact
/// annotations and action scripts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BodyPart {
    Head,
    LeftUpperArm,
    RightUpperArm,
    LeftForearm,
    RightForearm,
    LeftHand,
    RightHand,
    Back,
    Buttocks,
    LeftThigh,
    RightThigh,
    LeftCalf,
    RightCalf,
    LeftFoot,
    RightFoot,
}

impl BodyPart {
    pub const ALL: [BodyPart; 15] = [
        BodyPart::Head,
        BodyPart::LeftUpperArm,
        BodyPart::RightUpperArm,
        BodyPart::LeftForearm,
        BodyPart::RightForearm,
        BodyPart::LeftHand,
        BodyPart::RightHand,
        BodyPart::Back,
        BodyPart::Buttocks,
        BodyPart::LeftThigh,
        BodyPart::RightThigh,
        BodyPart::LeftCalf,
        BodyPart::RightCalf,
        BodyPart::LeftFoot,
        BodyPart::RightFoot,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BodyPart::Head => "head",
            BodyPart::LeftUpperArm => "left upper arm",
            BodyPart::RightUpperArm => "right upper arm",
            BodyPart::LeftForearm => "left forearm",
            BodyPart::RightForearm => "right forearm",
            BodyPart::LeftHand => "left hand",
            BodyPart::RightHand => "right hand",
            BodyPart::Back => "back",
            BodyPart::Buttocks => "buttocks",
            BodyPart::LeftThigh => "left thigh",
            BodyPart::RightThigh => "right thigh",
            BodyPart::LeftCalf => "left calf",
            BodyPart::RightCalf => "right calf",
            BodyPart::LeftFoot => "left foot",
            BodyPart::RightFoot => "right foot",
        }
    }
}

impl fmt::Display for BodyPart {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BodyPart {
    type Err = GeometryError;

    /// Accepts the canonical names; whitespace runs are collapsed and case is ignored.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let normalized = s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
        BodyPart::ALL
            .iter()
            .copied()
            .find(|p| p.name() == normalized)
            .ok_or_else(|| GeometryError::UnknownPart(s.trim().to_string()))
    }
}

impl Serialize for BodyPart {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for BodyPart {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Axis-aligned bounding box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn empty() -> Self {
        Aabb {
            min: Vec3::repeat(f64::INFINITY),
            max: Vec3::repeat(f64::NEG_INFINITY),
        }
    }

    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Vec3>) -> Self {
        let mut b = Aabb::empty();
        for p in points {
            b.grow(p);
        }
        b
    }

    pub fn grow(&mut self, p: &Vec3) {
        self.min = self.min.inf(p);
        self.max = self.max.sup(p);
    }

    pub fn merge(&self, other: &Aabb) -> Aabb {
        Aabb {
            min: self.min.inf(&other.min),
            max: self.max.sup(&other.max),
        }
    }

    pub fn extent(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    /// Squared distance from `p` to the box (zero inside).
    pub fn distance_squared(&self, p: &Vec3) -> f64 {
        let mut d2 = 0.0;
        for i in 0..3 {
            let v = if p[i] < self.min[i] {
                self.min[i] - p[i]
            } else if p[i] > self.max[i] {
                p[i] - self.max[i]
            } else {
                0.0
            };
            d2 += v * v;
        }
        d2
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }
}

/// Indexed triangle surface.
#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    vertices: Vec<Vec3>,
    faces: Vec<[usize; 3]>,
    part_labels: Option<Vec<BodyPart>>,
}

impl TriMesh {
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> Result<Self, GeometryError> {
        for (fi, f) in faces.iter().enumerate() {
            for &i in f {
                if i >= vertices.len() {
                    return Err(GeometryError::FaceIndexOutOfRange {
                        face: fi,
                        index: i,
                        count: vertices.len(),
                    });
                }
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(GeometryError::DegenerateFace { face: fi });
            }
        }
        Ok(TriMesh {
            vertices,
            faces,
            part_labels: None,
        })
    }

    pub fn with_part_labels(mut self, labels: Vec<BodyPart>) -> Result<Self, GeometryError> {
        if labels.len() != self.vertices.len() {
            return Err(GeometryError::LabelCountMismatch {
                labels: labels.len(),
                vertices: self.vertices.len(),
            });
        }
        self.part_labels = Some(labels);
        Ok(self)
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn part_labels(&self) -> Option<&[BodyPart]> {
        self.part_labels.as_deref()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty() || self.faces.is_empty()
    }

    pub fn triangle(&self, face: usize) -> [Vec3; 3] {
        let f = self.faces[face];
        [self.vertices[f[0]], self.vertices[f[1]], self.vertices[f[2]]]
    }

    pub fn bounds(&self) -> Aabb {
        Aabb::from_points(self.vertices.iter())
    }

    /// Same topology and labels, vertices replaced by `f(v)`.
    pub fn map_vertices(&self, f: impl Fn(&Vec3) -> Vec3) -> TriMesh {
        TriMesh {
            vertices: self.vertices.iter().map(f).collect(),
            faces: self.faces.clone(),
            part_labels: self.part_labels.clone(),
        }
    }

    /// Indices of vertices whose label is one of `parts`.
    pub fn vertices_with_parts(&self, parts: &[BodyPart]) -> Vec<usize> {
        match &self.part_labels {
            Some(labels) => labels
                .iter()
                .enumerate()
                .filter(|(_, l)| parts.contains(l))
                .map(|(i, _)| i)
                .collect(),
            None => Vec::new(),
        }
    }

    /// Concatenates meshes. Labels are kept only when every input has them.
    pub fn merge(meshes: &[&TriMesh]) -> Result<TriMesh, GeometryError> {
        let mut vertices = Vec::new();
        let mut faces = Vec::new();
        let keep_labels = meshes.iter().all(|m| m.part_labels.is_some());
        let mut labels = Vec::new();
        for m in meshes {
            let base = vertices.len();
            vertices.extend_from_slice(&m.vertices);
            faces.extend(m.faces.iter().map(|f| [f[0] + base, f[1] + base, f[2] + base]));
            if keep_labels {
                labels.extend_from_slice(m.part_labels.as_ref().unwrap());
            }
        }
        let mesh = TriMesh::new(vertices, faces)?;
        if keep_labels && !meshes.is_empty() {
            mesh.with_part_labels(labels)
        } else {
            Ok(mesh)
        }
    }

    /// Area-weighted surface samples, deterministic for a given rng state.
    pub fn sample_surface<R: rand::Rng>(&self, count: usize, rng: &mut R) -> Vec<Vec3> {
        let areas: Vec<f64> = (0..self.faces.len())
            .map(|i| {
                let [a, b, c] = self.triangle(i);
                (b - a).cross(&(c - a)).norm() * 0.5
            })
            .collect();
        let total: f64 = areas.iter().sum();
        if total <= 0.0 {
            return Vec::new();
        }
        let mut cumulative = Vec::with_capacity(areas.len());
        let mut acc = 0.0;
        for a in &areas {
            acc += a;
            cumulative.push(acc);
        }
        (0..count)
            .map(|_| {
                let r = rng.gen::<f64>() * total;
                let face = cumulative.partition_point(|&c| c < r).min(areas.len() - 1);
                let [a, b, c] = self.triangle(face);
                let (mut u, mut v) = (rng.gen::<f64>(), rng.gen::<f64>());
                if u + v > 1.0 {
                    u = 1.0 - u;
                    v = 1.0 - v;
                }
                a + (b - a) * u + (c - a) * v
            })
            .collect()
    }
}

pub fn to_point(v: &Vec3) -> Point3<f64> {
    Point3::from(*v)
}

/// Closest point on triangle `abc` to `p` (Ericson, Real-Time Collision Detection 5.1.5).
pub fn closest_point_on_triangle(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> Vec3 {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return a + ab * v;
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return a + ac * w;
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return b + (c - b) * w;
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    a + ab * v + ac * w
}
