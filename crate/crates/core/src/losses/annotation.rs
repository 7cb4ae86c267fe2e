//! Contact annotations: which body parts touch which object regions.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{BodyPart, TriMesh};

pub const CONTACT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum AnnotationError {
    #[error("contact annotation lists no contacts")]
    NoContacts,
    #[error("human mesh has no part labels")]
    MissingLabels,
    #[error("no human vertex is labeled {0}")]
    EmptyPart(BodyPart),
    #[error("object region {0:?} is not defined in the regions file")]
    UnknownRegion(String),
    #[error("a regions file is required for object region {0:?}")]
    MissingRegions(String),
    #[error("object region {region:?} references vertex {index} but the object has {count}")]
    RegionOutOfRange { region: String, index: usize, count: usize },
    #[error("object region {0:?} is empty")]
    EmptyRegion(String),
    #[error("{path}: {message}")]
    Format { path: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ObjectPointSource {
    #[serde(rename = "mesh-region file")]
    MeshRegionFile,
    #[serde(rename = "whole-mesh")]
    WholeMesh,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContactEntry {
    pub human_part: BodyPart,
    pub object_region: String,
    pub object_point_source: ObjectPointSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContactAnnotation {
    pub version: u32,
    pub contacts: Vec<ContactEntry>,
}

/// Named vertex-index lists on the object mesh.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ObjectRegions {
    pub regions: BTreeMap<String, Vec<usize>>,
}

/// Contact vertices on both meshes, sorted and deduplicated.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedContacts {
    pub human_vertices: Vec<usize>,
    pub object_vertices: Vec<usize>,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, AnnotationError> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| AnnotationError::Format {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

impl ContactAnnotation {
    pub fn load(path: &Path) -> Result<Self, AnnotationError> {
        read_json(path)
    }

    pub fn parts(&self) -> Vec<BodyPart> {
        self.contacts.iter().map(|c| c.human_part).collect::<BTreeSet<_>>().into_iter().collect()
    }

    pub fn resolve(&self, human: &TriMesh, object: &TriMesh, regions: Option<&ObjectRegions>) -> Result<ResolvedContacts, AnnotationError> {
        if self.contacts.is_empty() {
            return Err(AnnotationError::NoContacts);
        }
        if human.part_labels().is_none() {
            return Err(AnnotationError::MissingLabels);
        }
        let mut human_vertices = BTreeSet::new();
        let mut object_vertices = BTreeSet::new();
        for c in &self.contacts {
            let hv = human.vertices_with_parts(&[c.human_part]);
            if hv.is_empty() {
                return Err(AnnotationError::EmptyPart(c.human_part));
            }
            human_vertices.extend(hv);
            match c.object_point_source {
                ObjectPointSource::WholeMesh => object_vertices.extend(0..object.vertices().len()),
                ObjectPointSource::MeshRegionFile => {
                    let regions = regions.ok_or_else(|| AnnotationError::MissingRegions(c.object_region.clone()))?;
                    let list = regions
                        .regions
                        .get(&c.object_region)
                        .ok_or_else(|| AnnotationError::UnknownRegion(c.object_region.clone()))?;
                    if list.is_empty() {
                        return Err(AnnotationError::EmptyRegion(c.object_region.clone()));
                    }
                    if let Some(&bad) = list.iter().find(|&&i| i >= object.vertices().len()) {
                        return Err(AnnotationError::RegionOutOfRange {
                            region: c.object_region.clone(),
                            index: bad,
                            count: object.vertices().len(),
                        });
                    }
                    object_vertices.extend(list.iter().copied());
                }
            }
        }
        Ok(ResolvedContacts {
            human_vertices: human_vertices.into_iter().collect(),
            object_vertices: object_vertices.into_iter().collect(),
        })
    }
}

impl ObjectRegions {
    pub fn load(path: &Path) -> Result<Self, AnnotationError> {
        read_json(path)
    }
}
