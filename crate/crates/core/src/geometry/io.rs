//! OBJ / PLY mesh files and the part-label sidecar.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BodyPart, GeometryError, TriMesh, Vec3};

pub const PART_LABELS_VERSION: u32 = 1;

fn parse_err(path: &Path, message: impl Into<String>) -> GeometryError {
    GeometryError::Parse {
        path: path.display().to_string(),
        message: message.into(),
    }
}

/// Loads an `.obj` or `.ply` mesh, chosen by extension.
pub fn load_mesh(path: &Path) -> Result<TriMesh, GeometryError> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default();
    let bytes = fs::read(path)?;
    match ext.as_str() {
        "obj" => {
            let text = String::from_utf8(bytes).map_err(|_| parse_err(path, "not UTF-8"))?;
            parse_obj(&text).map_err(|m| parse_err(path, m))
        }
        "ply" => parse_ply(&bytes).map_err(|m| parse_err(path, m)),
        _ => Err(parse_err(path, "unsupported mesh extension (expected .obj or .ply)")),
    }
}

/// Polygons are fan-triangulated; texture and normal indices are ignored.
pub fn parse_obj(text: &str) -> Result<TriMesh, String> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        let mut it = line.split_whitespace();
        match it.next() {
            Some("v") => {
                let c: Vec<f64> = it
                    .take(3)
                    .map(|t| t.parse::<f64>())
                    .collect::<Result<_, _>>()
                    .map_err(|e| format!("line {}: {e}", n + 1))?;
                if c.len() != 3 {
                    return Err(format!("line {}: vertex needs 3 coordinates", n + 1));
                }
                vertices.push(Vec3::new(c[0], c[1], c[2]));
            }
            Some("f") => {
                let mut idx = Vec::new();
                for tok in it {
                    let first = tok.split('/').next().unwrap_or("");
                    let i: i64 = first.parse().map_err(|_| format!("line {}: bad index '{tok}'", n + 1))?;
                    let resolved = if i > 0 {
                        i - 1
                    } else if i < 0 {
                        vertices.len() as i64 + i
                    } else {
                        return Err(format!("line {}: index 0 is invalid", n + 1));
                    };
                    if resolved < 0 {
                        return Err(format!("line {}: index {i} out of range", n + 1));
                    }
                    idx.push(resolved as usize);
                }
                if idx.len() < 3 {
                    return Err(format!("line {}: face needs at least 3 vertices", n + 1));
                }
                for k in 1..idx.len() - 1 {
                    faces.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    TriMesh::new(vertices, faces).map_err(|e| e.to_string())
}

pub fn write_obj(mesh: &TriMesh, path: &Path) -> Result<(), GeometryError> {
    let mut out = String::new();
    for v in mesh.vertices() {
        out.push_str(&format!("v {} {} {}\n", v.x, v.y, v.z));
    }
    for f in mesh.faces() {
        out.push_str(&format!("f {} {} {}\n", f[0] + 1, f[1] + 1, f[2] + 1));
    }
    fs::write(path, out)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(name: &str) -> Option<Scalar> {
        Some(match name {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn read_le(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

#[derive(Debug, Clone)]
enum Property {
    Scalar { name: String, ty: Scalar },
    List { name: String, count: Scalar, item: Scalar },
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    properties: Vec<Property>,
}

/// Reads ASCII and binary little-endian PLY. Only `vertex` (x, y, z) and
/// `face` (vertex_indices / vertex_index) are used; other elements are skipped.
pub fn parse_ply(bytes: &[u8]) -> Result<TriMesh, String> {
    let header_end = find_header_end(bytes).ok_or("missing end_header")?;
    let header = std::str::from_utf8(&bytes[..header_end.0]).map_err(|_| "header is not UTF-8")?;
    let mut lines = header.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return Err("missing 'ply' magic".into());
    }
    let mut binary = None;
    let mut elements: Vec<Element> = Vec::new();
    for line in lines {
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["format", "ascii", _] => binary = Some(false),
            ["format", "binary_little_endian", _] => binary = Some(true),
            ["format", other, _] => return Err(format!("unsupported PLY format '{other}'")),
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count.parse().map_err(|_| format!("bad element count '{count}'"))?,
                properties: Vec::new(),
            }),
            ["property", "list", count, item, name] => {
                let el = elements.last_mut().ok_or("property before element")?;
                el.properties.push(Property::List {
                    name: name.to_string(),
                    count: Scalar::parse(count).ok_or(format!("unknown type '{count}'"))?,
                    item: Scalar::parse(item).ok_or(format!("unknown type '{item}'"))?,
                });
            }
            ["property", ty, name] => {
                let el = elements.last_mut().ok_or("property before element")?;
                el.properties.push(Property::Scalar {
                    name: name.to_string(),
                    ty: Scalar::parse(ty).ok_or(format!("unknown type '{ty}'"))?,
                });
            }
            ["comment", ..] | ["obj_info", ..] | ["end_header"] | [] => {}
            other => return Err(format!("unrecognized header line '{}'", other.join(" "))),
        }
    }
    let binary = binary.ok_or("missing format line")?;
    let body = &bytes[header_end.1..];

    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    let mut reader: Box<dyn FnMut(Scalar) -> Result<f64, String>> = if binary {
        let mut pos = 0usize;
        Box::new(move |ty: Scalar| {
            let n = ty.size();
            if pos + n > body.len() {
                return Err("unexpected end of binary data".into());
            }
            let v = ty.read_le(&body[pos..pos + n]);
            pos += n;
            Ok(v)
        })
    } else {
        let text = std::str::from_utf8(body).map_err(|_| "ASCII body is not UTF-8")?;
        let mut toks = text.split_whitespace();
        Box::new(move |_ty: Scalar| {
            toks.next()
                .ok_or_else(|| "unexpected end of ASCII data".to_string())?
                .parse::<f64>()
                .map_err(|e| e.to_string())
        })
    };

    for el in &elements {
        for _ in 0..el.count {
            let mut pos = [f64::NAN; 3];
            let mut face: Option<Vec<usize>> = None;
            for prop in &el.properties {
                match prop {
                    Property::Scalar { name, ty } => {
                        let v = reader(*ty)?;
                        match name.as_str() {
                            "x" => pos[0] = v,
                            "y" => pos[1] = v,
                            "z" => pos[2] = v,
                            _ => {}
                        }
                    }
                    Property::List { name, count, item } => {
                        let n = reader(*count)?;
                        if n < 0.0 {
                            return Err("negative list length".into());
                        }
                        let mut items = Vec::with_capacity(n as usize);
                        for _ in 0..n as usize {
                            let v = reader(*item)?;
                            if v < 0.0 {
                                return Err("negative vertex index".into());
                            }
                            items.push(v as usize);
                        }
                        if name == "vertex_indices" || name == "vertex_index" {
                            face = Some(items);
                        }
                    }
                }
            }
            match el.name.as_str() {
                "vertex" => {
                    if pos.iter().any(|c| c.is_nan()) {
                        return Err("vertex element lacks x/y/z".into());
                    }
                    vertices.push(Vec3::new(pos[0], pos[1], pos[2]));
                }
                "face" => {
                    let idx = face.ok_or("face element lacks vertex_indices")?;
                    if idx.len() < 3 {
                        return Err("face with fewer than 3 vertices".into());
                    }
                    for k in 1..idx.len() - 1 {
                        faces.push([idx[0], idx[k], idx[k + 1]]);
                    }
                }
                _ => {}
            }
        }
    }
    TriMesh::new(vertices, faces).map_err(|e| e.to_string())
}

fn find_header_end(bytes: &[u8]) -> Option<(usize, usize)> {
    let needle = b"end_header";
    let start = bytes.windows(needle.len()).position(|w| w == needle)?;
    let mut end = start + needle.len();
    if bytes.get(end) == Some(&b'\r') {
        end += 1;
    }
    if bytes.get(end) == Some(&b'\n') {
        end += 1;
    }
    Some((start + needle.len(), end))
}

pub fn write_ply(mesh: &TriMesh, path: &Path, binary: bool) -> Result<(), GeometryError> {
    let mut out: Vec<u8> = Vec::new();
    let format = if binary { "binary_little_endian" } else { "ascii" };
    write!(
        out,
        "ply\nformat {format} 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\nelement face {}\nproperty list uchar int vertex_indices\nend_header\n",
        mesh.vertices().len(),
        mesh.faces().len()
    )?;
    if binary {
        for v in mesh.vertices() {
            for c in v.iter() {
                out.extend_from_slice(&c.to_le_bytes());
            }
        }
        for f in mesh.faces() {
            out.push(3);
            for &i in f {
                out.extend_from_slice(&(i as i32).to_le_bytes());
            }
        }
    } else {
        for v in mesh.vertices() {
            writeln!(out, "{} {} {}", v.x, v.y, v.z)?;
        }
        for f in mesh.faces() {
            writeln!(out, "3 {} {} {}", f[0], f[1], f[2])?;
        }
    }
    fs::write(path, out)?;
    Ok(())
}

/// One half-open vertex range `[start, end)` carrying a part label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartRange {
    pub part: BodyPart,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartLabelFile {
    pub version: u32,
    pub ranges: Vec<PartRange>,
}

impl PartLabelFile {
    /// Expands the ranges to one label per vertex; ranges must tile `0..vertex_count`.
    pub fn to_labels(&self, vertex_count: usize) -> Result<Vec<BodyPart>, GeometryError> {
        let mut labels: Vec<Option<BodyPart>> = vec![None; vertex_count];
        for r in &self.ranges {
            if r.start > r.end || r.end > vertex_count {
                return Err(GeometryError::InvalidGrid(format!(
                    "part range {}..{} outside 0..{vertex_count}",
                    r.start, r.end
                )));
            }
            for l in &mut labels[r.start..r.end] {
                if l.is_some() {
                    return Err(GeometryError::InvalidGrid(format!(
                        "part ranges overlap inside {}..{}",
                        r.start, r.end
                    )));
                }
                *l = Some(r.part);
            }
        }
        labels
            .into_iter()
            .enumerate()
            .map(|(i, l)| l.ok_or(GeometryError::LabelCountMismatch { labels: i, vertices: vertex_count }))
            .collect()
    }

    /// Compresses per-vertex labels into maximal runs.
    pub fn from_labels(labels: &[BodyPart]) -> Self {
        let mut ranges: Vec<PartRange> = Vec::new();
        for (i, &p) in labels.iter().enumerate() {
            match ranges.last_mut() {
                Some(r) if r.part == p && r.end == i => r.end = i + 1,
                _ => ranges.push(PartRange {
                    part: p,
                    start: i,
                    end: i + 1,
                }),
            }
        }
        PartLabelFile {
            version: PART_LABELS_VERSION,
            ranges,
        }
    }
}

pub fn load_part_labels(path: &Path, vertex_count: usize) -> Result<Vec<BodyPart>, GeometryError> {
    let text = fs::read_to_string(path)?;
    let file: PartLabelFile = serde_json::from_str(&text).map_err(|e| parse_err(path, e.to_string()))?;
    file.to_labels(vertex_count)
}

/// Mesh plus optional sidecar labels.
pub fn load_labeled_mesh(path: &Path, labels: Option<&Path>) -> Result<TriMesh, GeometryError> {
    let mesh = load_mesh(path)?;
    match labels {
        Some(l) => {
            let labels = load_part_labels(l, mesh.vertices().len())?;
            mesh.with_part_labels(labels)
        }
        None => Ok(mesh),
    }
}
